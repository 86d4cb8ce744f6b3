"""
Run configuration: one YAML document with the sections system, sampling, model, training and io
"""
import yaml

from .fields import Field, FloatField, IntegerField, RangeField, SectionField, StringField
from .rom import TrainConfig, variants
from .systems import SamplingSpec, SystemSpec, kinds, parameter_names
from .util import ConfigError

__all__ = ('RunConfig', 'SystemSection', 'SamplingSection', 'ModelSection', 'TrainingSection', 'IoSection')


class Section(dict):
    name = None

    def __repr__(self):
        return '<%s %s>' % (self.__class__.__name__, dict.__repr__(self))

    @classmethod
    def fields(cls):
        found = {}
        for klass in reversed(cls.__mro__):
            for attr_name, attr in vars(klass).items():
                if isinstance(attr, Field):
                    found[attr_name] = attr
        return found

    def validate(self):
        known = {field.data_path for field in self.fields().values()}
        unknown = sorted(set(self) - known)
        if unknown:
            raise ConfigError('Unknown keys in section %s: %s' % (self.name, ', '.join(map(str, unknown))))
        for attr_name in self.fields():
            getattr(self, attr_name)
        return self

    def defaulted(self):
        """
        All fields with defaults filled in, as plain YAML-serializable values
        """
        values = {}
        for attr_name, field in self.fields().items():
            value = getattr(self, attr_name)
            if isinstance(value, Section):
                value = value.defaulted()
            values[field.data_path] = value
        return values


class SystemSection(Section):
    name = 'system'
    kind = StringField('kind', required=True, choices=kinds)  # type: str
    n = IntegerField('N', required=True, minimum=3)  # type: int
    dt = FloatField('dt', required=True, minimum=0, exclusive_minimum=True)  # type: float
    horizon = FloatField('horizon', required=True, minimum=0, exclusive_minimum=True)  # type: float
    omega2 = FloatField('omega2', default=0.01, minimum=0)  # type: float
    c2 = FloatField('c2', default=0.1, minimum=0)  # type: float
    speed = FloatField('c', default=1.0)  # type: float
    scale = FloatField('l', default=0.11, minimum=0, exclusive_minimum=True)  # type: float

    @property
    def steps(self):
        return int(round(self.horizon / self.dt))

    def to_spec(self):
        return SystemSpec(kind=self.kind, n=self.n, dt=self.dt, omega2=self.omega2, c2=self.c2,
                          speed=self.speed, scale=self.scale)


class SamplingSection(Section):
    name = 'sampling'
    method = StringField('method', default='uniform', choices=('uniform', 'grid'))  # type: str
    count = IntegerField('count', default=10, minimum=1)  # type: int
    points_per_axis = IntegerField('points_per_axis', default=2, minimum=1)  # type: int
    ranges = RangeField('ranges', required=True)  # type: list
    seed = IntegerField('seed', default=0, minimum=0)  # type: int

    def to_spec(self):
        return SamplingSpec(method=self.method, count=self.count, points_per_axis=self.points_per_axis,
                            ranges=tuple(tuple(bounds) for bounds in self.ranges))


class ModelSection(Section):
    name = 'model'
    n = IntegerField('n', minimum=1)  # type: int
    k = IntegerField('k', required=True, minimum=1)  # type: int
    variant = StringField('variant', default='henon+greflector', choices=variants)  # type: str
    henon_widths = IntegerField('henon_widths', default=[64], cardinality='n', minimum=1)  # type: list
    henon_layers = IntegerField('henon_layers', default=2, minimum=1)  # type: int
    reflectors = IntegerField('reflectors', default=10, minimum=1)  # type: int
    flow_widths = IntegerField('flow_widths', default=[16], cardinality='n', minimum=1)  # type: list
    flow_layers = IntegerField('flow_layers', default=2, minimum=1)  # type: int
    init = StringField('init', default='identity', choices=('identity', 'random'))  # type: str

    def build_kwargs(self):
        return dict(
            variant=self.variant, henon_widths=self.henon_widths, henon_layers=self.henon_layers,
            reflectors=self.reflectors, flow_widths=self.flow_widths, flow_layers=self.flow_layers,
            identity=self.init == 'identity',
        )


class TrainingSection(Section):
    name = 'training'
    lambda1 = FloatField('lambda1', default=1.0, minimum=0)  # type: float
    lambda2 = FloatField('lambda2', default=0.01, minimum=0)  # type: float
    unroll = IntegerField('unroll', default=3, minimum=1)  # type: int
    noise_sigma = FloatField('noise_sigma', default=1e-3, minimum=0)  # type: float
    epochs = IntegerField('epochs', default=100, minimum=0)  # type: int
    batch_size = IntegerField('batch_size', default=64, minimum=1)  # type: int
    lr = FloatField('lr', default=1e-3, minimum=0, exclusive_minimum=True)  # type: float
    decay = FloatField('decay', default=0.99, minimum=0, exclusive_minimum=True, maximum=1)  # type: float
    seed = IntegerField('seed', default=0, minimum=0)  # type: int
    threads = IntegerField('threads', default=1, minimum=1)  # type: int

    def to_config(self):
        return TrainConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, unroll=self.unroll, noise_sigma=self.noise_sigma,
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, decay=self.decay,
            seed=self.seed, threads=self.threads,
        )


class IoSection(Section):
    name = 'io'
    dataset = StringField('dataset', default='dataset.bin')  # type: str
    checkpoint = StringField('checkpoint', default='model.bin')  # type: str
    losses = StringField('losses', default='losses.csv')  # type: str
    out = StringField('out', default='out')  # type: str


class RunConfig(Section):
    """
    A validated run configuration; sections are parsed on first access and cached
    """
    name = None
    system = SectionField('system', SystemSection, required=True)  # type: SystemSection
    sampling = SectionField('sampling', SamplingSection, required=True)  # type: SamplingSection
    model = SectionField('model', ModelSection, required=True)  # type: ModelSection
    training = SectionField('training', TrainingSection)  # type: TrainingSection
    io = SectionField('io', IoSection)  # type: IoSection

    def __init__(self, data=None):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError('A run configuration must be a mapping of sections')
        super().__init__(data)

    def validate(self):
        unknown = sorted(set(self) - set(self.fields()))
        if unknown:
            raise ConfigError('Unknown sections: %s' % ', '.join(map(str, unknown)))
        for attr_name in self.fields():
            getattr(self, attr_name).validate()
        self.check_consistency()
        return self

    def check_consistency(self):
        system, model = self.system, self.model
        if model.n is not None and model.n != system.n:
            raise ConfigError('model.n=%d does not match system.N=%d' % (model.n, system.n))
        if model.k > system.n:
            raise ConfigError('model.k=%d exceeds system.N=%d' % (model.k, system.n))
        expected = parameter_names[system.kind]
        if len(self.sampling.ranges) != len(expected):
            raise ConfigError('sampling.ranges needs %d ranges (%s) for %s' % (
                len(expected), ', '.join(expected), system.kind))
        if system.steps < 1:
            raise ConfigError('system.horizon is shorter than one time step')
        if self.training.unroll > system.steps:
            raise ConfigError('training.unroll=%d exceeds the %d stored steps' % (self.training.unroll, system.steps))

    def override(self, seed=None, threads=None):
        if seed is not None:
            self.sampling['seed'] = seed
            self.training['seed'] = seed
        if threads is not None:
            self.training['threads'] = threads
        return self.validate()

    def dump(self):
        return yaml.safe_dump(self.defaulted(), default_flow_style=False, sort_keys=False)

    @classmethod
    def loads(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError('Cannot parse configuration: %s' % e)
        return cls(data).validate()

    @classmethod
    def load(cls, path):
        try:
            with open(path) as config_file:
                text = config_file.read()
        except OSError as e:
            raise ConfigError('Cannot read configuration %s: %s' % (path, e))
        return cls.loads(text)
