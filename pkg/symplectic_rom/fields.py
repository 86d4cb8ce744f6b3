from .util import ConfigError, Descriptor


class Field(Descriptor):
    datatype = 'value'

    @classmethod
    def __init_subclass__(cls, **kwargs):
        datatype = kwargs.get('datatype')
        if datatype:
            cls.datatype = datatype

    def __init__(self, data_path, required=False, default=None, cardinality='1', length=None, cached=False,
                 **kwargs):
        """
        Looks up, coerces and validates a value from the parent mapping by following a key path
        :param data_path: .-separated key path through mapping-type objects
        :param required: whether a missing or null value is a ConfigError rather than falling back to the default
        :param default: value used when the path is missing or null
        :param cardinality: 1 if a single value, n if a list of values
        :param length: exact list length for cardinality n
        :param cached: replaces this attribute with the returned value
        """
        assert cardinality in ('1', 'n'), 'Invalid cardinality'
        super().__init__(cached=cached, **kwargs)
        self.data_path = data_path
        self.required = required
        self.default = default
        self.cardinality = cardinality
        self.length = length

    def get_value(self, instance):
        value = instance
        try:
            for path_component in self.data_path.split('.'):
                value = value[path_component]
        except (KeyError, IndexError, TypeError):
            if self.required:
                raise ConfigError('%s is required' % self.qualified_name(instance))
            value = self.default
        if value is None:
            if self.required:
                raise ConfigError('%s is required' % self.qualified_name(instance))
            if self.default is None:
                return None
            value = self.default
        try:
            return self.parse(value)
        except (TypeError, ValueError) as e:
            raise ConfigError('%s: %s' % (self.qualified_name(instance), e))

    def qualified_name(self, instance):
        section = getattr(instance, 'name', None)
        return '%s.%s' % (section, self.data_path) if section else self.data_path

    def parse(self, value):
        if self.cardinality == 'n':
            if isinstance(value, (str, bytes)) or not hasattr(value, '__iter__'):
                raise ValueError('expected a list of %s' % self.datatype)
            values = [self.validate(self.coerce(item)) for item in value]
            if self.length is not None and len(values) != self.length:
                raise ValueError('expected %d entries, got %d' % (self.length, len(values)))
            return values
        return self.validate(self.coerce(value))

    def coerce(self, value):
        return value

    def validate(self, value):
        return value


class StringField(Field, datatype='string'):
    def __init__(self, data_path, choices=None, **kwargs):
        super().__init__(data_path, **kwargs)
        self.choices = tuple(choices) if choices else None

    def coerce(self, value):
        if not isinstance(value, str):
            raise ValueError('expected a string, got %r' % (value,))
        return value

    def validate(self, value):
        if self.choices and value not in self.choices:
            raise ValueError('%r is not one of %s' % (value, ', '.join(self.choices)))
        return value


class NumberField(Field):
    number_type = float

    def __init__(self, data_path, minimum=None, maximum=None, exclusive_minimum=False, **kwargs):
        super().__init__(data_path, **kwargs)
        self.minimum = minimum
        self.maximum = maximum
        self.exclusive_minimum = exclusive_minimum

    def validate(self, value):
        if self.minimum is not None:
            if value < self.minimum or (self.exclusive_minimum and value == self.minimum):
                raise ValueError('%s must be %s %s' % (value, '>' if self.exclusive_minimum else '>=', self.minimum))
        if self.maximum is not None and value > self.maximum:
            raise ValueError('%s must be <= %s' % (value, self.maximum))
        return value


class FloatField(NumberField, datatype='float'):
    def coerce(self, value):
        if isinstance(value, bool):
            raise ValueError('expected a number, got %r' % value)
        value = float(value)
        if value != value or value in (float('inf'), float('-inf')):
            raise ValueError('expected a finite number')
        return value


class IntegerField(NumberField, datatype='integer'):
    def coerce(self, value):
        if isinstance(value, bool):
            raise ValueError('expected an integer, got %r' % value)
        if isinstance(value, float) and not value.is_integer():
            raise ValueError('expected an integer, got %r' % value)
        return int(value)


class RangeField(FloatField, datatype='range'):
    """
    A list of [low, high] pairs
    """

    def __init__(self, data_path, **kwargs):
        super().__init__(data_path, cardinality='n', **kwargs)

    def coerce(self, value):
        if isinstance(value, (str, bytes)) or len(value) != 2:
            raise ValueError('expected a [low, high] pair, got %r' % (value,))
        low, high = (super(RangeField, self).coerce(bound) for bound in value)
        return [low, high]

    def validate(self, value):
        low, high = value
        if low > high:
            raise ValueError('empty range [%g, %g]' % (low, high))
        return value


class SectionField(Field, datatype='section'):
    """
    A nested mapping parsed into a Section subclass
    """

    def __init__(self, data_path, section_class, **kwargs):
        kwargs.setdefault('default', {})
        kwargs.setdefault('cached', True)
        super().__init__(data_path, **kwargs)
        self.section_class = section_class

    def coerce(self, value):
        if not isinstance(value, dict):
            raise ValueError('expected a mapping, got %r' % (value,))
        return self.section_class(value)
