import os
import tempfile
import unittest

import numpy as np

from symplectic_rom.numcore import RngStream, pack, poisson_matrix, relative_error
from symplectic_rom.rom import (
    LossReport, RomModel, TrainConfig, decode, encode, evaluate_mse, fit_cotangent_lift, flow_step,
    hamiltonian_trace, latent_rollout, loss_components, loss_gradient, loss_ham_multistep, loss_recon,
    loss_rom_multistep, loss_total, rollout, symplecticity_audit, train,
)
from symplectic_rom.symplectic import symplecticity_defect
from symplectic_rom.systems import HarmonicOscillator, SnapshotDataset, SystemSpec, integrate
from symplectic_rom.util import ConfigError, DivergenceError, NonFiniteStateError
from tests.test_numcore import numeric_parameter_gradient


def tiny_model(n=2, k=1, seed=0, identity=False, **kwargs):
    options = dict(henon_widths=(4,), henon_layers=1, reflectors=2, flow_widths=(4,), flow_layers=1)
    options.update(kwargs)
    return RomModel.initialize(n, k, RngStream(seed), identity=identity, **options)


def perturbed_model(n=3, k=2, seed=0, scale=0.01, flow_only=False):
    model = tiny_model(n, k, seed, identity=True)
    params = model.flow.parameters() if flow_only else model.parameters()
    rng = RngStream(seed, (9,))
    for param in params:
        param += scale * rng.uniform(-1, 1, param.shape)
    return model


def one_step(model, x):
    return model.decode(model.flow_step(model.encode(x)))


class OffsetModel:
    def __init__(self, offsets):
        self.offsets = np.asarray(offsets, dtype=np.float64)

    def encode(self, x):
        return x

    def decode(self, y):
        return y + self.offsets


class AutoencoderTestCase(unittest.TestCase):
    def test_identity_model(self):
        square = tiny_model(2, 2, identity=True)
        x = np.array([0.1, -0.4, 2.0, 3.5])
        np.testing.assert_array_equal(encode(square, x), x)
        np.testing.assert_array_equal(decode(square, x), x)

        reduced = tiny_model(2, 1, identity=True)
        np.testing.assert_array_equal(encode(reduced, np.array([1.0, 2.0, 3.0, 4.0])), [1.0, 3.0])
        np.testing.assert_array_equal(decode(reduced, np.array([5.0, 6.0])), [5.0, 0.0, 6.0, 0.0])

    def test_latent_round_trip(self):
        rng = RngStream(1)
        for variant in ('henon+greflector', 'henon', 'greflector'):
            model = tiny_model(3, 2, seed=2, variant=variant)
            self.assertEqual(model.variant, variant)
            y = rng.uniform(-1, 1, (10, 4))
            self.assertLess(np.max(np.abs(encode(model, decode(model, y)) - y)), 1e-10)
        with self.assertRaises(ValueError):
            tiny_model(variant='linear')

    def test_flow(self):
        identity = tiny_model(2, 1, identity=True)
        y = np.array([0.3, -0.7])
        np.testing.assert_array_equal(flow_step(identity, y), y)

        model = tiny_model(3, 2, seed=3)
        y = RngStream(4).uniform(-1, 1, (10, 4))
        self.assertLess(np.max(np.abs(model.flow_inverse(flow_step(model, y)) - y)), 1e-10)

    def test_symplecticity(self):
        audit = symplecticity_audit(tiny_model(3, 2, seed=5), RngStream(6), points=100, powers=())
        self.assertLess(audit['flow'], 1e-10)

        model = perturbed_model(3, 2, seed=7, scale=0.1)
        audit = symplecticity_audit(model, RngStream(8), points=100)
        self.assertEqual(sorted(audit), ['decoder_flow1', 'decoder_flow5', 'flow'])
        for defect in audit.values():
            self.assertLess(defect, 1e-10)

        y = RngStream(9).uniform(-1, 1, 4)
        self.assertLess(symplecticity_defect(lambda point: model.decode(model.flow_step(point)), y,
                                             mode='finite-diff'), 1e-6)

    def test_save_and_load(self):
        model = tiny_model(3, 2, seed=10, variant='henon')
        with tempfile.TemporaryDirectory() as path:
            checkpoint = os.path.join(path, 'model.bin')
            model.save(checkpoint)
            loaded = RomModel.load(checkpoint)
            np.testing.assert_array_equal(loaded.get_vector(), model.get_vector())
            self.assertEqual(loaded.describe(), model.describe())
            self.assertIsNone(loaded.embedding.reflectors)

            dataset = SnapshotDataset(np.zeros((1, 2, 6)), [[8.0, 0.0]], SystemSpec('wave', 3, 0.24))
            dataset.save(os.path.join(path, 'dataset.bin'))
            with self.assertRaises(ConfigError):
                RomModel.load(os.path.join(path, 'dataset.bin'))


class RolloutTestCase(unittest.TestCase):
    def test_identity_model(self):
        model = tiny_model(2, 2, identity=True)
        x0 = np.array([1.0, 2.0, 3.0, 4.0])
        states = rollout(model, x0, 5)
        self.assertEqual(states.shape, (6, 4))
        for state in states:
            np.testing.assert_array_equal(state, x0)

    def test_single_step(self):
        model = tiny_model(3, 2, seed=1)
        x0 = RngStream(2).uniform(-1, 1, 6)
        states = rollout(model, x0, 1)
        np.testing.assert_array_equal(states[0], x0)
        np.testing.assert_allclose(states[1], one_step(model, x0), atol=1e-14)
        self.assertEqual(latent_rollout(model, x0, 1).shape, (2, 4))

    def test_latent_and_full_agree(self):
        model = perturbed_model(3, 2, seed=3)
        x0 = RngStream(4).uniform(-1, 1, 6)
        latent = rollout(model, x0, 100, space='latent')
        full = rollout(model, x0, 100, space='full')
        self.assertLess(np.max(np.abs(latent - full)), 1e-9)

    def test_errors(self):
        model = tiny_model(2, 1)
        with self.assertRaises(ValueError):
            rollout(model, np.zeros(4), 0)
        with self.assertRaises(ValueError):
            rollout(model, np.zeros(4), 1, space='both')
        with self.assertRaises(ValueError):
            rollout(model, np.zeros(6), 1)

    def test_non_finite_state(self):
        model = tiny_model(2, 1, seed=5)
        model.flow.layers[0].map.eta[...] = np.inf
        with np.errstate(all='ignore'), self.assertRaises(NonFiniteStateError) as context:
            rollout(model, np.zeros(4), 3)
        self.assertEqual(context.exception.step, 1)


class LossTestCase(unittest.TestCase):
    def setUp(self):
        self.model = tiny_model(2, 1, seed=11)
        self.trajectory = RngStream(12).uniform(-0.5, 0.5, (4, 4))

    def test_reconstruction(self):
        self.assertEqual(loss_recon(tiny_model(2, 2, identity=True), self.trajectory), 0.0)

        shift = np.array([0.5, -1.0, 2.0, 0.0])
        self.assertAlmostEqual(loss_recon(OffsetModel(shift), self.trajectory), 5.25, places=12)

        snapshots = self.trajectory[:3]
        expected = np.mean([np.sum((decode(self.model, encode(self.model, x)) - x) ** 2) for x in snapshots])
        self.assertAlmostEqual(loss_recon(self.model, snapshots), expected, places=12)

    def test_evaluate_mse(self):
        snapshots = np.zeros((3, 2))
        self.assertEqual(evaluate_mse(OffsetModel(np.zeros(2)), snapshots), 0.0)
        self.assertEqual(evaluate_mse(OffsetModel([1.0, 0.0]), np.zeros((1, 2))), 1.0)
        offsets = [[1.0, 0.0], [1.0, 1.0], [1.0, np.sqrt(2)]]
        self.assertAlmostEqual(evaluate_mse(OffsetModel(offsets), snapshots), 2.0, places=12)
        with self.assertRaises(ValueError):
            evaluate_mse(OffsetModel([0.0]), np.zeros((0, 2)))

    def test_perfect_model_on_own_rollout(self):
        model = perturbed_model(2, 2, seed=13, scale=0.1, flow_only=True)
        trajectory = rollout(model, np.array([0.3, -0.2, 0.5, 0.1]), 5, space='full')
        self.assertLess(loss_rom_multistep(model, trajectory, 2), 1e-24)

    def test_one_step_unroll(self):
        model, trajectory = self.model, self.trajectory
        recon = np.mean([np.sum((decode(model, encode(model, x)) - x) ** 2) for x in trajectory])
        forecast = np.mean([np.sum((one_step(model, trajectory[i]) - trajectory[i + 1]) ** 2) for i in range(3)])
        components = loss_components(model, trajectory, 1)
        self.assertAlmostEqual(components['L_r'], recon, places=12)
        self.assertAlmostEqual(components['L_f'], forecast, places=12)
        self.assertAlmostEqual(loss_rom_multistep(model, trajectory, 1), recon + forecast, places=12)

    def test_two_step_unroll(self):
        model, trajectory = self.model, self.trajectory
        recon = np.mean([np.sum((decode(model, encode(model, x)) - x) ** 2) for x in trajectory])
        terms = []
        for i in range(2):
            first = one_step(model, trajectory[i])
            second = one_step(model, first)
            terms.append(np.sum((first - trajectory[i + 1]) ** 2))
            terms.append(np.sum((second - trajectory[i + 2]) ** 2))
        expected = recon + np.mean(terms)
        self.assertAlmostEqual(loss_rom_multistep(model, trajectory, 2), expected, places=12)

    def test_input_validation(self):
        with self.assertRaises(ValueError):
            loss_rom_multistep(self.model, self.trajectory, 4)
        with self.assertRaises(ValueError):
            loss_rom_multistep(self.model, np.zeros((0, 4, 4)), 1)
        with self.assertRaises(ValueError):
            loss_rom_multistep(self.model, self.trajectory, 1, noise_sigma=0.1)
        with self.assertRaises(ValueError):
            loss_ham_multistep(self.model, self.trajectory, 1, None)

    def test_hamiltonian_penalty(self):
        identity = tiny_model(2, 2, identity=True)
        constant = np.tile([0.4, -0.3, 0.2, 0.9], (3, 1))
        self.assertEqual(loss_ham_multistep(identity, constant, 1, HarmonicOscillator(2)), 0.0)

        delta = 0.1
        identity = tiny_model(1, 1, identity=True)
        trajectory = np.array([[1.0, 0.0], [np.sqrt(1 + 2 * delta), 0.0]])
        components = loss_components(identity, trajectory, 1, HarmonicOscillator(1))
        self.assertAlmostEqual(components['L_ham_r'], delta ** 2 / 2, places=12)
        self.assertAlmostEqual(components['L_ham_f'], 0.0, places=12)
        self.assertAlmostEqual(loss_ham_multistep(identity, trajectory, 1, HarmonicOscillator(1)), delta ** 2 / 2,
                               places=12)

    def test_hamiltonian_penalty_expansion(self):
        model, trajectory = self.model, self.trajectory[:3]
        system = HarmonicOscillator(2)
        anchor = system.hamiltonian(trajectory[0])
        recon = np.mean([(system.hamiltonian(decode(model, encode(model, x))) - anchor) ** 2 for x in trajectory])
        forecast = np.mean([(system.hamiltonian(one_step(model, trajectory[i])) - anchor) ** 2 for i in range(2)])
        self.assertAlmostEqual(loss_ham_multistep(model, trajectory, 1, system), recon + forecast, places=12)

    def test_total(self):
        self.assertEqual(loss_total(2.0, 3.0, 1.5, 0.0), 3.0)
        self.assertEqual(loss_total(2.0, 3.0, 0.0, 0.0), 0.0)
        self.assertAlmostEqual(loss_total(2.0, 3.0, 1.0, 0.01), 2.03, places=14)
        with self.assertRaises(ValueError):
            loss_total(2.0, 3.0, -1.0, 0.01)

    def test_gradient_matches_finite_differences(self):
        model = self.model
        trajectory = self.trajectory[:3]
        system = HarmonicOscillator(2)
        weights = (1.0, 0.5)
        components, grads = loss_gradient(model, trajectory, 2, system, weights=weights)
        self.assertAlmostEqual(components['L_total'], loss_components(model, trajectory, 2, system,
                                                                      weights=weights)['L_total'], places=12)
        expected = numeric_parameter_gradient(
            model.parameters(), lambda: loss_components(model, trajectory, 2, system, weights=weights)['L_total'])
        self.assertLess(relative_error(pack(grads), pack(expected)), 1e-4)

    def test_threads_reduce_in_order(self):
        trajectories = RngStream(14).uniform(-0.5, 0.5, (3, 6, 4))
        single, single_grads = loss_gradient(self.model, trajectories, 2, HarmonicOscillator(2))
        threaded, threaded_grads = loss_gradient(self.model, trajectories, 2, HarmonicOscillator(2), threads=3)
        for name, value in single.items():
            self.assertAlmostEqual(threaded[name], value, places=13)
        np.testing.assert_allclose(pack(threaded_grads), pack(single_grads), atol=1e-13)


class TrainingTestCase(unittest.TestCase):
    def setUp(self):
        spec = SystemSpec('wave', 3, 0.24)
        state = np.array([0.5, -0.3, 0.8, 0.1, 0.4, -0.6])
        self.dataset = SnapshotDataset(np.tile(state, (1, 6, 1)), [[8.0, 0.0]], spec)
        self.config = TrainConfig(epochs=50, batch_size=8, lr=1e-2, unroll=2, noise_sigma=0.0, lambda2=0.01, seed=0)

    def fresh_model(self):
        return RomModel.initialize(3, 1, RngStream(0), henon_widths=(8,), henon_layers=1, reflectors=4,
                                   flow_widths=(4,), flow_layers=1)

    def test_zero_epochs(self):
        model = self.fresh_model()
        initial = model.get_vector()
        config = TrainConfig(epochs=0)
        trained, report = train(model, self.dataset, config)
        np.testing.assert_array_equal(trained.get_vector(), initial)
        self.assertEqual(len(report), 0)
        self.assertIsNone(report.last)

    def test_training_reduces_loss(self):
        model = self.fresh_model()
        initial = loss_components(model, self.dataset.states, 2)['L_rom']
        trained, report = train(model, self.dataset, self.config)
        self.assertEqual(len(report), 50)
        self.assertLess(loss_components(trained, self.dataset.states, 2)['L_rom'], initial)
        for record in report:
            self.assertAlmostEqual(record['L_total'], record['L_rom'] + 0.01 * record['L_ham'], delta=1e-12)
            self.assertAlmostEqual(record['L_rom'], record['L_r'] + record['L_f'], delta=1e-12)

        audit = symplecticity_audit(trained, RngStream(3), points=100)
        for defect in audit.values():
            self.assertLess(defect, 1e-6)
        y = RngStream(4).uniform(-1, 1, (10, 2))
        self.assertLess(np.max(np.abs(encode(trained, decode(trained, y)) - y)), 1e-10)

    def test_determinism(self):
        first, first_report = train(self.fresh_model(), self.dataset, TrainConfig(epochs=5, noise_sigma=1e-3, unroll=2))
        second, second_report = train(self.fresh_model(), self.dataset, TrainConfig(epochs=5, noise_sigma=1e-3,
                                                                                    unroll=2))
        np.testing.assert_array_equal(first.get_vector(), second.get_vector())
        for left, right in zip(first_report, second_report):
            self.assertEqual(left['L_total'], right['L_total'])

    def test_divergence_restores_parameters(self):
        states = self.dataset.states.copy()
        states[0, 3, 0] = np.nan
        dataset = SnapshotDataset(states, self.dataset.params, self.dataset.spec)
        model = self.fresh_model()
        initial = model.get_vector()
        with np.errstate(all='ignore'), self.assertRaises(DivergenceError) as context:
            train(model, dataset, self.config)
        self.assertEqual(context.exception.epoch, 0)
        np.testing.assert_array_equal(context.exception.model.get_vector(), initial)

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigError):
            train(tiny_model(2, 1), self.dataset, self.config)
        with self.assertRaises(ConfigError):
            train(self.fresh_model(), self.dataset, TrainConfig(unroll=6))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            TrainConfig(lambda1=-1.0)
        with self.assertRaises(ValueError):
            TrainConfig(unroll=0)
        with self.assertRaises(ValueError):
            TrainConfig(decay=1.5)

    def test_report_csv(self):
        report = LossReport(1.0, 0.01)
        report.append(0, 2.0, 1.0, 4.0, seconds=0.5)
        self.assertAlmostEqual(report.last['L_total'], 3.04, places=14)
        with tempfile.TemporaryDirectory() as path:
            losses = os.path.join(path, 'losses.csv')
            report.write_csv(losses)
            with open(losses) as csv_file:
                lines = csv_file.read().splitlines()
        self.assertEqual(lines[0], 'epoch,L_r,L_f,L_rom,L_ham,L_total,seconds')
        row = lines[1].split(',')
        self.assertEqual(row[:5], ['0', '2', '1', '3', '4'])
        self.assertAlmostEqual(float(row[5]), 3.04, places=14)
        self.assertEqual(len(lines), 2)


class CotangentLiftTestCase(unittest.TestCase):
    def setUp(self):
        rng = RngStream(20)
        self.phi, _ = np.linalg.qr(rng.uniform(-1, 1, (6, 2)))
        q = rng.uniform(-1, 1, (10, 2)) @ self.phi.T
        p = rng.uniform(-1, 1, (10, 2)) @ self.phi.T
        self.snapshots = np.concatenate([q, p], axis=1)

    def test_exact_subspace(self):
        baseline = fit_cotangent_lift(self.snapshots, 2)
        self.assertLess(evaluate_mse(baseline, self.snapshots), 1e-20)
        self.assertEqual(baseline.encode(self.snapshots[0]).shape, (4,))
        self.assertEqual(baseline.decode(np.zeros(4)).shape, (12,))

    def test_symplectic_matrix(self):
        a = fit_cotangent_lift(self.snapshots, 2).matrix()
        np.testing.assert_allclose(a.T @ poisson_matrix(6) @ a, poisson_matrix(2), atol=1e-12)
        pseudo_inverse = poisson_matrix(2).T @ a.T @ poisson_matrix(6)
        np.testing.assert_allclose(pseudo_inverse @ a, np.eye(4), atol=1e-12)

    def test_rank_and_bounds(self):
        line = np.outer(np.linspace(1, 2, 5), np.concatenate([self.phi[:, 0], self.phi[:, 0]]))
        with self.assertRaises(ValueError):
            fit_cotangent_lift(line, 2)
        with self.assertRaises(ValueError):
            fit_cotangent_lift(self.snapshots, 7)


class HamiltonianTraceTestCase(unittest.TestCase):
    def test_zero_steps(self):
        model = tiny_model(2, 1, seed=1)
        trace = hamiltonian_trace(model, np.array([1.0, 0.0, 0.0, 1.0]), 0, HarmonicOscillator(2))
        self.assertEqual(trace.shape, (1, 6))
        self.assertEqual(trace[0, 1], 1.0)
        self.assertEqual(trace[0, 2], 0.0)
        self.assertTrue(np.isnan(trace[0, 4]))

    def test_reference_pass_through(self):
        model = tiny_model(2, 2, identity=True)
        system = HarmonicOscillator(2)
        x0 = np.array([1.0, 0.5, 0.0, -0.5])
        reference = integrate(system, x0, 0.1, 20)
        trace = hamiltonian_trace(model, x0, 10, system, dt=0.1, reference=reference)
        self.assertEqual(trace.shape, (11, 6))
        np.testing.assert_allclose(trace[:, 0], 0.1 * np.arange(11))
        np.testing.assert_array_equal(trace[:, 2], np.zeros(11))
        np.testing.assert_array_equal(trace[:, 4], system.hamiltonian(reference[:11]))
        np.testing.assert_allclose(trace[:, 5], np.linalg.norm(reference[:11] - x0, axis=1))
        with self.assertRaises(ValueError):
            hamiltonian_trace(model, x0, 30, system, reference=reference)

    def test_zero_energy(self):
        model = tiny_model(2, 2, identity=True)
        trace = hamiltonian_trace(model, np.zeros(4), 3, HarmonicOscillator(2))
        np.testing.assert_array_equal(trace[:, 3], np.zeros(4))
