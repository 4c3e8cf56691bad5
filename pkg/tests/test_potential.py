"""Tests of the surrogate potential: values, derivatives, training."""

import math

import numpy as np
import pytest

from poolforge.potential import (
    DescriptorConfig,
    ModelParams,
    NeuralPotential,
    TrainingSchedule,
    dataset_loss,
    energy,
    energy_and_forces,
    energy_param_gradient,
    force_param_jacobian,
    forces,
    load_params,
    pooled_activations,
    save_params,
    train,
)
from poolforge.structures import LabeledStructure, Structure
from poolforge.validation import NumericalError, ValidationError

from conftest import random_rotation, random_structure


def closed_form_energy(params, cfg, species, positions):
    """Hand-scripted reference evaluation of the site-energy model.

    Deliberately written with plain loops, independent of the library's
    vectorised implementation.
    """
    n = len(species)
    total = 0.0
    for i in range(n):
        descriptor = [0.0] * cfg.n_centers
        for j in range(n):
            if j == i:
                continue
            r = math.dist(positions[i], positions[j])
            if r >= cfg.cutoff:
                continue
            fcut = 0.5 * (math.cos(math.pi * r / cfg.cutoff) + 1.0)
            for k, mu in enumerate(cfg.centers):
                descriptor[k] += math.exp(-((r - mu) ** 2) / (2 * cfg.width**2)) * fcut
        inputs = descriptor + list(params.embeddings[species[i]])
        site = params.readout_bias
        for h in range(params.hidden_dim):
            pre = params.hidden_bias[h] + sum(
                params.hidden_weights[h, c] * inputs[c] for c in range(len(inputs))
            )
            site += params.readout_weights[h] * math.tanh(pre)
        total += site
    return total


class TestEnergy:
    def test_isolated_atom_closed_form(self, params, cfg):
        x = Structure([1], [[0.0, 0.0, 0.0]])
        inputs = np.concatenate([np.zeros(cfg.n_centers), params.embeddings[1]])
        expected = (
            params.readout_weights
            @ np.tanh(params.hidden_weights @ inputs + params.hidden_bias)
            + params.readout_bias
        )
        assert energy(params, cfg, x) == pytest.approx(expected, rel=1e-14)

    def test_beyond_cutoff_sums_isolated_atoms(self, params, cfg):
        pair = Structure([0, 2], [[0.0, 0.0, 0.0], [0.0, 0.0, cfg.cutoff + 1.0]])
        isolated = sum(
            energy(params, cfg, Structure([s], [[0.0, 0.0, 0.0]])) for s in (0, 2)
        )
        assert energy(params, cfg, pair) == pytest.approx(isolated, rel=1e-14)

    def test_dimer_matches_scripted_closed_form(self, cfg):
        params = ModelParams.random(3, 4, 8, cfg.n_centers, seed=0)
        x = Structure([0, 0], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        expected = closed_form_energy(params, cfg, [0, 0], x.positions)
        assert energy(params, cfg, x) == pytest.approx(expected, rel=1e-12)

    def test_random_structure_matches_scripted_closed_form(self, params, cfg):
        rng = np.random.default_rng(4)
        x = random_structure(rng)
        expected = closed_form_energy(params, cfg, list(x.species), x.positions)
        assert energy(params, cfg, x) == pytest.approx(expected, rel=1e-12)

    def test_translation_invariance(self, params, cfg):
        rng = np.random.default_rng(5)
        x = random_structure(rng)
        shifted = energy(params, cfg, x.translated([17.0, -3.5, 0.25]))
        assert abs(energy(params, cfg, x) - shifted) < 1e-10

    def test_rotation_invariance(self, params, cfg):
        rng = np.random.default_rng(6)
        x = random_structure(rng)
        rotated = energy(params, cfg, x.rotated(random_rotation(rng)))
        assert abs(energy(params, cfg, x) - rotated) < 1e-10

    def test_empty_structure_rejected(self):
        with pytest.raises(ValidationError):
            Structure([], np.zeros((0, 3)))

    def test_inconsistent_dims_rejected(self, params, cfg):
        bad_species = Structure([params.n_species + 3], [[0.0, 0.0, 0.0]])
        with pytest.raises(ValidationError):
            energy(params, cfg, bad_species)
        narrow_cfg = DescriptorConfig(centers=(0.5, 1.0, 2.0))
        with pytest.raises(ValidationError):
            energy(params, narrow_cfg, Structure([0], [[0.0, 0.0, 0.0]]))


class TestForces:
    def test_symmetric_dimer_newton_third_law(self, params, cfg):
        x = Structure([1, 1], [[0.0, 0.0, 0.0], [1.1, 0.0, 0.0]])
        f = forces(params, cfg, x)
        assert np.array_equal(f[0], -f[1])

    def test_beyond_cutoff_zero(self, params, cfg):
        x = Structure([0, 1, 2], np.diag([0.0, 2 * cfg.cutoff, 4 * cfg.cutoff]) + 1.0)
        assert np.array_equal(forces(params, cfg, x), np.zeros((3, 3)))

    def test_matches_finite_differences(self, params, cfg):
        rng = np.random.default_rng(7)
        x = random_structure(rng)
        f = forces(params, cfg, x)
        step = 1e-4
        fd = np.zeros_like(f)
        for i in range(x.n_atoms):
            for axis in range(3):
                hi = x.positions.copy()
                hi[i, axis] += step
                lo = x.positions.copy()
                lo[i, axis] -= step
                fd[i, axis] = -(
                    energy(params, cfg, Structure(x.species, hi))
                    - energy(params, cfg, Structure(x.species, lo))
                ) / (2 * step)
        assert np.abs(f - fd).max() / np.abs(fd).max() < 1e-5

    def test_zero_net_force_and_equivariance(self, params, cfg):
        rng = np.random.default_rng(8)
        for _ in range(10):
            x = random_structure(rng, n_atoms=int(rng.integers(2, 8)))
            f = forces(params, cfg, x)
            assert np.abs(f.sum(axis=0)).max() < 1e-10
            rot = random_rotation(rng)
            f_rot = forces(params, cfg, x.rotated(rot))
            assert np.abs(f_rot - f @ rot.T).max() < 1e-8

    def test_energy_and_forces_consistent(self, params, cfg):
        rng = np.random.default_rng(9)
        x = random_structure(rng)
        e, f = energy_and_forces(params, cfg, x)
        assert e == energy(params, cfg, x)
        assert np.array_equal(f, forces(params, cfg, x))


class TestParamGradient:
    def test_readout_bias_component_is_atom_count(self, params, cfg):
        rng = np.random.default_rng(10)
        for n in (1, 3, 6):
            x = random_structure(rng, n_atoms=n)
            g = energy_param_gradient(params, "all", cfg, x)
            assert g[-1] == float(n)

    def test_readout_weight_block_is_pooled_activation(self, params, cfg):
        rng = np.random.default_rng(11)
        x = random_structure(rng)
        g = energy_param_gradient(params, "readout", cfg, x)
        assert np.array_equal(g[:-1], pooled_activations(params, cfg, x))

    def test_matches_finite_differences(self, params, cfg):
        rng = np.random.default_rng(12)
        x = random_structure(rng)
        g = energy_param_gradient(params, "all", cfg, x)
        vec = params.to_vector()
        dims = (params.n_species, params.embed_dim, params.hidden_dim, params.input_dim)
        step = 1e-5
        fd = np.zeros_like(vec)
        for p in range(vec.size):
            hi = vec.copy()
            hi[p] += step
            lo = vec.copy()
            lo[p] -= step
            fd[p] = (
                energy(ModelParams.from_vector(hi, *dims), cfg, x)
                - energy(ModelParams.from_vector(lo, *dims), cfg, x)
            ) / (2 * step)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-5

    def test_subset_blocks_concatenate_to_all(self, params, cfg):
        rng = np.random.default_rng(13)
        x = random_structure(rng)
        stacked = np.concatenate(
            [
                energy_param_gradient(params, subset, cfg, x)
                for subset in ("embeddings", "hidden", "readout")
            ]
        )
        assert np.array_equal(stacked, energy_param_gradient(params, "all", cfg, x))

    def test_unknown_subset_rejected(self, params, cfg):
        with pytest.raises(ValidationError, match="subset"):
            energy_param_gradient(params, "everything", cfg, Structure([0], [[0, 0, 0]]))

    def test_deterministic(self, params, cfg):
        rng = np.random.default_rng(14)
        x = random_structure(rng)
        a = energy_param_gradient(params, "all", cfg, x)
        b = energy_param_gradient(params, "all", cfg, x)
        assert np.array_equal(a, b)


class TestMixedJacobian:
    def test_readout_bias_rows_exactly_zero(self, params, cfg):
        rng = np.random.default_rng(15)
        x = random_structure(rng)
        jac = force_param_jacobian(params, "readout", cfg, x)
        assert np.array_equal(jac[-1], np.zeros((x.n_atoms, 3)))

    def test_beyond_cutoff_zero(self, params, cfg):
        x = Structure([0, 1], [[0.0, 0.0, 0.0], [0.0, 0.0, 2 * cfg.cutoff]])
        jac = force_param_jacobian(params, "all", cfg, x)
        assert np.array_equal(jac, np.zeros_like(jac))

    def test_matches_param_derivative_of_analytic_forces(self, params, cfg):
        # independent oracle: differentiate the analytic forces over
        # parameters, instead of the gradient over coordinates
        rng = np.random.default_rng(16)
        x = random_structure(rng)
        jac = force_param_jacobian(params, "all", cfg, x, step=1e-4)
        vec = params.to_vector()
        dims = (params.n_species, params.embed_dim, params.hidden_dim, params.input_dim)
        step = 1e-5
        for p in (0, 7, 40, vec.size - 2):
            hi = vec.copy()
            hi[p] += step
            lo = vec.copy()
            lo[p] -= step
            fd = (
                forces(ModelParams.from_vector(hi, *dims), cfg, x)
                - forces(ModelParams.from_vector(lo, *dims), cfg, x)
            ) / (2 * step)
            scale = max(np.abs(fd).max(), 1e-12)
            assert np.abs(jac[p] - fd).max() / scale < 1e-4

    def test_richardson_convergence_order(self, params, cfg):
        rng = np.random.default_rng(17)
        x = random_structure(rng)
        reference = force_param_jacobian(params, "all", cfg, x, step=1e-5, snap_tol=0.0)
        err = {
            step: np.abs(
                force_param_jacobian(params, "all", cfg, x, step=step, snap_tol=0.0)
                - reference
            ).max()
            for step in (1e-3, 5e-4)
        }
        order = math.log2(err[1e-3] / err[5e-4])
        assert order >= 1.9

    def test_nonpositive_step_rejected(self, params, cfg):
        with pytest.raises(ValidationError):
            force_param_jacobian(params, "all", cfg, Structure([0], [[0, 0, 0]]), step=0.0)


class TestActivations:
    def test_single_isolated_atom(self, params, cfg):
        x = Structure([2], [[1.0, 2.0, 3.0]])
        inputs = np.concatenate([np.zeros(cfg.n_centers), params.embeddings[2]])
        expected = np.tanh(params.hidden_weights @ inputs + params.hidden_bias)
        assert pooled_activations(params, cfg, x) == pytest.approx(expected, abs=1e-15)

    def test_pooling_additivity_for_two_isolated_atoms(self, params, cfg):
        single = pooled_activations(params, cfg, Structure([1], [[0.0, 0.0, 0.0]]))
        double = pooled_activations(
            params, cfg,
            Structure([1, 1], [[0.0, 0.0, 0.0], [0.0, 0.0, 3 * cfg.cutoff]]),
        )
        assert double == pytest.approx(2 * single, rel=1e-14)

    def test_bitwise_equal_to_gradient_block(self, params, cfg):
        rng = np.random.default_rng(18)
        for _ in range(5):
            x = random_structure(rng, n_atoms=int(rng.integers(1, 7)))
            g = energy_param_gradient(params, "readout", cfg, x)
            assert np.array_equal(pooled_activations(params, cfg, x), g[:-1])


def _teacher_dataset(rng, n, n_species=3):
    teacher = NeuralPotential(n_species=n_species, hidden_dim=32, seed=321).initialize()
    structures = [random_structure(rng, n_atoms=int(rng.integers(4, 7))) for _ in range(n)]
    return teacher.label(structures)


class TestTraining:
    def test_schedule_thresholds(self):
        assert TrainingSchedule.for_dataset_size(15) == TrainingSchedule(1, 1e-3, 67)
        assert TrainingSchedule.for_dataset_size(20) == TrainingSchedule(1, 1e-3, 50)
        assert TrainingSchedule.for_dataset_size(50) == TrainingSchedule(2, 5e-3, 40)
        assert TrainingSchedule.for_dataset_size(100) == TrainingSchedule(2, 5e-3, 20)
        assert TrainingSchedule.for_dataset_size(400) == TrainingSchedule(4, 5e-3, 10)
        assert TrainingSchedule.for_dataset_size(4000) == TrainingSchedule(4, 5e-3, 10)

    def test_zero_residual_leaves_params_unchanged(self, cfg):
        rng = np.random.default_rng(19)
        model = NeuralPotential(n_species=3, seed=20).initialize()
        dataset = model.label([random_structure(rng) for _ in range(8)])
        retrained = train(model.params_, model.cfg, dataset, seed=1)
        assert np.array_equal(retrained.to_vector(), model.params_.to_vector())

    def test_loss_decreases_on_teacher_data(self, cfg):
        rng = np.random.default_rng(22)
        dataset = _teacher_dataset(rng, 50)
        for seed in range(5):
            start = ModelParams.random(3, 4, 16, cfg.n_centers, seed=100 + seed)
            final = train(start, cfg, dataset, seed=seed)
            assert dataset_loss(final, cfg, dataset) < dataset_loss(start, cfg, dataset)

    def test_empty_dataset_rejected(self, params, cfg):
        with pytest.raises(ValidationError):
            train(params, cfg, [])

    def test_divergence_aborts_with_diagnostic(self, params, cfg):
        rng = np.random.default_rng(23)
        dataset = _teacher_dataset(rng, 4)
        bad = TrainingSchedule(batch_size=1, learning_rate=np.inf, epochs=1)
        with np.errstate(invalid="ignore"), pytest.raises(NumericalError, match="diverged"):
            train(params, cfg, dataset, schedule=bad)

    def test_training_is_seeded(self, cfg):
        rng = np.random.default_rng(24)
        dataset = _teacher_dataset(rng, 12)
        start = ModelParams.random(3, 4, 8, cfg.n_centers, seed=2)
        a = train(start, cfg, dataset, seed=5)
        b = train(start, cfg, dataset, seed=5)
        c = train(start, cfg, dataset, seed=6)
        assert np.array_equal(a.to_vector(), b.to_vector())
        assert not np.array_equal(a.to_vector(), c.to_vector())


class TestParamsIO:
    def test_round_trip(self, params, tmp_path):
        path = tmp_path / "model.pfpm"
        save_params(path, params)
        loaded = load_params(path)
        assert np.array_equal(loaded.to_vector(), params.to_vector())
        assert loaded.n_species == params.n_species
        assert loaded.n_centers == params.n_centers

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.pfpm"
        path.write_bytes(b"NOPE" + b"\x00" * 60)
        with pytest.raises(ValidationError, match="magic"):
            load_params(path)

    def test_truncated_rejected(self, params, tmp_path):
        path = tmp_path / "model.pfpm"
        save_params(path, params)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(ValidationError, match="truncated"):
            load_params(path)


class TestLabeledStructure:
    def test_force_shape_enforced(self):
        x = Structure([0, 1], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.raises(ValidationError):
            LabeledStructure(x, 0.0, np.zeros((3, 3)))

    def test_teacher_labels_balance_forces(self):
        rng = np.random.default_rng(25)
        teacher = NeuralPotential(n_species=3, seed=31).initialize()
        for item in teacher.label([random_structure(rng) for _ in range(5)]):
            assert np.abs(item.forces.sum(axis=0)).max() < 1e-8
