"""Tests of feature maps, kernels, and the feature file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poolforge.kernels import (
    ActivationFeatures,
    BitVector,
    EnergyGradientFeatures,
    ForceGradientFeatures,
    JointGradientFeatures,
    cosine_normalize,
    force_rms_feature,
    joint_feature,
    load_features,
    make_feature_map,
    read_feature_header,
    save_features,
    tanimoto,
)
from poolforge.potential import NeuralPotential, energy_param_gradient, force_param_jacobian
from poolforge.validation import ValidationError

from conftest import random_rotation, random_structure

finite_vectors = arrays(
    np.float64,
    st.integers(min_value=1, max_value=8),
    elements=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
).filter(lambda v: np.linalg.norm(v) > 1e-6)


class TestCosineNormalize:
    def test_three_four_five(self):
        assert np.array_equal(cosine_normalize([3.0, 4.0]), [0.6, 0.8])

    def test_sign_preserved(self):
        assert np.array_equal(cosine_normalize([-2.0, 0.0]), [-1.0, 0.0])

    def test_unit_vector_unchanged(self):
        v = np.array([0.0, 1.0, 0.0])
        assert np.array_equal(cosine_normalize(v), v)

    @given(finite_vectors)
    @settings(max_examples=50, deadline=None)
    def test_idempotent_and_unit_norm(self, v):
        once = cosine_normalize(v)
        assert abs(np.linalg.norm(once) - 1.0) < 1e-12
        assert np.allclose(cosine_normalize(once), once, atol=1e-15)

    def test_zero_vector_is_an_error(self):
        with pytest.raises(ValidationError, match="zero"):
            cosine_normalize([0.0, 0.0, 0.0])

    def test_rows_normalized_independently(self):
        X = np.array([[3.0, 4.0], [0.0, 2.0]])
        assert np.array_equal(cosine_normalize(X), [[0.6, 0.8], [0.0, 1.0]])


class TestForceRMSFeature:
    def test_zero_jacobian(self):
        assert np.array_equal(force_rms_feature(np.zeros((4, 3, 3))), np.zeros(4))

    def test_single_atom_arithmetic(self):
        jac = np.array([[[3.0, 4.0, 0.0]]])  # one parameter, one atom
        assert force_rms_feature(jac) == pytest.approx([5.0], rel=1e-15)

    def test_rotation_invariance(self, params, cfg):
        rng = np.random.default_rng(40)
        x = random_structure(rng)
        rot = random_rotation(rng)
        phi = force_rms_feature(force_param_jacobian(params, "all", cfg, x))
        phi_rot = force_rms_feature(
            force_param_jacobian(params, "all", cfg, x.rotated(rot))
        )
        assert np.abs(phi - phi_rot).max() / np.abs(phi).max() < 1e-6

    def test_non_negative(self, params, cfg):
        rng = np.random.default_rng(41)
        jac = force_param_jacobian(params, "all", cfg, random_structure(rng))
        assert (force_rms_feature(jac) >= 0.0).all()

    def test_bad_shape_rejected(self):
        with pytest.raises(ValidationError):
            force_rms_feature(np.zeros((4, 3)))


def _unit(rng, d):
    return cosine_normalize(rng.standard_normal(d))


class TestJointFeature:
    def test_energy_only_weight_reduces_to_energy_kernel(self):
        rng = np.random.default_rng(42)
        a_e, a_f = _unit(rng, 6), _unit(rng, 9)
        b_e, b_f = _unit(rng, 6), _unit(rng, 9)
        ja = joint_feature(a_e, a_f, 1.0, 0.0)
        jb = joint_feature(b_e, b_f, 1.0, 0.0)
        assert ja @ jb == a_e @ b_e  # exact: the force block is exactly zero

    def test_self_kernel_is_weight_sum(self):
        rng = np.random.default_rng(43)
        phi_e, phi_f = _unit(rng, 5), _unit(rng, 7)
        j = joint_feature(phi_e, phi_f, 1.0, 1.0)
        assert abs(j @ j - 2.0) < 1e-12

    @pytest.mark.parametrize("w", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (32.0, 1.0)])
    def test_bilinearity(self, w):
        rng = np.random.default_rng(44)
        for _ in range(20):
            a_e, a_f = _unit(rng, 6), _unit(rng, 9)
            b_e, b_f = _unit(rng, 6), _unit(rng, 9)
            got = joint_feature(a_e, a_f, *w) @ joint_feature(b_e, b_f, *w)
            want = w[0] * (a_e @ b_e) + w[1] * (a_f @ b_f)
            assert abs(got - want) < 1e-12

    def test_unnormalized_inputs_rejected(self):
        with pytest.raises(ValidationError, match="normalized"):
            joint_feature([1.0, 1.0], [1.0, 0.0], 1.0, 1.0)

    def test_degenerate_weights_rejected(self):
        rng = np.random.default_rng(45)
        phi = _unit(rng, 4)
        with pytest.raises(ValidationError):
            joint_feature(phi, phi, 0.0, 0.0)
        with pytest.raises(ValidationError):
            joint_feature(phi, phi, -1.0, 1.0)


bit_sets = st.lists(st.integers(min_value=0, max_value=63), max_size=20)


class TestTanimoto:
    def test_identical_nonempty(self):
        a = BitVector(128, [3, 17, 99])
        assert tanimoto(a, a) == 1.0

    def test_disjoint_nonempty(self):
        assert tanimoto(BitVector(64, [1, 2]), BitVector(64, [3, 4])) == 0.0

    def test_one_common_of_three(self):
        assert tanimoto(BitVector(64, [1, 2]), BitVector(64, [2, 3])) == pytest.approx(1 / 3)

    def test_both_empty_is_zero(self):
        assert tanimoto(BitVector(64, []), BitVector(64, [])) == 0.0

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="width"):
            tanimoto(BitVector(64, [1]), BitVector(128, [1]))

    @given(bit_sets, bit_sets)
    @settings(max_examples=100, deadline=None)
    def test_symmetric_and_bounded(self, a_bits, b_bits):
        a, b = BitVector(64, a_bits), BitVector(64, b_bits)
        assert tanimoto(a, b) == tanimoto(b, a)
        assert 0.0 <= tanimoto(a, b) <= 1.0

    def test_out_of_range_bits_rejected(self):
        with pytest.raises(ValidationError):
            BitVector(16, [16])


@pytest.fixture
def model():
    return NeuralPotential(n_species=3, embed_dim=4, hidden_dim=8, seed=7).initialize()


class TestFeatureMaps:
    def test_normalized_kernel_values_in_range(self, model):
        rng = np.random.default_rng(46)
        structures = [random_structure(rng) for _ in range(6)]
        for name in ("ntk-e", "ntk-f", "activation"):
            X = make_feature_map(name, model).transform(structures)
            gram = X @ X.T
            assert np.abs(np.diagonal(gram) - 1.0).max() < 1e-12
            assert np.all(gram <= 1.0 + 1e-12) and np.all(gram >= -1.0 - 1e-12)

    def test_energy_map_is_normalized_gradient(self, model):
        rng = np.random.default_rng(47)
        x = random_structure(rng)
        raw = energy_param_gradient(model.params_, "embeddings", model.cfg, x)
        X = EnergyGradientFeatures(model, subset="embeddings").transform([x])
        assert np.allclose(X[0], raw / np.linalg.norm(raw), atol=1e-15)

    def test_joint_map_dim_is_sum_of_parts(self, model):
        rng = np.random.default_rng(48)
        structures = [random_structure(rng) for _ in range(2)]
        d_e = EnergyGradientFeatures(model).transform(structures).shape[1]
        d_f = ForceGradientFeatures(model).transform(structures).shape[1]
        joint = JointGradientFeatures(model).transform(structures)
        assert joint.shape == (2, d_e + d_f)

    def test_joint_self_kernel_default_weights(self, model):
        rng = np.random.default_rng(49)
        X = JointGradientFeatures(model).transform([random_structure(rng)])
        assert abs(X[0] @ X[0] - 2.0) < 1e-12

    def test_activation_map_matches_potential(self, model):
        rng = np.random.default_rng(50)
        x = random_structure(rng)
        from poolforge.potential import pooled_activations

        raw = pooled_activations(model.params_, model.cfg, x)
        X = ActivationFeatures(model).transform([x])
        assert np.allclose(X[0], raw / np.linalg.norm(raw), atol=1e-15)

    def test_unknown_name_rejected(self, model):
        with pytest.raises(ValidationError, match="feature map"):
            make_feature_map("soap", model)

    def test_empty_structure_list_rejected(self, model):
        with pytest.raises(ValidationError):
            EnergyGradientFeatures(model).transform([])

    def test_sklearn_params_round_trip(self, model):
        fmap = JointGradientFeatures(model, subset="readout", w_energy=4.0)
        clone_params = fmap.get_params()
        assert clone_params["subset"] == "readout"
        assert clone_params["w_energy"] == 4.0
        fmap.set_params(w_energy=2.0)
        assert fmap.w_energy == 2.0


class TestFeatureFiles:
    def test_round_trip_float64_exact(self, tmp_path):
        rng = np.random.default_rng(51)
        X = rng.standard_normal((13, 5))
        path = tmp_path / "x.pffm"
        save_features(path, X)
        assert np.array_equal(load_features(path), X)
        assert read_feature_header(path) == (13, 5, 8)

    def test_round_trip_float32_quantized(self, tmp_path):
        rng = np.random.default_rng(52)
        X = rng.standard_normal((4, 3))
        path = tmp_path / "x.pffm"
        save_features(path, X, precision=4)
        assert read_feature_header(path) == (4, 3, 4)
        assert np.allclose(load_features(path), X, atol=1e-6)

    def test_write_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(53)
        X = rng.standard_normal((7, 9))
        a, b = tmp_path / "a.pffm", tmp_path / "b.pffm"
        save_features(a, X)
        save_features(b, X)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.pffm"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(ValidationError, match="magic"):
            load_features(path)

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(54)
        path = tmp_path / "x.pffm"
        save_features(path, rng.standard_normal((3, 3)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValidationError, match="truncated"):
            load_features(path)

    def test_bad_precision_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="precision"):
            save_features(tmp_path / "x.pffm", np.zeros((2, 2)), precision=2)
