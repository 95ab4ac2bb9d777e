import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from oracles import a3, integrate_s2
from probdml.directional import (
    DegenerateEmbeddingError,
    DimensionMismatchError,
    NivmfParams,
    VmfParams,
    compose_samples,
    cosine_similarity,
    decompose,
    householder_to,
    load_samples_csv,
    nivmf_log_density,
    params_from_json,
    params_to_json,
    random_rotation,
    sample_nivmf_approx,
    sample_vmf,
    save_samples_csv,
    vmf_log_density,
)
from probdml.specfn import log_c_exact, mean_resultant_length


def _unit(rng, m):
    x = rng.standard_normal(m)
    return x / np.linalg.norm(x)


def _e(m, i):
    x = np.zeros(m)
    x[i] = 1.0
    return x


class TestGeometry:
    def test_cosine_examples(self):
        assert cosine_similarity(_e(3, 0), _e(3, 0)) == 1.0
        assert cosine_similarity(_e(3, 0), _e(3, 1)) == 0.0
        assert cosine_similarity([2, 0, 0], [-3, 0, 0]) == -1.0

    def test_cosine_clamped(self):
        v = np.full(7, 1 / math.sqrt(7))
        assert cosine_similarity(v, v * 3) <= 1.0

    def test_cosine_zero_input(self):
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 0])

    def test_decompose_345(self):
        d = decompose([0, 3, 4])
        np.testing.assert_allclose(d.mu, [0, 0.6, 0.8])
        assert d.kappa == 5.0
        np.testing.assert_allclose(d.kappa * d.mu, d.raw, rtol=1e-15)

    def test_decompose_unit(self):
        x = _unit(np.random.default_rng(0), 5)
        d = decompose(x)
        assert d.kappa == pytest.approx(1.0)
        np.testing.assert_allclose(d.mu, x)

    def test_decompose_degenerate(self):
        with pytest.raises(DegenerateEmbeddingError):
            decompose([1e-12, 0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
    def test_roundtrip_property(self, coords):
        z = np.array(coords)
        if np.linalg.norm(z) <= 1e-6:
            return
        d = decompose(z)
        np.testing.assert_allclose(d.kappa * d.mu, z, rtol=1e-6, atol=1e-12)
        assert abs(np.linalg.norm(d.mu) - 1) <= 1e-6

    def test_householder_maps_pole(self):
        rng = np.random.default_rng(1)
        for m in [2, 3, 10]:
            mu = _unit(rng, m)
            np.testing.assert_allclose(householder_to(mu, _e(m, 0)), mu, atol=1e-14)
        np.testing.assert_allclose(householder_to(_e(4, 0), _e(4, 2)), _e(4, 2))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            VmfParams(np.array([1.0, 1.0]), 1.0)
        with pytest.raises(ValueError):
            VmfParams(_e(3, 0), -1.0)
        with pytest.raises(ValueError):
            NivmfParams(_e(3, 0), np.array([1.0, 0.0, 2.0]))
        with pytest.raises(DimensionMismatchError):
            NivmfParams(_e(3, 0), np.ones(4))


class TestVmfDensity:
    def test_mode_value(self):
        p = VmfParams(_e(3, 2), 1.0)
        expected = math.log(1 / (4 * math.pi * math.sinh(1.0))) + 1.0
        assert vmf_log_density(p, _e(3, 2)) == pytest.approx(expected, rel=1e-13)

    def test_kappa_zero_uniform(self):
        rng = np.random.default_rng(2)
        p = VmfParams(_e(5, 0), 0.0)
        vals = [vmf_log_density(p, _unit(rng, 5)) for _ in range(5)]
        assert np.ptp(vals) == 0.0

    def test_against_quadrature_normalized(self):
        rng = np.random.default_rng(3)
        mu = _unit(rng, 3)
        z = integrate_s2(lambda x: np.exp(5.0 * (x @ mu) - 5.0), mu)
        for _ in range(5):
            x = _unit(rng, 3)
            ref = 5.0 * (x @ mu) - 5.0 - math.log(z)
            assert vmf_log_density(VmfParams(mu, 5.0), x) == pytest.approx(ref, abs=1e-8)

    @pytest.mark.parametrize("kappa", [0.5, 5.0, 50.0])
    def test_normalization(self, kappa):
        mu = _unit(np.random.default_rng(4), 3)
        p = VmfParams(mu, kappa)
        total = integrate_s2(lambda x: np.exp(vmf_log_density(p, x)), mu)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            vmf_log_density(VmfParams(_e(3, 0), 1.0), np.ones(4) / 2)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(5)
        for m in [3, 9]:
            mu, x = _unit(rng, m), _unit(rng, m)
            r = random_rotation(m, seed=int(rng.integers(1 << 30)))
            a = vmf_log_density(VmfParams(mu, 7.0), x)
            b = vmf_log_density(VmfParams(r @ mu, 7.0), r @ x)
            assert a == pytest.approx(b, abs=1e-12)

    def test_approx_backend(self):
        p = VmfParams(_e(16, 0), 20.0)
        a = vmf_log_density(p, _e(16, 0), normalizer="approx")
        b = vmf_log_density(p, _e(16, 0), normalizer="exact")
        from probdml.specfn import get_normalizer

        fit = get_normalizer(16, "approx")
        assert a - b == pytest.approx(fit.log_c(20.0) - log_c_exact(16, 20.0), abs=1e-12)


class TestNivmfDensity:
    @pytest.mark.parametrize("m", [3, 16, 128])
    def test_isotropic_reduction(self, m):
        rng = np.random.default_rng(m)
        mu = _unit(rng, m)
        for _ in range(20):
            c = rng.uniform(0.5, 50)
            xs = np.stack([_unit(rng, m) for _ in range(5)])
            diff = nivmf_log_density(NivmfParams(mu, np.full(m, c)), xs) - vmf_log_density(VmfParams(mu, c), xs)
            np.testing.assert_allclose(diff, (m - 1) * math.log(c), atol=1e-8)

    def test_mode_value(self):
        rng = np.random.default_rng(6)
        mu = _unit(rng, 4)
        k = rng.uniform(1, 20, 4)
        n = np.linalg.norm(k * mu)
        expected = log_c_exact(4, n) + np.sum(np.log(k)) - math.log(n) + n
        assert nivmf_log_density(NivmfParams(mu, k), mu) == pytest.approx(expected, rel=1e-13)

    def test_anisotropy_direction(self):
        # axis 1 has kappa 5, axis 2 has kappa 50; equal angle offsets from mu = e_0
        p = NivmfParams(_e(3, 0), np.array([20.0, 5.0, 50.0]))
        th = 0.3
        low = np.array([math.cos(th), math.sin(th), 0.0])
        high = np.array([math.cos(th), 0.0, math.sin(th)])
        assert nivmf_log_density(p, low) > nivmf_log_density(p, high)

    def test_nonpositive_kappa(self):
        with pytest.raises(ValueError):
            NivmfParams(_e(3, 0), np.array([1.0, -2.0, 3.0]))

    def test_mass_diagnostic(self):
        # the heuristic volume factor makes the measure's total mass differ from 1
        p = NivmfParams(_e(3, 0), np.array([20.0, 5.0, 50.0]))
        mass = integrate_s2(lambda x: np.exp(nivmf_log_density(p, x)), p.mu, 600, 800)
        print(f"nivMF total mass for kappa=(20,5,50): {mass:.6g}")
        assert np.isfinite(mass) and mass > 0


class TestSamplers:
    @pytest.mark.parametrize("m", [3, 10])
    def test_uniform_when_kappa_zero(self, m):
        x = sample_vmf(VmfParams(_e(m, 0), 0.0), 100_000, seed=7)
        assert np.linalg.norm(x.mean(axis=0)) < 0.02

    @pytest.mark.parametrize("m,kappa", [(3, 5.0), (8, 20.0), (64, 50.0)])
    def test_mean_resultant_length(self, m, kappa):
        mu = _unit(np.random.default_rng(m), m)
        x = sample_vmf(VmfParams(mu, kappa), 100_000, seed=11)
        assert np.abs(np.linalg.norm(x, axis=1) - 1).max() < 1e-12
        r = np.linalg.norm(x.mean(axis=0))
        assert r == pytest.approx(float(mean_resultant_length(m, kappa)), rel=1e-2)
        assert x.mean(axis=0) @ mu / r > 0.999

    def test_three_dim_closed_form_resultant(self):
        x = sample_vmf(VmfParams(_e(3, 1), 5.0), 100_000, seed=3)
        assert np.linalg.norm(x.mean(axis=0)) == pytest.approx(a3(5.0), rel=1e-2)

    def test_determinism(self):
        for m in [3, 12]:
            p = VmfParams(_e(m, 0), 9.0)
            a = sample_vmf(p, 500, seed=123)
            b = sample_vmf(p, 500, seed=123)
            assert np.array_equal(a, b)
            assert not np.array_equal(a, sample_vmf(p, 500, seed=124))

    def test_nivmf_identity_matches_vmf(self):
        mu = _unit(np.random.default_rng(8), 6)
        a = sample_nivmf_approx(NivmfParams(mu, np.ones(6)), 1000, seed=5)
        b = sample_vmf(VmfParams(mu, math.sqrt(1.0)), 1000, seed=5)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_nivmf_scaled_identity_resultant(self):
        mu = _unit(np.random.default_rng(9), 3)
        a = sample_nivmf_approx(NivmfParams(mu, np.full(3, 7.0)), 100_000, seed=1)
        b = sample_vmf(VmfParams(mu, 7.0), 100_000, seed=2)
        assert np.linalg.norm(a.mean(0)) == pytest.approx(np.linalg.norm(b.mean(0)), rel=1e-2)

    def test_nivmf_beats_isotropic_fit(self):
        p = NivmfParams(_e(3, 0), np.array([20.0, 5.0, 50.0]))
        x = sample_nivmf_approx(p, 100_000, seed=4)
        mean = x.mean(axis=0)
        rbar = np.linalg.norm(mean)
        kappa_hat = brentq(lambda k: a3(k) - rbar, 1e-6, 1e4)
        iso = vmf_log_density(VmfParams(mean / rbar, kappa_hat), x).mean()
        aniso = nivmf_log_density(p, x).mean()
        assert aniso > iso

    def test_compose_batch_shapes(self):
        rng = np.random.default_rng(0)
        mu = np.stack([_unit(rng, 5) for _ in range(4)])
        w = rng.uniform(-1, 1, (4, 6))
        v = rng.standard_normal((4, 6, 4))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        out = compose_samples(mu, w, v)
        assert out.shape == (4, 6, 5)
        np.testing.assert_allclose(np.einsum("bnm,bm->bn", out, mu), w, atol=1e-12)


class TestFiles:
    def test_samples_csv(self, tmp_path):
        x = sample_vmf(VmfParams(_e(4, 0), 3.0), 20, seed=0)
        path = tmp_path / "s.csv"
        save_samples_csv(path, x)
        header = path.read_text().splitlines()[0]
        assert header == "x0,x1,x2,x3"
        assert np.array_equal(load_samples_csv(path), x)

    def test_params_json(self):
        p = VmfParams(_e(3, 0), 2.5)
        q = NivmfParams(_e(3, 1), np.array([1.0, 2.0, 3.0]))
        assert '"kappa": 2.5' in params_to_json(p)
        p2, q2 = params_from_json(params_to_json(p)), params_from_json(params_to_json(q))
        assert p2.kappa == 2.5 and np.array_equal(q2.kappa_diag, q.kappa_diag)
