import numpy as np
import pytest
from scipy.integrate import quad

from beamlab.errors import NoConvergence, NonMonotone, NonRealInput
from beamlab.geometry import make_chart, trace_geodesic
from beamlab.jacobi import (curvature_along, det_root_branch, epsilon_family,
                            real_pair)
from beamlab.raytransform import (GeodesicSample, TransformCurve,
                                  invert_j1_moments, invert_j1_point_split,
                                  invert_j2_point, j1_forward, j2_forward,
                                  normalization_integral, _binom_half)


@pytest.fixture(scope="module")
def flat3():
    ch = make_chart("flat_disk", n=3)
    p = trace_geodesic(ch, [0.0, 0.0], [1.0, 0.0], margin=1.0)
    K = curvature_along(p)
    return p, K


@pytest.fixture(scope="module")
def flat4():
    ch = make_chart("flat_disk", n=4)
    p = trace_geodesic(ch, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    K = curvature_along(p)
    return p, K


@pytest.fixture(scope="module")
def cap3():
    ch = make_chart("sphere_cap", n=3, params={"cap_radius": 1.25})
    p = trace_geodesic(ch, [0.0, 0.0], [0.5, 0.0])
    K = curvature_along(p)
    return p, K


def quad_oracle(fn, a, b):
    re = quad(lambda t: fn(t).real, a, b, epsrel=1e-13, limit=400)[0]
    im = quad(lambda t: fn(t).imag, a, b, epsrel=1e-13, limit=400)[0]
    return re + 1j * im


class TestForward:
    def test_zero_function(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: 0.0 * t)
        Y = epsilon_family(K, 0.3)
        assert j1_forward(f, Y) == 0
        assert j2_forward(f, Y) == 0

    def test_j1_flat_vs_adaptive_quadrature(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: np.ones_like(t))
        Y = epsilon_family(K, 1.0)
        ref = quad_oracle(lambda t: 1.0 / (t - 1j), -1.0, 1.0)
        assert abs(j1_forward(f, Y) - ref) <= 1e-10

    def test_j2_flat_closed_form(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: np.ones_like(t))
        val = j2_forward(f, epsilon_family(K, 0.1))
        assert val.real == pytest.approx(2.0 / 0.1 * np.arctan(10.0), rel=1e-10)
        assert abs(val.imag) <= 1e-12

    def test_j2_sphere_vs_adaptive_quadrature(self, cap3):
        p, K = cap3
        f = GeodesicSample.from_time_function(p, lambda t: np.cos(0.7 * t) + 0.2)
        eps = 0.05
        Y = epsilon_family(K, eps)
        ref = quad_oracle(lambda t: (np.cos(0.7 * t) + 0.2)
                          / abs(np.sin(t) - 1j * eps * np.cos(t)),
                          p.tau_minus, p.tau_plus)
        assert abs(j2_forward(f, Y) - ref) <= 1e-9 * abs(ref)

    def test_linearity(self, flat4):
        p, K = flat4
        Y = epsilon_family(K, 0.07)
        fa = GeodesicSample.from_time_function(p, lambda t: np.sin(t))
        fb = GeodesicSample.from_time_function(p, lambda t: np.exp(-t * t))
        fab = GeodesicSample.from_time_function(
            p, lambda t: 2.0 * np.sin(t) - 0.5 * np.exp(-t * t))
        for fwd in (j1_forward, j2_forward):
            lhs = fwd(fab, Y)
            rhs = 2.0 * fwd(fa, Y) - 0.5 * fwd(fb, Y)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

    def test_window_split_consistency(self, flat4):
        # full-window transform = model window term + explicit tails
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: np.ones_like(t))
        eps, zeta = 0.05, 0.4
        val = j2_forward(f, epsilon_family(K, eps)).real
        inner = normalization_integral(zeta, eps, 4)
        tail = 2.0 / eps * (np.arctan(1.0 / eps) - np.arctan(zeta / eps))
        assert val == pytest.approx(inner + tail, rel=1e-10)


class TestNormalization:
    def test_closed_forms(self):
        assert normalization_integral(1.0, 0.1, 4) == pytest.approx(
            2.0 / 0.1 * np.arctan(10.0), rel=1e-13)
        assert normalization_integral(1.0, 1e-3, 3) == pytest.approx(
            2.0 * np.arcsinh(1000.0), rel=1e-13)
        assert normalization_integral(1.0, 1e-3, 3) == pytest.approx(15.2018, abs=1e-3)

    def test_growth_law(self):
        # n=4 divergence rate eps^(3-n): N * eps -> pi
        for eps in (1e-2, 1e-3, 1e-4):
            val = normalization_integral(0.5, eps, 4) * eps
            assert val == pytest.approx(np.pi, rel=5e-2 * eps / 1e-2 + 1e-2)


class TestTransformCurve:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            TransformCurve(eps=[0.1, 0.2], values=[1, 2], kind="second")
        with pytest.raises(ValueError):
            TransformCurve(eps=[0.1, -0.2], values=[1, 2], kind="second")

    def test_csv(self, tmp_path, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: np.cos(t))
        eps = [0.3, 0.1, 0.03]
        curve = TransformCurve(
            eps=eps, values=[j2_forward(f, epsilon_family(K, e)) for e in eps],
            kind="second")
        out = tmp_path / "curve.csv"
        curve.to_csv(out)
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert data.shape == (3, 3)


class TestInvertJ2:
    def test_constant(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: 3.0 * np.ones_like(t))
        orc = lambda e: j2_forward(f, epsilon_family(K, e))
        rep = invert_j2_point(orc, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], zeta=0.4, n=4)
        assert rep.estimate.real == pytest.approx(3.0, rel=1e-4)

    def test_flat_cos(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: np.cos(t))
        orc = lambda e: j2_forward(f, epsilon_family(K, e))
        rep = invert_j2_point(orc, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], zeta=0.4, n=4)
        assert abs(rep.estimate - 1.0) <= 0.02

    def test_sphere(self, cap3):
        p, K = cap3
        truth = 1.0 + 0.4 * np.sin(0.4)
        f = GeodesicSample.from_time_function(
            p, lambda t: 1.0 + 0.4 * np.sin(1.3 * t + 0.4))
        pair = real_pair(K, "point")
        orc = lambda e: j2_forward(f, epsilon_family(K, e, pair=pair))
        rep = invert_j2_point(orc, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], zeta=0.4, n=3)
        assert abs(rep.estimate - truth) <= 0.03 * truth
        assert rep.error_bound <= 0.05 * truth

    def test_no_convergence_guard(self):
        # data outgrowing the model normalization: extrapolants diverge
        bad = lambda e: normalization_integral(0.4, e, 4) ** 2
        with pytest.raises(NoConvergence):
            invert_j2_point(bad, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3], zeta=0.4, n=4)


class TestInvertJ1Split:
    eps = [0.18, 0.12, 0.08, 0.05, 0.03, 0.02, 0.012, 0.008, 0.005,
           0.003, 0.002, 0.001]

    def test_oscillatory_model_integral(self):
        # int_{-z}^{z} Im (t - i eps)^{-1} dt = 2 atan(z/eps) -> pi
        for zeta, eps in ((0.5, 0.05), (0.3, 1e-3)):
            val = quad(lambda t: (1.0 / (t - 1j * eps)).imag, -zeta, zeta,
                       epsrel=1e-13)[0]
            assert val == pytest.approx(2.0 * np.arctan(zeta / eps), rel=1e-12)
        assert 2.0 * np.arctan(0.3 / 1e-4) == pytest.approx(np.pi, abs=1e-3)

    def test_constant(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: 2.0 * np.ones_like(t))
        orc = lambda e: j1_forward(f, epsilon_family(K, e))
        rep = invert_j1_point_split(orc, self.eps)
        assert rep.estimate == pytest.approx(2.0, abs=0.02)

    def test_flat_quadratic(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: 1.0 + t * t)
        orc = lambda e: j1_forward(f, epsilon_family(K, e))
        rep = invert_j1_point_split(orc, self.eps, f_check=f.values)
        assert abs(rep.estimate - 1.0) <= 0.03

    def test_tail_linear_decay(self, flat4):
        # imaginary part of the branch outside the window shrinks like eps
        p, K = flat4
        zeta = 0.4
        eps_grid = np.array([0.04, 0.02, 0.01, 0.005])
        tails = []
        for e in eps_grid:
            Y = epsilon_family(K, e)
            tt = np.concatenate([np.linspace(-1.0, -zeta, 400),
                                 np.linspace(zeta, 1.0, 400)])
            w = det_root_branch(Y, tt)
            tails.append(np.max(np.abs(w - np.conj(w))))
        slope = np.polyfit(np.log(eps_grid), np.log(tails), 1)[0]
        assert 0.8 <= slope <= 1.2

    def test_complex_input_rejected(self, flat4):
        p, K = flat4
        f = GeodesicSample.from_time_function(p, lambda t: t + 1j * t)
        orc = lambda e: j1_forward(f, epsilon_family(K, e))
        with pytest.raises(NonRealInput):
            invert_j1_point_split(orc, self.eps, f_check=f.values)


class TestInvertJ1Moments:
    def make_route(self, profile, margin=1.0):
        ch = make_chart("flat_disk", n=3)
        p = trace_geodesic(ch, [0.0, 0.0], [1.0, 0.0], margin=margin)
        K = curvature_along(p)
        X, Z = real_pair(K, "entry")
        f = GeodesicSample.from_time_function(p, profile)
        fam = lambda e: epsilon_family(K, e, anchor="entry", pair=(X, Z))
        orc = lambda e: j1_forward(f, fam(e), window=(p.tau_minus, p.tau_plus))
        return p, X, Z, orc

    def test_zero(self):
        p, X, Z, orc = self.make_route(lambda t: 0.0 * t)
        rec, diag = invert_j1_moments(orc, X, Z, (p.tau_minus, p.tau_plus))
        assert np.max(np.abs(rec.values)) <= 1e-10
        assert np.max(np.abs(diag["moments"])) <= 1e-10

    def test_flat_ratio_decreasing(self):
        p, X, Z, _ = self.make_route(lambda t: 0.0 * t)
        ts = np.linspace(p.tau_minus, p.tau_plus, 50)
        ratio = Z.at(ts)[:, 0, 0].real / X.at(ts)[:, 0, 0].real
        expect = 1.0 / (ts - X.tau0)
        np.testing.assert_allclose(ratio, expect, rtol=1e-8)
        assert np.all(np.diff(ratio) < 0)

    def test_flat_gaussian(self):
        p, X, Z, orc = self.make_route(lambda t: np.exp(-t * t))
        rec, diag = invert_j1_moments(orc, X, Z, (p.tau_minus, p.tau_plus),
                                      K_max=8)
        truth = np.exp(-rec.t ** 2)
        rel = np.linalg.norm(rec.values - truth) / np.linalg.norm(truth)
        assert rel <= 0.05

    def test_sphere_profile(self):
        ch = make_chart("sphere_cap", n=3, params={"cap_radius": 1.0})
        p = trace_geodesic(ch, [0.0, 0.0], [0.5, 0.0], margin=0.6)
        K = curvature_along(p)
        X, Z = real_pair(K, "entry")
        f = GeodesicSample.from_time_function(p, lambda t: 1.0 / (1.0 + t * t))
        fam = lambda e: epsilon_family(K, e, anchor="entry", pair=(X, Z))
        orc = lambda e: j1_forward(f, fam(e), window=(p.tau_minus, p.tau_plus))
        rec, _ = invert_j1_moments(orc, X, Z, (p.tau_minus, p.tau_plus), K_max=8)
        truth = 1.0 / (1.0 + rec.t ** 2)
        rel = np.linalg.norm(rec.values - truth) / np.linalg.norm(truth)
        assert rel <= 0.05

    def test_moment_idempotence(self):
        # moments of the reconstruction reproduce the fitted moments
        p, X, Z, orc = self.make_route(lambda t: np.exp(-t * t))
        rec, diag = invert_j1_moments(orc, X, Z, (p.tau_minus, p.tau_plus),
                                      K_max=8)
        tt = rec.t
        Xv = X.at(tt)[:, 0, 0].real
        Xt = Z.at(tt)[:, 0, 0].real / Xv
        M = diag["moments"]
        for k in (0, 2, 5, 8):
            mk = np.trapezoid(rec.values * Xv ** (-0.5) * Xt ** k, tt)
            assert mk == pytest.approx(M[k], rel=0.02, abs=1e-8)

    def test_series_structure(self):
        # forward data matches the truncated parameter expansion of the weight
        p, X, Z, orc = self.make_route(lambda t: np.exp(-t * t))
        _, diag = invert_j1_moments(orc, X, Z, (p.tau_minus, p.tau_plus), K_max=8)
        M = np.asarray(diag["moments"])
        a = _binom_half(8)
        eps = 0.02
        series = sum(a[k] * (1j * eps) ** k * M[k] for k in range(9))
        assert abs(orc(eps) - series) <= 1e-6

    def test_non_monotone_guard(self):
        p, X, Z, orc = self.make_route(lambda t: np.exp(-t * t))
        with pytest.raises(NonMonotone):
            invert_j1_moments(orc, X, X, (p.tau_minus, p.tau_plus))
