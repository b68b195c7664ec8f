import numpy as np
import pytest
from scipy.integrate import dblquad

from beamlab.cgo import (assemble_cgo, build_amplitude, build_phase,
                         conjugated_defect_norm, dbar_solve,
                         eikonal_defect_exact, quasimode_eval,
                         quasimode_lp_norm, quasimode_on_cylinder,
                         smooth_cutoff)
from beamlab.cylinder import make_cylinder_grid
from beamlab.errors import UnsupportedOrder
from beamlab.geometry import FermiChart, make_chart, trace_geodesic
from beamlab.jacobi import curvature_along, riccati_path, solve_jacobi
from beamlab.potentials import make_field


@pytest.fixture(scope="module")
def flat_beam():
    ch = make_chart("flat_disk", n=3, params={"tube_radius": 1.0})
    p = trace_geodesic(ch, [0.0, 0.0], [1.0, 0.0])
    K = curvature_along(p)
    Y = solve_jacobi(K, 0.0, [[1.0]], [[1j]], require_admissible=True)
    return ch, p, K, Y


class TestCutoff:
    def test_plateau_and_support(self):
        s = np.array([0.0, 0.3, 0.49, 0.6, 0.8, 0.95, 1.01, 2.0])
        chi = smooth_cutoff(s)
        assert np.all(chi[:3] == 1.0)
        assert np.all(chi[-2:] == 0.0)
        assert np.all((chi[3:6] > 0) & (chi[3:6] < 1))
        assert np.all(np.diff(chi) <= 1e-12)


class TestPhase:
    def test_flat_quadratic_structure(self, flat_beam):
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2)
        H = riccati_path(Y)
        t0, y2 = 0.3, 0.12
        got = ph.theta(np.array(t0), np.array([y2]))
        expect = t0 + 0.5 * H.at(t0)[0, 0] * y2 ** 2
        assert abs(got - expect) <= 1e-8
        # flat N=2 defect equals the closed form -(1/4) Hdot^2 y^4
        fermi = FermiChart(p, delta_prime=1.2)
        Hv = H.at(t0)[0, 0]
        Sd = eikonal_defect_exact(fermi, ph, t0, [y2])
        assert abs(Sd - (-0.25 * Hv ** 4 * y2 ** 4)) <= 1e-8

    def test_defect_order_flat(self, flat_beam):
        ch, p, K, Y = flat_beam
        fermi = FermiChart(p, delta_prime=1.2)
        for N, min_slope in ((2, 3.7), (4, 5.7)):
            ph = build_phase(p, Y, N=N)
            ys = np.array([0.05, 0.1, 0.2, 0.4])
            ds = [abs(eikonal_defect_exact(fermi, ph, 0.25, [y])) for y in ys]
            slope = np.polyfit(np.log(ys), np.log(ds), 1)[0]
            assert slope >= min_slope

    def test_defect_order_sphere(self):
        ch = make_chart("sphere_cap", n=3, params={"cap_radius": 1.1})
        p = trace_geodesic(ch, [0.0, 0.0], [0.5, 0.0])
        K = curvature_along(p)
        Y = solve_jacobi(K, 0.0, [[1.0]], [[1j]], require_admissible=True)
        fermi = FermiChart(p)
        ph = build_phase(p, Y, N=3)
        ys = np.array([0.02, 0.04, 0.08, 0.16])
        ds = [abs(eikonal_defect_exact(fermi, ph, 0.2, [y])) for y in ys]
        slope = np.polyfit(np.log(ys), np.log(ds), 1)[0]
        assert slope >= ph.N + 1 - 0.3

    def test_gaussian_decay_bound(self, flat_beam):
        # Im Theta >= c0 |y''|^2 inside the tube
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2)
        assert ph.im_quadratic_min() > 0
        lam = 40.0
        for t0 in (-0.5, 0.2, 0.9):
            for y2 in (0.05, 0.2, 0.4):
                th = ph.theta(np.array(t0), np.array([y2]))
                bound = np.exp(-0.5 * lam * ph.im_quadratic_min() * y2 ** 2)
                assert abs(np.exp(1j * lam * th)) <= bound * 1.0000001

    def test_unsupported_order(self, flat_beam):
        ch, p, K, Y = flat_beam
        with pytest.raises(UnsupportedOrder):
            build_phase(p, Y, N=5)

    def test_n4_matrix_phase(self):
        ch = make_chart("flat_disk", n=4, params={"tube_radius": 0.8})
        p = trace_geodesic(ch, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        K = curvature_along(p)
        Y = solve_jacobi(K, 0.0, np.eye(2), 1j * np.eye(2),
                         require_admissible=True)
        ph = build_phase(p, Y, N=2)
        fermi = FermiChart(p, delta_prime=1.0)
        d = abs(eikonal_defect_exact(fermi, ph, 0.1, [0.1, 0.05]))
        assert d <= 1e-3    # flat matrix case: defect is quartic in offsets


class TestAmplitude:
    def test_v00_branch(self, flat_beam):
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        ts = np.linspace(-0.9, 0.9, 9)
        det = Y.det(ts)
        np.testing.assert_allclose(np.abs(amp.v0_eval(ts, np.zeros((9, 1)))),
                                   np.abs(det) ** -0.5, rtol=1e-7)

    def test_transport_defect_small(self, flat_beam):
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2, ny1=481)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        assert amp.transport_defect <= 1e-5

    def test_subprincipal_equation(self, flat_beam):
        # (d0 + i d1)(detY^(1/2) v1) reproduces the axis source
        ch, p, K, Y = flat_beam
        V1 = make_field("gaussian", amp=0.6, center=(0.5, 0.1, 0.0), width=0.5)
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, V1=V1, N_amp=1)
        root = 1.0 / amp.v00
        u = amp.v1_plus * root[None, :]
        d0 = np.gradient(u, amp.x0, axis=0)
        d1 = np.gradient(u, amp.y1, axis=1)
        lhs = d0 + 1j * d1
        rhs = 0.5 * root[None, :] * amp.pv0_axis
        inner = (slice(6, -6), slice(6, -6))
        scale = np.max(np.abs(rhs))
        assert np.max(np.abs((lhs - rhs)[inner])) <= 2e-3 * scale


class TestDbar:
    def test_residual_bump(self):
        n = 256
        y = np.linspace(-2.0, 2.0, n)
        Y0, Y1 = np.meshgrid(y, y, indexing="ij")
        r2 = Y0 ** 2 + Y1 ** 2
        F = np.zeros_like(r2, dtype=complex)
        m = r2 < 2.6
        F[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m] / 2.6)) ** 2 * (1.0 + 0.5j)
        r = dbar_solve(F, y, y)
        h = y[1] - y[0]
        c1 = np.array([-1., 9., -45., 0., 45., -9., 1.]) / (60 * h)

        def d6(u, axis):
            out = np.zeros_like(u)
            for k, ck in enumerate(c1):
                if ck:
                    out += ck * np.roll(u, 3 - k, axis=axis)
            return out

        res = d6(r, 0) + 1j * d6(r, 1) - F
        inner = (slice(10, -10),) * 2
        assert np.max(np.abs(res[inner])) <= 1e-4 * np.max(np.abs(F))

    def test_pointwise_quadrature_oracle(self):
        # polar-coordinate adaptive quadrature of the same decaying solution
        n = 256
        y = np.linspace(-2.0, 2.0, n)
        Y0, Y1 = np.meshgrid(y, y, indexing="ij")
        F = np.exp(-(Y0 ** 2 + Y1 ** 2) / 0.5) * (1.0 + 0.5j)
        r = dbar_solve(F, y, y)

        def oracle(px, py):
            R = 4.5

            def fn(rho, phi, part):
                sx = px - rho * np.cos(phi)
                sy = py - rho * np.sin(phi)
                val = (np.exp(-(sx ** 2 + sy ** 2) / 0.5) * (1.0 + 0.5j)
                       * np.exp(-1j * phi) / (2 * np.pi))
                return val.real if part == "re" else val.imag

            re = dblquad(lambda rho, phi: fn(rho, phi, "re"),
                         0, 2 * np.pi, 0, R, epsabs=1e-11)[0]
            im = dblquad(lambda rho, phi: fn(rho, phi, "im"),
                         0, 2 * np.pi, 0, R, epsabs=1e-11)[0]
            return re + 1j * im

        for i, j in ((128, 128), (150, 120), (100, 160)):
            assert abs(r[i, j] - oracle(y[i], y[j])) <= 5e-5


class TestRates:
    sigma = 1.0
    lams = [20.0, 40.0, 80.0, 160.0]

    def test_lp_scaling(self, flat_beam):
        # ||V||_Lp ~ lambda^{-(n-2)/(2p)}: -(1/2) for p=1, -(1/4) for p=2
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        for pp, expect in ((1, -0.5), (2, -0.25)):
            norms = [quasimode_lp_norm(ph, amp, complex(l, self.sigma), +1,
                                       ch, p=pp) for l in self.lams]
            slope = np.polyfit(np.log(self.lams), np.log(norms), 1)[0]
            assert slope == pytest.approx(expect, abs=0.15)

    def test_l2_scaling_sphere(self):
        ch = make_chart("sphere_cap", n=3, params={"cap_radius": 1.1,
                                                   "tube_radius": 0.35})
        p = trace_geodesic(ch, [0.0, 0.0], [0.5, 0.0])
        K = curvature_along(p)
        Y = solve_jacobi(K, 0.0, [[1.0]], [[1j]], require_admissible=True)
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        fermi = FermiChart(p)
        lams = [40.0, 80.0, 160.0, 320.0]
        norms = [quasimode_lp_norm(ph, amp, complex(l, self.sigma), +1, ch,
                                   fermi=fermi, ny1=80, nypp=41, nx0=9)
                 for l in lams]
        slope = np.polyfit(np.log(lams), np.log(norms), 1)[0]
        assert slope == pytest.approx(-0.25, abs=0.15)

    def test_defect_slopes(self, flat_beam):
        ch, p, K, Y = flat_beam
        for N in (2, 4):
            ph = build_phase(p, Y, N=N, ny1=401)
            amp = build_amplitude(p, ph, Y, N_amp=1)
            dn = [conjugated_defect_norm(ph, amp, complex(l, self.sigma), +1, ch)
                  for l in self.lams]
            slope = np.polyfit(np.log(self.lams), np.log(dn), 1)[0]
            assert slope <= 2 - N / 2 - 0.25 + 0.3

    def test_minus_beam_pairing(self, flat_beam):
        # conjugate-phase beam from the same jets at sampled points
        ch, p, K, Y = flat_beam
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        rho = complex(30.0, 1.0)
        t = np.array([0.2, -0.4])
        ypp = np.array([[0.1], [0.2]])
        x0 = np.array([0.3, 0.6])
        plus = quasimode_eval(ph, amp, rho, +1, x0, t, ypp)
        minus = quasimode_eval(ph, amp, rho, -1, x0, t, ypp)
        theta = ph.theta(t, ypp)
        v0 = amp.v0_eval(t, ypp)
        chi = smooth_cutoff(np.abs(ypp[:, 0]) / amp.delta)
        expect_minus = (np.exp(1j * rho.imag * x0)
                        * np.exp(-1j * np.conj(rho) * np.conj(theta))
                        * np.conj(v0) * chi)
        np.testing.assert_allclose(minus, expect_minus, rtol=1e-12)
        # |V^+- | share the same Gaussian envelope
        np.testing.assert_allclose(np.abs(plus), np.abs(minus), rtol=1e-10)


class TestAssembly:
    def test_remainder_and_pde_residual(self):
        # generous trace margin so the axis taper stays spectrally gentle
        ch = make_chart("flat_disk", n=3, params={"tube_radius": 1.0,
                                                  "margin": 0.3})
        p = trace_geodesic(ch, [0.0, 0.0], [1.0, 0.0])
        K = curvature_along(p)
        Y = solve_jacobi(K, 0.0, [[1.0]], [[1j]], require_admissible=True)
        ph = build_phase(p, Y, N=2, ny1=401)
        amp = build_amplitude(p, ph, Y, N_amp=1)
        grid = make_cylinder_grid(ch, nx0=96, ntrans=192)
        sol = assemble_cgo(p, ph, amp, 40.0, 1.0, grid,
                           sign=+1, compute_pde_residual=True)
        assert sol.report.residual_l2 <= 1e-3
        assert sol.pde_residual <= 2e-3
        # remainder much smaller than the beam on the physical window
        mask = grid.physical_mask()
        U = quasimode_on_cylinder(ph, amp, sol.rho, +1, grid, p)
        assert (np.linalg.norm(sol.remainder[mask])
                <= 0.05 * np.linalg.norm(U[mask]))

    def test_curved_assembly_rejected(self):
        ch = make_chart("sphere_cap", n=3, params={"cap_radius": 1.1})
        p = trace_geodesic(ch, [0.0, 0.0], [0.5, 0.0])
        K = curvature_along(p)
        Y = solve_jacobi(K, 0.0, [[1.0]], [[1j]], require_admissible=True)
        ph = build_phase(p, Y, N=2)
        amp = build_amplitude(p, ph, Y, N_amp=0)
        grid = make_cylinder_grid(ch, nx0=32, ntrans=32)
        with pytest.raises(UnsupportedOrder):
            assemble_cgo(p, ph, amp, 20.0, 1.0, grid)
