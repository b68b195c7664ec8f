"""Complex Jacobi and Riccati fields along a geodesic.

Along a unit-speed geodesic with parallel frame ``e_2..e_{n-1}`` the geodesic
deviation operator is the frame-projected tidal matrix
``K_ab = g(R(e_a, v) v, e_b)`` (positive and equal to the sectional curvature
on round models).  Matrix fields solve ``Y'' + K(t) Y = 0``; admissible weight
families carry a non-degenerate anchor with symmetric Riccati matrix
``H = Y' Y^{-1}`` of positive imaginary part, and these properties propagate
along the whole interval together with the conserved quantity
``det(Im H) |det Y|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import BranchAmbiguity, ConjugatePointHit, SingularAnchor

__all__ = [
    "CurvaturePath", "ComplexJacobiField", "RiccatiPath",
    "curvature_along", "solve_jacobi", "real_pair", "epsilon_family",
    "riccati_path", "conjugate_scan", "det_root_branch",
]


# ---------------------------------------------------------------------------
# curvature along the geodesic
# ---------------------------------------------------------------------------

@dataclass
class CurvaturePath:
    """Tidal curvature matrices in the parallel frame, sampled along t."""

    t: np.ndarray
    K: np.ndarray             # (N, m, m)

    def __post_init__(self):
        self._spl = CubicSpline(self.t, self.K, axis=0)

    @property
    def m(self):
        return self.K.shape[1]

    def at(self, t):
        return self._spl(t)

    def symmetry_defect(self):
        return float(np.max(np.abs(self.K - np.swapaxes(self.K, 1, 2))))


def _riemann_fd(metric, x, step=1e-5):
    """Riemann tensor components R^k_{b c d} by centered differences of the
    Christoffel symbols, batched over leading axes of ``x``."""
    d = metric.dim
    gam = metric.christoffel(x)
    dgam = np.empty(x.shape[:-1] + (d, d, d, d))
    for l in range(d):
        e = np.zeros(d)
        e[l] = step
        dgam[..., l, :, :, :] = (metric.christoffel(x + e)
                                 - metric.christoffel(x - e)) / (2 * step)
    R = (np.einsum("...ckdb->...kbcd", dgam)
         - np.einsum("...dkcb->...kbcd", dgam)
         + np.einsum("...kce,...edb->...kbcd", gam, gam)
         - np.einsum("...kde,...ecb->...kbcd", gam, gam))
    return R


def curvature_along(path, step=1e-5):
    """Frame-projected tidal operator ``K_ab(t)`` along a traced geodesic."""
    metric = path.chart.metric
    x, v, e = path.x, path.v, path.frame
    R = _riemann_fd(metric, x, step=step)
    # A(w) = R(w, v) v  with components R^k_{bcd} v^b w^c v^d
    Aw = np.einsum("...kbcd,...b,...cm,...d->...km", R, v, e, v)
    g = metric.g(x)
    K = np.einsum("...km,...kl,...la->...ma", Aw, g, e)
    K = np.swapaxes(K, 1, 2)        # K[a, m] = g(A(e_a), e_m) -> rows a
    return CurvaturePath(t=path.t.copy(), K=K)


# ---------------------------------------------------------------------------
# jacobi / riccati fields
# ---------------------------------------------------------------------------

@dataclass
class ComplexJacobiField:
    """Matrix solution of ``Y'' + K Y = 0`` with its derivative."""

    t: np.ndarray
    Y: np.ndarray             # (N, m, m) complex
    Yd: np.ndarray
    tau0: float
    Y0: np.ndarray
    Y1: np.ndarray
    admissible: bool = False
    eps: float | None = None

    def __post_init__(self):
        self._sy = CubicSpline(self.t, self.Y, axis=0)
        self._syd = CubicSpline(self.t, self.Yd, axis=0)

    @property
    def m(self):
        return self.Y.shape[1]

    def at(self, t):
        return self._sy(t)

    def deriv_at(self, t):
        return self._syd(t)

    def det(self, t):
        return np.linalg.det(self._sy(np.asarray(t)))

    def residual(self, K):
        """Max norm of Y'' + K Y on the sample grid (second FD of samples)."""
        h = np.diff(self.t)
        hm = 0.5 * (h[:-1] + h[1:])
        Ypp = (self.Y[2:] - 2 * self.Y[1:-1] + self.Y[:-2]) / hm[:, None, None] ** 2
        res = Ypp + np.einsum("nij,njk->nik", K.K[1:-1], self.Y[1:-1])
        return float(np.max(np.abs(res)))

    def to_csv(self, path):
        m = self.m
        cols = [self.t]
        names = ["t"]
        for i in range(m):
            for j in range(m):
                cols.append(self.Y[:, i, j].real)
                names.append(f"ReY{i+1}{j+1}")
        for i in range(m):
            for j in range(m):
                cols.append(self.Y[:, i, j].imag)
                names.append(f"ImY{i+1}{j+1}")
        det = np.linalg.det(self.Y)
        cols += [det.real, det.imag]
        names += ["detY_re", "detY_im"]
        H = riccati_path(self)
        cols.append(H.c_cons)
        names.append("c_cons")
        np.savetxt(path, np.column_stack(cols), delimiter=",",
                   header=",".join(names), comments="", fmt="%.12g")


def _jacobi_rhs(Kfun, t, Y, Yd):
    return Yd, -Kfun(t) @ Y


def _integrate_jacobi(K, tau0, Y0, Y1):
    """RK4 sweep of the first-order system for (Y, Y') over K's grid."""
    t = K.t
    m = K.m
    Y0 = np.asarray(Y0, dtype=complex).reshape(m, m)
    Y1 = np.asarray(Y1, dtype=complex).reshape(m, m)
    N = len(t)
    Y = np.empty((N, m, m), dtype=complex)
    Yd = np.empty((N, m, m), dtype=complex)
    i0 = int(np.argmin(np.abs(t - tau0)))

    def step(ti, tf, y, yd):
        h = tf - ti
        k1y, k1d = _jacobi_rhs(K.at, ti, y, yd)
        k2y, k2d = _jacobi_rhs(K.at, ti + h / 2, y + h / 2 * k1y, yd + h / 2 * k1d)
        k3y, k3d = _jacobi_rhs(K.at, ti + h / 2, y + h / 2 * k2y, yd + h / 2 * k2d)
        k4y, k4d = _jacobi_rhs(K.at, tf, y + h * k3y, yd + h * k3d)
        return (y + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y),
                yd + h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d))

    # partial step from tau0 to the nearest node, then node-to-node sweeps
    y, yd = step(tau0, t[i0], Y0, Y1) if t[i0] != tau0 else (Y0, Y1)
    Y[i0], Yd[i0] = y, yd
    for i in range(i0 + 1, N):
        y, yd = step(t[i - 1], t[i], y, yd)
        Y[i], Yd[i] = y, yd
    y, yd = Y[i0], Yd[i0]
    for i in range(i0 - 1, -1, -1):
        y, yd = step(t[i + 1], t[i], y, yd)
        Y[i], Yd[i] = y, yd
    return t, Y, Yd


def solve_jacobi(K, tau0, Y0, Y1, require_admissible=False):
    """Solve the matrix deviation equation with anchor data at ``tau0``."""
    m = K.m
    Y0m = np.asarray(Y0, dtype=complex).reshape(m, m)
    Y1m = np.asarray(Y1, dtype=complex).reshape(m, m)
    admissible = False
    if require_admissible:
        if abs(np.linalg.det(Y0m)) < 1e-14:
            raise SingularAnchor("anchor matrix is degenerate")
        H0 = Y1m @ np.linalg.inv(Y0m)
        sym = np.max(np.abs(H0 - H0.T))
        imH = (H0 - H0.conj().T) / 2j
        im_min = np.min(np.linalg.eigvalsh(imH))
        if sym > 1e-10 or im_min <= 0:
            raise SingularAnchor("anchor fails the admissibility condition")
        admissible = True
    t, Y, Yd = _integrate_jacobi(K, tau0, Y0m, Y1m)
    return ComplexJacobiField(t=t, Y=Y, Yd=Yd, tau0=float(tau0),
                              Y0=Y0m, Y1=Y1m, admissible=admissible)


def real_pair(K, anchor="point", tau0=None):
    """Real solutions (X, Z): X vanishing at the anchor with unit rate,
    Z with identity value and zero rate.  ``anchor`` is "point" (tau0 = 0)
    or "entry" (tau0 = left end of the extended grid)."""
    m = K.m
    if tau0 is None:
        tau0 = 0.0 if anchor == "point" else float(K.t[0])
    eye = np.eye(m)
    zero = np.zeros((m, m))
    X = solve_jacobi(K, tau0, zero, eye)
    Z = solve_jacobi(K, tau0, eye, zero)
    return X, Z


def epsilon_family(K, eps, anchor="point", tau0=None, pair=None):
    """Admissible family ``Y = X - i eps Z`` anchored at the reconstruction
    point (``anchor="point"``) or at the extended entry time."""
    if eps <= 0:
        raise SingularAnchor("family parameter must be positive")
    X, Z = pair if pair is not None else real_pair(K, anchor, tau0)
    Y = ComplexJacobiField(
        t=X.t, Y=X.Y - 1j * eps * Z.Y, Yd=X.Yd - 1j * eps * Z.Yd,
        tau0=X.tau0, Y0=X.Y0 - 1j * eps * Z.Y0, Y1=X.Y1 - 1j * eps * Z.Y1,
        admissible=True, eps=float(eps))
    return Y


def wronskian(Z, X):
    """Scalar-case Wronskian ``Z' X - X' Z`` on the common grid."""
    if X.m != 1:
        raise ValueError("wronskian is a scalar-case diagnostic")
    return (Z.Yd[:, 0, 0] * X.Y[:, 0, 0] - X.Yd[:, 0, 0] * Z.Y[:, 0, 0]).real


# ---------------------------------------------------------------------------
# riccati companion
# ---------------------------------------------------------------------------

@dataclass
class RiccatiPath:
    t: np.ndarray
    H: np.ndarray             # (N, m, m) complex symmetric
    c_cons: np.ndarray        # det(Im H) |det Y|^2 per sample

    def __post_init__(self):
        self._spl = CubicSpline(self.t, self.H, axis=0)

    def at(self, t):
        return self._spl(t)

    def symmetry_defect(self):
        return float(np.max(np.abs(self.H - np.swapaxes(self.H, 1, 2))))

    def min_im_eig(self):
        imH = (self.H - np.conj(np.swapaxes(self.H, 1, 2))) / 2j
        return float(np.min(np.linalg.eigvalsh(imH)))

    def conservation_drift(self):
        c = self.c_cons
        return float((np.max(c) - np.min(c)) / np.mean(c))

    def constant(self):
        return float(np.mean(self.c_cons))


def riccati_path(Y, window=None):
    """Riccati companion ``H = Y' Y^{-1}`` with the conserved quantity.

    Raises ``ConjugatePointHit`` when |det Y| collapses inside the window.
    """
    t, Ym, Yd = Y.t, Y.Y, Y.Yd
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, Ym, Yd = t[sel], Ym[sel], Yd[sel]
    det = np.linalg.det(Ym)
    scale = np.max(np.abs(det))
    if np.min(np.abs(det)) < 1e-12 * scale:
        raise ConjugatePointHit("det Y vanishes inside the window")
    H = np.einsum("nij,njk->nik", Yd, np.linalg.inv(Ym))
    imH = (H - np.conj(np.swapaxes(H, 1, 2))) / 2j
    c = np.linalg.det(imH).real * np.abs(det) ** 2
    return RiccatiPath(t=t.copy(), H=H, c_cons=c)


# ---------------------------------------------------------------------------
# conjugate points and the determinant branch
# ---------------------------------------------------------------------------

def conjugate_scan(K, anchor=0.0, window=None):
    """Zeros of det X away from the anchor, located by bisection on the
    spline of det X.  ``window`` defaults to the full sampled range."""
    m = K.m
    X = solve_jacobi(K, anchor, np.zeros((m, m)), np.eye(m))
    t = X.t
    detX = np.linalg.det(X.Y).real
    spl = CubicSpline(t, detX)
    lo = window[0] if window else t[0]
    hi = window[1] if window else t[-1]
    grid = np.linspace(lo, hi, 4 * len(t))
    vals = spl(grid)
    hits = []
    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        if b <= anchor + 1e-8 and a >= anchor - 1e-8:
            continue
        if vals[i] == 0.0:
            hits.append(a)
        elif vals[i] * vals[i + 1] < 0.0:
            hits.append(brentq(spl, a, b, xtol=1e-12))
    # drop the structural zero at the anchor and deduplicate
    out = []
    for r in hits:
        if abs(r - anchor) < 1e-6:
            continue
        if not out or abs(r - out[-1]) > 1e-8:
            out.append(float(r))
    return out


def det_root_branch(Y, tgrid, anchor=None):
    """Continuous branch of ``(det Y)^{-1/2}`` along ``tgrid``.

    The global sign is fixed at the anchor time through the principal matrix
    square root, ``w(tau0) = det(sqrtm(Y(tau0)))^{-1}``; for the standard
    families this reproduces the local model ``(t - i eps)^{-(m)}``-roots used
    by the inversion identities (e.g. ``+i/eps`` at the anchor when m = 2).
    """
    from scipy.linalg import sqrtm

    det = Y.det(tgrid)
    amin, amax = np.min(np.abs(det)), np.max(np.abs(det))
    if amin < 1e-12 * amax:
        raise BranchAmbiguity("det Y collapses; branch continuation undefined")
    theta = np.unwrap(np.angle(det))
    w = np.abs(det) ** (-0.5) * np.exp(-0.5j * theta)
    t0 = Y.tau0 if anchor is None else float(anchor)
    t0 = min(max(t0, tgrid[0]), tgrid[-1])
    i0 = int(np.argmin(np.abs(np.asarray(tgrid) - t0)))
    target = 1.0 / complex(np.linalg.det(sqrtm(Y.at(tgrid[i0]))))
    ratio = target / w[i0]
    sign = 1.0 if ratio.real >= 0 else -1.0
    return sign * w
