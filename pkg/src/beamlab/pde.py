"""Discretized direct problem on the product manifold.

Conservative second-order finite differences on tensor grids with diagonal
metrics.  The transversal disk uses a cell-centered polar radius (the pole
face carries zero flux, the rim is a Dirichlet face), so the boundary is
exact; boxes use node axes.  One sparse factorization backs every solve with
the same zeroth-order coefficient; an axisymmetric fast path splits the
periodic angle into decoupled 2-D solves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (ContractionFailure, DirichletEigenvalue, SearchFailed,
                     SmallDataViolated)

__all__ = [
    "Axis", "ProductDomain", "SchrodingerSolver", "DNRecord",
    "box_domain", "disk_cylinder_domain", "interval_domain",
    "dirichlet_faces", "solve_semilinear", "dn_map", "complex_step_first",
    "linearize_divided_difference", "direct_hierarchy_solve",
    "greens_pairing", "nonvanishing_solution",
]


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass
class Axis:
    name: str
    nodes: np.ndarray
    kind: str                  # "node" | "cell" | "periodic"
    dirichlet_lo: bool = False
    dirichlet_hi: bool = False

    @property
    def h(self):
        return float(self.nodes[1] - self.nodes[0])

    @property
    def n(self):
        return len(self.nodes)


class ProductDomain:
    """Tensor grid with a diagonal metric.

    ``gdiag(coords)`` returns the diagonal metric entries at coordinate
    arrays; ``chart_point`` maps grid coordinates to (x0, xp) pairs for
    evaluating registered fields.
    """

    def __init__(self, axes, gdiag=None, chart_point=None):
        self.axes = list(axes)
        self.gdiag = gdiag
        self._chart_point = chart_point
        self.shape = tuple(ax.n for ax in self.axes)
        self.mesh = np.meshgrid(*[ax.nodes for ax in self.axes], indexing="ij")
        if gdiag is None:
            diag = np.ones((len(self.axes),) + self.shape)
        else:
            diag = np.asarray(gdiag(self.mesh))
        self.metric_diag = diag
        self.W = np.sqrt(np.prod(diag, axis=0))
        self.A = [self.W / diag[j] for j in range(len(self.axes))]
        self._build_boundary()
        self._build_quadrature()

    def points(self):
        if self._chart_point is None:
            if len(self.axes) == 1:
                return self.mesh[0], self.mesh[0][..., None] * 0.0
            return self.mesh[0], np.stack(self.mesh[1:], axis=-1)
        return self._chart_point(self.mesh)

    def metric_at(self, coords):
        if self.gdiag is None:
            return np.ones((len(self.axes),) + np.shape(coords[0]))
        return np.asarray(self.gdiag(coords))

    def _build_boundary(self):
        self.interior = np.ones(self.shape, dtype=bool)
        self.cell_faces = []
        for j, ax in enumerate(self.axes):
            if ax.kind == "node":
                if ax.dirichlet_lo:
                    self.interior[(slice(None),) * j + (0,)] = False
                if ax.dirichlet_hi:
                    self.interior[(slice(None),) * j + (-1,)] = False
            elif ax.kind == "cell":
                if ax.dirichlet_lo:
                    self.cell_faces.append((j, 0))
                if ax.dirichlet_hi:
                    self.cell_faces.append((j, 1))
        self.n_int = int(np.sum(self.interior))

    def _build_quadrature(self):
        w = np.ones(self.shape)
        for j, ax in enumerate(self.axes):
            wj = np.full(ax.n, ax.h)
            if ax.kind == "node":
                wj[0] *= 0.5
                wj[-1] *= 0.5
            shape = [1] * len(self.axes)
            shape[j] = ax.n
            w = w * wj.reshape(shape)
        self.quad = w * self.W

    def volume_integral(self, u):
        return complex(np.sum(self.quad * u))

    def face_info(self, j, side):
        """Coordinates, surface measure and metric entry on a Dirichlet face."""
        ax = self.axes[j]
        if ax.kind == "node":
            coord = ax.nodes[0] if side == 0 else ax.nodes[-1]
        else:
            coord = (ax.nodes[0] - ax.h / 2 if side == 0
                     else ax.nodes[-1] + ax.h / 2)
        other = [self.axes[k].nodes for k in range(len(self.axes)) if k != j]
        mesh = np.meshgrid(*other, indexing="ij") if other else []
        base_shape = mesh[0].shape if mesh else ()
        coords = []
        it = iter(mesh)
        for k in range(len(self.axes)):
            coords.append(np.full(base_shape, coord) if k == j else next(it))
        diag = self.metric_at(coords)
        ds = np.sqrt(np.prod(diag, axis=0) / diag[j])
        for k in range(len(self.axes)):
            if k == j:
                continue
            axk = self.axes[k]
            wk = np.full(axk.n, axk.h)
            if axk.kind == "node":
                wk[0] *= 0.5
                wk[-1] *= 0.5
            shp = [1] * max(len(self.axes) - 1, 1)
            pos = k if k < j else k - 1
            shp[pos] = axk.n
            ds = ds * wk.reshape(shp)
        return coords, ds, diag[j]

    def face_points(self, j, side):
        coords, _, _ = self.face_info(j, side)
        if self._chart_point is not None:
            return self._chart_point(coords)
        if len(self.axes) == 1:
            return coords[0], coords[0][..., None] * 0.0
        return coords[0], np.stack(coords[1:], axis=-1)


def dirichlet_faces(domain):
    out = []
    for j, ax in enumerate(domain.axes):
        if ax.dirichlet_lo:
            out.append((j, 0))
        if ax.dirichlet_hi:
            out.append((j, 1))
    return out


def box_domain(lengths, shape, metric=None):
    """Flat box with node axes, Dirichlet on every face."""
    names = ["x0", "x1", "x2", "x3"]
    axes = [Axis(names[i], np.linspace(0.0, L, n), "node",
                 dirichlet_lo=True, dirichlet_hi=True)
            for i, (L, n) in enumerate(zip(lengths, shape))]
    return ProductDomain(axes, gdiag=metric)


def interval_domain(length, n):
    ax = Axis("x", np.linspace(0.0, length, n), "node",
              dirichlet_lo=True, dirichlet_hi=True)
    return ProductDomain([ax])


def disk_cylinder_domain(chart, nx0, nr, nphi):
    """I x disk for n = 3: node interval, cell-centered radius, periodic angle."""
    a0, b0 = chart.interval
    R = chart.radius
    hr = R / nr
    ax0 = Axis("x0", np.linspace(a0, b0, nx0), "node",
               dirichlet_lo=True, dirichlet_hi=True)
    axr = Axis("r", (np.arange(nr) + 0.5) * hr, "cell", dirichlet_hi=True)
    axp = Axis("phi", np.linspace(0.0, 2 * np.pi, nphi, endpoint=False),
               "periodic")
    phi_fn = chart.metric.phi

    def gdiag(coords):
        x0, r, phi = coords
        xp = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
        e2 = np.exp(2.0 * phi_fn(xp))
        return np.stack([np.ones_like(r + x0), e2 + 0 * x0,
                         (e2 * r ** 2) + 0 * x0], axis=0)

    def chart_point(coords):
        x0, r, phi = coords
        return x0, np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)

    return ProductDomain([ax0, axr, axp], gdiag=gdiag, chart_point=chart_point)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

class SchrodingerSolver:
    """Factorized discrete ``-Lap_g + V1`` with Dirichlet conditions.

    A nonzero ``lam`` builds the exponentially conjugated operator
    ``e^{-lam x0} P e^{lam x0}`` as an exact similarity transform of the
    discrete stencil (axis-0 couplings scaled by e^{+/- lam h}), so its
    spectrum and conditioning match the unconjugated solve at any lam; a
    centered first-order term would instead drift like (lam^2 h)^2.
    """

    def __init__(self, domain, V1_field=None, lam=0.0, fast_angle=None):
        self.domain = domain
        self.V1 = (np.zeros(domain.shape) if V1_field is None
                   else np.asarray(V1_field))
        self.lam = float(lam)
        possible = self._fast_angle_possible()
        self.fast = possible if fast_angle is None else (fast_angle and possible)
        self._assemble()

    def _fast_angle_possible(self):
        dom = self.domain
        if not dom.axes or dom.axes[-1].kind != "periodic":
            return False
        fields = [dom.W] + dom.A + [np.asarray(self.V1)]
        return all(np.allclose(f, f[..., :1], atol=1e-13) for f in fields)

    def _assemble(self):
        if self.fast:
            self._assemble_fast()
            return
        dom = self.domain
        shape = dom.shape
        N = int(np.prod(shape))
        gid = np.arange(N).reshape(shape)
        rows, cols, vals = [], [], []
        diag = np.zeros(shape)
        self._bnd_cells = []
        self._bnd_rows = []
        self._bnd_vals = []

        def add(rsel, csel, v):
            rows.append(gid[rsel].ravel())
            cols.append(gid[csel].ravel())
            vals.append(np.broadcast_to(v, gid[rsel].shape).ravel())

        lam = self.lam
        for j, ax in enumerate(dom.axes):
            A = dom.A[j]
            sl_lo = (slice(None),) * j + (slice(0, -1),)
            sl_hi = (slice(None),) * j + (slice(1, None),)
            a_face = 0.5 * (A[sl_lo] + A[sl_hi]) / ax.h ** 2
            # conjugation: row at x_i sees the neighbor value times
            # e^{lam (x_j - x_i)}; only the x0 axis carries the factor
            up = np.exp(lam * ax.h) if (j == 0 and lam != 0.0) else 1.0
            dn = np.exp(-lam * ax.h) if (j == 0 and lam != 0.0) else 1.0
            add(sl_lo, sl_hi, -a_face * up)
            add(sl_hi, sl_lo, -a_face * dn)
            diag[sl_lo] += a_face
            diag[sl_hi] += a_face
            lo = (slice(None),) * j + (0,)
            hi = (slice(None),) * j + (-1,)
            if ax.kind == "periodic":
                a_wrap = 0.5 * (A[hi] + A[lo]) / ax.h ** 2
                add(lo, hi, -a_wrap)
                add(hi, lo, -a_wrap)
                diag[lo] += a_wrap
                diag[hi] += a_wrap
            elif ax.kind == "cell":
                for side, active in ((0, ax.dirichlet_lo),
                                     (1, ax.dirichlet_hi)):
                    if not active:
                        continue
                    coords, _, gjj = dom.face_info(j, side)
                    dm = dom.metric_at(coords)
                    a_bnd = (np.sqrt(np.prod(dm, axis=0)) / dm[j]) \
                        / (0.5 * ax.h ** 2)
                    cell = lo if side == 0 else hi
                    diag[cell] += a_bnd
                    self._bnd_cells.append((j, side))
                    self._bnd_rows.append(gid[cell].ravel())
                    self._bnd_vals.append(-a_bnd.ravel())

        diag = diag / dom.W + np.real_if_close(self.V1) * 1.0
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        Wflat = dom.W.ravel()
        vals = (np.concatenate(vals) / Wflat[rows]).astype(complex)
        if np.iscomplexobj(self.V1):
            diag = diag.astype(complex) + (self.V1 - np.real_if_close(self.V1))
        Afull = sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
        Afull = Afull + sp.diags(np.ravel(diag).astype(complex))

        keep = dom.interior.ravel()
        self._keep = keep
        self._A_ii = Afull[keep][:, keep].tocsc()
        self._A_ib = Afull[keep][:, ~keep].tocsr()
        try:
            self._lu = splu(self._A_ii)
        except RuntimeError as exc:
            raise DirichletEigenvalue(str(exc))
        du = np.abs(self._lu.U.diagonal())
        if du.min() < 1e-12 * du.max():
            raise DirichletEigenvalue("pivot collapse: zero is a Dirichlet "
                                      "eigenvalue within resolution")

    def _assemble_fast(self):
        dom = self.domain
        nphi = dom.axes[-1].n
        hphi = dom.axes[-1].h
        sub = ProductDomain(dom.axes[:-1])
        sub.W = dom.W[..., 0]
        sub.A = [A[..., 0] for A in dom.A[:-1]]
        self._sub = sub
        self._nphi = nphi
        ks = np.arange(nphi)
        symbols = (2.0 * np.cos(2.0 * np.pi * ks / nphi) - 2.0) / hphi ** 2
        aphi = dom.A[-1][..., 0] / dom.W[..., 0]
        V2d = np.asarray(self.V1)[..., 0]
        self._subsolvers = [
            SchrodingerSolver(sub, V1_field=V2d - symbols[k] * aphi,
                              lam=self.lam, fast_angle=False)
            for k in range(nphi)]

    # -- boundary data ------------------------------------------------------

    def _eval_bdata(self, bdata):
        """Node-face full-grid values and per-cell-face arrays."""
        dom = self.domain
        node_full = np.zeros(dom.shape, dtype=complex)
        mask = ~dom.interior
        if np.any(mask):
            x0, xp = dom.points()
            vals = np.asarray(bdata(x0, xp), dtype=complex)
            node_full[mask] = np.broadcast_to(vals, dom.shape)[mask]
        cell = {}
        for (j, side) in dom.cell_faces:
            x0f, xpf = dom.face_points(j, side)
            cell[(j, side)] = np.asarray(bdata(x0f, xpf), dtype=complex)
        return node_full, cell

    # -- solving ------------------------------------------------------------

    def solve(self, F=None, bdata=None):
        """Solve with interior source ``F`` and Dirichlet datum ``bdata``
        (a callable of (x0, xp)); returns the full-grid solution."""
        dom = self.domain
        if self.fast:
            Ff = np.zeros(dom.shape, dtype=complex) if F is None \
                else np.asarray(F, dtype=complex)
            Fk = np.fft.fft(Ff, axis=-1)
            if bdata is not None:
                node_full, cell = self._eval_bdata(bdata)
                node_k = np.fft.fft(node_full, axis=-1)
                cell_k = {key: np.fft.fft(v, axis=-1) for key, v in cell.items()}
            out = np.empty(dom.shape, dtype=complex)
            for k in range(self._nphi):
                if bdata is None:
                    out[..., k] = self._subsolvers[k]._solve_values(
                        Fk[..., k], None, None)
                else:
                    out[..., k] = self._subsolvers[k]._solve_values(
                        Fk[..., k], node_k[..., k],
                        {key: v[..., k] for key, v in cell_k.items()})
            return np.fft.ifft(out, axis=-1)
        if bdata is None:
            return self._solve_values(F, None, None)
        node_full, cell = self._eval_bdata(bdata)
        return self._solve_values(F, node_full, cell)

    def _solve_values(self, F, node_full, cell):
        dom = self.domain
        shape = dom.shape
        u_full = np.zeros(shape, dtype=complex)
        rhs_full = np.zeros(shape, dtype=complex)
        if F is not None:
            rhs_full += F
        rhs = rhs_full[dom.interior]
        if node_full is not None:
            u_full[~dom.interior] = node_full[~dom.interior]
            rhs = rhs - self._A_ib @ u_full[~dom.interior]
        if cell:
            N = int(np.prod(shape))
            W = dom.W.ravel()
            for (j, side), rows_g, vals in zip(self._bnd_cells,
                                               self._bnd_rows,
                                               self._bnd_vals):
                fv = cell.get((j, side))
                if fv is None:
                    continue
                contrib = np.zeros(N, dtype=complex)
                contrib[rows_g] = vals * np.ravel(fv) / W[rows_g]
                rhs = rhs - contrib.reshape(shape)[dom.interior]
        u_full[dom.interior] = self._lu.solve(np.ascontiguousarray(rhs))
        return u_full

    def apply(self, u_full, bdata=None):
        """Discrete operator applied to a full-grid field (interior rows)."""
        dom = self.domain
        if self.fast:
            uk = np.fft.fft(np.asarray(u_full, dtype=complex), axis=-1)
            if bdata is not None:
                node_full, cell = self._eval_bdata(bdata)
                cell_k = {key: np.fft.fft(v, axis=-1) for key, v in cell.items()}
            out = np.empty(dom.shape, dtype=complex)
            for k in range(self._nphi):
                sub_cell = None if bdata is None else \
                    {key: v[..., k] for key, v in cell_k.items()}
                out[..., k] = self._subsolvers[k]._apply_values(uk[..., k],
                                                                sub_cell)
            return np.fft.ifft(out, axis=-1)
        cell = None
        if bdata is not None:
            _, cell = self._eval_bdata(bdata)
        return self._apply_values(u_full, cell)

    def _apply_values(self, u_full, cell):
        dom = self.domain
        N = int(np.prod(dom.shape))
        keep = self._keep
        uflat = np.asarray(u_full, dtype=complex).ravel()
        out = np.zeros(N, dtype=complex)
        out[keep] = self._A_ii @ uflat[keep] + self._A_ib @ uflat[~keep]
        res = out.reshape(dom.shape)
        if cell:
            W = dom.W.ravel()
            for (j, side), rows_g, vals in zip(self._bnd_cells,
                                               self._bnd_rows,
                                               self._bnd_vals):
                fv = cell.get((j, side))
                if fv is None:
                    continue
                add = np.zeros(N, dtype=complex)
                add[rows_g] = vals * np.ravel(fv) / W[rows_g]
                res = res + add.reshape(dom.shape)
        return res


# ---------------------------------------------------------------------------
# DN records
# ---------------------------------------------------------------------------

@dataclass
class DNRecord:
    face: tuple
    f: np.ndarray
    dn: np.ndarray
    measure: np.ndarray
    iterations: int = 0

    def to_csv_rows(self):
        fr, dr = np.ravel(self.f), np.ravel(self.dn)
        return [(str(self.face[0]), int(self.face[1]), i,
                 fr[i].real, fr[i].imag, dr[i].real, dr[i].imag)
                for i in range(fr.size)]


def normal_derivative(domain, u_full, j, side, bvals=None):
    """Outward normal derivative on a Dirichlet face (3-point one-sided)."""
    ax = domain.axes[j]
    _, ds, gjj = domain.face_info(j, side)
    scale = 1.0 / np.sqrt(gjj)
    take = lambda k: np.take(u_full, k, axis=j)
    h = ax.h
    if ax.kind == "node":
        if side == 0:
            d = -(-3 * take(0) + 4 * take(1) - take(2)) / (2 * h)
        else:
            d = (3 * take(-1) - 4 * take(-2) + take(-3)) / (2 * h)
    else:
        ub = 0.0 if bvals is None else bvals
        if side == 1:
            d = (8.0 * ub - 9.0 * take(-1) + take(-2)) / (3.0 * h)
        else:
            d = -(8.0 * ub - 9.0 * take(0) + take(1)) / (3.0 * h)
    return d * scale, ds


def dn_map(solver, V, f, r0=0.5):
    """DN records of the semilinear solution for a boundary datum."""
    u, info = solve_semilinear(solver, V, f, r0=r0)
    dom = solver.domain
    records = []
    for (j, side) in dirichlet_faces(dom):
        x0f, xpf = dom.face_points(j, side)
        fv = np.asarray(f(x0f, xpf), dtype=complex)
        d, ds = normal_derivative(dom, u, j, side, bvals=fv)
        records.append(DNRecord(face=(dom.axes[j].name, side), f=fv, dn=d,
                                measure=ds, iterations=info["iterations"]))
    return u, records


# ---------------------------------------------------------------------------
# semilinear fixed point
# ---------------------------------------------------------------------------

def solve_semilinear(solver, V, f, r0=0.5, tol=1e-12, maxit=80):
    """Picard iteration around the linear solve for small Dirichlet data.

    Returns (u_full, info) with the contraction history recorded.
    """
    dom = solver.domain
    x0, xp = dom.points()
    if callable(f):
        fvals = np.asarray(f(x0, xp))
        fmax = float(np.max(np.abs(fvals)))
    else:
        fmax = float(np.max(np.abs(f)))
    if fmax > r0:
        raise SmallDataViolated(f"datum sup-norm {fmax:.3g} exceeds r0 = {r0}")
    base = solver.solve(bdata=f)
    scale = max(float(np.max(np.abs(base))), 1e-300)
    u_t = np.zeros_like(base)
    history = []
    prev = np.inf
    it = 0
    for it in range(1, maxit + 1):
        src = -np.asarray(V.tilde_value(x0, xp, base + u_t))
        new = solver.solve(F=src)
        delta = float(np.max(np.abs(new - u_t)))
        history.append(delta)
        u_t = new
        if delta <= tol * scale:
            break
        if it > 3 and delta > 1.5 * prev:
            raise ContractionFailure("fixed point iterates diverge")
        prev = delta
    else:
        raise ContractionFailure("fixed point did not reach tolerance")
    ratios = [history[i + 1] / history[i]
              for i in range(len(history) - 1) if history[i] > 0]
    info = {"iterations": it, "deltas": history,
            "contraction": float(max(ratios)) if ratios else 0.0,
            "sup_ratio": float(np.max(np.abs(base + u_t)) / max(fmax, 1e-300))}
    return base + u_t, info


def complex_step_first(solver, V, f, h=1e-8, r0=0.5):
    """First derivative of the solution map by an imaginary datum step."""
    fi = lambda x0, xp: 1j * h * np.asarray(f(x0, xp))
    u, _ = solve_semilinear(solver, V, fi, r0=r0)
    return np.imag(u) / h


# ---------------------------------------------------------------------------
# linearization cascade
# ---------------------------------------------------------------------------

def linearize_divided_difference(solver, V, fs, beta, h=1e-3, r0=0.5,
                                 richardson=False):
    """Mixed centered divided differences of the solution map at zero data."""
    beta = tuple(int(b) for b in beta)
    if sum(beta) < 1 or max(beta) > 3:
        raise ValueError("multi-index entries must be between 0 and 3")

    def solve_at(eps):
        def fcomb(x0, xp):
            out = None
            for e, fk in zip(eps, fs):
                if e == 0.0:
                    continue
                term = e * np.asarray(fk(x0, xp))
                out = term if out is None else out + term
            if out is None:
                x0a = np.asarray(x0)
                return np.zeros(np.broadcast(x0a,
                                             np.asarray(xp)[..., 0]).shape)
            return out
        u, _ = solve_semilinear(solver, V, fcomb, r0=r0)
        return u

    def stencil(b, hstep):
        if b == 0:
            return [(0.0, 1.0)]
        if b == 1:
            return [(hstep, 0.5 / hstep), (-hstep, -0.5 / hstep)]
        if b == 2:
            return [(hstep, 1.0 / hstep ** 2), (0.0, -2.0 / hstep ** 2),
                    (-hstep, 1.0 / hstep ** 2)]
        return [(2 * hstep, 0.5 / hstep ** 3), (hstep, -1.0 / hstep ** 3),
                (-hstep, 1.0 / hstep ** 3), (-2 * hstep, -0.5 / hstep ** 3)]

    def diff(hstep):
        total = None
        for combo in itertools.product(*[stencil(b, hstep) for b in beta]):
            eps = [c[0] for c in combo]
            wgt = float(np.prod([c[1] for c in combo]))
            term = wgt * solve_at(eps)
            total = term if total is None else total + term
        return total

    if not richardson:
        return diff(h)
    return (4.0 * diff(h / 2) - diff(h)) / 3.0


def _set_partitions(items, nblocks):
    items = list(items)
    if nblocks == 1:
        yield [items]
        return
    if len(items) < nblocks:
        return
    if len(items) == nblocks:
        yield [[x] for x in items]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest, nblocks - 1):
        yield [[first]] + part
    for part in _set_partitions(rest, nblocks):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def direct_hierarchy_solve(solver, V, fs):
    """Top multilinear interaction term and its lower-order companion.

    Returns (L, H, w): ``P L = V_m prod_k (G f_k) + H`` with zero trace,
    ``w`` maps frozensets of datum slots to cascade solutions.  For two data
    the companion vanishes identically.
    """
    m = len(fs)
    dom = solver.domain
    x0, xp = dom.points()
    w = {frozenset([i]): solver.solve(bdata=fk) for i, fk in enumerate(fs)}
    Vk_fields = {k: np.asarray(V.eval_k(k, x0, xp))
                 for k in range(2, m + 1) if k in V.coeffs}

    for size in range(2, m + 1):
        for subset in itertools.combinations(range(m), size):
            rhs = np.zeros(dom.shape, dtype=complex)
            for k in range(2, size + 1):
                if k not in Vk_fields:
                    continue
                acc = np.zeros(dom.shape, dtype=complex)
                for part in _set_partitions(list(subset), k):
                    term = np.ones(dom.shape, dtype=complex)
                    for block in part:
                        term = term * w[frozenset(block)]
                    acc += term
                rhs -= Vk_fields[k] * acc
            w[frozenset(subset)] = solver.solve(F=rhs)

    L = -w[frozenset(range(m))]
    H = np.zeros(dom.shape, dtype=complex)
    for k in range(2, m):
        if k not in Vk_fields:
            continue
        acc = np.zeros(dom.shape, dtype=complex)
        for part in _set_partitions(list(range(m)), k):
            term = np.ones(dom.shape, dtype=complex)
            for block in part:
                term = term * w[frozenset(block)]
            acc += term
        H += Vk_fields[k] * acc
    return L, H, w


# ---------------------------------------------------------------------------
# pairings and auxiliary solutions
# ---------------------------------------------------------------------------

def greens_pairing(domain, w_full, w_bdata, L_full, rhs):
    """Boundary and volume forms of the pairing of a homogeneous solution
    with a zero-trace solution, and their discrepancy.

    boundary = -sum_faces w dnu(L) dS (+ terms with L's trace, which vanish);
    volume   = integral of w * rhs.
    """
    boundary = 0.0 + 0.0j
    for (j, side) in dirichlet_faces(domain):
        dL, ds = normal_derivative(domain, L_full, j, side, bvals=0.0)
        x0f, xpf = domain.face_points(j, side)
        wb = np.asarray(w_bdata(x0f, xpf), dtype=complex)
        boundary += -np.sum(wb * dL * ds)
    volume = complex(np.sum(domain.quad * w_full * rhs))
    return boundary, volume, abs(boundary - volume)


def nonvanishing_solution(solver, p_index, threshold=1e-8):
    """Homogeneous solution with |W(p)| maximal over a small datum dictionary."""
    def const(x0, xp):
        return np.ones(np.broadcast(np.asarray(x0),
                                    np.asarray(xp)[..., 0]).shape)

    def trig(freq, which):
        def fn(x0, xp):
            osc = np.cos(freq * np.asarray(x0)) if which == 0 \
                else np.sin(freq * np.asarray(x0))
            return (1.0 + 0.3 * osc) * const(x0, xp)
        return fn

    cands = [const, trig(1.0, 0), trig(1.0, 1), trig(2.0, 0), trig(2.0, 1)]
    best, best_val = None, 0.0
    for fn in cands:
        Wp = solver.solve(bdata=fn)
        val = abs(Wp[tuple(p_index)])
        if val > best_val:
            best, best_val = Wp, val
    if best_val < threshold:
        raise SearchFailed("no dictionary datum achieves a nonvanishing value")
    return best
