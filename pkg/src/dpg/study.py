"""Manufactured solutions, error measurement and convergence studies."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .extensions import (
    div_extensions,
    grad_extensions,
    interpolate_flux,
    interpolate_trace,
    raviart_thomas,
    skeleton_gram,
    _flux_constraints,
    _minimize_affine,
    _trace_restriction,
)
from .forms import ComplianceTensor, local_forms
from .mesh import Mesh, refine_uniform, unit_square_mesh
from .refelem import quadrature_rule, scalar_gradients, scalar_values
from .spaces import TestLayout, TrialDofMap, build_test_layout, build_trial_space
from .system import LinearSystem, assemble, condition_estimate, solve_spd
from .t2t import ElementOperators, local_residual_norms, trial_to_test_local

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


# {{{ manufactured solutions

@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form exact solution.  Callables take points of shape (..., 2).

    Poisson: sigma = -grad u and f = div sigma, so -lap u = f.
    Elasticity: A sigma = eps(u), f = -div sigma, sigma stored row-major
    with shape (..., 4), u with shape (..., 2).
    """

    name: str
    kind: str
    u: Field
    grad_u: Field
    sigma: Field
    div_sigma: Field
    f: Field
    mu: float = 1.0
    lam: float = 1.0

    def trace(self, x):
        return self.u(x)

    def flux(self, x, normal):
        """sigma n at facet points with the given normals (..., 2)."""
        s = self.sigma(x)
        if self.kind == "poisson":
            return np.einsum("...c,...c->...", s, normal)
        s = s.reshape(s.shape[:-1] + (2, 2))
        return np.einsum("...ab,...b->...a", s, normal)

    def compliance(self, n_elements: int) -> ComplianceTensor | None:
        if self.kind != "elasticity":
            return None
        return ComplianceTensor.isotropic(self.mu, self.lam, n_elements)


def poisson_sine() -> ManufacturedSolution:
    pi = np.pi

    def u(X):
        return np.sin(pi * X[..., 0]) * np.sin(pi * X[..., 1])

    def grad_u(X):
        x, y = X[..., 0], X[..., 1]
        return pi * np.stack([np.cos(pi * x) * np.sin(pi * y),
                              np.sin(pi * x) * np.cos(pi * y)], -1)

    return ManufacturedSolution(
        "poisson-sine", "poisson", u, grad_u,
        sigma=lambda X: -grad_u(X),
        div_sigma=lambda X: 2 * pi ** 2 * u(X),
        f=lambda X: 2 * pi ** 2 * u(X))


def poisson_cubic_bubble() -> ManufacturedSolution:
    """u = xy(1-x-y): zero on the boundary of the reference triangle."""

    def u(X):
        x, y = X[..., 0], X[..., 1]
        return x * y * (1 - x - y)

    def grad_u(X):
        x, y = X[..., 0], X[..., 1]
        return np.stack([y - 2 * x * y - y * y, x - x * x - 2 * x * y], -1)

    f = lambda X: 2 * X[..., 0] + 2 * X[..., 1]
    return ManufacturedSolution("poisson-cubic-bubble", "poisson", u, grad_u,
                                sigma=lambda X: -grad_u(X), div_sigma=f, f=f)


def _elasticity_from(name, parts, mu, lam) -> ManufacturedSolution:
    """``parts(X)`` returns u (...,2), grad u (...,2,2) and the Hessians
    (...,2,2,2) with H[a, i, j] = d_i d_j u_a."""

    def stress(X):
        _, G, _ = parts(X)
        eps = 0.5 * (G + np.swapaxes(G, -1, -2))
        tr = eps[..., 0, 0] + eps[..., 1, 1]
        s = 2 * mu * eps + lam * tr[..., None, None] * np.eye(2)
        return s.reshape(s.shape[:-2] + (4,))

    def div_stress(X):
        _, _, H = parts(X)
        # div sigma_a = mu lap u_a + (mu + lam) d_a div u
        lap = H[..., 0, 0] + H[..., 1, 1]
        grad_div = H[..., 0, :, 0] + H[..., 1, :, 1]
        return mu * lap + (mu + lam) * grad_div

    return ManufacturedSolution(
        name, "elasticity",
        u=lambda X: parts(X)[0],
        grad_u=lambda X: parts(X)[1],
        sigma=stress, div_sigma=div_stress,
        f=lambda X: -div_stress(X), mu=mu, lam=lam)


def elasticity_smooth(mu: float = 1.0, lam: float = 1.0) -> ManufacturedSolution:
    """u = (sin(pi x) sin(pi y), x(1-x) y(1-y))."""
    pi = np.pi

    def parts(X):
        x, y = X[..., 0], X[..., 1]
        sx, cx, sy, cy = np.sin(pi * x), np.cos(pi * x), np.sin(pi * y), np.cos(pi * y)
        u = np.stack([sx * sy, x * (1 - x) * y * (1 - y)], -1)
        G = np.stack([
            np.stack([pi * cx * sy, pi * sx * cy], -1),
            np.stack([(1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y)], -1)], -2)
        H0 = pi ** 2 * np.stack([np.stack([-sx * sy, cx * cy], -1),
                                 np.stack([cx * cy, -sx * sy], -1)], -2)
        H1 = np.stack([np.stack([-2 * y * (1 - y), (1 - 2 * x) * (1 - 2 * y)], -1),
                       np.stack([(1 - 2 * x) * (1 - 2 * y), -2 * x * (1 - x)], -1)], -2)
        return u, G, np.stack([H0, H1], -3)

    return _elasticity_from("elasticity-smooth", parts, mu, lam)


def elasticity_cubic_bubble(mu: float = 1.0, lam: float = 1.0) -> ManufacturedSolution:
    """u = (b, -b) with the cubic bubble b = xy(1-x-y).

    Vanishes on the reference triangle boundary; for p >= 3 the exact
    stress (quadratic) and displacement lie in the discrete spaces.
    """

    def parts(X):
        x, y = X[..., 0], X[..., 1]
        b = x * y * (1 - x - y)
        bx = y - 2 * x * y - y * y
        by = x - x * x - 2 * x * y
        bxx, byy, bxy = -2 * y, -2 * x, 1 - 2 * x - 2 * y
        u = np.stack([b, -b], -1)
        g = np.stack([bx, by], -1)
        G = np.stack([g, -g], -2)
        Hb = np.stack([np.stack([bxx, bxy], -1), np.stack([bxy, byy], -1)], -2)
        return u, G, np.stack([Hb, -Hb], -3)

    return _elasticity_from("elasticity-cubic-bubble", parts, mu, lam)


SOLUTIONS = {
    "poisson": poisson_sine,
    "elasticity": elasticity_smooth,
}

# }}}


# {{{ discretization and solve

@dataclass
class Discretization:
    mesh: Mesh
    dofmap: TrialDofMap
    test: TestLayout
    ops: ElementOperators
    system: LinearSystem
    compliance: ComplianceTensor | None = None
    x: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.dofmap.p

    @property
    def kind(self) -> str:
        return self.dofmap.kind

    def full_vector(self, x: np.ndarray | None = None) -> np.ndarray:
        x = self.x if x is None else x
        full = np.zeros(self.dofmap.n_full)
        full[~self.dofmap.constrained] = x
        return full

    def local(self, x: np.ndarray | None = None) -> np.ndarray:
        return self.full_vector(x)[self.dofmap.elem_dofs]


def discretize(m: Mesh, p: int, kind: str, solution: ManufacturedSolution | None = None,
               mode: str = "uniform", r: int | None = None,
               compliance: ComplianceTensor | None = None,
               validate: bool = True) -> Discretization:
    dofmap = build_trial_space(m, p, kind)
    test = build_test_layout(m, p, mode=mode, r=r, kind=kind, validate=validate)
    if kind == "elasticity" and compliance is None:
        compliance = (solution.compliance(m.n_elements) if solution is not None
                      else ComplianceTensor.isotropic(1.0, 1.0, m.n_elements))
    f = solution.f if solution is not None else None
    blocks, gram = local_forms(m, dofmap, test, f, compliance)
    ops = trial_to_test_local(gram, blocks)
    return Discretization(m, dofmap, test, ops, assemble(dofmap, ops), compliance)


def solve(d: Discretization, method: str = "chol", tol: float = 1e-12) -> np.ndarray:
    d.x = solve_spd(d.system, method=method, tol=tol)
    return d.x

# }}}


# {{{ error measurement

def _field_values(d: Discretization, loc: np.ndarray, points: np.ndarray):
    p = d.p
    phi = scalar_values(p, points)
    npoly = phi.shape[0]
    cs, cu, _ = d.dofmap.components
    sig = np.stack([loc[:, a * npoly:(a + 1) * npoly] @ phi for a in range(cs)], -1)
    o = cs * npoly
    u = np.stack([loc[:, o + a * npoly:o + (a + 1) * npoly] @ phi for a in range(cu)], -1)
    return sig, u


def _l2(values: np.ndarray, m: Mesh, weights: np.ndarray) -> float:
    v = values.reshape(values.shape[0], values.shape[1], -1)
    return float(np.sqrt(np.sum(m.dets[:, None, None] * weights[:, None] * v ** 2)))


def field_errors(d: Discretization, sol: ManufacturedSolution,
                 qdeg: int | None = None) -> tuple[float, float]:
    rule = quadrature_rule(qdeg or 2 * d.p + 12)
    X = d.mesh.map_points(np.arange(d.mesh.n_elements), rule.points)
    sig_h, u_h = _field_values(d, d.local(), rule.points)
    u_ex = sol.u(X).reshape(u_h.shape)
    return (_l2(sol.sigma(X) - sig_h, d.mesh, rule.weights),
            _l2(u_ex - u_h, d.mesh, rule.weights))


def interpolant_vector(d: Discretization, sol: ManufacturedSolution) -> np.ndarray:
    """Full DOF vector holding the skeleton interpolants of the exact trace and
    flux (field blocks zero)."""
    dm, m, p = d.dofmap, d.mesh, d.p
    _, cu, ct = dm.components
    out = np.zeros(dm.n_full)
    v0, e0 = dm.ranges["vertex"][0], dm.ranges["edge"][0]
    f0 = dm.ranges["flux"][0]
    nv, nf = m.n_vertices, m.n_facets
    for c in range(ct):
        comp = (lambda X, c=c: sol.u(X)) if ct == 1 else (lambda X, c=c: sol.u(X)[..., c])
        tr = interpolate_trace(m, p, comp)
        out[v0 + np.arange(nv) * ct + c] = tr[:nv]
        if p:
            idx = e0 + ((np.arange(nf) * ct + c)[:, None] * p + np.arange(p))
            out[idx.ravel()] = tr[nv:]
        if ct == 1:
            row = sol.sigma
        else:
            row = lambda X, c=c: sol.sigma(X)[..., 2 * c:2 * c + 2]
        fl = interpolate_flux(m, p, row)
        idx = f0 + ((np.arange(nf) * ct + c)[:, None] * (p + 1) + np.arange(p + 1))
        out[idx.ravel()] = fl.ravel()
    return out


@dataclass(frozen=True)
class SkeletonNorms:
    """Extension maps and per-element Grams for the discrete skeleton norms."""

    grad: object
    div: object

    @classmethod
    def build(cls, m: Mesh, p: int, method: str = "kkt") -> "SkeletonNorms":
        return cls(grad_extensions(m, p, method), div_extensions(m, p, method))


def _skeleton_local(d: Discretization, full: np.ndarray):
    """Local trace data per component (nt, ct, nc) and signed flux data."""
    loc = full[d.dofmap.elem_dofs]
    sl = d.dofmap.local_slices
    _, _, ct = d.dofmap.components
    p = d.p
    nc, nd = 3 + 3 * p, 3 * (p + 1)
    tr = loc[:, sl["trace"]].reshape(-1, ct, nc)
    sgn = np.repeat(d.mesh.elem_facet_sign, p + 1, axis=1)
    fl = loc[:, sl["flux"]].reshape(-1, ct, nd) * sgn[:, None, :]
    return tr, fl


def exact_trace_errors(d: Discretization, sol: ManufacturedSolution,
                       norms: SkeletonNorms | None = None) -> tuple[float, float]:
    """Discrete H^{1/2} trace and H^{-1/2} flux errors between the skeleton
    interpolants of the exact solution and the computed skeleton unknowns."""
    norms = norms or SkeletonNorms.build(d.mesh, d.p)
    diff = interpolant_vector(d, sol) - d.full_vector()
    tr, fl = _skeleton_local(d, diff)
    et = sum(norms.grad.norms_squared(tr[:, c]).sum() for c in range(tr.shape[1]))
    ef = sum(norms.div.norms_squared(fl[:, c]).sum() for c in range(fl.shape[1]))
    return float(np.sqrt(max(et, 0.0))), float(np.sqrt(max(ef, 0.0)))


def residual_indicator(d: Discretization) -> tuple[float, np.ndarray]:
    """eta^2 = sum_K ||Riesz lift of l - b(u_h, .)||_V^2 (plus the global
    beta component for elasticity).  Returns (eta, per-element eta_K^2)."""
    loc = d.local()
    eta_k = local_residual_norms(d.ops, loc)
    total = eta_k.sum()
    if d.ops.beta_row is not None:
        total += float(np.einsum("ki,ki->", d.ops.beta_row, loc)) ** 2
    return float(np.sqrt(max(total, 0.0))), eta_k

# }}}


# {{{ quasioptimality

def _interpolation_errors(d: Discretization, sol: ManufacturedSolution):
    """Element-wise constrained projections bounding the trace and flux
    interpolation errors:  ||u - I u||_{H^1} with I u in P_{p+1}(K) taking the
    trace interpolant on dK, and ||sigma - I sigma||_{H(div)} with I sigma in
    RT_p(K) taking the flux interpolant."""
    m, p = d.mesh, d.p
    _, _, ct = d.dofmap.components
    rule = quadrature_rule(2 * p + 14)
    X = m.map_points(np.arange(m.n_elements), rule.points)
    w = rule.weights
    phi = scalar_values(p + 1, rule.points)
    dphi = scalar_gradients(p + 1, rule.points)
    J = np.linalg.inv(m.jacobians).transpose(0, 2, 1)
    det = m.dets
    tr, fl = _skeleton_local(d, interpolant_vector(d, sol))

    uval = sol.u(X).reshape(X.shape[:2] + (ct,))
    gval = sol.grad_u(X).reshape(X.shape[:2] + (ct, 2))
    sval = sol.sigma(X).reshape(X.shape[:2] + (ct, 2))
    dval = sol.div_sigma(X).reshape(X.shape[:2] + (ct,))

    RT = raviart_thomas(p)
    rt_vals = np.einsum("cim,ip->mcp", RT, phi)
    rt_div = np.einsum("cim,cip->mp", RT, dphi)
    eg = ed = 0.0
    M = (phi * w) @ phi.T
    for K in range(m.n_elements):
        C = _trace_restriction(p, tuple(bool(f) for f in m.elem_facet_flip[K]))
        pg = np.einsum("ac,cip->aip", J[K], dphi)           # physical gradients
        Hk = det[K] * (M + np.einsum("aip,ajp,p->ij", pg, pg, w))
        A = m.jacobians[K]
        qv = np.einsum("ab,mbp->map", A, rt_vals) / det[K]
        qd = rt_div / det[K]
        Hq = det[K] * (np.einsum("map,nap,p->mn", qv, qv, w) + (qd * w) @ qd.T)
        Cq = _flux_constraints(m, p, K)
        for c in range(ct):
            b = det[K] * (phi @ (w * uval[K, :, c])
                          + np.einsum("aip,pa,p->i", pg, gval[K, :, c], w))
            e = _minimize_affine(Hk, b, C, tr[K, c])
            ev = e @ phi
            eg_ = e @ pg                                     # (2, nq)
            eg += det[K] * np.sum(w * ((uval[K, :, c] - ev) ** 2
                                       + np.sum((gval[K, :, c] - eg_.T) ** 2, -1)))
            bq = det[K] * (np.einsum("map,pa,p->m", qv, sval[K, :, c], w)
                           + qd @ (w * dval[K, :, c]))
            q = _minimize_affine(Hq, bq, Cq, fl[K, c])
            qvals = np.einsum("m,map->pa", q, qv)
            ed += det[K] * np.sum(w * (np.sum((sval[K, :, c] - qvals) ** 2, -1)
                                       + (dval[K, :, c] - q @ qd) ** 2))
    return float(np.sqrt(eg)), float(np.sqrt(ed))


def _projection_errors(d: Discretization, sol: ManufacturedSolution):
    """L2 best-approximation errors of sigma and u in P_p."""
    m, p = d.mesh, d.p
    rule = quadrature_rule(2 * p + 12)
    X = m.map_points(np.arange(m.n_elements), rule.points)
    phi = scalar_values(p, rule.points)
    w = rule.weights
    out = []
    for fn in (sol.sigma, sol.u):
        v = fn(X)
        v = v.reshape(v.shape[:2] + (-1,))
        coef = np.einsum("kpc,ip,p->kic", v, phi, w)
        proj = np.einsum("kic,ip->kpc", coef, phi)
        out.append(_l2(v - proj, m, w))
    return tuple(out)


@dataclass(frozen=True)
class Quasioptimality:
    error: float
    best: float

    @property
    def ratio(self) -> float:
        return self.error / self.best if self.best > 0 else float("nan")


def quasioptimality_check(d: Discretization, sol: ManufacturedSolution,
                          norms: SkeletonNorms | None = None) -> Quasioptimality:
    """Discrete-norm error of the DPG solution against a best-approximation
    surrogate (L2 projections of the fields plus skeleton interpolants)."""
    es, eu = field_errors(d, sol)
    et, ef = exact_trace_errors(d, sol, norms)
    it, iflux = _interpolation_errors(d, sol)
    ps, pu = _projection_errors(d, sol)
    err = np.sqrt(es ** 2 + eu ** 2 + (it + et) ** 2 + (iflux + ef) ** 2)
    best = np.sqrt(ps ** 2 + pu ** 2 + it ** 2 + iflux ** 2)
    return Quasioptimality(float(err), float(best))

# }}}


# {{{ studies

CSV_COLUMNS = ("level", "h", "dofs", "err_sigma_L2", "err_u_L2", "err_trace_h12",
               "err_flux_hm12", "eta", "kappa", "rate_sigma", "rate_u")


@dataclass
class RateRow:
    level: int
    h: float
    dofs: int
    err_sigma: float
    err_u: float
    err_trace: float
    err_flux: float
    eta: float
    kappa: float
    quasiopt: float = float("nan")
    alpha: float = 0.0


def _rate(e0, e1, h0, h1):
    if e0 <= 0 or e1 <= 0:
        return float("nan")
    return float(np.log(e0 / e1) / np.log(h0 / h1))


def fit_slope(h, values) -> float:
    """Least-squares slope of log(values) against log(h)."""
    h, v = np.asarray(h, float), np.asarray(values, float)
    if len(h) < 2:
        raise ValueError("a slope needs at least two levels")
    return float(np.polyfit(np.log(h), np.log(v), 1)[0])


@dataclass
class RateTable:
    rows: list[RateRow] = field(default_factory=list)

    def pair_rates(self, attr: str) -> list[float]:
        r = self.rows
        return [_rate(getattr(a, attr), getattr(b, attr), a.h, b.h)
                for a, b in zip(r[:-1], r[1:])]

    def last_rate(self, attr: str) -> float:
        return self.pair_rates(attr)[-1]

    def fitted_rate(self, attr: str, last: int = 3) -> float:
        rows = self.rows[-last:]
        return fit_slope([r.h for r in rows], [getattr(r, attr) for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        rs, ru = self.pair_rates("err_sigma"), self.pair_rates("err_u")
        for i, r in enumerate(self.rows):
            rate_s = "" if i == 0 else f"{rs[i - 1]:.6f}"
            rate_u = "" if i == 0 else f"{ru[i - 1]:.6f}"
            vals = [str(r.level), f"{r.h:.12e}", str(r.dofs)] + [
                f"{v:.12e}" for v in (r.err_sigma, r.err_u, r.err_trace,
                                      r.err_flux, r.eta, r.kappa)] + [rate_s, rate_u]
            buf.write(",".join(vals) + "\n")
        return buf.getvalue()

    def plot_data(self, attr: str) -> str:
        return "".join(f"{np.log(r.h):.12e} {np.log(getattr(r, attr)):.12e}\n"
                       for r in self.rows if getattr(r, attr) > 0)


@dataclass(frozen=True)
class StudyConfig:
    kind: str = "poisson"
    p: int = 1
    r: int | None = None
    mode: str = "uniform"
    n: int = 2
    levels: int = 4
    solver: str = "chol"
    tol: float = 1e-12
    mesh: Mesh | None = None
    with_kappa: bool = True
    with_quasiopt: bool = False
    seed: int = 0


def mesh_levels(cfg: StudyConfig):
    m = cfg.mesh if cfg.mesh is not None else unit_square_mesh(cfg.n)
    for level in range(cfg.levels):
        yield level, m
        if level + 1 < cfg.levels:
            m = refine_uniform(m)


def convergence_study(cfg: StudyConfig, sol: ManufacturedSolution | None = None,
                      on_level: Callable | None = None) -> RateTable:
    sol = sol or SOLUTIONS[cfg.kind]()
    if cfg.levels < 1:
        raise ValueError("a convergence study needs at least one level")
    table = RateTable()
    for level, m in mesh_levels(cfg):
        d = discretize(m, cfg.p, cfg.kind, sol, mode=cfg.mode, r=cfg.r)
        solve(d, cfg.solver, cfg.tol)
        es, eu = field_errors(d, sol)
        norms = SkeletonNorms.build(m, cfg.p)
        et, ef = exact_trace_errors(d, sol, norms)
        eta, _ = residual_indicator(d)
        kappa = (condition_estimate(d.system, seed=cfg.seed).kappa
                 if cfg.with_kappa else float("nan"))
        row = RateRow(level, m.h_max, d.dofmap.n_free, es, eu, et, ef, eta, kappa)
        if cfg.kind == "elasticity":
            row.alpha = float(d.x[-1])
        if cfg.with_quasiopt:
            row.quasiopt = quasioptimality_check(d, sol, norms).ratio
        log.info("level %d h=%.4g dofs=%d err_sigma=%.4e err_u=%.4e",
                 level, row.h, row.dofs, es, eu)
        table.rows.append(row)
        if on_level is not None:
            on_level(d)
    return table


@dataclass(frozen=True)
class ConditionTable:
    h: tuple[float, ...]
    kappa: tuple[float, ...]
    lam_min: tuple[float, ...]
    lam_max: tuple[float, ...]

    @property
    def slope(self) -> float:
        return fit_slope(self.h, self.kappa)


def condition_study(cfg: StudyConfig) -> ConditionTable:
    if cfg.levels < 2:
        raise ValueError("condition study needs at least two levels to fit a slope")
    hs, ks, lmin, lmax = [], [], [], []
    for _, m in mesh_levels(cfg):
        d = discretize(m, cfg.p, cfg.kind, None, mode=cfg.mode, r=cfg.r)
        est = condition_estimate(d.system, seed=cfg.seed)
        hs.append(m.h_max)
        ks.append(est.kappa)
        lmin.append(est.lam_min)
        lmax.append(est.lam_max)
    return ConditionTable(tuple(hs), tuple(ks), tuple(lmin), tuple(lmax))

# }}}


# {{{ constants report

@dataclass
class ConstantsReport:
    entries: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        for k, v in self.entries.items():
            if isinstance(v, float):
                v = f"{v:.12e}"
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


def norm_equivalence(d: Discretization, samples: int = 64, seed: int = 0):
    """Sampled ratios ||T^r W||_V / ||W||_U over random W in U_h, and the
    extreme eigenvalues of the discrete U-Gram against the coefficient norm."""
    from .system import LinearSystem as _LS
    G = skeleton_gram(d.mesh, d.p, d.dofmap).tocsc()
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        w = rng.standard_normal(d.system.n)
        ratios.append(np.sqrt((w @ d.system.matvec(w)) / (w @ (G @ w))))
    est = condition_estimate(_LS(G, np.zeros(G.shape[0])), seed=seed)
    return (float(min(ratios)), float(max(ratios))), est.lam_min, est.lam_max


def constants_report(d: Discretization, table: RateTable | None = None,
                     c_pi: float | None = None, seed: int = 0) -> ConstantsReport:
    rep = ConstantsReport()
    (lo, hi), lam0, lam1 = norm_equivalence(d, seed=seed)
    est = condition_estimate(d.system, seed=seed)
    rep.entries["problem"] = d.kind
    rep.entries["p"] = d.p
    rep.entries["r"] = d.test.r
    rep.entries["h"] = d.mesh.h_max
    rep.entries["dofs"] = d.dofmap.n_free
    if c_pi is not None:
        rep.entries["c_pi_lower_bound"] = c_pi
    rep.entries["ratio_TW_over_W_min"] = lo
    rep.entries["ratio_TW_over_W_max"] = hi
    rep.entries["lambda_0_discrete"] = lam0
    rep.entries["lambda_1_discrete"] = lam1
    rep.entries["kappa_S"] = est.kappa
    rep.entries["lambda_min_S"] = est.lam_min
    rep.entries["lambda_max_S"] = est.lam_max
    if table is not None and len(table.rows) >= 2:
        rep.entries["slope_kappa"] = fit_slope([r.h for r in table.rows],
                                               [r.kappa for r in table.rows])
        rep.entries["rate_sigma_last"] = table.last_rate("err_sigma")
        rep.entries["rate_u_last"] = table.last_rate("err_u")
    return rep

# }}}
