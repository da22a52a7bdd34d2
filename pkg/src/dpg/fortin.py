"""Fortin operators on the reference triangle and their verification.

The solver never uses these operators.  They exist to check, at the
discrete level, the hypotheses the method relies on: moment identities,
unique solvability of the defining square systems, commutation with the
divergence, and b(W, V - Pi V) = 0 for every local trial function W.

Polynomials are coefficient vectors in the orthonormal reference basis
(component-major for vector and symmetric fields, symmetric fields in the
Frobenius-orthonormal frame).  Because the basis is nested, L2 moments
against P_q are plain coefficient selections.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, eigh, null_space, solve_triangular

from .extensions import raviart_thomas
from .forms import (
    SYM_MATS,
    ComplianceTensor,
    local_b_elasticity,
    local_b_poisson,
    local_gram_elasticity,
    local_gram_poisson,
)
from .mesh import Mesh, single_element_mesh
from .refelem import (
    FACET_LENGTHS,
    FACET_NORMALS,
    VERTICES,
    dim_p,
    facet_points,
    gauss_interval,
    legendre01,
    scalar_gradients,
    quadrature_rule,
    scalar_values,
    trace_basis,
    bubble_space_grad,
)
from .spaces import TestLayout, build_trial_space

DEFAULT_PROBE_DEGREE = 8
FORTIN_TOL = 1e-9
MOMENT_TOL = 1e-11
COMMUTE_TOL = 1e-10
SOLVABILITY_TOL = 1e-8


class FortinError(np.linalg.LinAlgError):
    pass


# {{{ reference moment matrices

def _select(q: int, d: int) -> np.ndarray:
    """Rows (v, phi_i) for phi_i in P_q, acting on P_d coefficients."""
    nq = dim_p(q) if q >= 0 else 0
    S = np.zeros((nq, dim_p(d)))
    k = min(nq, dim_p(d))
    S[:k, :k] = np.eye(k)
    return S


def _embed(d_from: int, d_to: int) -> np.ndarray:
    """Coefficient map P_{d_from} -> P_{d_to} (injection or truncation)."""
    return _select(d_from, d_to).T if d_to >= d_from else _select(d_to, d_from)


def _facet_rule(d: int):
    return gauss_interval(d + 2)


def _disc_facet_functions(p: int, t: np.ndarray) -> np.ndarray:
    """P_p(dK) basis orthonormal in L2(dK): (3, 3(p+1), nq) facet values."""
    out = np.zeros((3, 3 * (p + 1), len(t)))
    leg = legendre01(p, t)
    for k in range(3):
        out[k, k * (p + 1):(k + 1) * (p + 1)] = leg / np.sqrt(FACET_LENGTHS[k])
    return out


def _cont_facet_functions(p: int, t: np.ndarray) -> np.ndarray:
    """tilde-P_{p+1}(dK) basis, orthonormalized in L2(dK)."""
    tb = trace_basis(p)
    raw = np.stack([tb.continuous(k, t) for k in range(3)])
    tt, ww = gauss_interval(2 * p + 4)
    g = sum(FACET_LENGTHS[k] * (tb.continuous(k, tt) * ww) @ tb.continuous(k, tt).T
            for k in range(3))
    L = np.linalg.cholesky(g)
    return np.stack([solve_triangular(L, raw[k], lower=True) for k in range(3)])


def _facet_moments(d: int, mu: np.ndarray, t: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-facet pairings <phi_i, mu_j>_F for P_d modes phi_i; (3, n_mu, dim P_d)."""
    out = []
    for k in range(3):
        phi = scalar_values(d, facet_points(k, t))
        out.append(FACET_LENGTHS[k] * (mu[k] * w) @ phi.T)
    return np.stack(out)


def boundary_moments(d: int, p: int, which: str) -> np.ndarray:
    """<w, mu>_{dK} for w in P_d and mu in P_p(dK) ('disc') or
    tilde-P_{p+1}(dK) ('cont'); shape (n_mu, dim P_d)."""
    t, w = _facet_rule(d + p + 2)
    mu = _disc_facet_functions(p, t) if which == "disc" else _cont_facet_functions(p, t)
    return _facet_moments(d, mu, t, w).sum(axis=0)


def normal_moments(d: int, p: int, which: str) -> np.ndarray:
    """<tau.n, mu>_{dK} for vector tau in P_d; shape (n_mu, 2 dim P_d)."""
    t, w = _facet_rule(d + p + 2)
    mu = _disc_facet_functions(p, t) if which == "disc" else _cont_facet_functions(p, t)
    M = _facet_moments(d, mu, t, w)
    return np.hstack([np.einsum("k,kij->ij", FACET_NORMALS[:, b], M) for b in range(2)])


def sym_normal_moments(d: int, p: int, which: str) -> np.ndarray:
    """<(tau n)_a, mu>_{dK} for symmetric tau in P_d (frame coordinates);
    rows ordered (a, mu), shape (2 n_mu, 3 dim P_d)."""
    t, w = _facet_rule(d + p + 2)
    mu = _disc_facet_functions(p, t) if which == "disc" else _cont_facet_functions(p, t)
    M = _facet_moments(d, mu, t, w)
    rows = []
    for a in range(2):
        rows.append(np.hstack([
            np.einsum("k,kij->ij", SYM_MATS[m][a] @ FACET_NORMALS.T, M)
            for m in range(3)]))
    return np.vstack(rows)


def _perp_complement(p: int) -> np.ndarray:
    """Coefficients (in the orthonormal P_{p+1}(dK) basis) of the
    L2(dK)-orthogonal complement of tilde-P_{p+1}(dK) in P_{p+1}(dK)."""
    t, w = _facet_rule(2 * p + 4)
    disc = _disc_facet_functions(p + 1, t)
    cont = _cont_facet_functions(p, t)
    G = sum(FACET_LENGTHS[k] * (disc[k] * w) @ cont[k].T for k in range(3))
    return null_space(G.T)


def divergence_matrix(d: int) -> np.ndarray:
    """P_d vector coefficients -> P_d coefficients of the divergence."""
    rule = quadrature_rule(2 * d)
    phi = scalar_values(d, rule.points)
    dphi = scalar_gradients(d, rule.points)
    return np.hstack([(phi * rule.weights) @ dphi[c].T for c in range(2)])

# }}}


# {{{ operators

@dataclass(frozen=True)
class FortinOperator:
    """Reference-element operator from degree ``probe_degree`` coefficients
    to degree ``r`` coefficients (``ncomp`` component blocks)."""

    kind: str
    p: int
    r: int
    probe_degree: int
    ncomp: int
    matrix: np.ndarray
    target: np.ndarray
    system_matrix: np.ndarray | None = None
    singular_values: np.ndarray | None = None
    experimental: bool = False
    notes: str = ""

    @property
    def sigma_min(self) -> float:
        if self.singular_values is None:
            return float("nan")
        return float(self.singular_values.min())

    @property
    def solvable(self) -> bool:
        return self.sigma_min > SOLVABILITY_TOL

    def apply(self, coefs: np.ndarray) -> np.ndarray:
        return self.matrix @ coefs

    def embedded(self) -> np.ndarray:
        """Square matrix on degree-``probe_degree`` coefficients."""
        E = block_diag(*[_embed(self.r, self.probe_degree)] * self.ncomp)
        return E @ self.matrix


def _solve_square(M: np.ndarray, rhs: np.ndarray, kind: str):
    if M.shape[0] != M.shape[1]:
        raise FortinError(f"{kind}: defining system is {M.shape}, not square")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.min() <= SOLVABILITY_TOL * max(sv.max(), 1.0):
        raise FortinError(f"{kind}: singular defining system, singular values {sv}")
    return np.linalg.solve(M, rhs), sv


def _pi0_conditions(p: int, d: int) -> np.ndarray:
    rows = [boundary_moments(d, p, "disc")]
    if p >= 1:
        rows.insert(0, _select(p - 1, d))
    return np.vstack(rows)


def build_pi0(p: int, probe_degree: int = DEFAULT_PROBE_DEGREE) -> FortinOperator:
    """Interior/boundary moment projection into the vertex-vanishing
    polynomials of degree p + 2."""
    r = p + 2
    if probe_degree < r:
        raise ValueError("probe degree must be at least p + 2")
    N = bubble_space_grad(p).coefficients[:, 0, :].T
    M = _pi0_conditions(p, r) @ N
    sol, sv = _solve_square(M, _pi0_conditions(p, probe_degree), "pi0")
    return FortinOperator("pi0", p, r, probe_degree, 1, N @ sol, N, M, sv)


def build_pigrad(p: int, probe_degree: int = DEFAULT_PROBE_DEGREE) -> FortinOperator:
    """Pi^grad v = Pi^0 (v - mean v) + mean v."""
    pi0 = build_pi0(p, probe_degree)
    r = pi0.r
    E0 = np.zeros((dim_p(probe_degree), dim_p(probe_degree)))
    E0[0, 0] = 1.0   # mode 0 is the constant: coefficient of the mean
    mean_r = _embed(probe_degree, r) @ E0
    P = pi0.matrix @ (np.eye(dim_p(probe_degree)) - E0) + mean_r
    target = np.hstack([_embed(0, r), pi0.target])
    return FortinOperator("grad", p, r, probe_degree, 1, P, target,
                          pi0.system_matrix, pi0.singular_values)


def _div_conditions(p: int, d: int) -> np.ndarray:
    vol = block_diag(_select(p, d), _select(p, d))
    return np.vstack([vol, normal_moments(d, p, "cont")])


def build_pidiv(p: int, probe_degree: int = DEFAULT_PROBE_DEGREE) -> FortinOperator:
    """Projection into RT_{p+1} restricted by the orthogonal-complement
    normal-trace constraints; output in P_{p+2}(V) coefficients."""
    r = p + 2
    if probe_degree < r:
        raise ValueError("probe degree must be at least p + 2")
    RT = raviart_thomas(p + 1).reshape(2 * dim_p(r), -1)
    perp = _perp_complement(p)
    C = perp.T @ normal_moments(r, p + 1, "disc") @ RT
    Nb = RT @ null_space(C)
    M = _div_conditions(p, r) @ Nb
    sol, sv = _solve_square(M, _div_conditions(p, probe_degree), "div")
    return FortinOperator("div", p, r, probe_degree, 2, Nb @ sol, Nb, M, sv)


def _sym_vertex_constraints(d: int) -> np.ndarray:
    """n_a^T tau n_b = 0 at each vertex, a and b the facets meeting there."""
    vals = scalar_values(d, VERTICES)      # (n, 3)
    rows = []
    for j in range(3):
        na, nb = FACET_NORMALS[(j + 1) % 3], FACET_NORMALS[(j + 2) % 3]
        rows.append(np.concatenate([(na @ SYM_MATS[m] @ nb) * vals[:, j]
                                    for m in range(3)]))
    return np.array(rows)


def _sym_conditions(p: int, d: int) -> np.ndarray:
    vol = block_diag(*[_select(p, d)] * 3)
    return np.vstack([vol, sym_normal_moments(d, p, "cont")])


def build_pidiv_sym(p: int, probe_degree: int = DEFAULT_PROBE_DEGREE) -> FortinOperator:
    """Symmetric-matrix analog of ``build_pidiv`` (experimental in 2D).

    The candidate target space is P_{p+2}(K; S) with n_-^T tau n_+ = 0 at
    the vertices and (tau n) orthogonal to the complement of the continuous
    traces.  When the resulting square system is singular a minimum-norm
    least-squares candidate is returned and flagged.
    """
    r = p + 2
    if probe_degree < r:
        raise ValueError("probe degree must be at least p + 2")
    perp = _perp_complement(p)
    D = sym_normal_moments(r, p + 1, "disc")
    nmu = D.shape[0] // 2
    perp_rows = np.vstack([perp.T @ D[a * nmu:(a + 1) * nmu] for a in range(2)])
    C = np.vstack([_sym_vertex_constraints(r), perp_rows])
    Nb = null_space(C)
    M = _sym_conditions(p, r) @ Nb
    rhs = _sym_conditions(p, probe_degree)
    sv = np.linalg.svd(M, compute_uv=False)
    square = M.shape[0] == M.shape[1]
    if square and sv.min() > SOLVABILITY_TOL * max(sv.max(), 1.0):
        sol = np.linalg.solve(M, rhs)
        notes = "square system nonsingular"
    else:
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
        notes = f"system {M.shape} singular or non-square; least-squares candidate"
    return FortinOperator("div-sym", p, r, probe_degree, 3, Nb @ sol, Nb, M, sv,
                          experimental=True, notes=notes)


def build_piskew(p: int, probe_degree: int = DEFAULT_PROBE_DEGREE) -> FortinOperator:
    """L2 projection of skew-valued q onto P_p."""
    S = _select(p, probe_degree)
    return FortinOperator("skew-l2", p, p, probe_degree, 1, S, _embed(p, p))

# }}}


# {{{ physical maps

def _sym_frame_map(B: np.ndarray) -> np.ndarray:
    """Frame coordinates of tau -> B tau B^T."""
    return np.einsum("mij,ik,nkl,jl->mn", SYM_MATS, B, SYM_MATS, B)


def physical_div(P_ref: np.ndarray, A: np.ndarray, n: int) -> np.ndarray:
    """Piola-conjugated operator on physical coefficients."""
    return np.kron(A, np.eye(n)) @ P_ref @ np.kron(np.linalg.inv(A), np.eye(n))


def physical_div_sym(P_ref: np.ndarray, A: np.ndarray, n: int) -> np.ndarray:
    return (np.kron(_sym_frame_map(A), np.eye(n)) @ P_ref
            @ np.kron(_sym_frame_map(np.linalg.inv(A)), np.eye(n)))

# }}}


# {{{ verification

@dataclass
class FortinReport:
    kind: str
    p: int
    probe_degree: int
    residuals: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    c_pi: float | None = None
    experimental: bool = False
    notes: list = field(default_factory=list)

    def add(self, name: str, value: float, tol: float):
        self.residuals[name] = float(value)
        self.thresholds[name] = tol

    def failures(self) -> list[str]:
        out = [k for k, v in self.residuals.items()
               if not (np.isfinite(v) and v <= self.thresholds[k])]
        out += [f"solvability:{k}" for k, v in self.margins.items()
                if not v > SOLVABILITY_TOL]
        return out

    @property
    def passed(self) -> bool:
        return not self.failures()

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0

    def to_text(self) -> str:
        lines = [f"kind: {self.kind}", f"p: {self.p}",
                 f"probe_degree: {self.probe_degree}"]
        for k, v in self.residuals.items():
            lines.append(f"residual_{k}: {v:.3e} (tol {self.thresholds[k]:.0e})")
        for k, v in self.margins.items():
            lines.append(f"sigma_min_{k}: {v:.6e}")
        if self.c_pi is not None:
            lines.append(f"c_pi_lower_bound: {self.c_pi:.6e}")
        if self.experimental:
            lines.append("experimental: yes")
        for n in self.notes:
            lines.append(f"note: {n}")
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("kind,p,identity,residual,threshold,pass\n")
        for k, v in self.residuals.items():
            ok = np.isfinite(v) and v <= self.thresholds[k]
            buf.write(f"{self.kind},{self.p},{k},{v:.6e},{self.thresholds[k]:.0e},"
                      f"{int(ok)}\n")
        return buf.getvalue()


def _rel(R: np.ndarray, scale: float) -> float:
    return float(np.abs(R).max() / scale) if R.size else 0.0


def _probe_layout(kind: str, p: int, d: int) -> TestLayout:
    return TestLayout(kind, p, d, d, d if kind == "elasticity" else None)


def _probe_operator(kind: str, p: int, d: int, A: np.ndarray) -> np.ndarray:
    """Pi on the physical probe test space of an element with Jacobian A."""
    n = dim_p(d)
    grad = build_pigrad(p, d).embedded()
    if kind == "poisson":
        div = physical_div(build_pidiv(p, d).embedded(), A, n)
        return block_diag(div, grad)
    sym = physical_div_sym(build_pidiv_sym(p, d).embedded(), A, n)
    skew = _embed(p, d) @ build_piskew(p, d).matrix
    return block_diag(sym, grad, grad, skew)


def element_mesh(vertices=None) -> Mesh:
    if vertices is None:
        vertices = VERTICES
    return single_element_mesh(np.asarray(vertices, dtype=float))


def fortin_residual(kind: str, p: int, d: int = DEFAULT_PROBE_DEGREE,
                    vertices=None, seed: int = 0, trials: int = 16) -> tuple[float, float]:
    """max |b(W, V - Pi V)| / max |b(W, V)| over all local trial basis
    functions W, for V the full probe basis and for random probe draws."""
    m = element_mesh(vertices)
    trial = build_trial_space(m, p, kind)
    test = _probe_layout(kind, p, d)
    if kind == "poisson":
        B = local_b_poisson(m, trial, test).B[0]
    else:
        # Pi leaves the global test scalar beta untouched, so its
        # contribution (beta - beta) to the residual vanishes identically
        C = ComplianceTensor.isotropic(1.0, 1.0, 1)
        B = local_b_elasticity(m, trial, test, C).B[0]
    P = _probe_operator(kind, p, d, m.jacobians[0])
    R = (np.eye(P.shape[0]) - P).T @ B
    scale = np.abs(B).max()
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((P.shape[0], trials))
    res_rand = _rel((V - P @ V).T @ B, np.abs(V.T @ B).max())
    return _rel(R, scale), res_rand


def verify_fortin(kind: str, p: int, probe_degree: int = DEFAULT_PROBE_DEGREE,
                  vertices=None, seed: int = 0, trials: int = 16,
                  with_cpi: bool = True) -> FortinReport:
    d = probe_degree
    rep = FortinReport(kind, p, d)
    n = dim_p(d)

    grad = build_pigrad(p, d)
    pi0 = build_pi0(p, d)
    rep.margins["pi0"] = pi0.sigma_min
    eye = np.eye(n)
    cond0 = _pi0_conditions(p, d)
    scale = np.abs(cond0).max()
    rep.add("pi0_moments", _rel(cond0 @ (pi0.embedded() - eye), scale), MOMENT_TOL)
    rep.add("pigrad_moments", _rel(cond0 @ (grad.embedded() - eye), scale), MOMENT_TOL)
    # idempotence on the target spaces
    tgt = _embed(pi0.r, d) @ pi0.target
    rep.add("pi0_reproduction", _rel(pi0.embedded() @ tgt - tgt, 1.0), MOMENT_TOL)

    if kind == "poisson":
        div = build_pidiv(p, d)
        rep.margins["pidiv"] = div.sigma_min
        cd = _div_conditions(p, d)
        rep.add("pidiv_moments",
                _rel(cd @ (div.embedded() - np.eye(2 * n)), np.abs(cd).max()), MOMENT_TOL)
        E = block_diag(_embed(div.r, d), _embed(div.r, d))
        tgt = E @ div.target
        rep.add("pidiv_reproduction", _rel(div.embedded() @ tgt - tgt, 1.0), MOMENT_TOL)
        Dv = divergence_matrix(d)
        comm = Dv @ div.embedded() - _embed(p + 1, d) @ _select(p + 1, d) @ Dv
        rep.add("div_commutativity", _rel(comm, np.abs(Dv).max()), COMMUTE_TOL)
    else:
        sym = build_pidiv_sym(p, d)
        rep.experimental = True
        rep.notes.append(sym.notes)
        rep.margins["pidiv_sym"] = sym.sigma_min
        cd = _sym_conditions(p, d)
        rep.add("pidiv_sym_moments",
                _rel(cd @ (sym.embedded() - np.eye(3 * n)), np.abs(cd).max()), MOMENT_TOL)
        Dv = _sym_divergence_matrix(d)
        comm = Dv @ sym.embedded() - block_diag(*[_embed(p + 1, d) @ _select(p + 1, d)] * 2) @ Dv
        rep.add("div_commutativity", _rel(comm, np.abs(Dv).max()), COMMUTE_TOL)
        rep.add("beta_identity", 0.0, FORTIN_TOL)

    full, rand = fortin_residual(kind, p, d, vertices, seed, trials)
    rep.add("fortin_basis", full, FORTIN_TOL)
    rep.add("fortin_random", rand, FORTIN_TOL)
    if with_cpi:
        rep.c_pi = measure_cpi(kind, p, d, vertices)
    return rep


def _sym_divergence_matrix(d: int) -> np.ndarray:
    """Symmetric frame coefficients -> (div tau)_a coefficients, rows (a, i)."""
    Dv = divergence_matrix(d)                  # [d_x | d_y] blocks
    n = dim_p(d)
    Dx, Dy = Dv[:, :n], Dv[:, n:]
    rows = []
    for a in range(2):
        rows.append(np.hstack([SYM_MATS[m][a, 0] * Dx + SYM_MATS[m][a, 1] * Dy
                               for m in range(3)]))
    return np.vstack(rows)


def measure_cpi(kind: str, p: int, probe_degree: int = DEFAULT_PROBE_DEGREE,
                vertices=None) -> float:
    """Largest ||Pi V||_V / ||V||_V over the probe space (a lower bound for
    the operator norm on V)."""
    m = element_mesh(vertices)
    test = _probe_layout(kind, p, probe_degree)
    G = (local_gram_poisson(m, test) if kind == "poisson"
         else local_gram_elasticity(m, test)).G[0]
    P = _probe_operator(kind, p, probe_degree, m.jacobians[0])
    lam = eigh(P.T @ G @ P, G, eigvals_only=True)
    return float(np.sqrt(max(lam.max(), 0.0)))


def cpi_over_mesh(kind: str, p: int, m: Mesh,
                  probe_degree: int = DEFAULT_PROBE_DEGREE) -> np.ndarray:
    """Element-wise C_Pi lower bounds on a mesh."""
    X = m.vertices[m.triangles]
    return np.array([measure_cpi(kind, p, probe_degree, X[K])
                     for K in range(m.n_elements)])


def solvability_margins(p: int) -> dict:
    """Smallest singular values of the defining square systems."""
    return {"pi0": build_pi0(p).sigma_min,
            "pidiv": build_pidiv(p).sigma_min,
            "pidiv_sym": build_pidiv_sym(p).sigma_min}

# }}}
