"""Element matrices of the ultraweak forms and of the test-space inner product.

All element matrices are computed for every element at once, with arrays
indexed ``[element, test row, trial column]``.  Entries are
``B[K, i, j] = b(trial_j, test_i)`` restricted to element K.

Poisson form (sigma = -grad u, div sigma = f)::

    (sigma, tau) - (u, div tau) + <uhat, tau.n> - (sigma, grad v) + <v, fluxhat>

Elasticity form (A sigma = eps(u), div sigma = -f)::

    (A sigma, tau) + (u, div tau) - <uhat, tau n> + (alpha I, A tau)/Q0
      + (sigma, grad v) + (sigma, q) - <v, fluxhat> + (A sigma, beta I)/Q0

Test functions are reference basis functions composed with the inverse
affine map, component by component.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import Mesh
from .refelem import (
    component_frame,
    dim_p,
    facet_points,
    gauss_interval,
    quadrature_rule,
    scalar_gradients,
    scalar_values,
    trace_basis,
)
from .spaces import TestLayout, TrialDofMap

SYM_FRAME = component_frame("symmetric")          # (3, 4)
SKEW_FRAME = component_frame("skew")[0]           # (4,)
IDENTITY_COORDS = SYM_FRAME @ np.array([1.0, 0.0, 0.0, 1.0])   # (1, 1, 0)
SYM_MATS = SYM_FRAME.reshape(3, 2, 2)


def default_quadrature_degree(p: int, r: int) -> int:
    return 2 * max(r, p + 1) + 2


# {{{ compliance

@dataclass(frozen=True)
class ComplianceTensor:
    """Element-wise constant compliance acting on symmetric matrices.

    ``matrices[K]`` is the 3x3 action in the Frobenius-orthonormal
    coordinates (s11, s22, sqrt(2) s12) of symmetric 2x2 matrices.
    Non-symmetric inputs are symmetrized first.
    """

    matrices: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrices, dtype=float)
        if M.ndim != 3 or M.shape[1:] != (3, 3):
            raise ValueError("compliance matrices must have shape (nt, 3, 3)")
        if not np.allclose(M, M.transpose(0, 2, 1), rtol=1e-12, atol=1e-14):
            raise ValueError("compliance action must be symmetric")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise ValueError("compliance tensor is not positive definite")

    @classmethod
    def isotropic(cls, mu, lam, n_elements: int) -> "ComplianceTensor":
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (n_elements,))
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (n_elements,))
        cI = IDENTITY_COORDS
        c = lam / (2.0 * mu + 2.0 * lam)
        M = (np.eye(3)[None] - c[:, None, None] * np.outer(cI, cI)[None]) \
            / (2.0 * mu)[:, None, None]
        return cls(M)

    @classmethod
    def identity(cls, n_elements: int) -> "ComplianceTensor":
        return cls(np.broadcast_to(np.eye(3), (n_elements, 3, 3)).copy())

    @property
    def n_elements(self) -> int:
        return len(self.matrices)

    def apply(self, sigma, K: int = 0) -> np.ndarray:
        """A(sym sigma) for a 2x2 matrix (or stack of them) on element K."""
        sigma = np.asarray(sigma, dtype=float)
        coords = np.einsum("mij,...ij->...m", SYM_MATS, sigma)
        out = coords @ self.matrices[K].T
        return np.einsum("...m,mij->...ij", out, SYM_MATS)

    def trace_of_identity(self) -> np.ndarray:
        """trace(A_K I) per element."""
        return np.einsum("i,kij,j->k", IDENTITY_COORDS, self.matrices,
                         IDENTITY_COORDS)

    def q0(self) -> float:
        return float(self.trace_of_identity().min())


def compliance_apply(C: ComplianceTensor, sigma, K: int = 0) -> np.ndarray:
    return C.apply(sigma, K)


def q0(C: ComplianceTensor) -> float:
    return C.q0()

# }}}


# {{{ containers

@dataclass(frozen=True)
class LocalFormBlocks:
    B: np.ndarray                      # (nt, ntest, ntrial)
    load: np.ndarray | None            # (nt, ntest)
    beta_row: np.ndarray | None = None  # (nt, ntrial), elasticity only


@dataclass(frozen=True)
class LocalGram:
    G: np.ndarray                      # (nt, ntest, ntest)
    chol: np.ndarray                   # lower Cholesky factors

# }}}


# {{{ reference data

@dataclass(frozen=True)
class _RefData:
    w: np.ndarray
    pts: np.ndarray
    phi: np.ndarray        # trial P_p values (np, nq)
    psi_t: np.ndarray      # (n_rt, nq)
    dpsi_t: np.ndarray     # (2, n_rt, nq)
    psi_v: np.ndarray
    dpsi_v: np.ndarray
    phi_q: np.ndarray      # skew-multiplier P_p values (elasticity)
    ft: np.ndarray         # facet parameter points
    fw: np.ndarray
    # facet moments, index [k, flip]
    rt_cont: np.ndarray    # (3, 2, n_rt, ncont)
    rv_disc: np.ndarray    # (3, 2, n_rv, ndisc)


@lru_cache(maxsize=64)
def _ref_data(p: int, r_tau: int, r_v: int, qdeg: int, r_q: int | None = None) -> _RefData:
    rule = quadrature_rule(qdeg)
    pts = rule.points
    tb = trace_basis(p)
    ft, fw = gauss_interval(qdeg)
    n_rt, n_rv = dim_p(r_tau), dim_p(r_v)
    rt_cont = np.empty((3, 2, n_rt, tb.n_continuous))
    rv_disc = np.empty((3, 2, n_rv, tb.n_discontinuous))
    for k in range(3):
        xk = facet_points(k, ft)
        pt = scalar_values(r_tau, xk)
        pv = scalar_values(r_v, xk)
        for f in (0, 1):
            rt_cont[k, f] = (pt * fw) @ tb.continuous(k, ft, bool(f)).T
            rv_disc[k, f] = (pv * fw) @ tb.discontinuous(k, ft, bool(f)).T
    return _RefData(
        w=rule.weights, pts=pts,
        phi=scalar_values(p, pts),
        psi_t=scalar_values(r_tau, pts), dpsi_t=scalar_gradients(r_tau, pts),
        psi_v=scalar_values(r_v, pts), dpsi_v=scalar_gradients(r_v, pts),
        phi_q=scalar_values(p if r_q is None else r_q, pts),
        ft=ft, fw=fw, rt_cont=rt_cont, rv_disc=rv_disc)


def _select_flip(R, flips):
    """R: (2, a, b); flips: (nt,) bool -> (nt, a, b)."""
    return np.where(flips[:, None, None], R[1][None], R[0][None])


def _geometry(m: Mesh):
    A = m.jacobians
    Ainv = np.linalg.inv(A)
    J = Ainv.transpose(0, 2, 1)          # physical grad = J @ reference grad
    det = m.dets
    return J, det


def _mass(a, b, w):
    return (a * w) @ b.T

# }}}


# {{{ Poisson

def local_b_poisson(m: Mesh, trial: TrialDofMap, test: TestLayout,
                    f=None, qdeg: int | None = None,
                    load_qdeg: int | None = None) -> LocalFormBlocks:
    p = trial.p
    q = qdeg if qdeg is not None else default_quadrature_degree(p, test.r)
    if q < p + test.r:
        raise ValueError(f"quadrature degree {q} < p + r = {p + test.r}")
    rd = _ref_data(p, test.r_tau, test.r_v, q)
    J, det = _geometry(m)
    nt = m.n_elements
    n_rt, n_rv, npoly = dim_p(test.r_tau), dim_p(test.r_v), dim_p(p)
    tb = trace_basis(p)
    ntest = 2 * n_rt + n_rv
    sl = trial.local_slices
    B = np.zeros((nt, ntest, trial.n_local))

    Mtp = _mass(rd.psi_t, rd.phi, rd.w)                     # (n_rt, np)
    Et = np.einsum("cip,jp,p->cij", rd.dpsi_t, rd.phi, rd.w)
    Ev = np.einsum("cip,jp,p->cij", rd.dpsi_v, rd.phi, rd.w)
    uoff = sl["u"].start
    for a in range(2):
        rows = slice(a * n_rt, (a + 1) * n_rt)
        B[:, rows, a * npoly:(a + 1) * npoly] = det[:, None, None] * Mtp
        # -(u, div tau_a)
        B[:, rows, uoff:uoff + npoly] = -det[:, None, None] * np.einsum(
            "kc,cij->kij", J[:, a, :], Et)
        # -(sigma_a, d_a v)
        B[:, 2 * n_rt:, a * npoly:(a + 1) * npoly] = -det[:, None, None] * np.einsum(
            "kc,cij->kij", J[:, a, :], Ev)

    L = m.facet_lengths
    nrm = m.outward_normals
    sgn = m.elem_facet_sign
    flip = m.elem_facet_flip
    for k in range(3):
        Rt = _select_flip(rd.rt_cont[k], flip[:, k])        # (nt, n_rt, ncont)
        Rv = _select_flip(rd.rv_disc[k], flip[:, k])        # (nt, n_rv, ndisc)
        for a in range(2):
            rows = slice(a * n_rt, (a + 1) * n_rt)
            B[:, rows, sl["trace"]] += (L[:, k] * nrm[:, k, a])[:, None, None] * Rt
        B[:, 2 * n_rt:, sl["flux"]] += (L[:, k] * sgn[:, k])[:, None, None] * Rv
    assert tb.n_continuous == sl["trace"].stop - sl["trace"].start

    load = None
    if f is not None:
        load = np.zeros((nt, ntest))
        load[:, 2 * n_rt:] = _load_scalar(m, f, test.r_v, load_qdeg or 2 * test.r + 8)
    return LocalFormBlocks(B, load)


def _load_scalar(m: Mesh, f, r: int, qdeg: int) -> np.ndarray:
    rule = quadrature_rule(qdeg)
    x = m.map_points(np.arange(m.n_elements), rule.points)   # (nt, nq, 2)
    fx = np.asarray(f(x), dtype=float)
    psi = scalar_values(r, rule.points)
    return m.dets[:, None] * ((fx * rule.weights) @ psi.T)


def local_gram_poisson(m: Mesh, test: TestLayout, qdeg: int | None = None) -> LocalGram:
    q = qdeg if qdeg is not None else 2 * test.r + 2
    rd = _ref_data(test.p, test.r_tau, test.r_v, q)
    J, det = _geometry(m)
    n_rt, n_rv = dim_p(test.r_tau), dim_p(test.r_v)
    nt = m.n_elements
    ntest = 2 * n_rt + n_rv
    G = np.zeros((nt, ntest, ntest))

    Mt = _mass(rd.psi_t, rd.psi_t, rd.w)
    Mv = _mass(rd.psi_v, rd.psi_v, rd.w)
    Ht = np.einsum("cip,djp,p->cdij", rd.dpsi_t, rd.dpsi_t, rd.w)
    Hv = np.einsum("cip,djp,p->cdij", rd.dpsi_v, rd.dpsi_v, rd.w)
    for a in range(2):
        for b in range(2):
            blk = np.einsum("kc,kd,cdij->kij", J[:, a], J[:, b], Ht)
            if a == b:
                blk = blk + Mt
            G[:, a * n_rt:(a + 1) * n_rt, b * n_rt:(b + 1) * n_rt] = \
                det[:, None, None] * blk
    stiff = np.einsum("kac,kad,cdij->kij", J, J, Hv)
    G[:, 2 * n_rt:, 2 * n_rt:] = det[:, None, None] * (Mv + stiff)
    return _finish_gram(G)


def _finish_gram(G) -> LocalGram:
    G = 0.5 * (G + G.transpose(0, 2, 1))
    chol = np.linalg.cholesky(G)
    return LocalGram(G, chol)

# }}}


# {{{ elasticity

def local_b_elasticity(m: Mesh, trial: TrialDofMap, test: TestLayout,
                       C: ComplianceTensor, f=None, qdeg: int | None = None,
                       load_qdeg: int | None = None) -> LocalFormBlocks:
    p = trial.p
    q = qdeg if qdeg is not None else default_quadrature_degree(p, test.r)
    if q < p + test.r:
        raise ValueError(f"quadrature degree {q} < p + r = {p + test.r}")
    if C.n_elements != m.n_elements:
        raise ValueError("compliance tensor size does not match the mesh")
    rd = _ref_data(p, test.r_tau, test.r_v, q, test.q_degree)
    J, det = _geometry(m)
    nt = m.n_elements
    n_rt, n_rv, npoly = dim_p(test.r_tau), dim_p(test.r_v), dim_p(p)
    tb = trace_basis(p)
    nc, nd = tb.n_continuous, tb.n_discontinuous
    blk = test.blocks
    sl = trial.local_slices
    B = np.zeros((nt, test.n_local, trial.n_local))
    Q0 = C.q0()
    Amat = C.matrices                                      # (nt, 3, 3)
    AP = np.einsum("kmn,ne->kme", Amat, SYM_FRAME)         # (nt, 3, 4)

    Mtp = _mass(rd.psi_t, rd.phi, rd.w)
    Et = np.einsum("cip,jp,p->cij", rd.dpsi_t, rd.phi, rd.w)
    Ev = np.einsum("cip,jp,p->cij", rd.dpsi_v, rd.phi, rd.w)
    mean_t = rd.psi_t @ rd.w
    mean_p = rd.phi @ rd.w
    dgt = np.einsum("kbd,dij->kbij", J, Et)                # physical d_b psi_i phi_j
    dgv = np.einsum("kbd,dij->kbij", J, Ev)
    uoff = sl["u"].start
    aoff = sl["alpha"].start
    tro = sl["trace"].start
    flo = sl["flux"].start
    qrows = blk["q"]
    v0 = blk["v"].start

    for mm in range(3):
        rows = slice(mm * n_rt, (mm + 1) * n_rt)
        Sm = SYM_MATS[mm]
        for e in range(4):
            B[:, rows, e * npoly:(e + 1) * npoly] = \
                (det * AP[:, mm, e])[:, None, None] * Mtp
        for c in range(2):
            div = np.einsum("b,kbij->kij", Sm[c], dgt)
            B[:, rows, uoff + c * npoly:uoff + (c + 1) * npoly] = det[:, None, None] * div
        coef = np.einsum("kmn,n->km", Amat, IDENTITY_COORDS)[:, mm] / Q0
        B[:, rows, aoff] = (det * coef)[:, None] * mean_t

    for a in range(2):
        rows = slice(v0 + a * n_rv, v0 + (a + 1) * n_rv)
        for b in range(2):
            e = 2 * a + b
            B[:, rows, e * npoly:(e + 1) * npoly] = det[:, None, None] * dgv[:, b]

    Mqp = _mass(rd.phi_q, rd.phi, rd.w)
    for e in range(4):
        if SKEW_FRAME[e] != 0.0:
            B[:, qrows, e * npoly:(e + 1) * npoly] = \
                (det * SKEW_FRAME[e])[:, None, None] * Mqp

    L = m.facet_lengths
    nrm = m.outward_normals
    sgn = m.elem_facet_sign
    flip = m.elem_facet_flip
    for k in range(3):
        Rt = _select_flip(rd.rt_cont[k], flip[:, k])
        Rv = _select_flip(rd.rv_disc[k], flip[:, k])
        for mm in range(3):
            rows = slice(mm * n_rt, (mm + 1) * n_rt)
            Sn = np.einsum("cb,kb->kc", SYM_MATS[mm], nrm[:, k])   # (nt, 2)
            for c in range(2):
                B[:, rows, tro + c * nc:tro + (c + 1) * nc] -= \
                    (L[:, k] * Sn[:, c])[:, None, None] * Rt
        for a in range(2):
            rows = slice(v0 + a * n_rv, v0 + (a + 1) * n_rv)
            B[:, rows, flo + a * nd:flo + (a + 1) * nd] -= \
                (L[:, k] * sgn[:, k])[:, None, None] * Rv

    beta = np.zeros((nt, trial.n_local))
    trA = np.einsum("kme,m->ke", AP, IDENTITY_COORDS)       # tr(A sym E_e)
    for e in range(4):
        beta[:, e * npoly:(e + 1) * npoly] = (det * trA[:, e] / Q0)[:, None] * mean_p

    load = None
    if f is not None:
        load = np.zeros((nt, test.n_local))
        rule = quadrature_rule(load_qdeg or 2 * test.r + 8)
        x = m.map_points(np.arange(nt), rule.points)
        fx = np.asarray(f(x), dtype=float)                  # (nt, nq, 2)
        psi = scalar_values(test.r_v, rule.points)
        for a in range(2):
            load[:, v0 + a * n_rv:v0 + (a + 1) * n_rv] = \
                det[:, None] * ((fx[..., a] * rule.weights) @ psi.T)
    return LocalFormBlocks(B, load, beta)


def local_gram_elasticity(m: Mesh, test: TestLayout, qdeg: int | None = None) -> LocalGram:
    """Element blocks of the test inner product; the global beta block is
    the scalar 1 and is handled at assembly."""
    q = qdeg if qdeg is not None else 2 * max(test.r, test.q_degree) + 2
    rd = _ref_data(test.p, test.r_tau, test.r_v, q, test.q_degree)
    J, det = _geometry(m)
    n_rt, n_rv = dim_p(test.r_tau), dim_p(test.r_v)
    blk = test.blocks
    nt = m.n_elements
    G = np.zeros((nt, test.n_local, test.n_local))

    Mt = _mass(rd.psi_t, rd.psi_t, rd.w)
    Mv = _mass(rd.psi_v, rd.psi_v, rd.w)
    Ht = np.einsum("cip,djp,p->cdij", rd.dpsi_t, rd.dpsi_t, rd.w)
    Hv = np.einsum("cip,djp,p->cdij", rd.dpsi_v, rd.dpsi_v, rd.w)
    # physical derivative products: P[k, b, b', i, j] = int d_b psi_i d_b' psi_j
    Pt = np.einsum("kbc,kBd,cdij->kbBij", J, J, Ht)
    for m1 in range(3):
        for m2 in range(3):
            w = np.einsum("cb,cB->bB", SYM_MATS[m1], SYM_MATS[m2])
            val = np.einsum("bB,kbBij->kij", w, Pt)
            if m1 == m2:
                val = val + Mt
            G[:, m1 * n_rt:(m1 + 1) * n_rt, m2 * n_rt:(m2 + 1) * n_rt] = \
                det[:, None, None] * val
    stiff = np.einsum("kac,kad,cdij->kij", J, J, Hv)
    v0 = blk["v"].start
    for a in range(2):
        rows = slice(v0 + a * n_rv, v0 + (a + 1) * n_rv)
        G[:, rows, rows] = det[:, None, None] * (Mv + stiff)
    Mq = _mass(rd.phi_q, rd.phi_q, rd.w)
    G[:, blk["q"], blk["q"]] = det[:, None, None] * Mq
    return _finish_gram(G)

# }}}


def local_forms(m: Mesh, trial: TrialDofMap, test: TestLayout, f=None,
                compliance: ComplianceTensor | None = None,
                qdeg: int | None = None) -> tuple[LocalFormBlocks, LocalGram]:
    """Form blocks and Gram for either problem kind."""
    if trial.kind == "poisson":
        return (local_b_poisson(m, trial, test, f, qdeg),
                local_gram_poisson(m, test))
    if compliance is None:
        compliance = ComplianceTensor.isotropic(1.0, 1.0, m.n_elements)
    return (local_b_elasticity(m, trial, test, compliance, f, qdeg),
            local_gram_elasticity(m, test))
