"""Minimum-energy polynomial extensions of traces and fluxes.

The true H^{1/2} and H^{-1/2} skeleton norms are quotient norms and are not
computable.  Here a trace in tilde-P_{p+1}(dK) is lifted into P_{p+1}(K)
and a flux in P_p(dK) into the Raviart-Thomas space RT_p(K) by minimizing

    ||e||_K^2 + h_K^2 ||grad e||_K^2      resp.  ||q||_K^2 + h_K^2 ||div q||_K^2

subject to the boundary data.  The full H^1 (resp. H(div)) norm of the
minimizer is the "discrete" trace norm used in error reports.  Each
minimizer has two independent implementations (KKT and nullspace) that are
cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve, null_space

from .mesh import Mesh
from .refelem import (
    VERTICES,
    dim_p,
    facet_points,
    gauss_interval,
    legendre01,
    edge_bubbles,
    quadrature_rule,
    scalar_gradients,
    scalar_values,
    trace_basis,
)

METHODS = ("kkt", "nullspace")


class ExtensionError(np.linalg.LinAlgError):
    pass


# {{{ reference data

@lru_cache(maxsize=None)
def _trace_restriction(p: int, flips: tuple[bool, bool, bool]) -> np.ndarray:
    """Coefficients of the traces of P_{p+1} modes in the continuous trace
    basis of the element, shape (3 + 3p, dim P_{p+1})."""
    tb = trace_basis(p)
    t, w = gauss_interval(2 * p + 4)
    n1 = dim_p(p + 1)
    R = np.zeros((tb.n_continuous, n1))
    vals_v = scalar_values(p + 1, VERTICES)             # (n1, 3)
    R[:3] = vals_v.T
    for k in range(3):
        phi = scalar_values(p + 1, facet_points(k, t))  # (n1, nq)
        lin = (np.outer(vals_v[:, (k + 1) % 3], 1.0 - t)
               + np.outer(vals_v[:, (k + 2) % 3], t))
        s = 1.0 - t if flips[k] else t
        bub = edge_bubbles(p, s)                        # (p, nq)
        if p == 0:
            continue
        M = (bub * w) @ bub.T
        rhs = (bub * w) @ (phi - lin).T
        R[3 + k * p:3 + (k + 1) * p] = np.linalg.solve(M, rhs)
    return R


@lru_cache(maxsize=None)
def raviart_thomas(p: int) -> np.ndarray:
    """Orthonormal basis of RT_p = P_p(V) + x P~_p in coefficients of the
    vector basis of P_{p+1}; shape (2, dim P_{p+1}, dim RT_p)."""
    n1 = dim_p(p + 1)
    n0 = dim_p(p)
    cols = []
    for c in range(2):
        for i in range(n0):
            v = np.zeros((2, n1))
            v[c, i] = 1.0
            cols.append(v.ravel())
    rule = quadrature_rule(2 * p + 4)
    phi = scalar_values(p + 1, rule.points)
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(p + 1):
        mono = x ** a * y ** (p - a)
        v = np.stack([phi @ (rule.weights * x * mono),
                      phi @ (rule.weights * y * mono)])
        cols.append(v.ravel())
    Q, R = np.linalg.qr(np.array(cols).T)
    if np.min(np.abs(np.diag(R))) < 1e-10:
        raise ExtensionError("Raviart-Thomas generators are dependent")
    return Q.reshape(2, n1, -1)


@lru_cache(maxsize=None)
def _grad_ref(p: int):
    rule = quadrature_rule(2 * p + 4)
    return rule.weights, scalar_values(p + 1, rule.points), \
        scalar_gradients(p + 1, rule.points)


@lru_cache(maxsize=None)
def _div_ref(p: int):
    rule = quadrature_rule(2 * p + 4)
    RT = raviart_thomas(p)
    phi = scalar_values(p + 1, rule.points)
    dphi = scalar_gradients(p + 1, rule.points)
    vals = np.einsum("cim,ip->mcp", RT, phi)                 # (nrt, 2, nq)
    div = np.einsum("cim,cip->mp", RT, dphi)                 # (nrt, nq)
    t, w = gauss_interval(2 * p + 4)
    facet_vals = []
    for k in range(3):
        phi_f = scalar_values(p + 1, facet_points(k, t))
        facet_vals.append(np.einsum("cim,ip->mcp", RT, phi_f))
    return rule.weights, vals, div, t, w, facet_vals

# }}}


# {{{ constrained minimization

def _minimize(H: np.ndarray, C: np.ndarray, method: str) -> np.ndarray:
    """Linear map d -> argmin x^T H x subject to C x = d."""
    if method == "kkt":
        n, m = H.shape[0], C.shape[0]
        K = np.block([[H, C.T], [C, np.zeros((m, m))]])
        rhs = np.vstack([np.zeros((n, m)), np.eye(m)])
        try:
            return np.linalg.solve(K, rhs)[:n]
        except np.linalg.LinAlgError as exc:
            raise ExtensionError(f"singular extension KKT system: {exc}") from None
    if method == "nullspace":
        X0 = np.linalg.pinv(C)
        N = null_space(C)
        if N.shape[1] == 0:
            return X0
        try:
            cf = cho_factor(N.T @ H @ N, lower=True)
        except np.linalg.LinAlgError:
            raise ExtensionError("reduced extension energy is not SPD") from None
        return X0 - N @ cho_solve(cf, N.T @ H @ X0)
    raise ValueError(f"unknown extension method {method!r}")


def _minimize_affine(H: np.ndarray, b: np.ndarray, C: np.ndarray,
                     d: np.ndarray) -> np.ndarray:
    """argmin x^T H x - 2 b^T x subject to C x = d."""
    n, m = H.shape[0], C.shape[0]
    K = np.block([[H, C.T], [C, np.zeros((m, m))]])
    return np.linalg.solve(K, np.concatenate([b, d]))[:n]


def _flux_constraints(m: Mesh, p: int, K: int) -> np.ndarray:
    """Moments of the physical outward normal flux of the RT_p basis on K
    against the local discontinuous facet basis, shape (3(p+1), dim RT_p)."""
    _, _, _, t, tw, fvals = _div_ref(p)
    A = m.jacobians[K]
    det = m.dets[K]
    C = np.zeros((3 * (p + 1), fvals[0].shape[0]))
    for k in range(3):
        qn = np.einsum("mcp,c->mp", fvals[k], A.T @ m.outward_normals[K, k]) / det
        s = 1.0 - t if m.elem_facet_flip[K, k] else t
        C[k * (p + 1):(k + 1) * (p + 1)] = (legendre01(p, s) * tw) @ qn.T
    return C


@dataclass(frozen=True)
class ExtensionMaps:
    """Per-element linear maps from local trace (or flux) coefficients to
    extension coefficients, with the Gram of the reported norm."""

    maps: np.ndarray      # (nt, n_ext, n_data)
    norm_gram: np.ndarray  # (nt, n_data, n_data): full H^1 / H(div) norm

    def norms_squared(self, data: np.ndarray) -> np.ndarray:
        return np.einsum("ki,kij,kj->k", data, self.norm_gram, data)


def grad_extensions(m: Mesh, p: int, method: str = "kkt") -> ExtensionMaps:
    w, phi, dphi = _grad_ref(p)
    M = (phi * w) @ phi.T
    Hr = np.einsum("cip,djp,p->cdij", dphi, dphi, w)
    J = np.linalg.inv(m.jacobians).transpose(0, 2, 1)
    stiff = np.einsum("kac,kad,cdij->kij", J, J, Hr)
    det, h = m.dets, m.diameters
    nt = m.n_elements
    nc = 3 + 3 * p
    maps = np.empty((nt, phi.shape[0], nc))
    gram = np.empty((nt, nc, nc))
    for K in range(nt):
        C = _trace_restriction(p, tuple(bool(f) for f in m.elem_facet_flip[K]))
        E = _minimize(det[K] * (M + h[K] ** 2 * stiff[K]), C, method)
        maps[K] = E
        gram[K] = det[K] * E.T @ (M + stiff[K]) @ E
    return ExtensionMaps(maps, 0.5 * (gram + gram.transpose(0, 2, 1)))


def div_extensions(m: Mesh, p: int, method: str = "kkt") -> ExtensionMaps:
    """Extensions of element-outward normal fluxes.  Local flux data are the
    coefficients in the discontinuous trace basis times the facet sign."""
    w, vals, div, _, _, _ = _div_ref(p)
    A = m.jacobians
    det, h = m.dets, m.diameters
    nt = m.n_elements
    nd = 3 * (p + 1)
    n_rt = vals.shape[0]
    Md = (div * w) @ div.T
    maps = np.empty((nt, n_rt, nd))
    gram = np.empty((nt, nd, nd))
    for K in range(nt):
        # physical q = A qhat / det:  ||q||^2 = (1/det) int |A qhat|^2
        AtA = A[K].T @ A[K]
        Mq = np.einsum("mcp,cd,ndp,p->mn", vals, AtA, vals, w) / det[K]
        Mdiv = Md / det[K]
        C = _flux_constraints(m, p, K)
        E = _minimize(Mq + h[K] ** 2 * Mdiv, C, method)
        maps[K] = E
        gram[K] = E.T @ (Mq + Mdiv) @ E
    return ExtensionMaps(maps, 0.5 * (gram + gram.transpose(0, 2, 1)))

# }}}


# {{{ interpolants

def interpolate_trace(m: Mesh, p: int, u) -> np.ndarray:
    """Skeleton interpolant of a scalar function: vertex values plus the L2
    projection of the remainder onto the edge modes.  Returns the full trace
    coefficient vector (vertex block then edge block)."""
    nf = m.n_facets
    vert = np.asarray(u(m.vertices), dtype=float)
    edge = np.zeros((nf, p))
    if p > 0:
        t, w = gauss_interval(2 * p + 12)
        bub = edge_bubbles(p, t)
        Mb = (bub * w) @ bub.T
        a = m.vertices[m.facets[:, 0]]
        b = m.vertices[m.facets[:, 1]]
        X = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        vals = np.asarray(u(X), dtype=float)
        lin = (np.outer(vert[m.facets[:, 0]], 1.0 - t)
               + np.outer(vert[m.facets[:, 1]], t))
        edge = np.linalg.solve(Mb, (bub * w) @ (vals - lin).T).T
    return np.concatenate([vert, edge.ravel()])


def interpolate_flux(m: Mesh, p: int, sigma) -> np.ndarray:
    """L2 projection of sigma . n_F onto P_p on each facet, in the global
    facet parameter and with the global facet normal; shape (nf, p+1)."""
    t, w = gauss_interval(2 * p + 12)
    leg = legendre01(p, t)
    a = m.vertices[m.facets[:, 0]]
    b = m.vertices[m.facets[:, 1]]
    X = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    nF = global_facet_normals(m)
    vals = np.einsum("fqc,fc->fq", np.asarray(sigma(X), dtype=float), nF)
    return (vals * w) @ leg.T


def global_facet_normals(m: Mesh) -> np.ndarray:
    """Unit normal of each facet, pointing out of its lower-index element."""
    K = m.facet_elements[:, 0]
    local = np.argmax(m.elem_facets[K] == np.arange(m.n_facets)[:, None], axis=1)
    return m.outward_normals[K, local]

# }}}


def skeleton_gram(m: Mesh, p: int, dofmap, method: str = "kkt") -> sp.csr_matrix:
    """Gram of the discrete trial norm over the free DOFs.

    Field blocks use the L2 inner product (orthonormal reference basis times
    det), traces and fluxes the norms of their minimum-energy extensions.
    """
    ge = grad_extensions(m, p, method)
    de = div_extensions(m, p, method)
    sl = dofmap.local_slices
    cs, cu, ct = dofmap.components
    dofs = dofmap.free_elem_dofs()
    nt, nl = dofs.shape
    G = np.zeros((nt, nl, nl))
    nfield = sl["u"].stop
    idx = np.arange(nfield)
    # each field DOF belongs to exactly one element
    G[:, idx, idx] = m.dets[:, None]
    nc = 3 + 3 * p
    nd = 3 * (p + 1)
    sgn = np.repeat(m.elem_facet_sign, p + 1, axis=1).astype(float)
    for c in range(ct):
        tr = slice(sl["trace"].start + c * nc, sl["trace"].start + (c + 1) * nc)
        fl = slice(sl["flux"].start + c * nd, sl["flux"].start + (c + 1) * nd)
        G[:, tr, tr] += ge.norm_gram
        G[:, fl, fl] += sgn[:, :, None] * de.norm_gram * sgn[:, None, :]
    keep = dofs >= 0
    rows = np.broadcast_to(dofs[:, :, None], G.shape)
    cols = np.broadcast_to(dofs[:, None, :], G.shape)
    mask = keep[:, :, None] & keep[:, None, :] & (G != 0)
    n = dofmap.n_free
    out = sp.coo_matrix((G[mask], (rows[mask], cols[mask])), shape=(n, n)).tocsr()
    if dofmap.kind == "elasticity":
        a = dofmap.free_index[dofmap.alpha_index]
        out = out + sp.coo_matrix(([1.0], ([a], [a])), shape=(n, n)).tocsr()
    return out
