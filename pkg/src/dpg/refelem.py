"""Reference-triangle polynomial bases, trace bases and quadrature.

The reference triangle has vertices (0, 0), (1, 0), (0, 1).  Every
polynomial on it is stored as a coefficient vector over one fixed
L2-orthonormal scalar basis (the collapsed-coordinate Jacobi product
basis), graded by total degree.  Because the scalar basis is nested, the
first ``dim_p(d)`` functions of any higher-degree basis span ``P_d``, so
coefficient vectors of different degrees embed by zero padding.

Facet ``k`` of the reference triangle is the edge opposite vertex ``k``,
parametrized by ``t`` in [0, 1] from vertex ``(k+1) % 3`` to vertex
``(k+2) % 3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi, eval_legendre, gammaln, roots_jacobi

VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_AREA = 0.5
FACET_LENGTHS = np.array([math.sqrt(2.0), 1.0, 1.0])
FACET_NORMALS = np.array(
    [[1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)], [-1.0, 0.0], [0.0, -1.0]]
)

# Frobenius-orthonormal component frames for matrix-valued kinds, stored
# row-major as (m11, m12, m21, m22).
_S2 = 1.0 / math.sqrt(2.0)
_FRAMES = {
    "scalar": np.array([[1.0]]),
    "vector": np.eye(2),
    "symmetric": np.array(
        [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, _S2, _S2, 0.0]]
    ),
    "skew": np.array([[0.0, _S2, -_S2, 0.0]]),
    "matrix": np.eye(4),
}
KINDS = tuple(_FRAMES)

MAX_QUADRATURE_DEGREE = 80


def dim_p(d: int) -> int:
    """Dimension of P_d on a triangle; zero for negative ``d``."""
    return (d + 1) * (d + 2) // 2 if d >= 0 else 0


def component_frame(kind: str) -> np.ndarray:
    """Rows are the constant component directions of a basis kind."""
    return _FRAMES[kind]


# {{{ quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points.T
        return np.stack([1.0 - x - y, x, y], axis=1)

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def quadrature_rule(q: int) -> QuadratureRule:
    """Collapsed Gauss-Legendre x Gauss-Jacobi rule exact to total degree q.

    Positive weights, interior points, any degree up to
    ``MAX_QUADRATURE_DEGREE``.
    """
    if q < 0:
        raise ValueError(f"quadrature degree must be non-negative, got {q}")
    if q > MAX_QUADRATURE_DEGREE:
        raise ValueError(
            f"quadrature degree {q} exceeds supported maximum "
            f"{MAX_QUADRATURE_DEGREE}")
    n = q // 2 + 1
    a, wa = np.polynomial.legendre.leggauss(n)
    b, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = 0.25 * (1.0 + A) * (1.0 - B)
    y = 0.5 * (1.0 + B)
    w = np.outer(wa, wb) / 8.0
    pts = np.stack([x.ravel(), y.ravel()], axis=1)
    pts.flags.writeable = False
    w = w.ravel()
    w.flags.writeable = False
    return QuadratureRule(pts, w, q)


@lru_cache(maxsize=None)
def gauss_interval(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1] exact to degree q."""
    n = max(q // 2 + 1, 1)
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (t + 1.0), 0.5 * w


def facet_points(k: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates of parameter values ``t`` on facet ``k``."""
    start = VERTICES[(k + 1) % 3]
    end = VERTICES[(k + 2) % 3]
    return start + np.outer(t, end - start)

# }}}


# {{{ orthonormal scalar basis

def _jacobi_n(n, alpha, beta, x):
    if n < 0:
        return np.zeros_like(x)
    lognorm = ((alpha + beta + 1) * math.log(2.0)
               - math.log(2 * n + alpha + beta + 1)
               + gammaln(n + alpha + 1) + gammaln(n + beta + 1)
               - gammaln(n + alpha + beta + 1) - gammaln(n + 1))
    return eval_jacobi(n, alpha, beta, x) * math.exp(-0.5 * lognorm)


def _djacobi_n(n, alpha, beta, x):
    if n == 0:
        return np.zeros_like(x)
    return math.sqrt(n * (n + alpha + beta + 1)) * _jacobi_n(
        n - 1, alpha + 1, beta + 1, x)


@lru_cache(maxsize=None)
def mode_indices(d: int) -> tuple[tuple[int, int], ...]:
    """(i, j) index pairs of the scalar basis, graded by total degree."""
    return tuple((k - j, j) for k in range(d + 1) for j in range(k + 1))


def _collapsed(points):
    points = np.asarray(points, dtype=float)
    r = 2.0 * points[..., 0] - 1.0
    s = 2.0 * points[..., 1] - 1.0
    denom = 1.0 - s
    safe = np.abs(denom) > 1e-14
    a = np.where(safe, 2.0 * (1.0 + r) / np.where(safe, denom, 1.0) - 1.0, -1.0)
    return a, s


def scalar_values(d: int, points) -> np.ndarray:
    """Values of the degree-``d`` orthonormal basis, shape (dim_p(d), npts)."""
    a, b = _collapsed(points)
    out = np.empty((dim_p(d),) + a.shape)
    for m, (i, j) in enumerate(mode_indices(d)):
        out[m] = (2.0 * math.sqrt(2.0) * _jacobi_n(i, 0, 0, a)
                  * _jacobi_n(j, 2 * i + 1, 0, b) * (1.0 - b) ** i)
    return out


def scalar_gradients(d: int, points) -> np.ndarray:
    """Reference gradients, shape (2, dim_p(d), npts)."""
    a, b = _collapsed(points)
    out = np.empty((2, dim_p(d)) + a.shape)
    half = 0.5 * (1.0 - b)
    for m, (i, j) in enumerate(mode_indices(d)):
        fa = _jacobi_n(i, 0, 0, a)
        dfa = _djacobi_n(i, 0, 0, a)
        gb = _jacobi_n(j, 2 * i + 1, 0, b)
        dgb = _djacobi_n(j, 2 * i + 1, 0, b)
        dr = dfa * gb
        ds = dfa * gb * 0.5 * (1.0 + a)
        if i > 0:
            dr = dr * half ** (i - 1)
            ds = ds * half ** (i - 1)
        tmp = dgb * half ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * half ** (i - 1)
        ds = ds + fa * tmp
        scale = 2.0 ** (i + 0.5) * 2.0 * 2.0
        out[0, m] = scale * dr
        out[1, m] = scale * ds
    return out


def project_scalar(fn, d: int, q: int | None = None) -> np.ndarray:
    """L2 projection of ``fn(points) -> values`` onto P_d (coefficients)."""
    rule = quadrature_rule(q if q is not None else 2 * d + 8)
    vals = np.asarray(fn(rule.points), dtype=float)
    return scalar_values(d, rule.points) @ (rule.weights * vals)

# }}}


# {{{ reference bases

@dataclass(frozen=True)
class ReferenceBasis:
    """A basis of a polynomial space on the reference triangle.

    ``coefficients[m, c, i]`` is the coefficient of scalar mode ``i`` in
    component ``c`` (row-major flattened for matrices) of function ``m``.
    """

    dimension: int
    degree: int
    kind: str
    coefficients: np.ndarray

    @property
    def cardinality(self) -> int:
        return self.coefficients.shape[0]

    @property
    def ncomponents(self) -> int:
        return self.coefficients.shape[1]

    def values(self, points) -> np.ndarray:
        """Shape (cardinality, ncomponents, npts)."""
        return np.einsum("mci,ip->mcp", self.coefficients,
                         scalar_values(self.degree, points))

    def gradients(self, points) -> np.ndarray:
        """Shape (cardinality, ncomponents, 2, npts)."""
        return np.einsum("mci,dip->mcdp", self.coefficients,
                         scalar_gradients(self.degree, points))

    def gram(self, q: int | None = None) -> np.ndarray:
        rule = quadrature_rule(q if q is not None else 2 * self.degree)
        v = self.values(rule.points)
        return np.einsum("mcp,ncp,p->mn", v, v, rule.weights)


def simplex_basis(N: int, d: int, kind: str = "scalar") -> ReferenceBasis:
    """L2-orthonormal basis of P_d(K; kind) on the reference simplex."""
    if N != 2:
        raise ValueError(f"unsupported dimension N={N}; only N=2 is implemented")
    if d < 0:
        raise ValueError(f"degree must be non-negative, got {d}")
    if kind not in _FRAMES:
        raise ValueError(f"unknown basis kind {kind!r}; expected one of {KINDS}")
    frame = _FRAMES[kind]
    n = dim_p(d)
    coeffs = np.einsum("fc,ij->ficj", frame, np.eye(n)).reshape(
        frame.shape[0] * n, frame.shape[1], n)
    return ReferenceBasis(N, d, kind, coeffs)


def vertex_vanishing_nullspace(r: int, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal coefficient columns spanning {q in P_r : q(vertices) = 0}."""
    C = scalar_values(r, VERTICES).T
    _, sing, vt = np.linalg.svd(C)
    rank = int(np.sum(sing > tol * sing[0]))
    if rank != 3:
        raise np.linalg.LinAlgError(
            f"vertex constraints on P_{r} have rank {rank}, expected 3")
    return vt[rank:].T


def bubble_space_grad(p: int, N: int = 2) -> ReferenceBasis:
    """Basis of B_r^grad, r = p + N: degree-r polynomials vanishing on the
    (N-2)-subsimplices (the vertices, for triangles)."""
    if N != 2:
        raise ValueError(f"unsupported dimension N={N}; only N=2 is implemented")
    if p < 0:
        raise ValueError(f"degree must be non-negative, got {p}")
    r = p + N
    null = vertex_vanishing_nullspace(r)
    return ReferenceBasis(N, r, "scalar", null.T[:, None, :].copy())

# }}}


# {{{ facet and trace bases

def legendre01(p: int, t) -> np.ndarray:
    """Orthonormal Legendre basis of P_p on [0, 1], shape (p+1, len(t))."""
    t = np.asarray(t, dtype=float)
    return np.array([math.sqrt(2 * j + 1) * eval_legendre(j, 2.0 * t - 1.0)
                     for j in range(p + 1)]).reshape(p + 1, *t.shape)


def edge_bubbles(p: int, t) -> np.ndarray:
    """Interior modes of P_{p+1} on [0, 1] vanishing at both ends.

    Shape (p, len(t)); mode j is 4 t (1-t) P_j^{(1,1)}(2t-1) / (j+1).
    """
    t = np.asarray(t, dtype=float)
    out = np.empty((p,) + t.shape)
    for j in range(p):
        out[j] = 4.0 * t * (1.0 - t) * eval_jacobi(j, 1, 1, 2.0 * t - 1.0) / (j + 1)
    return out


@dataclass(frozen=True)
class TraceBasis:
    """Bases for P_p(dK) and the continuous tilde-P_{p+1}(dK) on the
    reference triangle.

    Discontinuous function ``k*(p+1) + j`` is the j-th orthonormal Legendre
    polynomial on facet k.  Continuous functions are the three vertex hats
    followed by ``p`` edge modes per facet (index ``3 + k*p + j``).  Edge
    modes and discontinuous modes on facet k may be evaluated in the reversed
    parameter (``flip``) so that two elements sharing a facet see the same
    function.
    """

    p: int

    @property
    def n_discontinuous(self) -> int:
        return 3 * (self.p + 1)

    @property
    def n_continuous(self) -> int:
        return 3 + 3 * self.p

    def discontinuous(self, k: int, t, flip: bool = False) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros((self.n_discontinuous,) + t.shape)
        s = 1.0 - t if flip else t
        out[k * (self.p + 1):(k + 1) * (self.p + 1)] = legendre01(self.p, s)
        return out

    def continuous(self, k: int, t, flip: bool = False) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros((self.n_continuous,) + t.shape)
        out[(k + 1) % 3] = 1.0 - t
        out[(k + 2) % 3] = t
        s = 1.0 - t if flip else t
        out[3 + k * self.p:3 + (k + 1) * self.p] = edge_bubbles(self.p, s)
        return out


def trace_basis(p: int) -> TraceBasis:
    if p < 0:
        raise ValueError(f"degree must be non-negative, got {p}")
    return TraceBasis(p)

# }}}
