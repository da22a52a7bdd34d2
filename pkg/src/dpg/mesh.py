"""Triangular meshes, skeleton enumeration, refinement and affine maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SHAPE_WARN_RATIO = 20.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with its skeleton.

    Local facet ``k`` of a triangle is opposite its local vertex ``k`` and is
    traversed from local vertex ``(k+1) % 3`` to ``(k+2) % 3``.  Global facets
    are stored with sorted endpoints.  The facet normal points out of the
    lower-indexed adjacent element (outward on the boundary);
    ``elem_facet_sign`` is +1 where that normal is outward for the element.
    ``elem_facet_flip`` is True where the local traversal runs from the higher
    to the lower global vertex index.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    facets: np.ndarray = field(repr=False)
    facet_elements: np.ndarray = field(repr=False)
    elem_facets: np.ndarray = field(repr=False)
    elem_facet_sign: np.ndarray = field(repr=False)
    elem_facet_flip: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if len(triangles) == 0:
            raise MeshError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError("triangle vertex index out of range")

        d = _signed_det(vertices, triangles)
        if np.any(d <= 0):
            bad = int(np.flatnonzero(d <= 0)[0])
            raise MeshError(f"inverted or degenerate element {bad}")

        nt = len(triangles)
        local = np.array([[1, 2], [2, 0], [0, 1]])
        ends = triangles[:, local]                      # (nt, 3, 2)
        keys = np.sort(ends, axis=2).reshape(-1, 2)
        facets, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(nt, 3)
        if counts.max() > 2:
            f = int(np.argmax(counts))
            raise MeshError(
                f"non-manifold facet {tuple(facets[f])} shared by "
                f"{counts[f]} elements")

        facet_elements = np.full((len(facets), 2), -1, dtype=np.int64)
        for K in range(nt):
            for k in range(3):
                f = inverse[K, k]
                slot = 0 if facet_elements[f, 0] < 0 else 1
                facet_elements[f, slot] = K
        # element loop runs in increasing K, so slot 0 holds the lower index
        sign = np.where(
            facet_elements[inverse, 0] == np.arange(nt)[:, None], 1, -1)
        flip = ends[:, :, 0] > ends[:, :, 1]
        return cls(vertices, triangles, facets, facet_elements, inverse,
                   sign.astype(np.int64), flip)

    # {{{ sizes

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def boundary_facets(self) -> np.ndarray:
        return self.facet_elements[:, 1] < 0

    @property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.facets[self.boundary_facets].ravel()] = True
        return mask

    # }}}

    # {{{ geometry

    @property
    def jacobians(self) -> np.ndarray:
        """A with x = A xhat + b; shape (nt, 2, 2)."""
        X = self.vertices[self.triangles]
        return np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=2)

    @property
    def offsets(self) -> np.ndarray:
        return self.vertices[self.triangles[:, 0]]

    @property
    def dets(self) -> np.ndarray:
        return _signed_det(self.vertices, self.triangles)

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self.dets

    def map_points(self, K, xhat) -> np.ndarray:
        """Physical images of reference points; K scalar or index array."""
        A = self.jacobians[K]
        return np.einsum("...ij,pj->...pi", A, xhat) + self.offsets[K][..., None, :]

    @property
    def facet_lengths(self) -> np.ndarray:
        """Per element and local facet, shape (nt, 3)."""
        X = self.vertices[self.triangles]
        start = X[:, [1, 2, 0]]
        end = X[:, [2, 0, 1]]
        return np.linalg.norm(end - start, axis=2)

    @property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normals per element and local facet, (nt, 3, 2)."""
        X = self.vertices[self.triangles]
        e = X[:, [2, 0, 1]] - X[:, [1, 2, 0]]
        n = np.stack([e[..., 1], -e[..., 0]], axis=2)
        return n / np.linalg.norm(n, axis=2, keepdims=True)

    @property
    def diameters(self) -> np.ndarray:
        return self.facet_lengths.max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    def shape_ratios(self) -> np.ndarray:
        """Circumradius over inradius per element (2 for equilateral)."""
        L = self.facet_lengths
        area = self.areas
        circ = L.prod(axis=1) / (4.0 * area)
        inr = 2.0 * area / L.sum(axis=1)
        return circ / inr

    # }}}

    def check_shape(self, limit: float = SHAPE_WARN_RATIO) -> float:
        worst = float(self.shape_ratios().max())
        if worst > limit:
            logger.warning("shape regularity ratio %.3g exceeds %.3g", worst, limit)
        return worst

    def reordered(self, perm) -> "Mesh":
        """Same mesh with elements listed in the order ``perm``."""
        return Mesh.from_arrays(self.vertices, self.triangles[np.asarray(perm)])


def _signed_det(vertices, triangles):
    X = vertices[triangles]
    e1 = X[:, 1] - X[:, 0]
    e2 = X[:, 2] - X[:, 0]
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


# {{{ generators

def unit_square_mesh(n: int) -> Mesh:
    """2 n^2 right triangles on [0, 1]^2, diagonals along (1, 1)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh.from_arrays(verts, np.array(tris))


def reference_triangle_mesh(levels: int = 0) -> Mesh:
    m = Mesh.from_arrays(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                         np.array([[0, 1, 2]]))
    for _ in range(levels):
        m = refine_uniform(m)
    return m


def single_element_mesh(vertices) -> Mesh:
    return Mesh.from_arrays(np.asarray(vertices, dtype=float), np.array([[0, 1, 2]]))


def refine_uniform(m: Mesh) -> Mesh:
    """Red refinement: each triangle into four similar children."""
    nv = m.n_vertices
    mid = 0.5 * (m.vertices[m.facets[:, 0]] + m.vertices[m.facets[:, 1]])
    verts = np.vstack([m.vertices, mid])
    v = m.triangles
    mf = nv + m.elem_facets            # midpoint opposite local vertex k
    children = np.concatenate([
        np.stack([v[:, 0], mf[:, 2], mf[:, 1]], axis=1),
        np.stack([mf[:, 2], v[:, 1], mf[:, 0]], axis=1),
        np.stack([mf[:, 1], mf[:, 0], v[:, 2]], axis=1),
        np.stack([mf[:, 0], mf[:, 1], mf[:, 2]], axis=1),
    ], axis=1).reshape(-1, 3)
    return Mesh.from_arrays(verts, children)

# }}}


# {{{ file format

HEADER = "dpgmesh 2"


def write_mesh(m: Mesh, path) -> None:
    lines = [HEADER, f"{m.n_vertices} {m.n_elements}"]
    lines += [f"{x!r} {y!r}" for x, y in m.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in m.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, reorient: bool = False) -> Mesh:
    """Read the ASCII mesh format.

    Clockwise triangles are reordered when ``reorient`` is set and rejected
    otherwise.
    """
    lines = [ln.split() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != HEADER.split():
        raise MeshError(f"malformed header: expected {HEADER!r}")
    try:
        nv, nt = (int(t) for t in lines[1])
    except (IndexError, ValueError):
        raise MeshError("malformed counts line; expected '<nv> <nt>'") from None
    body = lines[2:]
    if len(body) != nv + nt:
        raise MeshError(f"expected {nv + nt} data lines, found {len(body)}")
    try:
        verts = np.array([[float(a), float(b)] for a, b in body[:nv]])
        tris = np.array([[int(a), int(b), int(c)] for a, b, c in body[nv:]],
                        dtype=np.int64).reshape(nt, 3)
    except ValueError:
        raise MeshError("malformed vertex or triangle line") from None
    if tris.size and (tris.min() < 0 or tris.max() >= nv):
        raise MeshError("triangle vertex index out of range")
    det = _signed_det(verts, tris)
    if np.any(det == 0):
        raise MeshError(f"degenerate element {int(np.flatnonzero(det == 0)[0])}")
    if np.any(det < 0):
        if not reorient:
            raise MeshError(
                f"inverted (clockwise) element {int(np.flatnonzero(det < 0)[0])}")
        tris = tris.copy()
        neg = det < 0
        tris[neg] = tris[neg][:, [0, 2, 1]]
    return Mesh.from_arrays(verts, tris)

# }}}


# {{{ Piola maps

@dataclass(frozen=True)
class PiolaMap:
    """Reference-to-element transforms for one element."""

    A: np.ndarray
    b: np.ndarray

    @classmethod
    def of(cls, m: Mesh, K: int) -> "PiolaMap":
        return cls(m.jacobians[K], m.offsets[K])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.A))

    def to_physical(self, xhat) -> np.ndarray:
        return np.asarray(xhat) @ self.A.T + self.b

    def to_reference(self, x) -> np.ndarray:
        return np.linalg.solve(self.A, (np.asarray(x) - self.b).T).T

    def scalar(self, fhat):
        """f = fhat o G^{-1}."""
        return lambda x: fhat(self.to_reference(x))

    def hdiv(self, tauhat):
        """tau = A tauhat / det A, composed with G^{-1}; values (..., 2)."""
        return lambda x: tauhat(self.to_reference(x)) @ self.A.T / self.det

    def hdiv_inverse(self, tau):
        """tauhat = det A A^{-1} (tau o G)."""
        Ainv = np.linalg.inv(self.A)
        return lambda xhat: self.det * tau(self.to_physical(xhat)) @ Ainv.T

    def symmetric(self, tauhat):
        """tau = A tauhat A^T / det A; values (..., 2, 2)."""
        A = self.A
        return lambda x: A @ tauhat(self.to_reference(x)) @ A.T / self.det

    def symmetric_inverse(self, tau):
        Ainv = np.linalg.inv(self.A)
        return lambda xhat: self.det * Ainv @ tau(self.to_physical(xhat)) @ Ainv.T

# }}}
