"""Degree-of-freedom layout of the trial space and the broken test space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .refelem import dim_p

PROBLEMS = ("poisson", "elasticity")
N_DIM = 2


class ConfigError(ValueError):
    pass


# field counts per problem: (sigma components, u components, trace components)
_COMPONENTS = {"poisson": (2, 1, 1), "elasticity": (4, 2, 2)}


@dataclass(frozen=True)
class TrialDofMap:
    """Global numbering of the trial space.

    The full numbering lists, in order: per-element field blocks (sigma then
    u, component-major), one trace DOF per vertex and component, ``p`` edge
    modes per facet and component, ``p + 1`` flux modes per facet and
    component, and for elasticity the global scalar alpha.  Constrained trace
    DOFs keep their full index; ``free_index`` maps full -> free (-1 when
    constrained).

    Local element ordering (columns of the element form matrices) is
    sigma, u, trace (per component: 3 vertex hats then ``p`` modes per local
    facet), flux (per component: ``p + 1`` modes per local facet), alpha.
    """

    kind: str
    p: int
    n_elements: int
    elem_dofs: np.ndarray
    constrained: np.ndarray
    free_index: np.ndarray
    n_full: int
    ranges: dict

    @property
    def n_free(self) -> int:
        return int(self.n_full - self.constrained.sum())

    @property
    def components(self) -> tuple[int, int, int]:
        return _COMPONENTS[self.kind]

    @property
    def n_poly(self) -> int:
        return dim_p(self.p)

    @property
    def local_slices(self) -> dict:
        """Column slices of each field in the element-local ordering."""
        cs, cu, ct = self.components
        npoly = self.n_poly
        a = cs * npoly
        b = a + cu * npoly
        c = b + ct * (3 + 3 * self.p)
        d = c + ct * 3 * (self.p + 1)
        out = {"sigma": slice(0, a), "u": slice(a, b),
               "trace": slice(b, c), "flux": slice(c, d)}
        if self.kind == "elasticity":
            out["alpha"] = slice(d, d + 1)
        return out

    @property
    def n_local(self) -> int:
        return self.elem_dofs.shape[1]

    @property
    def alpha_index(self) -> int | None:
        if self.kind != "elasticity":
            return None
        return self.n_full - 1

    def free_elem_dofs(self) -> np.ndarray:
        return self.free_index[self.elem_dofs]


def build_trial_space(m: Mesh, p: int, kind: str = "poisson") -> TrialDofMap:
    if kind not in PROBLEMS:
        raise ConfigError(f"unknown problem kind {kind!r}")
    if p < 0:
        raise ConfigError(f"trial degree must be non-negative, got {p}")
    cs, cu, ct = _COMPONENTS[kind]
    npoly = dim_p(p)
    nt, nv, nf = m.n_elements, m.n_vertices, m.n_facets

    n_field = (cs + cu) * npoly
    off_vert = nt * n_field
    off_edge = off_vert + nv * ct
    off_flux = off_edge + nf * ct * p
    off_alpha = off_flux + nf * ct * (p + 1)
    n_full = off_alpha + (1 if kind == "elasticity" else 0)

    field_dofs = np.arange(nt * n_field).reshape(nt, n_field)

    # trace: per component c, vertex hats then edge modes
    tri = m.triangles
    ef = m.elem_facets
    trace_cols = []
    flux_cols = []
    for c in range(ct):
        trace_cols.append(off_vert + tri * ct + c)
        edge = (off_edge + (ef[:, :, None] * ct + c) * p
                + np.arange(p)[None, None, :]).reshape(nt, 3 * p)
        trace_cols.append(edge)
    for c in range(ct):
        flux = (off_flux + (ef[:, :, None] * ct + c) * (p + 1)
                + np.arange(p + 1)[None, None, :]).reshape(nt, 3 * (p + 1))
        flux_cols.append(flux)
    cols = [field_dofs] + trace_cols + flux_cols
    if kind == "elasticity":
        cols.append(np.full((nt, 1), off_alpha))
    elem_dofs = np.concatenate(cols, axis=1).astype(np.int64)

    constrained = np.zeros(n_full, dtype=bool)
    bv = np.flatnonzero(m.boundary_vertices)
    for c in range(ct):
        constrained[off_vert + bv * ct + c] = True
    bf = np.flatnonzero(m.boundary_facets)
    for c in range(ct):
        for j in range(p):
            constrained[off_edge + (bf * ct + c) * p + j] = True

    free_index = np.full(n_full, -1, dtype=np.int64)
    free_index[~constrained] = np.arange(int((~constrained).sum()))
    ranges = {"field": (0, off_vert), "vertex": (off_vert, off_edge),
              "edge": (off_edge, off_flux), "flux": (off_flux, off_alpha),
              "alpha": (off_alpha, n_full)}
    return TrialDofMap(kind, p, nt, elem_dofs, constrained, free_index,
                       n_full, ranges)


@dataclass(frozen=True)
class TestLayout:
    """Polynomial degrees of the element-local test space.

    Poisson: tau in P_{r_tau}(K; V), v in P_{r_v}(K).  Elasticity adds the
    skew-valued q in P_p(K; K) and the global scalar beta.
    """

    __test__ = False   # not a pytest class despite the name

    kind: str
    p: int
    r_tau: int
    r_v: int
    r_q: int | None = None

    @property
    def r(self) -> int:
        return max(self.r_tau, self.r_v)

    @property
    def q_degree(self) -> int:
        """Degree of the skew multiplier q; p unless overridden (probing)."""
        return self.p if self.r_q is None else self.r_q

    @property
    def blocks(self) -> dict:
        """Row slices of the local test basis per field."""
        nt, nv = dim_p(self.r_tau), dim_p(self.r_v)
        if self.kind == "poisson":
            return {"tau": slice(0, 2 * nt), "v": slice(2 * nt, 2 * nt + nv)}
        a, b = 3 * nt, 3 * nt + 2 * nv
        return {"tau": slice(0, a), "v": slice(a, b),
                "q": slice(b, b + dim_p(self.q_degree))}

    @property
    def n_local(self) -> int:
        return max(s.stop for s in self.blocks.values())


def build_test_layout(m: Mesh | None, p: int, mode: str = "uniform",
                      r: int | None = None, kind: str = "poisson",
                      validate: bool = True) -> TestLayout:
    """Test degrees: ``uniform`` uses r for both fields (default p + N),
    ``split`` uses (p + 2, p + N).

    ``validate=False`` skips the r >= p + N check (diagnostic use only).
    """
    if kind not in PROBLEMS:
        raise ConfigError(f"unknown problem kind {kind!r}")
    if mode == "split":
        r_tau, r_v = p + 2, p + N_DIM
    elif mode == "uniform":
        if r is None:
            r = p + N_DIM
        r_tau = r_v = r
    else:
        raise ConfigError(f"unknown test mode {mode!r}")
    if validate and min(r_tau, r_v) < p + N_DIM:
        raise ConfigError(
            f"test degree r={min(r_tau, r_v)} < p+N={p + N_DIM} is not accepted")
    if min(r_tau, r_v) < 0:
        raise ConfigError("test degree must be non-negative")
    return TestLayout(kind, p, r_tau, r_v)
