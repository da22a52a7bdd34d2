import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpg.mesh import refine_uniform, single_element_mesh, unit_square_mesh
from dpg.refelem import VERTICES, dim_p
from dpg.spaces import ConfigError, TestLayout, build_test_layout, build_trial_space


def count_free(m, p, ncomp):
    """Direct count: fields, free vertex/edge trace modes, all flux modes."""
    nfield = {1: 3, 2: 6}[ncomp] * dim_p(p)
    interior_v = (~m.boundary_vertices).sum()
    interior_f = (~m.boundary_facets).sum()
    return (m.n_elements * nfield + ncomp * (interior_v + p * interior_f)
            + ncomp * (p + 1) * m.n_facets + (1 if ncomp == 2 else 0))


def test_single_element_p0():
    m = single_element_mesh(VERTICES)
    d = build_trial_space(m, 0)
    assert d.n_free == 6
    assert d.constrained.sum() == 3
    sl = d.local_slices
    assert sl["sigma"].stop - sl["sigma"].start == 2
    assert sl["u"].stop - sl["u"].start == 1
    assert sl["flux"].stop - sl["flux"].start == 3


def test_two_triangles_p0():
    d = build_trial_space(unit_square_mesh(1), 0)
    # sigma 4 + u 2 + trace 0 (all vertices on the boundary) + flux 5
    assert d.n_free == 11


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.sampled_from(["poisson", "elasticity"]))
def test_free_count_matches_direct_count(n, p, kind):
    m = unit_square_mesh(n)
    d = build_trial_space(m, p, kind)
    assert d.n_free == count_free(m, p, 2 if kind == "elasticity" else 1)


def test_elasticity_single_alpha():
    d = build_trial_space(refine_uniform(unit_square_mesh(1)), 1, "elasticity")
    assert d.alpha_index == d.n_full - 1
    assert np.all(d.elem_dofs[:, -1] == d.alpha_index)
    assert d.ranges["alpha"][1] - d.ranges["alpha"][0] == 1
    assert build_trial_space(unit_square_mesh(1), 1).alpha_index is None


def test_boundary_edge_modes_constrained():
    m = unit_square_mesh(2)
    d = build_trial_space(m, 2)
    e0, e1 = d.ranges["edge"]
    edge = d.constrained[e0:e1].reshape(m.n_facets, 2)
    assert np.array_equal(edge.all(1), m.boundary_facets)
    assert not edge[~m.boundary_facets].any()


def test_shared_dofs_agree_between_neighbours():
    m = unit_square_mesh(2)
    d = build_trial_space(m, 1)
    sl = d.local_slices
    f = np.flatnonzero(~m.boundary_facets)[0]
    K0, K1 = m.facet_elements[f]
    k0 = int(np.flatnonzero(m.elem_facets[K0] == f)[0])
    k1 = int(np.flatnonzero(m.elem_facets[K1] == f)[0])
    flux0 = d.elem_dofs[K0, sl["flux"]][2 * k0:2 * k0 + 2]
    flux1 = d.elem_dofs[K1, sl["flux"]][2 * k1:2 * k1 + 2]
    assert np.array_equal(flux0, flux1)


def test_numbering_deterministic():
    m = unit_square_mesh(3)
    a, b = build_trial_space(m, 2, "elasticity"), build_trial_space(m, 2, "elasticity")
    assert np.array_equal(a.elem_dofs, b.elem_dofs)
    assert np.array_equal(a.free_index, b.free_index)


def test_trial_errors():
    m = unit_square_mesh(1)
    with pytest.raises(ConfigError):
        build_trial_space(m, -1)
    with pytest.raises(ConfigError):
        build_trial_space(m, 1, "stokes")


# {{{ test layout

def test_layout_p0_r2():
    t = build_test_layout(None, 0, r=2)
    assert t.n_local == 12 + 6 == 18


def test_layout_split_equals_uniform():
    s = build_test_layout(None, 1, mode="split")
    u = build_test_layout(None, 1)
    assert (s.r_tau, s.r_v) == (3, 3) == (u.r_tau, u.r_v)


@pytest.mark.parametrize("p, r", [(0, 1), (1, 2), (2, 0)])
def test_layout_rejects_small_r(p, r):
    with pytest.raises(ConfigError):
        build_test_layout(None, p, r=r)


def test_layout_validation_bypass():
    t = build_test_layout(None, 1, r=1, validate=False)
    assert t.r == 1


def test_layout_unknown_mode():
    with pytest.raises(ConfigError):
        build_test_layout(None, 1, mode="graded")


def test_elasticity_layout_blocks():
    t = build_test_layout(None, 1, kind="elasticity")
    b = t.blocks
    assert b["tau"].stop - b["tau"].start == 3 * dim_p(3)
    assert b["v"].stop - b["v"].start == 2 * dim_p(3)
    assert b["q"].stop - b["q"].start == dim_p(1)
    assert TestLayout("elasticity", 1, 3, 3, r_q=4).q_degree == 4

# }}}
