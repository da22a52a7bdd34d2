import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from dpg.forms import (
    IDENTITY_COORDS,
    SYM_MATS,
    ComplianceTensor,
    compliance_apply,
    local_b_elasticity,
    local_b_poisson,
    local_gram_elasticity,
    local_gram_poisson,
    q0,
)
from dpg.mesh import Mesh, single_element_mesh, unit_square_mesh
from dpg.refelem import VERTICES, dim_p
from dpg.spaces import TestLayout, build_trial_space


def random_element(rng):
    while True:
        X = rng.uniform(-1, 2, (3, 2))
        A = np.stack([X[1] - X[0], X[2] - X[0]], 1)
        det = np.linalg.det(A)
        if abs(det) > 0.3:
            if det < 0:
                X = X[[0, 2, 1]]
            return single_element_mesh(X)


@pytest.fixture(scope="module")
def perturbed_mesh():
    rng = np.random.default_rng(0)
    m = unit_square_mesh(2)
    V = m.vertices + 0.06 * rng.standard_normal(m.vertices.shape) \
        * (~m.boundary_vertices)[:, None]
    return Mesh.from_arrays(V, m.triangles)


def rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1.0)


PR = [(0, 2), (1, 3), (2, 4), (3, 5), (1, 5)]


# {{{ Poisson

@pytest.mark.parametrize("p, r", PR)
def test_poisson_b_matches_oracle_random_elements(p, r):
    rng = np.random.default_rng(p * 10 + r)
    for _ in range(4 if p + r > 5 else 8):
        m = random_element(rng)
        B = local_b_poisson(m, build_trial_space(m, p), TestLayout("poisson", p, r, r)).B[0]
        assert rel(B, oracle.poisson_b(m, 0, p, r)) <= 1e-12


@pytest.mark.parametrize("p, r", PR[:4])
def test_poisson_on_mesh_with_interior_facets(perturbed_mesh, p, r):
    m = perturbed_mesh
    t = TestLayout("poisson", p, r, r)
    B = local_b_poisson(m, build_trial_space(m, p), t).B
    G = local_gram_poisson(m, t).G
    for K in range(m.n_elements):
        assert rel(B[K], oracle.poisson_b(m, K, p, r)) <= 1e-12
        assert rel(G[K], oracle.poisson_gram(m, K, r)) <= 1e-12


def test_poisson_simple_entries():
    m = single_element_mesh(VERTICES)
    t = TestLayout("poisson", 0, 2, 2)
    B = local_b_poisson(m, build_trial_space(m, 0), t).B[0]
    c = np.sqrt(2.0)          # value of the constant orthonormal mode
    # sigma = e_1, tau = e_1 (constants): (sigma, tau) = 1/2
    assert B[0, 0] / (c * c) == pytest.approx(0.5)
    # div tau = 0 for constant tau: u column vanishes on constant tau rows
    n2 = dim_p(2)
    assert B[0, 2] == pytest.approx(0.0, abs=1e-15)
    assert B[n2, 2] == pytest.approx(0.0, abs=1e-15)
    G = local_gram_poisson(m, t).G[0]
    # ||1||_V^2 = 1/2 and ||e_1||_V^2 = 1/2
    assert G[2 * n2, 2 * n2] / (c * c) == pytest.approx(0.5)
    assert G[0, 0] / (c * c) == pytest.approx(0.5)


def test_poisson_quadrature_check():
    m = single_element_mesh(VERTICES)
    with pytest.raises(ValueError, match="quadrature"):
        local_b_poisson(m, build_trial_space(m, 1), TestLayout("poisson", 1, 3, 3), qdeg=2)


def test_skeleton_antisymmetry(perturbed_mesh):
    """The flux unknown enters the two neighbours with opposite signs."""
    m = perturbed_mesh
    p, r = 1, 3
    trial = build_trial_space(m, p)
    B = local_b_poisson(m, trial, TestLayout("poisson", p, r, r)).B
    sl = trial.local_slices
    f = int(np.flatnonzero(~m.boundary_facets)[0])
    K0, K1 = m.facet_elements[f]
    n = dim_p(r)
    # test v = 1 (mode 0) on each element: <1, flux_j>_F for the shared facet
    k0 = int(np.flatnonzero(m.elem_facets[K0] == f)[0])
    k1 = int(np.flatnonzero(m.elem_facets[K1] == f)[0])
    a = B[K0, 2 * n, sl["flux"]][2 * k0]
    b = B[K1, 2 * n, sl["flux"]][2 * k1]
    assert a == pytest.approx(-b, rel=1e-12)
    assert abs(a) == pytest.approx(np.sqrt(2) * np.linalg.norm(
        np.diff(m.vertices[m.facets[f]], axis=0)), rel=1e-12)

# }}}


# {{{ elasticity

@pytest.fixture(params=[(1.0, 1.0), (0.5, 3.0)])
def lame(request):
    return request.param


@pytest.mark.parametrize("p, r", PR[:4])
def test_elasticity_b_matches_oracle(perturbed_mesh, p, r, lame):
    m = perturbed_mesh
    C = ComplianceTensor.isotropic(*lame, m.n_elements)
    t = TestLayout("elasticity", p, r, r)
    blk = local_b_elasticity(m, build_trial_space(m, p, "elasticity"), t, C)
    G = local_gram_elasticity(m, t).G
    for K in range(m.n_elements):
        Bo, bo = oracle.elasticity_b(m, K, p, r, C.matrices[K], C.q0())
        assert rel(blk.B[K], Bo) <= 1e-12
        assert rel(blk.beta_row[K], bo) <= 1e-12
        assert rel(G[K], oracle.elasticity_gram(m, K, r, p)) <= 1e-12


def test_elasticity_random_elements():
    rng = np.random.default_rng(5)
    for _ in range(6):
        m = random_element(rng)
        C = ComplianceTensor.isotropic(1.0, 1.0, 1)
        blk = local_b_elasticity(m, build_trial_space(m, 1, "elasticity"),
                                 TestLayout("elasticity", 1, 3, 3), C)
        Bo, _ = oracle.elasticity_b(m, 0, 1, 3, C.matrices[0], C.q0())
        assert rel(blk.B[0], Bo) <= 1e-12


def test_skew_sigma_invisible_to_compliance():
    """A acts on sym(sigma): a purely skew trial sigma has no (A sigma, tau)."""
    m = single_element_mesh(VERTICES)
    C = ComplianceTensor.isotropic(1.0, 1.0, 1)
    trial = build_trial_space(m, 0, "elasticity")
    t = TestLayout("elasticity", 0, 2, 2)
    B = local_b_elasticity(m, trial, t, C).B[0]
    skew = np.array([0.0, 1.0, -1.0, 0.0])      # sigma_12 = -sigma_21, p = 0
    tau_rows = t.blocks["tau"]
    assert np.abs(B[tau_rows, :4] @ skew).max() <= 1e-14
    # symmetric constant sigma against skew q vanishes
    sym = np.array([0.0, 1.0, 1.0, 0.0])
    assert np.abs(B[t.blocks["q"], :4] @ sym).max() <= 1e-14
    # while the skew sigma is seen by q
    assert np.abs(B[t.blocks["q"], :4] @ skew).max() > 0.1


def test_elasticity_gram_constants():
    m = single_element_mesh([[0, 0], [2, 0], [0, 1]])
    t = TestLayout("elasticity", 0, 2, 2)
    G = local_gram_elasticity(m, t).G[0]
    area = 1.0
    n2 = dim_p(2)
    # the constant mode has value sqrt(2); tau = S_0 (unit Frobenius norm)
    # and skew q with unit Frobenius frame: ||.||_V^2 = area * |.|_F^2
    assert G[0, 0] / 2 == pytest.approx(area, rel=1e-12)
    q = t.blocks["q"].start
    assert G[q, q] / 2 == pytest.approx(area, rel=1e-12)
    assert G[3 * n2, 3 * n2] / 2 == pytest.approx(area, rel=1e-12)

# }}}


# {{{ compliance

def test_identity_compliance_q0():
    C = ComplianceTensor.identity(2)
    I = np.eye(2)
    assert np.allclose(compliance_apply(C, I), I)
    assert q0(C) == pytest.approx(2.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.0, 100))
def test_isotropic_q0_matches_definition(mu, lam):
    C = ComplianceTensor.isotropic(mu, lam, 1)
    I = np.eye(2)
    AI = compliance_apply(C, I)
    # A sigma = (sigma - lam / (2 mu + 2 lam) tr(sigma) I) / (2 mu)
    expected = (I - lam / (2 * mu + 2 * lam) * 2 * I) / (2 * mu)
    assert np.allclose(AI, expected, rtol=1e-12)
    assert q0(C) == pytest.approx(np.trace(AI), rel=1e-12)
    assert q0(C) == pytest.approx(1.0 / (mu + lam), rel=1e-12)


def test_q0_is_minimum_over_elements():
    a = ComplianceTensor.isotropic(1.0, 1.0, 1).matrices
    b = ComplianceTensor.isotropic(2.0, 1.0, 1).matrices
    C = ComplianceTensor(np.concatenate([a, b]))
    assert q0(C) == pytest.approx(min(IDENTITY_COORDS @ a[0] @ IDENTITY_COORDS,
                                      IDENTITY_COORDS @ b[0] @ IDENTITY_COORDS))


@pytest.mark.parametrize("bad", [
    np.diag([1.0, 1.0, -1.0]),
    np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
])
def test_compliance_rejects_non_spd(bad):
    with pytest.raises(ValueError):
        ComplianceTensor(bad[None])


def test_compliance_apply_symmetric_output():
    C = ComplianceTensor.isotropic(1.3, 0.7, 1)
    S = np.array([[1.0, 2.0], [2.0, -1.0]])
    out = compliance_apply(C, S)
    assert np.allclose(out, out.T)
    assert np.allclose(SYM_MATS.sum(0), SYM_MATS.sum(0).T)

# }}}
