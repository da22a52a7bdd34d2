import numpy as np
import pytest
from scipy.linalg import eigh

import oracle
from dpg.extensions import skeleton_gram
from dpg.forms import local_forms
from dpg.mesh import single_element_mesh, unit_square_mesh
from dpg.refelem import VERTICES
from dpg.spaces import TestLayout, build_trial_space
from dpg.study import SOLUTIONS, discretize, solve
from dpg.t2t import local_injectivity_report, local_residual_norms, trial_to_test_local


@pytest.fixture(scope="module", params=["poisson", "elasticity"])
def ops(request):
    m = unit_square_mesh(2)
    trial = build_trial_space(m, 1, request.param)
    test = TestLayout(request.param, 1, 3, 3)
    blocks, gram = local_forms(m, trial, test, f=SOLUTIONS[request.param]().f)
    return trial_to_test_local(gram, blocks)


def test_stiffness_symmetric_psd(ops):
    S = ops.S
    scale = np.abs(S).max()
    assert np.abs(S - S.transpose(0, 2, 1)).max() <= 1e-12 * scale
    lam = np.linalg.eigvalsh(S)
    assert lam.min() >= -1e-12 * scale


def test_two_expressions_agree(ops):
    BtT = np.einsum("kij,kil->kjl", ops.B, ops.T)
    TGT = np.einsum("kij,kil,klm->kjm", ops.T, ops.gram.G, ops.T)
    scale = np.abs(ops.S).max()
    assert np.abs(BtT - ops.S).max() <= 1e-12 * scale
    assert np.abs(TGT - ops.S).max() <= 1e-11 * scale


def test_column_against_dense_oracle():
    """T for the unit sigma = e_1 trial mode against an independently
    assembled (G, B) pair solved densely."""
    m = single_element_mesh(VERTICES)
    p, r = 0, 2
    trial = build_trial_space(m, p)
    blocks, gram = local_forms(m, trial, TestLayout("poisson", p, r, r))
    T = trial_to_test_local(gram, blocks).T[0]
    G = oracle.poisson_gram(m, 0, r)
    B = oracle.poisson_b(m, 0, p, r)
    T_oracle = np.linalg.solve(G, B)
    assert np.abs(T[:, 0] - T_oracle[:, 0]).max() <= 1e-11
    assert np.abs(T - T_oracle).max() <= 1e-11


def test_linearity_zero_trial(ops):
    z = np.zeros(ops.T.shape[2])
    assert not np.any(ops.T[0] @ z)


def test_residual_norms_vanish_for_exact_local_solution():
    m = single_element_mesh(VERTICES)
    trial = build_trial_space(m, 0)
    blocks, gram = local_forms(m, trial, TestLayout("poisson", 0, 2, 2), f=lambda x: 0 * x[..., 0])
    o = trial_to_test_local(gram, blocks)
    assert local_residual_norms(o, np.zeros((1, trial.n_local)))[0] == 0.0
    x = np.random.default_rng(0).standard_normal((1, trial.n_local))
    eta2 = local_residual_norms(o, x)[0]
    # the residual of l - b(x, .) with l = 0 is ||T x||_V^2
    assert eta2 == pytest.approx(x[0] @ o.S[0] @ x[0], rel=1e-12)


def test_local_residual_requires_load():
    m = single_element_mesh(VERTICES)
    trial = build_trial_space(m, 0)
    blocks, gram = local_forms(m, trial, TestLayout("poisson", 0, 2, 2))
    with pytest.raises(ValueError):
        local_residual_norms(trial_to_test_local(gram, blocks), np.zeros((1, trial.n_local)))


def test_injectivity_positive_p0_r2():
    d = discretize(unit_square_mesh(2), 0, "poisson")
    S = d.system.to_dense()
    U = skeleton_gram(d.mesh, 0, d.dofmap).toarray()
    rep = local_injectivity_report(S, U)
    oracle_min = np.sqrt(eigh(S, U, eigvals_only=True)[0])
    assert rep.injective
    assert rep.sigma_min == pytest.approx(oracle_min, rel=1e-8)
    assert "ok" in str(rep)


def test_injectivity_flags_degenerate_test_space():
    """r = p bypasses validation; the report must flag the collapse."""
    d = discretize(unit_square_mesh(2), 0, "poisson", r=0, validate=False)
    S = d.system.to_dense()
    U = skeleton_gram(d.mesh, 0, d.dofmap).toarray()
    rep = local_injectivity_report(S, U)
    if np.linalg.eigvalsh(S)[0] < 1e-12:
        assert not rep.injective
        assert "DEGENERATE" in str(rep)


def test_galerkin_orthogonality_of_exact_residual():
    """After solving, b(U - u_h, T B_i) = 0 for every free trial function."""
    sol = SOLUTIONS["poisson"]()
    d = discretize(unit_square_mesh(4), 1, "poisson", sol)
    x = solve(d)
    loc = d.local(x)
    r = d.ops.load - np.einsum("kij,kj->ki", d.ops.B, loc)
    # sum_K T_K^T r_K scattered over free dofs
    g = np.zeros(d.dofmap.n_free)
    dofs = d.dofmap.free_elem_dofs()
    contrib = np.einsum("kij,ki->kj", d.ops.T, r)
    keep = dofs >= 0
    np.add.at(g, dofs[keep], contrib[keep])
    assert np.abs(g).max() <= 1e-9 * np.abs(d.system.rhs).max()
