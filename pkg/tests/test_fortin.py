import numpy as np
import pytest

from dpg.fortin import (
    COMMUTE_TOL,
    FORTIN_TOL,
    MOMENT_TOL,
    FortinReport,
    build_pi0,
    build_pidiv,
    build_pidiv_sym,
    build_pigrad,
    build_piskew,
    cpi_over_mesh,
    fortin_residual,
    measure_cpi,
    solvability_margins,
    verify_fortin,
)
from dpg.forms import SYM_MATS
from dpg.mesh import refine_uniform, unit_square_mesh
from dpg.refelem import (
    VERTICES,
    dim_p,
    facet_points,
    gauss_interval,
    legendre01,
    quadrature_rule,
    scalar_gradients,
    scalar_values,
)

D = 8
RULE = quadrature_rule(2 * D + 2)
MAPPED = [[0.1, 0.0], [1.3, 0.2], [0.4, 0.9]]


def coefs(fn, d=D):
    """Orthonormal-basis coefficients of a polynomial on the reference triangle."""
    vals = fn(RULE.points)
    return scalar_values(d, RULE.points) @ (RULE.weights * vals)


def evaluate(c, x, d=D):
    return c @ scalar_values(d, x)


# {{{ moment identities against a quadrature oracle

def test_pigrad_moments_for_x_squared():
    p = 1
    P = build_pigrad(p).embedded()
    v = coefs(lambda X: X[:, 0] ** 2)
    e = P @ v - v                           # Pi v - v in coefficients
    # interior: orthogonal to P_{p-1}
    assert abs(RULE.weights @ evaluate(e, RULE.points)) <= MOMENT_TOL
    # boundary: orthogonal to P_p on each facet
    t, w = gauss_interval(2 * D + 2)
    for k in range(3):
        L = np.linalg.norm(VERTICES[(k + 2) % 3] - VERTICES[(k + 1) % 3])
        mom = L * legendre01(p, t) @ (w * evaluate(e, facet_points(k, t)))
        assert np.abs(mom).max() <= MOMENT_TOL
    # Pi^grad v - mean(v) vanishes at the vertices
    mean = 2 * RULE.weights @ RULE.points[:, 0] ** 2
    assert np.allclose(evaluate(P @ v, VERTICES), mean, atol=1e-12)


def test_pidiv_commutes_on_cubic():
    p = 0
    P = build_pidiv(p).embedded()
    n = dim_p(D)
    tau = np.concatenate([coefs(lambda X: X[:, 0] ** 3), coefs(lambda X: X[:, 1] ** 3)])
    pt = P @ tau
    dphi = scalar_gradients(D, RULE.points)
    div_pt = pt[:n] @ dphi[0] + pt[n:] @ dphi[1]
    # L2 projection of 3x^2 + 3y^2 onto P_1
    g = 3 * RULE.points[:, 0] ** 2 + 3 * RULE.points[:, 1] ** 2
    phi1 = scalar_values(p + 1, RULE.points)
    proj = (phi1 @ (RULE.weights * g)) @ phi1
    assert np.abs(div_pt - proj).max() <= 1e-11


def test_pidiv_sym_commutes_on_random_fields():
    p, rng = 1, np.random.default_rng(7)
    P = build_pidiv_sym(p).embedded()
    n = dim_p(D)
    dphi = scalar_gradients(D, RULE.points)
    phi = scalar_values(p + 1, RULE.points)
    for _ in range(3):
        c = np.zeros((3, n))
        c[:, :dim_p(3)] = rng.standard_normal((3, dim_p(3)))
        out = (P @ c.ravel()).reshape(3, n)

        def div(cc):
            grads = np.einsum("mi,cip->mcp", cc, dphi)       # (3, 2, nq)
            return np.einsum("mab,mbp->ap", SYM_MATS, grads)

        proj = np.einsum("ap,ip,p,iq->aq", div(c), phi, RULE.weights, phi)
        assert np.abs(div(out) - proj).max() <= COMMUTE_TOL * np.abs(proj).max()

# }}}


@pytest.mark.parametrize("p", [0, 1, 2, 3])
@pytest.mark.parametrize("kind", ["poisson", "elasticity"])
def test_verify_fortin_reference(kind, p):
    rep = verify_fortin(kind, p, with_cpi=False)
    assert rep.passed, rep.to_text()
    assert rep.residuals["fortin_basis"] <= FORTIN_TOL
    assert rep.residuals["div_commutativity"] <= COMMUTE_TOL
    assert rep.experimental == (kind == "elasticity")


@pytest.mark.parametrize("kind", ["poisson", "elasticity"])
def test_verify_fortin_mapped_element(kind):
    rep = verify_fortin(kind, 1, vertices=MAPPED, with_cpi=False)
    assert rep.passed, rep.to_text()


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_solvability_margins(p):
    assert all(v > 1e-8 for v in solvability_margins(p).values())
    assert build_pidiv_sym(p).notes == "square system nonsingular"


@pytest.mark.parametrize("build", [build_pi0, build_pigrad, build_pidiv, build_pidiv_sym,
                                   build_piskew])
def test_idempotent_and_linear(build):
    P = build(1).embedded()
    assert np.abs(P @ P - P).max() <= 1e-10
    assert not np.any(P @ np.zeros(P.shape[1]))


def test_pigrad_keeps_constants():
    P = build_pigrad(2).embedded()
    one = coefs(lambda X: np.ones(len(X)))
    assert np.allclose(P @ one, one, atol=1e-13)


def test_pi0_target_dimension():
    assert build_pi0(0).target.shape[1] == 3
    assert build_pi0(1).target.shape[1] == 7


def test_probe_degree_too_small():
    with pytest.raises(ValueError):
        build_pidiv(2, probe_degree=3)


def test_zero_probe_residual():
    full, rand = fortin_residual("poisson", 1, trials=4)
    assert full <= FORTIN_TOL and rand <= FORTIN_TOL


# {{{ C_Pi

def test_cpi_at_least_one():
    for kind in ("poisson", "elasticity"):
        assert measure_cpi(kind, 1) >= 1.0 - 1e-12


def test_cpi_stable_under_probe_enlargement():
    a, b = measure_cpi("poisson", 1, 8), measure_cpi("poisson", 1, 10)
    assert abs(b / a - 1) <= 0.05


def test_cpi_uniform_over_refinements():
    m = unit_square_mesh(1)
    maxima = []
    for _ in range(5):
        # one representative per distinct element Jacobian
        _, idx = np.unique(np.round(m.jacobians.reshape(-1, 4), 12), axis=0,
                           return_index=True)
        sub = type(m).from_arrays(m.vertices, m.triangles[np.sort(idx)])
        maxima.append(cpi_over_mesh("poisson", 1, sub).max())
        m = refine_uniform(m)
    assert max(maxima) / min(maxima) - 1 <= 0.10

# }}}


def test_report_text_and_csv():
    rep = verify_fortin("poisson", 0)
    text = rep.to_text()
    assert text.splitlines()[-1] == "result: PASS"
    assert "c_pi_lower_bound" in text
    csv = rep.to_csv().splitlines()
    assert csv[0] == "kind,p,identity,residual,threshold,pass"
    assert all(ln.endswith(",1") for ln in csv[1:])
    bad = FortinReport("poisson", 0, 8)
    bad.add("x", float("nan"), 1e-9)
    assert not bad.passed and bad.failures() == ["x"]
