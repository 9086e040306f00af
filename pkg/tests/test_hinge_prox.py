import numpy as np
import pytest

from hingeprox.checks import concavity_defect, random_query
from hingeprox.core import BoxReg, ContractError, L1Reg, ProxEvaluationError
from hingeprox.hinge_prox import (
    HingeProxQuery,
    hinge_prox,
    hinge_prox_closed_form,
    hinge_prox_general,
    hinge_step,
    make_query,
    query_from_linearization,
)
from hingeprox.reference import brute_force_prox

from conftest import quadratic_problem


def q2(b, a=(1.0, 0.0), z=(0.0, 0.0), eta=1.0, **kw):
    return HingeProxQuery.from_affine(np.array(z), np.array(a), b, eta, **kw)


def test_inactive_linearization_is_identity():
    r = hinge_prox_closed_form(q2(-1.0))
    assert r.lam == 0.0 and np.array_equal(r.x, [0.0, 0.0])


def test_interior_multiplier_example():
    q = q2(0.5)
    r = hinge_prox_closed_form(q)
    assert r.lam == 0.5
    assert np.array_equal(r.x, [-0.5, 0.0])
    assert float(q.a @ r.x) + q.b == 0.0
    # grid oracle over lambda: dual maximizer agrees within grid spacing
    lams = np.linspace(0, 1, 10001)
    assert abs(lams[np.argmax([q.dual(l) for l in lams])] - 0.5) <= 1e-4


def test_saturated_multiplier_example():
    r = hinge_prox_closed_form(q2(3.0))
    assert r.lam == 1.0 and np.array_equal(r.x, [-1.0, 0.0])


def test_degenerate_gradient_returns_anchor():
    z = np.array([1.0, 2.0])
    r = hinge_prox_closed_form(HingeProxQuery(z, np.zeros(2), 5.0, 3.0, 1.0))
    assert r.x is z and r.lam == 0.0
    reg = L1Reg(0.5)
    r = hinge_prox_general(HingeProxQuery(z, np.zeros(2), 5.0, 3.0, 1.0, reg.prox, reg.value))
    assert np.array_equal(r.x, reg.prox(1.0, z))


def test_nonpositive_eta_rejected():
    with pytest.raises(ContractError):
        hinge_prox_closed_form(q2(0.5, eta=0.0))
    with pytest.raises(ContractError):
        hinge_prox_general(q2(0.5, eta=-1.0))


def test_general_matches_closed_form_when_h_zero():
    rng = np.random.default_rng(4)
    for _ in range(300):
        q, _ = random_query(rng, "zero")
        assert np.max(np.abs(hinge_prox_general(q).x - hinge_prox_closed_form(q).x)) <= 1e-9


def test_soft_threshold_queries_against_grid_oracle():
    rng = np.random.default_rng(5)
    for k in range(1000):
        q, reg = random_query(rng, "l1")
        r = hinge_prox_general(q)
        _, best = brute_force_prox(q, 10**6, reg=reg)
        assert q.objective(r.x) <= best + 1e-6
        assert 0.0 <= r.lam <= 1.0 and r.complementary_slackness_ok(q)


def test_box_inside_and_inactive_returns_anchor():
    reg = BoxReg(-1.0, 1.0)
    z = np.array([0.3, -0.2, 0.9])
    q = HingeProxQuery.from_affine(z, np.ones(3), -100.0, 0.7, reg.prox, reg.value)
    r = hinge_prox_general(q)
    assert np.allclose(r.x, z, atol=1e-12) and r.lam == 0.0


def test_make_query_examples():
    # quadratic g(x) = |x|^2 - 1 at x_t = (1, 0), gamma = 2
    p = quadratic_problem([[0.0, 0.0]])
    p.con_val = lambda j, x: float(x @ x - 1.0)
    p.con_grad = lambda j, x: 2.0 * x
    x_t = np.array([1.0, 0.0])
    q = make_query(x_t, np.array([0.2, 0.1]), 0, 2.0, 0.5, p)
    assert np.array_equal(q.a, [4.0, 0.0])
    assert q.b == pytest.approx(2.0 * (0.0 - 2.0))
    # affine g(x) = a'x + c: b = gamma*c regardless of x_t
    p2 = quadratic_problem([[0.0, 0.0]], A=[[1.0, -2.0]], b=[3.0])
    for x_t in (np.zeros(2), np.array([5.0, -1.0])):
        assert make_query(x_t, np.ones(2), 0, 1.5, 1.0, p2).b == pytest.approx(1.5 * -3.0)
    # gamma = 0 disables the penalty
    reg = L1Reg(0.3)
    p3 = quadratic_problem([[0.0, 0.0]], A=[[1.0, 0.0]], b=[-10.0], reg=reg)
    z = np.array([2.0, -0.1])
    q = make_query(np.zeros(2), z, 0, 0.0, 1.0, p3)
    assert np.allclose(hinge_prox(q).x, reg.prox(1.0, z))


def test_make_query_consumes_one_unit():
    from hingeprox.core import MeteredOracle

    p = quadratic_problem([[0.0, 0.0]], A=[[1.0, 0.0]], b=[1.0])
    o = MeteredOracle(p, 0)
    make_query(np.zeros(2), np.zeros(2), 0, 1.0, 1.0, p, oracle=o)
    assert o.sfo_count == 1


def test_nonfinite_dual_names_lambda():
    q = HingeProxQuery(np.zeros(2), np.ones(2), 1.0, 1.0, 1.0, lambda eta, w: w, lambda u: np.inf)
    with pytest.raises(ProxEvaluationError) as exc:
        hinge_prox_general(q)
    assert exc.value.lam is not None and "lambda" in str(exc.value)


def test_dual_concavity_on_probes():
    rng = np.random.default_rng(8)
    for _ in range(200):
        q, _ = random_query(rng)
        probes = []
        hinge_prox_general(q, probes=probes)
        assert concavity_defect(probes) <= 1e-10


def test_nonexpansive_in_anchor():
    rng = np.random.default_rng(9)
    for _ in range(500):
        q, reg = random_query(rng)
        z2 = q.z + rng.normal(size=q.z.size)
        q2_ = query_from_linearization(z2, q.z, q.lin_value, q.grad, q.gamma, q.eta, q.prox_h, q.h_val)
        d = np.linalg.norm(hinge_prox(q2_).x - hinge_prox(q).x)
        assert d <= np.linalg.norm(z2 - q.z) + 1e-9


def test_hinge_step_is_projection_for_large_weight():
    x, lam = hinge_step(np.array([2.0, 2.0]), np.array([1.0, 0.0]), 1.0, 1e6, 1.0)
    assert np.array_equal(x, [1.0, 2.0]) and 0 < lam < 1
