import numpy as np
import pytest
from scipy.stats import chisquare

from hingeprox.core import (
    BoxReg,
    ContractError,
    L1Reg,
    MeteredOracle,
    ProblemSpec,
    ZeroReg,
    check_finite_differences,
)
from hingeprox.problems import make_synthetic_qp

from conftest import quadratic_problem


def test_single_element_support_always_zero():
    p = quadratic_problem([[1.0, 2.0]])
    o = MeteredOracle(p, seed=3)
    assert {o.sample_indices() for _ in range(100)} == {(0, 0)}


def test_constraint_index_uniformity_chi_square():
    p = quadratic_problem([[0.0]], A=np.ones((5, 1)), b=np.ones(5))
    o = MeteredOracle(p, seed=11)
    js = np.array([o.sample_indices()[1] for _ in range(100_000)])
    counts = np.bincount(js, minlength=5)
    freq = counts / js.size
    assert np.all((freq >= 0.19) & (freq <= 0.21))
    assert chisquare(counts).pvalue > 1e-4


def test_same_seed_same_stream_and_different_seed_differs():
    p = quadratic_problem(np.zeros((7, 2)), A=np.eye(2), b=np.ones(2))
    a = [MeteredOracle(p, 5).sample_indices() for _ in range(1)]
    o1, o2, o3 = MeteredOracle(p, 5), MeteredOracle(p, 5), MeteredOracle(p, 6)
    s1 = [o1.sample_indices() for _ in range(5000)]
    s2 = [o2.sample_indices() for _ in range(5000)]
    s3 = [o3.sample_indices() for _ in range(5000)]
    assert s1 == s2 and s1[0] == a[0]
    assert s1 != s3


def test_sfo_call_values_and_metering():
    c = np.array([[1.0, -2.0], [3.0, 0.5]])
    A = np.array([[2.0, 1.0]])
    p = quadratic_problem(c, A=A, b=[1.0])
    o = MeteredOracle(p, 0)
    gf, gv, gg = o.sfo_call(c[1], 1, 0)
    assert np.array_equal(gf, np.zeros(2))
    assert np.array_equal(gg, A[0])
    assert gv == pytest.approx(2 * 3 + 0.5 - 1)
    assert o.sfo_count == 1
    for x in (np.zeros(2), np.ones(2) * 7):
        assert np.array_equal(o.sfo_call(x, 0, 0)[2], A[0])
    assert o.sfo_count == 3
    o.full_obj_grad(np.zeros(2))
    assert o.sfo_count == 5


@pytest.mark.parametrize("i,j", [(-1, 0), (2, 0), (0, 1), (0, -1)])
def test_sfo_call_rejects_out_of_range(i, j):
    p = quadratic_problem(np.zeros((2, 2)), A=np.eye(2)[:1], b=[1.0])
    with pytest.raises(ContractError):
        MeteredOracle(p, 0).sfo_call(np.zeros(2), i, j)


def test_degenerate_sizes_rejected():
    kw = dict(d=2, obj_grad=None, obj_val=None, con_val=None, con_grad=None, mu=1.0, l_f=1.0, l_g=0.0,
              slater_point=np.zeros(2), slater_margin=1.0, slater_gap_bound=0.0)
    with pytest.raises(ContractError):
        ProblemSpec(n=0, m=1, **kw)
    with pytest.raises(ContractError):
        ProblemSpec(n=1, m=0, **kw)
    with pytest.raises(ContractError):
        ProblemSpec(n=1, m=1, **{**kw, "mu": 2.0})


def test_regularizer_prox_first_order_residual():
    rng = np.random.default_rng(0)
    for reg in (ZeroReg(), L1Reg(0.7), BoxReg(-1.0, 1.5)):
        for _ in range(200):
            z = rng.normal(0, 2, 4)
            eta = float(rng.uniform(0.01, 3))
            u = reg.prox(eta, z)
            # 0 in (u - z)/eta + dh(u)
            assert reg.min_norm_residual(u, (u - z) / eta) <= 1e-8


def test_soft_threshold_values():
    reg = L1Reg(1.0)
    assert np.allclose(reg.prox(0.5, np.array([2.0, -0.3, -1.0])), [1.5, 0.0, -0.5])


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_generated_problem_gradients_match_finite_differences(kind):
    inst = make_synthetic_qp(5, 6, 8, 1.0, 10.0, l_g=2.0, constraint_kind=kind, seed=2, solve=False)
    assert check_finite_differences(inst.problem, n_points=100, seed=1) <= 1e-5
