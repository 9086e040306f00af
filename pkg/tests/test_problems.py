import csv

import numpy as np
import pytest

from hingeprox.core import ConstructionError, ContractError, IngestionError
from hingeprox.problems import (
    BIKE_COLUMNS,
    Dataset,
    generate_perturbations,
    load_bike_sharing,
    load_instance,
    make_regression_data,
    make_robust_regression,
    make_synthetic_qp,
    ols,
    rmse,
    save_instance,
)
from hingeprox.reference import kkt_residual


def test_single_component_slater_by_construction():
    inst = make_synthetic_qp(3, 1, 1, 1.0, 2.0, seed=0)
    p = inst.problem
    assert p.g_all(p.slater_point).max() <= -p.slater_margin


def test_equal_conditioning_gives_scaled_identity():
    inst = make_synthetic_qp(4, 5, 3, 2.0, 2.0, seed=1, solve=False)
    for Q in inst.Q:
        assert np.allclose(Q, 2.0 * np.eye(4), atol=1e-14)


@pytest.mark.parametrize("kind", ["linear", "quadratic"])
def test_curvature_bounds_hold(kind):
    inst = make_synthetic_qp(50, 10, 5, 0.5, 8.0, l_g=3.0, constraint_kind=kind, seed=2, solve=False)
    ev = np.linalg.eigvalsh(inst.Q)
    assert ev.min() >= 0.5 - 1e-10 and ev.max() <= 8.0 + 1e-10
    # mean Hessian attains mu exactly so the declared constant is tight
    assert np.linalg.eigvalsh(inst.Q.mean(axis=0)).min() == pytest.approx(0.5, abs=1e-10)
    if kind == "quadratic":
        ep = np.linalg.eigvalsh(inst.P)
        assert ep.min() >= -1e-10 and ep.max() <= 3.0 + 1e-10


def test_desk_instance_reference_quality(desk_qp):
    p, ref = desk_qp.problem, desk_qp.reference
    assert (p.d, p.n, p.m) == (5, 20, 30)
    assert ref.kkt_residual <= 1e-8
    assert kkt_residual(p, ref.x_star, ref.multipliers) <= 1e-8
    assert p.slater_gap_bound == pytest.approx(p.objective(p.slater_point) - ref.f_star)
    assert 0 < len(ref.active) < p.m


def test_construction_errors():
    with pytest.raises(ContractError):
        make_synthetic_qp(3, 2, 2, 2.0, 1.0)
    with pytest.raises(ConstructionError):
        make_synthetic_qp(3, 2, 2, 1.0, 2.0, constraint_kind="quadratic", l_g=0.0)
    with pytest.raises(ConstructionError):
        make_synthetic_qp(3, 2, 2, 1.0, 2.0, nu=0.0)


def test_instance_roundtrip(tmp_path):
    inst = make_synthetic_qp(3, 4, 5, 1.0, 3.0, h_kind="l1", seed=3)
    path = tmp_path / "qp.json"
    save_instance(inst, path)
    back = load_instance(path)
    x = np.array([0.3, -0.2, 1.0])
    assert back.problem.objective(x) == inst.problem.objective(x)
    assert np.array_equal(back.problem.g_all(x), inst.problem.g_all(x))
    assert np.array_equal(back.reference.x_star, inst.reference.x_star)


def test_perturbations_zero_noise_and_mask():
    a = np.array([1.0, 2.0, -3.0])
    assert np.array_equal(generate_perturbations(a, 5, 0.0), np.tile(a, (5, 1)))
    P = generate_perturbations(a, 200, 2.0, mask=[False, True, True], seed=1)
    assert np.all(P[:, 0] == 1.0) and np.any(P[:, 1] != 2.0)
    assert np.array_equal(P, generate_perturbations(a, 200, 2.0, mask=[False, True, True], seed=1))
    with pytest.raises(ContractError):
        generate_perturbations(a, 2, -1.0)


def test_perturbation_variance():
    P = generate_perturbations(np.zeros(1), 10**4, 1.5, seed=4)
    assert abs(P[:, 0].var(ddof=1) / 1.5**2 - 1) <= 0.05


def test_rmse_and_ols():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
    y = np.array([1.0, 3.0, 5.0])
    x = np.array([1.0, 2.0])
    assert rmse(x, X, y) == 0.0
    assert rmse(np.zeros(2), (X, y)) == pytest.approx(np.sqrt(35 / 3))
    with pytest.raises(ContractError):
        rmse(x, np.empty((0, 2)), np.empty(0))
    rng = np.random.default_rng(0)
    A = rng.normal(size=(40, 4))
    b = rng.normal(size=40)
    assert np.allclose(ols(A, b), np.linalg.solve(A.T @ A, A.T @ b), atol=1e-12)


@pytest.fixture(scope="module")
def synth_data():
    return make_regression_data(n_total=200, seed=0)


def test_config1_dimensions(synth_data):
    inst = make_robust_regression(synth_data, 30, 1.0, seed=0, solve=False)
    assert (inst.n, inst.K, inst.m, inst.problem.d) == (140, 30, 4200, 3)
    assert inst.problem.g_all(inst.problem.slater_point).max() <= -inst.problem.slater_margin * (1 - 1e-12)
    # the intercept column is never perturbed
    assert np.all(inst.perturbed[:, :, 0] == 1.0)
    X = inst.X
    l_g = 2.0 * max(float(r @ r) for r in inst.perturbed.reshape(-1, 3))
    assert inst.problem.l_g == pytest.approx(l_g)
    assert inst.problem.mu == pytest.approx(2 * np.linalg.eigvalsh(X.T @ X / inst.n)[0])


def test_dominated_constraints_give_least_squares(synth_data):
    X, y = synth_data.split("train")
    x_ls = ols(X, y)
    big = 4.0 * float(np.max((X @ x_ls - y) ** 2)) + 1.0
    inst = make_robust_regression(synth_data, 1, 0.0, eps=big, seed=0)
    assert np.all(inst.problem.g_all(x_ls) <= 0)
    assert np.allclose(inst.reference.x_star, x_ls, atol=1e-8)


def test_infeasible_tolerance_rejected(synth_data):
    with pytest.raises(ConstructionError):
        make_robust_regression(synth_data, 5, 1.0, eps=1e-6, seed=0, solve=False)


def _write_bike_csv(path, n=400, drop=None, bad=None, seed=0):
    rng = np.random.default_rng(seed)
    cols = ["instant", "dteday"] + BIKE_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c for c in cols if c != drop])
        for k in range(n):
            row = {
                "instant": k + 1, "dteday": "2011-01-01", "season": rng.integers(1, 5), "yr": rng.integers(0, 2),
                "mnth": rng.integers(1, 13), "hr": rng.integers(0, 24), "holiday": rng.integers(0, 2),
                "weekday": rng.integers(0, 7), "workingday": rng.integers(0, 2), "weathersit": rng.integers(1, 5),
                "temp": rng.uniform(0, 1), "atemp": rng.uniform(0, 1), "hum": rng.uniform(0, 1),
                "windspeed": rng.uniform(0, 1), "cnt": rng.integers(1, 900),
            }
            if bad is not None and k == 7:
                row[bad] = "n/a"
            w.writerow([row[c] for c in cols if c != drop])


def test_bike_loader_layout_and_normalization(tmp_path):
    path = tmp_path / "hour.csv"
    _write_bike_csv(path)
    ds = load_bike_sharing(path)
    assert isinstance(ds, Dataset)
    assert ds.d == 51 and ds.columns[0] == "intercept"
    assert len(ds.train_idx) == 280 and len(ds.test_idx) == 120
    X, _ = ds.split("train")
    num = X[:, ds.numeric_mask()]
    assert num.shape[1] == 3
    assert np.all(np.abs(num.mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(num.var(axis=0) - 1) <= 1e-6)
    assert not np.any(np.isnan(ds.features))


def test_bike_loader_missing_column(tmp_path):
    path = tmp_path / "hour.csv"
    _write_bike_csv(path, n=20, drop="hum")
    with pytest.raises(IngestionError) as exc:
        load_bike_sharing(path)
    assert exc.value.column == "hum" and "hum" in str(exc.value)


def test_bike_loader_non_numeric_value(tmp_path):
    path = tmp_path / "hour.csv"
    _write_bike_csv(path, n=20, bad="cnt")
    with pytest.raises(IngestionError) as exc:
        load_bike_sharing(path)
    assert exc.value.column == "cnt"


def test_robust_regression_audits(synth_data):
    from hingeprox.core import check_finite_differences

    inst = make_robust_regression(synth_data, 30, 1.0, seed=0, solve=False)
    p = inst.problem
    assert check_finite_differences(p, n_points=50, seed=0) <= 1e-5
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(0, 3, p.d)
        i, j = int(rng.integers(p.n)), int(rng.integers(p.m))
        assert np.linalg.norm(p.obj_hess(i, x), 2) <= p.l_f * (1 + 1e-12)
        assert np.linalg.norm(p.con_hess(j, x), 2) <= p.l_g * (1 + 1e-12)


def test_ols_matches_normal_equations_rmse(synth_data):
    X, y = synth_data.split("train")
    test = synth_data.split("test")
    x_ne = np.linalg.solve(X.T @ X, X.T @ y)
    assert abs(rmse(ols(X, y), test) / rmse(x_ne, test) - 1) <= 0.02
