import numpy as np
import pytest

from hingeprox.core import ProblemSpec

ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"[criterion {number}] {'PASS' if passed else 'FAIL'} {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:>2}. {'PASS' if ok else 'FAIL'}  {title}  ({detail})")


def quadratic_problem(centers, A=None, b=None, reg=None, slater=None, nu=1.0, b_tilde=None, mu=1.0):
    """f_i = |x - c_i|^2 / 2 with linear constraints A x <= b (or g = -1)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n, d = centers.shape
    if A is None:
        con_val = lambda j, x: -1.0
        con_grad = lambda j, x: np.zeros(d)
        m = 1
    else:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float)
        m = A.shape[0]
        con_val = lambda j, x: float(A[j] @ x - b[j])
        con_grad = lambda j, x: A[j]
    return ProblemSpec(
        d=d, n=n, m=m,
        obj_grad=lambda i, x: x - centers[i],
        obj_val=lambda i, x: 0.5 * float((x - centers[i]) @ (x - centers[i])),
        con_val=con_val, con_grad=con_grad,
        mu=mu, l_f=mu, l_g=0.0,
        slater_point=np.zeros(d) if slater is None else slater,
        slater_margin=nu, slater_gap_bound=b_tilde, reg=reg,
        obj_hess=lambda i, x: np.eye(d),
    )


@pytest.fixture(scope="session")
def desk_qp():
    from hingeprox.harness import ExperimentConfig, build_problem, shipped_config_path

    cfg = ExperimentConfig.load(shipped_config_path("desk_qp"))
    return build_problem(cfg.problem)
