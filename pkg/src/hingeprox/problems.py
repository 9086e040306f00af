"""Problem instances: synthetic QPs, robust regression, dataset ingestion."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .core import (
    ConstructionError,
    ContractError,
    IngestionError,
    ProblemSpec,
    make_regularizer,
)
from .reference import ReferenceSolution, gap_bound_estimate, solve_exact

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# synthetic QPs


@dataclass
class QpInstance:
    """f_i(x) = x'Q_i x / 2 - c_i'x, linear (A x <= b) or quadratic
    (x'P_j x / 2 + q_j'x <= r_j) constraints, regularizer h."""

    Q: np.ndarray
    c: np.ndarray
    constraint_kind: str
    A: np.ndarray = None
    b: np.ndarray = None
    P: np.ndarray = None
    q: np.ndarray = None
    r: np.ndarray = None
    reg: dict = field(default_factory=lambda: {"kind": "zero"})
    mu: float = 1.0
    l_f: float = 1.0
    l_g: float = 0.0
    slater_point: np.ndarray = None
    slater_margin: float = 1.0
    slater_gap_bound: float = None
    reference: ReferenceSolution = None
    problem: ProblemSpec = field(default=None, repr=False)

    def __post_init__(self):
        if self.problem is None:
            self.problem = self._build()

    def _build(self):
        Q, c = self.Q, self.c
        n, d = c.shape
        Qbar = Q.mean(axis=0)
        cbar = c.mean(axis=0)
        if self.constraint_kind == "linear":
            A, b = self.A, self.b
            m = A.shape[0]
            con_val = lambda j, x: float(A[j] @ x - b[j])
            con_grad = lambda j, x: A[j]
            con_vals = lambda x: A @ x - b
            con_grads = lambda x: A
            con_hess = lambda j, x: np.zeros((d, d))
        elif self.constraint_kind == "quadratic":
            P, qv, r = self.P, self.q, self.r
            m = P.shape[0]
            con_val = lambda j, x: float(0.5 * x @ P[j] @ x + qv[j] @ x - r[j])
            con_grad = lambda j, x: P[j] @ x + qv[j]
            con_vals = lambda x: 0.5 * np.einsum("i,mij,j->m", x, P, x) + qv @ x - r
            con_grads = lambda x: P @ x + qv
            con_hess = lambda j, x: P[j]
        else:
            raise ContractError(f"unknown constraint kind {self.constraint_kind!r}")
        return ProblemSpec(
            d=d,
            n=n,
            m=m,
            obj_grad=lambda i, x: Q[i] @ x - c[i],
            obj_val=lambda i, x: float(0.5 * x @ Q[i] @ x - c[i] @ x),
            con_val=con_val,
            con_grad=con_grad,
            mu=self.mu,
            l_f=self.l_f,
            l_g=self.l_g,
            slater_point=self.slater_point,
            slater_margin=self.slater_margin,
            slater_gap_bound=self.slater_gap_bound,
            reg=make_regularizer(self.reg),
            full_obj_val=lambda x: float(0.5 * x @ Qbar @ x - cbar @ x),
            full_obj_grad=lambda x: Qbar @ x - cbar,
            con_vals=con_vals,
            con_grads=con_grads,
            obj_hess=lambda i, x: Q[i],
            con_hess=con_hess,
            name="synthetic_qp",
        )

    def to_dict(self):
        out = {
            "version": FORMAT_VERSION,
            "type": "qp",
            "Q": self.Q.tolist(),
            "c": self.c.tolist(),
            "constraint_kind": self.constraint_kind,
            "reg": make_regularizer(self.reg).to_dict(),
            "mu": self.mu,
            "l_f": self.l_f,
            "l_g": self.l_g,
            "slater_point": self.slater_point.tolist(),
            "slater_margin": self.slater_margin,
            "slater_gap_bound": self.slater_gap_bound,
            "reference": None if self.reference is None else self.reference.to_dict(),
        }
        for key in ("A", "b", "P", "q", "r"):
            val = getattr(self, key)
            out[key] = None if val is None else val.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FORMAT_VERSION or data.get("type") != "qp":
            raise ContractError("not a version-1 QP instance file")
        arr = lambda k: None if data.get(k) is None else np.asarray(data[k], dtype=float)
        ref = data.get("reference")
        return cls(
            Q=arr("Q"), c=arr("c"), constraint_kind=data["constraint_kind"],
            A=arr("A"), b=arr("b"), P=arr("P"), q=arr("q"), r=arr("r"),
            reg=data["reg"], mu=data["mu"], l_f=data["l_f"], l_g=data["l_g"],
            slater_point=arr("slater_point"), slater_margin=data["slater_margin"],
            slater_gap_bound=data["slater_gap_bound"],
            reference=None if ref is None else ReferenceSolution.from_dict(ref),
        )


def _h_spec(h_kind, h_param):
    if h_kind in (None, "zero"):
        return {"kind": "zero"}
    if h_kind == "l1":
        return {"kind": "l1", "weight": 0.1 if h_param is None else float(h_param)}
    if h_kind == "box":
        bound = 10.0 if h_param is None else float(h_param)
        return {"kind": "box", "lo": -bound, "hi": bound}
    raise ContractError(f"unknown regularizer kind {h_kind!r}")


def make_synthetic_qp(d, n, m, mu, l_f, l_g=0.0, constraint_kind="linear", h_kind="zero", seed=0,
                      nu=0.5, radius=2.0, noise=1.0, cut=0.3, h_param=None, solve=True):
    """Random strongly convex finite-sum QP with certified geometry.

    Q_i = mu I + (l_f - mu) B D_i B' with B an orthonormal d x (d//2) basis
    and D_i diagonal in [0, 1] with max 1, so every f_i is mu-strongly convex
    and l_f-smooth, and the mean Hessian has eigenvalue exactly mu on the
    complement of B.  The unconstrained minimizer x_u sits at distance
    ``radius`` from the Slater point 0; each constraint has margin at least
    ``nu`` at 0 and roughly a fraction ``cut`` of them exclude x_u.
    ``noise`` scales the component gradient spread at the optimum.
    """
    if d < 1 or n < 1 or m < 1:
        raise ContractError("d, n, m must be >= 1")
    if not 0 < mu <= l_f:
        raise ContractError("need 0 < mu <= l_f")
    if nu <= 0:
        raise ConstructionError("slater margin must be positive")
    if constraint_kind == "quadratic" and l_g <= 0:
        raise ConstructionError("quadratic constraints need l_g > 0")
    rng = np.random.default_rng(seed)
    k = d // 2
    B = np.linalg.qr(rng.standard_normal((d, d)))[0][:, :k]
    Q = np.empty((n, d, d))
    for i in range(n):
        D = rng.uniform(0.0, 1.0, size=k)
        if k:
            D[rng.integers(k)] = 1.0
        Q[i] = mu * np.eye(d) + (l_f - mu) * (B * D) @ B.T
        Q[i] = 0.5 * (Q[i] + Q[i].T)
    xu = rng.standard_normal(d)
    xu *= radius / np.linalg.norm(xu)
    xi = noise * rng.standard_normal((n, d))
    xi -= xi.mean(axis=0)
    c = np.einsum("nij,j->ni", Q, xu) + xi
    xs = np.zeros(d)
    kw = {}
    if constraint_kind == "linear":
        A = rng.standard_normal((m, d))
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        proj = A @ xu
        n_cut = max(1, int(round(cut * m)))
        b = np.empty(m)
        order = np.argsort(-proj)
        for rank, j in enumerate(order):
            if rank < n_cut and proj[j] > nu:
                b[j] = rng.uniform(nu, proj[j])
            else:
                b[j] = max(nu, proj[j]) + rng.uniform(0.0, radius)
        kw.update(A=A, b=b)
        l_g_decl = 0.0
    elif constraint_kind == "quadratic":
        P = np.empty((m, d, d))
        qv = np.empty((m, d))
        r = np.empty(m)
        for j in range(m):
            U = np.linalg.qr(rng.standard_normal((d, d)))[0]
            ev = rng.uniform(0.0, l_g, size=d)
            ev[0] = l_g
            P[j] = (U * ev) @ U.T
            P[j] = 0.5 * (P[j] + P[j].T)
            qv[j] = rng.standard_normal(d)
            val_u = 0.5 * xu @ P[j] @ xu + qv[j] @ xu
            if rng.uniform() < cut and val_u > nu:
                r[j] = rng.uniform(nu, val_u)
            else:
                r[j] = max(nu, val_u) + rng.uniform(0.0, radius)
        kw.update(P=P, q=qv, r=r)
        l_g_decl = float(l_g)
    else:
        raise ContractError(f"unknown constraint kind {constraint_kind!r}")
    inst = QpInstance(Q=Q, c=c, constraint_kind=constraint_kind, reg=_h_spec(h_kind, h_param), mu=float(mu),
                      l_f=float(l_f), l_g=l_g_decl, slater_point=xs, slater_margin=float(nu), **kw)
    margin = -inst.problem.g_all(xs).max()
    if margin < nu * (1 - 1e-12):
        raise ConstructionError("slater check failed")
    inst.slater_margin = float(nu)
    if solve:
        attach_reference(inst)
    return inst


def attach_reference(inst, tol=1e-10):
    """Solve for x_star and set B~ = F(x~) - F_star on the instance."""
    p = inst.problem
    p.slater_gap_bound = None
    p.slater_gap_bound = gap_bound_estimate(p)
    ref = solve_exact(p, tol=tol)
    gap = max(p.objective(p.slater_point) - ref.f_star, 0.0)
    inst.slater_gap_bound = float(gap)
    p.slater_gap_bound = float(gap)
    inst.reference = ref
    return ref


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    features: np.ndarray
    target: np.ndarray
    columns: list
    kinds: list  # "intercept", "categorical", "numeric" per column
    train_idx: np.ndarray
    test_idx: np.ndarray
    test_features: np.ndarray = None  # optional deployment-time features for the test split

    @property
    def d(self):
        return self.features.shape[1]

    def split(self, which):
        idx = self.train_idx if which == "train" else self.test_idx
        X = self.features[idx]
        if which == "test" and self.test_features is not None:
            X = self.test_features
        return X, self.target[idx]

    def numeric_mask(self):
        return np.array([k == "numeric" for k in self.kinds])

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "type": "dataset",
            "features": self.features.tolist(),
            "target": self.target.tolist(),
            "columns": list(self.columns),
            "kinds": list(self.kinds),
            "train_idx": self.train_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
            "test_features": None if self.test_features is None else self.test_features.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FORMAT_VERSION or data.get("type") != "dataset":
            raise ContractError("not a version-1 dataset file")
        tf = data.get("test_features")
        return cls(np.asarray(data["features"], float), np.asarray(data["target"], float), data["columns"],
                   data["kinds"], np.asarray(data["train_idx"], int), np.asarray(data["test_idx"], int),
                   None if tf is None else np.asarray(tf, float))


def split_indices(n_total, train_frac, seed):
    perm = np.random.default_rng(seed).permutation(n_total)
    n_train = int(round(train_frac * n_total))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def make_regression_data(n_total=200, coef=(2.0, 5.0, -3.0), feature_scale=1.0, noise=2.0, sigma_test=1.0,
                         train_frac=0.7, seed=0):
    """Two features plus intercept; the held-out features are observed with
    Gaussian measurement error of scale ``sigma_test`` (errors in variables
    at deployment), the training features are clean."""
    rng = np.random.default_rng(seed)
    U = feature_scale * rng.standard_normal((n_total, 2))
    X = np.column_stack([np.ones(n_total), U])
    y = X @ np.asarray(coef, float) + noise * rng.standard_normal(n_total)
    tr, te = split_indices(n_total, train_frac, seed + 1)
    Xte = X[te].copy()
    Xte[:, 1:] += sigma_test * rng.standard_normal((te.size, 2))
    return Dataset(X, y, ["intercept", "x1", "x2"], ["intercept", "numeric", "numeric"], tr, te, Xte)


BIKE_COLUMNS = ["season", "yr", "mnth", "hr", "holiday", "weekday", "workingday", "weathersit", "temp", "atemp",
                "hum", "windspeed", "cnt"]
# one-hot with the first level dropped; the intercept carries the baseline
BIKE_CATEGORICAL = [
    ("season", [1, 2, 3, 4]),
    ("yr", [0, 1]),
    ("mnth", list(range(1, 13))),
    ("hr", list(range(24))),
    ("weekday", list(range(7))),
    ("weathersit", [1, 2, 3]),
    ("holiday", [0, 1]),
]
BIKE_NUMERIC = ["temp", "hum", "windspeed"]


def load_bike_sharing(path, train_frac=0.7, seed=0):
    """Hourly bike-sharing CSV to a 51-column design (intercept first).

    Layout: intercept; drop-first one-hot of season (3), yr (1), mnth (11),
    hr (23), weekday (6), weathersit (2, level 4 merged into 3), holiday (1);
    z-scored temp, hum, windspeed using training-split moments.  workingday
    is a function of weekday and holiday and atemp is a transform of temp,
    so both are validated but left out to keep the design full rank.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            rows = list(reader)
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    for col in BIKE_COLUMNS:
        if col not in header:
            raise IngestionError(f"missing column {col!r}", column=col)
    if not rows:
        raise IngestionError("no data rows")
    data = {}
    for col in BIKE_COLUMNS:
        try:
            data[col] = np.array([float(r[col]) for r in rows])
        except (TypeError, ValueError) as exc:
            raise IngestionError(f"non-numeric value in column {col!r}", column=col) from exc
        if not np.all(np.isfinite(data[col])):
            raise IngestionError(f"missing value in column {col!r}", column=col)
    n_total = len(rows)
    tr, te = split_indices(n_total, train_frac, seed)
    cols = [np.ones(n_total)]
    names, kinds = ["intercept"], ["intercept"]
    for name, levels in BIKE_CATEGORICAL:
        v = data[name].copy()
        if name == "weathersit":
            v[v == 4] = 3
        bad = ~np.isin(v, levels)
        if np.any(bad):
            raise IngestionError(f"unexpected level in column {name!r}", column=name)
        for lev in levels[1:]:
            cols.append((v == lev).astype(float))
            names.append(f"{name}={lev}")
            kinds.append("categorical")
    for name in BIKE_NUMERIC:
        v = data[name]
        mean = v[tr].mean()
        std = v[tr].std()
        if std == 0:
            raise IngestionError(f"constant numeric column {name!r}", column=name)
        z = (v - mean) / std
        z -= z[tr].mean()
        cols.append(z)
        names.append(name)
        kinds.append("numeric")
    X = np.column_stack(cols)
    return Dataset(X, data["cnt"], names, kinds, tr, te)


# ---------------------------------------------------------------------------
# robust regression


def generate_perturbations(a, K, sigma, mask=None, seed=0):
    """K perturbed copies a + delta with Gaussian delta on unmasked coordinates.

    ``mask`` marks coordinates that receive noise (True); ``sigma`` may be a
    scalar or a per-coordinate vector.
    """
    a = np.asarray(a, dtype=float)
    if np.any(np.asarray(sigma) < 0):
        raise ContractError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    delta = rng.standard_normal((K, a.size)) * np.asarray(sigma, dtype=float)
    if mask is not None:
        delta = delta * np.asarray(mask, dtype=bool)
    return a[None, :] + delta


def ols(X, y):
    return np.linalg.lstsq(X, y, rcond=None)[0]


def rmse(x, X, y=None):
    """Root mean-square residual; accepts (x, X, y) or (x, (X, y))."""
    if y is None:
        X, y = X
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ContractError("empty split")
    if X.shape[1] != np.asarray(x).size:
        raise ContractError("dimension mismatch")
    r = X @ x - y
    return float(np.sqrt(np.mean(r * r)))


@dataclass
class RobustRegressionInstance:
    X: np.ndarray  # n x d clean design
    y: np.ndarray
    perturbed: np.ndarray  # n x K x d
    eps: float
    ridge: float
    problem: ProblemSpec
    sigma_train: object = 0.0
    ridge_added: bool = False
    reference: ReferenceSolution = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def K(self):
        return self.perturbed.shape[1]

    @property
    def m(self):
        return self.n * self.K


def _robust_problem(X, y, Pm, eps, ridge, slater_point, nu, b_tilde):
    n, d = X.shape
    K = Pm.shape[1]
    flat = Pm.reshape(n * K, d)
    yy = np.repeat(y, K)
    gram = X.T @ X / n
    rows2 = (X * X).sum(axis=1)
    mu = 2.0 * float(np.linalg.eigvalsh(gram)[0]) + 2.0 * ridge
    l_f = 2.0 * float(rows2.max()) + 2.0 * ridge
    l_g = 2.0 * float((flat * flat).sum(axis=1).max())
    Xty = X.T @ y / n
    yy2 = float(y @ y) / n

    def obj_val(i, x):
        r = X[i] @ x - y[i]
        return float(r * r + ridge * (x @ x))

    def obj_grad(i, x):
        return 2.0 * (X[i] @ x - y[i]) * X[i] + 2.0 * ridge * x

    def con_val(j, x):
        r = flat[j] @ x - yy[j]
        return float(r * r - eps)

    def con_grad(j, x):
        return 2.0 * (flat[j] @ x - yy[j]) * flat[j]

    def con_vals(x):
        r = flat @ x - yy
        return r * r - eps

    def con_grads(x):
        return 2.0 * (flat @ x - yy)[:, None] * flat

    H = 2.0 * gram + 2.0 * ridge * np.eye(d)
    return ProblemSpec(
        d=d, n=n, m=n * K, obj_grad=obj_grad, obj_val=obj_val, con_val=con_val, con_grad=con_grad,
        mu=mu, l_f=l_f, l_g=l_g, slater_point=slater_point, slater_margin=nu, slater_gap_bound=b_tilde,
        full_obj_val=lambda x: float(x @ gram @ x - 2 * Xty @ x + yy2 + ridge * (x @ x)),
        full_obj_grad=lambda x: H @ x - 2.0 * Xty,
        con_vals=con_vals, con_grads=con_grads,
        obj_hess=lambda i, x: 2.0 * np.outer(X[i], X[i]) + 2.0 * ridge * np.eye(d),
        con_hess=lambda j, x: 2.0 * np.outer(flat[j], flat[j]),
        name="robust_regression",
    )


def chebyshev_fit(flat, yy):
    """min_x max_k |flat_k x - yy_k| as a linear program."""
    M, d = flat.shape
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    ones = np.ones((M, 1))
    A_ub = np.vstack([np.hstack([flat, -ones]), np.hstack([-flat, -ones])])
    b_ub = np.concatenate([yy, -yy])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * d + [(0, None)], method="highs")
    if not res.success:
        raise ConstructionError(f"chebyshev fit failed: {res.message}")
    return res.x[:d], float(res.x[-1])


def tune_epsilon(X, y, perturbed, slack=1.5):
    """Smallest feasible tolerance (squared Chebyshev residual) times ``slack``."""
    n, K, d = perturbed.shape
    _, t = chebyshev_fit(perturbed.reshape(n * K, d), np.repeat(y, K))
    return slack * t * t


def feasibility_probe(flat, yy, eps, x0, iters=20000):
    """Deterministic subgradient descent on max_k g_k from ``x0``.

    Returns (x, max_g).  Polyak steps with the known target -eps, which is
    a lower bound of max_k g_k.
    """
    x = np.asarray(x0, dtype=float).copy()
    best_x, best = x.copy(), np.inf
    for _ in range(iters):
        r = flat @ x - yy
        g = r * r - eps
        k = int(np.argmax(g))
        if g[k] < best:
            best, best_x = float(g[k]), x.copy()
        if best <= -0.5 * eps:
            break
        sg = 2.0 * r[k] * flat[k]
        nrm = float(sg @ sg)
        if nrm == 0:
            break
        # Polyak step towards the level -eps/2
        x = x - (g[k] + 0.5 * eps) / nrm * sg
    return best_x, best


def make_robust_regression(dataset, K, sigma_train, eps=None, ridge=None, seed=0, eps_slack=1.5,
                           solve=True, mask=None):
    """Robust regression with n*K squared-loss constraints on perturbed rows.

    ``eps=None`` picks slack times the smallest feasible tolerance.  ``ridge``
    None certifies mu from the design if it is well conditioned and otherwise
    adds 1e-6 * L_f.
    """
    X, y = dataset.split("train")
    n, d = X.shape
    if mask is None:
        mask = dataset.numeric_mask()
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=n)
    Pm = np.stack([generate_perturbations(X[i], K, sigma_train, mask, int(seeds[i])) for i in range(n)])
    if eps is None:
        eps = tune_epsilon(X, y, Pm, eps_slack)
    if not eps > 0:
        raise ContractError("eps must be positive")
    flat = Pm.reshape(n * K, d)
    yy = np.repeat(y, K)
    sv = np.linalg.svd(X / np.sqrt(n), compute_uv=False)
    l_f0 = 2.0 * float((X * X).sum(axis=1).max())
    added = False
    if ridge is None:
        ridge = 0.0
        if sv[-1] ** 2 * 2.0 < 1e-8 * l_f0:
            ridge = 1e-6 * l_f0
            added = True
            warnings.warn(f"design is ill conditioned; adding ridge {ridge:.3g}")
    x_ls = ols(X, y)
    x_cheb, _ = chebyshev_fit(flat, yy)
    x_t, gmax = feasibility_probe(flat, yy, eps, x_ls)
    if gmax > -1e-6 * eps:
        x_t2, gmax2 = feasibility_probe(flat, yy, eps, x_cheb)
        if gmax2 < gmax:
            x_t, gmax = x_t2, gmax2
    if gmax > -1e-6 * eps:
        raise ConstructionError(f"no strictly feasible point found for eps={eps:.6g}; increase eps")
    nu = -gmax
    prob = _robust_problem(X, y, Pm, eps, ridge, x_t, nu, None)
    inst = RobustRegressionInstance(X, y, Pm, float(eps), float(ridge), prob, sigma_train, added)
    if solve:
        attach_reference(inst)
    return inst


def save_instance(inst, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(inst.to_dict(), fh)


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        return QpInstance.from_dict(json.load(fh))
