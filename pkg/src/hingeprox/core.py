"""Problem abstraction, oracle metering and seeded randomness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DivergenceError(RuntimeError):
    def __init__(self, message, iteration=None, x=None):
        super().__init__(message)
        self.iteration = iteration
        self.x = x


class NonConvergenceError(RuntimeError):
    def __init__(self, message, best_x=None, residual=None):
        super().__init__(message)
        self.best_x = best_x
        self.residual = residual


class ConstructionError(ValueError):
    pass


class IngestionError(ValueError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ConfigError(ValueError):
    pass


class ProxEvaluationError(ArithmeticError):
    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


# ---------------------------------------------------------------------------
# regularizers


class ZeroReg:
    """h = 0."""

    kind = "zero"

    def prox(self, eta, z):
        return z

    def value(self, x):
        return 0.0

    def value_rows(self, U):
        return np.zeros(U.shape[0])

    def subgrad(self, x):
        return np.zeros_like(x)

    def min_norm_residual(self, x, r):
        # distance from -r to the subdifferential of h at x
        return float(np.linalg.norm(r))

    def path_breakpoints(self, eta, z, v):
        return np.empty(0)

    def to_dict(self):
        return {"kind": "zero"}


class L1Reg:
    """h(x) = weight * ||x||_1, prox is soft thresholding."""

    kind = "l1"

    def __init__(self, weight):
        if weight < 0:
            raise ContractError("l1 weight must be nonnegative")
        self.weight = float(weight)

    def prox(self, eta, z):
        thr = eta * self.weight
        return np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)

    def value(self, x):
        return self.weight * float(np.abs(x).sum())

    def value_rows(self, U):
        return self.weight * np.abs(U).sum(axis=1)

    def subgrad(self, x):
        # kink convention: 0 at x_k = 0
        return self.weight * np.sign(x)

    def min_norm_residual(self, x, r):
        out = r + self.weight * np.sign(x)
        zero = x == 0
        out[zero] = np.maximum(np.abs(r[zero]) - self.weight, 0.0)
        return float(np.linalg.norm(out))

    def path_breakpoints(self, eta, z, v):
        # lambda values where z - lambda*v crosses +-eta*weight
        thr = eta * self.weight
        out = []
        nz = v != 0
        for s in (thr, -thr):
            lam = (z[nz] - s) / v[nz]
            out.append(lam)
        lam = np.concatenate(out) if out else np.empty(0)
        return np.sort(lam[(lam > 0) & (lam < 1)])

    def to_dict(self):
        return {"kind": "l1", "weight": self.weight}


class BoxReg:
    """Indicator of the box [lo, hi]^d, prox is clipping."""

    kind = "box"

    def __init__(self, lo, hi):
        if not lo < hi:
            raise ContractError("box requires lo < hi")
        self.lo = float(lo)
        self.hi = float(hi)

    def prox(self, eta, z):
        return np.clip(z, self.lo, self.hi)

    def value(self, x):
        tol = 1e-12 * (1.0 + max(abs(self.lo), abs(self.hi)))
        if np.any(x < self.lo - tol) or np.any(x > self.hi + tol):
            return float("inf")
        return 0.0

    def value_rows(self, U):
        tol = 1e-12 * (1.0 + max(abs(self.lo), abs(self.hi)))
        bad = np.any((U < self.lo - tol) | (U > self.hi + tol), axis=1)
        return np.where(bad, np.inf, 0.0)

    def subgrad(self, x):
        return np.zeros_like(x)

    def min_norm_residual(self, x, r):
        out = r.copy()
        at_lo = x <= self.lo
        at_hi = x >= self.hi
        # normal cone at lo is (-inf, 0], at hi is [0, inf)
        out[at_lo] = np.minimum(r[at_lo], 0.0)
        out[at_hi] = np.maximum(r[at_hi], 0.0)
        return float(np.linalg.norm(out))

    def path_breakpoints(self, eta, z, v):
        out = []
        nz = v != 0
        for s in (self.lo, self.hi):
            out.append((z[nz] - s) / v[nz])
        lam = np.concatenate(out)
        return np.sort(lam[(lam > 0) & (lam < 1)])

    def to_dict(self):
        return {"kind": "box", "lo": self.lo, "hi": self.hi}


def make_regularizer(spec):
    """Build a regularizer from a dict such as {"kind": "l1", "weight": 0.1}."""
    if spec is None:
        return ZeroReg()
    if isinstance(spec, (ZeroReg, L1Reg, BoxReg)):
        return spec
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return ZeroReg()
    if kind == "l1":
        return L1Reg(spec.get("weight", 0.1))
    if kind == "box":
        return BoxReg(spec.get("lo", -1.0), spec.get("hi", 1.0))
    raise ContractError(f"unknown regularizer kind {kind!r}")


# ---------------------------------------------------------------------------
# problem container


@dataclass
class ProblemSpec:
    """Oracle bundle for min f + h subject to g_j <= 0.

    ``f = (1/n) sum_i f_i``.  Optional vectorized hooks (``full_obj_val``,
    ``full_obj_grad``, ``con_vals``, ``con_grads``) and Hessian hooks are used
    by metrics and the reference solver when present; they must agree with
    the per-index oracles.
    """

    d: int
    n: int
    m: int
    obj_grad: Callable
    obj_val: Callable
    con_val: Callable
    con_grad: Callable
    mu: float
    l_f: float
    l_g: float
    slater_point: np.ndarray
    slater_margin: float
    slater_gap_bound: Optional[float]
    reg: object = field(default_factory=ZeroReg)
    full_obj_val: Optional[Callable] = None
    full_obj_grad: Optional[Callable] = None
    con_vals: Optional[Callable] = None
    con_grads: Optional[Callable] = None
    obj_hess: Optional[Callable] = None
    con_hess: Optional[Callable] = None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ContractError("d must be positive")
        if self.n < 1:
            raise ContractError("n must be >= 1 (no objective components)")
        if self.m < 1:
            raise ContractError("m must be >= 1; encode an unconstrained problem with g = -1")
        if not self.mu > 0:
            raise ContractError("mu must be positive")
        if self.l_f < self.mu:
            raise ContractError("l_f must be >= mu")
        if self.l_g < 0:
            raise ContractError("l_g must be nonnegative")
        if not self.slater_margin > 0:
            raise ContractError("slater margin must be positive")
        self.slater_point = np.asarray(self.slater_point, dtype=float)
        if self.slater_point.shape != (self.d,):
            raise ContractError("slater point has wrong shape")
        self.reg = make_regularizer(self.reg)

    # regularizer passthroughs
    def prox_h(self, eta, z):
        return self.reg.prox(eta, z)

    def h_val(self, x):
        return self.reg.value(x)

    @property
    def has_h(self):
        return self.reg.kind != "zero"

    # full-information helpers (not metered; used for metrics and reference)
    def f_val(self, x):
        if self.full_obj_val is not None:
            return float(self.full_obj_val(x))
        return float(sum(self.obj_val(i, x) for i in range(self.n)) / self.n)

    def f_grad(self, x):
        if self.full_obj_grad is not None:
            return np.asarray(self.full_obj_grad(x), dtype=float)
        g = np.zeros(self.d)
        for i in range(self.n):
            g += self.obj_grad(i, x)
        return g / self.n

    def g_all(self, x):
        if self.con_vals is not None:
            return np.asarray(self.con_vals(x), dtype=float)
        return np.array([self.con_val(j, x) for j in range(self.m)])

    def grad_g_all(self, x):
        if self.con_grads is not None:
            return np.asarray(self.con_grads(x), dtype=float)
        return np.array([self.con_grad(j, x) for j in range(self.m)])

    def objective(self, x):
        """f(x) + h(x)."""
        return self.f_val(x) + self.h_val(x)

    def total_violation(self, x):
        return float(np.maximum(self.g_all(x), 0.0).sum())

    def max_violation(self, x):
        return float(max(np.max(self.g_all(x)), 0.0))

    def penalized(self, x, gamma):
        """F(x) = f + h + (gamma/m) sum_j [g_j]_+."""
        return self.objective(x) + gamma / self.m * self.total_violation(x)

    def phi_j(self, j, x, gamma):
        return self.h_val(x) + gamma * max(self.con_val(j, x), 0.0)

    def f_hess(self, x):
        if self.obj_hess is None:
            return None
        return sum(self.obj_hess(i, x) for i in range(self.n)) / self.n

    def check_slater(self, tol=0.0):
        vals = self.g_all(self.slater_point)
        return bool(np.all(vals <= -self.slater_margin + tol))


# ---------------------------------------------------------------------------
# metered oracle and index streams


_BLOCK = 4096


class _IndexStream:
    """Uniform integers in [0, k) drawn in fixed-size blocks.

    Backed by numpy's Philox counter-based generator; bounded integers use
    numpy's Lemire rejection method, so there is no modulo bias.
    """

    def __init__(self, seed_seq, k):
        self._gen = np.random.Generator(np.random.Philox(seed_seq))
        self._k = int(k)
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self):
        if self._pos >= self._buf.size:
            if self._k == 1:
                self._buf = np.zeros(_BLOCK, dtype=np.int64)
            else:
                self._buf = self._gen.integers(0, self._k, size=_BLOCK)
            self._pos = 0
        v = int(self._buf[self._pos])
        self._pos += 1
        return v


class _CoinStream:
    def __init__(self, seed_seq, p):
        self._gen = np.random.Generator(np.random.Philox(seed_seq))
        self._p = float(p)
        self._buf = np.empty(0)
        self._pos = 0

    def next(self):
        if self._pos >= self._buf.size:
            self._buf = self._gen.random(_BLOCK)
            self._pos = 0
        v = self._buf[self._pos] < self._p
        self._pos += 1
        return bool(v)


class MeteredOracle:
    """Counts oracle units: one per individual gradient evaluation.

    The i-stream, j-stream and checkpoint coin are independent Philox
    streams spawned from ``SeedSequence(seed)``.
    """

    def __init__(self, problem: ProblemSpec, seed: int = 0):
        self.problem = problem
        self.sfo_count = 0
        ss_i, ss_j, ss_c = np.random.SeedSequence(int(seed)).spawn(3)
        self._i = _IndexStream(ss_i, problem.n)
        self._j = _IndexStream(ss_j, problem.m)
        self._coin = _CoinStream(ss_c, 1.0 / problem.n)

    def sample_indices(self):
        return self._i.next(), self._j.next()

    def sample_i(self):
        return self._i.next()

    def sample_j(self):
        return self._j.next()

    def checkpoint_coin(self):
        """Bernoulli(1/n) draw."""
        return self._coin.next()

    def _check_i(self, i):
        if not 0 <= i < self.problem.n:
            raise ContractError(f"objective index {i} out of range [0, {self.problem.n})")

    def _check_j(self, j):
        if not 0 <= j < self.problem.m:
            raise ContractError(f"constraint index {j} out of range [0, {self.problem.m})")

    def sfo_call(self, x, i, j):
        """Bundled call: (grad f_i(x), g_j(x), grad g_j(x)); one unit."""
        self._check_i(i)
        self._check_j(j)
        p = self.problem
        out = p.obj_grad(i, x), p.con_val(j, x), p.con_grad(j, x)
        self.sfo_count += 1
        return out

    def obj_grad(self, i, x):
        self._check_i(i)
        self.sfo_count += 1
        return self.problem.obj_grad(i, x)

    def con_eval(self, j, x):
        """(g_j(x), grad g_j(x)); one unit."""
        self._check_j(j)
        self.sfo_count += 1
        return self.problem.con_val(j, x), self.problem.con_grad(j, x)

    def full_obj_grad(self, x):
        """Full gradient of f; n units."""
        self.sfo_count += self.problem.n
        return self.problem.f_grad(x)


def check_finite_differences(problem, n_points=100, seed=0, rtol=1e-5, scale=1.0):
    """Central finite-difference audit of obj_grad and con_grad.

    Returns the worst relative error found over ``n_points`` random points.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    d = problem.d
    for _ in range(n_points):
        x = problem.slater_point + scale * rng.standard_normal(d)
        i = int(rng.integers(problem.n))
        j = int(rng.integers(problem.m))
        for fun, grad in (
            (lambda y: problem.obj_val(i, y), problem.obj_grad(i, x)),
            (lambda y: problem.con_val(j, y), problem.con_grad(j, x)),
        ):
            h = 1e-5 * (1.0 + np.abs(x))
            fd = np.empty(d)
            for k in range(d):
                e = np.zeros(d)
                e[k] = h[k]
                fd[k] = (fun(x + e) - fun(x - e)) / (2 * h[k])
            denom = max(np.linalg.norm(grad), np.linalg.norm(fd), 1.0)
            worst = max(worst, float(np.linalg.norm(fd - grad) / denom))
    return worst
