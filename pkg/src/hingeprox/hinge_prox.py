"""The hinge-proximal operator.

Evaluates

    argmin_u  h(u) + gamma * [gt(u)]_+ + ||z - u||^2 / (2 eta)

where ``gt(u) = c + grad . (u - z)`` is an affine model of one constraint
(``c`` is its value at the anchor ``z``).  In the scaled notation used by
the solvers' derivation, ``a = gamma * grad`` and
``b = gamma * (c - grad . z)``, so the hinge term reads ``[a.u + b]_+``.

The query keeps the unscaled pieces because the feasibility-reduction and
SGD-reduction tests require bitwise agreement with hand-written formulas,
and rescaling by gamma would introduce rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ContractError, ProxEvaluationError

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class HingeProxQuery:
    z: np.ndarray
    grad: np.ndarray
    lin_value: float
    gamma: float
    eta: float
    prox_h: Optional[Callable] = None
    h_val: Optional[Callable] = None

    @property
    def a(self):
        return self.gamma * self.grad

    @property
    def b(self):
        return self.gamma * (self.lin_value - float(self.grad @ self.z))

    @property
    def is_smooth(self):
        return self.prox_h is None

    @classmethod
    def from_affine(cls, z, a, b, eta, prox_h=None, h_val=None):
        """Build from the scaled (a, b) form: hinge term ``[a.u + b]_+``."""
        z = np.asarray(z, dtype=float)
        a = np.asarray(a, dtype=float)
        return cls(z, a, float(b) + float(a @ z), 1.0, float(eta), prox_h, h_val)

    def hinge_value(self, u):
        return self.gamma * max(self.lin_value + float(self.grad @ (u - self.z)), 0.0)

    def objective(self, u):
        """Primal prox objective at u."""
        hv = self.h_val(u) if self.h_val is not None else 0.0
        diff = self.z - u
        return hv + self.hinge_value(u) + float(diff @ diff) / (2.0 * self.eta)

    def dual(self, lam):
        """Concave dual value at lam in [0, 1]."""
        return _dual_and_point(self, lam)[0]


@dataclass
class HingeProxResult:
    x: np.ndarray
    lam: float
    dual_iters: int = 0

    def complementary_slackness_ok(self, q: HingeProxQuery):
        b = q.b
        eps = 1e-8 * (1.0 + abs(b))
        val = float(q.a @ self.x) + b
        if val < -eps and self.lam > eps:
            return False
        if self.lam < 1.0 - eps and val > eps:
            return False
        return 0.0 <= self.lam <= 1.0


def query_from_linearization(z, x_lin, g_val, grad, gamma, eta, prox_h=None, h_val=None):
    """Query for the constraint linearized at ``x_lin`` and anchored at ``z``."""
    lin_value = g_val + float(grad @ (z - x_lin))
    return HingeProxQuery(z, grad, lin_value, gamma, eta, prox_h, h_val)


def make_query(x_t, z_t, j, gamma, eta, problem, oracle=None):
    """Hinge-prox query for constraint j linearized at x_t, anchored at z_t.

    When an oracle is given the constraint evaluation is metered (one unit).
    """
    if gamma < 0:
        raise ContractError("gamma must be nonnegative")
    if not eta > 0:
        raise ContractError("eta must be positive")
    if oracle is not None:
        g_val, grad = oracle.con_eval(j, x_t)
    else:
        g_val, grad = problem.con_val(j, x_t), problem.con_grad(j, x_t)
    if problem.has_h:
        return query_from_linearization(z_t, x_t, g_val, grad, gamma, eta, problem.prox_h, problem.h_val)
    return query_from_linearization(z_t, x_t, g_val, grad, gamma, eta)


def _degenerate(q, s):
    zz = float(q.z @ q.z)
    return q.gamma * q.gamma * s <= 1e-14 * (1.0 + zz)


def hinge_step(z, grad, c, gamma, eta):
    """Closed-form hinge prox for h = 0; returns (x, lam).

    This is the solvers' hot path.  ``c`` is the model value at ``z``.
    """
    s = float(grad @ grad)
    if gamma * gamma * s <= 1e-14 * (1.0 + float(z @ z)):
        return z, 0.0
    if c <= 0.0:
        return z, 0.0
    cap = eta * gamma
    t = c / s
    if t >= cap:
        return z - cap * grad, 1.0
    return z - t * grad, t / cap


def hinge_prox_closed_form(q: HingeProxQuery) -> HingeProxResult:
    if not q.eta > 0:
        raise ContractError("eta must be positive")
    if q.prox_h is not None:
        raise ContractError("closed form requires h = 0")
    x, lam = hinge_step(q.z, q.grad, q.lin_value, q.gamma, q.eta)
    return HingeProxResult(x, lam, 0)


def _dual_and_point(q, lam):
    eta = q.eta
    step = eta * lam * q.gamma
    w = q.z - step * q.grad
    if q.prox_h is None:
        u = w
        hv = 0.0
    else:
        u = q.prox_h(eta, w)
        hv = q.h_val(u) if q.h_val is not None else 0.0
    diff = w - u
    s = float(q.grad @ q.grad)
    val = (
        hv
        + float(diff @ diff) / (2.0 * eta)
        + lam * q.gamma * q.lin_value
        - 0.5 * eta * lam * lam * q.gamma * q.gamma * s
    )
    if not math.isfinite(val):
        raise ProxEvaluationError(f"non-finite dual value at lambda={lam!r}", lam=lam)
    return val, u


def hinge_prox_general(q: HingeProxQuery, tol: float = DEFAULT_TOL, probes=None) -> HingeProxResult:
    """Golden-section search on the concave dual over [0, 1].

    ``probes``, if a list, receives every (lambda, dual value) evaluated so
    the caller can audit concavity.
    """
    if not q.eta > 0:
        raise ContractError("eta must be positive")
    if not tol > 0:
        raise ContractError("tol must be positive")
    s = float(q.grad @ q.grad)
    if _degenerate(q, s):
        x = q.z if q.prox_h is None else q.prox_h(q.eta, q.z)
        return HingeProxResult(x, 0.0, 0)

    def ev(lam):
        v, u = _dual_and_point(q, lam)
        if probes is not None:
            probes.append((lam, v))
        return v, u

    def ascending(lam):
        # sign of the dual derivative gamma * model(u(lam)); the envelope of
        # h is differentiable, so this is exact up to rounding
        _, u = ev(lam)
        return q.lin_value + float(q.grad @ (u - q.z)) > 0.0

    lo, hi = 0.0, 1.0
    x1 = hi - _INV_PHI * (hi - lo)
    x2 = lo + _INV_PHI * (hi - lo)
    f1, _ = ev(x1)
    f2, _ = ev(x2)
    it = 0
    while hi - lo > tol:
        it += 1
        if abs(f1 - f2) <= 1e-13 * (abs(f1) + abs(f2)) + 1e-300:
            # values are indistinguishable in floating point
            left = not ascending(0.5 * (x1 + x2))
        else:
            left = f1 > f2
        if left:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _INV_PHI * (hi - lo)
            f1, _ = ev(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _INV_PHI * (hi - lo)
            f2, _ = ev(x2)
    mid = 0.5 * (lo + hi)
    best_lam, (best_val, best_u) = mid, ev(mid)
    for cand in (0.0, 1.0):
        val, u = ev(cand)
        if val > best_val + 1e-13 * (abs(val) + abs(best_val)):
            best_lam, best_val, best_u = cand, val, u
    return HingeProxResult(best_u, best_lam, it)


def hinge_prox(q: HingeProxQuery, tol: float = DEFAULT_TOL) -> HingeProxResult:
    if q.prox_h is None:
        return hinge_prox_closed_form(q)
    return hinge_prox_general(q, tol)


def three_point_holds(x, z, w, x_ref, eta, gamma, l_g, phi_ref, phi_w, slack=1e-8):
    """Three-point inequality for w = hinge prox of z linearized at x.

    Returns (holds, lhs - rhs).
    """
    lhs = float((w - x_ref) @ (w - x_ref))
    rhs = (
        float((x - x_ref) @ (x - x_ref))
        - (1.0 - eta * gamma * l_g) * float((w - x) @ (w - x))
        + 2.0 * float((x - z) @ (x_ref - w))
        + 2.0 * eta * (phi_ref - phi_w)
    )
    return lhs <= rhs + slack, lhs - rhs
