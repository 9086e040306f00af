"""High-accuracy deterministic ground truth for small problems.

``solve_exact`` runs cyclic full-information hinge-prox passes on the
penalized problem to get a warm start and a multiplier estimate, then polishes
with an active-set Newton method on the KKT system.  The first stage alone
converges sublinearly and could not reach 1e-10 in any reasonable time; the
second stage removes that limit without changing the answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import ContractError, NonConvergenceError
from .hinge_prox import HingeProxQuery, hinge_prox, query_from_linearization


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float
    kkt_residual: float
    max_violation: float
    method: str
    multipliers: np.ndarray = field(default=None)
    active: list = field(default_factory=list)
    gamma: float = None

    def to_dict(self):
        return {
            "x_star": [float(v) for v in self.x_star],
            "f_star": float(self.f_star),
            "kkt_residual": float(self.kkt_residual),
            "max_violation": float(self.max_violation),
            "method": self.method,
            "multipliers": None if self.multipliers is None else [float(v) for v in self.multipliers],
            "active": [int(j) for j in self.active],
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data):
        mult = data.get("multipliers")
        return cls(
            np.asarray(data["x_star"], dtype=float),
            float(data["f_star"]),
            float(data["kkt_residual"]),
            float(data["max_violation"]),
            data["method"],
            None if mult is None else np.asarray(mult, dtype=float),
            list(data.get("active", [])),
            data.get("gamma"),
        )


def kkt_residual(problem, x, multipliers):
    """Stationarity + complementarity + feasibility residual of (P)."""
    mult = np.asarray(multipliers, dtype=float)
    if mult.shape != (problem.m,):
        raise ContractError("multipliers must have length m")
    if np.any(mult < 0):
        raise ContractError("multipliers must be nonnegative")
    g = problem.g_all(x)
    r = problem.f_grad(x)
    nz = np.nonzero(mult)[0]
    if nz.size:
        r = r + _weighted_con_grad(problem, x, nz, mult[nz])
    stat = problem.reg.min_norm_residual(x, r)
    return stat + float(np.abs(mult * g).sum()) + float(np.maximum(g, 0.0).sum())


def penalized_kkt_residual(problem, x, multipliers, gamma):
    """Residual of the optimality conditions for f + h + (gamma/m) sum [g_j]_+.

    Multipliers are the hinge coefficients scaled by gamma/m.
    """
    mult = np.asarray(multipliers, dtype=float)
    cap = gamma / problem.m
    g = problem.g_all(x)
    r = problem.f_grad(x)
    nz = np.nonzero(mult)[0]
    if nz.size:
        r = r + _weighted_con_grad(problem, x, nz, mult[nz])
    stat = problem.reg.min_norm_residual(x, r)
    out_of_box = np.maximum(-mult, 0.0) + np.maximum(mult - cap, 0.0)
    # a strictly violated constraint needs coefficient cap, a strictly
    # satisfied one needs zero
    mismatch = np.where(g > 0, (cap - mult) * g, 0.0) + np.where(g < 0, -mult * g, 0.0)
    return stat + float(out_of_box.sum()) + float(np.abs(mismatch).sum())


def _weighted_con_grad(problem, x, idx, w):
    if problem.con_grads is not None:
        return w @ problem.grad_g_all(x)[idx]
    out = np.zeros(problem.d)
    for j, wj in zip(idx, w):
        out += wj * problem.con_grad(int(j), x)
    return out


def _fd_jacobian(fun, x, h=1e-6):
    d = x.size
    out = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h * (1.0 + abs(x[k]))
        out[:, k] = (fun(x + e) - fun(x - e)) / (2 * e[k])
    return 0.5 * (out + out.T)


def _f_hess(problem, x):
    H = problem.f_hess(x)
    if H is None:
        H = _fd_jacobian(problem.f_grad, x)
    return H


def _g_hess(problem, j, x):
    if problem.con_hess is not None:
        return problem.con_hess(j, x)
    if problem.l_g == 0:
        return np.zeros((problem.d, problem.d))
    return _fd_jacobian(lambda y: problem.con_grad(j, y), x)


def gap_bound_estimate(problem):
    """Upper bound on F(x~) - F_star from strong convexity of f + h."""
    xs = problem.slater_point
    r = problem.f_grad(xs)
    res = problem.reg.min_norm_residual(xs, r)
    return res * res / (2.0 * problem.mu)


# ---------------------------------------------------------------------------
# warm start


def _cyclic_passes(problem, gamma, x, passes):
    """Full-gradient step then one incremental hinge-prox sweep, repeated.

    Returns the last iterate and the multiplier estimate lam_j * gamma / m
    from the final sweep.
    """
    m = problem.m
    L = max(problem.l_f, gamma * problem.l_g, problem.mu)
    k0 = 2.0 * L / problem.mu
    lam = np.zeros(m)
    prox_h = problem.prox_h if problem.has_h else None
    h_val = problem.h_val if problem.has_h else None
    for k in range(passes):
        eta = 1.0 / (problem.mu * (k + k0))
        x = x - eta * problem.f_grad(x)
        sub = eta / m
        for j in range(m):
            q = query_from_linearization(x, x, problem.con_val(j, x), problem.con_grad(j, x), gamma, sub, prox_h, h_val)
            res = hinge_prox(q)
            x = res.x
            lam[j] = res.lam
        if not np.all(np.isfinite(x)):
            raise NonConvergenceError("warm start diverged", best_x=x)
    return x, lam * gamma / m


# ---------------------------------------------------------------------------
# active-set polish


class _ActiveSet:
    """Classification of constraints and regularizer coordinates.

    con: 0 inactive, 1 boundary (equality), 2 violated (penalized mode only).
    coord: 0 free, otherwise the fixed value code: for l1 a zero coordinate,
    for the box -1 at lo and +1 at hi.  sign: l1 sign of free coordinates.
    """

    def __init__(self, m, d):
        self.con = np.zeros(m, dtype=np.int8)
        self.coord = np.zeros(d, dtype=np.int8)
        self.sign = np.ones(d)


def _newton_polish(problem, x, st, gamma_cap, mode, mult_guess):
    """Solve the equality system induced by the classification ``st``."""
    reg = problem.reg
    d = problem.d
    A = np.nonzero(st.con == 1)[0]
    V = np.nonzero(st.con == 2)[0]
    free = np.nonzero(st.coord == 0)[0]
    fixed = np.nonzero(st.coord != 0)[0]
    x = x.copy()
    if reg.kind == "l1":
        x[fixed] = 0.0
    elif reg.kind == "box":
        x[fixed] = np.where(st.coord[fixed] < 0, reg.lo, reg.hi)
    mu = np.asarray(mult_guess[A], dtype=float).copy() if A.size else np.zeros(0)

    def residual(x, mu):
        r = problem.f_grad(x)
        if reg.kind == "l1":
            r = r + reg.weight * np.where(st.coord == 0, st.sign, 0.0)
        if A.size:
            r = r + _weighted_con_grad(problem, x, A, mu)
        if V.size:
            r = r + _weighted_con_grad(problem, x, V, np.full(V.size, gamma_cap))
        gA = np.array([problem.con_val(int(j), x) for j in A])
        return r, gA

    scale = 1.0 + float(np.abs(problem.f_grad(x)).max())
    for _ in range(60):
        r, gA = residual(x, mu)
        norm = math.hypot(np.linalg.norm(r[free]), np.linalg.norm(gA))
        if norm <= 1e-13 * scale:
            break
        H = _f_hess(problem, x)
        for j, mj in zip(A, mu):
            if mj != 0:
                H = H + mj * _g_hess(problem, int(j), x)
        for j in V:
            H = H + gamma_cap * _g_hess(problem, int(j), x)
        J = np.array([problem.con_grad(int(j), x) for j in A]).reshape(A.size, d)
        Hf = H[np.ix_(free, free)]
        Jf = J[:, free]
        K = np.block([[Hf, Jf.T], [Jf, np.zeros((A.size, A.size))]])
        rhs = -np.concatenate([r[free], gA])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dx = np.zeros(d)
        dx[free] = sol[: free.size]
        dmu = sol[free.size:]
        # damp if the residual grows
        step = 1.0
        for _ in range(30):
            xn = x + step * dx
            mun = mu + step * dmu
            rn, gn = residual(xn, mun)
            nn = math.hypot(np.linalg.norm(rn[free]), np.linalg.norm(gn))
            if nn < norm or step < 1e-6:
                break
            step *= 0.5
        x, mu = xn, mun
    mult = np.zeros(problem.m)
    mult[A] = mu
    mult[V] = gamma_cap
    return x, mult


def _worst_change(problem, x, mult, st, mode, gamma_cap, tol):
    """Find the single most violated optimality condition; apply its fix.

    Returns True if the classification changed.
    """
    reg = problem.reg
    g = problem.g_all(x)
    gscale = 1.0 + np.abs(g).max()
    worst, action = tol, None
    for j in np.nonzero(st.con == 1)[0]:
        if mult[j] < -worst:
            worst, action = -mult[j], ("con", j, 0)
        if mode == "penalized" and mult[j] - gamma_cap > worst:
            worst, action = mult[j] - gamma_cap, ("con", j, 2)
    for j in np.nonzero(st.con == 0)[0]:
        if g[j] / gscale > worst:
            worst, action = g[j] / gscale, ("con", j, 1)
    for j in np.nonzero(st.con == 2)[0]:
        if -g[j] / gscale > worst:
            worst, action = -g[j] / gscale, ("con", j, 1)
    if reg.kind in ("l1", "box"):
        r = problem.f_grad(x)
        nz = np.nonzero(mult)[0]
        if nz.size:
            r = r + _weighted_con_grad(problem, x, nz, mult[nz])
        for k in range(problem.d):
            c = st.coord[k]
            if reg.kind == "l1":
                if c == 0 and x[k] * st.sign[k] < -worst * (1 + abs(x[k])):
                    worst, action = -x[k] * st.sign[k], ("coord", k, 1)
                elif c != 0 and abs(r[k]) - reg.weight > worst:
                    worst, action = abs(r[k]) - reg.weight, ("coord", k, 0)
            else:
                if c == 0 and x[k] < reg.lo - worst:
                    worst, action = reg.lo - x[k], ("coord", k, -1)
                elif c == 0 and x[k] > reg.hi + worst:
                    worst, action = x[k] - reg.hi, ("coord", k, 1)
                elif c < 0 and r[k] < -worst:
                    worst, action = -r[k], ("coord", k, 0)
                elif c > 0 and r[k] > worst:
                    worst, action = r[k], ("coord", k, 0)
    if action is None:
        return False
    kind, idx, new = action
    if kind == "con":
        st.con[idx] = new
    else:
        st.coord[idx] = new
        if reg.kind == "l1" and new == 0:
            r = problem.f_grad(x)
            nz = np.nonzero(mult)[0]
            if nz.size:
                r = r + _weighted_con_grad(problem, x, nz, mult[nz])
            st.sign[idx] = -1.0 if r[idx] > 0 else 1.0
    return True


def _initial_classification(problem, x, mult, mode, gamma_cap):
    st = _ActiveSet(problem.m, problem.d)
    g = problem.g_all(x)
    gscale = 1.0 + np.abs(g).max()
    near = g > -1e-4 * gscale
    st.con[near | (mult > 1e-8 * (1 + mult.max(initial=0)))] = 1
    if mode == "penalized":
        st.con[g > 1e-4 * gscale] = 2
    reg = problem.reg
    if reg.kind == "l1":
        st.coord[np.abs(x) <= 1e-9] = 1
        st.sign = np.where(x < 0, -1.0, 1.0)
    elif reg.kind == "box":
        st.coord[x <= reg.lo + 1e-9] = -1
        st.coord[x >= reg.hi - 1e-9] = 1
    return st


def solve_exact(problem, tol=1e-10, mode="constrained", gamma=None, x0=None, passes=None, max_steps=10**7):
    """Certified minimizer of the constrained problem or its penalized form.

    mode="constrained" solves min f + h s.t. g <= 0.  mode="penalized"
    solves min f + h + (gamma/m) sum [g_j]_+ for the given ``gamma``.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    if mode not in ("constrained", "penalized"):
        raise ContractError(f"unknown mode {mode!r}")
    if mode == "penalized" and gamma is None:
        raise ContractError("penalized mode needs gamma")
    b_tilde = problem.slater_gap_bound
    if b_tilde is None:
        b_tilde = gap_bound_estimate(problem)
    if mode == "constrained":
        warm_gamma = 4.0 * problem.m * b_tilde / problem.slater_margin
    else:
        warm_gamma = float(gamma)
    gamma_cap = warm_gamma / problem.m if mode == "penalized" else np.inf
    x = problem.slater_point.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    if passes is None:
        passes = int(max(10, min(200, 200000 // problem.m)))

    steps_used = 0
    best = None
    attempt = 0
    while steps_used < max_steps:
        attempt += 1
        x, mult = _cyclic_passes(problem, warm_gamma, x, passes)
        steps_used += passes * problem.m
        st = _initial_classification(problem, x, mult, mode, gamma_cap)
        xa = x
        for _ in range(4 * (problem.m + problem.d) + 20):
            xa, mult_a = _newton_polish(problem, xa, st, gamma_cap, mode, mult)
            mult = mult_a
            if not _worst_change(problem, xa, mult_a, st, mode, gamma_cap, 1e-12):
                break
        else:
            mult_a = None
        if mult_a is not None:
            if mode == "constrained":
                res = kkt_residual(problem, xa, np.maximum(mult_a, 0.0))
            else:
                res = penalized_kkt_residual(problem, xa, mult_a, warm_gamma)
            scale = 1.0 + float(np.abs(problem.f_grad(xa)).max())
            if best is None or res < best[1]:
                best = (xa, res, mult_a, st)
            if res <= 100 * tol * scale:
                break
        # refine the warm start and try again
        passes *= 2
        if attempt > 6:
            break
    if best is None or best[1] > 100 * tol * (1.0 + float(np.abs(problem.f_grad(best[0])).max())):
        raise NonConvergenceError(
            "reference solve did not certify a KKT point",
            best_x=None if best is None else best[0],
            residual=None if best is None else best[1],
        )
    xa, res, mult, st = best
    obj = problem.objective(xa)
    if mode == "penalized":
        obj = problem.penalized(xa, warm_gamma)
    return ReferenceSolution(
        x_star=xa,
        f_star=float(obj),
        kkt_residual=float(res),
        max_violation=problem.max_violation(xa),
        method=f"warmstart+active-set/{mode}",
        multipliers=mult,
        active=[int(j) for j in np.nonzero(st.con == 1)[0]],
        gamma=float(warm_gamma),
    )


# ---------------------------------------------------------------------------
# brute-force prox oracle


def _grid_objective(q, lams, reg=None):
    """Primal objective at x(lam) = prox_h(eta, z - eta*lam*gamma*grad), vectorized."""
    v = q.eta * q.gamma * q.grad
    W = q.z[None, :] - lams[:, None] * v[None, :]
    if q.prox_h is None:
        U = W
        hv = 0.0
    else:
        U = q.prox_h(q.eta, W)
        if reg is not None:
            hv = reg.value_rows(U)
        else:
            hv = np.array([q.h_val(u) for u in U]) if q.h_val is not None else 0.0
    lin = q.lin_value + (U - q.z[None, :]) @ q.grad
    diff = q.z[None, :] - U
    return hv + q.gamma * np.maximum(lin, 0.0) + (diff * diff).sum(axis=1) / (2.0 * q.eta), U


def brute_force_prox(q: HingeProxQuery, grid_points=10**6, literal=False, reg=None, fanout=64):
    """Best primal value over the uniform lambda grid of ``grid_points`` nodes.

    With ``literal=True`` every node is evaluated (chunked).  Otherwise the
    exact grid minimum is located on each piece between the regularizer's
    prox breakpoints, where the objective along the path is convex, by a
    vectorized k-ary search over grid indices.  ``reg`` supplies the
    breakpoints and vectorized values; None means h = 0.
    """
    if grid_points < 1000:
        raise ContractError("grid_points must be at least 1000")
    if q.prox_h is not None and reg is None and not literal:
        raise ContractError("search mode needs the regularizer for breakpoints")
    N = int(grid_points)
    if literal:
        best_val, best_x = np.inf, None
        chunk = 1 << 16
        for start in range(0, N, chunk):
            idx = np.arange(start, min(N, start + chunk))
            vals, U = _grid_objective(q, idx / (N - 1), reg)
            k = int(np.argmin(vals))
            if vals[k] < best_val:
                best_val, best_x = float(vals[k]), U[k].copy()
        return best_x, best_val

    v = q.eta * q.gamma * q.grad
    bps = np.empty(0) if reg is None else reg.path_breakpoints(q.eta, q.z, v)
    scaled = bps * (N - 1)
    cuts = np.unique(np.concatenate([[0, N - 1], np.floor(scaled), np.ceil(scaled)]).astype(np.int64))
    cuts = cuts[(cuts >= 0) & (cuts <= N - 1)]
    best_val, best_x = np.inf, None
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        a, b = int(lo), int(hi)
        while True:
            if b - a <= fanout:
                idx = np.arange(a, b + 1)
            else:
                idx = np.unique(np.linspace(a, b, fanout + 1).round().astype(np.int64))
            vals, U = _grid_objective(q, idx / (N - 1), reg)
            k = int(np.argmin(vals))
            if b - a <= fanout:
                if vals[k] < best_val:
                    best_val, best_x = float(vals[k]), U[k].copy()
                break
            a = int(idx[max(k - 1, 0)])
            b = int(idx[min(k + 1, idx.size - 1)])
    return best_x, best_val


# ---------------------------------------------------------------------------
# exact single-constraint penalized prox (inner-loop audit)


def solve_prox_subproblem(problem, j, z, eta, gamma, tol=1e-13):
    """argmin_u ||z - u||^2/(2 eta) + gamma [g_j(u)]_+ for h = 0.

    Uses the one-dimensional dual in the hinge coefficient alpha: u(alpha)
    minimizes ||z - u||^2/(2 eta) + gamma*alpha*g_j(u); the answer is z if
    g_j(z) <= 0, u(1) if g_j(u(1)) >= 0, else the root of g_j(u(alpha)) = 0.
    """
    if problem.has_h:
        raise ContractError("exact subproblem solver supports h = 0 only")
    z = np.asarray(z, dtype=float)
    if problem.con_val(j, z) <= 0:
        return z.copy()
    d = problem.d

    def u_of(alpha):
        u = z.copy()
        c = gamma * alpha
        for _ in range(100):
            r = (u - z) / eta + c * problem.con_grad(j, u)
            if np.linalg.norm(r) <= 1e-15 * (1 + np.linalg.norm(z) / eta):
                break
            H = np.eye(d) / eta + c * _g_hess(problem, j, u)
            du = np.linalg.solve(H, -r)
            u = u + du
            if np.linalg.norm(du) <= 1e-16 * (1 + np.linalg.norm(u)):
                break
        return u

    u1 = u_of(1.0)
    if problem.con_val(j, u1) >= 0:
        return u1
    alpha = brentq(lambda a: problem.con_val(j, u_of(a)), 0.0, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return u_of(alpha)
