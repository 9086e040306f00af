"""HPS, VR-HPS and N-HPS with their step-size and penalty rules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import ConfigError, ContractError, DivergenceError, MeteredOracle
from .hinge_prox import hinge_prox_general, hinge_step, query_from_linearization
from .trace import RunTrace, TraceRecorder

ALGORITHMS = ("HPS", "VR_HPS", "N_HPS", "SGD")
GAMMA_T_CAP = 1e12


def step_size_hps(t, mu, l_f, gamma, l_g):
    lt = 2.0 * max(gamma * l_g, mu + l_f)
    return (mu + l_f) / (mu * l_f * t + lt * (mu + l_f))


def step_size_vrhps(t, mu, l_f, gamma, l_g):
    lc = 2.0 * max(gamma * l_g, 2.0 * (mu + l_f))
    return (mu + l_f) / (mu * l_f * t + lc * (mu + l_f))


def step_size_nhps(t, mu, l_f):
    s = mu + l_f
    return 2.0 * s / (mu * l_f * t + 8.0 * s * s)


def step_size_nonsmooth(t, mu, gamma, l_g):
    """min{1/(2 gamma L_g), 1/(2 mu), 1/(mu t)}."""
    cap = 1.0 / (2.0 * mu)
    if gamma * l_g > 0:
        cap = min(cap, 1.0 / (2.0 * gamma * l_g))
    return min(cap, 1.0 / (mu * t))


def choose_penalty(m, b_tilde, nu, mode="theorem_default", factor=2.0):
    """Exact-penalty weight; the default 2 m B~ / nu exceeds the threshold m B~ / nu."""
    if not nu > 0:
        raise ContractError("slater margin nu must be positive")
    if b_tilde < 0:
        raise ContractError("gap bound must be nonnegative")
    if mode == "theorem_default":
        return 2.0 * m * b_tilde / nu
    if mode == "factor":
        return factor * m * b_tilde / nu
    raise ContractError(f"unknown penalty mode {mode!r}")


@dataclass
class NhpsConfig:
    beta: Optional[float] = None  # None: adaptive rule
    tau: Optional[int] = None  # None: adaptive rule
    kappa: Optional[float] = None  # None: L_f / mu


@dataclass
class SolverConfig:
    """Solver selection and schedules.

    step_rule: "theorem", "nonsmooth_hps", a positive float (constant step),
    a dict ``{"c": c, "t0": t0}`` meaning eta_t = c / (t + t0), or a callable
    ``t -> eta_t``.  gamma: None for the theorem default, else explicit.
    """

    algorithm: str = "HPS"
    t_max: int = 1000
    sfo_budget: Optional[int] = None
    seed: int = 0
    gamma: Optional[float] = None
    step_rule: Union[str, float, dict, Callable] = "theorem"
    nhps: NhpsConfig = field(default_factory=NhpsConfig)
    record_every: Optional[int] = None
    record_iters: Optional[list] = None
    wall_clock: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if int(self.t_max) < 1:
            raise ConfigError("t_max must be >= 1")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("explicit gamma must be >= 0")
        if isinstance(self.step_rule, (int, float)) and not isinstance(self.step_rule, bool):
            if self.step_rule <= 0:
                raise ConfigError("explicit step size must be positive")
        elif isinstance(self.step_rule, str):
            if self.step_rule not in ("theorem", "nonsmooth_hps"):
                raise ConfigError(f"unknown step rule {self.step_rule!r}")
        elif isinstance(self.step_rule, dict):
            if self.step_rule.get("c", 0) <= 0 or self.step_rule.get("t0", 0) < 0:
                raise ConfigError("schedule needs c > 0 and t0 >= 0")
        elif not callable(self.step_rule):
            raise ConfigError("unsupported step rule")
        if isinstance(self.nhps, dict):
            self.nhps = NhpsConfig(**self.nhps)
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be >= 1")


@dataclass
class VrState:
    y_table: np.ndarray
    y_bar: np.ndarray
    checkpoint: np.ndarray
    full_grad: np.ndarray


@dataclass
class SolverOutput:
    x_final: np.ndarray
    trace: RunTrace
    sfo_used: int
    iterations: int
    gamma: float
    inner_iter_total: int = 0
    tau_history: Optional[np.ndarray] = None
    vr_state: Optional[VrState] = None
    refreshes: int = 0


def resolve_gamma(problem, config):
    if config.gamma is not None:
        return float(config.gamma)
    if problem.slater_gap_bound is None:
        raise ConfigError("theorem penalty needs the problem's gap bound B~")
    return choose_penalty(problem.m, problem.slater_gap_bound, problem.slater_margin)


def make_schedule(problem, config, gamma, algorithm=None):
    rule = config.step_rule
    alg = algorithm or config.algorithm
    mu, lf, lg = problem.mu, problem.l_f, problem.l_g
    if callable(rule) and not isinstance(rule, (str, dict)):
        return rule
    if isinstance(rule, dict):
        c, t0 = float(rule["c"]), float(rule["t0"])
        return lambda t: c / (t + t0)
    if isinstance(rule, (int, float)):
        val = float(rule)
        return lambda t: val
    if rule == "nonsmooth_hps":
        return lambda t: step_size_nonsmooth(t, mu, gamma, lg)
    if alg == "VR_HPS":
        return lambda t: step_size_vrhps(t, mu, lf, gamma, lg)
    if alg == "N_HPS":
        return lambda t: step_size_nhps(t, mu, lf)
    return lambda t: step_size_hps(t, mu, lf, gamma, lg)


def _start(problem, x0):
    x = problem.slater_point.copy() if x0 is None else np.array(x0, dtype=float)
    if x.shape != (problem.d,) or not np.all(np.isfinite(x)):
        raise ContractError("x0 must be a finite d-vector")
    return x


class _Guard:
    def __init__(self, x1):
        self.limit = 1e9 * (1.0 + float(np.linalg.norm(x1)))

    def check(self, x, t):
        nrm = float(np.sqrt(x @ x))
        if not nrm <= self.limit:  # also catches nan
            raise DivergenceError(f"iterate diverged at iteration {t} (norm {nrm:.3g})", iteration=t, x=x)


def _prox(problem, z, x_lin, g_val, grad, gamma, eta):
    if problem.has_h:
        q = query_from_linearization(z, x_lin, g_val, grad, gamma, eta, problem.prox_h, problem.h_val)
        r = hinge_prox_general(q)
        return r.x, r.lam
    c = g_val + float(grad @ (z - x_lin))
    return hinge_step(z, grad, c, gamma, eta)


def _recorder(problem, config, reference):
    return TraceRecorder(problem, reference, config.record_every, config.record_iters, config.wall_clock)


def _over_budget(config, oracle):
    return config.sfo_budget is not None and oracle.sfo_count >= config.sfo_budget


def run_hps(problem, config, x0=None, reference=None, callback=None):
    """Hinge-proximal SGD.

    Each iteration: one bundled oracle call, an SGD step on f_i, then the
    hinge prox of the sampled constraint linearized at the current point.
    ``callback(t, x, z, x_next, j, eta, gamma, lam)`` is invoked per step.
    """
    oracle = MeteredOracle(problem, config.seed)
    gamma = resolve_gamma(problem, config)
    eta_of = make_schedule(problem, config, gamma, "HPS")
    x = _start(problem, x0)
    guard = _Guard(x)
    rec = _recorder(problem, config, reference)
    rec.record(oracle.sfo_count, 1, x)
    t = 1
    for t in range(1, int(config.t_max)):
        if _over_budget(config, oracle):
            t -= 1
            break
        eta = eta_of(t)
        i, j = oracle.sample_indices()
        gf, g_val, gg = oracle.sfo_call(x, i, j)
        z = x - eta * gf
        x_next, lam = _prox(problem, z, x, g_val, gg, gamma, eta)
        guard.check(x_next, t)
        if callback is not None:
            callback(t, x, z, x_next, j, eta, gamma, lam)
        x = x_next
        rec.maybe(oracle.sfo_count, t + 1, x)
    else:
        t = int(config.t_max) - 1
    return SolverOutput(x, rec.trace, oracle.sfo_count, t, gamma)


def run_sgd(problem, config, x0=None, reference=None):
    """Plain SGD on f (constraints and h ignored); the reduction target of HPS."""
    oracle = MeteredOracle(problem, config.seed)
    gamma = resolve_gamma(problem, config) if config.gamma is not None or problem.slater_gap_bound is not None else 0.0
    eta_of = make_schedule(problem, config, gamma, "HPS")
    x = _start(problem, x0)
    rec = _recorder(problem, config, reference)
    rec.record(oracle.sfo_count, 1, x)
    for t in range(1, int(config.t_max)):
        eta = eta_of(t)
        i, j = oracle.sample_indices()
        gf, _, _ = oracle.sfo_call(x, i, j)
        x = x - eta * gf
        rec.maybe(oracle.sfo_count, t + 1, x)
    return SolverOutput(x, rec.trace, oracle.sfo_count, int(config.t_max) - 1, gamma)


def init_vr_state(problem, oracle, x, gamma):
    """Checkpoint x, its full gradient (n units) and the subgradient table (m units)."""
    full = oracle.full_obj_grad(x)
    hs = problem.reg.subgrad(x)
    table = np.empty((problem.m, problem.d))
    for j in range(problem.m):
        g_val, gg = oracle.con_eval(j, x)
        table[j] = hs + gamma * gg if g_val > 0 else hs
    return VrState(table, table.mean(axis=0), x.copy(), full)


def run_vr_hps(problem, config, x0=None, reference=None, callback=None):
    """Variance-reduced HPS.

    ``callback(t, x, z, x_next, j, eta, gamma, lam, state)`` sees the state
    after the table update.
    """
    oracle = MeteredOracle(problem, config.seed)
    gamma = resolve_gamma(problem, config)
    eta_of = make_schedule(problem, config, gamma, "VR_HPS")
    x = _start(problem, x0)
    guard = _Guard(x)
    st = init_vr_state(problem, oracle, x, gamma)
    m = problem.m
    y, ybar, xbar, full = st.y_table, st.y_bar, st.checkpoint, st.full_grad
    rec = _recorder(problem, config, reference)
    rec.record(oracle.sfo_count, 1, x)
    refreshes = 0
    t = 0
    for t in range(1, int(config.t_max)):
        if _over_budget(config, oracle):
            t -= 1
            break
        eta = eta_of(t)
        i, j = oracle.sample_indices()
        gf, g_val, gg = oracle.sfo_call(x, i, j)
        v = gf - oracle.obj_grad(i, xbar) + full
        if oracle.checkpoint_coin():
            xbar = x.copy()
            full = oracle.full_obj_grad(xbar)
            refreshes += 1
        yj = y[j]
        z = x - eta * v - eta * ybar + eta * yj
        x_next, lam = _prox(problem, z, x, g_val, gg, gamma, eta)
        guard.check(x_next, t)
        y_new = yj + (x - x_next) / (2.0 * eta) - (v + ybar)
        ybar = ybar + (y_new - yj) / m
        y[j] = y_new
        if callback is not None:
            st.y_bar, st.checkpoint, st.full_grad = ybar, xbar, full
            callback(t, x, z, x_next, j, eta, gamma, lam, st)
        x = x_next
        rec.maybe(oracle.sfo_count, t + 1, x)
    else:
        t = int(config.t_max) - 1
    st.y_bar, st.checkpoint, st.full_grad = ybar, xbar, full
    return SolverOutput(x, rec.trace, oracle.sfo_count, t, gamma, vr_state=st, refreshes=refreshes)


def nhps_parameters(z, slater_point, nu, l_g, eta, t, kappa):
    """(gamma_t, beta_t, tau_t, capped) from the adaptive rules."""
    dz = z - slater_point
    r2 = float(dz @ dz)
    gamma_t = r2 / (2.0 * eta * nu)
    capped = gamma_t > GAMMA_T_CAP
    if capped:
        gamma_t = GAMMA_T_CAP
    beta = 2.0 * nu / (2.0 * nu + l_g * r2)
    tau = math.ceil(0.5 * math.log((t + 32.0) * (1.0 + kappa)) * (1.0 + l_g * r2 / (2.0 * nu)))
    return gamma_t, beta, tau, capped


def nhps_inner_loop(z, x, j, eta, gamma, beta, tau, problem, oracle=None, audit=None):
    """tau hinge-prox gradient steps with weight beta*eta starting at u = x.

    Returns (u, tau).  Each step linearizes g_j at the current u and costs
    one constraint oracle unit when ``oracle`` is supplied.  ``audit(s, u,
    u_next)`` is called after each step.
    """
    if tau < 0:
        raise ContractError("tau must be nonnegative")
    u = x
    w = beta * eta
    for s in range(int(tau)):
        if oracle is not None:
            g_val, gg = oracle.con_eval(j, u)
        else:
            g_val, gg = problem.con_val(j, u), problem.con_grad(j, u)
        anchor = (1.0 - beta) * u + beta * z
        u_next, _ = _prox(problem, anchor, u, g_val, gg, gamma, w)
        if audit is not None:
            audit(s, u, u_next)
        u = u_next
    return u, int(tau)


def run_n_hps(problem, config, x0=None, reference=None, callback=None, inner_audit=None):
    """Nested HPS: SGD step on f, then an inner hinge-prox loop on one constraint.

    ``callback(t, x, z, x_next, j, eta, gamma_t, beta, tau)``;
    ``inner_audit(t, j, z, eta, gamma_t, beta)`` may return a per-step audit
    function passed to the inner loop.
    """
    oracle = MeteredOracle(problem, config.seed)
    eta_of = make_schedule(problem, config, 0.0, "N_HPS")
    nc = config.nhps
    kappa = problem.l_f / problem.mu if nc.kappa is None else float(nc.kappa)
    x = _start(problem, x0)
    guard = _Guard(x)
    rec = _recorder(problem, config, reference)
    rec.record(oracle.sfo_count, 1, x)
    xs, nu, lg = problem.slater_point, problem.slater_margin, problem.l_g
    taus = []
    total = 0
    t = 0
    for t in range(1, int(config.t_max)):
        if _over_budget(config, oracle):
            t -= 1
            break
        eta = eta_of(t)
        i, j = oracle.sample_indices()
        gf = oracle.obj_grad(i, x)
        z = x - eta * gf
        gamma_t, beta, tau, capped = nhps_parameters(z, xs, nu, lg, eta, t, kappa)
        if capped:
            rec.event("gamma_cap", t, cap=GAMMA_T_CAP)
        if nc.beta is not None:
            beta = float(nc.beta)
        if nc.tau is not None:
            tau = int(nc.tau)
        audit = inner_audit(t, j, z, eta, gamma_t, beta) if inner_audit is not None else None
        x_next, it = nhps_inner_loop(z, x, j, eta, gamma_t, beta, tau, problem, oracle, audit)
        guard.check(x_next, t)
        if callback is not None:
            callback(t, x, z, x_next, j, eta, gamma_t, beta, tau)
        taus.append(it)
        total += it
        x = x_next
        rec.maybe(oracle.sfo_count, t + 1, x)
    else:
        t = int(config.t_max) - 1
    return SolverOutput(x, rec.trace, oracle.sfo_count, t, float("nan"), inner_iter_total=total,
                        tau_history=np.asarray(taus, dtype=np.int64))


def run(problem, config, x0=None, reference=None):
    if config.algorithm == "HPS":
        return run_hps(problem, config, x0, reference)
    if config.algorithm == "VR_HPS":
        return run_vr_hps(problem, config, x0, reference)
    if config.algorithm == "N_HPS":
        return run_n_hps(problem, config, x0, reference)
    return run_sgd(problem, config, x0, reference)
