"""Randomized property suites for the hinge prox (used by tests and the CLI)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoxReg, L1Reg, ZeroReg
from .hinge_prox import (
    HingeProxQuery,
    hinge_prox_closed_form,
    hinge_prox_general,
    query_from_linearization,
    three_point_holds,
)
from .reference import brute_force_prox


def random_query(rng, kind=None):
    """Random query with d <= 5 and h drawn from {zero, l1, box}.

    Returns (query, regularizer).
    """
    d = int(rng.integers(1, 6))
    kind = kind or ("zero", "l1", "box")[int(rng.integers(3))]
    if kind == "zero":
        reg = ZeroReg()
    elif kind == "l1":
        reg = L1Reg(float(rng.uniform(0.05, 2.0)))
    else:
        half = float(rng.uniform(0.5, 3.0))
        reg = BoxReg(-half, half)
    z = rng.normal(0.0, 2.0, d)
    grad = rng.normal(0.0, 1.0, d)
    lin_value = float(rng.normal(0.0, 2.0))
    gamma = float(rng.uniform(0.1, 5.0))
    eta = float(10 ** rng.uniform(-2, 0.5))
    if kind == "zero":
        return HingeProxQuery(z, grad, lin_value, gamma, eta), reg
    return HingeProxQuery(z, grad, lin_value, gamma, eta, reg.prox, reg.value), reg


@dataclass
class ProxReport:
    cases: int = 0
    failures: dict = field(default_factory=dict)
    worst_gap: float = -np.inf  # general objective minus brute-force objective
    worst_cf_diff: float = 0.0
    worst_concavity: float = 0.0

    def fail(self, name):
        self.failures[name] = self.failures.get(name, 0) + 1

    @property
    def ok(self):
        return not self.failures


def prox_property_suite(cases=10000, seed=0, grid_points=10**6, literal_every=0):
    """General prox vs brute-force grid, closed form agreement, lambda range,
    complementary slackness, dual concavity and non-expansiveness."""
    rng = np.random.default_rng(seed)
    rep = ProxReport()
    for k in range(cases):
        q, reg = random_query(rng)
        rep.cases += 1
        probes = []
        res = hinge_prox_general(q, probes=probes)
        val = q.objective(res.x)
        literal = literal_every and k % literal_every == 0
        _, bval = brute_force_prox(q, grid_points, literal=bool(literal), reg=None if reg.kind == "zero" else reg)
        gap = val - bval
        rep.worst_gap = max(rep.worst_gap, gap)
        if gap > 1e-6:
            rep.fail("brute_force")
        if not 0.0 <= res.lam <= 1.0:
            rep.fail("lambda_range")
        if not res.complementary_slackness_ok(q):
            rep.fail("complementary_slackness")
        if reg.kind == "zero":
            cf = hinge_prox_closed_form(q)
            diff = float(np.max(np.abs(cf.x - res.x)))
            rep.worst_cf_diff = max(rep.worst_cf_diff, diff)
            if diff > 1e-9:
                rep.fail("closed_form")
            if not cf.complementary_slackness_ok(q):
                rep.fail("complementary_slackness")
        worst = concavity_defect(probes)
        rep.worst_concavity = max(rep.worst_concavity, worst)
        if worst > 1e-10:
            rep.fail("concavity")
        # non-expansiveness in the anchor
        z2 = q.z + rng.normal(0.0, 1.0, q.z.size)
        q2 = HingeProxQuery(z2, q.grad, q.lin_value + float(q.grad @ (z2 - q.z)), q.gamma, q.eta, q.prox_h, q.h_val)
        r2 = hinge_prox_general(q2)
        if np.linalg.norm(r2.x - res.x) > np.linalg.norm(z2 - q.z) + 1e-9:
            rep.fail("nonexpansive")
    return rep


def concavity_defect(probes):
    """Largest midpoint-concavity violation over sorted probe triples."""
    if len(probes) < 3:
        return 0.0
    pts = sorted(set(probes))
    lam = np.array([p[0] for p in pts])
    val = np.array([p[1] for p in pts])
    worst = 0.0
    # check each interior point against its neighbours via linear interpolation
    for i in range(1, lam.size - 1):
        a, b = lam[i - 1], lam[i + 1]
        if b - a <= 0:
            continue
        w = (lam[i] - a) / (b - a)
        chord = (1 - w) * val[i - 1] + w * val[i + 1]
        scale = 1.0 + abs(val[i])
        worst = max(worst, (chord - val[i]) / scale)
    return worst


def random_quadratic_constraint(rng, d, l_g):
    """g(u) = u'Pu/2 + q'u - r with 0 <= P <= l_g I."""
    U = np.linalg.qr(rng.normal(size=(d, d)))[0]
    ev = rng.uniform(0.0, l_g, d)
    ev[0] = l_g
    P = (U * ev) @ U.T
    P = 0.5 * (P + P.T)
    q = rng.normal(size=d)
    r = float(rng.uniform(-1.0, 2.0))
    val = lambda u: float(0.5 * u @ P @ u + q @ u - r)
    grad = lambda u: P @ u + q
    return val, grad


def three_point_suite(cases=10000, seed=0, slack=1e-8):
    """Random (x, z, x_ref, eta, gamma) with eta*gamma*L_g <= 1.

    Returns (failures, worst lhs - rhs).
    """
    rng = np.random.default_rng(seed)
    fails = 0
    worst = -np.inf
    for _ in range(cases):
        d = int(rng.integers(1, 6))
        l_g = float(rng.uniform(0.0, 3.0))
        g, gg = random_quadratic_constraint(rng, d, max(l_g, 1e-12))
        kind = ("zero", "l1", "box")[int(rng.integers(3))]
        if kind == "zero":
            reg = ZeroReg()
        elif kind == "l1":
            reg = L1Reg(float(rng.uniform(0.05, 1.0)))
        else:
            reg = BoxReg(-3.0, 3.0)
        x = rng.normal(size=d)
        if kind == "box":
            x = np.clip(x, -3, 3)
        z = x + rng.normal(size=d)
        x_ref = rng.normal(size=d)
        if kind == "box":
            x_ref = np.clip(x_ref, -3, 3)
        eta = float(10 ** rng.uniform(-2, 0))
        gamma = float(rng.uniform(0.0, 1.0 / (eta * l_g))) if l_g > 0 else float(rng.uniform(0, 10))
        gamma = min(gamma, 50.0)
        q = query_from_linearization(z, x, g(x), gg(x), gamma, eta,
                                     None if kind == "zero" else reg.prox, None if kind == "zero" else reg.value)
        w = hinge_prox_general(q).x if kind != "zero" else hinge_prox_closed_form(q).x
        phi = lambda u: reg.value(u) + gamma * max(g(u), 0.0)
        ok, defect = three_point_holds(x, z, w, x_ref, eta, gamma, l_g, phi(x_ref), phi(w), slack)
        worst = max(worst, defect)
        fails += not ok
    return fails, worst
