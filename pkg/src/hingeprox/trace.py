"""SFO-indexed metric traces."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("sfo", "iter", "obj_gap", "violation", "dist_sq", "wall_ns")


@dataclass
class RunTrace:
    sfo: list = field(default_factory=list)
    iters: list = field(default_factory=list)
    obj_gap: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    dist_sq: list = field(default_factory=list)
    wall_ns: list = field(default_factory=list)
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.sfo)

    def append(self, sfo, it, obj_gap, violation, dist_sq, wall_ns=0):
        if self.sfo and sfo <= self.sfo[-1]:
            return False
        self.sfo.append(int(sfo))
        self.iters.append(int(it))
        self.obj_gap.append(float(obj_gap))
        self.violation.append(float(violation))
        self.dist_sq.append(float(dist_sq))
        self.wall_ns.append(int(wall_ns))
        return True

    def column(self, name):
        key = {"iter": "iters"}.get(name, name)
        return np.asarray(getattr(self, key), dtype=float)

    def to_csv(self):
        buf = io.StringIO(newline="")
        buf.write(",".join(COLUMNS) + "\n")
        for row in zip(self.sfo, self.iters, self.obj_gap, self.violation, self.dist_sq, self.wall_ns):
            s, it, og, v, ds, w = row
            buf.write(f"{s},{it},{og:.17g},{v:.17g},{ds:.17g},{w}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path):
        tr = cls()
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != COLUMNS:
                raise ValueError(f"unexpected trace header {header}")
            for line in fh:
                if not line.strip():
                    continue
                s, it, og, v, ds, w = line.strip().split(",")
                tr.append(int(s), int(it), float(og), float(v), float(ds), int(w))
        return tr


class TraceRecorder:
    """Samples metrics every ``stride`` SFO units and at chosen iterations.

    Without a reference solution nothing is recorded, since every metric is
    relative to the optimum.
    """

    def __init__(self, problem, reference=None, stride=None, iters=None, wall_clock=False):
        self.problem = problem
        self.reference = reference
        self.trace = RunTrace()
        self.stride = stride
        self.iters = set(int(t) for t in iters) if iters else set()
        self.next_mark = 0
        self.wall_clock = wall_clock
        self._t0 = time.perf_counter_ns()
        self.enabled = reference is not None and (stride is not None or bool(self.iters))

    def due(self, sfo, it):
        if not self.enabled:
            return False
        if self.stride is not None and sfo >= self.next_mark:
            return True
        return it in self.iters

    def record(self, sfo, it, x):
        if not self.enabled:
            return
        p, ref = self.problem, self.reference
        gap = abs(p.objective(x) - ref.f_star)
        viol = p.total_violation(x)
        diff = x - ref.x_star
        wall = time.perf_counter_ns() - self._t0 if self.wall_clock else 0
        self.trace.append(sfo, it, gap, viol, float(diff @ diff), wall)
        if self.stride is not None:
            while self.next_mark <= sfo:
                self.next_mark += self.stride

    def maybe(self, sfo, it, x):
        if self.due(sfo, it):
            self.record(sfo, it, x)

    def event(self, kind, it, **info):
        self.trace.events.append({"kind": kind, "iter": int(it), **info})
