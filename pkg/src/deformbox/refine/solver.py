"""Branch-and-bound over containment indicators with QP leaves."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .problem import FAMILIES, RefineProblem, Row
from .qp import solve_qp

FEAS_TOL = 1e-6


@dataclass
class RefineSolution:
    p: np.ndarray
    q: np.ndarray
    objective: float
    assignment: list  # (delta1, delta2) per containment edge
    report: dict = field(default_factory=dict)
    nodes: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.p, self.q], axis=1).ravel()

    @property
    def feasible(self) -> bool:
        return all(v <= FEAS_TOL for v in self.report.values())

    def to_json(self) -> dict:
        return {
            "p": self.p.tolist(),
            "q": self.q.tolist(),
            "objective": self.objective,
            "assignment": [list(a) for a in self.assignment],
            "report": dict(self.report),
            "feasible": self.feasible,
            "nodes": self.nodes,
        }

    @classmethod
    def from_json(cls, d) -> "RefineSolution":
        return cls(np.array(d["p"], float), np.array(d["q"], float), float(d["objective"]), [tuple(a) for a in d["assignment"]], dict(d.get("report", {})), int(d.get("nodes", 0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)


class RefineInfeasibleError(RuntimeError):
    """No indicator assignment admits a feasible layout."""

    def __init__(self, assignment, residuals: dict, x: np.ndarray):
        self.assignment = assignment
        self.residuals = residuals
        self.x = x
        worst = ", ".join(f"{k}={v:.3g}" for k, v in residuals.items() if v > FEAS_TOL)
        super().__init__(f"refinement infeasible for every containment assignment; least violating {assignment}: {worst}")


def _stack(rows: list[Row], n: int):
    eq = [r for r in rows if r.equality]
    ineq = [r for r in rows if not r.equality]
    A_eq = np.array([r.coef for r in eq]).reshape(-1, n)
    b_eq = np.array([r.rhs for r in eq])
    A_in = np.array([r.coef for r in ineq]).reshape(-1, n)
    b_in = np.array([r.rhs for r in ineq])
    return A_eq, b_eq, A_in, b_in


def _violations(rows: list[Row], x: np.ndarray) -> dict:
    out = {}
    for r in rows:
        s = float(r.coef @ x - r.rhs)
        v = abs(s) if r.equality else max(-s, 0.0)
        out[r.family] = max(out.get(r.family, 0.0), v)
    return out


def _fixed_rows(prob: RefineProblem, fixed: list) -> list[Row]:
    """Containment blocks for the indicators decided so far (undecided ones are relaxed away)."""
    edges = prob.containment_edges
    rows = []
    for v, val in enumerate(fixed):
        rows += prob.containment_rows(edges[v // 2], v % 2 + 1, val)
    return rows


def _leaf_qp(prob: RefineProblem, rows: list[Row]):
    A_eq, b_eq, A_in, b_in = _stack(rows, prob.num_vars)
    h = prob.hessian_diag()
    return solve_qp(np.diag(h), -h * prob.x0(), A_eq, b_eq, A_in, b_in)


def check_solution(prob: RefineProblem, sol: RefineSolution) -> dict:
    """Largest violation per constraint family at the solution's layout and indicators."""
    x = sol.x
    if x.shape != (prob.num_vars,):
        raise ValueError("solution does not match the problem's part count")
    rows = prob.base_rows()
    edges = prob.containment_edges
    if len(sol.assignment) != len(edges):
        raise ValueError("assignment does not match the problem's containment edges")
    report = {f: 0.0 for f in FAMILIES}
    report["indicator_sum"] = 0.0
    for k, (d1, d2) in enumerate(sol.assignment):
        report["indicator_sum"] = max(report["indicator_sum"], float(d1 + d2 - 1))
        rows += prob.containment_rows(edges[k], 1, d1) + prob.containment_rows(edges[k], 2, d2)
    report.update(_violations(rows, x))
    return report


def evaluate_layout(prob: RefineProblem, p, q) -> dict:
    """Per-family residuals of a raw layout, picking the best containment side per edge."""
    x = np.concatenate([np.asarray(p, float).reshape(-1, 3), np.asarray(q, float).reshape(-1, 3)], axis=1).ravel()
    report = {f: 0.0 for f in FAMILIES}
    report.update(_violations(prob.base_rows(), x))
    worst = 0.0
    for e in prob.containment_edges:
        a = max(_violations(prob.containment_rows(e, 1, 0), x).values())
        b = max(_violations(prob.containment_rows(e, 2, 0), x).values())
        worst = max(worst, min(a, b))
    report["containment"] = worst
    return report


def solve(prob: RefineProblem, tol: float = 1e-12) -> RefineSolution:
    """Exact minimizer over all indicator assignments.

    Depth-first search, indicator ``delta1`` before ``delta2`` per edge and the
    0 branch first.  A node's relaxation keeps the decided containment blocks
    and drops the undecided ones, so its optimum bounds every leaf below it.
    """
    base = prob.base_rows()
    nb = prob.num_binary
    best = {"obj": np.inf, "x": None, "fixed": None}
    nodes = 0

    def visit(fixed: list):
        nonlocal nodes
        nodes += 1
        res = _leaf_qp(prob, base + _fixed_rows(prob, fixed))
        if not res.ok:
            return
        obj = prob.objective(res.x)
        if obj >= best["obj"] - tol:
            return
        if len(fixed) == nb:
            best.update(obj=obj, x=res.x, fixed=list(fixed))
            return
        v = len(fixed)
        choices = (0,) if (v % 2 == 1 and fixed[-1] == 1) else (0, 1)
        for c in choices:
            visit(fixed + [c])

    visit([])
    if best["x"] is None:
        raise _least_violating(prob, base)
    x = best["x"]
    f = best["fixed"]
    assignment = [(f[2 * k], f[2 * k + 1]) for k in range(nb // 2)]
    xs = x.reshape(-1, 6)
    sol = RefineSolution(xs[:, :3].copy(), xs[:, 3:].copy(), float(best["obj"]), assignment, nodes=nodes)
    sol.report = check_solution(prob, sol)
    return sol


def _least_violating(prob: RefineProblem, base: list[Row]) -> RefineInfeasibleError:
    best = None
    for flat in product((0, 1), repeat=prob.num_binary):
        pairs = [flat[2 * k : 2 * k + 2] for k in range(prob.num_binary // 2)]
        if any(a + b > 1 for a, b in pairs):
            continue
        rows = base + _fixed_rows(prob, list(flat))
        res = _leaf_qp(prob, rows)
        viol = _violations(rows, res.x)
        worst = max(viol.values(), default=0.0)
        if best is None or worst < best[0]:
            best = (worst, [tuple(p) for p in pairs], viol, res.x)
    _, assignment, viol, x = best
    return RefineInfeasibleError(assignment, viol, x)


def solve_or_none(prob: RefineProblem) -> Optional[RefineSolution]:
    try:
        return solve(prob)
    except RefineInfeasibleError:
        return None


__all__ = ["FEAS_TOL", "RefineInfeasibleError", "RefineSolution", "check_solution", "evaluate_layout", "solve", "solve_or_none"]
