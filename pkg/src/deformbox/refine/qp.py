"""Dual active-set solver for strictly convex quadratic programs.

    minimize    0.5 x'Gx + a'x
    subject to  A_eq x  = b_eq
                A_in x >= b_in

Goldfarb-Idnani: start from the unconstrained minimizer and repeatedly add
the most violated constraint, taking primal/dual steps on the KKT system of
the current active set and dropping constraints whose multiplier would turn
negative.  No feasible starting point is needed, and infeasibility is
detected when a violated constraint cannot be made active.  Problems here
are small (tens of variables), so the KKT quantities are rebuilt densely each
step instead of maintaining factorization updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


@dataclass
class QPResult:
    x: np.ndarray
    status: str  # "optimal" or "infeasible"
    active: list
    multipliers: np.ndarray
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_qp(G, a, A_eq=None, b_eq=None, A_in=None, b_in=None, tol: float = 1e-10, max_iter: int | None = None) -> QPResult:
    G = np.asarray(G, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    n = len(a)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=np.float64).reshape(-1, n)
    A_in = np.zeros((0, n)) if A_in is None else np.asarray(A_in, dtype=np.float64).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=np.float64).ravel()
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=np.float64).ravel()
    C = np.vstack([A_eq, A_in])
    b = np.concatenate([b_eq, b_in])
    meq = len(b_eq)
    m = len(b)
    is_eq = np.arange(m) < meq
    norms = np.linalg.norm(C, axis=1)
    norms[norms == 0] = 1.0

    chol = cho_factor(G)
    ginv = cho_solve(chol, np.eye(n))
    x = -cho_solve(chol, a)
    sign = np.ones(m)
    active: list[int] = []
    u = np.zeros(0)
    max_iter = max_iter or 20 * (n + m) + 50
    it = 0

    def pick(x):
        s = C @ x - b
        if m == 0:
            return None, s
        scale = tol * (1.0 + np.abs(b))
        viol = np.where(is_eq, np.abs(s), np.maximum(-s, 0.0)) / norms
        viol[active] = 0.0
        viol[viol * norms <= scale] = 0.0
        if meq and np.any(viol[:meq] > 0):
            p = int(np.argmax(np.where(is_eq, viol, 0.0)))
        else:
            p = int(np.argmax(viol))
        if viol[p] <= 0:
            return None, s
        return p, s

    while True:
        p, s = pick(x)
        if p is None:
            return QPResult(x, "optimal", list(active), u, it)
        sign[p] = 1.0 if (not is_eq[p] or s[p] < 0) else -1.0
        npv = sign[p] * C[p]
        bp = sign[p] * b[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("active-set QP did not terminate")
            q = len(active)
            if q:
                N = (sign[active][:, None] * C[active]).T
                gn = ginv @ N
                nstar = np.linalg.solve(N.T @ gn, gn.T)
                z = ginv @ npv - gn @ (nstar @ npv)
                r = nstar @ npv
            else:
                z = ginv @ npv
                r = np.zeros(0)
            t1, k = np.inf, None
            for j in range(q):
                if not is_eq[active[j]] and r[j] > 1e-14:
                    ratio = u_plus[j] / r[j]
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ npv)
            sp_ = float(npv @ x - bp)
            t2 = np.inf if abs(zn) <= 1e-14 * max(1.0, float(npv @ npv)) else -sp_ / zn
            if not np.isfinite(t1) and not np.isfinite(t2):
                return QPResult(x, "infeasible", list(active), u, it)
            if not np.isfinite(t2):
                u_plus[:q] -= t1 * r
                u_plus[q] += t1
                del active[k]
                u_plus = np.delete(u_plus, k)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[:q] -= t * r
            u_plus[q] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[k]
            u_plus = np.delete(u_plus, k)
