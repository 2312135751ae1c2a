"""Independent reference implementations used by the test-suite.

Nothing here reuses the code path it checks: constraints are rewritten as
plain affine functions of the layout, and leaf QPs are solved by accelerated
projected gradient ascent on the dual instead of an active-set method.
"""

from __future__ import annotations

from itertools import product

import numpy as np
from scipy.optimize import linprog


# --------------------------------------------------------------------------
# refinement


def _affine_rows(funcs, nvar):
    """Linearize affine callables g(x) by probing with unit vectors."""
    zero = np.zeros(nvar)
    rows, rhs = [], []
    for g in funcs:
        g0 = g(zero)
        coef = np.array([g(np.eye(nvar)[k]) - g0 for k in range(nvar)])
        rows.append(coef)
        rhs.append(-g0)
    return np.array(rows).reshape(-1, nvar), np.array(rhs)


def refine_constraints(prob, deltas):
    """(A_eq, b_eq, A_ge, b_ge) with each containment pair fixed to ``deltas``."""
    k = prob.num_parts
    eps, M = prob.eps, prob.big_m
    eqs, ges = [], []

    def P(x, i):
        return x.reshape(k, 6)[i, :3]

    def Q(x, i):
        return x.reshape(k, 6)[i, 3:]

    for s in prob.symmetry:
        n = np.array(s.normal)
        eqs.append(lambda x, s=s, n=n: float((P(x, s.i) + P(x, s.j)) @ n / 2 + s.d))
        for r in range(3):
            eqs.append(lambda x, s=s, n=n, r=r: float(np.cross(P(x, s.i) - P(x, s.j), n)[r]))
            eqs.append(lambda x, s=s, r=r: float(Q(x, s.i)[r] - Q(x, s.j)[r]))
    for members, t in prob.equal_length:
        for a in members:
            for b in members:
                if a < b:
                    eqs.append(lambda x, a=a, b=b, t=t: float(Q(x, a)[t] - Q(x, b)[t]))
    pair = 0
    for s in prob.supports:
        i, j, t = s.supporter, s.supported, s.axis
        if i < 0:
            eqs.append(lambda x, j=j: float(P(x, j)[1] - Q(x, j)[1]))
            continue
        if s.sign > 0:
            depth = lambda x, i=i, j=j, t=t: (P(x, i)[t] + Q(x, i)[t]) - (P(x, j)[t] - Q(x, j)[t])  # noqa: E731
        else:
            depth = lambda x, i=i, j=j, t=t: (P(x, j)[t] + Q(x, j)[t]) - (P(x, i)[t] - Q(x, i)[t])  # noqa: E731
        ges.append(lambda x, d=depth, j=j, t=t: float(d(x) - eps * Q(x, j)[t]))
        ges.append(lambda x, d=depth, j=j, t=t: float(2 * eps * Q(x, j)[t] - d(x)))
        d1, d2 = deltas[pair]
        pair += 1
        for l in range(3):
            if l == t:
                continue
            for inner, outer, dv in ((j, i, d1), (i, j, d2)):
                ges.append(lambda x, a=inner, b=outer, l=l, dv=dv: float((P(x, a)[l] - Q(x, a)[l]) - (P(x, b)[l] - Q(x, b)[l]) + M * dv))
                ges.append(lambda x, a=inner, b=outer, l=l, dv=dv: float((P(x, b)[l] + Q(x, b)[l]) - (P(x, a)[l] + Q(x, a)[l]) + M * dv))
    for st in prob.stable:
        ges.append(lambda x, st=st: float(P(x, st.supported)[st.axis] - (P(x, st.lower)[st.axis] - Q(x, st.lower)[st.axis])))
        ges.append(lambda x, st=st: float(P(x, st.upper)[st.axis] + Q(x, st.upper)[st.axis] - P(x, st.supported)[st.axis]))
    for i in range(k):
        for a in range(3):
            ges.append(lambda x, i=i, a=a: float(Q(x, i)[a]))
    n = 6 * k
    A_eq, b_eq = _affine_rows(eqs, n)
    A_ge, b_ge = _affine_rows(ges, n)
    return A_eq, b_eq, A_ge, b_ge


def _feasible(A_eq, b_eq, A_ge, b_ge, n):
    res = linprog(
        np.zeros(n),
        A_ub=-A_ge if len(b_ge) else None,
        b_ub=-b_ge if len(b_ge) else None,
        A_eq=A_eq if len(b_eq) else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    return res.status == 0


def dual_projected_gradient(h, x0, A_eq, b_eq, A_ge, b_ge, iters=200000, tol=1e-11):
    """min sum h/2 (x - x0)^2 s.t. A_eq x = b_eq, A_ge x >= b_ge, by accelerated dual ascent."""
    A = np.vstack([A_eq, A_ge])
    b = np.concatenate([b_eq, b_ge])
    meq = len(b_eq)
    if len(b) == 0:
        return x0.copy(), 0.0
    hinv = 1.0 / h
    K = (A * hinv) @ A.T
    L = np.linalg.eigvalsh(K).max()
    y = np.zeros(len(b))
    z = y.copy()
    tk = 1.0

    def proj(v):
        v = v.copy()
        v[meq:] = np.maximum(v[meq:], 0.0)
        return v

    for it in range(iters):
        x = x0 + hinv * (A.T @ z)
        y_new = proj(z + (b - A @ x) / L)
        t_new = (1 + np.sqrt(1 + 4 * tk * tk)) / 2
        z_new = y_new + (tk - 1) / t_new * (y_new - y)
        if (z_new - y_new) @ (y_new - y) > 0:  # adaptive restart
            z_new, t_new = y_new.copy(), 1.0
        y, z, tk = y_new, z_new, t_new
        if it % 50 == 0:
            x = x0 + hinv * (A.T @ y)
            s = A @ x - b
            viol = max(np.abs(s[:meq]).max(initial=0.0), np.maximum(-s[meq:], 0).max(initial=0.0))
            primal = 0.5 * np.sum(h * (x - x0) ** 2)
            dual = primal - y @ s
            if viol < tol and abs(primal - dual) < tol:
                break
    x = x0 + hinv * (A.T @ y)
    return x, 0.5 * np.sum(h * (x - x0) ** 2)


def enumerate_refine(prob):
    """Minimum objective over every indicator assignment; None when all are infeasible."""
    npairs = len(prob.containment_edges)
    n = prob.num_vars
    h = prob.hessian_diag()
    x0 = prob.x0()
    best = None
    for combo in product([(0, 0), (0, 1), (1, 0)], repeat=npairs):
        A_eq, b_eq, A_ge, b_ge = refine_constraints(prob, combo)
        if not _feasible(A_eq, b_eq, A_ge, b_ge, n):
            continue
        x, obj = dual_projected_gradient(h, x0, A_eq, b_eq, A_ge, b_ge)
        if best is None or obj < best[0]:
            best = (obj, x, combo)
    return best


# --------------------------------------------------------------------------
# metrics


def jsd_bruteforce(set_a, set_b, res):
    def hist(shapes):
        h = {}
        for pts in shapes:
            cells = set()
            for p in pts:
                c = tuple(int(min(max(np.floor((v + 0.5) * res), 0), res - 1)) for v in p)
                cells.add(c)
            for c in cells:
                h[c] = h.get(c, 0.0) + 1.0
        tot = sum(h.values())
        return {c: v / tot for c, v in h.items()}

    pa, pb = hist(set_a), hist(set_b)
    keys = set(pa) | set(pb)
    out = 0.0
    for c in keys:
        a, b = pa.get(c, 0.0), pb.get(c, 0.0)
        m = (a + b) / 2
        if a > 0:
            out += 0.5 * a * np.log(a / m)
        if b > 0:
            out += 0.5 * b * np.log(b / m)
    return out


def chamfer_bruteforce(a, b):
    da = [min(float(np.sum((p - q) ** 2)) for q in b) for p in a]
    db = [min(float(np.sum((p - q) ** 2)) for q in a) for p in b]
    return sum(da) / len(da) + sum(db) / len(db)


def mmd_cov_bruteforce(gen, ref):
    mmd = 0.0
    for r in ref:
        mmd += min(chamfer_bruteforce(g, r) for g in gen)
    mmd /= len(ref)
    covered = set()
    for g in gen:
        dists = [chamfer_bruteforce(g, r) for r in ref]
        covered.add(int(np.argmin(dists)))
    return mmd, len(covered) / len(ref)
