"""Dense convex QP solver (Mehrotra predictor-corrector interior point).

Solves  min 1/2 x'Qx + c'x  subject to  A_eq x = b_eq,  A_in x <= b_in,
lb <= x <= ub.  Box bounds are folded into the inequality block.  Problems
here are tiny (tens of variables), so each iteration factors the reduced
KKT system directly with dense solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

_STEP_SCALE = 0.995
_STALL_STEP = 1e-10


@dataclass
class QPProblem:
    Q: np.ndarray
    c: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.Q = np.asarray(self.Q, dtype=float)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError("Q/c dimension mismatch")
        if np.abs(self.Q - self.Q.T).max(initial=0.0) > 1e-9:
            raise ValueError("Q must be symmetric")
        for name in ("A_eq", "A_in"):
            A = getattr(self, name)
            if A is not None:
                A = np.atleast_2d(np.asarray(A, dtype=float))
                if A.shape[1] != n:
                    raise ValueError(f"{name} has wrong column count")
                setattr(self, name, A)
        for aname, bname in (("A_eq", "b_eq"), ("A_in", "b_in")):
            A, b = getattr(self, aname), getattr(self, bname)
            if (A is None) != (b is None):
                raise ValueError(f"{aname}/{bname} must be given together")
            if b is not None:
                b = np.asarray(b, dtype=float).reshape(-1)
                if b.shape[0] != A.shape[0]:
                    raise ValueError(f"{aname}/{bname} row mismatch")
                setattr(self, bname, b)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.shape[0] != n or self.ub.shape[0] != n:
            raise ValueError("bound dimension mismatch")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class QPSolution:
    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _stacked_inequalities(p: QPProblem) -> tuple[np.ndarray, np.ndarray]:
    """Inequality block G x <= h including the finite box bounds."""
    n = p.n
    blocks_G = []
    blocks_h = []
    if p.A_in is not None and p.A_in.shape[0]:
        blocks_G.append(p.A_in)
        blocks_h.append(p.b_in)
    ub_rows = np.flatnonzero(np.isfinite(p.ub))
    if ub_rows.size:
        E = np.zeros((ub_rows.size, n))
        E[np.arange(ub_rows.size), ub_rows] = 1.0
        blocks_G.append(E)
        blocks_h.append(p.ub[ub_rows])
    lb_rows = np.flatnonzero(np.isfinite(p.lb))
    if lb_rows.size:
        E = np.zeros((lb_rows.size, n))
        E[np.arange(lb_rows.size), lb_rows] = -1.0
        blocks_G.append(E)
        blocks_h.append(-p.lb[lb_rows])
    if not blocks_G:
        return np.zeros((0, n)), np.zeros(0)
    return np.concatenate(blocks_G), np.concatenate(blocks_h)


def _solve_kkt(H: np.ndarray, A: Optional[np.ndarray], r1: np.ndarray, r2: Optional[np.ndarray]):
    """Solve [[H, A'], [A, 0]] [dx, dy] = [r1, r2]; A may be absent."""
    n = H.shape[0]
    if A is None or A.shape[0] == 0:
        return np.linalg.solve(H, r1), np.zeros(0)
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    sol = np.linalg.solve(K, np.concatenate([r1, r2]))
    return sol[:n], sol[n:]


def _polish(
    Q: np.ndarray,
    c: np.ndarray,
    A: Optional[np.ndarray],
    b: Optional[np.ndarray],
    G: np.ndarray,
    h: np.ndarray,
    x0: np.ndarray,
    z: np.ndarray,
    s: np.ndarray,
    dsc: np.ndarray,
    rscale: np.ndarray,
    tol: float,
) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Primal active-set refinement after an interior-point stall.

    Seeds a working set from the rows the IP iterate identifies as active
    (z dominates s), then runs the classical descent: solve the equality
    subproblem on the working set, walk toward its minimiser with a ratio
    test over the remaining rows, add the blocking row, and once the
    minimiser is reached drop the single most negative multiplier.  Accepts
    the result only if it satisfies the full optimality conditions of the
    original problem.
    """
    me = A.shape[0] if A is not None else 0
    n = Q.shape[0]
    mi = G.shape[0]

    def verified(x: np.ndarray, y: np.ndarray, z_full: np.ndarray) -> bool:
        rd = Q @ x + c + G.T @ z_full + (A.T @ y if A is not None else 0.0)
        if float(np.abs(rd * dsc).max(initial=0.0)) > tol:
            return False
        if A is not None and float(np.abs(A @ x - b).max(initial=0.0)) > tol:
            return False
        slack = h - G @ x
        if float(np.maximum(-slack * rscale, 0.0).max(initial=0.0)) > tol:
            return False
        zmax = max(1.0, float(z_full.max(initial=0.0)))
        return float(np.abs(z_full * slack).max(initial=0.0)) / zmax <= tol

    def eqp(active: np.ndarray):
        rows = np.concatenate([A, G[active]]) if A is not None else G[active]
        rhs = np.concatenate([b, h[active]]) if A is not None else h[active]
        m = rows.shape[0]
        K = np.zeros((n + m, n + m))
        K[:n, :n] = Q
        K[:n, n:] = rows.T
        K[n:, :n] = rows
        sol, *_ = np.linalg.lstsq(K, np.concatenate([-c, rhs]), rcond=None)
        return sol[:n], sol[n : n + me], sol[n + me :]

    for thresh in (1.0, 0.1, 10.0):
        active = np.flatnonzero(z > thresh * s)
        xbar = x0.copy()
        for _ in range(3 * mi + 12):
            try:
                xs, ya, za = eqp(active)
            except np.linalg.LinAlgError:
                break
            p = xs - xbar
            if float(np.abs(p).max(initial=0.0)) <= 1e-11 * (
                1.0 + float(np.abs(xbar).max(initial=0.0))
            ):
                if za.size and float(za.min()) < -1e-10:
                    active = np.delete(active, int(np.argmin(za)))
                    continue
                z_full = np.zeros(mi)
                z_full[active] = np.maximum(za, 0.0)
                if verified(xs, ya, z_full):
                    return xs, ya, z_full
                break
            gp = G @ p
            slack = h - G @ xbar
            mask = np.ones(mi, dtype=bool)
            mask[active] = False
            mask &= gp > 1e-13
            if np.any(mask):
                ratios = np.maximum(slack[mask], 0.0) / gp[mask]
                amax = float(ratios.min())
            else:
                amax = np.inf
            alpha = min(1.0, amax)
            xbar = xbar + alpha * p
            if amax < 1.0:
                idx = np.flatnonzero(mask)
                active = np.append(active, idx[int(np.argmin(ratios))])
    return None


def _certify_infeasible(
    n: int,
    A: Optional[np.ndarray],
    b: Optional[np.ndarray],
    G: np.ndarray,
    h: np.ndarray,
) -> bool:
    """Phase-1 feasibility check via linear programming."""
    from scipy.optimize import linprog

    res = linprog(
        c=np.zeros(n),
        A_ub=G if G.shape[0] else None,
        b_ub=h if G.shape[0] else None,
        A_eq=A,
        b_eq=b,
        bounds=[(None, None)] * n,
        method="highs",
    )
    return res.status == 2


def solve_qp(p: QPProblem, tol: float = 1e-8, max_iter: int = 200) -> QPSolution:
    """Solve the QP; see module docstring for the formulation.

    ``status=optimal`` guarantees KKT stationarity, equality and inequality
    feasibility within ``tol``, and complementarity within ``tol`` relative
    to the largest inequality multiplier.
    """
    n = p.n
    G, h = _stacked_inequalities(p)
    # Jacobi variable scaling x = x_s / dsc with dsc_j = sqrt(Q_jj): quadratic
    # weights mixed across orders of magnitude (0.1 vs 1e3 on different
    # variable blocks) otherwise leave the Newton systems ill-conditioned
    # enough to stall just above tight tolerances.  Column-scaling G and A
    # preserves each row's geometry (G_s x_s = G x), so h, b, the primal
    # residuals, and the multipliers y, z are unchanged; only the dual
    # residual transforms, as rd = rd_s * dsc, restored wherever it is tested
    # or reported.
    dsc = np.sqrt(np.clip(np.diag(p.Q), 1e-8, None))
    Qs = p.Q / np.outer(dsc, dsc)
    c = p.c / dsc
    if G.shape[0]:
        G = G / dsc[None, :]
    # Row equilibration: unit-norm rows keep the dual bounded when callers mix
    # constraint scales spanning orders of magnitude.  The feasible set, the
    # solution, and the dual residual Qx + c + G'z + A'y are all unchanged;
    # only the per-row primal residual picks up the scale factor again below.
    if G.shape[0]:
        rscale = np.linalg.norm(G, axis=1)
        vacuous = rscale <= 1e-14
        if np.any(vacuous):
            if np.any(h[vacuous] < -1e-14):
                return QPSolution(np.zeros(n), INFEASIBLE, 0, np.inf, np.inf)
            G, h, rscale = G[~vacuous], h[~vacuous], rscale[~vacuous]
        G = G / rscale[:, None]
        h = h / rscale
    if G.shape[0] > 1:
        # Identical equilibrated rows keep only their tightest bound.  The
        # controller emits such rows routinely (two spheres of one link at an
        # equal clearance give identical Jacobian rows), and duplicates make
        # the multipliers non-unique and arbitrarily large, which degrades the
        # Newton systems for no change in the feasible set.  Only bitwise
        # matches merge: rows differing by any nonzero amount can carry bounds
        # that are active at the solution, and rewriting those onto a nearby
        # representative perturbs a degenerate feasible set enough to empty it.
        kept: list[int] = []
        for i in range(G.shape[0]):
            match = -1
            for k in kept:
                if float(np.abs(G[i] - G[k]).max(initial=0.0)) == 0.0:
                    match = k
                    break
            if match >= 0:
                if h[i] < h[match]:
                    h[match] = h[i]
                    rscale[match] = rscale[i]
            else:
                kept.append(i)
        if len(kept) < G.shape[0]:
            idx = np.asarray(kept, dtype=int)
            G, h, rscale = G[idx], h[idx], rscale[idx]
    if not G.shape[0]:
        rscale = np.ones(0)
    mi = G.shape[0]
    A = p.A_eq / dsc[None, :] if p.A_eq is not None and p.A_eq.shape[0] else None
    b = p.b_eq if A is not None else None

    reg = 1e-12 * (1.0 + np.abs(np.diag(Qs)).max(initial=0.0))
    Q = Qs + reg * np.eye(n)

    if mi == 0:
        # Equality-constrained (or unconstrained) problem: one KKT solve.
        try:
            x, y = _solve_kkt(Q, A, -c, b.copy() if b is not None else None)
        except np.linalg.LinAlgError:
            return QPSolution(np.zeros(n), INFEASIBLE, 0, np.inf, np.inf)
        rd = Q @ x + c + (A.T @ y if A is not None else 0.0)
        rp = float(np.abs(A @ x - b).max(initial=0.0)) if A is not None else 0.0
        rdn = float(np.abs(rd * dsc).max(initial=0.0))
        status = OPTIMAL if max(rdn, rp) <= tol else INFEASIBLE
        return QPSolution(x / dsc, status, 1, rp, rdn)

    # Interior-point start: equality-regularised minimiser, strictly feasible slacks.
    try:
        x, y = _solve_kkt(Q + np.eye(n), A, -c, b.copy() if b is not None else None)
    except np.linalg.LinAlgError:
        x = np.zeros(n)
        y = np.zeros(A.shape[0] if A is not None else 0)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)
    if y.size == 0 and A is not None:
        y = np.zeros(A.shape[0])

    status = MAX_ITER
    it = 0
    best_conv = np.inf
    best = (x, y, z, s)
    best_it = 0
    rescues = 6
    mehrotra = True
    for it in range(1, max_iter + 1):
        rd = Q @ x + c + G.T @ z + (A.T @ y if A is not None else 0.0)
        rp = A @ x - b if A is not None else np.zeros(0)
        rg = G @ x + s - h
        mu = float(s @ z) / mi
        # Complementarity and progress are judged relative to the dual
        # magnitude: redundant (near-duplicate) rows make the multipliers
        # non-unique and large, and the achievable absolute floors scale with
        # them.  Only the fully absolute ``conv`` declares optimality here;
        # ``conv_rel`` stops the iteration before the huge multipliers push
        # ``mu`` below the numerical floor and destabilise the Newton systems,
        # handing a clean iterate to the refinement below, whose minimum-norm
        # multipliers can still certify an absolute-tolerance solution.
        zmax = max(1.0, float(z.max(initial=0.0)))
        rd_abs = float(np.abs(rd * dsc).max(initial=0.0))
        rp_abs = float(np.abs(rp).max(initial=0.0))
        rg_abs = float(np.abs(rg * rscale).max(initial=0.0))
        comp_rel = float((s * z).max(initial=0.0)) / zmax
        conv = max(rd_abs, rp_abs, rg_abs, comp_rel)
        conv_rel = max(rd_abs / zmax, rp_abs, rg_abs, comp_rel)
        if conv_rel < best_conv:
            best_conv = conv_rel
            best = (x, y, z, s)
            best_it = it
        if conv <= tol:
            status = OPTIMAL
            break
        if conv_rel <= tol:
            break

        w = z / s
        H = Q + (G.T * w) @ G

        def direction(r_sz: np.ndarray):
            rhs1 = -rd - G.T @ (w * rg) + G.T @ (r_sz / s)
            dx, dy = _solve_kkt(H, A, rhs1, -rp if A is not None else None)
            dz = w * (G @ dx + rg) - r_sz / s
            ds = -(r_sz + s * dz) / z
            return dx, dy, dz, ds

        def max_step(v: np.ndarray, dv: np.ndarray) -> float:
            neg = dv < 0.0
            if not np.any(neg):
                return 1.0
            return min(1.0, float((-v[neg] / dv[neg]).min()))

        if it - best_it >= 8:
            # No progress for several iterations: near a degenerate vertex the
            # predictor-corrector can cycle, its second-order correction being
            # non-monotone in the gap, with two blocking rows alternately
            # crashing into the boundary.  Drop the corrector and continue
            # with plain damped centering steps, which grind the gap down
            # monotonically even on degenerate problems.
            if rescues == 0:
                break
            rescues -= 1
            best_it = it
            mehrotra = False

        try:
            if mehrotra:
                dx_a, dy_a, dz_a, ds_a = direction(s * z)
                alpha_aff = min(max_step(s, ds_a), max_step(z, dz_a))
                mu_aff = float((s + alpha_aff * ds_a) @ (z + alpha_aff * dz_a)) / mi
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                dx, dy, dz, ds = direction(s * z + ds_a * dz_a - sigma * mu)
            else:
                dx, dy, dz, ds = direction(s * z - 0.1 * mu)
        except np.linalg.LinAlgError:
            break
        alpha = _STEP_SCALE * min(max_step(s, ds), max_step(z, dz))
        if alpha < _STALL_STEP:
            break
        x = x + alpha * dx
        if A is not None:
            y = y + alpha * dy
        z = np.maximum(z + alpha * dz, 1e-300)
        s = np.maximum(s + alpha * ds, 1e-300)

    if status != OPTIMAL:
        # Refine from the best iterate seen, not the final one: a stalled
        # interior point often drifts after its closest approach to the
        # optimum, corrupting the active-set split.
        x, y, z, s = best
        polished = _polish(Q, c, A, b, G, h, z, s, dsc, rscale, tol)
        if polished is not None:
            x, y, z = polished
            s = np.maximum(h - G @ x, 0.0)
            status = OPTIMAL

    rd = Q @ x + c + G.T @ z + (A.T @ y if A is not None else 0.0)
    rp_v = float(np.abs(A @ x - b).max(initial=0.0)) if A is not None else 0.0
    viol = float(np.maximum((G @ x - h) * rscale, 0.0).max(initial=0.0))
    gap = float(s @ z)
    if status != OPTIMAL and _certify_infeasible(n, A, b, G, h):
        status = INFEASIBLE
    return QPSolution(x / dsc, status, it, max(rp_v, viol), float(np.abs(rd * dsc).max(initial=0.0)), gap)
