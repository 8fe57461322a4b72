"""Rank reduction for feasible fantope points.

`extreme_round` walks a feasible point toward an extreme point of the
constraint system: it restricts to the fractional eigenspace, finds a
direction orthogonal to every constraint (and to the trace), and moves until
an eigenvalue pins at 0 or 1, never hurting the objective. The rank and
fractional-eigenvalue counts it guarantees drive the low-dimension results of
`mcdr_round`, the scaling approximation, and the iterative-rounding scheme
with its subset-singular-value violation budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

from ._linalg import eigh_desc, nullspace, smat, svec, sym
from .data_model import CovarianceSet
from .fantope import TAU_INT, ConstraintSystem, FantopePoint, LinearConstraint
from .objectives import MM_VAR, Objective, Objective as _Obj, evaluate
from .sdp import InfeasibleError, relax_solve, solve_sdp

NULL_TOL = 1e-10


class InfeasibleInputError(ValueError):
    """The starting point does not satisfy the constraint system."""


class NumericalStallError(RuntimeError):
    """A rounding step failed to pin an eigenvalue after boundary search."""


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class RoundingStep:
    block_size: int
    direction_norm: float
    step_size: float
    pinned: int  # 0 or 1: which boundary the step reached


@dataclass(frozen=True)
class RoundingTrace:
    steps: tuple[RoundingStep, ...]
    final_rank: int
    final_fractional: int


def extreme_round(system: ConstraintSystem, X0, *, tau_int: float = TAU_INT,
                  feas_tol_in: float = 1e-7, feas_tol_out: float = 1e-6,
                  max_steps: int = 10000) -> tuple[FantopePoint, RoundingTrace]:
    """Walk X0 along constraint-preserving directions until no direction is left.

    Every step keeps all affine constraint values and the trace exactly fixed,
    so feasibility is inherited from X0; the step direction is the projection
    of the objective onto the direction nullspace (or any nullspace vector
    when the objective is flat there), signed so the objective never worsens.
    """
    X = np.asarray(X0.X if isinstance(X0, FantopePoint) else X0, dtype=float)
    d = system.d
    if system.max_violation(X) > feas_tol_in:
        raise InfeasibleInputError(
            f"starting point violates the system by {system.max_violation(X):.3e}")
    C_min = np.asarray(system.C, dtype=float)
    if system.sense == "max":
        C_min = -C_min
    obj0 = float(np.sum(C_min * X))
    steps = []
    for _ in range(max_steps):
        moved = _walk_step(system, C_min, X, tau_int, steps)
        if moved is None:
            break
        X = moved
    else:
        raise NumericalStallError("rounding walk failed to terminate")
    point = FantopePoint.from_matrix(X, d, eig_tol=10 * feas_tol_in)
    if system.max_violation(point.X) > feas_tol_out:
        raise NumericalStallError(
            f"rounded point violates the system by {system.max_violation(point.X):.3e}")
    obj1 = float(np.sum(C_min * point.X))
    if obj1 > obj0 + 1e-8 * (1.0 + abs(obj0)):
        raise NumericalStallError("rounding step worsened the objective")
    return point, RoundingTrace(tuple(steps), point.rank(tau_int),
                                point.fractional_count(tau_int))


def _walk_step(system, C_min, X, tau_int, steps):
    """One pinning move; returns the new matrix or None when X is extreme."""
    lam, V = eigh_desc(X)
    lam = np.clip(lam, 0.0, 1.0)
    frac_idx = np.flatnonzero((lam > tau_int) & (lam < 1.0 - tau_int))
    ones_idx = np.flatnonzero(lam >= 1.0 - tau_int)
    rf = frac_idx.size
    if rf == 0:
        return None
    Q1 = V[:, frac_idx]
    Lam = np.diag(lam[frac_idx])
    rows = [svec(sym(Q1.T @ con.A @ Q1)) for con in system.constraints]
    rows.append(svec(np.eye(rf)))  # the trace functional
    null = nullspace(np.asarray(rows), NULL_TOL)
    if null.shape[1] == 0:
        return None
    cproj = svec(sym(Q1.T @ C_min @ Q1))
    p = null @ (null.T @ cproj)
    pnorm = float(np.linalg.norm(p))
    if pnorm > 1e-12 * (1.0 + float(np.linalg.norm(cproj))):
        Dv = -p / pnorm
        dir_norm = pnorm
    else:
        Dv = null[:, 0]
        nz = np.flatnonzero(np.abs(Dv) > 1e-12)
        if nz.size and Dv[nz[0]] < 0:
            Dv = -Dv
        dir_norm = 0.0
    Delta = smat(Dv, rf)
    delta, mu, W = _boundary_step(Lam, Delta)
    pinned_hi = np.flatnonzero(mu >= 1.0 - tau_int)
    pinned_lo = np.flatnonzero(mu <= tau_int)
    if pinned_hi.size == 0 and pinned_lo.size == 0:
        # tolerate one retry with doubled classification slack
        pinned_hi = np.flatnonzero(mu >= 1.0 - 2 * tau_int)
        pinned_lo = np.flatnonzero(mu <= 2 * tau_int)
        if pinned_hi.size == 0 and pinned_lo.size == 0:
            raise NumericalStallError(
                f"boundary step delta={delta:.3e} pinned no eigenvalue")
    # the eigenvalue closest to its boundary names the step
    hi_gap = (1.0 - mu[pinned_hi]).min() if pinned_hi.size else math.inf
    lo_gap = mu[pinned_lo].min() if pinned_lo.size else math.inf
    steps.append(RoundingStep(rf, dir_norm, float(delta), 1 if hi_gap <= lo_gap else 0))
    QW = Q1 @ W
    Xnew = V[:, ones_idx] @ V[:, ones_idx].T if ones_idx.size else np.zeros_like(X)
    for j, m in enumerate(np.clip(mu, 0.0, 1.0)):
        if m > tau_int:
            Xnew = Xnew + min(m, 1.0) * np.outer(QW[:, j], QW[:, j])
    return sym(Xnew)


def _boundary_step(Lam, Delta, eig_slack: float = 1e-12):
    """Largest delta keeping eig(Lam + delta*Delta) inside [0,1], by bisection."""

    def feasible(t):
        ev = np.linalg.eigvalsh(Lam + t * Delta)
        return ev.min() >= -eig_slack and ev.max() <= 1.0 + eig_slack

    hi = 1.0
    grow = 0
    while feasible(hi):
        hi *= 2.0
        grow += 1
        if grow > 80:
            raise NumericalStallError("direction never reaches the eigenvalue boundary")
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    mu, W = eigh_desc(Lam + lo * Delta)
    return lo, mu, W


def mcdr_round(cov: CovarianceSet, obj: Objective, d: int, X_bar,
               *, trace_budget: int | None = None
               ) -> tuple[FantopePoint, RoundingTrace]:
    """Round a relaxation solution by pinning groups 2..k at their utilities.

    The walk maximizes <B_1, X> subject to <B_i, X> = <B_i, X_bar> for i >= 2,
    which never lowers any monotone accumulation objective; with k-1 pinning
    constraints the output rank is at most d + floor(sqrt(2k+1/4) - 3/2).
    """
    budget = trace_budget if trace_budget is not None else d
    point = X_bar if isinstance(X_bar, FantopePoint) else FantopePoint.from_matrix(X_bar, budget)
    z = np.einsum("kij,ij->k", cov.B, point.X)
    cons = tuple(LinearConstraint(cov.B[i], "==", float(z[i])) for i in range(1, cov.k))
    system = ConstraintSystem(C=cov.B[0], constraints=cons, d=budget, sense="max")
    return extreme_round(system, point)


def rank_excess(k: int) -> int:
    """Extra dimensions s needed beyond d for a k-group instance."""
    return int(math.floor(math.sqrt(2 * k + 0.25) - 1.5))


def scale_approx(cov: CovarianceSet, d: int, *, tol: float = 1e-8):
    """Rank-exact max-min solution with value >= (1 - s/d) of the relaxed optimum.

    Solves the mm-var relaxation at target d - s and rounds it; the result has
    rank at most d by the pinning bound applied at the lowered target.
    """
    s = rank_excess(cov.k)
    if s >= d:
        raise ParameterError(f"scaling approximation needs s={s} < d={d}")
    obj = _Obj.mm_var()
    point_rel, weights, report_rel = relax_solve(cov, obj, d - s, tol=tol)
    rounded, trace = mcdr_round(cov, obj, d, point_rel, trace_budget=d - s)
    util = evaluate(obj, cov, rounded)
    report = dataclass_replace_report(report_rel, rounded, util, cov, extras={
        "s": s, "target": d - s, "relaxed_value": report_rel.value})
    return rounded, report


def dataclass_replace_report(base, point, util, cov, extras):
    from dataclasses import replace
    merged = dict(base.extras)
    merged.update(extras)
    return replace(base, value=util.value, z=util.z, losses=util.losses,
                   rank=point.rank(), fractional=point.fractional_count(),
                   extras=merged)


class DeltaBound(NamedTuple):
    value: float
    exact: bool


def delta_bound(matrices, *, exact_limit: int = 20, samples: int = 2048,
                seed: int = 0) -> DeltaBound:
    """Worst subset-average top-singular-value sum.

    Delta = max over nonempty S of the sum of the floor(sqrt(2|S|)+1) largest
    singular values of mean(A_j, j in S). Exact enumeration uses a Gray-code
    walk over all subsets; beyond `exact_limit` matrices the result is a
    sampled lower estimate (always including singletons and the full set) and
    is flagged approximate.
    """
    mats = [np.asarray(M, dtype=float) for M in matrices]
    m = len(mats)
    if m == 0:
        raise ValueError("delta_bound needs at least one matrix")
    n = mats[0].shape[0]

    def subset_value(total, size):
        sv = np.linalg.svd(total / size, compute_uv=False)
        take = min(int(math.floor(math.sqrt(2 * size) + 1.0)), n)
        return float(sv[:take].sum())

    if m <= exact_limit:
        best = -math.inf
        total = np.zeros_like(mats[0])
        members = np.zeros(m, dtype=bool)
        prev_gray = 0
        for idx in range(1, 1 << m):
            gray = idx ^ (idx >> 1)
            flip = (gray ^ prev_gray).bit_length() - 1
            prev_gray = gray
            if members[flip]:
                total = total - mats[flip]
                members[flip] = False
            else:
                total = total + mats[flip]
                members[flip] = True
            best = max(best, subset_value(total, int(members.sum())))
        return DeltaBound(best, True)
    rng = np.random.default_rng(seed)
    best = -math.inf
    for i in range(m):
        best = max(best, subset_value(mats[i], 1))
    best = max(best, subset_value(sum(mats), m))
    for _ in range(samples):
        mask = rng.integers(0, 2, size=m).astype(bool)
        if not mask.any():
            continue
        total = sum(M for M, keep in zip(mats, mask) if keep)
        best = max(best, subset_value(total, int(mask.sum())))
    return DeltaBound(best, False)


@dataclass(frozen=True)
class IterativeReport:
    value: float
    violations: tuple[float, ...]
    iterations: int
    deleted: tuple[int, ...]
    objective_history: tuple[float, ...]
    deletion_values: tuple[float, ...]  # min <F^T A_i F, X_f> at each deletion


def iterative_sdp(system: ConstraintSystem, d: int | None = None, *,
                  tol: float = 1e-8) -> tuple[FantopePoint, IterativeReport]:
    """Iterative rounding to an exactly rank-<=d projection.

    Repeatedly solves the residual SDP on the undecided subspace, freezes
    eigenvectors that come out integral, and when fractional mass persists
    drops the constraint with the smallest inner product against the
    fractional part; the final violations are bounded by delta_bound of the
    constraint matrices.
    """
    if any(c.rel != ">=" for c in system.constraints):
        raise ValueError("iterative rounding expects all constraints as '>='")
    if system.sense != "min":
        raise ValueError("iterative rounding minimizes <C, X>")
    d = system.d if d is None else d
    n = system.n
    C = np.asarray(system.C, dtype=float)
    A_list = [np.asarray(c.A, dtype=float) for c in system.constraints]
    b_list = [float(c.b) for c in system.constraints]
    S = list(range(len(A_list)))
    F1 = np.zeros((n, 0))
    F = np.eye(n)
    deleted, obj_hist, del_vals = [], [], []
    iterations = 0
    first = True
    while F.shape[1] > 0:
        iterations += 1
        r = F.shape[1]
        d_r = d - F1.shape[1]
        if d_r <= 0:
            break
        proj_C = sym(F.T @ C @ F)
        if S:
            cons = []
            for i in S:
                shift = float(np.sum(A_list[i] * (F1 @ F1.T)))
                cons.append(LinearConstraint(sym(F.T @ A_list[i] @ F), ">=",
                                             b_list[i] - shift))
            sub = ConstraintSystem(C=proj_C, constraints=tuple(cons), d=d_r, sense="min")
            try:
                sol, _ = solve_sdp(sub, tol=tol)
            except InfeasibleError:
                if first:
                    raise
                raise NumericalStallError("residual SDP lost feasibility mid-run")
            sol, _ = extreme_round(sub, sol)
            lam, V = sol.eigenvalues, sol.eigenvectors
        else:
            # no constraints left: the extreme optimum is the projector onto
            # the most negative objective directions, capped at the budget
            w, V = eigh_desc(proj_C)
            order = np.argsort(w)  # ascending: most negative first
            chosen = [int(i) for i in order if w[i] < -NULL_TOL][:d_r]
            lam = np.zeros(r)
            lam[chosen] = 1.0
        first = False
        ones = np.flatnonzero(lam >= 1.0 - TAU_INT)
        zeros = np.flatnonzero(lam <= TAU_INT)
        frac = np.flatnonzero((lam > TAU_INT) & (lam < 1.0 - TAU_INT))
        if ones.size:
            F1 = np.hstack([F1, F @ V[:, ones]])
        X_f = (V[:, frac] * lam[frac]) @ V[:, frac].T if frac.size else np.zeros((r, r))
        obj_hist.append(float(np.sum(C * (F1 @ F1.T))) +
                        float(np.sum(sym(F.T @ C @ F) * X_f)))
        if frac.size and S:
            vals = [float(np.sum(sym(F.T @ A_list[i] @ F) * X_f)) for i in S]
            j = int(np.argmin(vals))
            del_vals.append(vals[j])
            deleted.append(S.pop(j))
        F = F @ V[:, frac]
    X_tilde = F1 @ F1.T
    point = FantopePoint.from_matrix(sym(X_tilde), d)
    violations = tuple(max(0.0, b - float(np.sum(A * point.X)))
                       for A, b in zip(A_list, b_list))
    report = IterativeReport(
        value=float(np.sum(C * point.X)), violations=violations,
        iterations=iterations, deleted=tuple(deleted),
        objective_history=tuple(obj_hist), deletion_values=tuple(del_vals))
    return point, report
