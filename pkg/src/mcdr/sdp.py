"""Bundled small-scale dense SDP solver.

Solves min/max <C, X> over the fantope {0 <= X <= I, tr(X) <= d} under affine
constraints <A_i, X> rel b_i, plus the epigraph reformulation used by the
max-min relaxations. The cone program is handed to cvxopt's conelp in svec
coordinates with two semidefinite blocks (X and I - X); primal/dual objective
values from the interior-point run provide the gap certificate.
"""

from __future__ import annotations

import math
import time

import numpy as np
from cvxopt import matrix as cvxmat
from cvxopt import solvers as cvxsolvers

from ._linalg import smat, svec, svec_basis
from .data_model import CovarianceSet
from .fantope import ConstraintSystem, FantopePoint, LinearConstraint
from .objectives import MM_LOSS, MM_VAR, Objective
from .solvers import CERT_SDP, DualWeights, SolveReport, _mm_offsets, _report

N_MAX_DEFAULT = 256


class InfeasibleError(RuntimeError):
    """The constraint system admits no fantope point (certified by a dual ray)."""


class SolverStallError(RuntimeError):
    """The interior-point method stopped without certificate or iterate."""


def _conelp(c, Gl, hl, n, extra_cols, Aeq=None, beq=None, tol=1e-8):
    """Assemble and solve the cone LP; returns the raw cvxopt solution dict."""
    N = n * (n + 1) // 2
    T = svec_basis(n)
    pad = np.zeros((n * n, extra_cols))
    Gs = [np.hstack([-T, pad]), np.hstack([T, pad])]
    hs = [np.zeros(n * n), np.eye(n).flatten(order="F")]
    G = np.vstack([Gl] + Gs)
    h = np.concatenate([hl] + hs)
    dims = {"l": len(hl), "q": [], "s": [n, n]}
    old = dict(cvxsolvers.options)
    cvxsolvers.options.update({
        "show_progress": False,
        "abstol": tol, "reltol": tol, "feastol": min(tol, 1e-8),
        "maxiters": 200,
    })
    try:
        kwargs = {}
        if Aeq is not None and len(Aeq):
            kwargs["A"] = cvxmat(np.asarray(Aeq))
            kwargs["b"] = cvxmat(np.asarray(beq))
        sol = cvxsolvers.conelp(cvxmat(c), cvxmat(G), cvxmat(h), dims, **kwargs)
    finally:
        cvxsolvers.options.clear()
        cvxsolvers.options.update(old)
    return sol


def _independent_rows(A, b, tol=1e-12):
    """Greedy maximal linearly independent subset of equality rows."""
    rows, rhs, basis = [], [], []
    for r, bb in zip(A, b):
        v = np.asarray(r, dtype=float)
        for u in basis:
            v = v - (u @ v) * u
        nv = np.linalg.norm(v)
        if nv > tol * max(1.0, np.linalg.norm(r)):
            basis.append(v / nv)
            rows.append(r)
            rhs.append(bb)
    return np.asarray(rows), np.asarray(rhs)


def solve_sdp(system: ConstraintSystem, *, tol: float = 1e-8,
              n_max: int = N_MAX_DEFAULT) -> tuple[FantopePoint, SolveReport]:
    """Solve the constraint system to a certified primal-dual gap.

    Returns a fantope point feasible within tol*(1+|b_i|) per constraint and a
    report whose gap is the interior-point primal/dual difference. Raises
    InfeasibleError when the system is certified infeasible.
    """
    n, d = system.n, system.d
    if n > n_max:
        raise ValueError(f"n={n} exceeds the dense-solver limit {n_max}")
    t0 = time.perf_counter()
    N = n * (n + 1) // 2
    sign = 1.0 if system.sense == "min" else -1.0
    c = sign * svec(np.asarray(system.C, dtype=float))
    Gl = [svec(np.eye(n))]
    hl = [float(d)]
    Aeq, beq = [], []
    for con in system.constraints:
        r = svec(np.asarray(con.A, dtype=float))
        if con.rel == "<=":
            Gl.append(r)
            hl.append(float(con.b))
        elif con.rel == ">=":
            Gl.append(-r)
            hl.append(-float(con.b))
        else:
            Aeq.append(r)
            beq.append(float(con.b))
    if Aeq:
        Aeq, beq = _independent_rows(np.asarray(Aeq), np.asarray(beq))
    sol = _conelp(c, np.asarray(Gl), np.asarray(hl), n, 0, Aeq, beq, tol)
    status = sol["status"]
    if status == "primal infeasible":
        raise InfeasibleError("constraint system certified infeasible by a dual ray")
    if sol["x"] is None:
        raise SolverStallError(f"interior-point status {status!r} with no iterate")
    x = np.asarray(sol["x"]).ravel()
    X = smat(x[:N], n)
    point = FantopePoint.from_matrix(X, d, eig_tol=max(1e-6, 100 * tol))
    gap = abs(float(sol["primal objective"]) - float(sol["dual objective"]))
    value = sign * float(sol["primal objective"])
    worst = system.max_violation(point.X)
    if status != "optimal" and (worst > 100 * tol or not math.isfinite(gap)):
        raise SolverStallError(f"interior-point status {status!r}, residual {worst:.2e}")
    # the certified bound on the optimum lies on the improving side
    dual_bound = value + gap if system.sense == "max" else value - gap
    report = SolveReport(
        solver="sdp", objective="linear", d=d, value=value, dual_bound=dual_bound,
        gap=gap, iterations=int(sol["iterations"]), converged=(status == "optimal"),
        certificate=CERT_SDP, z=(), losses=None, rank=point.rank(),
        fractional=point.fractional_count(), wall_time_s=time.perf_counter() - t0,
        extras={"status": status, "max_violation": worst},
    )
    return point, report


def relax_solve(cov: CovarianceSet, obj: Objective, d: int, *, tol: float = 1e-8,
                n_max: int = N_MAX_DEFAULT
                ) -> tuple[FantopePoint, DualWeights, SolveReport]:
    """Certified solution of the max-min relaxation via the epigraph SDP.

    maximize z subject to <B_i, X> - beta_i >= z over the fantope; beta = 0
    gives mm-var. The dual multipliers of the group constraints are returned
    as simplex weights.
    """
    if obj.kind not in (MM_VAR, MM_LOSS):
        raise ValueError("relax_solve handles mm-var/mm-loss; use fw_solve for NSW kinds")
    n, k = cov.n, cov.k
    if n > n_max:
        raise ValueError(f"n={n} exceeds the dense-solver limit {n_max}")
    t0 = time.perf_counter()
    beta = _mm_offsets(obj, cov)
    N = n * (n + 1) // 2
    c = np.zeros(N + 1)
    c[-1] = -1.0  # maximize the epigraph variable
    Gl = [np.concatenate([svec(np.eye(n)), [0.0]])]
    hl = [float(d)]
    for i in range(k):
        Gl.append(np.concatenate([-svec(cov.B[i]), [1.0]]))
        hl.append(-float(beta[i]))
    sol = _conelp(c, np.asarray(Gl), np.asarray(hl), n, 1, tol=tol)
    status = sol["status"]
    if status == "primal infeasible":
        raise InfeasibleError("relaxation certified infeasible")
    if sol["x"] is None:
        raise SolverStallError(f"interior-point status {status!r} with no iterate")
    x = np.asarray(sol["x"]).ravel()
    point = FantopePoint.from_matrix(smat(x[:N], n), d, eig_tol=max(1e-6, 100 * tol))
    value = float(x[-1])
    gap = abs(float(sol["primal objective"]) - float(sol["dual objective"]))
    lam = np.asarray(sol["z"]).ravel()[1:k + 1]
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    w = lam / total if total > 0 else np.full(k, 1.0 / k)
    w = w / w.sum()
    weights = DualWeights(tuple(float(v) for v in w))
    report = _report("sdp", obj, cov, d, point, value, value + gap, int(sol["iterations"]),
                     status == "optimal", CERT_SDP,
                     history=((int(sol["iterations"]), value, value + gap, gap),),
                     extras={"status": status}, t0=t0)
    return point, weights, report
