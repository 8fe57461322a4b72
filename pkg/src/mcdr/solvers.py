"""First-order solvers for the trace relaxation.

The workhorse oracle is standard PCA: for any symmetric C, the maximizer of
<C, X> over the fantope with tr(X) = d is the projector onto the top-d
eigenvectors. Multiplicative weights runs mirror descent on the dual simplex
with that oracle; Frank-Wolfe uses it as the linear minimization oracle for
the smoothed NSW objective; two groups admit a plain binary search on the
dual segment.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._linalg import top_d_projector
from .data_model import CovarianceSet
from .fantope import TAU_INT, FantopePoint
from .objectives import (MM_LOSS, MM_VAR, NSW_SMOOTHED, DegenerateUtilityError,
                         Objective, conjugate, evaluate)

CERT_MW = "MW_GAP"
CERT_FW = "FW_GAP"
CERT_SDP = "SDP_GAP"
CERT_EXACT = "ORACLE_EXACT"

AUTO = "auto"


@dataclass(frozen=True)
class DualWeights:
    """Nonnegative weights on the groups summing to one."""

    w: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.w)
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("dual weights must lie on the simplex")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w)


@dataclass(frozen=True)
class SolveReport:
    solver: str
    objective: str
    d: int
    value: float
    dual_bound: float
    gap: float
    iterations: int
    converged: bool
    certificate: str
    z: tuple[float, ...]
    losses: tuple[float, ...] | None
    rank: int
    fractional: int
    wall_time_s: float
    history: tuple[tuple[int, float, float, float], ...] = field(default=(), repr=False)
    extras: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if math.isfinite(self.gap) and self.gap < -1e-9:
            raise ValueError(f"negative duality gap {self.gap:.3e} breaks weak duality")


def _report(solver, obj, cov, d, point, value, dual_bound, iterations, converged,
            certificate, history=(), extras=None, t0=None):
    util = None
    try:
        util = evaluate(obj, cov, point)
    except (ValueError, DegenerateUtilityError):
        pass
    z = util.z if util else tuple(float(x) for x in np.einsum("kij,ij->k", cov.B, point.X))
    losses = util.losses if util else None
    gap = dual_bound - value
    return SolveReport(
        solver=solver, objective=obj.kind, d=d, value=value, dual_bound=dual_bound,
        gap=gap, iterations=iterations, converged=converged, certificate=certificate,
        z=z, losses=losses, rank=point.rank(), fractional=point.fractional_count(),
        wall_time_s=(time.perf_counter() - t0) if t0 is not None else 0.0,
        history=tuple(history), extras=extras or {},
    )


def pca_oracle(C: np.ndarray, d: int) -> tuple[FantopePoint, float]:
    """Exact rank-d maximizer of <C, X> over the fantope and its value."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if not 1 <= d <= n:
        raise ValueError(f"d must be in [1, {n}], got {d}")
    P, value, V = top_d_projector(C, d)
    point = FantopePoint(X=0.5 * (P + P.T), d=d,
                         eigenvalues=np.concatenate([np.ones(d), np.zeros(n - d)]),
                         eigenvectors=np.hstack([V, np.zeros((n, n - d))]) if d < n else V)
    return point, float(value)


def _mm_offsets(obj: Objective, cov: CovarianceSet) -> np.ndarray:
    if obj.kind == MM_VAR:
        return np.zeros(cov.k)
    if obj.offsets is not None:
        return np.asarray(obj.offsets, dtype=float)
    if cov.beta is not None:
        return np.asarray(cov.beta, dtype=float)
    raise ValueError("mm-loss solve needs beta filled (CovarianceSet.with_beta)")


def auto_rate(k: int, L: float, eps: float, max_iters: int) -> tuple[float, int]:
    """Bound-minimizing fixed rate for the horizon the tolerance implies.

    Minimizing log(k)/(eta*T) + eta*L^2/2 over eta gives
    eta = sqrt(2 log k / T)/L, and the horizon T* = ceil(2 log k (L/eps)^2)
    is where that optimum reaches eps. The horizon is capped at max_iters.
    """
    logk = math.log(max(k, 2))
    T = max(1, min(int(math.ceil(2.0 * logk * (L / eps) ** 2)), max_iters))
    return math.sqrt(2.0 * logk / T) / L, T


def mw_solve(cov: CovarianceSet, obj: Objective, d: int, *, eta=AUTO, eps=None,
             max_iters: int = 10000, mode: str = "avg",
             eta_scale: float = 1.0) -> tuple[FantopePoint, DualWeights, SolveReport]:
    """Multiplicative-weights / mirror-descent solver for mm-var and mm-loss.

    Maintains simplex weights over groups, calls the PCA oracle on the
    weighted covariance, and certifies via the running minimum of the dual
    values against the primal value of the averaged (or last) iterate.
    Stops when dual - primal <= eps, else returns the final iterate flagged
    unconverged.
    """
    t0 = time.perf_counter()
    if obj.kind not in (MM_VAR, MM_LOSS):
        raise ValueError(f"mw_solve handles mm-var/mm-loss only, got {obj.kind!r}"
                         " (use fw_solve for the smoothed NSW objective)")
    if mode not in ("avg", "last"):
        raise ValueError("mode must be 'avg' or 'last'")
    k, n = cov.k, cov.n
    max_iters = max(1, int(max_iters))
    beta = _mm_offsets(obj, cov)
    L = max(cov.trace)
    if eps is None:
        eps = 1e-3 * L
    if eta == AUTO:
        eta_val, _ = auto_rate(k, L, eps, max_iters)
        eta_val *= eta_scale
    else:
        eta_val = float(eta) * eta_scale
    logw = np.zeros(k)
    y = math.inf
    Psum = np.zeros((n, n))
    history = []
    converged = False
    X = np.full((n, n), np.nan)
    w = np.full(k, 1.0 / k)
    for t in range(1, max_iters + 1):
        w = np.exp(logw - logw.max())
        w /= w.sum()
        M = np.einsum("k,kij->ij", w, cov.B)
        P, val = pca_oracle(M, d)
        zP = np.einsum("kij,ij->k", cov.B, P.X)
        # dual value at w: the oracle solves the inner max, conjugate closes it
        y = min(y, val - float(w @ beta))
        Psum += P.X
        X = Psum / t if mode == "avg" else P.X
        primal = float((np.einsum("kij,ij->k", cov.B, X) - beta).min())
        gap = y - primal
        history.append((t, primal, y, gap))
        if gap <= eps:
            converged = True
            break
        logw = logw - eta_val * (zP - beta)
        logw -= logw.max()
    point = FantopePoint.from_matrix(X, d)
    cert = CERT_EXACT if k == 1 else CERT_MW
    report = _report("mw", obj, cov, d, point, history[-1][1], y, len(history),
                     converged, cert, history,
                     extras={"eta": eta_val, "mode": mode}, t0=t0)
    return point, DualWeights(tuple(float(x) for x in w)), report


def fw_solve(cov: CovarianceSet, obj: Objective, d: int, *, eps: float = 1e-6,
             max_iters: int = 100000, step: str = "harmonic") -> tuple[FantopePoint, SolveReport]:
    """Frank-Wolfe on the smoothed NSW objective with the PCA linear oracle.

    Starts at (d/n) I, uses harmonic steps 2/(t+2) or exact line search, and
    stops once the Frank-Wolfe gap <S_t - X_t, grad> drops below eps.
    """
    t0 = time.perf_counter()
    if obj.kind != NSW_SMOOTHED:
        raise ValueError("fw_solve expects the smoothed NSW objective"
                         " (Objective.nsw_smoothed)")
    if step not in ("harmonic", "line-search"):
        raise ValueError("step must be 'harmonic' or 'line-search'")
    lam = obj.lam
    k, n = cov.k, cov.n
    fro = np.linalg.norm(cov.B, axis=(1, 2))
    bad = np.flatnonzero(fro <= 0)
    if bad.size:
        g = int(bad[0])
        raise DegenerateUtilityError(cov.labels[g], f"group {cov.labels[g]!r} has zero covariance")
    X = (d / n) * np.eye(n)
    history = []
    converged = False
    best_bound = math.inf

    def value_of(zv):
        return float(np.log(zv + lam * fro).sum())

    for t in range(max_iters):
        z = np.einsum("kij,ij->k", cov.B, X)
        G = np.einsum("k,kij->ij", 1.0 / (z + lam * fro), cov.B)
        S, _ = pca_oracle(G, d)
        gap = float(np.sum((S.X - X) * G))
        val = value_of(z)
        best_bound = min(best_bound, val + gap)
        history.append((t, val, best_bound, gap))
        if gap <= eps:
            converged = True
            break
        if step == "harmonic":
            eta_t = 2.0 / (t + 2.0)
        else:
            eta_t = _line_search(cov, lam, fro, X, S.X)
        X = (1.0 - eta_t) * X + eta_t * S.X
    point = FantopePoint.from_matrix(X, d)
    final_gap = history[-1][3]
    report = _report("fw", obj, cov, d, point, history[-1][1],
                     history[-1][1] + final_gap, len(history), converged,
                     CERT_FW, history, extras={"lam": lam, "step": step}, t0=t0)
    return point, report


def _line_search(cov, lam, fro, X, S, iters: int = 60) -> float:
    """Ternary search for the best step along the FW segment (concave in eta)."""
    zX = np.einsum("kij,ij->k", cov.B, X)
    zS = np.einsum("kij,ij->k", cov.B, S)

    def phi(eta):
        return float(np.log((1 - eta) * zX + eta * zS + lam * fro).sum())

    lo, hi = 0.0, 1.0
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if phi(m1) < phi(m2):
            lo = m1
        else:
            hi = m2
    return 0.5 * (lo + hi)


def binary_search_two_groups(cov: CovarianceSet, obj: Objective, d: int, *,
                             tol_w: float = 1e-12
                             ) -> tuple[FantopePoint, DualWeights, SolveReport]:
    """Dual binary search for two groups.

    The dual of the max-min problem over w in [0,1] has subgradient
    <B_1 - B_2, X_w> (shifted by beta_1 - beta_2 for mm-loss) at the PCA
    solution X_w of w B_1 + (1-w) B_2; bisection brackets its zero and the
    primal solution is the convex combination of the two boundary oracle
    outputs that kills the subgradient.
    """
    t0 = time.perf_counter()
    if cov.k != 2:
        raise ValueError("binary search requires exactly two groups")
    if obj.kind not in (MM_VAR, MM_LOSS):
        raise ValueError("binary search handles mm-var/mm-loss only")
    beta = _mm_offsets(obj, cov)
    diff_offset = beta[0] - beta[1]
    B1, B2 = cov.B[0], cov.B[1]
    y = math.inf
    dual_trace = []
    oracle_calls = 0

    def probe(w):
        nonlocal y, oracle_calls
        P, val = pca_oracle(w * B1 + (1 - w) * B2, d)
        dual = val - (w * beta[0] + (1 - w) * beta[1])
        y = min(y, dual)
        dual_trace.append((w, dual))
        oracle_calls += 1
        slope = float(np.sum((B1 - B2) * P.X)) - diff_offset
        return slope, P

    s_lo, P_lo = probe(0.0)
    exact_endpoint = False
    if s_lo >= 0:
        X, w_star, mu = P_lo.X, 0.0, 1.0
        exact_endpoint = True
    else:
        s_hi, P_hi = probe(1.0)
        if s_hi <= 0:
            X, w_star, mu = P_hi.X, 1.0, 0.0
            exact_endpoint = True
        else:
            lo, hi = 0.0, 1.0
            while hi - lo > tol_w:
                mid = 0.5 * (lo + hi)
                s_mid, P_mid = probe(mid)
                if s_mid < 0:
                    lo, s_lo, P_lo = mid, s_mid, P_mid
                elif s_mid > 0:
                    hi, s_hi, P_hi = mid, s_mid, P_mid
                else:
                    lo = hi = mid
                    s_lo = s_hi = 0.0
                    P_lo = P_hi = P_mid
                    break
            if s_hi == s_lo:
                mu = 1.0
            else:
                mu = s_hi / (s_hi - s_lo)
            mu = min(max(mu, 0.0), 1.0)
            X = mu * P_lo.X + (1 - mu) * P_hi.X
            w_star = mu * lo + (1 - mu) * hi
    point = FantopePoint.from_matrix(X, d)
    z = np.einsum("kij,ij->k", cov.B, point.X)
    primal = float((z - beta).min())
    gap = y - primal
    history = ((oracle_calls, primal, y, gap),)
    weights = DualWeights((float(w_star), float(1.0 - w_star)))
    cert = CERT_EXACT if exact_endpoint else CERT_MW
    report = _report("bisect", obj, cov, d, point, primal, y, oracle_calls,
                     gap <= max(1e-9, 10 * tol_w * max(cov.trace)) or exact_endpoint,
                     cert, history,
                     extras={"w_star": float(w_star), "mu": float(mu),
                             "dual_trace": tuple(dual_trace)}, t0=t0)
    return point, weights, report


def standard_pca(cov: CovarianceSet, d: int, weighted_by_size: bool = True
                 ) -> tuple[FantopePoint, float]:
    """Baseline: PCA of the pooled covariance (size-weighted when normalized)."""
    weights = np.asarray(cov.m, dtype=float) if weighted_by_size else np.ones(cov.k)
    total = np.einsum("k,kij->ij", weights, cov.B)
    return pca_oracle(total, d)
