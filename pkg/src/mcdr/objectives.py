"""Accumulation objectives over per-group utilities z_i = <B_i, X>.

All kinds are concave maximization objectives in z:

  mm-var        min_i z_i
  mm-loss       min_i (z_i - beta_i), i.e. the negated maximum marginal loss
  nsw           sum_i log z_i
  nsw-smoothed  sum_i log(z_i + lam * ||B_i||_F)
  power-mean    (sum_i z_i^p)^(1/p), p <= 1
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import CovarianceSet
from .fantope import FantopePoint

MM_VAR = "mm-var"
MM_LOSS = "mm-loss"
NSW = "nsw"
NSW_SMOOTHED = "nsw-smoothed"
POWER_MEAN = "power-mean"

KINDS = (MM_VAR, MM_LOSS, NSW, NSW_SMOOTHED, POWER_MEAN)

DEFAULT_LAMBDA = 1e-3
NEG_INF = float("-inf")
_SIMPLEX_TOL = 1e-9


class DegenerateUtilityError(ValueError):
    """A group's utility makes the objective undefined (e.g. log of zero)."""

    def __init__(self, group, message):
        self.group = group
        super().__init__(message)


@dataclass(frozen=True)
class Objective:
    kind: str
    lam: float = 0.0
    p: float = 1.0
    offsets: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == NSW_SMOOTHED and not self.lam > 0:
            raise ValueError("nsw-smoothed requires lam > 0")
        if self.kind == POWER_MEAN:
            if self.p > 1:
                raise ValueError("power mean requires p <= 1 (concavity)")
            if self.p == 0:
                raise ValueError("p = 0 is the NSW limit; use kind 'nsw'")

    @classmethod
    def mm_var(cls):
        return cls(MM_VAR)

    @classmethod
    def mm_loss(cls, beta=None):
        return cls(MM_LOSS, offsets=None if beta is None else tuple(float(b) for b in beta))

    @classmethod
    def nsw(cls):
        return cls(NSW)

    @classmethod
    def nsw_smoothed(cls, lam: float = DEFAULT_LAMBDA):
        return cls(NSW_SMOOTHED, lam=float(lam))

    @classmethod
    def power_mean(cls, p: float):
        return cls(POWER_MEAN, p=float(p))


@dataclass(frozen=True)
class GroupUtilities:
    z: tuple[float, ...]
    losses: tuple[float, ...] | None
    value: float


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, FantopePoint):
        return X.X
    return np.asarray(X, dtype=float)


def beta(cov: CovarianceSet, d: int) -> np.ndarray:
    """Each group's optimal top-d variance: sum of the d largest eigenvalues."""
    n = cov.n
    if not 1 <= d <= n:
        raise ValueError(f"d must be in [1, {n}], got {d}")
    vals = np.sort(np.linalg.eigvalsh(cov.B), axis=1)[:, ::-1]
    return vals[:, :d].sum(axis=1)


def group_utilities(cov: CovarianceSet, X) -> np.ndarray:
    return np.einsum("kij,ij->k", cov.B, _as_matrix(X))


def _offsets(obj: Objective, cov: CovarianceSet) -> np.ndarray:
    if obj.offsets is not None:
        if len(obj.offsets) != cov.k:
            raise ValueError("objective offsets do not match the group count")
        return np.asarray(obj.offsets)
    if cov.beta is not None:
        return np.asarray(cov.beta)
    raise ValueError("mm-loss needs beta: attach via CovarianceSet.with_beta or Objective.mm_loss(beta)")


def evaluate(obj: Objective, cov: CovarianceSet, X) -> GroupUtilities:
    """Utilities z, losses beta - z (when beta is known), and the scalar value g(z)."""
    z = group_utilities(cov, X)
    losses = None
    if obj.kind == MM_LOSS or obj.offsets is not None or cov.beta is not None:
        try:
            b = _offsets(obj, cov)
            losses = tuple(float(x) for x in (b - z))
        except ValueError:
            if obj.kind == MM_LOSS:
                raise
    if obj.kind == MM_VAR:
        value = float(z.min())
    elif obj.kind == MM_LOSS:
        b = _offsets(obj, cov)
        value = float((z - b).min())
    elif obj.kind == NSW:
        bad = np.flatnonzero(z <= 0)
        if bad.size:
            g = int(bad[0])
            raise DegenerateUtilityError(
                cov.labels[g], f"group {cov.labels[g]!r} has nonpositive variance {z[g]:.3e}")
        value = float(np.log(z).sum())
    elif obj.kind == NSW_SMOOTHED:
        fro = np.linalg.norm(cov.B, axis=(1, 2))
        den = z + obj.lam * fro
        bad = np.flatnonzero(den <= 0)
        if bad.size:
            g = int(bad[0])
            raise DegenerateUtilityError(
                cov.labels[g], f"group {cov.labels[g]!r} has nonpositive smoothed variance")
        value = float(np.log(den).sum())
    else:  # POWER_MEAN
        if obj.p < 1 and np.any(z <= 0):
            g = int(np.flatnonzero(z <= 0)[0])
            raise DegenerateUtilityError(
                cov.labels[g], f"group {cov.labels[g]!r} has nonpositive variance under p={obj.p}")
        value = float(np.power(np.power(z, obj.p).sum(), 1.0 / obj.p))
    return GroupUtilities(z=tuple(float(x) for x in z), losses=losses, value=value)


def nsw_score(z, lam: float = 0.0, fro=None) -> float:
    """Scale-free NSW score: geometric mean of (smoothed) variances."""
    z = np.asarray(z, dtype=float)
    if lam > 0 and fro is not None:
        z = z + lam * np.asarray(fro)
    if np.any(z <= 0):
        return 0.0
    return float(np.exp(np.log(z).mean()))


def conjugate(obj: Objective, w) -> float:
    """Concave conjugate g_*(w) = inf_z (w.z - g(z)), the dual closure term."""
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    on_simplex = bool(np.all(w >= -1e-12) and abs(w.sum() - 1.0) <= _SIMPLEX_TOL)
    if obj.kind == MM_VAR:
        return 0.0 if on_simplex else NEG_INF
    if obj.kind == MM_LOSS:
        if not on_simplex:
            return NEG_INF
        b = np.asarray(obj.offsets, dtype=float) if obj.offsets is not None else None
        if b is None:
            raise ValueError("mm-loss conjugate needs beta offsets on the objective")
        return float(w @ b)
    if obj.kind == NSW:
        if np.any(w <= 0):
            return NEG_INF
        return float((1.0 + np.log(w)).sum())
    raise ValueError(f"conjugate not available for kind {obj.kind!r}")


def subgradient(obj: Objective, cov: CovarianceSet, X) -> np.ndarray:
    """A supergradient of g at X.

    The max-min kinds return B_i for the worst-off group (ties break to the
    lowest group index); smooth kinds return the exact gradient.
    """
    z = group_utilities(cov, X)
    if obj.kind == MM_VAR:
        return cov.B[int(np.argmin(z))].copy()
    if obj.kind == MM_LOSS:
        b = _offsets(obj, cov)
        return cov.B[int(np.argmin(z - b))].copy()
    if obj.kind == NSW:
        if np.any(z <= 0):
            g = int(np.flatnonzero(z <= 0)[0])
            raise DegenerateUtilityError(cov.labels[g], "nonpositive variance in NSW gradient")
        return np.einsum("k,kij->ij", 1.0 / z, cov.B)
    if obj.kind == NSW_SMOOTHED:
        fro = np.linalg.norm(cov.B, axis=(1, 2))
        den = z + obj.lam * fro
        if np.any(den <= 0):
            g = int(np.flatnonzero(den <= 0)[0])
            raise DegenerateUtilityError(cov.labels[g], "nonpositive smoothed variance in gradient")
        return np.einsum("k,kij->ij", 1.0 / den, cov.B)
    if obj.kind == POWER_MEAN:
        if np.any(z <= 0):
            g = int(np.flatnonzero(z <= 0)[0])
            raise DegenerateUtilityError(cov.labels[g], "nonpositive variance in power-mean gradient")
        s = float(np.power(z, obj.p).sum())
        coef = np.power(s, 1.0 / obj.p - 1.0) * np.power(z, obj.p - 1.0)
        return np.einsum("k,kij->ij", coef, cov.B)
    raise ValueError(f"unknown kind {obj.kind!r}")
