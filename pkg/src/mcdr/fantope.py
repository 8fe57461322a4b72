"""Relaxation geometry: fantope points and affine constraint systems.

The fantope {X : 0 <= X <= I, tr(X) <= d} is the feasible region of the trace
relaxation; every solver in this package produces points in it and the
rounding procedures walk along its faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import check_symmetric, eigh_desc

TAU_INT = 1e-7  # eigenvalue within this of {0,1} counts as integral

_RELATIONS = ("<=", ">=", "==")


@dataclass(frozen=True)
class FantopePoint:
    """Symmetric n x n matrix with eigenvalues in [0,1] and trace at most d."""

    X: np.ndarray
    d: int
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, X, d: int, eig_tol: float = 1e-8) -> "FantopePoint":
        X = np.asarray(X, dtype=float)
        check_symmetric(X)
        w, V = eigh_desc(X)
        if w.size:
            if w.min() < -eig_tol or w.max() > 1.0 + eig_tol:
                raise ValueError(
                    f"eigenvalues outside [0,1] beyond tolerance: "
                    f"[{w.min():.3e}, {w.max():.3e}]"
                )
        w = np.clip(w, 0.0, 1.0)
        if w.sum() > d + 1e-8 * d:
            raise ValueError(f"trace {w.sum():.12f} exceeds budget d={d}")
        Xc = (V * w) @ V.T
        return cls(X=0.5 * (Xc + Xc.T), d=int(d), eigenvalues=w, eigenvectors=V)

    @classmethod
    def from_projection(cls, V: np.ndarray, d: int | None = None) -> "FantopePoint":
        """Fantope point VV^T from a matrix V with orthonormal columns."""
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if d is None:
            d = V.shape[1]
        return cls.from_matrix(V @ V.T, d)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    def rank(self, tau: float = TAU_INT) -> int:
        return int(np.sum(self.eigenvalues > tau))

    def fractional_count(self, tau: float = TAU_INT) -> int:
        w = self.eigenvalues
        return int(np.sum((w > tau) & (w < 1.0 - tau)))

    def top_vectors(self, count: int) -> np.ndarray:
        return self.eigenvectors[:, :count]


@dataclass(frozen=True)
class LinearConstraint:
    """<A, X> rel b with rel one of '<=', '>=', '=='."""

    A: np.ndarray
    rel: str
    b: float

    def __post_init__(self):
        if self.rel not in _RELATIONS:
            raise ValueError(f"relation must be one of {_RELATIONS}, got {self.rel!r}")
        check_symmetric(np.asarray(self.A, dtype=float))

    def value(self, X: np.ndarray) -> float:
        return float(np.sum(self.A * X))

    def violation(self, X: np.ndarray) -> float:
        """Nonnegative amount by which X violates the constraint."""
        v = self.value(X)
        if self.rel == "<=":
            return max(0.0, v - self.b)
        if self.rel == ">=":
            return max(0.0, self.b - v)
        return abs(v - self.b)


@dataclass(frozen=True)
class ConstraintSystem:
    """Objective matrix C and affine constraints over the fantope of budget d."""

    C: np.ndarray
    constraints: tuple[LinearConstraint, ...]
    d: int
    sense: str = "min"

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        check_symmetric(np.asarray(self.C, dtype=float))
        n = self.C.shape[0]
        if any(c.A.shape != (n, n) for c in self.constraints):
            raise ValueError("constraint matrices must match the objective shape")

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return len(self.constraints)

    def objective(self, X: np.ndarray) -> float:
        return float(np.sum(self.C * X))

    def max_violation(self, X: np.ndarray) -> float:
        viol = [c.violation(X) / (1.0 + abs(c.b)) for c in self.constraints]
        viol.append(max(0.0, float(np.trace(X)) - self.d))
        return max(viol)
