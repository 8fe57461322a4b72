"""Grouped tabular data and per-group covariance matrices.

A dataset is a partition of rows into labelled groups sharing one ambient
dimension n. Groups can also carry explicit nonnegative row weights, which
generalizes the 0/1 partition to arbitrary weightings of the data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import eigh_desc, sym

TAU_SYM_REL = 1e-10
TAU_PSD_REL = 1e-8


@dataclass(frozen=True)
class GroupedDataset:
    """Rows split by group label; all groups live in the same n dimensions."""

    n: int
    groups: tuple[tuple[str, np.ndarray], ...]
    weights: tuple[np.ndarray, ...] | None = None
    zero_variance_columns: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.groups) < 1:
            raise ValueError("dataset needs at least one group")
        for label, rows in self.groups:
            if rows.ndim != 2 or rows.shape[1] != self.n:
                raise ValueError(f"group {label!r} has shape {rows.shape}, expected (*, {self.n})")
            if rows.shape[0] < 1:
                raise ValueError(f"group {label!r} is empty")
        if self.weights is not None:
            if len(self.weights) != len(self.groups):
                raise ValueError("one weight vector per group required")
            for (label, rows), w in zip(self.groups, self.weights):
                if w.shape != (rows.shape[0],):
                    raise ValueError(f"weights for group {label!r} have wrong length")
                if np.any(w < 0):
                    raise ValueError(f"negative weights in group {label!r}")
                if not np.any(w > 0):
                    raise ValueError(f"group {label!r} has no positive weight")

    @property
    def k(self) -> int:
        return len(self.groups)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(rows.shape[0] for _, rows in self.groups)


@dataclass(frozen=True)
class CovarianceSet:
    """Per-group PSD matrices B_i with size/trace metadata.

    `beta` (each group's best top-d variance) starts unset and is attached by
    the objectives layer via :meth:`with_beta`.
    """

    k: int
    B: np.ndarray  # (k, n, n)
    m: tuple[int, ...]
    trace: tuple[float, ...]
    labels: tuple[str, ...]
    beta: tuple[float, ...] | None = None
    scale: tuple[float, ...] = field(default=(), repr=False)  # applied c_i

    def __post_init__(self):
        if self.B.ndim != 3 or self.B.shape[0] != self.k:
            raise ValueError("B must be a (k, n, n) stack")

    @property
    def n(self) -> int:
        return self.B.shape[1]

    def with_beta(self, beta) -> "CovarianceSet":
        beta = tuple(float(b) for b in beta)
        if len(beta) != self.k:
            raise ValueError("beta needs one entry per group")
        return replace(self, beta=beta)

    @classmethod
    def from_matrices(cls, mats, m=None, labels=None) -> "CovarianceSet":
        """Wrap raw PSD matrices (already formed) into a CovarianceSet."""
        B = np.stack([_clamp_psd(np.asarray(M, dtype=float)) for M in mats])
        k = B.shape[0]
        m = tuple(int(x) for x in (m if m is not None else [1] * k))
        labels = tuple(labels) if labels is not None else tuple(f"g{i+1}" for i in range(k))
        return cls(k=k, B=B, m=m, trace=tuple(float(np.trace(Bi)) for Bi in B),
                   labels=labels, scale=tuple(1.0 for _ in range(k)))


def _clamp_psd(B: np.ndarray) -> np.ndarray:
    """Symmetrize and zero round-off-negative eigenvalues; reject real violations."""
    scale = max(1.0, float(np.abs(B).max()))
    if float(np.abs(B - B.T).max()) > TAU_SYM_REL * scale:
        raise ValueError("covariance matrix is not symmetric")
    B = sym(B)
    w, V = eigh_desc(B)
    tau = TAU_PSD_REL * max(float(np.trace(B)), 1e-300)
    if w.size and w.min() < -tau:
        raise ValueError(f"matrix is not PSD: smallest eigenvalue {w.min():.3e}")
    if w.size and w.min() < 0:
        w = np.clip(w, 0.0, None)
        B = sym((V * w) @ V.T)
    return B


def covariances(ds: GroupedDataset, normalize: bool = True,
                group_weights=None) -> CovarianceSet:
    """Per-group Gram matrices B_i = c_i * A_i^T A_i.

    c_i composes an optional positive per-group weight w_i with the group-size
    normalization: c_i = w_i / m_i when `normalize`, else c_i = w_i.  Row
    weights from the dataset enter the Gram sum directly.  The reduction order
    is the fixed BLAS A^T A product, so repeated calls are bit-identical.
    """
    if group_weights is not None:
        group_weights = [float(w) for w in group_weights]
        if len(group_weights) != ds.k:
            raise ValueError("one group weight per group required")
        if any(w <= 0 for w in group_weights):
            raise ValueError("group weights must be positive")
    mats, sizes, scales = [], [], []
    for gi, (label, rows) in enumerate(ds.groups):
        m_i = rows.shape[0]
        if ds.weights is not None:
            rw = ds.weights[gi]
            G = (rows * rw[:, None]).T @ rows
        else:
            G = rows.T @ rows
        c = (group_weights[gi] if group_weights is not None else 1.0)
        if normalize:
            c /= m_i
        mats.append(_clamp_psd(c * G))
        sizes.append(m_i)
        scales.append(c)
    B = np.stack(mats)
    return CovarianceSet(
        k=ds.k, B=B, m=tuple(sizes),
        trace=tuple(float(np.trace(Bi)) for Bi in B),
        labels=ds.labels, scale=tuple(scales),
    )


def ingest_csv(path, group_column: str, center: bool = False, scale: bool = False,
               drop_missing: bool = False) -> GroupedDataset:
    """Parse a headed CSV into a GroupedDataset keyed by `group_column`.

    All non-group columns must contain finite reals. Rows with missing or
    unparsable cells are dropped when `drop_missing` is set and rejected
    otherwise. Centering and scaling are global (over the concatenated data),
    never per group.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if group_column not in header:
            raise ValueError(f"{path}: no column named {group_column!r}")
        gidx = header.index(group_column)
        feat_idx = [i for i in range(len(header)) if i != gidx]
        if not feat_idx:
            raise ValueError(f"{path}: no feature columns besides the group column")
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                if drop_missing:
                    continue
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(rec)}")
            try:
                vals = [float(rec[i]) for i in feat_idx]
            except ValueError:
                if drop_missing:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
            if not all(np.isfinite(v) for v in vals):
                if drop_missing:
                    continue
                raise ValueError(f"{path}:{lineno}: non-finite value")
            labels.append(rec[gidx].strip())
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no usable data rows")
    data = np.asarray(rows, dtype=float)
    zero_var: tuple[int, ...] = ()
    if center:
        data = data - data.mean(axis=0)
    if scale:
        sd = data.std(axis=0)
        keep = sd > 0
        zero_var = tuple(int(i) for i in np.flatnonzero(~keep))
        sd_safe = np.where(keep, sd, 1.0)
        data = data / sd_safe
    order = []
    seen = {}
    for lbl in labels:
        if lbl not in seen:
            seen[lbl] = len(order)
            order.append(lbl)
    groups = []
    labels_arr = np.asarray(labels)
    for lbl in order:
        groups.append((lbl, data[labels_arr == lbl]))
    n = data.shape[1]
    return GroupedDataset(n=n, groups=tuple(groups), zero_variance_columns=zero_var)
