"""
Fair representations by optimal transport.

Two constructions are provided:

- ``project_algorithm1``: entropic OT from the rows of X to the per-atom
  conditional means, followed by a barycentric projection. Works for any d,
  independence is measured by the audit rather than guaranteed.
- ``project_quantile_1d``: exact 1-d construction that sends every atom onto
  the weighted quantile barycenter of all atoms through the comonotone
  (rank-matching) coupling. With equal atom sizes the within-atom laws of Y
  are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import config
from .errors import TransportError
from .sigma import AtomPartition, Dataset


@dataclass(frozen=True)
class FeatureMatrix:
    """N x d float64 feature values aligned with the dataset rows."""
    values: np.ndarray
    columns: Tuple[str, ...]
    row_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[1] < 1:
            raise TransportError(f"feature matrix must be N x d with d >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise TransportError("feature matrix contains NaN or infinite entries")
        if len(self.columns) != values.shape[1]:
            raise TransportError(f"{len(self.columns)} column names for {values.shape[1]} columns")
        object.__setattr__(self, "values", values)
        if not self.row_ids:
            object.__setattr__(self, "row_ids", tuple(f"row{i + 1}" for i in range(values.shape[0])))

    @classmethod
    def from_dataset(cls, dataset: Dataset, columns: Optional[Sequence[str]] = None) -> "FeatureMatrix":
        """
        Select numeric feature columns (default: the binding's ``feature_columns``).

        Raises:
            TransportError: no columns configured.
            DatasetError: a column is not numeric.
        """
        columns = tuple(columns if columns is not None else dataset.feature_columns)
        if not columns:
            raise TransportError("no feature columns configured")
        values = np.column_stack([dataset.numeric(c) for c in columns])
        return cls(values=values, columns=columns, row_ids=dataset.row_ids)

    @property
    def shape(self) -> Tuple[int, int]:
        """``(N, d)``"""
        return self.values.shape


def _as_matrix(X: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    values = np.asarray(X, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def _check_aligned(values: np.ndarray, partition: AtomPartition) -> None:
    """Rows of ``values`` must line up with the partition."""
    if values.shape[0] != partition.n_rows:
        raise TransportError(f"{values.shape[0]} feature rows but partition covers {partition.n_rows} rows")


# ---------------------------------------------------------------------------
# Conditional means
# ---------------------------------------------------------------------------

def conditional_means(X: Union[FeatureMatrix, np.ndarray], partition: AtomPartition) -> np.ndarray:
    """G x d matrix of per-atom column means."""
    values = _as_matrix(X)
    _check_aligned(values, partition)
    means = np.empty((partition.n_atoms, values.shape[1]), dtype=np.float64)
    for g in range(partition.n_atoms):
        rows = partition.members(g)
        if rows.size == 0:
            raise RuntimeError(f"atom {g} is empty")
        means[g] = [math.fsum(col) / rows.size for col in values[rows].T]
    return means


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransportPlan:
    """Entropic coupling between rows and atoms."""
    coupling: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    epsilon: float
    iterations: int
    marginal_residual: float
    converged: bool
    transport_cost: float = 0.0
    dual_trace: Tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        """Scalar solver diagnostics; the coupling itself is not serialized."""
        return {
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "marginal_residual": self.marginal_residual,
            "converged": self.converged,
        }


def _marginal_residual(log_plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm deviation of both marginals of ``exp(log_plan)``."""
    plan = np.exp(log_plan)
    return float(max(np.max(np.abs(plan.sum(axis=1) - a)), np.max(np.abs(plan.sum(axis=0) - b))))


def sinkhorn(
    cost: np.ndarray,
    row_marginal: np.ndarray,
    col_marginal: np.ndarray,
    epsilon: float,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> TransportPlan:
    """
    Solve entropic OT with log-domain Sinkhorn updates.

    The plan is ``exp((f_i + g_j - C_ij) / epsilon)``, i.e.
    ``diag(u) exp(-C/epsilon) diag(v)`` with ``u = exp(f/epsilon)``,
    ``v = exp(g/epsilon)``. Iteration stops once the max-norm deviation of
    both marginals is at most ``tol``, or after ``max_iter`` sweeps.

    ``dual_trace`` holds the dual objective
    ``<f, a> + <g, b> - epsilon * sum(plan)`` after every sweep. Each half
    update maximizes it exactly over one potential, so the trace never
    decreases and its limit is the optimal entropic cost. Equivalently the
    negated trace, the entropic objective bound, never increases.

    Raises:
        TransportError: non-finite cost, non-positive marginals, marginal
            sums differing from 1 by more than 1e-12, or ``epsilon <= 0``.
    """
    tol = config.SINKHORN_TOL if tol is None else tol
    max_iter = config.SINKHORN_MAX_ITER if max_iter is None else max_iter
    C = np.asarray(cost, dtype=np.float64)
    a = np.asarray(row_marginal, dtype=np.float64)
    b = np.asarray(col_marginal, dtype=np.float64)

    if C.ndim != 2 or C.shape != (a.shape[0], b.shape[0]):
        raise TransportError(f"cost shape {C.shape} does not match marginals ({a.shape[0]}, {b.shape[0]})")
    if not np.all(np.isfinite(C)):
        raise TransportError("cost matrix contains NaN or infinite entries")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise TransportError(f"epsilon must be positive and finite, got {epsilon}")
    if np.any(a <= 0) or np.any(b <= 0):
        raise TransportError("marginals must be strictly positive")
    for name, m in (("row", a), ("column", b)):
        if abs(math.fsum(m) - 1.0) > 1e-12:
            raise TransportError(f"{name} marginal sums to {math.fsum(m)!r}, expected 1")

    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    residual = math.inf
    iterations = 0
    trace = []
    for iterations in range(1, max_iter + 1):
        f = epsilon * log_a - epsilon * logsumexp((g[None, :] - C) / epsilon, axis=1)
        g = epsilon * log_b - epsilon * logsumexp((f[:, None] - C) / epsilon, axis=0)
        log_plan = (f[:, None] + g[None, :] - C) / epsilon
        trace.append(float(f @ a + g @ b - epsilon * np.exp(logsumexp(log_plan))))
        residual = _marginal_residual(log_plan, a, b)
        if residual <= tol:
            break

    coupling = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    plan = TransportPlan(
        coupling=coupling,
        row_marginal=a,
        col_marginal=b,
        epsilon=float(epsilon),
        iterations=iterations,
        marginal_residual=residual,
        converged=residual <= tol,
        transport_cost=float(np.sum(coupling * C)),
        dual_trace=tuple(trace),
    )
    return plan


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FairProjection:
    """A fair representation Y of the features plus its diagnostics."""
    Y: np.ndarray
    columns: Tuple[str, ...]
    method: str
    reconstruction_error: float
    per_atom_summary: List[Dict] = field(repr=False)
    plan: Optional[TransportPlan] = field(default=None, repr=False)
    epsilon: Optional[float] = None
    grid_levels: Optional[int] = None
    grid_capped: bool = False
    independence_slack: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        """Y as a DataFrame with ``fair_`` column names."""
        return pd.DataFrame(self.Y, columns=[f"fair_{c}" for c in self.columns])

    def to_csv(self, path: Union[str, Path]) -> None:
        """Write Y with ``fair_``-prefixed headers; floats in shortest round-trip form."""
        lines = [",".join(f"fair_{c}" for c in self.columns)]
        lines += [",".join(repr(float(v)) for v in row) for row in self.Y]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def diagnostics(self) -> dict:
        """Contents of ``diagnostics.json``."""
        doc = {
            "method": self.method,
            "epsilon": self.epsilon,
            "reconstruction_error": self.reconstruction_error,
            "per_atom": self.per_atom_summary,
        }
        if self.plan is not None:
            doc["iterations"] = self.plan.iterations
            doc["marginal_residual"] = self.plan.marginal_residual
            doc["converged"] = self.plan.converged
        if self.method == "quantile1d":
            doc["grid_levels"] = self.grid_levels
            doc["grid_capped"] = self.grid_capped
            doc["independence_slack"] = self.independence_slack
        return doc


def _per_atom_summary(Y: np.ndarray, partition: AtomPartition) -> List[Dict]:
    """Size, mean and population covariance of Y per atom."""
    summary = []
    for g in range(partition.n_atoms):
        block = Y[partition.members(g)]
        cov = np.cov(block, rowvar=False, bias=True).reshape(Y.shape[1], Y.shape[1])
        summary.append({
            "atom": g,
            "size": int(block.shape[0]),
            "mean": [float(v) for v in block.mean(axis=0)],
            "covariance": [[float(v) for v in row] for row in cov],
        })
    return summary


def default_epsilon(cost: np.ndarray) -> float:
    """``EPSILON_SCALE`` times the median cost entry (mean, then 1.0, if that is zero)."""
    for center in (np.median(cost), np.mean(cost)):
        if center > 0:
            return float(config.EPSILON_SCALE * center)
    return 1.0


def project_algorithm1(
    X: FeatureMatrix,
    partition: AtomPartition,
    epsilon: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> FairProjection:
    """
    Entropic OT from rows to conditional means, then barycentric projection.

    Row marginal is uniform, column marginal is the atom mass. Each Y_i is
    the plan-weighted average of the means, normalized by the row sum, so it
    lies in the convex hull of the conditional means.
    """
    values = X.values
    _check_aligned(values, partition)
    n = values.shape[0]
    mu = conditional_means(X, partition)
    cost = cdist(values, mu, metric="sqeuclidean")
    if epsilon is None:
        epsilon = default_epsilon(cost)
    a = np.full(n, 1.0 / n)
    b = partition.atom_sizes.astype(np.float64) / n
    plan = sinkhorn(cost, a, b, epsilon, tol=tol, max_iter=max_iter)

    weights = plan.coupling / plan.coupling.sum(axis=1, keepdims=True)
    Y = weights @ mu
    return FairProjection(
        Y=Y,
        columns=X.columns,
        method="algorithm1",
        reconstruction_error=reconstruction_error(values, Y),
        per_atom_summary=_per_atom_summary(Y, partition),
        plan=plan,
        epsilon=float(epsilon),
    )


def _quantile_grid(sizes: Sequence[int]) -> Tuple[int, bool]:
    """
    Quantile grid size: lcm of the atom sizes, capped at ``QUANTILE_GRID_CAP``.

    The flag reports whether the cap was applied.
    """
    m = math.lcm(*sizes)
    if m > config.QUANTILE_GRID_CAP:
        return config.QUANTILE_GRID_CAP, True
    return m, False


def project_quantile_1d(
    x: Union[FeatureMatrix, np.ndarray, Sequence[float]],
    partition: AtomPartition,
) -> FairProjection:
    """
    Exact 1-d fair representation via the weighted quantile barycenter.

    Ranks within an atom follow a stable sort, so ties go to the lower row
    index. The barycenter is evaluated on ``m = lcm(atom sizes)`` levels
    ``t = (l - 0.5) / m`` (capped at ``QUANTILE_GRID_CAP``) in exact rational
    arithmetic; a row of rank r receives the average barycenter value over
    the levels its rank covers.

    Raises:
        TransportError: more than one feature column.
    """
    columns = x.columns if isinstance(x, FeatureMatrix) else ("x",)
    values = _as_matrix(x)
    if values.shape[1] != 1:
        raise TransportError(f"quantile1d requires exactly one feature column, got {values.shape[1]}")
    _check_aligned(values, partition)
    column = values[:, 0]
    n = column.shape[0]
    sizes = [int(s) for s in partition.atom_sizes]
    m, capped = _quantile_grid(sizes)

    members = [partition.members(g) for g in range(partition.n_atoms)]
    ordered = []
    for rows in members:
        order = np.argsort(column[rows], kind="stable")
        ordered.append((rows[order], [Fraction(float(v)) for v in column[rows][order]]))

    def barycenter(t: Fraction) -> Fraction:
        """Weighted average of every atom's empirical quantile at level ``t``."""
        total = Fraction(0)
        for (_, vals), size in zip(ordered, sizes):
            total += size * vals[min(math.floor(t * size), size - 1)]
        return total / n

    levels = [barycenter(Fraction(2 * l - 1, 2 * m)) for l in range(1, m + 1)]

    Y = np.empty(n, dtype=np.float64)
    for (rows, _), size in zip(ordered, sizes):
        buckets: List[List[Fraction]] = [[] for _ in range(size)]
        for l, level in enumerate(levels, start=1):
            buckets[min(math.floor(Fraction(2 * l - 1, 2 * m) * size), size - 1)].append(level)
        for rank, row in enumerate(rows):
            bucket = buckets[rank]
            if bucket:
                Y[row] = float(sum(bucket, Fraction(0)) / len(bucket))
            else:
                Y[row] = float(barycenter(Fraction(2 * rank + 1, 2 * size)))

    Y = Y.reshape(-1, 1)
    slack = max(
        (wasserstein_1d(Y[rows, 0], Y[:, 0]) for rows in members),
        default=0.0,
    )
    return FairProjection(
        Y=Y,
        columns=tuple(columns),
        method="quantile1d",
        reconstruction_error=reconstruction_error(values, Y),
        per_atom_summary=_per_atom_summary(Y, partition),
        grid_levels=m,
        grid_capped=capped,
        independence_slack=slack,
    )


# ---------------------------------------------------------------------------
# Costs and distances
# ---------------------------------------------------------------------------

def reconstruction_error(X: Union[FeatureMatrix, np.ndarray], Y: Union[FeatureMatrix, np.ndarray]) -> float:
    """``||X - Y||_F^2 / N``."""
    x, y = _as_matrix(X), _as_matrix(Y)
    if x.shape != y.shape:
        raise TransportError(f"shape mismatch: X is {x.shape}, Y is {y.shape}")
    return math.fsum(((x - y) ** 2).ravel()) / x.shape[0]


def collapse_cost(X: Union[FeatureMatrix, np.ndarray], partition: AtomPartition) -> float:
    """
    Conditional-mean collapse cost ``sum_i ||X_i - mu_g(i)||^2 / N``.

    Adding ``mean_spread(X, partition)`` gives the cost of sending every row
    to the pooled mean, which bounds the quantile-1d reconstruction error.
    """
    x = _as_matrix(X)
    _check_aligned(x, partition)
    return reconstruction_error(x, conditional_means(x, partition)[partition.atom_of])


def mean_spread(X: Union[FeatureMatrix, np.ndarray], partition: AtomPartition) -> float:
    """Atom-mass weighted squared distance of the conditional means to the pooled mean."""
    x = _as_matrix(X)
    mu = conditional_means(x, partition)
    weights = partition.atom_sizes / partition.n_rows
    return float(np.sum(weights * np.sum((mu - x.mean(axis=0)) ** 2, axis=1)))


def wasserstein_1d(u: Sequence[float], v: Sequence[float]) -> float:
    """
    Exact 2-Wasserstein distance between two 1-d empirical laws.

    Both quantile functions are step functions; the squared distance is
    integrated segment by segment over the merged breakpoints.
    """
    u = np.sort(np.asarray(u, dtype=np.float64))
    v = np.sort(np.asarray(v, dtype=np.float64))
    if u.size == 0 or v.size == 0:
        raise TransportError("empty sample")
    breaks = np.unique(np.concatenate([[0.0], np.arange(1, u.size + 1) / u.size, np.arange(1, v.size + 1) / v.size]))
    mids = (breaks[:-1] + breaks[1:]) / 2
    qu = u[np.minimum((mids * u.size).astype(np.int64), u.size - 1)]
    qv = v[np.minimum((mids * v.size).astype(np.int64), v.size - 1)]
    return math.sqrt(math.fsum(np.diff(breaks) * (qu - qv) ** 2))


def plot_conditional_quantiles(
    X: Union[FeatureMatrix, np.ndarray],
    Y: Union[FeatureMatrix, np.ndarray],
    partition: AtomPartition,
    column: int = 0,
    atom_labels: Optional[Sequence[str]] = None,
):
    """
    Per-atom empirical quantile functions before and after projection.

    Returns:
        matplotlib Figure (displays inline in Jupyter)
    """
    import matplotlib.pyplot as plt

    x, y = _as_matrix(X), _as_matrix(Y)
    fig, axes = plt.subplots(1, 2, figsize=(12, 4.5), sharey=True)
    for ax, data, title in ((axes[0], x, "Original"), (axes[1], y, "Fair representation")):
        for g in range(partition.n_atoms):
            vals = np.sort(data[partition.members(g), column])
            levels = (np.arange(vals.size) + 0.5) / vals.size
            label = atom_labels[g] if atom_labels else f"atom {g}"
            ax.step(levels, vals, where="mid", label=f"{label} (n={vals.size})")
        ax.set_title(title, fontsize=11, fontweight="bold")
        ax.set_xlabel("quantile level")
        ax.set_xlim(0, 1)
    axes[0].set_ylabel("value")
    axes[1].legend(fontsize=8)
    plt.tight_layout()
    return fig
