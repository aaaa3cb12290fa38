"""
Independence audit of a representation against the atom labels.

HSIC uses a Gaussian kernel on Y (median-heuristic bandwidth) and the delta
kernel on atom ids, with the biased centered-trace estimator. Significance
comes from a label-permutation test whose replicate streams are derived from
``(seed, replicate index)``, so any evaluation order gives the same p-value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform
from tqdm.auto import tqdm

from . import config
from .errors import AuditError
from .sigma import AtomPartition
from .transport import FeatureMatrix, wasserstein_1d

MIN_PERMUTATIONS = 99


def _as_matrix(Y: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    """``(N, d)`` float view; 1-d input becomes one column."""
    values = Y.values if isinstance(Y, FeatureMatrix) else np.asarray(Y, dtype=np.float64)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def median_bandwidth(Y: Union[FeatureMatrix, np.ndarray]) -> float:
    """Median of the positive pairwise Euclidean distances; 1.0 if there are none."""
    distances = pdist(_as_matrix(Y))
    positive = distances[distances > 0]
    return float(np.median(positive)) if positive.size else 1.0


def _centered_gram(Y: np.ndarray, bandwidth: float) -> np.ndarray:
    """Doubly centered Gaussian Gram matrix ``H K H``."""
    sq = squareform(pdist(Y, metric="sqeuclidean"))
    K = np.exp(-sq / (2.0 * bandwidth ** 2))
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def _one_hot(labels: np.ndarray) -> np.ndarray:
    """Label indicator matrix, one column per distinct label."""
    _, codes = np.unique(labels, return_inverse=True)
    codes = codes.reshape(-1)
    Z = np.zeros((codes.size, int(codes.max()) + 1), dtype=np.float64)
    Z[np.arange(codes.size), codes] = 1.0
    return Z


def _trace_statistic(Kc: np.ndarray, Z: np.ndarray) -> float:
    """
    ``trace(Kc L) / N^2`` with ``L = Z Z^T``, computed without forming ``L``.

    Clamped at zero against round-off.
    """
    n = Kc.shape[0]
    return max(0.0, float(np.sum((Kc @ Z) * Z)) / n ** 2)


def hsic_statistic(
    Y: Union[FeatureMatrix, np.ndarray],
    labels: Sequence[int],
    bandwidth: Optional[float] = None,
) -> float:
    """
    Biased HSIC ``trace(Kc Lc) / N^2`` between Y rows and atom labels.

    Returns 0.0 when all labels are identical.

    Raises:
        AuditError: fewer than 4 rows, or labels not aligned with Y.
    """
    values = _as_matrix(Y)
    labels = np.asarray(labels)
    n = values.shape[0]
    if n < 4:
        raise AuditError(f"HSIC needs at least 4 rows, got {n}")
    if labels.shape[0] != n:
        raise AuditError(f"{labels.shape[0]} labels for {n} rows")
    if np.unique(labels).size < 2:
        return 0.0
    bandwidth = median_bandwidth(values) if bandwidth is None else bandwidth
    return _trace_statistic(_centered_gram(values, bandwidth), _one_hot(labels))


@dataclass(frozen=True)
class HsicResult:
    """Permutation HSIC test result."""
    statistic: float
    p_value: float
    permutations: int
    kernel_bandwidth_y: float
    seed: int

    def to_dict(self) -> dict:
        """The ``hsic`` block of ``audit.json`` and the certificate."""
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "permutations": self.permutations,
            "seed": self.seed,
            "bandwidth": self.kernel_bandwidth_y,
        }


def permutation_pvalue(
    Y: Union[FeatureMatrix, np.ndarray],
    labels: Sequence[int],
    permutations: Optional[int] = None,
    seed: int = 0,
    show_progress: bool = False,
) -> HsicResult:
    """
    HSIC with an add-one permutation p-value.

    ``p = (1 + #{permuted >= observed}) / (permutations + 1)``. Replicate i
    permutes the labels with ``numpy.random.default_rng([seed, i])``; Y is
    never permuted.

    Args:
        Y: representation to audit
        labels: atom id per row
        permutations: replicate count (>= 99, default from config)
        seed: non-negative 64-bit integer
        show_progress: show a tqdm bar over replicates
    """
    permutations = config.DEFAULT_PERMUTATIONS if permutations is None else permutations
    if permutations < MIN_PERMUTATIONS:
        raise AuditError(f"at least {MIN_PERMUTATIONS} permutations required, got {permutations}")
    if not 0 <= seed < 2 ** 64:
        raise AuditError(f"seed must be a non-negative 64-bit integer, got {seed}")
    values = _as_matrix(Y)
    labels = np.asarray(labels)
    bandwidth = median_bandwidth(values)
    observed = hsic_statistic(values, labels, bandwidth)
    if np.unique(labels).size < 2:
        return HsicResult(observed, 1.0, permutations, bandwidth, seed)

    Kc = _centered_gram(values, bandwidth)
    Z = _one_hot(labels)
    threshold = observed - 1e-12 * abs(observed)
    exceed = 0
    for i in tqdm(range(permutations), desc="Permutations", unit="perm", disable=not show_progress):
        order = np.random.default_rng([seed, i]).permutation(values.shape[0])
        if _trace_statistic(Kc, Z[order]) >= threshold:
            exceed += 1
    return HsicResult(
        statistic=observed,
        p_value=(1 + exceed) / (permutations + 1),
        permutations=permutations,
        kernel_bandwidth_y=bandwidth,
        seed=seed,
    )


@dataclass(frozen=True)
class ConditionalGapReport:
    """Worst-case per-atom gaps."""
    max_mean_gap: float
    max_w2_gap_1d: float

    def to_dict(self) -> dict:
        return {"max_mean_gap": self.max_mean_gap, "max_w2_gap_1d": self.max_w2_gap_1d}


def conditional_gaps(Y: Union[FeatureMatrix, np.ndarray], partition: AtomPartition) -> ConditionalGapReport:
    """Largest per-atom mean shift and per-column 1-d W2 distance to the pooled law."""
    values = _as_matrix(Y)
    if values.shape[0] != partition.n_rows:
        raise AuditError(f"{values.shape[0]} rows but partition covers {partition.n_rows} rows")
    pooled_mean = values.mean(axis=0)
    mean_gap = 0.0
    w2_gap = 0.0
    for g in range(partition.n_atoms):
        block = values[partition.members(g)]
        mean_gap = max(mean_gap, float(np.linalg.norm(block.mean(axis=0) - pooled_mean)))
        for j in range(values.shape[1]):
            w2_gap = max(w2_gap, wasserstein_1d(block[:, j], values[:, j]))
    return ConditionalGapReport(max_mean_gap=mean_gap, max_w2_gap_1d=w2_gap)


@dataclass(frozen=True)
class AuditReport:
    """
    HSIC test plus conditional gaps for one representation.

    ``vacuous`` is set when the partition has a single atom: there is no
    label variation to test against.
    """
    hsic: HsicResult
    gaps: ConditionalGapReport
    vacuous: bool
    raw: bool = False

    def to_dict(self) -> dict:
        return {
            "hsic": self.hsic.to_dict(),
            "gaps": self.gaps.to_dict(),
            "vacuous": self.vacuous,
            "input": "raw" if self.raw else "fair",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def passes(self, p_threshold: Optional[float] = None) -> bool:
        """True when vacuous or the p-value is at least the threshold (default ``config.DEFAULT_P_THRESHOLD``)."""
        threshold = config.DEFAULT_P_THRESHOLD if p_threshold is None else p_threshold
        return self.vacuous or self.hsic.p_value >= threshold

    def __repr__(self) -> str:
        title = "Independence Audit (raw X)" if self.raw else "Independence Audit (fair Y)"
        lines = [title, "=" * 40]
        if self.vacuous:
            lines.append("Vacuous: single atom, nothing to test.")
        lines.append(f"HSIC statistic   {self.hsic.statistic:.6g}")
        lines.append(f"p-value          {self.hsic.p_value:.4f} ({self.hsic.permutations:,} permutations, seed {self.hsic.seed})")
        lines.append(f"bandwidth        {self.hsic.kernel_bandwidth_y:.6g}")
        lines.append(f"max mean gap     {self.gaps.max_mean_gap:.6g}")
        lines.append(f"max W2 gap (1d)  {self.gaps.max_w2_gap_1d:.6g}")
        return "\n".join(lines)

    def _repr_html_(self) -> str:
        rows = [
            ("HSIC statistic", f"{self.hsic.statistic:.6g}"),
            ("p-value", f"{self.hsic.p_value:.4f}"),
            ("permutations", f"{self.hsic.permutations:,}"),
            ("seed", str(self.hsic.seed)),
            ("max mean gap", f"{self.gaps.max_mean_gap:.6g}"),
            ("max W2 gap (1d)", f"{self.gaps.max_w2_gap_1d:.6g}"),
        ]
        body = "".join(
            f"<tr><td style='padding: 2px 8px;'>{k}</td><td style='padding: 2px 8px;'><code>{v}</code></td></tr>"
            for k, v in rows
        )
        note = "<p style='color: #888;'>Vacuous: single atom.</p>" if self.vacuous else ""
        return (
            "<div style='font-family: -apple-system, BlinkMacSystemFont, sans-serif; padding: 10px;'>"
            f"<h3>Independence Audit ({'raw X' if self.raw else 'fair Y'})</h3>{note}"
            f"<table>{body}</table></div>"
        )


def audit(
    Y: Union[FeatureMatrix, np.ndarray],
    partition: AtomPartition,
    permutations: Optional[int] = None,
    seed: int = 0,
    raw: bool = False,
    show_progress: bool = False,
) -> AuditReport:
    """Run the HSIC permutation test and conditional gaps against the atom labels."""
    hsic = permutation_pvalue(Y, partition.atom_of, permutations, seed, show_progress)
    return AuditReport(
        hsic=hsic,
        gaps=conditional_gaps(Y, partition),
        vacuous=partition.n_atoms < 2,
        raw=raw,
    )
