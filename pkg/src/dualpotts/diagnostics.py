"""Streaming statistics over importance-sampling log-weights.

Weights can span hundreds of orders of magnitude, so all statistics are kept
relative to the running maximum log-weight: the accumulator stores shifted
sums whose merge is associative and commutative up to floating-point
rounding, which makes chunked/parallel accumulation reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PottsModel

__all__ = [
    "WeightAccumulator",
    "ess",
    "empirical_chi2",
    "relative_error",
    "log_scale_factor",
    "normalized_log_weight",
]


@dataclass
class WeightAccumulator:
    """Count, running max, and max-shifted sums of weights and squared weights."""

    count: int = 0
    max_log: float = -math.inf
    shifted_sum: float = 0.0      # sum of exp(w - max_log)
    shifted_sum_sq: float = 0.0   # sum of exp(2 * (w - max_log))
    trace: list = field(default_factory=list)

    def add(self, log_weight: float) -> None:
        self.add_array(np.array([log_weight], dtype=float))

    def add_array(self, log_weights: np.ndarray) -> None:
        w = np.asarray(log_weights, dtype=float)
        if w.size == 0:
            return
        m = float(w.max())
        if m == -math.inf:
            self.count += w.size
            return
        if m > self.max_log:
            scale = math.exp(self.max_log - m)
            self.shifted_sum *= scale
            self.shifted_sum_sq *= scale * scale
            self.max_log = m
        shifted = np.exp(w - self.max_log)
        self.shifted_sum += float(shifted.sum())
        self.shifted_sum_sq += float((shifted * shifted).sum())
        self.count += w.size

    def merge(self, other: "WeightAccumulator") -> None:
        if other.count == 0:
            return
        self.count += other.count
        self.trace.extend(other.trace)
        if other.shifted_sum == 0.0:
            # other saw only zero weights; nothing to fold into the sums
            # (and exp(-inf - -inf) must never be formed)
            return
        if other.max_log > self.max_log:
            scale = math.exp(self.max_log - other.max_log) if self.shifted_sum else 0.0
            self.shifted_sum *= scale
            self.shifted_sum_sq *= scale * scale
            self.max_log = other.max_log
        scale = math.exp(other.max_log - self.max_log)
        self.shifted_sum += other.shifted_sum * scale
        self.shifted_sum_sq += other.shifted_sum_sq * scale * scale

    def log_sum(self) -> float:
        """log of the weight sum."""
        if self.shifted_sum == 0.0:
            return -math.inf
        return self.max_log + math.log(self.shifted_sum)

    def log_sum_sq(self) -> float:
        """log of the squared-weight sum."""
        if self.shifted_sum_sq == 0.0:
            return -math.inf
        return 2.0 * self.max_log + math.log(self.shifted_sum_sq)


def ess(acc: WeightAccumulator) -> float:
    """Effective sample size (sum w)^2 / (sum w^2), in [0, count]."""
    if acc.count < 1:
        raise ValueError("empty accumulator")
    if acc.shifted_sum == 0.0:
        return 0.0
    return acc.shifted_sum * acc.shifted_sum / acc.shifted_sum_sq


def empirical_chi2(acc: WeightAccumulator) -> float:
    """Empirical relative weight variance: count * sum(w^2) / (sum w)^2 - 1.

    Converges to the exact chi-squared divergence between the sampled
    distribution and the proposal as the sample count grows.
    """
    if acc.count < 2:
        raise ValueError("need at least two weights")
    if acc.shifted_sum == 0.0:
        return math.inf
    return acc.count * acc.shifted_sum_sq / (acc.shifted_sum * acc.shifted_sum) - 1.0


def relative_error(log_z_hat: float, log_z_ref: float) -> float:
    """|log_z_ref - log_z_hat| / log_z_ref; the reference must be positive."""
    if not log_z_ref > 0:
        raise ValueError(f"reference log partition function must be positive, got {log_z_ref}")
    return abs(log_z_ref - log_z_hat) / log_z_ref


# ---------------------------------------------------------------------------
# Alternative accumulation path: normalized bond factors plus a global scale.
# Splitting each factor as (e^J + q - 1) * ratio^{[value != 0]} separates the
# value-independent magnitude from the fluctuating part, which is the form
# used in the variance analysis; it must reproduce the direct factor product.
# ---------------------------------------------------------------------------

def log_scale_factor(model: PottsModel) -> float:
    """Log of the product over all bonds of the zero-value factor e^J + q - 1."""
    j = model.couplings
    return float((j + np.log1p((model.q - 1) * np.exp(-j))).sum())


def normalized_log_weight(model: PottsModel, bond_values) -> float:
    """Log product of per-bond ratios (e^J - 1)/(e^J + q - 1) over nonzero bonds.

    ``log_scale_factor(model) + normalized_log_weight(model, values)`` equals
    the direct log product of all bond factors.
    """
    vals = np.asarray(
        [bond_values[b] for b in range(model.num_bonds)]
        if isinstance(bond_values, dict)
        else bond_values,
        dtype=np.int64,
    )
    from .dualgraph import log_edge_factor_tables

    lg0, lg1 = log_edge_factor_tables(model.q, model.couplings)
    nonzero = vals != 0
    ratios = lg1[nonzero] - lg0[nonzero]
    return float(ratios.sum()) if ratios.size else 0.0
