"""Exact references for desk-scale verification.

Everything here is exhaustive or closed-form: primal brute force over all
q^N site configurations, dual brute force over all completions of the free
dual variables, the periodic 1D chain closed form, and the exact chi-squared
divergence between the dual target and a sampling proposal.  Enumerations are
chunked and guarded so oversized requests fail fast instead of thrashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dualgraph import (
    DualPartition,
    completion_plan,
    log_edge_factor_tables,
    log_field_factor_tables,
)
from .estimators import log_Z_qd
from .model import PottsModel

__all__ = [
    "DEFAULT_TERM_GUARD",
    "Chain1D",
    "chain_log_Z",
    "chain_brute_force_log_Z",
    "brute_force_log_Z",
    "brute_force_log_Zd",
    "exact_chi_squared",
]

DEFAULT_TERM_GUARD = 2**28
_CHUNK = 1 << 16


@dataclass(frozen=True)
class Chain1D:
    """Periodic 1D Potts chain: bond k joins sites k and (k+1) mod N."""

    num_sites: int
    q: int
    couplings: np.ndarray

    def __post_init__(self) -> None:
        if self.num_sites < 3:
            raise ValueError("chain length must be >= 3")
        if self.q < 2:
            raise ValueError("q must be >= 2")
        arr = np.asarray(self.couplings, dtype=float)
        if arr.shape != (self.num_sites,):
            raise ValueError(
                f"expected {self.num_sites} couplings, got {arr.shape}"
            )
        if np.any(arr < 0):
            raise ValueError("couplings must be nonnegative")
        object.__setattr__(self, "couplings", arr)
        arr.setflags(write=False)


def chain_log_Z(chain: Chain1D) -> float:
    """Closed-form log partition function of the periodic chain.

    ln Z = logaddexp( sum_k ln(e^J_k + q - 1),  ln(q-1) + sum_k ln(e^J_k - 1) ),
    evaluated stably for both tiny and large couplings.  The chain's dual
    graph has no local scale factors, so this is also ln Z_d.
    """
    lg0, lg1 = log_edge_factor_tables(chain.q, chain.couplings)
    return float(
        np.logaddexp(lg0.sum(), math.log(chain.q - 1) + lg1.sum())
    )


def _check_guard(total_terms: float, max_terms: int) -> None:
    if total_terms > max_terms:
        raise ValueError(
            f"enumeration would visit {total_terms:.3g} terms, above the guard "
            f"of {max_terms}; refusing to thrash"
        )


def _decode_base_q(start: int, stop: int, q: int, digits: int) -> np.ndarray:
    """Rows start..stop-1 of the base-q enumeration, one digit per column."""
    idx = np.arange(start, stop, dtype=np.int64)
    out = np.empty((stop - start, digits), dtype=np.int8 if q <= 127 else np.int16)
    for d in range(digits):
        out[:, d] = idx % q
        idx //= q
    return out


class _StreamingLse:
    """Order-fixed streaming log-sum-exp over chunked weight arrays."""

    def __init__(self) -> None:
        self.max = -math.inf
        self.sum = 0.0

    def add(self, log_terms: np.ndarray) -> None:
        finite = log_terms[log_terms > -math.inf]
        if finite.size == 0:
            return
        m = float(finite.max())
        if m > self.max:
            self.sum *= math.exp(self.max - m)
            self.max = m
        self.sum += float(np.exp(finite - self.max).sum())

    def value(self) -> float:
        if self.sum == 0.0:
            return -math.inf
        return self.max + math.log(self.sum)


def chain_brute_force_log_Z(chain: Chain1D, max_terms: int = DEFAULT_TERM_GUARD) -> float:
    """Exhaustive ln Z for a chain; independent check of the closed form."""
    n, q = chain.num_sites, chain.q
    _check_guard(float(q) ** n, max_terms)
    total = q**n
    lse = _StreamingLse()
    for start in range(0, total, _CHUNK):
        x = _decode_base_q(start, min(start + _CHUNK, total), q, n)
        energy = np.zeros(x.shape[0])
        for k in range(n):
            energy += chain.couplings[k] * (x[:, k] == x[:, (k + 1) % n])
        lse.add(energy)
    return lse.value()


def brute_force_log_Z(model: PottsModel, max_terms: int = DEFAULT_TERM_GUARD) -> float:
    """Exact ln Z by log-sum-exp over all q^N primal configurations."""
    n, q = model.num_sites, model.q
    _check_guard(float(q) ** n, max_terms)
    total = q**n
    tails, heads = model.bond_tails, model.bond_heads
    lse = _StreamingLse()
    for start in range(0, total, _CHUNK):
        x = _decode_base_q(start, min(start + _CHUNK, total), q, n)
        energy = np.zeros(x.shape[0])
        for b in range(model.num_bonds):
            energy += model.couplings[b] * (x[:, tails[b]] == x[:, heads[b]])
        if model.has_field:
            energy += (x == 0) @ model.fields
        lse.add(energy)
    return lse.value()


def _dual_factor_tables(model: PottsModel):
    lg0, lg1 = log_edge_factor_tables(model.q, model.couplings)
    if model.has_field:
        l0, l1 = log_field_factor_tables(model.q, model.fields)
    else:
        l0 = l1 = None
    return lg0, lg1, l0, l1


def _dual_log_weights(model: PottsModel, plan, free: np.ndarray, tables=None) -> np.ndarray:
    """Complete a chunk of free dual values and return ln(factor product).

    ``free`` columns are the co-tree bond values followed, for field models,
    by the site values of sites 0..N-2.
    """
    q = model.q
    n_a = plan.cotree_bonds.size
    batch = free.shape[0]
    lg0, lg1, l0, l1 = tables if tables is not None else _dual_factor_tables(model)
    values = np.zeros((batch, model.num_bonds), dtype=np.int8)
    values[:, plan.cotree_bonds] = free[:, :n_a]
    ysite = None
    if model.has_field:
        ysite = np.empty((batch, model.num_sites), dtype=np.int8)
        ysite[:, :-1] = free[:, n_a:]
        ysite[:, -1] = (-free[:, n_a:].astype(np.int64).sum(axis=1)) % q
    bad = _kernels.complete_batch(
        values,
        ysite,
        q,
        plan.step_site,
        plan.step_bond,
        plan.step_sign,
        plan.step_other_bonds,
        plan.step_other_signs,
        plan.root,
        plan.root_bonds,
        plan.root_signs,
    )
    if bad:
        raise RuntimeError(f"{bad} completions violated the root constraint")
    all_bonds = np.arange(model.num_bonds, dtype=np.int64)
    w = _kernels.bond_log_sum(values, all_bonds, lg0, lg1)
    if model.has_field:
        all_sites = np.arange(model.num_sites, dtype=np.int64)
        w = w + _kernels.bond_log_sum(ysite, all_sites, l0, l1)
    return w


def brute_force_log_Zd(
    model: PottsModel,
    partition: DualPartition,
    max_terms: int = DEFAULT_TERM_GUARD,
) -> float:
    """Exact ln Z_d by enumerating all completions of the free dual variables.

    The free variables are the co-tree bond values, plus the dual site values
    at sites 0..N-2 when the model carries a field.
    """
    if model.q > 127:
        raise ValueError("dual enumeration supports q <= 127")
    plan = completion_plan(model, partition)
    q = model.q
    digits = plan.cotree_bonds.size + (model.num_sites - 1 if model.has_field else 0)
    _check_guard(float(q) ** digits, max_terms)
    total = q**digits
    tables = _dual_factor_tables(model)
    lse = _StreamingLse()
    for start in range(0, total, _CHUNK):
        free = _decode_base_q(start, min(start + _CHUNK, total), q, digits)
        lse.add(_dual_log_weights(model, plan, free, tables))
    return lse.value()


def exact_chi_squared(
    model: PottsModel,
    partition: DualPartition,
    proposal: str = "importance",
    max_terms: int = DEFAULT_TERM_GUARD,
) -> float:
    """Exact chi-squared divergence between the dual target and a proposal.

    Enumerates the free co-tree values, forms the normalized dual target
    p(xA) from the completed factor products, and returns sum(p^2 / proposal)
    - 1, all in the log domain.  Equals the per-sample relative variance of
    the matching estimator's weights.  Field models are out of scope (the
    uniform proposal is defined only for the field-free dual).
    """
    if proposal not in ("importance", "uniform"):
        raise ValueError(f"proposal must be 'importance' or 'uniform', got {proposal!r}")
    if model.has_field:
        raise ValueError("exact chi-squared is implemented for field-free models only")
    if model.q > 127:
        raise ValueError("dual enumeration supports q <= 127")
    plan = completion_plan(model, partition)
    q = model.q
    n_a = plan.cotree_bonds.size
    _check_guard(float(q) ** n_a, max_terms)
    total = q**n_a

    lg0, lg1 = log_edge_factor_tables(q, model.couplings)
    lg0_a = lg0[plan.cotree_bonds]
    lg1_a = lg1[plan.cotree_bonds]
    log_zqd = log_Z_qd(model, partition)

    # Two passes: normalize the target, then accumulate the divergence terms.
    tables = _dual_factor_tables(model)
    lse_target = _StreamingLse()
    for start in range(0, total, _CHUNK):
        free = _decode_base_q(start, min(start + _CHUNK, total), q, n_a)
        lse_target.add(_dual_log_weights(model, plan, free, tables))
    log_zd = lse_target.value()

    lse_terms = _StreamingLse()
    for start in range(0, total, _CHUNK):
        free = _decode_base_q(start, min(start + _CHUNK, total), q, n_a)
        log_p = _dual_log_weights(model, plan, free, tables) - log_zd
        if proposal == "importance":
            log_prop = np.where(free == 0, lg0_a, lg1_a).sum(axis=1) - log_zqd
        else:
            log_prop = np.full(free.shape[0], -n_a * math.log(q))
        # entries with zero target probability contribute nothing, even where
        # the proposal is also zero (0^2 / 0 -> 0)
        with np.errstate(invalid="ignore"):
            terms = np.where(log_p == -math.inf, -math.inf, 2.0 * log_p - log_prop)
        lse_terms.add(terms)
    return float(math.expm1(lse_terms.value()))
