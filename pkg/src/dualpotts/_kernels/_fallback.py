"""Pure-numpy implementations of the sampling hot kernels.

These mirror the compiled Cython kernels in `_core` operation for operation:
per-chain floating-point accumulation happens in the same order in both
backends, so switching backends never changes a sampled estimate, bit for
bit.  The compiled backend is selected automatically at import when present
(see `dualpotts._kernels`); this module is the always-available fallback and
the reference the extension is tested against.
"""

from __future__ import annotations

import numpy as np


def complete_batch(
    values: np.ndarray,
    ysite,
    q: int,
    step_site: np.ndarray,
    step_bond: np.ndarray,
    step_sign: np.ndarray,
    step_other_bonds: np.ndarray,
    step_other_signs: np.ndarray,
    root_site: int,
    root_bonds: np.ndarray,
    root_signs: np.ndarray,
) -> int:
    """Solve tree-bond values in place, children before parents.

    ``values`` is (batch, num_bonds) int8 with co-tree columns already
    assigned.  ``ysite`` is (batch, num_sites) int8 or None.  Returns the
    number of batch rows whose root constraint fails (0 for correct plans).
    """
    for i in range(step_bond.size):
        cols = values[:, step_other_bonds[i]].astype(np.int64)
        s = cols @ step_other_signs[i]
        if ysite is not None:
            s = s + ysite[:, step_site[i]]
        values[:, step_bond[i]] = ((-int(step_sign[i]) * s) % q).astype(values.dtype)
    res = values[:, root_bonds].astype(np.int64) @ root_signs
    if ysite is not None:
        res = res + ysite[:, root_site]
    return int(np.count_nonzero(res % q))


def bond_log_sum(
    values: np.ndarray,
    bond_ids: np.ndarray,
    lg0: np.ndarray,
    lg1: np.ndarray,
) -> np.ndarray:
    """Per-row sum over the given bonds of lg0/lg1 selected by zero-ness.

    ``lg0``/``lg1`` are aligned with ``bond_ids``.  Accumulates strictly
    left to right so the result is bitwise identical to the compiled loop.
    """
    out = np.zeros(values.shape[0], dtype=np.float64)
    for j in range(bond_ids.size):
        col = values[:, bond_ids[j]]
        out += np.where(col == 0, lg0[j], lg1[j])
    return out


def metropolis_level(
    values: np.ndarray,
    q: int,
    cotree_bonds: np.ndarray,
    lga0: np.ndarray,
    lga1: np.ndarray,
    lgt0: np.ndarray,
    lgt1: np.ndarray,
    cycle_offsets: np.ndarray,
    cycle_bonds: np.ndarray,
    cycle_signs: np.ndarray,
    proposals: np.ndarray,
    accept_u: np.ndarray,
) -> None:
    """Deterministic-scan single-coordinate Metropolis sweeps, in place.

    For each sweep and each co-tree coordinate, proposes the uniform resample
    ``proposals[:, sweep, k]``, recompletes the fundamental cycle of that
    bond incrementally, and accepts with probability min(1, factor ratio).
    ``lga0``/``lga1`` are aligned with ``cotree_bonds``; ``lgt0``/``lgt1``
    are indexed by bond id and hold the current annealing level's tables.
    """
    n_sweeps = proposals.shape[1]
    for s in range(n_sweeps):
        for k in range(cotree_bonds.size):
            col = cotree_bonds[k]
            t_old = values[:, col]
            t_new = proposals[:, s, k]
            delta = np.where(t_new == 0, lga0[k], lga1[k]) - np.where(
                t_old == 0, lga0[k], lga1[k]
            )
            d = t_new.astype(np.int64) - t_old
            updates = []
            for idx in range(cycle_offsets[k], cycle_offsets[k + 1]):
                b = cycle_bonds[idx]
                old_b = values[:, b]
                new_b = (old_b + cycle_signs[idx] * d) % q
                delta = delta + (
                    np.where(new_b == 0, lgt0[b], lgt1[b])
                    - np.where(old_b == 0, lgt0[b], lgt1[b])
                )
                updates.append((b, new_b))
            accept = accept_u[:, s, k] < np.exp(np.minimum(delta, 0.0))
            values[accept, col] = t_new[accept]
            for b, new_b in updates:
                values[accept, b] = new_b[accept].astype(values.dtype)
