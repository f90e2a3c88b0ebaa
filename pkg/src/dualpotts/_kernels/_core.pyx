# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling kernels.

Operation-for-operation mirror of `_fallback`: identical integer arithmetic
and identical per-chain floating-point accumulation order, so results are
bitwise equal across backends.  Compiled with -O3 only (no fast-math, no
native FMA contraction) to keep IEEE semantics.
"""

from libc.math cimport exp

import numpy as np

cimport numpy as cnp

cnp.import_array()


def complete_batch(
    cnp.int8_t[:, ::1] values,
    ysite_obj,
    int q,
    cnp.int64_t[::1] step_site,
    cnp.int64_t[::1] step_bond,
    cnp.int64_t[::1] step_sign,
    cnp.int64_t[:, ::1] step_other_bonds,
    cnp.int64_t[:, ::1] step_other_signs,
    long root_site,
    cnp.int64_t[::1] root_bonds,
    cnp.int64_t[::1] root_signs,
):
    cdef cnp.int8_t[:, ::1] ysite = None
    cdef bint has_y = ysite_obj is not None
    if has_y:
        ysite = ysite_obj
    cdef Py_ssize_t batch = values.shape[0]
    cdef Py_ssize_t n_steps = step_bond.shape[0]
    cdef Py_ssize_t n_root = root_bonds.shape[0]
    cdef Py_ssize_t r, i, j
    cdef long s, res, bad = 0
    for r in range(batch):
        for i in range(n_steps):
            s = 0
            for j in range(3):
                s += step_other_signs[i, j] * values[r, step_other_bonds[i, j]]
            if has_y:
                s += ysite[r, step_site[i]]
            s = (-step_sign[i] * s) % q
            if s < 0:
                s += q
            values[r, step_bond[i]] = <cnp.int8_t> s
        res = 0
        for j in range(n_root):
            res += root_signs[j] * values[r, root_bonds[j]]
        if has_y:
            res += ysite[r, root_site]
        res %= q
        if res < 0:
            res += q
        if res != 0:
            bad += 1
    return int(bad)


def bond_log_sum(
    cnp.int8_t[:, ::1] values,
    cnp.int64_t[::1] bond_ids,
    cnp.float64_t[::1] lg0,
    cnp.float64_t[::1] lg1,
):
    cdef Py_ssize_t batch = values.shape[0]
    cdef Py_ssize_t nb = bond_ids.shape[0]
    out_arr = np.zeros(batch, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t r, j
    cdef double acc
    for r in range(batch):
        acc = 0.0
        for j in range(nb):
            acc += lg0[j] if values[r, bond_ids[j]] == 0 else lg1[j]
        out[r] = acc
    return out_arr


def metropolis_level(
    cnp.int8_t[:, ::1] values,
    int q,
    cnp.int64_t[::1] cotree_bonds,
    cnp.float64_t[::1] lga0,
    cnp.float64_t[::1] lga1,
    cnp.float64_t[::1] lgt0,
    cnp.float64_t[::1] lgt1,
    cnp.int64_t[::1] cycle_offsets,
    cnp.int64_t[::1] cycle_bonds,
    cnp.int64_t[::1] cycle_signs,
    cnp.int8_t[:, :, ::1] proposals,
    cnp.float64_t[:, :, ::1] accept_u,
):
    cdef Py_ssize_t batch = values.shape[0]
    cdef Py_ssize_t n_sweeps = proposals.shape[1]
    cdef Py_ssize_t n_a = cotree_bonds.shape[0]
    cdef Py_ssize_t r, s, k, idx, start, stop
    cdef long col, b, t_old, t_new, d, old_b, new_b
    cdef double delta
    for s in range(n_sweeps):
        for k in range(n_a):
            col = cotree_bonds[k]
            start = cycle_offsets[k]
            stop = cycle_offsets[k + 1]
            for r in range(batch):
                t_old = values[r, col]
                t_new = proposals[r, s, k]
                delta = (lga0[k] if t_new == 0 else lga1[k]) - (
                    lga0[k] if t_old == 0 else lga1[k]
                )
                d = t_new - t_old
                for idx in range(start, stop):
                    b = cycle_bonds[idx]
                    old_b = values[r, b]
                    new_b = (old_b + cycle_signs[idx] * d) % q
                    if new_b < 0:
                        new_b += q
                    delta = delta + (
                        (lgt0[b] if new_b == 0 else lgt1[b])
                        - (lgt0[b] if old_b == 0 else lgt1[b])
                    )
                if accept_u[r, s, k] < exp(delta if delta < 0.0 else 0.0):
                    values[r, col] = <cnp.int8_t> t_new
                    for idx in range(start, stop):
                        b = cycle_bonds[idx]
                        new_b = (values[r, b] + cycle_signs[idx] * d) % q
                        if new_b < 0:
                            new_b += q
                        values[r, b] = <cnp.int8_t> new_b
    return None
