"""Compiled inner loops for the per-frame hot paths.

Each kernel reproduces its caller's former array arithmetic operation for
operation (same formulas, same comparison directions, same tie rules), so
swapping one in changes runtime only, never results. Callers keep the
readable array forms in their docstrings and tests; anything involving
matrix products stays in numpy at the call site, because BLAS may fuse
multiply-adds and produce different low bits than a plain loop would.

Cell indices are packed into a single int64 (21 bits per axis, offset to
stay positive) so sorted-array searches replace tuple hashing.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PACK_OFFSET = 1 << 20
PACK_MASK = (1 << 21) - 1

# Conservative slack for the box-culling bounds in cast_scene: boxes are
# skipped only when they clear the geometric bound by more than this, so
# floating-point rounding can never cull a box that could still matter.
_CULL_MARGIN = 1e-6


@njit(cache=True)
def decay_visible(
    keys: np.ndarray,
    scores: np.ndarray,
    origin: np.ndarray,
    normals: np.ndarray,
    cell_size: float,
    decay: float,
) -> None:
    """Scale scores of cells whose centers lie strictly inside all planes."""
    for i in range(keys.shape[0]):
        cx = (keys[i, 0] + 0.5) * cell_size
        cy = (keys[i, 1] + 0.5) * cell_size
        cz = (keys[i, 2] + 0.5) * cell_size
        inside = True
        for p in range(normals.shape[0]):
            d = (
                (cx - origin[0]) * normals[p, 0]
                + (cy - origin[1]) * normals[p, 1]
                + (cz - origin[2]) * normals[p, 2]
            )
            if d <= 0.0:
                inside = False
                break
        if inside:
            scores[i] *= decay


@njit(cache=True, error_model="numpy")
def pack_cell_counts(
    world: np.ndarray, cell_size: float
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique packed cell indices and their multiplicities.

    ``world`` rows are points; each falls in the cell ``floor(p / size)``
    per axis, exactly as the array form ``floor(world / size)`` computes.
    """
    n = world.shape[0]
    packed = np.empty(n, dtype=np.int64)
    for i in range(n):
        ki = np.int64(np.floor(world[i, 0] / cell_size)) + PACK_OFFSET
        kj = np.int64(np.floor(world[i, 1] / cell_size)) + PACK_OFFSET
        kk = np.int64(np.floor(world[i, 2] / cell_size)) + PACK_OFFSET
        packed[i] = (ki << 42) | (kj << 21) | kk
    packed.sort()
    uniq = np.empty(n, dtype=np.int64)
    counts = np.empty(n, dtype=np.float64)
    m = 0
    i = 0
    while i < n:
        j = i
        while j < n and packed[j] == packed[i]:
            j += 1
        uniq[m] = packed[i]
        counts[m] = j - i
        m += 1
        i = j
    return uniq[:m].copy(), counts[:m].copy()


@njit(cache=True)
def count_missing(store: np.ndarray, uniq: np.ndarray) -> int:
    """How many of the sorted ``uniq`` ids are absent from sorted ``store``."""
    miss = 0
    i = 0
    n = store.shape[0]
    for j in range(uniq.shape[0]):
        while i < n and store[i] < uniq[j]:
            i += 1
        if i >= n or store[i] != uniq[j]:
            miss += 1
    return miss


@njit(cache=True)
def add_matched(
    store: np.ndarray,
    scores: np.ndarray,
    uniq: np.ndarray,
    counts: np.ndarray,
) -> None:
    """Add counts onto scores when every id already exists in the store."""
    i = 0
    for j in range(uniq.shape[0]):
        while store[i] < uniq[j]:
            i += 1
        scores[i] += counts[j]


@njit(cache=True)
def merge_scores(
    store: np.ndarray,
    keys: np.ndarray,
    scores: np.ndarray,
    uniq: np.ndarray,
    counts: np.ndarray,
    n_miss: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge sorted new ids into the sorted store, adding onto matches."""
    n_old = store.shape[0]
    n = n_old + n_miss
    out_packed = np.empty(n, dtype=np.int64)
    out_keys = np.empty((n, 3), dtype=np.int64)
    out_scores = np.empty(n, dtype=np.float64)
    i = 0
    j = 0
    w = 0
    n_new = uniq.shape[0]
    while i < n_old or j < n_new:
        if j >= n_new or (i < n_old and store[i] < uniq[j]):
            out_packed[w] = store[i]
            out_keys[w, 0] = keys[i, 0]
            out_keys[w, 1] = keys[i, 1]
            out_keys[w, 2] = keys[i, 2]
            out_scores[w] = scores[i]
            i += 1
        elif i < n_old and store[i] == uniq[j]:
            out_packed[w] = store[i]
            out_keys[w, 0] = keys[i, 0]
            out_keys[w, 1] = keys[i, 1]
            out_keys[w, 2] = keys[i, 2]
            out_scores[w] = scores[i] + counts[j]
            i += 1
            j += 1
        else:
            p = uniq[j]
            out_packed[w] = p
            out_keys[w, 0] = (p >> 42) - PACK_OFFSET
            out_keys[w, 1] = ((p >> 21) & PACK_MASK) - PACK_OFFSET
            out_keys[w, 2] = (p & PACK_MASK) - PACK_OFFSET
            out_scores[w] = counts[j]
            j += 1
        w += 1
    return out_packed, out_keys, out_scores


@njit(cache=True)
def prune_mask(
    keys: np.ndarray, px: float, pz: float, cell_size: float, limit2: float
) -> np.ndarray:
    """Keep-mask for cell centers within the horizontal radius squared."""
    n = keys.shape[0]
    keep = np.empty(n, dtype=np.bool_)
    for i in range(n):
        dx = (keys[i, 0] + 0.5) * cell_size - px
        dz = (keys[i, 2] + 0.5) * cell_size - pz
        keep[i] = dx * dx + dz * dz <= limit2
    return keep


@njit(cache=True, error_model="numpy")
def cast_scene_rays(
    origin: np.ndarray,
    dirs: np.ndarray,
    lows: np.ndarray,
    highs: np.ndarray,
    axis: np.ndarray,
    euclid_cap: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit parameter and ground flag per ray (slab method).

    ``axis`` is the optical axis; every ray direction has unit component
    along it, so hit parameters are optical-plane depths and any hit lies
    strictly forward of the camera plane. Boxes entirely behind that plane
    (by more than the cull margin) or farther from the origin than
    ``euclid_cap`` (the caller's range bound times the longest ray norm,
    plus margin) therefore cannot produce a hit the caller's range mask
    would keep, and are skipped; surviving boxes run the same slab
    arithmetic as the array form, so kept hits are bit-identical.
    """
    n_boxes = lows.shape[0]
    kept = np.empty(n_boxes, dtype=np.int64)
    n_kept = 0
    o_axis = (
        origin[0] * axis[0] + origin[1] * axis[1] + origin[2] * axis[2]
    )
    cap2 = euclid_cap * euclid_cap
    for b in range(n_boxes):
        max_dot = -o_axis
        e2 = 0.0
        for a in range(3):
            la = lows[b, a] * axis[a]
            ha = highs[b, a] * axis[a]
            max_dot += la if la > ha else ha
            c = origin[a]
            if c < lows[b, a]:
                c = lows[b, a]
            elif c > highs[b, a]:
                c = highs[b, a]
            d = c - origin[a]
            e2 += d * d
        if max_dot >= -_CULL_MARGIN and e2 <= cap2:
            kept[n_kept] = b
            n_kept += 1

    n = dirs.shape[0]
    depth = np.empty(n, dtype=np.float64)
    ground = np.empty(n, dtype=np.bool_)
    for i in range(n):
        dy = dirs[i, 1]
        t_ground = -origin[1] / dy
        if dy < 0.0 and t_ground > 0.0:
            best = t_ground
            is_ground = True
        else:
            best = np.inf
            is_ground = False
        if n_kept:
            inv0 = _safe_inv(dirs[i, 0])
            inv1 = _safe_inv(dirs[i, 1])
            inv2 = _safe_inv(dirs[i, 2])
            for bi in range(n_kept):
                b = kept[bi]
                near = 0.0
                far = np.inf
                lo = (lows[b, 0] - origin[0]) * inv0
                hi = (highs[b, 0] - origin[0]) * inv0
                if lo > hi:
                    lo, hi = hi, lo
                if lo > near:
                    near = lo
                if hi < far:
                    far = hi
                lo = (lows[b, 1] - origin[1]) * inv1
                hi = (highs[b, 1] - origin[1]) * inv1
                if lo > hi:
                    lo, hi = hi, lo
                if lo > near:
                    near = lo
                if hi < far:
                    far = hi
                lo = (lows[b, 2] - origin[2]) * inv2
                hi = (highs[b, 2] - origin[2]) * inv2
                if lo > hi:
                    lo, hi = hi, lo
                if lo > near:
                    near = lo
                if hi < far:
                    far = hi
                if near <= far and near < best:
                    best = near
                    is_ground = False
        depth[i] = best
        ground[i] = is_ground
    return depth, ground


@njit(cache=True, error_model="numpy", inline="always")
def _safe_inv(d: float) -> float:
    """Reciprocal with tiny components clamped, as in the array form."""
    if abs(d) < 1e-12:
        d = 1e-12 if d >= 0.0 else -1e-12
    return 1.0 / d


@njit(cache=True, error_model="numpy")
def cast_lines(
    mirror: np.ndarray,
    mi0: int,
    mk0: int,
    ox: np.ndarray,
    oz: np.ndarray,
    dx: np.ndarray,
    dz: np.ndarray,
    cell_size: float,
    max_gap: int,
    max_length: float,
) -> np.ndarray:
    """Walkable length per line, one grid walk per lane.

    Clones the scalar cast: cells advance in crossing-time order with ties
    stepping the z axis first, repeated addition accumulates the times, a
    run of more than ``max_gap`` blocked cells ends the cast at the run's
    first cell, and cells outside the mirror read as blocked (unknown).
    """
    mh, mw = mirror.shape
    n = ox.shape[0]
    out = np.empty(n, dtype=np.float64)
    for r in range(n):
        i = int(np.floor(ox[r] / cell_size))
        k = int(np.floor(oz[r] / cell_size))
        step_i = 1 if dx[r] > 0.0 else -1
        step_k = 1 if dz[r] > 0.0 else -1
        if dx[r] != 0.0:
            t_max_x = ((i + (step_i > 0)) * cell_size - ox[r]) / dx[r]
            t_delta_x = cell_size / abs(dx[r])
        else:
            t_max_x = np.inf
            t_delta_x = np.inf
        if dz[r] != 0.0:
            t_max_z = ((k + (step_k > 0)) * cell_size - oz[r]) / dz[r]
            t_delta_z = cell_size / abs(dz[r])
        else:
            t_max_z = np.inf
            t_delta_z = np.inf

        gap_run = 0
        gap_start = 0.0
        result = max_length
        wi = i - mi0
        wk = k - mk0
        walk = (
            wi >= 0 and wi < mh and wk >= 0 and wk < mw and mirror[wi, wk]
        )
        if not walk:
            gap_run = 1
            if gap_run > max_gap:
                out[r] = 0.0
                continue
        while True:
            if t_max_x < t_max_z:
                t = t_max_x
                i += step_i
                t_max_x += t_delta_x
            else:
                t = t_max_z
                k += step_k
                t_max_z += t_delta_z
            if t > max_length:
                break
            wi = i - mi0
            wk = k - mk0
            walk = (
                wi >= 0 and wi < mh and wk >= 0 and wk < mw and mirror[wi, wk]
            )
            if walk:
                gap_run = 0
            else:
                if gap_run == 0:
                    gap_start = t
                gap_run += 1
                if gap_run > max_gap:
                    result = gap_start
                    break
        out[r] = result
    return out


@njit(cache=True)
def apply_surface_cells(
    ii: np.ndarray,
    kk: np.ndarray,
    walkable: np.ndarray,
    mirror: np.ndarray,
    known: np.ndarray,
    mi0: int,
    mk0: int,
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """Write observed cells into the dense planes; report dict changes.

    A cell needs a dict write only when it was never observed before or
    its walkability flipped; everything else would rewrite the value the
    dict already holds. The caller guarantees the planes cover all cells.
    """
    n = ii.shape[0]
    ci = np.empty(n, dtype=np.int64)
    ck = np.empty(n, dtype=np.int64)
    cv = np.empty(n, dtype=np.bool_)
    m = 0
    for x in range(n):
        wi = ii[x] - mi0
        wk = kk[x] - mk0
        w = walkable[x]
        if not known[wi, wk] or mirror[wi, wk] != w:
            ci[m] = ii[x]
            ck[m] = kk[x]
            cv[m] = w
            m += 1
        mirror[wi, wk] = w
        known[wi, wk] = True
    return m, ci, ck, cv
