"""Integer-packed kernels behind the sparse-measure convolution engine.

Measures over configurations (or lamplighter elements) whose supports fit a
64-position window are re-encoded as numpy columns: walker position, a uint64
lamp bitmask relative to the window, and the mass.  Group multiplication
becomes shift/xor arithmetic on those columns, which is what makes million-
entry exact convolutions affordable.

Three kernels, in decreasing order of structure:

* ``convolve_structured`` -- the right operand is a weighted union of uniform
  coset measures (kappa-style pieces).  Convolving by ``Unif(offset + S)`` for
  a coordinate subgroup ``S`` is per-bit averaging followed by an xor
  translation, so the cost is (number of subgroup bits) x (dense window) per
  piece instead of (support x support).
* ``convolve_dense_atoms`` -- one side is iterated atom by atom against a
  dense float window of the other side.
* ``convolve_pairwise`` -- both supports expanded into an explicit pair list,
  reduced by lexsort; exact and cheap while the pair count is small.

All reductions run in canonical (position, bitmask) order, so repeated runs
sum in the same order and results are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import BudgetExceededError
from .groups import Configuration, LampElement, _config_unchecked

KIND_CONFIG = "config"
KIND_LAMP = "lamp"

DENSE_MAX_WIDTH = 24  # dense windows up to 2**24 doubles (128 MiB)
DENSE_TOTAL_CELLS = 1 << 27  # cap on sum of dense windows in one convolution
PAIRWISE_MAX = 4_000_000  # explicit pair expansion cap


@dataclass
class Packed:
    kind: str
    pos: np.ndarray  # int64; all zeros for KIND_CONFIG
    lo: int  # lamp position encoded by mask bit 0
    hi: int  # largest lamp position that occurs (>= lo - 1)
    masks: np.ndarray  # uint64
    masses: np.ndarray  # float64

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1


def mask_of(lit: Tuple[int, ...], lo: int) -> int:
    m = 0
    for p in lit:
        m |= 1 << (p - lo)
    return m


def bits_to_lit(mask: int, lo: int) -> Tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(lo + low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def try_pack(entries: Dict) -> Optional[Packed]:
    """Columnar encoding of a measure's entries, or None if not encodable."""
    if not entries:
        return None
    first = next(iter(entries))
    tfirst = type(first)
    if tfirst is Configuration:
        kind = KIND_CONFIG
    elif tfirst is LampElement:
        kind = KIND_LAMP
    else:
        return None

    lo = None
    hi = None
    for el in entries:
        lit = el.lit if kind == KIND_CONFIG else el.lamps.lit
        if lit:
            if lo is None or lit[0] < lo:
                lo = lit[0]
            if hi is None or lit[-1] > hi:
                hi = lit[-1]
    if lo is None:
        lo, hi = 0, -1
    if hi - lo + 1 > 64:
        return None

    n = len(entries)
    pos = np.zeros(n, dtype=np.int64)
    masks = np.empty(n, dtype=np.uint64)
    masses = np.empty(n, dtype=np.float64)
    if kind == KIND_CONFIG:
        for i, (el, v) in enumerate(entries.items()):
            masks[i] = mask_of(el.lit, lo)
            masses[i] = v
    else:
        for i, (el, v) in enumerate(entries.items()):
            pos[i] = el.pos
            masks[i] = mask_of(el.lamps.lit, lo)
            masses[i] = v
    return Packed(kind, pos, lo, hi, masks, masses)


def decode_entries(kind: str, pos: np.ndarray, lo: int, masks: np.ndarray, masses: np.ndarray) -> Dict:
    out = {}
    if kind == KIND_CONFIG:
        for m, v in zip(masks.tolist(), masses.tolist()):
            out[_config_unchecked(bits_to_lit(m, lo))] = v
    else:
        for p, m, v in zip(pos.tolist(), masks.tolist(), masses.tolist()):
            out[LampElement(p, _config_unchecked(bits_to_lit(m, lo)))] = v
    return out


def _reduce_columns(pos: np.ndarray, masks: np.ndarray, masses: np.ndarray):
    """Sum masses of identical (pos, mask) keys, in canonical order."""
    order = np.lexsort((masks, pos))
    pos = pos[order]
    masks = masks[order]
    masses = masses[order]
    if len(pos) == 0:
        return pos, masks, masses
    boundary = np.empty(len(pos), dtype=bool)
    boundary[0] = True
    np.not_equal(pos[1:], pos[:-1], out=boundary[1:])
    np.logical_or(boundary[1:], masks[1:] != masks[:-1], out=boundary[1:])
    starts = np.flatnonzero(boundary)
    sums = np.add.reduceat(masses, starts)
    return pos[starts], masks[starts], sums


def convolve_pairwise(a: Packed, b: Packed):
    """All |a| x |b| products, reduced. Returns (pos, lo, masks, masses) or None."""
    na, nb = len(a.masks), len(b.masks)
    if na * nb > PAIRWISE_MAX:
        return None
    pos_min = int(a.pos.min()) if na else 0
    pos_max = int(a.pos.max()) if na else 0
    out_lo = min(a.lo, b.lo + pos_min)
    out_hi = max(a.hi, b.hi + pos_max)
    if out_hi - out_lo + 1 > 64:
        return None

    pa = np.repeat(a.pos, nb)
    ma = np.repeat(a.masks, nb) << np.uint64(a.lo - out_lo)
    va = np.repeat(a.masses, nb)
    pb = np.tile(b.pos, na)
    mb = np.tile(b.masks, na)
    vb = np.tile(b.masses, na)

    shift = (pa + (b.lo - out_lo)).astype(np.uint64)
    out_pos = pa + pb
    out_masks = ma ^ (mb << shift)
    out_masses = va * vb
    rp, rm, rv = _reduce_columns(out_pos, out_masks, out_masses)
    return rp, out_lo, rm, rv


def _group_by_pos(p: Packed):
    order = np.argsort(p.pos, kind="stable")
    pos = p.pos[order]
    masks = p.masks[order]
    masses = p.masses[order]
    groups = []
    if len(pos) == 0:
        return groups
    starts = np.flatnonzero(np.concatenate(([True], pos[1:] != pos[:-1])))
    ends = np.append(starts[1:], len(pos))
    for s, e in zip(starts, ends):
        groups.append((int(pos[s]), masks[s:e], masses[s:e]))
    return groups


def _bit_average(arr: np.ndarray, bit: int) -> np.ndarray:
    """Average over the subgroup {0, e_bit}: out[x] = (arr[x] + arr[x^bit])/2."""
    block = 1 << bit
    v = arr.reshape(-1, 2, block)
    m = 0.5 * (v[:, 0, :] + v[:, 1, :])
    out = np.empty_like(v)
    out[:, 0, :] = m
    out[:, 1, :] = m
    return out.reshape(arr.shape)


def _xor_gather(arr: np.ndarray, h: int, idx: np.ndarray) -> np.ndarray:
    if h == 0:
        return arr
    return arr[idx ^ np.uint64(h)]


def convolve_structured(a: Packed, pieces: List, out_kind: str):
    """Convolve by a weighted union of uniform coset measures.

    ``pieces`` entries are ``(weight, pos2, offset_lit, bits_lo, bits_hi)`` in
    absolute lamp coordinates; the coset is ``offset + <positions bits_lo..bits_hi>``.
    Returns (pos, lo, masks, masses) or None when windows get too wide.
    """
    groups = _group_by_pos(a)
    if not groups:
        return None

    # output window per output position
    boxes: Dict[int, Tuple[int, int]] = {}
    for p1, masks, _ in groups:
        for (_, p2, off_lit, b_lo, b_hi) in pieces:
            op = p1 + p2
            lo = a.lo
            hi = a.hi
            cand = [q + p1 for q in off_lit]
            if b_hi >= b_lo:
                cand.extend((b_lo + p1, b_hi + p1))
            if cand:
                lo = min(lo, min(cand))
                hi = max(hi, max(cand))
            cur = boxes.get(op)
            if cur is None:
                boxes[op] = (lo, hi)
            else:
                boxes[op] = (min(cur[0], lo), max(cur[1], hi))

    total_cells = 0
    for lo, hi in boxes.values():
        w = hi - lo + 1
        if w > DENSE_MAX_WIDTH:
            return None
        total_cells += 1 << w
    if total_cells > DENSE_TOTAL_CELLS:
        raise BudgetExceededError(
            f"structured convolution window needs {total_cells} dense cells > {DENSE_TOTAL_CELLS}"
        )

    dense: Dict[int, np.ndarray] = {op: np.zeros(1 << (hi - lo + 1)) for op, (lo, hi) in boxes.items()}
    idx_cache: Dict[int, np.ndarray] = {}

    by_p2: Dict[int, List] = {}
    for piece in pieces:
        by_p2.setdefault(piece[1], []).append(piece)

    for p1, masks, masses in groups:
        for p2, plist in by_p2.items():
            op = p1 + p2
            lo, hi = boxes[op]
            width = hi - lo + 1
            base = np.zeros(1 << width)
            base[masks << np.uint64(a.lo - lo)] = masses
            if width not in idx_cache:
                idx_cache[width] = np.arange(1 << width, dtype=np.uint64)
            idx = idx_cache[width]
            out = dense[op]

            # nested subgroups (common low bit) can reuse partial averages
            nested = len({pc[3] for pc in plist if pc[4] >= pc[3]}) <= 1
            plist_sorted = sorted(plist, key=lambda pc: pc[4] - pc[3])
            cur = base
            cur_bits = -1  # number of bits already averaged (nested mode)
            for (w8, _, off_lit, b_lo, b_hi) in plist_sorted:
                nbits = b_hi - b_lo + 1
                if nbits <= 0:
                    avg = base
                else:
                    if nested:
                        while cur_bits < nbits - 1:
                            cur_bits += 1
                            cur = _bit_average(cur, b_lo + p1 - lo + cur_bits)
                        avg = cur
                    else:
                        avg = base
                        for k in range(nbits):
                            avg = _bit_average(avg, b_lo + p1 - lo + k)
                h = mask_of(tuple(q + p1 for q in off_lit), lo)
                out += w8 * _xor_gather(avg, h, idx)

    out_pos_list = []
    out_lo_global = min(lo for lo, _ in boxes.values())
    out_hi_global = max(hi for _, hi in boxes.values())
    if out_hi_global - out_lo_global + 1 > 64:
        return None
    pos_col = []
    mask_col = []
    mass_col = []
    for op in sorted(dense):
        lo, hi = boxes[op]
        arr = dense[op]
        nz = np.flatnonzero(arr)
        if nz.size == 0:
            continue
        pos_col.append(np.full(nz.size, op, dtype=np.int64))
        mask_col.append(nz.astype(np.uint64) << np.uint64(lo - out_lo_global))
        mass_col.append(arr[nz])
    if not pos_col:
        return np.zeros(0, np.int64), out_lo_global, np.zeros(0, np.uint64), np.zeros(0)
    return (
        np.concatenate(pos_col),
        out_lo_global,
        np.concatenate(mask_col),
        np.concatenate(mass_col),
    )


def convolve_dense_atoms(a: Packed, b: Packed):
    """Atom loop over the smaller operand against dense windows of the other."""
    pos_min = int(a.pos.min())
    pos_max = int(a.pos.max())
    out_lo = min(a.lo, b.lo + pos_min)
    out_hi = max(a.hi, b.hi + pos_max)
    na, nb = len(a.masks), len(b.masks)

    if nb <= na:
        # out = sum_b mass_b * (A right-translated by atom b)
        groups = _group_by_pos(a)
        boxes = {}
        for p1, _, _ in groups:
            for pb in set(b.pos.tolist()):
                op = p1 + pb
                lo = min(a.lo, b.lo + p1)
                hi = max(a.hi, b.hi + p1)
                cur = boxes.get(op)
                boxes[op] = (lo, hi) if cur is None else (min(cur[0], lo), max(cur[1], hi))
        if any(hi - lo + 1 > DENSE_MAX_WIDTH for lo, hi in boxes.values()):
            return None
        if sum(1 << (hi - lo + 1) for lo, hi in boxes.values()) > DENSE_TOTAL_CELLS:
            raise BudgetExceededError("dense convolution window exceeds the cell budget")
        dense = {op: np.zeros(1 << (hi - lo + 1)) for op, (lo, hi) in boxes.items()}
        idx_cache = {}
        b_pos = b.pos.tolist()
        b_masks = b.masks.tolist()
        b_masses = b.masses.tolist()
        for p1, masks, masses in groups:
            per_box = {}
            for pb, mb, vb in zip(b_pos, b_masks, b_masses):
                op = p1 + pb
                lo, hi = boxes[op]
                width = hi - lo + 1
                key = op
                if key not in per_box:
                    base = np.zeros(1 << width)
                    base[masks << np.uint64(a.lo - lo)] = masses
                    if width not in idx_cache:
                        idx_cache[width] = np.arange(1 << width, dtype=np.uint64)
                    per_box[key] = (base, idx_cache[width], lo)
                base, idx, lo = per_box[key]
                h = mb << (b.lo + p1 - lo)
                dense[op] += vb * _xor_gather(base, h, idx)
        pos_col, mask_col, mass_col = [], [], []
        glo = min(lo for lo, _ in boxes.values())
        ghi = max(hi for _, hi in boxes.values())
        if ghi - glo + 1 > 64:
            return None
        for op in sorted(dense):
            lo, hi = boxes[op]
            arr = dense[op]
            nz = np.flatnonzero(arr)
            if nz.size == 0:
                continue
            pos_col.append(np.full(nz.size, op, dtype=np.int64))
            mask_col.append(nz.astype(np.uint64) << np.uint64(lo - glo))
            mass_col.append(arr[nz])
        if not pos_col:
            return np.zeros(0, np.int64), glo, np.zeros(0, np.uint64), np.zeros(0)
        return np.concatenate(pos_col), glo, np.concatenate(mask_col), np.concatenate(mass_col)

    # |a| < |b|: out = sum_a mass_a * (atom a left-translating B)
    groups_b = _group_by_pos(b)
    boxes = {}
    a_pos = a.pos.tolist()
    a_masks = a.masks.tolist()
    a_masses = a.masses.tolist()
    for pa in set(a_pos):
        for p2, _, _ in groups_b:
            op = pa + p2
            lo = min(a.lo, b.lo + pa)
            hi = max(a.hi, b.hi + pa)
            cur = boxes.get(op)
            boxes[op] = (lo, hi) if cur is None else (min(cur[0], lo), max(cur[1], hi))
    if any(hi - lo + 1 > DENSE_MAX_WIDTH for lo, hi in boxes.values()):
        return None
    if sum(1 << (hi - lo + 1) for lo, hi in boxes.values()) > DENSE_TOTAL_CELLS:
        raise BudgetExceededError("dense convolution window exceeds the cell budget")
    dense = {op: np.zeros(1 << (hi - lo + 1)) for op, (lo, hi) in boxes.items()}
    for pa, ma, va in zip(a_pos, a_masks, a_masses):
        for p2, masks, masses in groups_b:
            op = pa + p2
            lo, hi = boxes[op]
            target = (masks << np.uint64(b.lo + pa - lo)) ^ np.uint64(ma << (a.lo - lo))
            dense[op][target] += va * masses
    pos_col, mask_col, mass_col = [], [], []
    glo = min(lo for lo, _ in boxes.values())
    ghi = max(hi for _, hi in boxes.values())
    if ghi - glo + 1 > 64:
        return None
    for op in sorted(dense):
        lo, hi = boxes[op]
        arr = dense[op]
        nz = np.flatnonzero(arr)
        if nz.size == 0:
            continue
        pos_col.append(np.full(nz.size, op, dtype=np.int64))
        mask_col.append(nz.astype(np.uint64) << np.uint64(lo - glo))
        mass_col.append(arr[nz])
    if not pos_col:
        return np.zeros(0, np.int64), glo, np.zeros(0, np.uint64), np.zeros(0)
    return np.concatenate(pos_col), glo, np.concatenate(mask_col), np.concatenate(mass_col)
