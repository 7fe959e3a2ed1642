"""Finitely supported probability measures over group elements.

A :class:`SparseMeasure` maps canonical elements to positive double-precision
masses and carries an explicit ``defect``: probability mass that was
deliberately dropped when truncating an infinite family.  Defect is never
renormalized away; it propagates through convolutions and shows up as error
bars, so every truncated number stays auditable.

Convolution picks between an object-level fallback and the packed kernels in
:mod:`lampwalks._packed`; measures built by :mod:`lampwalks.constructions`
additionally carry coset-mixture structure that turns the heavy power
computations (millions of support points) into dense bit averaging.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import _packed, groups
from .errors import (
    BudgetExceededError,
    ElementTypeMismatch,
    TruncatedMeasureError,
)
from .groups import (
    Configuration,
    LampElement,
    PairElement,
    SemiDiagElement,
    add_configs,
    format_element,
    parse_element,
    shift,
    sort_key,
)

__all__ = [
    "SparseMeasure",
    "CosetPiece",
    "dirac",
    "mixture",
    "convolve",
    "convolve_power",
    "reflect",
    "entropy",
    "tv",
    "tv_uncertainty",
    "translate",
    "translated_tv",
    "cesaro",
    "lazy",
    "pushforward",
    "product_measure",
    "marginals",
    "measure_to_csv",
    "measure_from_csv",
    "effective_budget",
    "DEFAULT_SUPPORT_BUDGET",
]

DEFAULT_SUPPORT_BUDGET = 4_000_000
MASS_FLOOR = 1e-300  # arithmetic dust below this is dropped into the defect
NORMALIZATION_TOL = 1e-9
OBJECT_PAIR_MAX = 4_000_000

HOMOMORPHISMS = ("pi", "pi_prime", "pibar", "embed", "inversion", "omega")


def effective_budget(budget: Optional[int] = None) -> int:
    """Resolve a support-entry budget: explicit arg, WALK_BUDGET env, default."""
    if budget is not None:
        return int(budget)
    env = os.environ.get("WALK_BUDGET")
    if env:
        return int(env)
    return DEFAULT_SUPPORT_BUDGET


@dataclass(frozen=True)
class CosetPiece:
    """One term ``weight * Unif(offset + <bits_lo..bits_hi>)`` at walker step ``pos``.

    Construction-time structure used by the convolution engine; the subgroup
    is the configurations supported on the closed position interval, empty
    when ``bits_hi < bits_lo``.
    """

    weight: float
    pos: int
    offset: Configuration
    bits_lo: int
    bits_hi: int


class SparseMeasure:
    """Immutable finitely supported measure; entries map elements to masses.

    Internally a measure is held either as the element dict or as packed
    numpy columns (the convolution engine's output form); whichever side is
    missing is derived lazily.  ``entries`` must be treated as read-only.
    """

    __slots__ = ("_entries", "defect", "_pieces", "_packed_cache", "_packable")

    def __init__(
        self,
        entries: Optional[Dict] = None,
        defect: float = 0.0,
        *,
        pieces=None,
        validate: bool = True,
        packed=None,
    ):
        if entries is None and packed is None:
            raise ValueError("a measure needs entries or packed columns")
        self._entries = entries
        self.defect = float(defect)
        self._pieces = pieces
        self._packed_cache = packed
        self._packable = True
        if validate:
            self._validate()

    @property
    def entries(self) -> Dict:
        if self._entries is None:
            p = self._packed_cache
            self._entries = _packed.decode_entries(p.kind, p.pos, p.lo, p.masks, p.masses)
        return self._entries

    def _validate(self):
        if self.defect < 0:
            raise ValueError(f"negative defect {self.defect}")
        total = 0.0
        etype = None
        for el, v in self.entries.items():
            if v <= 0.0:
                raise ValueError(f"non-positive mass {v} at {el}")
            if etype is None:
                etype = type(el)
            elif type(el) is not etype:
                raise ElementTypeMismatch(
                    f"mixed element types {etype.__name__} and {type(el).__name__}"
                )
            total += v
        if abs(total + self.defect - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"masses + defect = {total + self.defect}, expected 1")

    @property
    def element_type(self):
        if self._entries is None:
            kind = self._packed_cache.kind
            return Configuration if kind == _packed.KIND_CONFIG else LampElement
        if not self._entries:
            return None
        return type(next(iter(self._entries)))

    @property
    def support_size(self) -> int:
        if self._entries is None:
            return len(self._packed_cache.masses)
        return len(self._entries)

    @property
    def total_mass(self) -> float:
        if self._entries is None:
            return float(self._packed_cache.masses.sum())
        return math.fsum(self._entries.values())

    def mass(self, el) -> float:
        return self.entries.get(el, 0.0)

    def items(self):
        return self.entries.items()

    def _packed(self):
        if self._packed_cache is None and self._packable:
            self._packed_cache = _packed.try_pack(self.entries)
            if self._packed_cache is None:
                self._packable = False
        return self._packed_cache

    def __repr__(self):
        return f"SparseMeasure({self.support_size} atoms, defect={self.defect:g})"


def _check_same_type(mu: SparseMeasure, nu: SparseMeasure):
    ta, tb = mu.element_type, nu.element_type
    if ta is not None and tb is not None and ta is not tb:
        raise ElementTypeMismatch(f"{ta.__name__} measure vs {tb.__name__} measure")


def dirac(g) -> SparseMeasure:
    """The unit mass at ``g``."""
    piece = None
    if type(g) is Configuration:
        piece = [CosetPiece(1.0, 0, g, 0, -1)]
    elif type(g) is LampElement:
        piece = [CosetPiece(1.0, g.pos, g.lamps, 0, -1)]
    return SparseMeasure({g: 1.0}, 0.0, pieces=piece, validate=False)


def mixture(terms: Iterable[Tuple[float, SparseMeasure]], extra_defect: float = 0.0) -> SparseMeasure:
    """Exact convex combination ``sum w_i mu_i`` (+ explicit extra defect)."""
    out: Dict = {}
    defect = float(extra_defect)
    pieces: Optional[List[CosetPiece]] = []
    etype = None
    for w, m in terms:
        if w < 0:
            raise ValueError("mixture weights must be nonnegative")
        if w == 0:
            continue
        _tmp = m.element_type
        if etype is None:
            etype = _tmp
        elif _tmp is not None and _tmp is not etype:
            raise ElementTypeMismatch("mixture over mixed element types")
        defect += w * m.defect
        for el, v in m.entries.items():
            out[el] = out.get(el, 0.0) + w * v
        if pieces is not None and m._pieces is not None:
            pieces.extend(CosetPiece(w * p.weight, p.pos, p.offset, p.bits_lo, p.bits_hi) for p in m._pieces)
        else:
            pieces = None
    return SparseMeasure(out, defect, pieces=pieces)


def _finish_columns(kind, pos, lo, masks, masses, budget):
    keep = masses >= MASS_FLOOR
    pos = pos[keep]
    masks = masks[keep]
    masses = masses[keep]
    if len(masses) > budget:
        raise BudgetExceededError(f"convolution support {len(masses)} exceeds budget {budget}")
    total = float(masses.sum())
    defect = max(0.0, 1.0 - total)
    top = int(masks.max()) if len(masks) else 0
    hi = lo + (top.bit_length() - 1) if top else lo - 1
    return defect, _packed.Packed(kind, pos, lo, hi, masks, masses)


def _convolve_object(a: Dict, b: Dict, budget: int) -> Dict:
    if len(a) * len(b) > OBJECT_PAIR_MAX:
        raise BudgetExceededError(
            f"convolution needs {len(a) * len(b)} element products; "
            f"supports too wide for the packed kernels and too large for the object path"
        )
    out: Dict = {}
    get = out.get
    for ga, va in a.items():
        for gb, vb in b.items():
            g = groups.mul(ga, gb)
            out[g] = get(g, 0.0) + va * vb
    if len(out) > budget:
        raise BudgetExceededError(f"convolution support {len(out)} exceeds budget {budget}")
    return out


def convolve(mu: SparseMeasure, nu: SparseMeasure, budget: Optional[int] = None) -> SparseMeasure:
    """Group convolution ``(mu * nu)(g) = sum_h mu(h) nu(h^-1 g)``.

    The result's defect is ``1 - sum(masses)``: the compounded input defects
    plus any arithmetic dust below the mass floor.
    """
    _check_same_type(mu, nu)
    budget = effective_budget(budget)

    pa = mu._packed()
    pb = nu._packed()
    if pa is not None and pb is not None:
        kind = pa.kind
        if nu._pieces is not None:
            pieces = [
                (p.weight, p.pos, p.offset.lit, p.bits_lo, p.bits_hi) for p in nu._pieces
            ]
            res = _packed.convolve_structured(pa, pieces, kind)
            if res is not None:
                defect, packed = _finish_columns(kind, res[0], res[1], res[2], res[3], budget)
                return SparseMeasure(defect=defect, packed=packed, validate=False)
        res = _packed.convolve_pairwise(pa, pb)
        if res is None:
            res = _packed.convolve_dense_atoms(pa, pb)
        if res is not None:
            defect, packed = _finish_columns(kind, res[0], res[1], res[2], res[3], budget)
            return SparseMeasure(defect=defect, packed=packed, validate=False)

    entries = _convolve_object(mu.entries, nu.entries, budget)
    drop = 0.0
    cleaned = {}
    for el, v in entries.items():
        if v >= MASS_FLOOR:
            cleaned[el] = v
        else:
            drop += v
    total = math.fsum(cleaned.values())
    return SparseMeasure(cleaned, max(0.0, 1.0 - total), validate=False)


def convolve_power(mu: SparseMeasure, t: int, budget: Optional[int] = None) -> SparseMeasure:
    """The t-fold convolution ``mu^{*t}``, t >= 1."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    acc = mu
    for _ in range(t - 1):
        acc = convolve(acc, mu, budget=budget)
    return acc


def reflect(mu: SparseMeasure) -> SparseMeasure:
    """Pushforward under group inversion (the reversed-walk step measure)."""
    out = {groups.inv(el): v for el, v in mu.entries.items()}
    pieces = None
    if mu._pieces is not None:
        pieces = [
            CosetPiece(
                p.weight,
                -p.pos,
                shift(p.offset, -p.pos),
                p.bits_lo - p.pos,
                p.bits_hi - p.pos,
            )
            for p in mu._pieces
        ]
    return SparseMeasure(out, mu.defect, pieces=pieces, validate=False)


def entropy(mu: SparseMeasure) -> float:
    """Shannon entropy in nats; refuses truncated measures."""
    if mu.defect != 0.0:
        raise TruncatedMeasureError(
            f"entropy of a truncated measure (defect={mu.defect:g}) is undefined here"
        )
    if mu._entries is None:
        v = mu._packed_cache.masses
    else:
        if not mu._entries:
            return 0.0
        v = np.fromiter(mu._entries.values(), dtype=np.float64, count=len(mu._entries))
    return float(-np.sum(v * np.log(v)))


def _tv_packed(pa: _packed.Packed, pb: _packed.Packed) -> Optional[float]:
    if pa.kind != pb.kind:
        return None
    lo = min(pa.lo, pb.lo)
    hi = max(pa.hi, pb.hi)
    if hi - lo + 1 > 64:
        return None
    pos = np.concatenate((pa.pos, pb.pos))
    masks = np.concatenate(
        (pa.masks << np.uint64(pa.lo - lo), pb.masks << np.uint64(pb.lo - lo))
    )
    masses = np.concatenate((pa.masses, -pb.masses))
    _, _, sums = _packed._reduce_columns(pos, masks, masses)
    return float(np.abs(sums).sum())


def tv(mu: SparseMeasure, nu: SparseMeasure) -> float:
    """Total variation as the l1 norm: ``sum_g |mu(g) - nu(g)|`` (max 2)."""
    _check_same_type(mu, nu)
    pa, pb = mu._packed(), nu._packed()
    if pa is not None and pb is not None:
        out = _tv_packed(pa, pb)
        if out is not None:
            return out
    acc = 0.0
    nb = nu.entries
    for el, v in mu.entries.items():
        acc += abs(v - nb.get(el, 0.0))
    ma = mu.entries
    for el, v in nb.items():
        if el not in ma:
            acc += v
    return acc


def tv_uncertainty(mu: SparseMeasure, nu: SparseMeasure) -> float:
    """Error bar on :func:`tv` coming from the operands' defects."""
    return mu.defect + nu.defect


def translate(g, mu: SparseMeasure) -> SparseMeasure:
    """Left translation: pushforward of ``mu`` under ``h -> g h``."""
    et = mu.element_type
    if et is not None and type(g) is not et:
        raise ElementTypeMismatch(f"translating a {et.__name__} measure by {type(g).__name__}")
    out = {groups.mul(g, el): v for el, v in mu.entries.items()}
    pieces = None
    if mu._pieces is not None and type(g) in (Configuration, LampElement):
        gp = g.pos if type(g) is LampElement else 0
        gl = g.lamps if type(g) is LampElement else g
        pieces = [
            CosetPiece(
                p.weight,
                gp + p.pos,
                add_configs(gl, shift(p.offset, gp)),
                p.bits_lo + gp,
                p.bits_hi + gp,
            )
            for p in mu._pieces
        ]
    return SparseMeasure(out, mu.defect, pieces=pieces, validate=False)


def translated_tv(g, mu: SparseMeasure) -> float:
    """``tv(translate(g, mu), mu)`` without materializing the translated measure.

    The translated support is only needed in packed form, which makes the
    per-step invariance columns cheap even at 1e6 support points.
    """
    p = mu._packed()
    if p is not None and type(g) in (Configuration, LampElement):
        gp = g.pos if type(g) is LampElement else 0
        gl = (g.lamps if type(g) is LampElement else g).lit
        lo = min(p.lo, p.lo + gp, *(gl or (p.lo,)))
        hi = max(p.hi, p.hi + gp, *(gl or (p.hi,)))
        if hi - lo + 1 <= 64:
            gmask = np.uint64(_packed.mask_of(gl, lo))
            shifted = (p.masks << np.uint64(p.lo + gp - lo)) ^ gmask
            tp = _packed.Packed(p.kind, p.pos + gp, lo, hi, shifted, p.masses)
            base = _packed.Packed(p.kind, p.pos, lo, hi, p.masks << np.uint64(p.lo - lo), p.masses)
            out = _tv_packed(tp, base)
            if out is not None:
                return out
    return tv(translate(g, mu), mu)


def cesaro(mu: SparseMeasure, t: int, budget: Optional[int] = None) -> SparseMeasure:
    """Cesaro average ``(mu + mu^{*2} + ... + mu^{*t}) / t``."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    budget = effective_budget(budget)
    acc = mu
    out: Dict = dict(mu.entries)
    defect = mu.defect
    for _ in range(t - 1):
        acc = convolve(acc, mu, budget=budget)
        defect += acc.defect
        for el, v in acc.entries.items():
            out[el] = out.get(el, 0.0) + v
        if len(out) > budget:
            raise BudgetExceededError(f"cesaro support {len(out)} exceeds budget {budget}")
    inv_t = 1.0 / t
    return SparseMeasure({el: v * inv_t for el, v in out.items()}, defect * inv_t, validate=False)


def lazy(mu: SparseMeasure, a: float) -> SparseMeasure:
    """The lazy modification ``a*delta_e + (1-a)*mu`` for 0 < a < 1."""
    if not (0.0 < a < 1.0):
        raise ValueError(f"laziness parameter must lie in (0,1), got {a}")
    el0 = mu.element_type
    if el0 is None:
        raise ValueError("cannot make an empty measure lazy")
    e = groups.identity_like(next(iter(mu.entries)))
    return mixture([(a, dirac(e)), (1.0 - a, mu)])


_HOM_FUNCS = {
    "pi": (SemiDiagElement, groups.hom_pi),
    "pi_prime": (SemiDiagElement, groups.hom_pi_prime),
    "pibar": (SemiDiagElement, groups.hom_pibar),
    "embed": (SemiDiagElement, groups.embed_pair),
    "inversion": (None, groups.inv),
}


def pushforward(hom: str, mu: SparseMeasure) -> SparseMeasure:
    """Image measure under one of the named homomorphisms.

    ``hom`` is one of ``pi``, ``pi_prime``, ``pibar``, ``embed`` (semi-diagonal
    domain), ``inversion`` (any group), or ``omega`` (pairs of configurations,
    mapped to the sum of the two coordinates).
    """
    if hom not in HOMOMORPHISMS:
        raise ValueError(f"unknown homomorphism {hom!r}; expected one of {HOMOMORPHISMS}")
    et = mu.element_type
    if hom == "omega":
        if et is not PairElement:
            raise ElementTypeMismatch("omega acts on measures over configuration pairs")
        func = lambda el: add_configs(el.left, el.right)  # noqa: E731
    else:
        domain, func = _HOM_FUNCS[hom]
        if domain is not None and et is not None and et is not domain:
            raise ElementTypeMismatch(f"{hom} acts on {domain.__name__} measures, got {et.__name__}")
        if hom == "inversion":
            return reflect(mu)
    out: Dict = {}
    for el, v in mu.entries.items():
        g = func(el)
        out[g] = out.get(g, 0.0) + v
    return SparseMeasure(out, mu.defect, validate=False)


def product_measure(mu: SparseMeasure, nu: SparseMeasure) -> SparseMeasure:
    """Independent product on the product group: mass mu(a)*nu(b) at (a,b)."""
    out: Dict = {}
    for a, va in mu.entries.items():
        for b, vb in nu.entries.items():
            out[PairElement(a, b)] = va * vb
    defect = mu.defect + nu.defect - mu.defect * nu.defect
    return SparseMeasure(out, defect, validate=False)


def marginals(joint: SparseMeasure) -> Tuple[SparseMeasure, SparseMeasure]:
    """Coordinate projections of a measure over pairs."""
    if joint.element_type is not PairElement:
        raise ElementTypeMismatch("marginals need a measure over PairElement")
    left: Dict = {}
    right: Dict = {}
    for el, v in joint.entries.items():
        left[el.left] = left.get(el.left, 0.0) + v
        right[el.right] = right.get(el.right, 0.0) + v
    return (
        SparseMeasure(left, joint.defect, validate=False),
        SparseMeasure(right, joint.defect, validate=False),
    )


def measure_to_csv(mu: SparseMeasure, target) -> None:
    """Dump as CSV (element, mass) plus a trailing ``# defect=`` comment line."""
    own = isinstance(target, (str, os.PathLike))
    fh = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["element", "mass"])
        for el in sorted(mu.entries, key=sort_key):
            writer.writerow([format_element(el), format(mu.entries[el], ".17g")])
        fh.write(f"# defect={format(mu.defect, '.17g')}\n")
    finally:
        if own:
            fh.close()


def measure_from_csv(source) -> SparseMeasure:
    """Parse a dump produced by :func:`measure_to_csv`."""
    own = isinstance(source, (str, os.PathLike))
    fh = open(source, "r", encoding="utf-8", newline="") if own else source
    try:
        text = fh.read()
    finally:
        if own:
            fh.close()
    defect = 0.0
    rows = []
    for line in text.splitlines():
        if line.startswith("# defect="):
            defect = float(line[len("# defect=") :])
        elif line:
            rows.append(line)
    entries: Dict = {}
    reader = csv.reader(io.StringIO("\n".join(rows)))
    header = next(reader, None)
    if header != ["element", "mass"]:
        raise ValueError(f"unexpected measure CSV header: {header}")
    for row in reader:
        if not row:
            continue
        el = parse_element(row[0])
        entries[el] = entries.get(el, 0.0) + float(row[1])
    return SparseMeasure(entries, defect)
