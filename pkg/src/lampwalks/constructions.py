"""The concrete measures driving the experiments.

Everything here is indexed by a weight sequence ``alpha`` on the positive
integers: ``K_n`` is the set of configurations on ``[0..n]`` with position
``n`` lit, ``kappa_n`` its uniform measure, ``lambda_alpha`` their mixture,
and ``mu_alpha = delta_{-1} (x) lambda_alpha`` the step distribution of the
leftward lamplighter walk.  Couplings of ``kappa_n`` with itself produce the
semi-diagonal step measure ``mu_tilde``.

Truncating an infinite family never reweights: the dropped tail becomes the
measure's defect, so truncated and exact quantities remain comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .errors import BudgetExceededError, InvalidCouplingError
from .groups import Configuration, LampElement, PairElement, SemiDiagElement, _config_unchecked, add_configs, single
from .measures import (
    CosetPiece,
    SparseMeasure,
    dirac,
    effective_budget,
    mixture,
)
from .rng import Stream

__all__ = [
    "AlphaSpec",
    "CouplingSpec",
    "PrescribedImage",
    "ZETA2_C",
    "k_set",
    "kappa",
    "phi_interval_group",
    "lambda_alpha",
    "mu_alpha",
    "coupling_measure",
    "omega_image_closed",
    "mu_tilde",
    "alpha_moment",
    "sample_alpha",
    "alpha_entropy_partial",
    "mu_entropy_partial",
]

K_SET_MAX_N = 25  # enumeration budget 2**25
ZETA2_C = 6.0 / math.pi**2  # 1 / sum n^-2; pinned against an independent summation in tests
_ALPHA_TABLE = 65536  # inverse-CDF table length for parametric families


def _zeta2_tail(m):
    """P(n > m) for the C/n^2 family: C * psi'(m+1), exact tail of the series."""
    return ZETA2_C * special.polygamma(1, np.asarray(m, dtype=np.float64) + 1.0)


@dataclass(frozen=True)
class AlphaSpec:
    """Weight sequence on {1, 2, ...}: explicit finite weights or a parametric family."""

    variant: str  # "finite" | "geometric" | "zeta2"
    weights: Tuple[Tuple[int, float], ...] = ()  # finite variant: sorted (index, weight)

    _cdf_cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @staticmethod
    def finite(weights: Union[Sequence[float], Mapping[int, float]]) -> "AlphaSpec":
        if isinstance(weights, Mapping):
            items = sorted((int(n), float(w)) for n, w in weights.items())
        else:
            items = [(i + 1, float(w)) for i, w in enumerate(weights)]
        for n, w in items:
            if n < 1:
                raise ValueError(f"alpha indices start at 1, got {n}")
            if w <= 0:
                raise ValueError(f"alpha weights must be positive, got alpha_{n} = {w}")
        total = math.fsum(w for _, w in items)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"finite alpha weights sum to {total}, expected 1")
        return AlphaSpec("finite", tuple(items))

    @staticmethod
    def geometric() -> "AlphaSpec":
        return AlphaSpec("geometric")

    @staticmethod
    def zeta2() -> "AlphaSpec":
        return AlphaSpec("zeta2")

    @property
    def is_finite(self) -> bool:
        return self.variant == "finite"

    @property
    def max_index(self) -> Optional[int]:
        return self.weights[-1][0] if self.is_finite else None

    def weight(self, n: int) -> float:
        if n < 1:
            return 0.0
        if self.variant == "geometric":
            return 2.0**-n
        if self.variant == "zeta2":
            return ZETA2_C / (n * n)
        for idx, w in self.weights:
            if idx == n:
                return w
        return 0.0

    def tail(self, m) -> Union[float, np.ndarray]:
        """P(n > m); vectorized over m."""
        if self.variant == "geometric":
            return np.exp2(-np.asarray(m, dtype=np.float64))
        if self.variant == "zeta2":
            return _zeta2_tail(m)
        m_arr = np.asarray(m, dtype=np.float64)
        idx = np.array([i for i, _ in self.weights], dtype=np.float64)
        w = np.array([w for _, w in self.weights], dtype=np.float64)
        csum = np.cumsum(w[::-1])[::-1]  # mass at indices >= idx[k]
        pos = np.searchsorted(idx, m_arr, side="right")
        out = np.where(pos < len(idx), np.append(csum, 0.0)[pos], 0.0)
        return out if out.shape else float(out)

    def _cdf_table(self):
        cached = self._cdf_cache.get("cdf")
        if cached is None:
            if self.variant == "finite":
                idx = np.array([i for i, _ in self.weights], dtype=np.int64)
                cdf = np.cumsum([w for _, w in self.weights])
            elif self.variant == "geometric":
                idx = np.arange(1, 65, dtype=np.int64)
                cdf = 1.0 - np.exp2(-idx.astype(np.float64))
            else:
                idx = np.arange(1, _ALPHA_TABLE + 1, dtype=np.int64)
                cdf = 1.0 - _zeta2_tail(idx)
            cached = (idx, cdf)
            self._cdf_cache["cdf"] = cached
        return cached

    def indices_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Exact inverse-CDF sampling: n(u) = min{m : P(n <= m) >= u}."""
        idx, cdf = self._cdf_table()
        u = np.asarray(u, dtype=np.float64)
        k = np.searchsorted(cdf, u, side="left")
        overflow = k >= len(idx)
        k_clamped = np.minimum(k, len(idx) - 1)
        out = idx[k_clamped].astype(np.int64)
        if overflow.any():
            if self.variant == "finite":
                out[overflow] = idx[-1]  # u landed in the 1e-12 rounding dust
            else:
                for j in np.flatnonzero(overflow):
                    out[j] = self._invert_tail(1.0 - float(u[j]))
        return out

    def _invert_tail(self, s: float) -> int:
        """min m with tail(m) <= s, for the rare draws beyond the table."""
        lo = _ALPHA_TABLE
        hi = lo * 2
        while float(self.tail(hi)) > s:
            lo, hi = hi, hi * 2
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if float(self.tail(mid)) <= s:
                hi = mid
            else:
                lo = mid
        return hi

    def __str__(self) -> str:
        if self.is_finite:
            return "finite:" + ",".join(f"{n}:{w:g}" for n, w in self.weights)
        return self.variant


def alpha_moment(alpha: AlphaSpec, truncate_at: Optional[int] = None) -> float:
    """First moment sum(n * alpha_n); +inf for the untruncated C/n^2 family."""
    if alpha.is_finite:
        items = alpha.weights
        if truncate_at is not None:
            items = tuple((n, w) for n, w in items if n <= truncate_at)
        return math.fsum(n * w for n, w in items)
    if alpha.variant == "geometric":
        if truncate_at is None:
            return 2.0
        n = truncate_at
        return 2.0 - (n + 2.0) * 2.0**-n
    if truncate_at is None:
        return math.inf
    # sum_{n<=N} n * C/n^2 = C * H_N
    return ZETA2_C * (float(special.digamma(truncate_at + 1)) + np.euler_gamma)


def sample_alpha(alpha: AlphaSpec, stream: Stream) -> int:
    """Draw one index n distributed by alpha from the given stream."""
    return int(alpha.indices_from_uniforms(np.array([stream.uniform()]))[0])


def alpha_entropy_partial(alpha: AlphaSpec, upto: Optional[int] = None) -> float:
    """H(alpha) restricted to indices <= upto (full sum for finite alpha)."""
    if alpha.is_finite:
        items = alpha.weights
        if upto is not None:
            items = tuple(p for p in items if p[0] <= upto)
        return -math.fsum(w * math.log(w) for _, w in items)
    if upto is None:
        raise ValueError("parametric alpha needs an explicit cutoff")
    n = np.arange(1, upto + 1, dtype=np.float64)
    if alpha.variant == "geometric":
        w = np.exp2(-n)
    else:
        w = ZETA2_C / (n * n)
    return float(-(w * np.log(w)).sum())


def mu_entropy_partial(alpha: AlphaSpec, upto: int) -> float:
    """Entropy contribution of the first classes: sum alpha_n (log 2^n - log alpha_n)."""
    if alpha.is_finite:
        return math.fsum(
            w * (n * math.log(2.0) - math.log(w)) for n, w in alpha.weights if n <= upto
        )
    n = np.arange(1, upto + 1, dtype=np.float64)
    w = np.exp2(-n) if alpha.variant == "geometric" else ZETA2_C / (n * n)
    return float((w * (n * math.log(2.0) - np.log(w))).sum())


def k_set(n: int) -> List[Configuration]:
    """All configurations on [0..n] with position n lit; 2**n of them."""
    if n < 1:
        raise ValueError(f"k_set needs n >= 1, got {n}")
    if n > K_SET_MAX_N:
        raise BudgetExceededError(f"k_set({n}) exceeds the 2**{K_SET_MAX_N} enumeration budget")
    out = []
    for mask in range(1 << n):
        lit = []
        m = mask
        while m:
            low = m & -m
            lit.append(low.bit_length() - 1)
            m ^= low
        lit.append(n)
        out.append(_config_unchecked(tuple(lit)))
    return out


def phi_interval_group(n: int) -> List[Configuration]:
    """All configurations supported on [0..n]; 2**(n+1) of them."""
    if n < 0:
        raise ValueError(f"need n >= 0, got {n}")
    if n + 1 > K_SET_MAX_N:
        raise BudgetExceededError(f"phi_interval_group({n}) exceeds the enumeration budget")
    out = []
    for mask in range(1 << (n + 1)):
        lit = []
        m = mask
        while m:
            low = m & -m
            lit.append(low.bit_length() - 1)
            m ^= low
        out.append(_config_unchecked(tuple(lit)))
    return out


def kappa(n: int, budget: Optional[int] = None) -> SparseMeasure:
    """Uniform measure on K_n, each atom of mass 2**-n."""
    if 1 << n > effective_budget(budget):
        raise BudgetExceededError(f"kappa({n}) support 2**{n} exceeds the entry budget")
    mass = 2.0**-n
    entries = {el: mass for el in k_set(n)}
    return SparseMeasure(entries, 0.0, pieces=[CosetPiece(1.0, 0, single(n), 0, n - 1)], validate=False)


def _mixture_support(alpha: AlphaSpec, truncate_at: Optional[int]) -> Tuple[List[Tuple[int, float]], float]:
    """Index/weight pairs to materialize, plus the dropped tail mass."""
    if alpha.is_finite:
        items = list(alpha.weights)
        if truncate_at is not None:
            kept = [(n, w) for n, w in items if n <= truncate_at]
            dropped = math.fsum(w for n, w in items if n > truncate_at)
            return kept, dropped
        return items, 0.0
    if truncate_at is None:
        raise ValueError(f"{alpha.variant} alpha is infinite; a truncation level is required")
    items = [(n, alpha.weight(n)) for n in range(1, truncate_at + 1)]
    return items, float(alpha.tail(truncate_at))


def lambda_alpha(
    alpha: AlphaSpec, truncate_at: Optional[int] = None, budget: Optional[int] = None
) -> SparseMeasure:
    """The lamp-step mixture sum alpha_n kappa_n on configurations."""
    items, dropped = _mixture_support(alpha, truncate_at)
    b = effective_budget(budget)
    if sum(1 << n for n, _ in items) > b:
        raise BudgetExceededError("lambda_alpha support exceeds the entry budget")
    return mixture([(w, kappa(n, budget=b)) for n, w in items], extra_defect=dropped)


def mu_alpha(
    alpha: AlphaSpec, truncate_at: Optional[int] = None, budget: Optional[int] = None
) -> SparseMeasure:
    """The walk step measure: position step -1, lamps distributed by lambda_alpha."""
    lam = lambda_alpha(alpha, truncate_at=truncate_at, budget=budget)
    entries = {LampElement(-1, phi): v for phi, v in lam.entries.items()}
    pieces = [CosetPiece(p.weight, -1, p.offset, p.bits_lo, p.bits_hi) for p in lam._pieces]
    return SparseMeasure(entries, lam.defect, pieces=pieces, validate=False)


@dataclass(frozen=True)
class PrescribedImage:
    """Couple kappa_n with itself so the two panels differ by a rho-distributed shift."""

    rho: SparseMeasure

    def validate(self, n: int):
        if self.rho.defect != 0.0:
            raise InvalidCouplingError("prescribed image measure must be defect-free")
        for el in self.rho.entries:
            if not isinstance(el, Configuration):
                raise InvalidCouplingError("prescribed image must be a measure on configurations")
            if el.lit and (el.lit[0] < 0 or el.lit[-1] > n - 1):
                raise InvalidCouplingError(
                    f"prescribed image support must lie in [0..{n - 1}], got {el}"
                )


CouplingKind = Union[str, PrescribedImage]  # "product" | "transposition" | "diagonal" | image

_DEFAULTS = ("product", "diagonal")


@dataclass(frozen=True)
class CouplingSpec:
    """Per-index choice of the coupling of kappa_n with itself.

    Indices absent from ``overrides`` use ``default``: independent products,
    or the diagonal (both panels flip identically).  The diagonal is the same
    coupling as ``PrescribedImage(dirac(empty))``; it is the default that makes
    the difference walk degenerate away from the overridden indices.
    """

    overrides: Tuple[Tuple[int, CouplingKind], ...] = ()
    default: str = "product"

    def __post_init__(self):
        if self.default not in _DEFAULTS:
            raise InvalidCouplingError(f"default coupling must be one of {_DEFAULTS}")
        seen = set()
        for n, kind in self.overrides:
            if n < 1:
                raise InvalidCouplingError(f"coupling index must be >= 1, got {n}")
            if n in seen:
                raise InvalidCouplingError(f"duplicate coupling override at n = {n}")
            seen.add(n)
            if isinstance(kind, str):
                if kind == "transposition":
                    if n != 1:
                        raise InvalidCouplingError("the transposition coupling is only defined at n = 1")
                elif kind not in ("product", "diagonal"):
                    raise InvalidCouplingError(f"unknown coupling kind {kind!r}")
            elif isinstance(kind, PrescribedImage):
                kind.validate(n)
            else:
                raise InvalidCouplingError(f"unknown coupling kind {kind!r}")

    @staticmethod
    def make(overrides: Optional[Mapping[int, CouplingKind]] = None, default: str = "product") -> "CouplingSpec":
        items = tuple(sorted((overrides or {}).items()))
        return CouplingSpec(items, default)

    def kind_at(self, n: int) -> CouplingKind:
        for idx, kind in self.overrides:
            if idx == n:
                return kind
        return self.default

    def non_diagonal_overrides(self) -> List[int]:
        """Override indices whose coupling is not the diagonal."""
        out = []
        for n, kind in self.overrides:
            if kind == "diagonal":
                continue
            if isinstance(kind, PrescribedImage):
                if set(kind.rho.entries) == {Configuration()}:
                    continue
            out.append(n)
        return out

    def __str__(self) -> str:
        parts = []
        for n, kind in self.overrides:
            if isinstance(kind, PrescribedImage):
                parts.append(f"image@{n}")
            else:
                parts.append(f"{kind}@{n}")
        parts.append(self.default)
        return "+".join(parts)


def coupling_measure(n: int, spec: CouplingSpec, budget: Optional[int] = None) -> SparseMeasure:
    """The coupling kappa-tilde_n on K_n x K_n prescribed by ``spec``."""
    kind = spec.kind_at(n)
    b = effective_budget(budget)
    eps_n = single(n)
    if kind == "product":
        if 1 << (2 * n) > b:
            raise BudgetExceededError(f"product coupling at n={n} needs 4**{n} atoms")
        ks = k_set(n)
        mass = 4.0**-n
        entries = {PairElement(x, y): mass for x in ks for y in ks}
        return SparseMeasure(entries, 0.0, validate=False)
    if kind == "transposition":
        if n != 1:
            raise InvalidCouplingError("the transposition coupling is only defined at n = 1")
        a = single(1)
        bth = Configuration((0, 1))
        return SparseMeasure({PairElement(a, bth): 0.5, PairElement(bth, a): 0.5}, 0.0, validate=False)
    if kind == "diagonal":
        if 1 << n > b:
            raise BudgetExceededError(f"diagonal coupling at n={n} needs 2**{n} atoms")
        mass = 2.0**-n
        entries = {PairElement(x, x): mass for x in k_set(n)}
        return SparseMeasure(entries, 0.0, validate=False)
    # prescribed image: push m (x) rho through (phi0, bar) -> (phi0+eps_n, phi0+bar+eps_n)
    kind.validate(n)
    rho = kind.rho
    if (1 << n) * len(rho.entries) > b:
        raise BudgetExceededError(f"prescribed-image coupling at n={n} is over budget")
    mass0 = 2.0**-n
    entries = {}
    for phi0 in phi_interval_group(n - 1):
        left = add_configs(phi0, eps_n)
        for bar, w in rho.entries.items():
            right = add_configs(left, bar)
            key = PairElement(left, right)
            entries[key] = entries.get(key, 0.0) + mass0 * w
    return SparseMeasure(entries, 0.0, validate=False)


def omega_image_closed(n: int, spec: CouplingSpec, budget: Optional[int] = None) -> SparseMeasure:
    """Closed-form image of the coupling under (phi, phi') -> phi + phi'.

    Independent of :func:`coupling_measure`: assembled from the per-kind
    formulas (product -> uniform on configurations over [0..n-1],
    transposition -> unit mass at {0}, diagonal -> unit mass at the empty
    configuration, prescribed image -> its rho).
    """
    kind = spec.kind_at(n)
    if kind == "product":
        if 1 << n > effective_budget(budget):
            raise BudgetExceededError(f"omega image at n={n} needs 2**{n} atoms")
        mass = 2.0**-n
        return SparseMeasure(
            {el: mass for el in phi_interval_group(n - 1)},
            0.0,
            pieces=[CosetPiece(1.0, 0, Configuration(), 0, n - 1)],
            validate=False,
        )
    if kind == "transposition":
        return dirac(single(0))
    if kind == "diagonal":
        return dirac(Configuration())
    return kind.rho


def mu_tilde(
    alpha: AlphaSpec,
    spec: CouplingSpec,
    truncate_at: Optional[int] = None,
    budget: Optional[int] = None,
) -> SparseMeasure:
    """Semi-diagonal step measure: position step -1, panel pair from the couplings."""
    items, dropped = _mixture_support(alpha, truncate_at)
    b = effective_budget(budget)
    entries: Dict = {}
    for n, w in items:
        coup = coupling_measure(n, spec, budget=b)
        for pair, v in coup.entries.items():
            el = SemiDiagElement(-1, pair.left, pair.right)
            entries[el] = entries.get(el, 0.0) + w * v
        if len(entries) > b:
            raise BudgetExceededError("mu_tilde support exceeds the entry budget")
    return SparseMeasure(entries, dropped, validate=False)
