"""Sample-path machinery for the lamplighter walks.

Three walk families share one increment scheme: draw an index ``n`` from
``alpha``, then draw the lamp bits of a uniform element of ``K_n`` (``n``
independent fair bits, position ``n`` forced on).  The base walk multiplies
``(-1, phi)``, the reflected walk its inverse ``(+1, T phi)``, and the
semi-diagonal walk ``(-1, phi, phi')`` with the pair tied by the coupling
spec.  Projections apply a homomorphism to semi-diagonal increments.

Every random quantity is addressed by ``(seed, path, step, purpose, block)``
through the Philox core, so a full path, a ranges-only replay, and a
window-restricted replay of the same path see identical bits.  The
vectorized helpers at the bottom (`simulate_window`, `sample_tau`,
`tau_survival_counts`) exploit that for batches of 1e4-1e5 paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constructions import AlphaSpec, CouplingSpec, PrescribedImage
from .errors import BudgetExceededError, TauNotFoundError
from .groups import (
    Configuration,
    LampElement,
    SemiDiagElement,
    _config_unchecked,
    add_configs,
    hom_pi,
    hom_pi_prime,
    hom_pibar,
    lamp_inv,
    lamp_mul,
    semidiag_mul,
    shift,
    single,
    sort_key,
)
from .rng import (
    TAG_BITS_A,
    TAG_BITS_B,
    TAG_EVENT,
    TAG_INDEX,
    derive_key,
    philox4x64,
    uniform_from_bits,
)

__all__ = [
    "BaseWalk",
    "ReflectedWalk",
    "SemiDiagWalk",
    "ProjectedWalk",
    "WalkStream",
    "PathSample",
    "sample_increment",
    "run_path",
    "stopping_tau",
    "swap_transform",
    "simulate_window",
    "WindowStats",
    "sample_tau",
    "tau_survival_counts",
]

MATERIALIZE_MAX = 1 << 22  # refuse to materialize configurations wider than this


@dataclass(frozen=True)
class BaseWalk:
    alpha: AlphaSpec

    kind = "base"


@dataclass(frozen=True)
class ReflectedWalk:
    alpha: AlphaSpec

    kind = "reflected"


@dataclass(frozen=True)
class SemiDiagWalk:
    alpha: AlphaSpec
    coupling: CouplingSpec

    kind = "semidiag"


@dataclass(frozen=True)
class ProjectedWalk:
    inner: SemiDiagWalk
    hom: str  # "pi" | "pi_prime" | "pibar"

    kind = "projected"

    def __post_init__(self):
        if not isinstance(self.inner, SemiDiagWalk):
            raise TypeError("ProjectedWalk wraps a SemiDiagWalk")
        if self.hom not in ("pi", "pi_prime", "pibar"):
            raise ValueError(f"projection must be pi, pi_prime or pibar, got {self.hom!r}")


WalkModel = Union[BaseWalk, ReflectedWalk, SemiDiagWalk, ProjectedWalk]


def _model_alpha(model: WalkModel) -> AlphaSpec:
    return model.inner.alpha if isinstance(model, ProjectedWalk) else model.alpha


def _model_coupling(model: WalkModel) -> Optional[CouplingSpec]:
    if isinstance(model, SemiDiagWalk):
        return model.coupling
    if isinstance(model, ProjectedWalk):
        return model.inner.coupling
    return None


class WalkStream:
    """Per-path random stream; one step of the walk consumes one step slot."""

    def __init__(self, seed: int, path_index: int = 0, salt: int = 0):
        self.key0 = derive_key(seed, salt)
        self.key1 = path_index & 0xFFFFFFFFFFFFFFFF
        self.step = 1  # increments are 1-indexed

    def _word0(self, step: int, tag: int, block: int = 0) -> int:
        w = philox4x64(
            (np.uint64(step), np.uint64(tag), np.uint64(block), np.uint64(0)),
            (np.uint64(self.key0), np.uint64(self.key1)),
        )
        return int(w[0])

    def uniform(self, step: int, tag: int) -> float:
        return float(uniform_from_bits(np.uint64(self._word0(step, tag))))

    def bit_words(self, step: int, tag: int, blocks: int) -> np.ndarray:
        """256-bit blocks as flat uint64 words (4 per block)."""
        c0 = np.full(blocks, step, dtype=np.uint64)
        c2 = np.arange(blocks, dtype=np.uint64)
        words = philox4x64(
            (c0, np.uint64(tag), c2, np.uint64(0)),
            (np.uint64(self.key0), np.uint64(self.key1)),
        )
        return np.stack(words, axis=-1).reshape(-1)


def _bits_from_words(words: np.ndarray, count: int) -> np.ndarray:
    """First ``count`` bits of the word stream, in position order."""
    idx = np.arange(count, dtype=np.int64)
    return ((words[idx >> 6] >> (idx & 63).astype(np.uint64)) & np.uint64(1)).astype(bool)


def _draw_k_config(stream: WalkStream, step: int, tag: int, n: int) -> Configuration:
    """A uniform element of K_n: fair bits on [0..n-1], bit n forced."""
    if n > MATERIALIZE_MAX:
        raise BudgetExceededError(f"increment width {n} too large to materialize")
    if n == 0:
        return single(0)
    words = stream.bit_words(step, tag, (n + 255) // 256)
    bits = _bits_from_words(words, n)
    lit = np.flatnonzero(bits).tolist()
    lit.append(n)
    return _config_unchecked(tuple(lit))


def _draw_uniform_box(stream: WalkStream, step: int, tag: int, n: int) -> Configuration:
    """A uniform element of the configurations on [0..n-1] (n fair bits)."""
    if n > MATERIALIZE_MAX:
        raise BudgetExceededError(f"increment width {n} too large to materialize")
    if n == 0:
        return Configuration()
    words = stream.bit_words(step, tag, (n + 255) // 256)
    bits = _bits_from_words(words, n)
    return _config_unchecked(tuple(np.flatnonzero(bits).tolist()))


def _rho_atoms(rho) -> Tuple[list, np.ndarray]:
    atoms = sorted(rho.entries, key=sort_key)
    cdf = np.cumsum([rho.entries[a] for a in atoms])
    return atoms, cdf


def _draw_pair(stream: WalkStream, step: int, n: int, coupling: CouplingSpec):
    """One draw from the coupling of kappa_n with itself."""
    kind = coupling.kind_at(n)
    if kind == "product":
        a = _draw_k_config(stream, step, TAG_BITS_A, n)
        b = _draw_k_config(stream, step, TAG_BITS_B, n)
        return a, b
    if kind == "diagonal":
        a = _draw_k_config(stream, step, TAG_BITS_A, n)
        return a, a
    if kind == "transposition":
        b = stream._word0(step, TAG_BITS_A) & 1
        lamp_on = Configuration((0, 1))
        lamp_off = single(1)
        return (lamp_on, lamp_off) if b else (lamp_off, lamp_on)
    # prescribed image
    phi0 = _draw_uniform_box(stream, step, TAG_BITS_A, n)
    atoms, cdf = _rho_atoms(kind.rho)
    u = stream.uniform(step, TAG_BITS_B)
    j = min(int(np.searchsorted(cdf, u, side="left")), len(atoms) - 1)
    left = add_configs(phi0, single(n))
    right = add_configs(left, atoms[j])
    return left, right


def _sample_payload(model: WalkModel, stream: WalkStream, step: int):
    """(n, payload) for one increment; payload is a config or a config pair."""
    alpha = _model_alpha(model)
    u = stream.uniform(step, TAG_INDEX)
    n = int(alpha.indices_from_uniforms(np.array([u]))[0])
    coupling = _model_coupling(model)
    if coupling is None:
        return n, _draw_k_config(stream, step, TAG_BITS_A, n)
    return n, _draw_pair(stream, step, n, coupling)


def _lift(model: WalkModel, payload):
    """Turn a payload into the group increment the walk multiplies by."""
    if isinstance(model, BaseWalk):
        return LampElement(-1, payload)
    if isinstance(model, ReflectedWalk):
        return lamp_inv(LampElement(-1, payload))
    if isinstance(model, SemiDiagWalk):
        return SemiDiagElement(-1, payload[0], payload[1])
    inner = SemiDiagElement(-1, payload[0], payload[1])
    return {"pi": hom_pi, "pi_prime": hom_pi_prime, "pibar": hom_pibar}[model.hom](inner)


def sample_increment(model: WalkModel, stream: WalkStream):
    """Draw the next increment of the walk as a group element."""
    step = stream.step
    stream.step += 1
    _, payload = _sample_payload(model, stream, step)
    return _lift(model, payload)


@dataclass(frozen=True)
class PathSample:
    """A realized trajectory: increments (index, payload) and states g_0..g_T."""

    kind: str
    seed: int
    path_index: int
    horizon: int
    increments: Tuple  # ((n_t, payload_t), ...) for t = 1..T
    states: Tuple  # (g_0, ..., g_T), g_0 the identity

    @property
    def ranges(self) -> Tuple[int, ...]:
        return tuple(n for n, _ in self.increments)


def _replay_states(model: WalkModel, increments) -> Tuple:
    if isinstance(model, BaseWalk) or (isinstance(model, ProjectedWalk)):
        state = LampElement(0, Configuration())
        mul = lamp_mul
    elif isinstance(model, ReflectedWalk):
        state = LampElement(0, Configuration())
        mul = lamp_mul
    else:
        state = SemiDiagElement(0, Configuration(), Configuration())
        mul = semidiag_mul
    states = [state]
    for _, payload in increments:
        state = mul(state, _lift(model, payload))
        states.append(state)
    return tuple(states)


def run_path(model: WalkModel, horizon: int, seed: int, path_index: int = 0) -> PathSample:
    """Simulate one path; deterministic in (model, horizon, seed, path_index)."""
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    stream = WalkStream(seed, path_index)
    increments = []
    for t in range(1, horizon + 1):
        n, payload = _sample_payload(model, stream, t)
        increments.append((n, payload))
    states = _replay_states(model, increments)
    return PathSample(model.kind, seed, path_index, horizon, tuple(increments), states)


def stopping_tau(range_seq: Sequence[int], phi_range: int):
    """First t with t > R and range_seq[t] - t > R (1-indexed); None if absent."""
    r = phi_range
    for i, val in enumerate(range_seq):
        t = i + 1
        if t > r and val - t > r:
            return t
    return None


def swap_transform(model: WalkModel, path: PathSample, phi: Configuration) -> PathSample:
    """Replace increment phi_tau by phi_tau + T^(tau-1) phi; recompute all states.

    Only defined for base-walk paths.  The swap happens at the stopping time
    tau for R = |phi|; the recomputed trajectory satisfies
    psi'_t = psi_t + phi for every t >= tau.
    """
    if path.kind != "base" or not isinstance(model, BaseWalk):
        raise ValueError("swap_transform is defined for base-walk paths")
    r = phi.range
    tau = stopping_tau(path.ranges, r)
    if tau is None:
        raise TauNotFoundError(
            f"stopping time for |phi| = {r} not reached within horizon {path.horizon}"
        )
    increments = list(path.increments)
    n_tau, payload = increments[tau - 1]
    increments[tau - 1] = (n_tau, add_configs(payload, shift(phi, tau - 1)))
    states = _replay_states(model, increments)
    return PathSample(path.kind, path.seed, path.path_index, path.horizon, tuple(increments), states)


# --- vectorized batch machinery ---------------------------------------------

_MASK_TABLE = np.zeros(65, dtype=np.uint64)
for _k in range(65):
    _MASK_TABLE[_k] = np.uint64((1 << _k) - 1) if _k < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)


def _batch_word0(key0: int, paths: np.ndarray, step: int, tag: int, block: int = 0) -> np.ndarray:
    words = philox4x64(
        (np.uint64(step), np.uint64(tag), np.uint64(block), np.uint64(0)),
        (np.uint64(key0), paths),
    )
    return words[0]


def _batch_window_bits(key0: int, paths: np.ndarray, step: int, tag: int, q: int, width: int) -> np.ndarray:
    """Fair bits at positions q..q+width-1 (bit j of the result = position q+j).

    Positions below zero yield zero bits; identical to what a full
    materialization of the same increment would produce at those positions.
    """
    if width > 64:
        raise ValueError("window wider than 64 positions")
    if q < 0:
        if q + width <= 0:
            return np.zeros(len(paths), dtype=np.uint64)
        inner = _batch_window_bits(key0, paths, step, tag, 0, width + q)
        return inner << np.uint64(-q)
    block0 = q // 256
    off = q - 256 * block0
    w0 = philox4x64(
        (np.uint64(step), np.uint64(tag), np.uint64(block0), np.uint64(0)),
        (np.uint64(key0), paths),
    )
    words = list(w0)
    if off + width > 256:
        w1 = philox4x64(
            (np.uint64(step), np.uint64(tag), np.uint64(block0 + 1), np.uint64(0)),
            (np.uint64(key0), paths),
        )
        words.extend(w1)
    wi, sh = off // 64, off % 64
    lo = words[wi] >> np.uint64(sh)
    if sh:
        hi_word = words[wi + 1] if wi + 1 < len(words) else np.zeros_like(lo)
        out = lo | (hi_word << np.uint64(64 - sh))
    else:
        out = lo
    return out & _MASK_TABLE[width]


def _k_window_bits(
    key0: int, paths: np.ndarray, step: int, tag: int, q: int, width: int, n: np.ndarray
) -> np.ndarray:
    """Window of a uniform K_n element: fair bits below n, bit n forced, 0 beyond."""
    raw = _batch_window_bits(key0, paths, step, tag, q, width)
    valid = np.clip(n - q, 0, 64)  # number of window bits strictly below position n
    out = raw & _MASK_TABLE[valid]
    in_win = (n >= q) & (n <= q + width - 1)
    out |= np.where(in_win, np.uint64(1) << (n - q).clip(0, 63).astype(np.uint64), np.uint64(0))
    return out


def _box_window_bits(
    key0: int, paths: np.ndarray, step: int, tag: int, q: int, width: int, n: np.ndarray
) -> np.ndarray:
    """Window of a uniform element of the configurations on [0..n-1]."""
    raw = _batch_window_bits(key0, paths, step, tag, q, width)
    valid = np.clip(n - q, 0, 64)
    return raw & _MASK_TABLE[valid]


@dataclass
class WindowStats:
    """Streamed window statistics over a batch of paths."""

    window_lo: int
    window_hi: int
    horizon: int
    cutoff: int
    paths: int
    final_bits: np.ndarray  # bool, (paths, width)
    last_flip: np.ndarray  # int32, (paths, width); -1 = never flipped
    flips_after_cutoff: np.ndarray  # int64 per window position


def _coupling_window_contrib(
    model, key0, paths, t, q, width, n, want: str
) -> np.ndarray:
    """Window bits of one panel (or the panel sum) of a semi-diagonal increment."""
    coupling = _model_coupling(model)
    out = np.zeros(len(paths), dtype=np.uint64)
    handled = np.zeros(len(paths), dtype=bool)
    for idx, kind in coupling.overrides:
        sel = n == idx
        if not sel.any():
            continue
        handled |= sel
        out = np.where(sel, _kind_window_bits(kind, key0, paths, t, q, width, n, want), out)
    rest = ~handled
    if rest.any():
        out = np.where(
            rest, _kind_window_bits(coupling.default, key0, paths, t, q, width, n, want), out
        )
    return out


def _one_at(pos: int, q: int, width: int) -> np.uint64:
    if q <= pos <= q + width - 1:
        return np.uint64(1 << (pos - q))
    return np.uint64(0)


def _kind_window_bits(kind, key0, paths, t, q, width, n, want: str) -> np.ndarray:
    """Window bits of panel A, panel B, or their sum, for one coupling kind."""
    if kind == "product":
        if want == "a":
            return _k_window_bits(key0, paths, t, TAG_BITS_A, q, width, n)
        if want == "b":
            return _k_window_bits(key0, paths, t, TAG_BITS_B, q, width, n)
        a_bits = _k_window_bits(key0, paths, t, TAG_BITS_A, q, width, n)
        b_bits = _k_window_bits(key0, paths, t, TAG_BITS_B, q, width, n)
        return a_bits ^ b_bits
    if kind == "diagonal":
        if want == "sum":
            return np.zeros(len(paths), dtype=np.uint64)
        return _k_window_bits(key0, paths, t, TAG_BITS_A, q, width, n)
    if kind == "transposition":
        # pair is ({1}, {0,1}) or ({0,1}, {1}); the panel sum is always {0}
        if want == "sum":
            return np.full(len(paths), _one_at(0, q, width), dtype=np.uint64)
        coin = (_batch_word0(key0, paths, t, TAG_BITS_A) & np.uint64(1)).astype(bool)
        low = coin if want == "a" else ~coin
        out = np.full(len(paths), _one_at(1, q, width), dtype=np.uint64)
        return out | np.where(low, _one_at(0, q, width), np.uint64(0))
    # prescribed image: panels are (phi0 + eps_n, phi0 + bar + eps_n), bar ~ rho
    atoms, cdf = _rho_atoms(kind.rho)
    u = uniform_from_bits(_batch_word0(key0, paths, t, TAG_BITS_B))
    j = np.minimum(np.searchsorted(cdf, u, side="left"), len(atoms) - 1)
    atom_masks = np.array(
        [sum(1 << (p - q) for p in a.lit if q <= p <= q + width - 1) for a in atoms],
        dtype=np.uint64,
    )
    bar = atom_masks[j]
    if want == "sum":
        return bar
    phi0 = _box_window_bits(key0, paths, t, TAG_BITS_A, q, width, n)
    in_win = (n >= q) & (n <= q + width - 1)
    eps = np.where(in_win, np.uint64(1) << (n - q).clip(0, 63).astype(np.uint64), np.uint64(0))
    left = phi0 | eps
    return left if want == "a" else left ^ bar


def _step_flip_bits(model: WalkModel, key0, paths, t, a, b, n) -> np.ndarray:
    """Which window positions flip at step t, as a bitmask per path."""
    width = b - a + 1
    if isinstance(model, BaseWalk):
        return _k_window_bits(key0, paths, t, TAG_BITS_A, a + t - 1, width, n)
    if isinstance(model, ReflectedWalk):
        return _k_window_bits(key0, paths, t, TAG_BITS_A, a - t, width, n)
    if isinstance(model, ProjectedWalk):
        want = {"pi": "a", "pi_prime": "b", "pibar": "sum"}[model.hom]
        return _coupling_window_contrib(model, key0, paths, t, a + t - 1, width, n, want)
    raise ValueError("simulate_window tracks walks on the lamplighter group; project semi-diagonal models first")


def simulate_window(
    model: WalkModel,
    window: Tuple[int, int],
    horizon: int,
    paths: int,
    seed: int,
    cutoff: int,
    salt: int = 0,
) -> WindowStats:
    """Track the lamp window [a..b] across a batch of paths.

    Uses the random-access property of the counter-based streams: only the
    philox blocks overlapping the (shifted) window are generated, so the cost
    per step is O(paths), independent of the sampled increment widths.
    """
    a, b = window
    if b < a:
        raise ValueError("window must be a nonempty interval")
    width = b - a + 1
    if width > 64:
        raise ValueError("windows wider than 64 positions are not supported")
    key0 = derive_key(seed, salt)
    lanes = np.arange(paths, dtype=np.uint64)
    alpha = _model_alpha(model)

    state = np.zeros(paths, dtype=np.uint64)
    last_flip = np.full((paths, width), -1, dtype=np.int32)
    flips_after = np.zeros(width, dtype=np.int64)

    for t in range(1, horizon + 1):
        u = uniform_from_bits(_batch_word0(key0, lanes, t, TAG_INDEX))
        n = alpha.indices_from_uniforms(u)
        flips = _step_flip_bits(model, key0, lanes, t, a, b, n)
        state ^= flips
        if flips.any():
            for j in range(width):
                hit = (flips >> np.uint64(j)) & np.uint64(1)
                hit = hit.astype(bool)
                if hit.any():
                    last_flip[hit, j] = t
                    if t > cutoff:
                        flips_after[j] += int(hit.sum())

    final_bits = np.zeros((paths, width), dtype=bool)
    for j in range(width):
        final_bits[:, j] = ((state >> np.uint64(j)) & np.uint64(1)).astype(bool)
    return WindowStats(a, b, horizon, cutoff, paths, final_bits, last_flip, flips_after)


def sample_tau(
    alpha: AlphaSpec, phi_range: int, t_max: int, paths: int, seed: int, salt: int = 0
) -> np.ndarray:
    """Draw-level tau sampling: simulate the index draws, apply the definition.

    Returns tau per path, with -1 when tau did not occur by t_max.  Uses the
    same per-(path, step) index draws as `run_path`, so the result agrees
    pathwise with `stopping_tau` over materialized increments.
    """
    key0 = derive_key(seed, salt)
    lanes = np.arange(paths, dtype=np.uint64)
    tau = np.full(paths, -1, dtype=np.int64)
    open_mask = np.ones(paths, dtype=bool)
    r = phi_range
    for t in range(1, t_max + 1):
        if not open_mask.any():
            break
        u = uniform_from_bits(_batch_word0(key0, lanes, t, TAG_INDEX))
        n = alpha.indices_from_uniforms(u)
        if t > r:
            hit = open_mask & (n - t > r)
            tau[hit] = t
            open_mask &= ~hit
    return tau


def tau_survival_counts(
    alpha: AlphaSpec,
    phi_range: int,
    t0_list: Sequence[int],
    paths: int,
    seed: int,
    salt: int = 0,
) -> Dict[int, int]:
    """Exceedance-event tau sampling: counts of {tau > t0} per requested t0.

    tau depends on the draws only through the independent events
    {n_t > t + R}; those are sampled exactly, chunk by chunk, by inverting
    the conditional survival function within each chunk (one uniform per
    path per chunk).  This is what makes 1e5 paths to t0 = 1e5 affordable
    for families whose survival does not decay.
    """
    r = phi_range
    t_max = max(t0_list)
    key0 = derive_key(seed, salt)
    lanes = np.arange(paths, dtype=np.uint64)

    # per-step trigger probabilities q_t = P(n > t + R), zero for t <= R
    t_all = np.arange(1, t_max + 1, dtype=np.float64)
    q = np.asarray(alpha.tail(t_all + r), dtype=np.float64)
    q[:r] = 0.0
    with np.errstate(divide="ignore"):
        log_keep = np.log1p(-np.minimum(q, 1.0))
    cum = np.concatenate(([0.0], np.cumsum(log_keep)))  # cum[t] = log P(tau > t)

    tau = np.full(paths, -1, dtype=np.int64)
    alive = np.ones(paths, dtype=bool)
    chunk_id = 0
    t_lo = 1
    chunk_len = 256
    while t_lo <= t_max:
        t_hi = min(t_max, t_lo + chunk_len - 1)
        u = uniform_from_bits(_batch_word0(key0, lanes, chunk_id, TAG_EVENT))
        with np.errstate(invalid="ignore"):
            fail_cdf = 1.0 - np.exp(cum[t_lo : t_hi + 1] - cum[t_lo - 1])
        idx = np.searchsorted(fail_cdf, u, side="left")
        trig = alive & (idx < (t_hi - t_lo + 1))
        tau[trig] = t_lo + idx[trig]
        alive &= ~trig
        chunk_id += 1
        t_lo = t_hi + 1
        chunk_len = min(chunk_len * 2, 1 << 16)
        if not alive.any():
            break

    return {int(t0): int(((tau < 0) | (tau > t0)).sum()) for t0 in t0_list}
