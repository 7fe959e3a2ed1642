"""Lamplighter-style groups: configurations, wreath elements, homomorphisms.

A configuration is a finitely supported mod-2 function on the integers,
stored canonically as the strictly increasing tuple of its lit positions.
On top of it live the lamplighter group (walker position + lamps), the
semi-diagonal group (one walker position, two lamp panels), and plain
direct products.  All values are immutable and hashable, so they can key
sparse measures and cross thread boundaries freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Tuple, Union

from .errors import IntegerOverflowError

__all__ = [
    "Configuration",
    "LampElement",
    "SemiDiagElement",
    "PairElement",
    "EMPTY",
    "single",
    "shift",
    "add_configs",
    "lamp_mul",
    "lamp_inv",
    "semidiag_mul",
    "semidiag_inv",
    "hom_pi",
    "hom_pi_prime",
    "hom_pibar",
    "embed_pair",
    "mul",
    "inv",
    "identity_like",
    "format_element",
    "parse_element",
    "parse_configuration",
]

I64_MIN = -(2**63)
I64_MAX = 2**63 - 1


def _check_i64(value: int) -> int:
    if not (I64_MIN <= value <= I64_MAX):
        raise IntegerOverflowError(f"coordinate {value} outside signed 64-bit range")
    return value


@dataclass(frozen=True)
class Configuration:
    """A finite set of lit lamp positions, strictly increasing."""

    lit: Tuple[int, ...] = ()

    def __post_init__(self):
        lit = self.lit
        if not isinstance(lit, tuple):
            object.__setattr__(self, "lit", tuple(lit))
            lit = self.lit
        for i, p in enumerate(lit):
            _check_i64(p)
            if i and lit[i - 1] >= p:
                raise ValueError(f"positions must be strictly increasing, got {lit}")

    @property
    def range(self) -> int:
        """max |n| over the support; 0 for the empty configuration."""
        if not self.lit:
            return 0
        return max(-self.lit[0], self.lit[-1], 0)

    def is_empty(self) -> bool:
        return not self.lit

    def shift(self, n: int) -> "Configuration":
        return shift(self, n)

    def __add__(self, other: "Configuration") -> "Configuration":
        return add_configs(self, other)

    def __str__(self) -> str:
        return "{" + ",".join(str(p) for p in self.lit) + "}"


def _config_unchecked(lit: Tuple[int, ...]) -> Configuration:
    # trusted fast path: positions already strictly increasing and in range
    obj = object.__new__(Configuration)
    object.__setattr__(obj, "lit", lit)
    return obj


EMPTY = Configuration()


def single(n: int) -> Configuration:
    """The one-point configuration at position ``n``."""
    return Configuration((n,))


def from_support(positions: Iterable[int]) -> Configuration:
    """Build a configuration from distinct positions in any order."""
    return Configuration(tuple(sorted(positions)))


def shift(phi: Configuration, n: int) -> Configuration:
    """Translate the support by ``n`` (the shift automorphism of lamp panels)."""
    if n == 0 or not phi.lit:
        return phi
    _check_i64(phi.lit[0] + n)
    _check_i64(phi.lit[-1] + n)
    return _config_unchecked(tuple(p + n for p in phi.lit))


def add_configs(phi: Configuration, psi: Configuration) -> Configuration:
    """Pointwise mod-2 addition: the symmetric difference of the supports."""
    a, b = phi.lit, psi.lit
    if not a:
        return psi
    if not b:
        return phi
    out = []
    i = j = 0
    la, lb = len(a), len(b)
    while i < la and j < lb:
        x, y = a[i], b[j]
        if x < y:
            out.append(x)
            i += 1
        elif x > y:
            out.append(y)
            j += 1
        else:
            i += 1
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return _config_unchecked(tuple(out))


@dataclass(frozen=True)
class LampElement:
    """Element (pos, lamps) of the lamplighter group Z wr Z_2."""

    pos: int
    lamps: Configuration

    def __post_init__(self):
        _check_i64(self.pos)

    def __str__(self) -> str:
        return f"({self.pos}|{self.lamps})"


@dataclass(frozen=True)
class SemiDiagElement:
    """Element (pos, lampsA, lampsB): one walker driving two lamp panels."""

    pos: int
    lampsA: Configuration
    lampsB: Configuration

    def __post_init__(self):
        _check_i64(self.pos)

    def __str__(self) -> str:
        return f"({self.pos}|{self.lampsA}|{self.lampsB})"


@dataclass(frozen=True)
class PairElement:
    """Element of a direct product; components multiply independently."""

    left: object
    right: object

    def __str__(self) -> str:
        return f"({format_element(self.left)}|{format_element(self.right)})"


LAMP_IDENTITY = LampElement(0, EMPTY)
SEMIDIAG_IDENTITY = SemiDiagElement(0, EMPTY, EMPTY)


def lamp_mul(a: LampElement, b: LampElement) -> LampElement:
    return LampElement(a.pos + b.pos, add_configs(a.lamps, shift(b.lamps, a.pos)))


def lamp_inv(a: LampElement) -> LampElement:
    return LampElement(-a.pos, shift(a.lamps, -a.pos))


def semidiag_mul(a: SemiDiagElement, b: SemiDiagElement) -> SemiDiagElement:
    return SemiDiagElement(
        a.pos + b.pos,
        add_configs(a.lampsA, shift(b.lampsA, a.pos)),
        add_configs(a.lampsB, shift(b.lampsB, a.pos)),
    )


def semidiag_inv(a: SemiDiagElement) -> SemiDiagElement:
    return SemiDiagElement(-a.pos, shift(a.lampsA, -a.pos), shift(a.lampsB, -a.pos))


def hom_pi(a: SemiDiagElement) -> LampElement:
    """Projection onto the first lamp panel."""
    return LampElement(a.pos, a.lampsA)


def hom_pi_prime(a: SemiDiagElement) -> LampElement:
    """Projection onto the second lamp panel."""
    return LampElement(a.pos, a.lampsB)


def hom_pibar(a: SemiDiagElement) -> LampElement:
    """Difference homomorphism: keeps the walker, adds the two panels."""
    return LampElement(a.pos, add_configs(a.lampsA, a.lampsB))


def embed_pair(a: SemiDiagElement) -> PairElement:
    """Embed into the plain product of two lamplighter groups."""
    return PairElement(LampElement(a.pos, a.lampsA), LampElement(a.pos, a.lampsB))


# Generic dispatch used by the measure layer.

Element = Union[Configuration, LampElement, SemiDiagElement, PairElement]


def mul(a: Element, b: Element) -> Element:
    ta = type(a)
    if ta is not type(b):
        raise TypeError(f"cannot multiply {ta.__name__} by {type(b).__name__}")
    if ta is Configuration:
        return add_configs(a, b)
    if ta is LampElement:
        return lamp_mul(a, b)
    if ta is SemiDiagElement:
        return semidiag_mul(a, b)
    if ta is PairElement:
        return PairElement(mul(a.left, b.left), mul(a.right, b.right))
    raise TypeError(f"unsupported element type {ta.__name__}")


def inv(a: Element) -> Element:
    ta = type(a)
    if ta is Configuration:
        return a
    if ta is LampElement:
        return lamp_inv(a)
    if ta is SemiDiagElement:
        return semidiag_inv(a)
    if ta is PairElement:
        return PairElement(inv(a.left), inv(a.right))
    raise TypeError(f"unsupported element type {ta.__name__}")


def identity_like(a: Element) -> Element:
    ta = type(a)
    if ta is Configuration:
        return EMPTY
    if ta is LampElement:
        return LAMP_IDENTITY
    if ta is SemiDiagElement:
        return SEMIDIAG_IDENTITY
    if ta is PairElement:
        return PairElement(identity_like(a.left), identity_like(a.right))
    raise TypeError(f"unsupported element type {ta.__name__}")


def sort_key(a: Element):
    """Total order used for canonical enumeration in dumps and reductions."""
    ta = type(a)
    if ta is Configuration:
        return (0, len(a.lit), a.lit)
    if ta is LampElement:
        return (1, a.pos, sort_key(a.lamps))
    if ta is SemiDiagElement:
        return (2, a.pos, sort_key(a.lampsA), sort_key(a.lampsB))
    if ta is PairElement:
        return (3, sort_key(a.left), sort_key(a.right))
    raise TypeError(f"unsupported element type {ta.__name__}")


# Textual syntax: "{-1,2}" for configurations, "(n|{...})" for lamplighter
# elements, "(n|{...}|{...})" for semi-diagonal ones, "(<elem>|<elem>)" for
# product pairs.  Printing and parsing round-trip bit-exactly.


def format_element(a: Element) -> str:
    return str(a)


def parse_configuration(text: str) -> Configuration:
    text = text.strip()
    if not (text.startswith("{") and text.endswith("}")):
        raise ValueError(f"bad configuration syntax: {text!r}")
    body = text[1:-1].strip()
    if not body:
        return EMPTY
    return Configuration(tuple(int(tok) for tok in body.split(",")))


def _split_top(body: str) -> list:
    """Split on '|' at paren/brace depth zero."""
    parts = []
    depth = 0
    start = 0
    for i, ch in enumerate(body):
        if ch in "({":
            depth += 1
        elif ch in ")}":
            depth -= 1
        elif ch == "|" and depth == 0:
            parts.append(body[start:i])
            start = i + 1
    parts.append(body[start:])
    return parts


def parse_element(text: str) -> Element:
    text = text.strip()
    if text.startswith("{"):
        return parse_configuration(text)
    if not (text.startswith("(") and text.endswith(")")):
        raise ValueError(f"bad element syntax: {text!r}")
    parts = _split_top(text[1:-1])
    if len(parts) == 2:
        first = parts[0].strip()
        if first.lstrip("+-").isdigit():
            return LampElement(int(first), parse_configuration(parts[1]))
        return PairElement(parse_element(parts[0]), parse_element(parts[1]))
    if len(parts) == 3:
        return SemiDiagElement(
            int(parts[0].strip()),
            parse_configuration(parts[1]),
            parse_configuration(parts[2]),
        )
    raise ValueError(f"bad element syntax: {text!r}")
