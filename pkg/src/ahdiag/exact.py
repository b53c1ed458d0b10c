"""Exact scalar arithmetic: rationals, complex rationals, square-root bounds.

Everything downstream (geometry, norms, certified bounds) is built on
``fractions.Fraction``; floats never enter any computation path.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

_RATIONAL_RE = re.compile(r"^[+-]?\d+(?:/-?\d+)?$")


def parse_rational(text: str) -> Fraction:
    """Parse ``p`` or ``p/q`` exactly.  Decimal or float syntax is rejected."""
    s = text.strip()
    if not _RATIONAL_RE.match(s):
        raise ValueError(f"not an exact rational: {text!r}")
    value = Fraction(s)
    return value


def format_rational(x: Fraction) -> str:
    return str(Fraction(x))


@dataclass(frozen=True)
class CRat:
    """Complex number with exact rational real and imaginary parts."""

    re: Fraction
    im: Fraction

    @staticmethod
    def of(re, im=0) -> "CRat":
        return CRat(Fraction(re), Fraction(im))

    @staticmethod
    def zero() -> "CRat":
        return _CRAT_ZERO

    @staticmethod
    def one() -> "CRat":
        return _CRAT_ONE

    def __add__(self, other: "CRat") -> "CRat":
        return CRat(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "CRat") -> "CRat":
        return CRat(self.re - other.re, self.im - other.im)

    def __neg__(self) -> "CRat":
        return CRat(-self.re, -self.im)

    def __mul__(self, other: "CRat") -> "CRat":
        return CRat(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )

    def scale(self, r: Fraction) -> "CRat":
        return CRat(self.re * r, self.im * r)

    def conj(self) -> "CRat":
        return CRat(self.re, -self.im)

    def abs2(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def __str__(self) -> str:
        if self.im == 0:
            return format_rational(self.re)
        if self.re == 0:
            return f"{format_rational(self.im)}i"
        sign = "+" if self.im > 0 else "-"
        return f"{format_rational(self.re)}{sign}{format_rational(abs(self.im))}i"


_CRAT_ZERO = CRat(Fraction(0), Fraction(0))
_CRAT_ONE = CRat(Fraction(1), Fraction(0))

_CRAT_RE = re.compile(
    r"^(?P<re>[+-]?\d+(?:/\d+)?)?(?P<im>[+-]?\d+(?:/\d+)?)?(?P<i>i)?$"
)


def parse_crat(text: str) -> CRat:
    """Parse ``a``, ``bi`` or ``a+bi`` with exact rational parts."""
    s = text.strip().replace(" ", "")
    if not s:
        raise ValueError("empty complex rational")
    if not s.endswith("i"):
        return CRat(parse_rational(s), Fraction(0))
    body = s[:-1]
    # split real from imaginary at the last top-level sign (not a leading one,
    # not the sign of a denominator)
    split = -1
    for idx in range(len(body) - 1, 0, -1):
        if body[idx] in "+-" and body[idx - 1] not in "/+-":
            split = idx
            break
    if split <= 0:
        im = body if body not in ("", "+", "-") else body + "1"
        return CRat(Fraction(0), parse_rational(im))
    re_part = body[:split]
    im_part = body[split:]
    if im_part in ("+", "-"):
        im_part += "1"
    return CRat(parse_rational(re_part), parse_rational(im_part))


def _is_square(f: Fraction):
    if f < 0:
        return None
    pn = math.isqrt(f.numerator)
    pd = math.isqrt(f.denominator)
    if pn * pn == f.numerator and pd * pd == f.denominator:
        return Fraction(pn, pd)
    return None


@dataclass(frozen=True)
class QSqrt:
    """The exact value sqrt(sq) for a nonnegative rational sq.

    Supports the operations certified bounds need: comparison against
    rationals and other square roots, multiplication, max.  Sums are not
    representable and deliberately unsupported.
    """

    sq: Fraction

    def __post_init__(self):
        if self.sq < 0:
            raise ValueError("QSqrt of a negative rational")

    @staticmethod
    def of_square(sq) -> "QSqrt":
        return QSqrt(Fraction(sq))

    @staticmethod
    def of_rational(r) -> "QSqrt":
        r = Fraction(r)
        if r < 0:
            raise ValueError("QSqrt of a negative rational")
        return QSqrt(r * r)

    def _cmp_key(self, other) -> tuple:
        if isinstance(other, QSqrt):
            return (self.sq, other.sq)
        other = Fraction(other)
        if other < 0:
            # every QSqrt is >= 0 > other
            return (Fraction(1), Fraction(0))
        return (self.sq, other * other)

    def __lt__(self, other):
        a, b = self._cmp_key(other)
        return a < b

    def __le__(self, other):
        a, b = self._cmp_key(other)
        return a <= b

    def __gt__(self, other):
        a, b = self._cmp_key(other)
        return a > b

    def __ge__(self, other):
        a, b = self._cmp_key(other)
        return a >= b

    def __eq__(self, other):
        if isinstance(other, QSqrt):
            return self.sq == other.sq
        if isinstance(other, (int, Fraction)):
            other = Fraction(other)
            return other >= 0 and self.sq == other * other
        return NotImplemented

    def __hash__(self):
        r = _is_square(self.sq)
        return hash(r) if r is not None else hash(("QSqrt", self.sq))

    def __mul__(self, other):
        if isinstance(other, QSqrt):
            return QSqrt(self.sq * other.sq)
        other = Fraction(other)
        if other < 0:
            raise ValueError("QSqrt scaled by a negative rational")
        return QSqrt(self.sq * other * other)

    __rmul__ = __mul__

    def as_rational(self):
        """Exact rational value when sq is a perfect square, else None."""
        return _is_square(self.sq)

    def upper_rational(self, scale: int = 10**12) -> Fraction:
        """A certified rational upper bound (for display only)."""
        n = self.sq.numerator * scale * scale
        d = self.sq.denominator
        root = math.isqrt(n // d)
        while root * root < (n + d - 1) // d * 1:
            root += 1
        return Fraction(root, scale)

    def __float__(self) -> float:
        return math.sqrt(float(self.sq))

    def __str__(self) -> str:
        r = _is_square(self.sq)
        if r is not None:
            return format_rational(r)
        return f"sqrt({format_rational(self.sq)})"


def qsqrt_max(values) -> QSqrt:
    out = QSqrt(Fraction(0))
    for v in values:
        if v > out:
            out = v
    return out
