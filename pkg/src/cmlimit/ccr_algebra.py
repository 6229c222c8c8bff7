"""Exact algebra of normal-ordered polynomials in canonical operator pairs.

Generators come in pairs (X_k, V_k) obeying a central commutation relation

    [X_k, V_k] = i * q_k * hbar^a_k * eps^b_k,      [anything cross-pair] = 0,

where q_k is a positive rational and hbar, eps are formal symbols tracked as
integer exponents.  Coefficients are Gaussian rationals, so every result in
this module is exact: equality of polynomials is equality in the algebra.

Two canonical instances matter in practice:

* ``cm_algebra()`` -- a single pair with [X, V] = i*hbar*eps, modelling the
  position and velocity of the center of mass of a many-particle system,
  where eps = 1/(N*mbar) is the inverse total mass.
* ``build_particle_algebra(system)`` -- N pairs with [X_k, P_k] = i*hbar,
  one per labeled particle.

Polynomials are stored in normal order (within each pair all X factors
precede all V factors, pairs sorted by index), which makes the representation
canonical: two expressions are equal iff their term maps coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product as _cartesian
from math import comb, factorial
from numbers import Rational


class AlgebraMismatchError(ValueError):
    """Raised when two operands belong to different algebras."""


class NotDivisibleError(ArithmeticError):
    """Raised when a polynomial lacks the hbar/eps powers required by a division."""


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str, Rational)):
        return Fraction(value)
    raise TypeError(f"expected an exact rational, got {value!r}")


def _frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


class GaussianRational:
    """Complex number with exact rational real and imaginary parts.

    Closed under +, -, * and division by nonzero values; equality is exact.
    Construct from ints, Fractions or strings; floats are rejected to keep
    the arithmetic exact.
    """

    __slots__ = ("re", "im")

    def __init__(self, re=0, im=0):
        object.__setattr__(self, "re", _as_fraction(re))
        object.__setattr__(self, "im", _as_fraction(im))

    @classmethod
    def _unchecked(cls, re, im):
        """Internal constructor for values already known to be Fractions."""
        self = object.__new__(cls)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)
        return self

    def __setattr__(self, name, value):
        raise AttributeError("GaussianRational is immutable")

    def _coerce(self, other):
        if isinstance(other, GaussianRational):
            return other
        if isinstance(other, (int, Fraction, Rational)):
            return GaussianRational(other)
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GaussianRational._unchecked(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return GaussianRational._unchecked(self.re - o.re, self.im - o.im)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return o - self

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        a, b, c, d = self.re, self.im, o.re, o.im
        # pure-real / pure-imaginary operands dominate in practice
        if b == 0:
            if d == 0:
                return GaussianRational._unchecked(a * c, _FRACTION_ZERO)
            if c == 0:
                return GaussianRational._unchecked(_FRACTION_ZERO, a * d)
            return GaussianRational._unchecked(a * c, a * d)
        if d == 0:
            if c == 0:
                return GaussianRational._unchecked(_FRACTION_ZERO, _FRACTION_ZERO)
            return GaussianRational._unchecked(a * c, b * c)
        if a == 0 and c == 0:
            return GaussianRational._unchecked(-(b * d), _FRACTION_ZERO)
        return GaussianRational._unchecked(a * c - b * d, a * d + b * c)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        denom = o.re * o.re + o.im * o.im
        if denom == 0:
            raise ZeroDivisionError("division by zero GaussianRational")
        return GaussianRational._unchecked(
            (self.re * o.re + self.im * o.im) / denom,
            (self.im * o.re - self.re * o.im) / denom,
        )

    def __neg__(self):
        return GaussianRational._unchecked(-self.re, -self.im)

    def __eq__(self, other):
        o = self._coerce(other)
        if o is None:
            return NotImplemented
        return self.re == o.re and self.im == o.im

    def __hash__(self):
        return hash((self.re, self.im))

    def __bool__(self):
        return self.re != 0 or self.im != 0

    def conjugate(self):
        return GaussianRational(self.re, -self.im)

    def abs2(self) -> Fraction:
        """|z|^2 as an exact rational."""
        return self.re * self.re + self.im * self.im

    def magnitude(self) -> float:
        return math.sqrt(float(self.abs2()))

    def to_complex(self) -> complex:
        return complex(self.re) + 1j * complex(self.im)

    def render(self) -> str:
        """Exact fraction string: ``a/b``, ``c/d*i`` or ``(a/b+c/d*i)``."""
        if self.im == 0:
            return _frac_str(self.re)
        if self.im == 1:
            im_part = "i"
        elif self.im == -1:
            im_part = "-i"
        else:
            im_part = f"{_frac_str(self.im)}*i"
        if self.re == 0:
            return im_part
        sign = "+" if self.im > 0 else "-"
        return f"({_frac_str(self.re)}{sign}{im_part.lstrip('-')})"

    def __repr__(self):
        return f"GaussianRational({self.re!r}, {self.im!r})"


_FRACTION_ZERO = Fraction(0)

ZERO = GaussianRational(0)
ONE = GaussianRational(1)
IMAG = GaussianRational(0, 1)


@dataclass(frozen=True)
class CentralConstant:
    """Scalar value of a pair commutator: [X, V] = i * q * hbar^a * eps^b."""

    q: Fraction
    hbar_exp: int
    eps_exp: int

    def __post_init__(self):
        object.__setattr__(self, "q", _as_fraction(self.q))
        if self.q <= 0:
            raise ValueError("central constant q must be positive")
        if self.hbar_exp < 0 or self.eps_exp < 0:
            raise ValueError("central constant exponents must be nonnegative")


@lru_cache(maxsize=None)
def _neg_central_power(q: Fraction, s: int) -> GaussianRational:
    """(-i*q)^s as a GaussianRational."""
    unit = ((1, 0), (0, -1), (-1, 0), (0, 1))[s % 4]
    scale = q**s
    return GaussianRational(unit[0] * scale, unit[1] * scale)


@dataclass(frozen=True)
class AlgebraSpec:
    """Specification of the canonical pairs: names plus central constants.

    ``pair_names[k]`` is the (position-like, momentum-like) label pair used
    for rendering; ``constants[k]`` fixes [X_k, V_k].  Cross-pair commutators
    are zero by construction.
    """

    pair_names: tuple
    constants: tuple

    def __post_init__(self):
        if len(self.pair_names) != len(self.constants):
            raise ValueError("pair_names and constants must have equal length")
        if not self.pair_names:
            raise ValueError("an algebra needs at least one pair")
        flat = [name for pair in self.pair_names for name in pair]
        if len(set(flat)) != len(flat):
            raise ValueError("generator names must be unique")

    @property
    def n_pairs(self) -> int:
        return len(self.pair_names)

    def zero(self) -> "NCPolynomial":
        return NCPolynomial._raw(self, {})

    def one(self) -> "NCPolynomial":
        return NCPolynomial._raw(self, {Monomial(): ONE})

    def x(self, pair: int = 0) -> "NCPolynomial":
        """The position-like generator of the given pair."""
        return self.ordered_monomial(1, 0, pair)

    def v(self, pair: int = 0) -> "NCPolynomial":
        """The momentum/velocity-like generator of the given pair."""
        return self.ordered_monomial(0, 1, pair)

    def ordered_monomial(
        self, x_exp: int, v_exp: int, pair: int = 0, hbar_exp: int = 0, eps_exp: int = 0
    ) -> "NCPolynomial":
        """The normal-ordered monomial hbar^a eps^b X_pair^x V_pair^v."""
        if not 0 <= pair < self.n_pairs:
            raise IndexError(f"pair index {pair} out of range")
        pairs = ((pair, x_exp, v_exp),) if (x_exp or v_exp) else ()
        return NCPolynomial._raw(self, {Monomial(hbar_exp, eps_exp, pairs): ONE})


def cm_algebra() -> AlgebraSpec:
    """Single-pair algebra of the center-of-mass pair: [X, V] = i*hbar*eps."""
    return AlgebraSpec(
        pair_names=(("X", "V"),),
        constants=(CentralConstant(Fraction(1), 1, 1),),
    )


@dataclass(frozen=True)
class Monomial:
    """Normal-ordered monomial hbar^h eps^e * prod_k X_k^{x_k} V_k^{v_k}.

    ``pairs`` holds only the pairs with a nonzero exponent, as sorted
    ``(pair_index, x_exp, v_exp)`` triples; the normal order (X before V
    within a pair, pairs by index) is implicit in this representation.
    """

    hbar_exp: int = 0
    eps_exp: int = 0
    pairs: tuple = ()

    def degree(self) -> int:
        return sum(x + v for _, x, v in self.pairs)

    def exponents(self, pair: int):
        for k, x, v in self.pairs:
            if k == pair:
                return (x, v)
        return (0, 0)

    def dense_exponents(self, n_pairs: int) -> tuple:
        out = [0] * (2 * n_pairs)
        for k, x, v in self.pairs:
            out[2 * k] = x
            out[2 * k + 1] = v
        return tuple(out)


def _validate_monomial(algebra: AlgebraSpec, mono: Monomial):
    if mono.hbar_exp < 0 or mono.eps_exp < 0:
        raise ValueError("hbar/eps exponents must be nonnegative")
    last = -1
    for entry in mono.pairs:
        k, x, v = entry
        if not last < k < algebra.n_pairs:
            raise ValueError(f"pair entries must be sorted and in range, got {mono.pairs}")
        if x < 0 or v < 0 or (x == 0 and v == 0):
            raise ValueError(f"pair exponents must be nonnegative and not both zero, got {entry}")
        last = k


def _merged_pair_products(algebra: AlgebraSpec, m1: Monomial, m2: Monomial):
    """Expansion terms of the monomial product m1 * m2 in normal order.

    Yields ``(scalar, Monomial)`` pairs.  Within pair k the reordering
    V^b X^p = sum_s s! C(b,s) C(p,s) (-c_k)^s X^{p-s} V^{b-s} applies, with
    c_k the pair's central constant; distinct pairs commute.
    """
    fixed = []
    options = []  # per-pair alternatives: list of (scalar, h_add, e_add, entry)
    p1, p2 = m1.pairs, m2.pairs
    i = j = 0
    while i < len(p1) and j < len(p2):
        k1, x1, v1 = p1[i]
        k2, x2, v2 = p2[j]
        if k1 < k2:
            fixed.append(p1[i])
            i += 1
        elif k2 < k1:
            fixed.append(p2[j])
            j += 1
        else:
            if v1 and x2:
                const = algebra.constants[k1]
                alts = []
                for s in range(min(v1, x2) + 1):
                    weight = factorial(s) * comb(v1, s) * comb(x2, s)
                    scalar = _neg_central_power(const.q, s) * weight
                    xe, ve = x1 + x2 - s, v1 + v2 - s
                    entry = (k1, xe, ve) if (xe or ve) else None
                    alts.append((scalar, s * const.hbar_exp, s * const.eps_exp, entry))
                options.append(alts)
                fixed.append(None)  # placeholder, filled per combination
            else:
                fixed.append((k1, x1 + x2, v1 + v2))
            i += 1
            j += 1
    fixed.extend(p1[i:])
    fixed.extend(p2[j:])

    base_h = m1.hbar_exp + m2.hbar_exp
    base_e = m1.eps_exp + m2.eps_exp
    if not options:
        yield ONE, Monomial(base_h, base_e, tuple(fixed))
        return

    slots = [idx for idx, entry in enumerate(fixed) if entry is None]
    for combo in _cartesian(*options):
        scalar = ONE
        h_add = e_add = 0
        entries = list(fixed)
        for slot, (scal, ha, ea, entry) in zip(slots, combo):
            scalar = scalar * scal
            h_add += ha
            e_add += ea
            entries[slot] = entry
        pairs = tuple(e for e in entries if e is not None)
        yield scalar, Monomial(base_h + h_add, base_e + e_add, pairs)


class NCPolynomial:
    """Noncommutative polynomial in canonical pairs, kept in normal order.

    Immutable; supports +, -, * (with scalars and polynomials) and integer
    powers.  The term map never stores zero coefficients, so ``==`` decides
    equality in the algebra.
    """

    __slots__ = ("algebra", "terms")

    def __init__(self, algebra: AlgebraSpec, terms=None):
        object.__setattr__(self, "algebra", algebra)
        clean = {}
        for mono, coeff in (terms or {}).items():
            _validate_monomial(algebra, mono)
            if not isinstance(coeff, GaussianRational):
                coeff = GaussianRational(coeff)
            if coeff:
                clean[mono] = coeff
        object.__setattr__(self, "terms", clean)

    @classmethod
    def _raw(cls, algebra, terms):
        """Internal constructor; ``terms`` must already be clean."""
        self = object.__new__(cls)
        object.__setattr__(self, "algebra", algebra)
        object.__setattr__(self, "terms", terms)
        return self

    def __setattr__(self, name, value):
        raise AttributeError("NCPolynomial is immutable")

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def _check_same_algebra(self, other):
        if self.algebra != other.algebra:
            raise AlgebraMismatchError("operands belong to different algebras")

    def _coerce_scalar(self, value):
        if isinstance(value, GaussianRational):
            return value
        if isinstance(value, (int, Fraction, Rational)):
            return GaussianRational(value)
        return None

    def __add__(self, other):
        if not isinstance(other, NCPolynomial):
            scalar = self._coerce_scalar(other)
            if scalar is None:
                return NotImplemented
            other = NCPolynomial(self.algebra, {Monomial(): scalar})
        self._check_same_algebra(other)
        out = dict(self.terms)
        for mono, coeff in other.terms.items():
            prev = out.get(mono)
            if prev is None:
                out[mono] = coeff
                continue
            total = prev + coeff
            if total:
                out[mono] = total
            else:
                del out[mono]
        return NCPolynomial._raw(self.algebra, out)

    __radd__ = __add__

    def __neg__(self):
        return NCPolynomial._raw(
            self.algebra, {m: -c for m, c in self.terms.items()}
        )

    def __sub__(self, other):
        if not isinstance(other, NCPolynomial):
            scalar = self._coerce_scalar(other)
            if scalar is None:
                return NotImplemented
            other = NCPolynomial(self.algebra, {Monomial(): scalar})
        self._check_same_algebra(other)
        out = dict(self.terms)
        for mono, coeff in other.terms.items():
            prev = out.get(mono)
            if prev is None:
                out[mono] = -coeff
                continue
            total = prev - coeff
            if total:
                out[mono] = total
            else:
                del out[mono]
        return NCPolynomial._raw(self.algebra, out)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, NCPolynomial):
            scalar = self._coerce_scalar(other)
            if scalar is None:
                return NotImplemented
            if not scalar:
                return self.algebra.zero()
            return NCPolynomial._raw(
                self.algebra, {m: c * scalar for m, c in self.terms.items()}
            )
        self._check_same_algebra(other)
        out = {}
        algebra = self.algebra
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                c12 = c1 * c2
                for scalar, mono in _merged_pair_products(algebra, m1, m2):
                    contrib = c12 if scalar is ONE else c12 * scalar
                    prev = out.get(mono)
                    if prev is None:
                        out[mono] = contrib
                        continue
                    total = prev + contrib
                    if total:
                        out[mono] = total
                    else:
                        del out[mono]
        return NCPolynomial._raw(self.algebra, out)

    def __rmul__(self, other):
        # scalars commute with everything, so left and right agree
        scalar = self._coerce_scalar(other)
        if scalar is None:
            return NotImplemented
        return self * scalar

    def __pow__(self, exponent: int):
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = self.algebra.one()
        base = self
        n = exponent
        while n:
            if n & 1:
                result = result * base
            base = base * base if n > 1 else base
            n >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, NCPolynomial):
            return NotImplemented
        return self.algebra == other.algebra and self.terms == other.terms

    __hash__ = None

    def __repr__(self):
        return f"<NCPolynomial {render(self)}>"

    def __str__(self):
        return render(self)


def commutator(f: NCPolynomial, g: NCPolynomial) -> NCPolynomial:
    """[f, g] = f*g - g*f, normal ordered."""
    return f * g - g * f


def anticommutator(f: NCPolynomial, g: NCPolynomial) -> NCPolynomial:
    return f * g + g * f


def eps_valuation(f: NCPolynomial):
    """Minimum eps exponent over the terms of f; ``math.inf`` for zero."""
    if f.is_zero:
        return math.inf
    return min(m.eps_exp for m in f.terms)


def hbar_valuation(f: NCPolynomial):
    if f.is_zero:
        return math.inf
    return min(m.hbar_exp for m in f.terms)


def divide_central(f: NCPolynomial, hbar_power: int, eps_power: int) -> NCPolynomial:
    """Exact division of f by i * hbar^hbar_power * eps^eps_power.

    Every term must carry at least the requested hbar/eps powers, otherwise
    NotDivisibleError is raised; the quotient times the divisor reproduces f.
    """
    if hbar_power < 0 or eps_power < 0:
        raise ValueError("divisor powers must be nonnegative")
    out = {}
    neg_i = GaussianRational(0, -1)  # 1/i
    for mono, coeff in f.terms.items():
        if mono.hbar_exp < hbar_power or mono.eps_exp < eps_power:
            raise NotDivisibleError(
                f"term with hbar^{mono.hbar_exp} eps^{mono.eps_exp} is not divisible "
                f"by i*hbar^{hbar_power}*eps^{eps_power}"
            )
        shifted = Monomial(
            mono.hbar_exp - hbar_power, mono.eps_exp - eps_power, mono.pairs
        )
        out[shifted] = coeff * neg_i
    return NCPolynomial._raw(f.algebra, out)


def scale_central(f: NCPolynomial, hbar_power: int, eps_power: int, q=1) -> NCPolynomial:
    """Multiply f by i * q * hbar^hbar_power * eps^eps_power (inverse of divide_central at q=1)."""
    scalar = IMAG * _as_fraction(q)
    out = {}
    for mono, coeff in f.terms.items():
        shifted = Monomial(
            mono.hbar_exp + hbar_power, mono.eps_exp + eps_power, mono.pairs
        )
        out[shifted] = coeff * scalar
    return NCPolynomial._raw(f.algebra, out)


def _require_single_pair(f: NCPolynomial):
    if f.algebra.n_pairs != 1:
        raise ValueError("this identity is defined on a single-pair algebra")


def residual_power_identity(n: int, m: int, algebra: AlgebraSpec | None = None) -> NCPolynomial:
    """[X^n, V^m] minus its factorized first-order form, in the CM algebra.

    The subtracted expression is [X^n, V] [X, V^m] / (i hbar eps); the
    returned residual has eps-valuation >= 2 and vanishes exactly whenever
    n = 1 or m = 1.
    """
    if n < 1 or m < 1:
        raise ValueError("powers must be >= 1")
    alg = algebra if algebra is not None else cm_algebra()
    if alg.n_pairs != 1:
        raise ValueError("power identity requires a single-pair algebra")
    const = alg.constants[0]
    X, V = alg.x(), alg.v()
    lhs = commutator(X**n, V**m)
    numerator = commutator(X**n, V) * commutator(X, V**m)
    rhs = divide_central(numerator, const.hbar_exp, const.eps_exp) * (1 / const.q)
    return lhs - rhs


def residual_monomial_identity(
    a: int, b: int, c: int, d: int, algebra: AlgebraSpec | None = None
) -> NCPolynomial:
    """Residual of the two-term factorization of [X^a V^b, X^c V^d].

    Subtracts ([X^a V^b, V] [X, X^c V^d] - [X^c V^d, V] [X, X^a V^b]) divided
    by i hbar eps from the exact commutator; the result has eps-valuation >= 2.
    """
    if min(a, b, c, d) < 0:
        raise ValueError("exponents must be nonnegative")
    alg = algebra if algebra is not None else cm_algebra()
    if alg.n_pairs != 1:
        raise ValueError("monomial identity requires a single-pair algebra")
    const = alg.constants[0]
    X, V = alg.x(), alg.v()
    f = alg.ordered_monomial(a, b)
    g = alg.ordered_monomial(c, d)
    lhs = commutator(f, g)
    numerator = commutator(f, V) * commutator(X, g) - commutator(g, V) * commutator(X, f)
    rhs = divide_central(numerator, const.hbar_exp, const.eps_exp) * (1 / const.q)
    return lhs - rhs


class SymbolPolynomial:
    """Commutative polynomial in the classical symbols of the generators.

    Shares the Monomial key type with NCPolynomial (the exponent record is
    the same; only the multiplication differs).  Closed under +, -, * and
    partial derivatives.
    """

    __slots__ = ("algebra", "terms")

    def __init__(self, algebra: AlgebraSpec, terms=None):
        object.__setattr__(self, "algebra", algebra)
        clean = {}
        for mono, coeff in (terms or {}).items():
            if not isinstance(coeff, GaussianRational):
                coeff = GaussianRational(coeff)
            if coeff:
                clean[mono] = coeff
        object.__setattr__(self, "terms", clean)

    @classmethod
    def _raw(cls, algebra, terms):
        self = object.__new__(cls)
        object.__setattr__(self, "algebra", algebra)
        object.__setattr__(self, "terms", terms)
        return self

    def __setattr__(self, name, value):
        raise AttributeError("SymbolPolynomial is immutable")

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def _check_same_algebra(self, other):
        if self.algebra != other.algebra:
            raise AlgebraMismatchError("operands belong to different algebras")

    def __add__(self, other):
        if not isinstance(other, SymbolPolynomial):
            return NotImplemented
        self._check_same_algebra(other)
        out = dict(self.terms)
        for mono, coeff in other.terms.items():
            total = out.get(mono, ZERO) + coeff
            if total:
                out[mono] = total
            else:
                out.pop(mono, None)
        return SymbolPolynomial._raw(self.algebra, out)

    def __neg__(self):
        return SymbolPolynomial._raw(self.algebra, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        if not isinstance(other, SymbolPolynomial):
            return NotImplemented
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, SymbolPolynomial):
            if isinstance(other, (int, Fraction, Rational, GaussianRational)):
                scalar = other if isinstance(other, GaussianRational) else GaussianRational(other)
                if not scalar:
                    return SymbolPolynomial._raw(self.algebra, {})
                return SymbolPolynomial._raw(
                    self.algebra, {m: c * scalar for m, c in self.terms.items()}
                )
            return NotImplemented
        self._check_same_algebra(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                merged = _merge_commuting(m1, m2)
                total = out.get(merged, ZERO) + c1 * c2
                if total:
                    out[merged] = total
                else:
                    out.pop(merged, None)
        return SymbolPolynomial._raw(self.algebra, out)

    __rmul__ = __mul__

    def diff_x(self, pair: int = 0) -> "SymbolPolynomial":
        """Partial derivative with respect to the position symbol of a pair."""
        return self._diff(pair, slot=0)

    def diff_v(self, pair: int = 0) -> "SymbolPolynomial":
        """Partial derivative with respect to the velocity symbol of a pair."""
        return self._diff(pair, slot=1)

    def _diff(self, pair, slot):
        out = {}
        for mono, coeff in self.terms.items():
            exps = mono.exponents(pair)
            e = exps[slot]
            if e == 0:
                continue
            new_x, new_v = (exps[0] - 1, exps[1]) if slot == 0 else (exps[0], exps[1] - 1)
            entries = [p for p in mono.pairs if p[0] != pair]
            if new_x or new_v:
                entries.append((pair, new_x, new_v))
                entries.sort()
            key = Monomial(mono.hbar_exp, mono.eps_exp, tuple(entries))
            total = out.get(key, ZERO) + coeff * e
            if total:
                out[key] = total
            else:
                out.pop(key, None)
        return SymbolPolynomial._raw(self.algebra, out)

    def __eq__(self, other):
        if not isinstance(other, SymbolPolynomial):
            return NotImplemented
        return self.algebra == other.algebra and self.terms == other.terms

    __hash__ = None

    def __repr__(self):
        return f"<SymbolPolynomial {render_symbol(self)}>"

    def __str__(self):
        return render_symbol(self)


def _merge_commuting(m1: Monomial, m2: Monomial) -> Monomial:
    merged = {}
    for k, x, v in m1.pairs:
        merged[k] = (x, v)
    for k, x, v in m2.pairs:
        ox, ov = merged.get(k, (0, 0))
        merged[k] = (ox + x, ov + v)
    pairs = tuple((k, x, v) for k, (x, v) in sorted(merged.items()) if x or v)
    return Monomial(m1.hbar_exp + m2.hbar_exp, m1.eps_exp + m2.eps_exp, pairs)


def symbol_map(f: NCPolynomial, eps_cutoff: int | None = None) -> SymbolPolynomial:
    """Classical symbol of a normal-ordered polynomial.

    Generators are made to commute on the normal-ordered form, so the term
    map carries over unchanged; terms with eps_exp >= eps_cutoff (when given)
    are discarded.
    """
    terms = {}
    for mono, coeff in f.terms.items():
        if eps_cutoff is not None and mono.eps_exp >= eps_cutoff:
            continue
        terms[mono] = coeff
    return SymbolPolynomial._raw(f.algebra, terms)


def lift(fs: SymbolPolynomial) -> NCPolynomial:
    """Normal-ordered re-embedding of a symbol polynomial (x^a v^b -> X^a V^b)."""
    return NCPolynomial._raw(fs.algebra, dict(fs.terms))


def poisson_bracket(fs: SymbolPolynomial, gs: SymbolPolynomial) -> SymbolPolynomial:
    """{f, g} = sum_k (df/dx_k dg/dv_k - dg/dx_k df/dv_k)."""
    if not isinstance(fs, SymbolPolynomial) or not isinstance(gs, SymbolPolynomial):
        raise TypeError("poisson_bracket expects SymbolPolynomial operands")
    fs._check_same_algebra(gs)
    out = SymbolPolynomial._raw(fs.algebra, {})
    for k in range(fs.algebra.n_pairs):
        out = out + (fs.diff_x(k) * gs.diff_v(k) - gs.diff_x(k) * fs.diff_v(k))
    return out


def residual_poisson(f: NCPolynomial, g: NCPolynomial) -> NCPolynomial:
    """[f, g] - i*hbar*eps * lift({symbol(f), symbol(g)}) for eps-free inputs.

    In the CM algebra the residual has eps-valuation >= 2: to first order in
    eps, commutators of eps-free polynomials reduce to the Poisson bracket of
    their symbols.
    """
    _require_single_pair(f)
    f._check_same_algebra(g)
    if any(m.eps_exp for m in f.terms) or any(m.eps_exp for m in g.terms):
        raise ValueError("residual_poisson requires eps-free inputs")
    const = f.algebra.constants[0]
    bracket = poisson_bracket(symbol_map(f), symbol_map(g))
    correction = scale_central(lift(bracket), const.hbar_exp, const.eps_exp, const.q)
    return commutator(f, g) - correction


def derivative_identity_residuals(f: NCPolynomial):
    """Residuals of the first-order derivative rules for a single-pair f.

    Returns ``([f, V] - i*hbar*eps*lift(ds/dx), [X, f] - i*hbar*eps*lift(ds/dv))``
    with s the symbol of f; both have eps-valuation >= 2 and vanish exactly
    when f involves only X (first) or only V (second).
    """
    _require_single_pair(f)
    if any(m.eps_exp for m in f.terms):
        raise ValueError("derivative identities require an eps-free input")
    alg = f.algebra
    const = alg.constants[0]
    s = symbol_map(f)
    r1 = commutator(f, alg.v()) - scale_central(
        lift(s.diff_x()), const.hbar_exp, const.eps_exp, const.q
    )
    r2 = commutator(alg.x(), f) - scale_central(
        lift(s.diff_v()), const.hbar_exp, const.eps_exp, const.q
    )
    return r1, r2


@dataclass(frozen=True)
class ParticleSystem:
    """N labeled particles with exact rational masses.

    Derived quantities: total mass M, mean mass mbar = M/N, and the
    commutator scale eps = 1/(N*mbar) = 1/M, all exact.
    """

    masses: tuple

    def __post_init__(self):
        masses = tuple(_as_fraction(m) for m in self.masses)
        if not masses:
            raise ValueError("a particle system needs at least one particle")
        if any(m <= 0 for m in masses):
            raise ValueError("masses must be positive")
        object.__setattr__(self, "masses", masses)

    @classmethod
    def uniform(cls, n: int, mass=1) -> "ParticleSystem":
        if n < 1:
            raise ValueError("need at least one particle")
        return cls(masses=(_as_fraction(mass),) * n)

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def total_mass(self) -> Fraction:
        return sum(self.masses, Fraction(0))

    @property
    def mean_mass(self) -> Fraction:
        return self.total_mass / self.n

    @property
    def eps(self) -> Fraction:
        return 1 / self.total_mass


def build_particle_algebra(system: ParticleSystem) -> AlgebraSpec:
    """N-pair algebra with [X_k, P_k] = i*hbar and cross-pair commutators zero."""
    names = tuple((f"X{k + 1}", f"P{k + 1}") for k in range(system.n))
    constants = tuple(CentralConstant(Fraction(1), 1, 0) for _ in range(system.n))
    return AlgebraSpec(pair_names=names, constants=constants)


def cm_observables(system: ParticleSystem, algebra: AlgebraSpec | None = None):
    """Center-of-mass observables (X_CM, V_CM, P_TOT) over the particle algebra.

    X_CM = sum m_k X_k / M, V_CM = sum P_k / M and P_TOT = M * V_CM; the
    exact commutators are [X_CM, V_CM] = i*hbar/M and [X_CM, P_TOT] = i*hbar.
    """
    alg = algebra if algebra is not None else build_particle_algebra(system)
    if alg.n_pairs != system.n:
        raise AlgebraMismatchError("algebra does not match the particle system")
    total = system.total_mass
    x_cm = alg.zero()
    p_tot = alg.zero()
    for k, mass in enumerate(system.masses):
        x_cm = x_cm + alg.x(k) * (mass / total)
        p_tot = p_tot + alg.v(k)
    v_cm = p_tot * (1 / total)
    return x_cm, v_cm, p_tot


# ---------------------------------------------------------------------------
# Textual rendering (the bit-exact contract for golden-file tests)
# ---------------------------------------------------------------------------


def _term_string(algebra, mono, coeff, lower=False):
    factors = []
    if mono.hbar_exp:
        factors.append("hbar" if mono.hbar_exp == 1 else f"hbar^{mono.hbar_exp}")
    if mono.eps_exp:
        factors.append("eps" if mono.eps_exp == 1 else f"eps^{mono.eps_exp}")
    for k, x, v in mono.pairs:
        x_name, v_name = algebra.pair_names[k]
        if lower:
            x_name, v_name = x_name.lower(), v_name.lower()
        if x:
            factors.append(x_name if x == 1 else f"{x_name}^{x}")
        if v:
            factors.append(v_name if v == 1 else f"{v_name}^{v}")
    cs = coeff.render()
    if not factors:
        return cs
    if cs == "1":
        return "*".join(factors)
    if cs == "-1":
        return "-" + "*".join(factors)
    return "*".join([cs] + factors)


def _render_terms(algebra, terms, lower=False):
    if not terms:
        return "0"
    n = algebra.n_pairs
    ordered = sorted(
        terms.items(),
        key=lambda item: (item[0].eps_exp, item[0].hbar_exp, item[0].dense_exponents(n)),
        reverse=True,
    )
    pieces = []
    for mono, coeff in ordered:
        s = _term_string(algebra, mono, coeff, lower=lower)
        if not pieces:
            pieces.append(s)
        elif s.startswith("-"):
            pieces.append(" - " + s[1:])
        else:
            pieces.append(" + " + s)
    return "".join(pieces)


def render(f: NCPolynomial) -> str:
    """Canonical text form, e.g. ``2*hbar^2*eps^2 + 4*i*hbar*eps*X*V``.

    Terms are sorted by (eps_exp, hbar_exp, exponent vector), highest first;
    coefficients render as exact fraction strings.
    """
    return _render_terms(f.algebra, f.terms)


def render_symbol(f: SymbolPolynomial) -> str:
    """Same contract as :func:`render` with lowercased generator names."""
    return _render_terms(f.algebra, f.terms, lower=True)
