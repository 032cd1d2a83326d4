"""Rational functions of a complex frequency in zero/pole/gain form.

Spectra and filter kernels are stored as ``gain * prod(w - z) / prod(w - p)``.
Products and quotients are exact bookkeeping on the root lists; sums go
through a common denominator whose numerator is re-rooted. The additive
(partial-fraction) form :class:`PartialFractions` is what the causal split
operates on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRIM = 1e-12
CANCEL = 1e-9


def polish_roots(coeffs, roots):
    """One Newton step on each root of the polynomial ``coeffs`` (highest first)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    deriv = np.polyder(coeffs)
    roots = np.array(roots, dtype=complex)
    for i, r in enumerate(roots):
        d = np.polyval(deriv, r)
        if d != 0:
            step = np.polyval(coeffs, r) / d
            if np.isfinite(step):
                roots[i] = r - step
    return roots


def trim(coeffs, rel=TRIM):
    """Drop leading coefficients that are negligible relative to the largest."""
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=complex))
    scale = np.max(np.abs(coeffs)) if coeffs.size else 0.0
    if scale == 0.0:
        return np.zeros(1, dtype=complex)
    first = np.argmax(np.abs(coeffs) > rel * scale)
    return coeffs[first:]


def poly_roots(coeffs):
    """Roots of a polynomial via companion-matrix eigenvalues plus polishing."""
    coeffs = trim(coeffs)
    if coeffs.size <= 1:
        return np.zeros(0, dtype=complex)
    return polish_roots(coeffs, np.roots(coeffs))


def _match(a, b, tol=CANCEL):
    """Greedy matching of near-equal entries; returns (unmatched_a, unmatched_b, matched_a)."""
    a = list(a)
    b = list(b)
    matched = []
    keep_a = []
    for x in a:
        if not b:
            keep_a.append(x)
            continue
        dist = np.abs(np.asarray(b) - x)
        j = int(np.argmin(dist))
        if dist[j] <= tol * max(1.0, abs(x)):
            matched.append(x)
            b.pop(j)
        else:
            keep_a.append(x)
    return (np.array(keep_a, dtype=complex), np.array(b, dtype=complex),
            np.array(matched, dtype=complex))


class Rational:
    """``gain * prod(w - zeros) / prod(w - poles)``."""

    __slots__ = ("gain", "zeros", "poles", "tag")

    def __init__(self, gain, zeros=(), poles=(), tag="", cancel=True):
        self.gain = complex(gain)
        z = np.asarray(zeros, dtype=complex).ravel()
        p = np.asarray(poles, dtype=complex).ravel()
        if self.gain == 0:
            z = np.zeros(0, dtype=complex)
            p = np.zeros(0, dtype=complex)
        elif cancel and z.size and p.size:
            z, p, _ = _match(z, p)
        self.zeros = z
        self.poles = p
        self.tag = tag

    @classmethod
    def constant(cls, c, tag=""):
        return cls(c, tag=tag)

    @classmethod
    def from_coeffs(cls, num, den=(1.0,), tag=""):
        """Build from coefficient arrays (highest power first)."""
        num = trim(num)
        den = trim(den)
        if den[0] == 0:
            raise ZeroDivisionError("zero denominator")
        return cls(num[0] / den[0], poly_roots(num), poly_roots(den), tag=tag)

    @property
    def numerator(self):
        return self.gain * np.poly(self.zeros) if self.zeros.size else np.array([self.gain])

    @property
    def denominator(self):
        return np.poly(self.poles) if self.poles.size else np.array([1.0 + 0j])

    @property
    def relative_degree(self):
        return self.poles.size - self.zeros.size

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.full(w.shape, self.gain, dtype=complex)
        for z in self.zeros:
            out = out * (w - z)
        for p in self.poles:
            out = out / (w - p)
        return out

    def __repr__(self):
        return f"Rational(gain={self.gain:.6g}, zeros={self.zeros}, poles={self.poles})"

    def _coerce(self, other):
        if isinstance(other, Rational):
            return other
        return Rational.constant(other)

    def __mul__(self, other):
        if isinstance(other, PartialFractions):
            return other * self
        other = self._coerce(other)
        return Rational(self.gain * other.gain,
                        np.concatenate([self.zeros, other.zeros]),
                        np.concatenate([self.poles, other.poles]))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other.gain == 0:
            raise ZeroDivisionError("division by the zero function")
        return self * other.inverse()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.inverse()

    def inverse(self):
        return Rational(1.0 / self.gain, self.poles, self.zeros)

    def __neg__(self):
        return Rational(-self.gain, self.zeros, self.poles, cancel=False)

    def __add__(self, other):
        other = self._coerce(other)
        if other.gain == 0:
            return self
        if self.gain == 0:
            return other
        only_self, only_other, shared = _match(self.poles, other.poles)
        common = np.concatenate([shared, only_self, only_other])
        left = np.polymul(self.numerator, np.poly(only_other) if only_other.size else [1.0])
        right = np.polymul(other.numerator, np.poly(only_self) if only_self.size else [1.0])
        num = trim(np.polyadd(left, right))
        if np.all(num == 0):
            return Rational(0.0)
        return Rational(num[0], poly_roots(num), common)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def conj(self):
        """Continuation of ``conj(f(w))`` from the real axis."""
        return Rational(np.conj(self.gain), np.conj(self.zeros), np.conj(self.poles), cancel=False)

    def reflect(self):
        """``f(-w)``."""
        sign = (-1) ** (self.zeros.size - self.poles.size)
        return Rational(self.gain * sign, -self.zeros, -self.poles, cancel=False)

    def at_infinity(self):
        """Limit as ``|w| -> inf``; raises for improper functions."""
        d = self.relative_degree
        if d > 0:
            return 0j
        if d == 0:
            return self.gain
        raise ValueError("improper rational function has no finite limit")

    def partial_fractions(self):
        """Convert a proper function to additive form.

        Poles closer than ``CANCEL`` (relative) are merged into one pole of
        higher order.
        """
        const = self.at_infinity()
        if self.poles.size == 0:
            return PartialFractions(const)
        poles, residues, orders = [], [], []
        for center, members in _cluster(self.poles):
            others = np.delete(self.poles, members)
            m = len(members)
            series = _taylor(self.gain, self.zeros, others, center, m)
            for k in range(1, m + 1):
                poles.append(center)
                residues.append(series[m - k])
                orders.append(k)
        return PartialFractions(const, np.array(poles), np.array(residues), np.array(orders))


def _cluster(poles):
    """Group near-equal poles; yields ``(center, member_indices)``."""
    left = list(range(len(poles)))
    while left:
        i = left.pop(0)
        members = [i]
        for j in list(left):
            if abs(poles[j] - poles[i]) <= CANCEL * max(1.0, abs(poles[i])):
                members.append(j)
                left.remove(j)
        yield complex(np.mean(poles[members])), members


def _taylor(gain, zeros, poles, center, terms):
    """First ``terms`` Taylor coefficients of ``gain prod(w-z)/prod(w-p)`` about ``center``."""
    out = np.zeros(terms, dtype=complex)
    out[0] = gain
    for z in zeros:
        factor = np.zeros(terms, dtype=complex)
        factor[0] = center - z
        if terms > 1:
            factor[1] = 1.0
        out = np.convolve(out, factor)[:terms]
    n = np.arange(terms)
    for p in poles:
        d = center - p
        out = np.convolve(out, (-1.0) ** n / d ** (n + 1))[:terms]
    return out


@dataclass
class PartialFractions:
    """``const + sum(residues / (w - poles) ** orders)``."""

    const: complex = 0j
    poles: np.ndarray = None
    residues: np.ndarray = None
    orders: np.ndarray = None

    def __post_init__(self):
        self.const = complex(self.const)
        self.poles = (np.zeros(0, dtype=complex) if self.poles is None
                      else np.asarray(self.poles, dtype=complex).ravel())
        self.residues = (np.zeros(0, dtype=complex) if self.residues is None
                         else np.asarray(self.residues, dtype=complex).ravel())
        self.orders = (np.ones(self.poles.size, dtype=int) if self.orders is None
                       else np.asarray(self.orders, dtype=int).ravel())

    @property
    def simple(self) -> bool:
        return bool(np.all(self.orders == 1))

    def __call__(self, w):
        w = np.asarray(w, dtype=complex)
        out = np.full(w.shape, self.const, dtype=complex)
        for p, r, k in zip(self.poles, self.residues, self.orders):
            out = out + r / (w - p) ** k
        return out

    def __add__(self, other):
        if isinstance(other, Rational):
            other = other.partial_fractions()
        elif not isinstance(other, PartialFractions):
            return PartialFractions(self.const + other, self.poles, self.residues, self.orders)
        poles, residues, orders = list(self.poles), list(self.residues), list(self.orders)
        for p, r, k in zip(other.poles, other.residues, other.orders):
            for i, q in enumerate(poles):
                if orders[i] == k and abs(q - p) <= CANCEL * max(1.0, abs(p)):
                    residues[i] += r
                    break
            else:
                poles.append(p)
                residues.append(r)
                orders.append(k)
        return PartialFractions(self.const + other.const, np.array(poles, dtype=complex),
                                np.array(residues, dtype=complex), np.array(orders, dtype=int))

    __radd__ = __add__

    def __neg__(self):
        return PartialFractions(-self.const, self.poles, -self.residues, self.orders)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        """Product with a scalar or a :class:`Rational`."""
        if not isinstance(other, Rational):
            return PartialFractions(self.const * other, self.poles, self.residues * other,
                                    self.orders)
        self = self.prune(0.0)
        coincident = any(other.poles.size and np.min(np.abs(other.poles - p))
                         <= CANCEL * max(1.0, abs(p)) for p in self.poles)
        if self.simple and not coincident:
            # residues of the product at each factor's poles, evaluated directly
            own = PartialFractions(self.const * other.at_infinity(), self.poles,
                                   self.residues * other(self.poles))
            if not other.poles.size:
                return own.prune(0.0)
            g = other.partial_fractions()
            if not g.simple:
                return self._termwise(other)
            return (own + PartialFractions(0j, g.poles, g.residues * self(g.poles))).prune(0.0)
        return self._termwise(other)

    def _termwise(self, other):
        total = (other * self.const).partial_fractions() if self.const else PartialFractions()
        for p, r, k in zip(self.poles, self.residues, self.orders):
            term = Rational(r * other.gain, other.zeros,
                            np.concatenate([other.poles, np.full(k, p)]))
            total = total + term.partial_fractions()
        return total.prune(0.0)

    __rmul__ = __mul__

    def select(self, mask):
        return PartialFractions(0j, self.poles[mask], self.residues[mask], self.orders[mask])

    def prune(self, rel=1e-14):
        """Drop terms whose coefficient is negligible next to the largest."""
        if not self.residues.size:
            return self
        scale = np.max(np.abs(self.residues))
        keep = np.abs(self.residues) > rel * scale if scale > 0 else np.zeros(self.residues.size, bool)
        return PartialFractions(self.const, self.poles[keep], self.residues[keep], self.orders[keep])

    def real_line_integral(self):
        """``(1/2pi) * PV integral over the real axis``; requires a vanishing constant.

        Higher-order terms integrate to zero.
        """
        if abs(self.const) > 0:
            raise ValueError("integrand does not decay on the real axis")
        if np.any(self.poles.imag == 0):
            raise ValueError("pole on the real axis")
        first = self.orders == 1
        return 0.5j * np.sum(self.residues[first] * np.sign(self.poles[first].imag))
