"""Small exact polynomial helpers (power basis, Fraction-friendly coefficients).

A polynomial is a sequence ``(c_0, c_1, ..., c_k)`` representing
``c_0 + c_1 x + ... + c_k x^k``.  Coefficients may be ints, Fractions or
floats; operations preserve exactness when the inputs are exact.
"""

from __future__ import annotations

from fractions import Fraction
from math import comb, factorial
from typing import Sequence

Poly = tuple


def trim(coeffs: Sequence) -> Poly:
    c = list(coeffs)
    while len(c) > 1 and c[-1] == 0:
        c.pop()
    return tuple(c)


def add(a: Sequence, b: Sequence) -> Poly:
    n = max(len(a), len(b))
    return trim(tuple((a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n)))


def scale(a: Sequence, factor) -> Poly:
    return trim(tuple(factor * c for c in a))


def mul(a: Sequence, b: Sequence) -> Poly:
    out = [0] * (len(a) + len(b) - 1)
    for i, ca in enumerate(a):
        if ca == 0:
            continue
        for j, cb in enumerate(b):
            out[i + j] += ca * cb
    return trim(tuple(out))


def evaluate(coeffs: Sequence, x):
    acc = 0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def is_zero(coeffs: Sequence, tol=0) -> bool:
    return all(abs(c) <= tol for c in coeffs)


def binomial_coefficient_poly(length: int) -> Poly:
    """Coefficients of x -> C(x, length) as an exact polynomial.

    C(x, 0) = 1; C(x, L) = x(x-1)...(x-L+1)/L!.
    """
    if length < 0:
        raise ValueError("length must be nonnegative")
    out: Poly = (Fraction(1),)
    for i in range(length):
        out = mul(out, (Fraction(-i), Fraction(1)))
    return scale(out, Fraction(1, factorial(length)))


def bernstein_to_power(weight, r: int, d: int) -> Poly:
    """Expand weight * x^(r-1) (1-x)^(d-r) into power-basis coefficients."""
    out = [0] * d
    for k in range(d - r + 1):
        out[r - 1 + k] += weight * comb(d - r, k) * (-1) ** k
    return trim(tuple(out))
