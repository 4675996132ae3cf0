"""Truncated Taylor-series ("jet") arithmetic.

A jet of order r stores coefficients c_0..c_r of a univariate expansion;
c_i is the i-th derivative divided by i!.  Propagating jets through a
computation yields all derivatives up to order r in one pass, with plain
O(r^2) coefficient recurrences (no symbolic expansion, no expression
swell).

Orders are capped at 64: beyond that the quadratic products dominate and
coefficient magnitudes routinely overflow anyway, so higher requests are
rejected loudly instead of silently losing precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DivisionByZeroConstantTerm, DomainError, OrderExceeded
from .ops import ElementaryFn

MAX_ORDER = 64


@dataclass(frozen=True)
class Jet:
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("a jet needs at least the constant coefficient")
        if len(self.coeffs) - 1 > MAX_ORDER:
            raise OrderExceeded(f"order {len(self.coeffs) - 1} exceeds cap {MAX_ORDER}")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self) -> float:
        return self.coeffs[0]

    def __repr__(self) -> str:
        return f"Jet({list(self.coeffs)!r})"


def _mk(coeffs) -> Jet:
    cs = tuple(float(c) for c in coeffs)
    for c in cs:
        if not math.isfinite(c):
            raise DomainError(f"non-finite jet coefficient {c!r}")
    return Jet(cs)


def jet_const(value: float, order: int) -> Jet:
    if order < 0:
        raise ValueError("order must be non-negative")
    return _mk((float(value),) + (0.0,) * order)


def jet_var(value: float, order: int) -> Jet:
    """Jet of the independent variable: [value, 1, 0, ..., 0]."""
    if order < 0:
        raise ValueError("order must be non-negative")
    if order == 0:
        return _mk((float(value),))
    return _mk((float(value), 1.0) + (0.0,) * (order - 1))


def _check_orders(a: Jet, b: Jet):
    if a.order != b.order:
        raise ValueError(f"jet order mismatch: {a.order} vs {b.order}")


def jet_add(a: Jet, b: Jet) -> Jet:
    _check_orders(a, b)
    return _mk(x + y for x, y in zip(a.coeffs, b.coeffs))


def jet_sub(a: Jet, b: Jet) -> Jet:
    _check_orders(a, b)
    return _mk(x - y for x, y in zip(a.coeffs, b.coeffs))


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Cauchy product truncated to the common order."""
    _check_orders(a, b)
    r = a.order
    ac, bc = a.coeffs, b.coeffs
    out = [0.0] * (r + 1)
    for k in range(r + 1):
        s = 0.0
        for j in range(k + 1):
            s += ac[j] * bc[k - j]
        out[k] = s
    return _mk(out)


def jet_div(a: Jet, b: Jet) -> Jet:
    _check_orders(a, b)
    if b.coeffs[0] == 0.0:
        raise DivisionByZeroConstantTerm("divisor has zero constant term")
    r = a.order
    ac, bc = a.coeffs, b.coeffs
    q = [0.0] * (r + 1)
    for k in range(r + 1):
        s = ac[k]
        for j in range(k):
            s -= q[j] * bc[k - j]
        q[k] = s / bc[0]
    return _mk(q)


_ARITH = {"add": jet_add, "sub": jet_sub, "mul": jet_mul, "div": jet_div}


def jet_arith(kind: str, a: Jet, b: Jet) -> Jet:
    try:
        op = _ARITH[kind]
    except KeyError:
        raise ValueError(f"unknown arithmetic kind {kind!r}") from None
    return op(a, b)


def jet_scale(c: float, a: Jet) -> Jet:
    return _mk(c * x for x in a.coeffs)


def _series_derivative(a: Jet) -> list[float]:
    # coefficients of a' as a series of order r-1
    return [k * a.coeffs[k] for k in range(1, a.order + 1)]


def _integrate_from(b0: float, dcoeffs: list[float]) -> Jet:
    # inverse of _series_derivative, fixing the constant term
    out = [b0] + [dcoeffs[k] / (k + 1) for k in range(len(dcoeffs))]
    return _mk(out)


def _jet_exp(a: Jet) -> Jet:
    r = a.order
    ac = a.coeffs
    e = [0.0] * (r + 1)
    e[0] = math.exp(ac[0])
    for k in range(1, r + 1):
        s = 0.0
        for j in range(1, k + 1):
            s += j * ac[j] * e[k - j]
        e[k] = s / k
    return _mk(e)


def _jet_log(a: Jet) -> Jet:
    if a.coeffs[0] <= 0.0:
        raise DomainError(f"log of jet with non-positive constant term {a.coeffs[0]!r}")
    r = a.order
    ac = a.coeffs
    b = [0.0] * (r + 1)
    b[0] = math.log(ac[0])
    for k in range(1, r + 1):
        s = k * ac[k]
        for j in range(1, k):
            s -= j * b[j] * ac[k - j]
        b[k] = s / (k * ac[0])
    return _mk(b)


def _jet_sin_cos(a: Jet) -> tuple[Jet, Jet]:
    # s' = a' cos(a), c' = -a' sin(a), run jointly
    r = a.order
    ac = a.coeffs
    s = [0.0] * (r + 1)
    c = [0.0] * (r + 1)
    s[0] = math.sin(ac[0])
    c[0] = math.cos(ac[0])
    for k in range(1, r + 1):
        ss = 0.0
        cc = 0.0
        for j in range(1, k + 1):
            ss += j * ac[j] * c[k - j]
            cc += j * ac[j] * s[k - j]
        s[k] = ss / k
        c[k] = -cc / k
    return _mk(s), _mk(c)


def _jet_atan(a: Jet) -> Jet:
    # b' = a' / (1 + a^2), integrated termwise
    r = a.order
    if r == 0:
        return _mk((math.atan(a.coeffs[0]),))
    one = jet_const(1.0, r)
    g = jet_add(one, jet_mul(a, a))
    da = _series_derivative(a)                      # order r-1
    gl = Jet(tuple(g.coeffs[:r]))                   # truncate to order r-1
    w = jet_div(Jet(tuple(da)), gl)
    return _integrate_from(math.atan(a.coeffs[0]), list(w.coeffs))


def _jet_sqrt(a: Jet) -> Jet:
    if a.coeffs[0] <= 0.0:
        raise DomainError(f"sqrt of jet with non-positive constant term {a.coeffs[0]!r}")
    r = a.order
    ac = a.coeffs
    b = [0.0] * (r + 1)
    b[0] = math.sqrt(ac[0])
    for k in range(1, r + 1):
        s = ac[k]
        for j in range(1, k):
            s -= b[j] * b[k - j]
        b[k] = s / (2.0 * b[0])
    return _mk(b)


def _jet_pow(a: Jet, p: float) -> Jet:
    if p == round(p) and p >= 0:
        # exact binary powering, no domain restriction on the base
        n = int(round(p))
        acc = jet_const(1.0, a.order)
        base = a
        while n:
            if n & 1:
                acc = jet_mul(acc, base)
            base = jet_mul(base, base) if n > 1 else base
            n >>= 1
        return acc
    if a.coeffs[0] == 0.0:
        raise DomainError("pow of jet with zero constant term and non-natural exponent")
    if a.coeffs[0] < 0.0 and p != round(p):
        raise DomainError("pow of jet with negative constant term and non-integer exponent")
    r = a.order
    ac = a.coeffs
    b = [0.0] * (r + 1)
    b[0] = ac[0] ** p
    for k in range(1, r + 1):
        s = 0.0
        for j in range(1, k + 1):
            s += ((p + 1.0) * j - k) * ac[j] * b[k - j]
        b[k] = s / (k * ac[0])
    return _mk(b)


def jet_apply(fn: ElementaryFn, a: Jet) -> Jet:
    """Compose an elementary function with a jet (coefficient recurrences)."""
    k = fn.kind
    if k == "exp":
        return _jet_exp(a)
    if k == "log":
        return _jet_log(a)
    if k == "sin":
        return _jet_sin_cos(a)[0]
    if k == "cos":
        return _jet_sin_cos(a)[1]
    if k == "tan":
        s, c = _jet_sin_cos(a)
        if c.coeffs[0] == 0.0:
            raise DomainError("tan at a pole")
        return jet_div(s, c)
    if k == "atan":
        return _jet_atan(a)
    if k == "sqrt":
        return _jet_sqrt(a)
    if k == "pow":
        return _jet_pow(a, fn.exponent)
    raise DomainError(f"{fn} has no analytic jet rule")


def jet_derivative(a: Jet, i: int) -> float:
    """Extract the i-th derivative, i! * c_i."""
    if i < 0 or i > a.order:
        raise OrderExceeded(f"derivative order {i} outside jet of order {a.order}")
    return math.factorial(i) * a.coeffs[i]
