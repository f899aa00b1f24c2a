"""Regularised incomplete beta and gamma functions by continued fractions."""
import math

from ..errors import NumericError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise NumericError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x, y=None):
    """Regularised incomplete beta I_x(a, b).  ``y`` is 1 - x when the
    caller can form it without cancellation."""
    if a <= 0 or b <= 0:
        raise NumericError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise NumericError("betainc needs x in [0, 1]")
    y = 1.0 - x if y is None else y
    if x == 0.0 or y == 0.0:
        return 0.0 if x == 0.0 else 1.0
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log(y)
    bt = math.exp(lbt)
    # the fraction converges fast on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, y) / b


def _gamma_series(a, x):
    ap, total = a, 1.0 / a
    delta = total
    for _ in range(_MAX_ITER):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_cf(a, x):
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = b + an / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise NumericError(f"incomplete gamma fraction did not converge (a={a}, x={x})")


def gammainc(a, x):
    """Regularised lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise NumericError("gammainc needs a > 0 and x >= 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammaincc(a, x):
    """Regularised upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0 or x < 0:
        raise NumericError("gammaincc needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def t_sf2(t, df):
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    if df <= 0:
        raise NumericError("degrees of freedom must be positive")
    if not math.isfinite(t):
        return 0.0
    t2 = t * t
    return betainc(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2))


def chi2_sf(x, df):
    return gammaincc(0.5 * df, 0.5 * x)
