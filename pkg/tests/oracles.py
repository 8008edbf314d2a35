"""Reference values computed independently of the package code."""
import math

from scipy import integrate, stats


def clipped_normal_mean_var(mean, std, low, high):
    """Mean and variance of clip(N(mean, std^2), low, high) by numerical integration."""
    if std == 0:
        v = min(max(mean, low), high)
        return v, 0.0
    pdf = stats.norm(mean, std).pdf
    lo_mass = stats.norm.cdf(low, mean, std) if math.isfinite(low) else 0.0
    hi_mass = stats.norm.sf(high, mean, std) if math.isfinite(high) else 0.0
    a = low if math.isfinite(low) else mean - 12 * std
    b = high if math.isfinite(high) else mean + 12 * std
    m1 = integrate.quad(lambda x: x * pdf(x), a, b, epsabs=1e-13)[0]
    m2 = integrate.quad(lambda x: x * x * pdf(x), a, b, epsabs=1e-13)[0]
    lo_v = low if math.isfinite(low) else 0.0
    hi_v = high if math.isfinite(high) else 0.0
    e1 = m1 + lo_mass * lo_v + hi_mass * hi_v
    e2 = m2 + lo_mass * lo_v ** 2 + hi_mass * hi_v ** 2
    return e1, e2 - e1 * e1


def uniform_mean_var(a, b):
    return 0.5 * (a + b), (b - a) ** 2 / 12.0
