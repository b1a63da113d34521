"""Independent reference computations used as test oracles.

Nothing here imports the package's numeric code.
"""

import math


def loss_reference(mu, sigma, target, alpha=1.0, beta=1.0, delta=1.5, r=1.0, s=1.5, d=2.0, m=115.0, c=1e-3):
    """Plain-Python evaluation of the three loss terms and their weighted sum."""
    n = len(mu)
    reg = std = dist = 0.0
    for yu, ys, yt in zip(mu, sigma, target):
        ad = (1.0 - yt / m) ** 2
        reg += abs(yu - yt) * ad**r
        std += ys * ad**s
        dist += ((yu - yt) / (ys + c)) ** 2 * ad**d
    reg, std, dist = reg / n, std / n, dist / n
    return reg, std, dist, alpha * reg + beta * std + delta * dist


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at list ``x`` by central differences."""
    g = []
    for i in range(len(x)):
        xp = list(x)
        xm = list(x)
        xp[i] += h
        xm[i] -= h
        g.append((f(xp) - f(xm)) / (2 * h))
    return g


def composite_simpson(f, a, b, intervals):
    if intervals % 2:
        raise ValueError("Simpson's rule needs an even interval count")
    h = (b - a) / intervals
    total = f(a) + f(b)
    for i in range(1, intervals):
        total += (4 if i % 2 else 2) * f(a + i * h)
    return total * h / 3


def normal_pdf(x, mu, sd):
    return math.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
