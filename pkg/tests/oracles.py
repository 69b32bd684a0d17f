"""Independent reference computations used only by the tests."""

import math

import numpy as np


def riemann_star(left, right, gamma=1.4):
    """Exact star-region pressure and velocity for the Euler Riemann problem.

    ``left`` and ``right`` are primitive (rho, u, p). Newton iteration on the
    pressure function of the two-rarefaction/shock waves.
    """
    rl, ul, pl = left
    rr, ur, pr = right
    cl = math.sqrt(gamma * pl / rl)
    cr = math.sqrt(gamma * pr / rr)

    def f(p, rho, pk, c):
        if p > pk:
            a = 2.0 / ((gamma + 1.0) * rho)
            b = (gamma - 1.0) / (gamma + 1.0) * pk
            q = math.sqrt(a / (p + b))
            return (p - pk) * q, q * (1.0 - 0.5 * (p - pk) / (b + p))
        e = (gamma - 1.0) / (2.0 * gamma)
        return 2.0 * c / (gamma - 1.0) * ((p / pk) ** e - 1.0), (p / pk) ** (-(gamma + 1.0) / (2.0 * gamma)) / (rho * c)

    p = 0.5 * (pl + pr)
    for _ in range(100):
        fl, dl = f(p, rl, pl, cl)
        fr, dr = f(p, rr, pr, cr)
        step = (fl + fr + ur - ul) / (dl + dr)
        p = max(p - step, 1e-12)
        if abs(step) < 1e-14 * p:
            break
    fl, _ = f(p, rl, pl, cl)
    fr, _ = f(p, rr, pr, cr)
    u = 0.5 * (ul + ur) + 0.5 * (fr - fl)
    return p, u


def shocked_density(p_star, rho, p, gamma=1.4):
    """Density behind a shock moving into state (rho, p)."""
    g = (gamma - 1.0) / (gamma + 1.0)
    return rho * (p_star / p + g) / (g * p_star / p + 1.0)


def legendre_l2_sq(k):
    return 2.0 / (2.0 * k + 1.0)


def total_variation(u):
    u = np.asarray(u)
    return float(np.abs(np.diff(np.concatenate([u, u[:1]]))).sum())
