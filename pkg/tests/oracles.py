"""Independent reference computations used by the tests.

Nothing here calls the package's flows, fields or quadrature: geodesics are
integrated as an ODE in (x, y, velocity angle), bumps are periodized over an
explicitly enumerated ball of group elements, and integrals use adaptive
Simpson. Only the Bolza generators are taken from the package (they are
checked separately).

Run ``python3 tests/oracles.py`` to recompute the frozen values below.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

# frozen outputs of this module (see __main__)
REFERENCE_BUMP_RADIUS = 0.7
ASYMMETRIC_STATE = (0.31 + 1.23j, 0.7)          # base point and velocity angle
ASYMMETRIC_L = -0.04829370004387561
IDENTITY_L = 0.0                                  # reflection symmetry of the octagon about the imaginary axis


def mobius(g, z):
    return (g[0, 0] * z + g[0, 1]) / (g[1, 0] * z + g[1, 1])


def cosh_dist(z, w):
    return 1 + abs(z - w) ** 2 / (2 * z.imag * w.imag)


def group_ball(gens, radius):
    """Distinct group elements g with d(g i, i) <= radius, by breadth-first search over words."""
    seen = {}
    frontier = [np.eye(2)]
    key = lambda g: (round(mobius(g, 1j).real, 9), round(mobius(g, 1j).imag, 9))
    seen[key(np.eye(2))] = np.eye(2)
    while frontier:
        nxt = []
        for g in frontier:
            for h in gens:
                m = g @ h
                p = mobius(m, 1j)
                if math.acosh(max(cosh_dist(p, 1j), 1.0)) > radius:
                    continue
                k = key(m)
                if k not in seen:
                    seen[k] = m
                    nxt.append(m)
        frontier = nxt
    return list(seen.values())


class PeriodicBump:
    """``sum_g psi(cosh d(z, g c))`` with its gradient, summed over an explicit ball of translates."""

    def __init__(self, gens, center=1j, r_max=REFERENCE_BUMP_RADIUS, reach=4.5):
        self.r_max = r_max
        self.umax = math.cosh(r_max)
        self.points = [mobius(g, center) for g in group_ball(gens, reach + math.acosh(cosh_dist(center, 1j)))]

    def _psi(self, u):
        s = (u - 1) / (self.umax - 1)
        if s >= 1:
            return 0.0, 0.0
        q = 1 - s * s
        v = math.exp(1 - 1 / q)
        return v, v * (-2 * s / (q * q)) / (self.umax - 1)

    def value_grad(self, z):
        x, y = z.real, z.imag
        val, gx, gy = 0.0, 0.0, 0.0
        for w in self.points:
            a, b = w.real, w.imag
            r2 = (x - a) ** 2 + (y - b) ** 2
            u = 1 + r2 / (2 * y * b)
            if u >= self.umax:
                continue
            p, dp = self._psi(u)
            val += p
            gx += dp * (x - a) / (y * b)
            gy += dp * ((y - b) / (y * b) - r2 / (2 * y * y * b))
        return val, gx, gy


def greedy_reduce(gens, z, phi):
    """Move ``z`` toward ``i`` by generators while that helps; the velocity angle turns by ``arg g'(z)``."""
    for _ in range(200):
        best, bz, bphi = cosh_dist(z, 1j), None, None
        for g in gens:
            w = mobius(g, z)
            c = cosh_dist(w, 1j)
            if c < best - 1e-12:
                deriv = 1 / (g[1, 0] * z + g[1, 1]) ** 2
                best, bz, bphi = c, w, phi + math.atan2(deriv.imag, deriv.real)
        if bz is None:
            return z, phi
        z, phi = bz, bphi
    raise RuntimeError("reduction did not terminate")


def geodesic_segments(gens, z, phi, t_max):
    """Dense geodesic solutions on unit intervals, reduced toward the center between intervals."""

    def rhs(_, u):
        x, y, a = u
        return [y * math.cos(a), y * math.sin(a), -math.cos(a)]

    segs = []
    for k in range(int(math.ceil(t_max))):
        sol = solve_ivp(rhs, (k, k + 1), [z.real, z.imag, phi], method="DOP853", rtol=1e-13, atol=1e-14,
                        dense_output=True)
        segs.append(sol.sol)
        x, y, a = sol.y[:, -1]
        z, phi = greedy_reduce(gens, complex(x, y), a)
    return segs


MIN_DEPTH = 8


def adaptive_simpson(f, a, b, tol, depth=0):
    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    return _simpson(f, a, b, fa, fm, fb, whole, tol, depth)


def _simpson(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6 * (fa + 4 * flm + fm)
    right = (b - m) / 6 * (fm + 4 * frm + fb)
    # a minimum depth keeps the rule from skipping a bump that no sample has hit yet
    if depth > 40 or (depth >= MIN_DEPTH and abs(left + right - whole) <= 15 * tol):
        return left + right + (left + right - whole) / 15
    return (_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth + 1)
            + _simpson(f, m, b, fm, frm, fb, right, tol / 2, depth + 1))


def admissibility_oracle(gens, z, phi, t_max=40.0, tol=1e-10, bump=None):
    """``(1/2) int_0^t_max e^{-t} g*(dW, xi_perp) dt`` for the periodized reference bump.

    With velocity angle ``phi`` the unit covector is ``e^{i phi}/y`` and the
    pairing with its quarter turn is ``y (W_x sin phi - W_y cos phi)``.
    """
    bump = bump or PeriodicBump(gens)
    z, phi = greedy_reduce(gens, z, phi)
    segs = geodesic_segments(gens, z, phi, t_max)

    def integrand(t):
        k = min(int(t), len(segs) - 1)
        x, y, a = segs[k](t)
        _, gx, gy = bump.value_grad(complex(x, y))
        return math.exp(-t) * y * (gx * math.sin(a) - gy * math.cos(a))

    total = 0.0
    for k in range(len(segs)):
        total += adaptive_simpson(integrand, k, min(k + 1, t_max), tol * math.exp(-k) / 2)
    return 0.5 * total


if __name__ == "__main__":
    from horoeq.surface import build_bolza

    gens = build_bolza().generators
    z, phi = ASYMMETRIC_STATE
    print("asymmetric", repr(admissibility_oracle(gens, z, phi)))
    print("identity", repr(admissibility_oracle(gens, 1j, math.pi / 2)))
