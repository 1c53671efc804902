"""Smooth Gamma-invariant potentials and observables on the surface.

Every field is the periodization of a compactly supported function on the
plane (or its unit bundle). Evaluation first reduces the point into the
fundamental domain and then sums over the finitely many translates whose
support can reach the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .core import (
    CotangentState,
    DomainError,
    as_matrix,
    cosh_distance,
    matmul,
    mobius,
    sl2_inverse,
    frame_to_state,
    state_to_frame,
)
from . import _jit
from .surface import CENTER, ConfigurationError, FuchsianSurface, from_disk, to_disk


@dataclass(frozen=True)
class BumpProfile:
    """``psi(u) = exp(1 - 1/(1 - s^2))`` with ``s = (u - 1)/(cosh r_max - 1)``, zero for ``s >= 1``.

    ``u`` is the hyperbolic cosine of the distance to the bump center, so the
    bump is smooth at its center and flat to all orders at radius ``r_max``.
    """

    r_max: float

    @property
    def u_max(self) -> float:
        return math.cosh(self.r_max)

    def _s(self, u):
        return (np.asarray(u, dtype=float) - 1.0) / (self.u_max - 1.0)

    def value(self, u):
        s = self._s(u)
        inside = np.abs(s) < 1.0
        q = np.where(inside, 1.0 - s * s, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)

    def deriv(self, u):
        s = self._s(u)
        inside = np.abs(s) < 1.0
        q = np.where(inside, 1.0 - s * s, 1.0)
        val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        return val * (-2.0 * s / (q * q)) / (self.u_max - 1.0)

    def value_and_deriv(self, u):
        s = self._s(u)
        inside = np.abs(s) < 1.0
        q = np.where(inside, 1.0 - s * s, 1.0)
        val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        return val, val * (-2.0 * s / (q * q)) / (self.u_max - 1.0)

    def integral(self) -> float:
        """``int_1^{cosh r_max} psi(u) du``; the plane integral of the bump is ``2*pi`` times this."""
        return quad(lambda u: float(self.value(u)), 1.0, self.u_max, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


# Fields keep translates for points up to this far outside the fundamental
# domain, so callers stepping off the domain by less than this need not reduce.
REACH_MARGIN = 1.05


def _translates(surf: FuchsianSurface, anchors: np.ndarray, reach: float) -> tuple:
    """Group elements gamma and anchor indices with ``d(gamma(anchor), i) <= circumradius + reach``.

    ``anchors`` are points in the upper half-plane. Results are sorted by the
    distance of the moved anchor from the center.
    """
    anchors = np.atleast_1d(np.asarray(anchors, dtype=complex))
    limit = surf.circumradius + reach
    spread = float(np.max(np.arccosh(cosh_distance(anchors, CENTER))))
    ball = surf.translate_ball(limit + spread + 1e-9, cap=np.inf)
    mats, idx = [], []
    for k, p in enumerate(anchors):
        moved = mobius(ball, p)
        ok = cosh_distance(moved, CENTER) <= math.cosh(limit) * (1 + 1e-12)
        mats.extend(ball[ok])
        idx.extend([k] * int(ok.sum()))
    mats = np.array(mats).reshape(-1, 2, 2)
    idx = np.array(idx, dtype=int)
    dist = np.arccosh(np.maximum(cosh_distance(mobius(mats, anchors[idx]), CENTER), 1.0))
    order = np.argsort(dist, kind="stable")
    return mats[order], idx[order], dist[order]


def _reduce_points(surf: FuchsianSurface, z, reduced: bool):
    z = np.asarray(z, dtype=complex)
    if reduced:
        return z, None
    zr, _, gamma, _ = surf.reduce(z)
    return zr, gamma


def _pull_gradient(gamma, z, grad_reduced):
    """Gradient at ``z`` from the gradient at ``gamma(z)``: multiply by ``conj(gamma'(z))``."""
    if gamma is None:
        return grad_reduced
    w = gamma[..., 1, 0] * z + gamma[..., 1, 1]
    return grad_reduced / np.conj(w) ** 2


class Potential:
    """Sum of radial bumps ``amplitude * psi(cosh d(z, center))``, periodized.

    ``centers`` are upper half-plane points; they are reduced into the
    fundamental domain on construction.
    """

    def __init__(self, surf: FuchsianSurface, centers: Sequence[complex], amplitudes: Sequence[float],
                 r_max: float = 0.7, profile: Optional[BumpProfile] = None):
        if r_max >= surf.injectivity_radius:
            raise ConfigurationError(f"r_max={r_max} must be below the injectivity radius "
                                     f"{surf.injectivity_radius:.6f}")
        centers = np.atleast_1d(np.asarray(centers, dtype=complex))
        amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        if centers.shape != amplitudes.shape:
            raise ConfigurationError("centers and amplitudes differ in length")
        self.surface = surf
        self.r_max = float(r_max)
        self.profile = profile or BumpProfile(r_max)
        self.centers, _, _, _ = surf.reduce(centers)
        self.amplitudes = amplitudes
        mats, idx, dist = _translates(surf, self.centers, self.r_max + REACH_MARGIN)
        self._points = mobius(mats, self.centers[idx])
        self._amps = self.amplitudes[idx]
        self._dist = dist

    @property
    def sup_bound(self) -> float:
        return float(np.sum(np.abs(self.amplitudes)))

    def _evaluate(self, z):
        flat = np.ascontiguousarray(np.asarray(z, dtype=complex).reshape(-1))
        vals, grads = _jit.bump_values(flat, self._points, self._dist, np.zeros(self._points.size, dtype=np.int64),
                                       self._amps, self.r_max, self.profile.u_max, 1)
        return vals[:, 0].reshape(np.shape(z)), grads[:, 0].reshape(np.shape(z))

    def value(self, z, *, reduced: bool = False, reach: float = 0.0):
        """``reduced=True`` promises ``z`` lies within ``REACH_MARGIN`` of the fundamental domain."""
        zr, _ = _reduce_points(self.surface, z, reduced)
        return self._evaluate(zr)[0]

    def value_and_grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        """Value and complex-encoded differential ``dV/dx + 1j*dV/dy``."""
        z = np.asarray(z, dtype=complex)
        zr, gamma = _reduce_points(self.surface, z, reduced)
        val, grad = self._evaluate(zr)
        return val, _pull_gradient(gamma, z, grad)

    def grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.value_and_grad(z, reduced=reduced, reach=reach)[1]

    def describe(self) -> dict:
        return {"kind": "radial", "centers_disk": [[float(w.real), float(w.imag)] for w in to_disk(self.centers)],
                "amplitudes": self.amplitudes.tolist(), "r_max": self.r_max}


class ConstantPotential:
    """``V(z) = value`` everywhere; its differential vanishes."""

    def __init__(self, surf: FuchsianSurface, value: float = 0.0):
        self.surface = surf
        self.constant = float(value)

    @property
    def sup_bound(self) -> float:
        return abs(self.constant)

    def value_and_grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        shape = np.shape(z)
        return np.full(shape, self.constant), np.zeros(shape, dtype=complex)

    def value(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.value_and_grad(z)[0]

    def grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.value_and_grad(z)[1]

    def describe(self) -> dict:
        return {"kind": "constant", "value": self.constant}


def _smooth_step_bump(x):
    """``exp(1 - 1/(1 - x^2))`` on ``|x| < 1``; value 1 and zero slope at 0."""
    inside = np.abs(x) < 1.0
    q = np.where(inside, 1.0 - x * x, 1.0)
    val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    return val, val * (-2.0 * x / (q * q))


class GeodesicPatchPotential:
    """``chi_1(t) chi_2(tau)`` in the coordinates ``x = pi(H_u^tau G^t rho0)``, periodized.

    ``chi_1`` is a nonnegative bump on ``(t_lo, t_hi)`` normalized so that
    ``int chi_1(t) e^{-t} dt = 2``; ``chi_2(tau) = tau * bump(tau/delta)`` has
    unit slope at 0. The adapted coordinates are explicit: for ``w = f^{-1}(z)``
    with ``f`` the frame of ``rho0``, ``tau = Re w / Im w`` and
    ``e^t = |w|^2 / Im w``.
    """

    def __init__(self, surf: FuchsianSurface, rho0: CotangentState, *, t_range=(-0.5, 1.0),
                 delta: float = 0.2):
        self.surface = surf
        self.t_lo, self.t_hi = map(float, t_range)
        self.delta = float(delta)
        frame = state_to_frame(rho0)
        frames_z = mobius(frame, CENTER)
        self.frame = frame
        self.anchor = complex(frames_z)
        radius = self.patch_radius()
        if radius >= surf.injectivity_radius:
            raise ConfigurationError(
                f"patch of radius {radius:.4f} is not embedded (injectivity radius "
                f"{surf.injectivity_radius:.4f})")
        mid = 0.5 * (self.t_lo + self.t_hi)
        x, w = np.polynomial.legendre.leggauss(64)
        half = 0.5 * (self.t_hi - self.t_lo)
        ts = half * x + mid
        c1, _ = _smooth_step_bump((ts - mid) / half)
        self.chi1_scale = 2.0 / (half * np.sum(w * c1 * np.exp(-ts)))
        center_frame = matmul(frame, np.array([[math.exp(mid / 2), 0], [0, math.exp(-mid / 2)]]))
        mats, _, _ = _translates(surf, np.array([complex(mobius(center_frame, CENTER))]),
                                 radius + REACH_MARGIN)
        # frames of all translates of the patch that can meet the fundamental domain
        self._inv_frames = sl2_inverse(matmul(mats, np.broadcast_to(frame, mats.shape)))

    def patch_radius(self) -> float:
        """Distance from the patch mid-point to its farthest corner (base points)."""
        mid = 0.5 * (self.t_lo + self.t_hi)
        c = complex(np.exp(mid) * 1j)
        corners = []
        for t in (self.t_lo, self.t_hi):
            for tau in (-self.delta, self.delta):
                corners.append(np.exp(t) * (tau + 1j) / (1 + tau * tau))
        return float(np.max(np.arccosh(cosh_distance(np.array(corners), c))))

    def chi1(self, t):
        mid = 0.5 * (self.t_lo + self.t_hi)
        half = 0.5 * (self.t_hi - self.t_lo)
        v, d = _smooth_step_bump((np.asarray(t) - mid) / half)
        return self.chi1_scale * v, self.chi1_scale * d / half

    def chi2(self, tau):
        b, db = _smooth_step_bump(np.asarray(tau) / self.delta)
        return tau * b, b + tau * db / self.delta

    @property
    def sup_bound(self) -> float:
        return float(self.chi1_scale * self.delta)

    def value_and_grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        z = np.asarray(z, dtype=complex)
        zr, gamma = _reduce_points(self.surface, z, reduced)
        m = self._inv_frames
        zz = zr[..., None]
        den = m[:, 1, 0] * zz + m[:, 1, 1]
        w = (m[:, 0, 0] * zz + m[:, 0, 1]) / den
        u, v = w.real, w.imag
        r2 = u * u + v * v
        t = np.log(r2 / v)
        tau = u / v
        c1, dc1 = self.chi1(t)
        c2, dc2 = self.chi2(tau)
        val = c1 * c2
        dt_du, dt_dv = 2 * u / r2, 2 * v / r2 - 1 / v
        dtau_du, dtau_dv = 1 / v, -u / (v * v)
        gw = (dc1 * c2 * dt_du + c1 * dc2 * dtau_du) + 1j * (dc1 * c2 * dt_dv + c1 * dc2 * dtau_dv)
        # w is holomorphic in z with dw/dz = 1/den^2
        gz = gw / np.conj(den) ** 2
        return val.sum(axis=-1), _pull_gradient(gamma, z, gz.sum(axis=-1))

    def value(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.value_and_grad(z, reduced=reduced)[0]

    def grad(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.value_and_grad(z, reduced=reduced)[1]

    def describe(self) -> dict:
        return {"kind": "geodesic_patch", "anchor": [self.anchor.real, self.anchor.imag],
                "t_range": [self.t_lo, self.t_hi], "delta": self.delta}


class PerturbationFamily:
    """Potentials ``V_0, ..., V_J`` on a common surface."""

    def __init__(self, potentials: Sequence):
        if not potentials:
            raise ConfigurationError("a family needs at least one potential")
        surf = potentials[0].surface
        if any(p.surface is not surf for p in potentials):
            raise ConfigurationError("all potentials must share one surface")
        self.surface = surf
        self.potentials = list(potentials)
        self._packed = None

    @property
    def J(self) -> int:
        return len(self.potentials) - 1

    @property
    def size(self) -> int:
        return len(self.potentials)

    def values_and_grads(self, z, *, reduced: bool = False, reach: float = 0.0):
        """Arrays of shape ``(J+1, ...)``."""
        if not reduced:
            z = np.asarray(z, dtype=complex)
            zr, gamma = _reduce_points(self.surface, z, False)
            vs, gs = self.values_and_grads(zr, reduced=True)
            return vs, _pull_gradient(gamma, z, gs)
        packed = self.packed()
        if packed is not None:
            pts, dist, idx, amps, r_max = packed
            z = np.asarray(z, dtype=complex)
            vals, grads = _jit.bump_values(np.ascontiguousarray(z.reshape(-1)), pts, dist, idx, amps, r_max,
                                           math.cosh(r_max), self.size)
            return vals.T.reshape((self.size,) + z.shape), grads.T.reshape((self.size,) + z.shape)
        vs, gs = zip(*(p.value_and_grad(z, reduced=True, reach=reach) for p in self.potentials))
        return np.stack(vs), np.stack(gs)

    def values(self, z, *, reduced: bool = False, reach: float = 0.0):
        return self.values_and_grads(z, reduced=reduced, reach=reach)[0]

    def value(self, eps, z, *, reduced: bool = False, reach: float = 0.0):
        vs = self.values(z, reduced=reduced, reach=reach)
        return np.einsum("j...,...j->...", vs, _eps_array(eps, vs.shape[1:], self.size))

    def value_and_grad(self, eps, z, *, reduced: bool = False, reach: float = 0.0):
        vs, gs = self.values_and_grads(z, reduced=reduced, reach=reach)
        e = _eps_array(eps, vs.shape[1:], self.size)
        return np.einsum("j...,...j->...", vs, e), np.einsum("j...,...j->...", gs, e)

    def sup_bound(self, eps) -> float:
        return float(np.sum(np.abs(eps) * np.array([p.sup_bound for p in self.potentials])))

    def packed(self):
        """Translated centers of all potentials merged and sorted by distance from the center.

        Returns ``(points, distances, potential_index, amplitudes, r_max)``, or
        ``None`` unless every potential is a radial-bump sum with a common radius.
        """
        if self._packed is not None or not all(type(p) is Potential for p in self.potentials):
            return self._packed
        radii = {p.r_max for p in self.potentials}
        if len(radii) != 1:
            return None
        pts = np.concatenate([p._points for p in self.potentials])
        dist = np.concatenate([p._dist for p in self.potentials])
        idx = np.concatenate([np.full(p._points.size, j, dtype=np.int64) for j, p in enumerate(self.potentials)])
        amps = np.concatenate([p._amps for p in self.potentials])
        order = np.argsort(dist, kind="stable")
        self._packed = (pts[order], dist[order], idx[order], amps[order], radii.pop())
        return self._packed

    def describe(self) -> list:
        return [p.describe() for p in self.potentials]


def _eps_array(eps, shape, size):
    e = np.asarray(eps, dtype=float)
    if e.shape[-1] != size:
        raise ConfigurationError(f"eps has {e.shape[-1]} entries, family has {size}")
    return np.broadcast_to(e, tuple(shape) + (size,))


# ---------------------------------------------------------------------------
# Observables on the unit bundle
# ---------------------------------------------------------------------------

class Observable:
    """Periodized ``a_0(z, xi) = psi(cosh d(z, c)) * F(theta)`` summed over centers.

    ``theta`` is the covector angle read in the frame ``[[sqrt y, x/sqrt y], [0, 1/sqrt y]]``
    carrying ``i`` to the center, with ``theta = 0`` pointing up; ``F`` is the
    trigonometric polynomial ``c0 + sum_k (cos_k cos(k theta) + sin_k sin(k theta))``.
    Constant observables are obtained with ``constant`` and no centers.
    """

    def __init__(self, surf: FuchsianSurface, centers: Sequence[complex] = (), amplitudes: Sequence[float] = (),
                 r_max: float = 0.7, c0: float = 1.0, cos_coeffs: Sequence[float] = (),
                 sin_coeffs: Sequence[float] = (), constant: float = 0.0, name: str = "observable"):
        if r_max >= surf.injectivity_radius:
            raise ConfigurationError("observable r_max must be below the injectivity radius")
        if max(len(cos_coeffs), len(sin_coeffs)) > 4:
            raise ConfigurationError("fiber order is limited to 4")
        self.surface = surf
        self.name = name
        self.r_max = float(r_max)
        self.profile = BumpProfile(r_max)
        self.constant = float(constant)
        self.c0 = float(c0)
        self.cos_coeffs = np.array(cos_coeffs, dtype=float)
        self.sin_coeffs = np.array(sin_coeffs, dtype=float)
        centers = np.atleast_1d(np.asarray(centers, dtype=complex))
        self.amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        if centers.size:
            self.centers, _, _, _ = surf.reduce(centers)
            mats, idx, dist = _translates(surf, self.centers, self.r_max + REACH_MARGIN)
            x, y = self.centers.real, self.centers.imag
            base = np.zeros((centers.size, 2, 2))
            base[:, 0, 0] = np.sqrt(y)
            base[:, 0, 1] = x / np.sqrt(y)
            base[:, 1, 1] = 1 / np.sqrt(y)
            self._inv = sl2_inverse(matmul(mats, base[idx]))
            self._anchors = mobius(mats, self.centers[idx])
            self._amps = self.amplitudes[idx]
            self._dist = dist
        else:
            self.centers = centers
            self._inv = np.zeros((0, 2, 2))
            self._anchors = np.zeros(0, dtype=complex)
            self._amps = np.zeros(0)
            self._dist = np.zeros(0)

    def fiber(self, theta):
        out = self.c0 * np.ones_like(theta)
        for k, c in enumerate(self.cos_coeffs, start=1):
            out = out + c * np.cos(k * theta)
        for k, s in enumerate(self.sin_coeffs, start=1):
            out = out + s * np.sin(k * theta)
        return out

    def __call__(self, s: CotangentState, *, reduced: bool = False, reach: float = 0.0):
        """Value at states; depends on the covector direction only.

        ``reduced=True`` promises the base points lie within ``reach`` of the
        fundamental domain.
        """
        z = np.asarray(s.z, dtype=complex)
        xi = np.asarray(s.xi, dtype=complex)
        if not reduced:
            z, xi, _, _ = self.surface.reduce(z, xi, track=False)
        shape = z.shape
        out = _jit.observable_values(np.ascontiguousarray(z.reshape(-1)), np.ascontiguousarray(xi.reshape(-1)),
                                     *self.kernel_args())
        return out.reshape(shape)

    def kernel_args(self) -> tuple:
        """Arrays describing the observable for the compiled evaluators."""
        return (self._anchors, self._inv, self._dist, self._amps, self.r_max, math.cosh(self.r_max), self.c0,
                self.cos_coeffs, self.sin_coeffs, self.constant)

    def on_frames(self, frames: np.ndarray, *, reduced: bool = False, reach: float = 0.0):
        frames = np.asarray(frames, dtype=float)
        if not reduced:
            frames, _ = self.surface.reduce_frames(frames)
        shape = frames.shape[:-2]
        out = _jit.observable_on_frames(np.ascontiguousarray(frames.reshape(-1, 2, 2)), *self.kernel_args())
        return out.reshape(shape)

    def liouville_exact(self) -> float:
        """Exact mean against the normalized Liouville measure."""
        bump = 2 * math.pi * self.profile.integral()
        return self.constant + self.c0 * float(np.sum(self.amplitudes)) * bump / self.surface.area

    def oscillation(self) -> float:
        """``sup - inf`` of the observable (exact for bumps with disjoint supports)."""
        if not self.amplitudes.size:
            return 0.0
        theta = np.linspace(0, 2 * np.pi, 4097)
        f = self.fiber(theta)
        hi = max(0.0, float(np.max(np.outer(self.amplitudes, f))))
        lo = min(0.0, float(np.min(np.outer(self.amplitudes, f))))
        return hi - lo

    def describe(self) -> dict:
        return {"name": self.name, "centers_disk": [[float(w.real), float(w.imag)] for w in to_disk(self.centers)],
                "amplitudes": self.amplitudes.tolist(), "r_max": self.r_max, "c0": self.c0,
                "cos": self.cos_coeffs.tolist(), "sin": self.sin_coeffs.tolist(), "constant": self.constant}


def constant_observable(surf: FuchsianSurface, value: float = 1.0) -> Observable:
    return Observable(surf, constant=value, name="constant")


def default_observable(surf: FuchsianSurface) -> Observable:
    """Bumps at the domain center and at the (single) vertex point with a fiber mixing orders 1 and 2."""
    vertex = from_disk(math.tanh(surf.circumradius / 2) * np.exp(1j * surf.kink_angles()[0]))
    return Observable(surf, [CENTER, vertex], [1.0, -0.7], r_max=1.2, c0=1.0, cos_coeffs=[0.5],
                      sin_coeffs=[0.0, 0.25], name="bump")


def reference_observables(surf: FuchsianSurface) -> list:
    """The default observable, an odd-fiber one (zero mean by symmetry) and a two-center one."""
    odd = Observable(surf, [CENTER], [1.0], r_max=1.2, c0=0.0, cos_coeffs=[1.0], name="odd_fiber")
    two = Observable(surf, [from_disk(0.4 + 0.2j), from_disk(-0.3 - 0.5j)], [1.0, -0.6], r_max=0.9, c0=1.0,
                     cos_coeffs=[0.0, 0.3], name="two_center")
    return [default_observable(surf), odd, two]


# ---------------------------------------------------------------------------
# Family construction
# ---------------------------------------------------------------------------

# Default family: bumps on rings around the domain center, given as
# (hyperbolic distance from the center, angle in degrees, amplitude).
# Amplitudes come from a max-min search of the admissibility functional
# over a linear basis of r_max = 1.45 bumps.
_DEFAULT_BUMPS = (
    ((0.0, 0, 0.2), (0.5, 0, 0.0473), (0.5, 45, 0.2907), (0.5, 90, 0.0974), (0.5, 135, 0.0776),
     (0.5, 270, 0.0057), (1.0, 22.5, 0.0399), (1.0, 67.5, 0.1409), (1.0, 157.5, 0.0044), (1.0, 247.5, -0.1597),
     (1.5, 90, -0.1691), (1.5, 112.5, -0.1998), (1.5, 180, 0.005), (1.5, 247.5, -0.4576), (1.5, 270, -0.0487),
     (1.5, 292.5, 0.0533)),
    ((0.0, 0, 0.0434), (0.5, 0, 0.0518), (0.5, 45, -0.025), (0.5, 90, 0.0634), (0.5, 180, 0.3104),
     (0.5, 225, 0.3818), (0.5, 270, 0.2349), (0.5, 315, 0.0618), (1.0, 67.5, -0.0243), (1.0, 202.5, 0.0027),
     (1.0, 247.5, 0.223), (1.0, 292.5, 0.0584), (1.0, 337.5, 0.1889), (1.5, 22.5, -0.0773), (1.5, 67.5, -0.1943),
     (1.5, 90, 0.0285), (1.5, 270, 0.0294)),
    ((0.0, 0, 0.1512), (0.5, 0, 0.0798), (0.5, 45, 0.0936), (0.5, 90, 0.0165), (0.5, 315, 0.0024),
     (1.0, 67.5, 0.1403), (1.0, 112.5, 0.1006), (1.0, 202.5, 0.0145), (1.0, 292.5, -0.0124), (1.0, 337.5, -0.0384),
     (1.5, 0, -0.2162), (1.5, 22.5, -0.0196), (1.5, 45, 0.1025), (1.5, 67.5, 0.0461), (1.5, 90, 0.0123),
     (1.5, 112.5, 0.0037), (1.5, 135, -0.199), (1.5, 157.5, -0.0494), (1.5, 180, -0.2354), (1.5, 202.5, 0.1085),
     (1.5, 225, 0.1746), (1.5, 270, 0.0489), (1.5, 292.5, -0.0186), (1.5, 315, -0.1138)),
)
DEFAULT_FAMILY_RADIUS = 1.45


def polar_disk_point(distance: float, degrees: float) -> complex:
    """Disk-model point at hyperbolic ``distance`` from the origin in direction ``degrees``."""
    return math.tanh(distance / 2) * complex(math.cos(math.radians(degrees)), math.sin(math.radians(degrees)))


@dataclass
class FamilySpec:
    """Radial-bump family: for each potential a list of ``[x, y, amplitude]`` with ``x + iy`` in the disk."""

    potentials: list
    r_max: float = DEFAULT_FAMILY_RADIUS

    def __post_init__(self):
        for j, bumps in enumerate(self.potentials):
            for b in bumps:
                if len(b) != 3:
                    raise ConfigurationError(f"potentials[{j}]: each bump needs [x, y, amplitude]")
                if abs(complex(b[0], b[1])) >= 1:
                    raise ConfigurationError(f"potentials[{j}]: center {b[:2]} is outside the unit disk")

    def principal_centers(self) -> list:
        """Disk center of the largest-amplitude bump of each potential."""
        out = []
        for bumps in self.potentials:
            x, y, _ = max(bumps, key=lambda b: abs(b[2]))
            out.append(complex(x, y))
        return out

    def to_dict(self) -> dict:
        return {"r_max": self.r_max, "potentials": [[list(map(float, b)) for b in bumps] for bumps in self.potentials]}

    @classmethod
    def from_dict(cls, d: dict) -> "FamilySpec":
        if "potentials" not in d:
            raise ConfigurationError("family: missing 'potentials'")
        return cls([[list(b) for b in bumps] for bumps in d["potentials"]], float(d.get("r_max", DEFAULT_FAMILY_RADIUS)))


def build_admissible_family(surf: FuchsianSurface, spec: Optional[FamilySpec] = None) -> PerturbationFamily:
    """Potentials from ``spec`` (default: :func:`default_family_spec`).

    Admissibility is not asserted; certify with ``functionals.admissibility_check``.
    """
    spec = spec or default_family_spec()
    if spec.r_max >= surf.injectivity_radius:
        raise ConfigurationError(f"r_max={spec.r_max} must be below the injectivity radius")
    if not spec.potentials or any(not bumps for bumps in spec.potentials):
        raise ConfigurationError("every potential needs at least one bump")
    pots = []
    for bumps in spec.potentials:
        centers = [from_disk(complex(x, y)) for x, y, _ in bumps]
        pots.append(Potential(surf, centers, [a for _, _, a in bumps], spec.r_max))
    return PerturbationFamily(pots)


def default_family_spec() -> FamilySpec:
    pots = []
    for bumps in _DEFAULT_BUMPS:
        rows = []
        for dist, deg, amp in bumps:
            w = polar_disk_point(dist, deg)
            rows.append([w.real, w.imag, amp])
        pots.append(rows)
    return FamilySpec(pots)


def build_bump_along_geodesic(surf: FuchsianSurface, rho0: CotangentState, *, delta: float = 0.2,
                              t_range=(-0.5, 1.0)) -> GeodesicPatchPotential:
    return GeodesicPatchPotential(surf, rho0.normalized(), t_range=t_range, delta=delta)
