"""Exponentially weighted averages along geodesics.

All integrals here have the form ``int_0^inf b(G^{+-t} rho) w(t) dt`` with
``w(t) = e^{-t}/2`` in curvature -1. They are evaluated by composite
Gauss-Legendre panels of unit length, refined by interval halving until a
panel's two-level difference is below tolerance, and truncated at ``T_max``
with an explicit tail bound.

Frames at panel starts are advanced one panel at a time and reduced into the
fundamental domain, so matrix entries stay bounded for any horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    CotangentState,
    CurvatureConstants,
    as_matrix,
    cometric_pairing,
    frame_to_state,
    geodesic_matrix,
    horocycle_flow,
    matmul,
    state_to_frame,
)
from . import _jit
from .fields import PerturbationFamily
from .surface import FuchsianSurface

CURVATURE = CurvatureConstants()


class PrecisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    T_max: float = 40.0
    nodes: int = 8
    panel: float = 1.0
    tol: float = 1e-11
    max_depth: int = 12
    strict: bool = True


@dataclass
class Estimate:
    value: np.ndarray
    error: np.ndarray

    def __float__(self):
        return float(self.value)


@lru_cache(maxsize=None)
def _gl(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _segment(frames: np.ndarray, start: float, length: float, fn, sign: int, q: QuadratureConfig,
             tol: float, depth: int):
    """Integral of ``fn(frame) * e^{-t}`` over ``[start, start+length]``.

    ``frames`` are the frames at time ``start`` relative to their panel origin
    offset ``0``; evaluation frames are ``frames @ a(sign * s)``.
    Returns (value, error, sup|fn|).
    """
    x, w = _gl(q.nodes)
    offs = np.concatenate([x * length, x * length / 2, (x + 1) * length / 2])
    mats = geodesic_matrix(sign * offs)
    at = np.matmul(frames[:, None], mats[None])
    vals = fn(at)
    weights_t = np.exp(-(start + offs))
    n = q.nodes
    coarse = length * np.sum(vals[:, :n] * (w * weights_t[:n]), axis=1)
    fine = 0.5 * length * (np.sum(vals[:, n:2 * n] * (w * weights_t[n:2 * n]), axis=1)
                           + np.sum(vals[:, 2 * n:] * (w * weights_t[2 * n:]), axis=1))
    err = np.abs(fine - coarse)
    sup = np.max(np.abs(vals), axis=1)
    bad = err > tol
    if np.any(bad) and depth < q.max_depth:
        idx = np.nonzero(bad)[0]
        sub = frames[idx]
        half = length / 2
        v1, e1, s1 = _segment(sub, start, half, fn, sign, q, tol / 2, depth + 1)
        mid_frames = matmul(sub, geodesic_matrix(sign * half))
        v2, e2, s2 = _segment(mid_frames, start + half, half, fn, sign, q, tol / 2, depth + 1)
        fine[idx] = v1 + v2
        err[idx] = e1 + e2
        sup[idx] = np.maximum(sup[idx], np.maximum(s1, s2))
    return fine, err, sup


def weighted_orbit_integral(surf: FuchsianSurface, frames, fn: Callable, q: QuadratureConfig = QuadratureConfig(),
                            direction: int = 1) -> Estimate:
    """``int_0^{T_max} fn(G^{direction * t} f) e^{-t} dt`` with error estimate including the tail.

    ``fn`` receives frames of shape ``(N, m, 2, 2)`` whose base points lie
    within one panel of the fundamental domain and returns ``(N, m)`` values.
    """
    f = np.asarray(as_matrix(frames), dtype=float)
    single = f.ndim == 2
    f = f.reshape(-1, 2, 2)
    f, _ = surf.reduce_frames(f)
    n_panels = int(math.ceil(q.T_max / q.panel))
    total = np.zeros(len(f))
    err = np.zeros(len(f))
    sup = np.zeros(len(f))
    step = geodesic_matrix(direction * q.panel)
    for k in range(n_panels):
        t0 = k * q.panel
        length = min(q.panel, q.T_max - t0)
        # half the budget decays with the weight, half is spread evenly so late panels are not over-resolved
        tol = 0.5 * q.tol * ((1 - math.exp(-q.panel)) * math.exp(-t0) + 1 / n_panels)
        v, e, s = _segment(f, t0, length, fn, direction, q, tol, 0)
        total += v
        err += e
        sup = np.maximum(sup, s)
        if k + 1 < n_panels:
            f, _ = surf.reduce_frames(matmul(f, step))
    err = err + sup * math.exp(-q.T_max)
    if single:
        return Estimate(total[0], err[0])
    return Estimate(total, err)


def _unstable_pairing(potential, reach: float):
    """``fn(frames) = g*(dW, xi_perp)`` for states given by frames."""

    def fn(frames):
        st = frame_to_state(frames)
        _, grad = potential.value_and_grad(st.z, reduced=True, reach=reach)
        return cometric_pairing(st.z, grad, -1j * st.xi)

    return fn


def _check(est: Estimate, q: QuadratureConfig) -> Estimate:
    if q.strict and np.any(est.error > max(q.tol, 1e-15) * 10):
        raise PrecisionError(f"quadrature error estimate {np.max(est.error):.3e} exceeds tolerance {q.tol:.1e}")
    return est


def admissibility_L(surf: FuchsianSurface, rho0, W, q: QuadratureConfig = QuadratureConfig()) -> Estimate:
    """``(1/2) int_0^inf g*(dW, xi_perp) e^{-t} dt`` along the geodesic through the unit state ``rho0``.

    ``rho0`` may be a CotangentState (unit covector) or an array of frames.
    """
    frames = state_to_frame(rho0) if isinstance(rho0, CotangentState) else rho0
    est = weighted_orbit_integral(surf, frames, _unstable_pairing(W, q.panel), q)
    return _check(Estimate(0.5 * est.value, 0.5 * est.error), q)


def averaging_Lu(surf: FuchsianSurface, b: Callable, rho, q: QuadratureConfig = QuadratureConfig()) -> Estimate:
    """``int_0^inf (b/2)(G^t rho) e^{-t} dt``; ``b`` maps states (with base points near the domain) to values."""
    return _averaging(surf, b, rho, q, +1)


def averaging_Ls(surf: FuchsianSurface, b: Callable, rho, q: QuadratureConfig = QuadratureConfig()) -> Estimate:
    """``int_0^inf (b/2)(G^{-t} rho) e^{-t} dt``."""
    return _averaging(surf, b, rho, q, -1)


def _averaging(surf, b, rho, q, direction):
    frames = state_to_frame(rho) if isinstance(rho, CotangentState) else rho
    est = weighted_orbit_integral(surf, frames, lambda f: b(frame_to_state(f)), q, direction)
    return _check(Estimate(0.5 * est.value, 0.5 * est.error), q)


def unstable_component(W, xi0_norm: float = 1.0, reach: float = 1.05) -> Callable:
    """``b(x, xi) = g*(dW, xi_perp) / |xi_0|`` as a function of unit states."""

    def b(st: CotangentState):
        _, grad = W.value_and_grad(st.z, reduced=True, reach=reach)
        return cometric_pairing(st.z, grad, -1j * st.xi) / xi0_norm

    return b


def riccati_operator(surf: FuchsianSurface, rho0, W, U_u: Callable, U_s: Callable,
                     q: QuadratureConfig = QuadratureConfig()) -> Estimate:
    """General form with Riccati functions: ``int g*(dW, xi_perp) exp(-int_0^t U_u) / (U_u - U_s) dt``.

    ``U_u`` and ``U_s`` map states to values. The inner integral is accumulated
    with the same Gauss-Legendre panels (non-adaptive), so for constant Riccati
    values this reproduces the constant-curvature functional.
    """
    frames = state_to_frame(rho0) if isinstance(rho0, CotangentState) else rho0
    f = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    f, _ = surf.reduce_frames(f)
    x, w = _gl(4 * q.nodes)
    n_sub = 8
    h = q.panel / n_sub
    n_panels = int(math.ceil(q.T_max / q.panel))
    pairing = _unstable_pairing(W, q.panel)
    total = np.zeros(len(f))
    sup = np.zeros(len(f))
    exponent = np.zeros(len(f))
    # integrand within a subinterval uses exp(-(exponent at start + partial integral))
    xs, ws = np.polynomial.legendre.leggauss(q.nodes)
    for k in range(n_panels):
        for j in range(n_sub):
            t0 = j * h
            offs = t0 + x * h
            at = np.matmul(f[:, None], geodesic_matrix(offs)[None])
            st = frame_to_state(at)
            uu, us = U_u(st), U_s(st)
            # partial integrals of U_u from t0 to each node by a nested rule
            partial = np.zeros_like(uu)
            for m, node in enumerate(x):
                sub = t0 + 0.5 * (xs + 1) * node * h
                sst = frame_to_state(np.matmul(f[:, None], geodesic_matrix(sub)[None]))
                partial[:, m] = 0.5 * node * h * np.sum(U_u(sst) * ws, axis=1)
            vals = pairing(at)
            integrand = vals * np.exp(-(exponent[:, None] + partial)) / (uu - us)
            total += h * np.sum(integrand * w, axis=1)
            sup = np.maximum(sup, np.max(np.abs(vals), axis=1))
            end = frame_to_state(np.matmul(f[:, None], geodesic_matrix(t0 + 0.5 * (xs + 1) * h)[None]))
            exponent += 0.5 * h * np.sum(U_u(end) * ws, axis=1)
        if k + 1 < n_panels:
            f, _ = surf.reduce_frames(matmul(f, geodesic_matrix(q.panel)))
    err = sup * np.exp(-exponent)
    if np.ndim(frames) == 2:
        return Estimate(total[0], err[0])
    return Estimate(total, err)


def constant_riccati(value: float) -> Callable:
    return lambda st: np.full(np.shape(st.z), value)


# ---------------------------------------------------------------------------
# Structural-stability corrections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZCoefficients:
    c_u: float
    c_s: float


class AdmissibilityCache:
    """Per-state values ``L(V_j)`` and ``L^s(b_1^j)`` for a family, computed once."""

    def __init__(self, family: PerturbationFamily, rho0: CotangentState, q: QuadratureConfig = QuadratureConfig()):
        self.family = family
        self.rho0 = rho0
        self.xi0_norm = float(rho0.norm)
        unit = rho0.normalized()
        surf = family.surface
        self.L = np.array([float(admissibility_L(surf, unit, V, q).value) for V in family.potentials])
        self.Ls = np.array([float(averaging_Ls(surf, unstable_component(V, self.xi0_norm), unit, q).value)
                            for V in family.potentials])

    def beta_u(self, eps) -> np.ndarray:
        return -np.asarray(eps, dtype=float) @ self.L / self.xi0_norm

    def z_coefficients(self, eps) -> ZCoefficients:
        e = np.asarray(eps, dtype=float)
        # L^u(b_1^j) coincides with L(V_j)/|xi_0|
        return ZCoefficients(float(-(e @ self.L) / self.xi0_norm), float(-(e @ self.Ls)))


def beta_u(rho0: CotangentState, family: PerturbationFamily, eps, q: QuadratureConfig = QuadratureConfig(),
           cache: Optional[AdmissibilityCache] = None) -> float:
    cache = cache or AdmissibilityCache(family, rho0, q)
    return float(cache.beta_u(eps))


def z_coefficients(rho0: CotangentState, family: PerturbationFamily, eps, q: QuadratureConfig = QuadratureConfig(),
                   cache: Optional[AdmissibilityCache] = None) -> ZCoefficients:
    cache = cache or AdmissibilityCache(family, rho0, q)
    return cache.z_coefficients(eps)


def alpha_tilde(rho0: CotangentState, family: PerturbationFamily, eps, q: QuadratureConfig = QuadratureConfig(),
                cache: Optional[AdmissibilityCache] = None, order: str = "us") -> CotangentState:
    """``H_s^{c_s}(H_u^{c_u}(rho0))``; ``order="su"`` applies the stable move first."""
    c = z_coefficients(rho0, family, eps, q, cache)
    if c.c_u == 0 and c.c_s == 0:
        return rho0.normalized()
    f = state_to_frame(rho0.normalized())
    if order == "us":
        f = horocycle_flow(horocycle_flow(f, c.c_u, "unstable"), c.c_s, "stable")
    else:
        f = horocycle_flow(horocycle_flow(f, c.c_s, "stable"), c.c_u, "unstable")
    return frame_to_state(f)


# ---------------------------------------------------------------------------
# Admissibility certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    n_x: int = 40
    n_y: int = 40
    n_angle: int = 64
    threshold: float = 1e-2
    T_max: float = 14.0
    nodes: int = 12
    chunk: int = 4096


def unit_bundle_grid(surf: FuchsianSurface, n_x: int, n_y: int, n_angle: int) -> np.ndarray:
    """Frames on a Cartesian disk-model grid clipped to the fundamental domain, times angles."""
    from .surface import from_disk
    half = math.tanh(surf.circumradius / 2)
    xs = (np.arange(n_x) + 0.5) / n_x * 2 * half - half
    ys = (np.arange(n_y) + 0.5) / n_y * 2 * half - half
    w = (xs[:, None] + 1j * ys[None, :]).ravel()
    w = w[np.abs(w) < 1]
    z = from_disk(w)
    z = z[surf.contains(z)]
    ang = np.arange(n_angle) / n_angle * 2 * np.pi
    zz = np.repeat(z, n_angle)
    xi = np.tile(np.exp(1j * (ang + np.pi / 2)), z.size) / zz.imag
    return state_to_frame(CotangentState(zz, xi))


@dataclass
class AdmissibilityReport:
    minimum: float
    argmin: CotangentState
    passed: bool
    threshold: float
    values: np.ndarray          # (n_states, J+1)
    states: CotangentState
    max_error: float


def admissibility_values(family: PerturbationFamily, frames: np.ndarray, q: QuadratureConfig,
                         chunk: int = 4096) -> tuple:
    """``L_rho(V_j)`` for every frame and potential; returns (values (N, J+1), max error).

    Radial-bump families go through the compiled kernel; others use the array rule.
    """
    surf = family.surface
    frames = np.asarray(frames, dtype=float).reshape(-1, 2, 2)
    packed = family.packed()
    if packed is not None:
        pts, dist, idx, amps, r_max = packed
        x, w = _gl(q.nodes)
        total, err = _jit.weighted_pairing_integrals(
            frames, surf.generators, pts, dist, idx, amps, r_max, math.cosh(r_max), family.size,
            float(q.T_max), float(q.panel), x, w, surf.max_reduction_steps)
        return 0.5 * total, float(np.max(0.5 * err)) if err.size else 0.0
    out = np.zeros((len(frames), family.size))
    max_err = 0.0
    for start in range(0, len(frames), chunk):
        f = frames[start:start + chunk]

        def fn(at):
            st = frame_to_state(at)
            _, grads = family.values_and_grads(st.z, reduced=True, reach=q.panel)
            return np.moveaxis(cometric_pairing(st.z, grads, -1j * st.xi), 0, -1)

        est = _vector_orbit_integral(surf, f, fn, q, family.size)
        out[start:start + chunk] = 0.5 * est.value
        max_err = max(max_err, float(np.max(0.5 * est.error)))
    return out, max_err


def _vector_orbit_integral(surf, frames, fn, q, m) -> Estimate:
    """Like ``weighted_orbit_integral`` for ``m`` integrands at once (fixed two-level rule)."""
    f, _ = surf.reduce_frames(np.asarray(frames, dtype=float))
    x, w = _gl(q.nodes)
    n_panels = int(math.ceil(q.T_max / q.panel))
    total = np.zeros((len(f), m))
    err = np.zeros((len(f), m))
    sup = np.zeros((len(f), m))
    step = geodesic_matrix(q.panel)
    offs = np.concatenate([x * q.panel, x * q.panel / 2, (x + 1) * q.panel / 2])
    mats = geodesic_matrix(offs)
    n = q.nodes
    for k in range(n_panels):
        t0 = k * q.panel
        vals = fn(np.matmul(f[:, None], mats[None]))            # (N, 3n, m)
        wt = np.exp(-(t0 + offs))
        coarse = q.panel * np.einsum("kim,i->km", vals[:, :n], w * wt[:n])
        fine = 0.5 * q.panel * (np.einsum("kim,i->km", vals[:, n:2 * n], w * wt[n:2 * n])
                                + np.einsum("kim,i->km", vals[:, 2 * n:], w * wt[2 * n:]))
        total += fine
        err += np.abs(fine - coarse)
        sup = np.maximum(sup, np.max(np.abs(vals), axis=1))
        if k + 1 < n_panels:
            f, _ = surf.reduce_frames(matmul(f, step))
    return Estimate(total, err + sup * math.exp(-q.T_max))


def admissibility_check(family: PerturbationFamily, grid: GridSpec = GridSpec()) -> AdmissibilityReport:
    frames = unit_bundle_grid(family.surface, grid.n_x, grid.n_y, grid.n_angle)
    q = QuadratureConfig(T_max=grid.T_max, nodes=grid.nodes, strict=False)
    vals, max_err = admissibility_values(family, frames, q, grid.chunk)
    worst = np.max(np.abs(vals), axis=1)
    k = int(np.argmin(worst))
    states = frame_to_state(frames)
    return AdmissibilityReport(minimum=float(worst[k]), argmin=states[k],
                               passed=bool(worst[k] >= grid.threshold), threshold=grid.threshold,
                               values=vals, states=states, max_error=max_err)
