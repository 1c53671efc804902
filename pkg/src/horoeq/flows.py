"""Perturbed Hamiltonian flow ``p = |xi|^2/2 + sum_j eps_j V_j`` by Strang kick-drift splitting.

Each step is a half kick ``xi -= (h/2) dV``, an exact geodesic drift of length
``h*|xi|`` done in group coordinates, and a second half kick; the state is
reduced into the fundamental domain after every drift. Consecutive half kicks
are fused (first-same-as-last), so there is one field evaluation per step.

Internally a trajectory is a reduced frame ``R`` (unit covector) and a speed
``sigma = |xi|``. Optionally the lift to the plane is tracked: between two
nonzero kicks the drifts compose exactly, so the lift is kept as an anchor
frame times ``a(tau)`` with the accumulated drift length ``tau``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from . import _jit
from .core import CotangentState, DomainError, frame_to_state, state_to_frame
from .fields import PerturbationFamily
from .surface import ConfigurationError


class IntegrationQualityError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    max_time: float = 1e4
    energy_monitor_interval: int = 100
    energy_tol: float = 1e-6
    eps_cap: float = 0.2

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step must be positive")
        if not math.isfinite(self.max_time / self.h) or self.max_time / self.h > 2 ** 53:
            raise ValueError("max_time/h overflows the step counter")


@dataclass
class HamiltonianParams:
    """Family and amplitudes; ``eps`` has shape ``(J+1,)`` or ``(N, J+1)``."""

    family: PerturbationFamily
    eps: np.ndarray

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        if self.eps.shape[-1] != self.family.size:
            raise ValueError(f"eps needs {self.family.size} entries")

    def eps_for(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.eps, (n, self.family.size))


def energy(s: CotangentState, params: HamiltonianParams):
    """``|xi|^2/2 + V_eps(z)``."""
    z = np.asarray(s.z, dtype=complex)
    v = params.family.value(params.eps, z)
    return 0.5 * np.asarray(s.norm) ** 2 + v


@dataclass
class FlowResult:
    state: CotangentState               # reduced final state
    lift: Optional[np.ndarray] = None   # final lift frames (unit covector) if tracked
    speed: Optional[np.ndarray] = None
    energy_error: Optional[np.ndarray] = None   # max relative error per trajectory
    energy_trace: Optional[np.ndarray] = None   # (n_checks, N) relative errors
    energy_times: Optional[np.ndarray] = None   # matching (n_checks, N) times
    samples: list = field(default_factory=list)  # reduced states at requested steps
    sample_times: Optional[np.ndarray] = None
    words: Optional[np.ndarray] = None           # generator applications per trajectory
    sample_words: Optional[np.ndarray] = None    # (n_samples, N) generator counts at the samples
    sample_lifts: Optional[np.ndarray] = None    # (n_samples, N, 2, 2) lift frames when tracked

    def lift_state(self) -> CotangentState:
        st = frame_to_state(self.lift)
        return CotangentState(st.z, st.xi * self.speed)


_STATUS_MESSAGES = {
    _jit.ENERGY: "relative energy drift exceeds the tolerance",
    _jit.VANISHED: "covector vanished during a kick",
    _jit.UNREDUCED: "domain reduction did not terminate",
}


def integrate(s: CotangentState, params: HamiltonianParams, T, cfg: IntegratorConfig = IntegratorConfig(), *,
              track_lift: bool = False, sample_every: Optional[int] = None, log: Optional[TextIO] = None,
              check_energy: bool = True) -> FlowResult:
    """Integrate a batch of states for times ``T`` (scalar or per trajectory, any sign).

    With ``log`` set, one whitespace-separated row ``t x y xi_x xi_y p words`` is
    written per trajectory every ``sample_every`` steps (default: every step).
    """
    z0 = np.atleast_1d(np.asarray(s.z, dtype=complex))
    xi0 = np.atleast_1d(np.asarray(s.xi, dtype=complex))
    n = z0.size
    T = np.ascontiguousarray(np.broadcast_to(np.asarray(T, dtype=float), (n,)))
    if np.any(np.abs(T) > cfg.max_time):
        raise ValueError("requested time exceeds max_time")
    eps = np.ascontiguousarray(params.eps_for(n), dtype=float)
    if np.any(np.linalg.norm(eps, axis=1) > cfg.eps_cap):
        raise ValueError(f"|eps| exceeds the configured cap {cfg.eps_cap}")
    sigma = np.imag(z0) * np.abs(xi0)
    if np.any(~(sigma > 0)):
        raise DomainError("flow states need a nonzero covector")
    packed = params.family.packed()
    if packed is None:
        raise ConfigurationError("the integrator needs a family of radial-bump potentials with a common radius")
    pts, dist, idx, amps, r_max = packed
    if log is not None and not sample_every:
        sample_every = 1
    frames = state_to_frame(CotangentState(z0, xi0 / sigma))
    surf = params.family.surface
    (R, speed, lift, words, max_err, trace, trace_t, samp_f, samp_sigma, samp_words, samp_lift, status,
     fail_step) = _jit.strang_batch(
        frames, sigma, eps, T, cfg.h, surf.generators, pts, dist, idx, amps, r_max, math.cosh(r_max),
        params.family.size, cfg.energy_monitor_interval, cfg.energy_tol, check_energy, track_lift,
        int(sample_every or 0), surf.max_reduction_steps)
    bad = np.nonzero(status)[0]
    if bad.size:
        code = int(status[bad[0]])
        raise IntegrationQualityError(
            f"{_STATUS_MESSAGES[code]} (trajectory {int(bad[0])}, step {int(fail_step[bad[0]])})",
            {"status": code, "indices": bad[:10].tolist(), "steps": fail_step[bad[:10]].tolist(),
             "max_relative_error": float(np.max(max_err))})
    final = frame_to_state(R)
    checks = ~np.all(np.isnan(trace), axis=1)
    steps = np.maximum(np.ceil(np.abs(T) / cfg.h - 1e-9), 1)
    h = np.where(T != 0, T / steps, 0.0)
    result = FlowResult(
        state=CotangentState(final.z, final.xi * speed),
        speed=speed,
        energy_error=max_err,
        energy_trace=trace[checks] if np.any(checks) else None,
        energy_times=trace_t[checks] if np.any(checks) else None,
        words=words,
        lift=lift if track_lift else None,
    )
    if sample_every:
        times = np.arange(samp_f.shape[0])[:, None] * sample_every * h[None, :]
        for k in range(samp_f.shape[0]):
            st = frame_to_state(np.nan_to_num(samp_f[k]))
            result.samples.append(CotangentState(np.where(np.isnan(samp_sigma[k]), np.nan, st.z),
                                                 st.xi * samp_sigma[k]))
        result.sample_times = times
        result.sample_words = samp_words
        if track_lift:
            result.sample_lifts = samp_lift
        if log is not None:
            _log_samples(log, result, params)
    return result


def _log_samples(log: TextIO, result: FlowResult, params: HamiltonianParams):
    for t, st, words in zip(result.sample_times, result.samples, result.sample_words):
        ok = ~np.isnan(st.z)
        if not np.any(ok):
            continue
        p = 0.5 * st.norm[ok] ** 2 + params.family.value(params.eps_for(st.z.size)[ok], st.z[ok], reduced=True)
        for row in zip(t[ok], st.z[ok].real, st.z[ok].imag, st.xi[ok].real, st.xi[ok].imag, p, words[ok]):
            log.write(" ".join(f"{v:.17g}" for v in row[:-1]) + f" {int(row[-1])}\n")


def perturbed_flow(s: CotangentState, params: HamiltonianParams, T, cfg: IntegratorConfig = IntegratorConfig()
                   ) -> CotangentState:
    """``G_eps^T(s)``, reduced into the fundamental domain."""
    scalar = np.ndim(s.z) == 0
    res = integrate(s, params, T, cfg)
    return res.state[0] if scalar else res.state


def shell_factor(rho: CotangentState, anchor: CotangentState, params: HamiltonianParams):
    """``c_eps(x) = sqrt((p_eps(anchor) - V_eps(x)) / p_0(anchor))``."""
    p_anchor = energy(anchor, params)
    v = params.family.value(params.eps, np.asarray(rho.z, dtype=complex))
    rad = p_anchor - v
    if np.any(rad <= 0):
        raise DomainError("energy shell lift is impossible: p_eps(anchor) - V_eps(x) <= 0")
    return np.sqrt(rad / anchor.kinetic)


def lift_to_shell(rho: CotangentState, anchor: CotangentState, params: HamiltonianParams) -> CotangentState:
    p_anchor = energy(anchor, params)
    v = params.family.value(params.eps, np.asarray(rho.z, dtype=complex))
    rad = p_anchor - v
    if np.any(rad <= 0):
        raise DomainError("energy shell lift is impossible: p_eps(anchor) - V_eps(x) <= 0")
    unit = rho.normalized()
    return unit.scaled(np.sqrt(2 * rad))


def projected_flow(rho: CotangentState, anchor: CotangentState, params: HamiltonianParams, t,
                   cfg: IntegratorConfig = IntegratorConfig(), *, sample_every: Optional[int] = None,
                   track_lift: bool = False) -> FlowResult:
    """Unit-bundle flow: lift to the anchor's energy shell, flow for ``t/sqrt(2E)``, normalize.

    ``E = p_0(anchor)``. Returned states (and samples) carry unit covectors.
    """
    lifted = lift_to_shell(rho, anchor, params)
    E = float(np.mean(anchor.kinetic))
    res = integrate(lifted, params, np.asarray(t, dtype=float) / math.sqrt(2 * E), cfg,
                    sample_every=sample_every, track_lift=track_lift)
    res.state = res.state.normalized()
    res.samples = [smp.normalized() for smp in res.samples]
    return res
