"""Compiled inner loops: domain reduction, periodized bump fields, orbit integrals.

Everything here works on plain arrays. Frames are ``(2, 2)`` float arrays
with unit determinant; points are complex numbers in the upper half-plane.
The Python-facing wrappers live in the modules that own the objects.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_TOL = 1e-9  # matches the Dirichlet tolerance of the array-based reduction


@nb.njit(cache=True)
def acosh_clip(x):
    return math.acosh(x) if x > 1.0 else 0.0


@nb.njit(cache=True)
def cosh_dist_center(z):
    return (z.real * z.real + z.imag * z.imag + 1.0) / (2.0 * z.imag)


@nb.njit(cache=True)
def mobius_point(a, b, c, d, z):
    return (a * z + b) / (c * z + d)


@nb.njit(cache=True)
def reduce_point(gens, z, max_steps):
    """Greedy reduction of one point; returns ``(z, g, steps)`` with ``g`` the accumulated element."""
    g = np.eye(2)
    steps = 0
    for _ in range(max_steps):
        y = z.imag
        d0 = acosh_clip(cosh_dist_center(z))
        best = -1
        best_d = 0.0
        for k in range(gens.shape[0]):
            a, b, c, d = gens[k, 0, 0], gens[k, 0, 1], gens[k, 1, 0], gens[k, 1, 1]
            p = a * z + b
            r = c * z + d
            q = (p.real * p.real + p.imag * p.imag + r.real * r.real + r.imag * r.imag) / (2.0 * y)
            dk = acosh_clip(q)
            if best < 0 or dk < best_d:
                best = k
                best_d = dk
        if not best_d < d0 - _TOL:
            return z, g, steps
        a, b, c, d = gens[best, 0, 0], gens[best, 0, 1], gens[best, 1, 0], gens[best, 1, 1]
        z = (a * z + b) / (c * z + d)
        g = gens[best] @ g
        steps += 1
    return z, g, -1


@nb.njit(cache=True)
def renorm(m):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return m / math.sqrt(det)


@nb.njit(cache=True)
def frame_point(f):
    return mobius_point(f[0, 0], f[0, 1], f[1, 0], f[1, 1], 1j)


@nb.njit(cache=True)
def frame_covector(f):
    """Unit covector of the frame: ``i * conj(c i + d)^2``."""
    w = complex(f[1, 1], -f[1, 0])
    return 1j * w * w


@nb.njit(cache=True)
def reduce_frame(gens, f, max_steps):
    """Left-multiply a frame into the domain; returns ``(frame, g, steps)``."""
    z, g, steps = reduce_point(gens, frame_point(f), max_steps)
    if steps == 0:
        return f, g, 0
    return renorm(g @ f), g, steps


@nb.njit(cache=True)
def geodesic_step(f, t):
    """``f @ diag(e^{t/2}, e^{-t/2})``."""
    e = math.exp(0.5 * t)
    out = np.empty((2, 2))
    out[0, 0] = f[0, 0] * e
    out[1, 0] = f[1, 0] * e
    out[0, 1] = f[0, 1] / e
    out[1, 1] = f[1, 1] / e
    return out


@nb.njit(cache=True)
def bump_field(z, pts, pdist, pidx, amps, r_max, u_max, out_v, out_g):
    """Accumulate periodized bumps ``amp * psi(cosh d(z, p))`` and their complex gradients.

    ``pts`` are translated centers sorted by ``pdist`` (distance from ``i``); the
    triangle inequality stops the scan once ``pdist > d(z, i) + r_max``.
    Results are added into ``out_v[pidx[k]]`` and ``out_g[pidx[k]]``.
    """
    x = z.real
    y = z.imag
    lim = acosh_clip(cosh_dist_center(z)) + r_max + 1e-12
    inv_span = 1.0 / (u_max - 1.0)
    for k in range(pts.shape[0]):
        if pdist[k] > lim:
            break
        px = pts[k].real
        py = pts[k].imag
        dx = x - px
        dy = y - py
        r2 = dx * dx + dy * dy
        ypy = y * py
        s = r2 / (2.0 * ypy) * inv_span
        if s >= 1.0:
            continue
        q = 1.0 - s * s
        val = amps[k] * math.exp(1.0 - 1.0 / q)
        dval = val * (-2.0 * s / (q * q)) * inv_span
        j = pidx[k]
        out_v[j] += val
        out_g[j] += dval * complex(dx / ypy, dy / ypy - r2 / (2.0 * y * ypy))


@nb.njit(cache=True)
def bump_values(z, pts, pdist, pidx, amps, r_max, u_max, m):
    """Values and gradients of ``m`` periodized bump sums at already reduced points."""
    n = z.shape[0]
    vals = np.zeros((n, m))
    grads = np.zeros((n, m), dtype=np.complex128)
    for i in range(n):
        bump_field(z[i], pts, pdist, pidx, amps, r_max, u_max, vals[i], grads[i])
    return vals, grads


@nb.njit(cache=True)
def reduce_points(gens, z, max_steps):
    n = z.shape[0]
    out = np.empty(n, dtype=np.complex128)
    mats = np.empty((n, 2, 2))
    steps = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i], mats[i], steps[i] = reduce_point(gens, z[i], max_steps)
    return out, mats, steps


@nb.njit(cache=True)
def unstable_pairings(f, pts, pdist, pidx, amps, r_max, u_max, m, out):
    """``g*(dV_j, xi_perp)`` at the state of frame ``f`` for every potential ``j``."""
    z = frame_point(f)
    xi = frame_covector(f)
    vals = np.zeros(m)
    grads = np.zeros(m, dtype=np.complex128)
    bump_field(z, pts, pdist, pidx, amps, r_max, u_max, vals, grads)
    perp = -1j * xi
    y2 = z.imag * z.imag
    for j in range(m):
        out[j] = y2 * (grads[j].real * perp.real + grads[j].imag * perp.imag)


@nb.njit(cache=True)
def weighted_pairing_integrals(frames, gens, pts, pdist, pidx, amps, r_max, u_max, m,
                               t_max, panel, x, w, max_steps):
    """``int_0^T_max g*(dV_j, xi_perp)(G^t rho) e^{-t} dt`` per frame, two-level panel rule.

    Returns ``(values, errors)`` of shape ``(N, m)``; the error adds the fine/coarse
    difference per panel and ``sup * e^{-T_max}`` for the truncated tail.
    """
    n = frames.shape[0]
    nodes = x.shape[0]
    n_panels = int(math.ceil(t_max / panel - 1e-12))
    total = np.zeros((n, m))
    err = np.zeros((n, m))
    buf = np.zeros(m)
    coarse = np.zeros(m)
    fine = np.zeros(m)
    sup = np.zeros(m)
    for i in range(n):
        f, _, _ = reduce_frame(gens, frames[i], max_steps)
        for j in range(m):
            sup[j] = 0.0
        for k in range(n_panels):
            t0 = k * panel
            for j in range(m):
                coarse[j] = 0.0
                fine[j] = 0.0
            for level in range(3):
                for q in range(nodes):
                    if level == 0:
                        off = x[q] * panel
                        wt = w[q] * panel
                    else:
                        off = (x[q] + (level - 1)) * 0.5 * panel
                        wt = 0.5 * w[q] * panel
                    unstable_pairings(geodesic_step(f, off), pts, pdist, pidx, amps, r_max, u_max, m, buf)
                    e = wt * math.exp(-(t0 + off))
                    for j in range(m):
                        if level == 0:
                            coarse[j] += e * buf[j]
                        else:
                            fine[j] += e * buf[j]
                        a = abs(buf[j])
                        if a > sup[j]:
                            sup[j] = a
            for j in range(m):
                total[i, j] += fine[j]
                err[i, j] += abs(fine[j] - coarse[j])
            if k + 1 < n_panels:
                f, _, _ = reduce_frame(gens, geodesic_step(f, panel), max_steps)
        for j in range(m):
            err[i, j] += sup[j] * math.exp(-t_max)
    return total, err


@nb.njit(cache=True)
def frame_from_unit(z, xi):
    """Frame of a state whose covector has unit norm."""
    theta = 0.5 * (math.atan2(xi.imag, xi.real) - 0.5 * math.pi)
    c = math.cos(theta)
    s = math.sin(theta)
    y = z.imag
    ry = math.sqrt(y)
    out = np.empty((2, 2))
    out[0, 0] = ry * c - z.real / ry * s
    out[0, 1] = ry * s + z.real / ry * c
    out[1, 0] = -s / ry
    out[1, 1] = c / ry
    return out


@nb.njit(cache=True)
def inverse(m):
    out = np.empty((2, 2))
    out[0, 0] = m[1, 1]
    out[0, 1] = -m[0, 1]
    out[1, 0] = -m[1, 0]
    out[1, 1] = m[0, 0]
    return out


# status codes of the integrator kernel
OK = 0
ENERGY = 1
VANISHED = 2
UNREDUCED = 3


@nb.njit(cache=True)
def _potential(z, eps, pts, pdist, pidx, amps, r_max, u_max, m, vals, grads):
    for j in range(m):
        vals[j] = 0.0
        grads[j] = 0.0
    bump_field(z, pts, pdist, pidx, amps, r_max, u_max, vals, grads)
    v = 0.0
    g = 0.0 + 0.0j
    for j in range(m):
        v += eps[j] * vals[j]
        g += eps[j] * grads[j]
    return v, g


@nb.njit(cache=True)
def strang_batch(frames, sigma0, eps, T, h, gens, pts, pdist, pidx, amps, r_max, u_max, m,
                 monitor_every, energy_tol, check_energy, track_lift, sample_every, max_steps):
    """Kick-drift-kick integration of a batch; trajectory ``i`` runs ``ceil(|T_i|/h)`` equal steps.

    ``frames`` carry unit covectors and ``sigma0`` the speeds ``|xi|``. Returns
    final reduced frames, speeds, lift frames, generator counts, max relative
    energy errors, energy traces, samples, per-trajectory status and the step
    at which a failure occurred.
    """
    n = frames.shape[0]
    steps = np.empty(n, dtype=np.int64)
    for i in range(n):
        steps[i] = max(int(math.ceil(abs(T[i]) / h - 1e-9)), 1) if T[i] != 0.0 else 0
    n_max = 0
    for i in range(n):
        n_max = max(n_max, steps[i])
    n_checks = n_max // monitor_every + 2
    n_samp = (n_max // sample_every + 1) if sample_every > 0 else 0
    out_f = np.empty((n, 2, 2))
    out_sigma = np.empty(n)
    lift = np.empty((n, 2, 2))
    words = np.zeros(n, dtype=np.int64)
    max_err = np.zeros(n)
    trace = np.full((n_checks, n), np.nan)
    trace_t = np.full((n_checks, n), np.nan)
    samp_f = np.full((n_samp, n, 2, 2), np.nan)
    samp_sigma = np.full((n_samp, n), np.nan)
    samp_words = np.full((n_samp, n), -1, dtype=np.int64)
    samp_lift = np.full((n_samp if track_lift else 0, n, 2, 2), np.nan)
    status = np.zeros(n, dtype=np.int64)
    fail_step = np.full(n, -1, dtype=np.int64)
    vals = np.zeros(m)
    grads = np.zeros(m, dtype=np.complex128)
    for i in range(n):
        e_i = eps[i]
        hk = T[i] / steps[i] if steps[i] > 0 else 0.0
        R, gam, ok = reduce_frame(gens, frames[i], max_steps)
        if ok < 0:
            status[i] = UNREDUCED
            fail_step[i] = 0
            continue
        sigma = sigma0[i]
        anchor = frames[i].copy()
        tau = 0.0
        z = frame_point(R)
        v, g = _potential(z, e_i, pts, pdist, pidx, amps, r_max, u_max, m, vals, grads)
        e0 = 0.5 * sigma * sigma + v
        scale = max(abs(e0), 1e-300)
        if sample_every > 0:
            samp_f[0, i] = R
            samp_sigma[0, i] = sigma
            samp_words[0, i] = 0
            if track_lift:
                samp_lift[0, i] = anchor
        dt = 0.5 * hk
        check = 0
        for k in range(steps[i] + 1):
            # kick by dt with the gradient at the current position
            if g != 0.0 and dt != 0.0:
                xi = frame_covector(R) * sigma - dt * g
                y = z.imag
                sig = y * abs(xi)
                if not sig > 0.0:
                    status[i] = VANISHED
                    fail_step[i] = k
                    break
                sigma = sig
                R = frame_from_unit(z, xi / sig)
                if track_lift:
                    anchor = renorm(inverse(gam) @ R)
                    tau = 0.0
            if k == steps[i]:
                break
            if sample_every > 0 and k > 0 and k % sample_every == 0:
                samp_f[k // sample_every, i] = R
                samp_sigma[k // sample_every, i] = sigma
                samp_words[k // sample_every, i] = words[i]
                if track_lift:
                    samp_lift[k // sample_every, i] = renorm(anchor @ geodesic_step(np.eye(2), tau))
            # drift
            dist = sigma * hk
            R = geodesic_step(R, dist)
            tau += dist
            Rr, gk, ok = reduce_frame(gens, R, max_steps)
            if ok < 0:
                status[i] = UNREDUCED
                fail_step[i] = k + 1
                break
            if ok > 0:
                R = Rr
                gam = renorm(gk @ gam)
                words[i] += ok
            z = frame_point(R)
            v, g = _potential(z, e_i, pts, pdist, pidx, amps, r_max, u_max, m, vals, grads)
            last = k + 1 == steps[i]
            dt = 0.5 * hk if last else hk
            if check_energy and ((k + 1) % monitor_every == 0 or last):
                # the momentum lags the position by half a step
                xs = frame_covector(R) * sigma - 0.5 * hk * g
                kin = z.imag * abs(xs)
                rel = abs(0.5 * kin * kin + v - e0) / scale
                if rel > max_err[i]:
                    max_err[i] = rel
                trace[check, i] = rel
                trace_t[check, i] = (k + 1) * abs(hk)
                check += 1
                if rel > energy_tol:
                    status[i] = ENERGY
                    fail_step[i] = k + 1
                    break
        if sample_every > 0 and status[i] == OK and steps[i] % sample_every == 0 and steps[i] > 0:
            samp_f[steps[i] // sample_every, i] = R
            samp_sigma[steps[i] // sample_every, i] = sigma
            samp_words[steps[i] // sample_every, i] = words[i]
            if track_lift:
                samp_lift[steps[i] // sample_every, i] = renorm(anchor @ geodesic_step(np.eye(2), tau))
        out_f[i] = R
        out_sigma[i] = sigma
        lift[i] = renorm(anchor @ geodesic_step(np.eye(2), tau)) if track_lift else R
    return (out_f, out_sigma, lift, words, max_err, trace, trace_t, samp_f, samp_sigma, samp_words, samp_lift,
            status, fail_step)


@nb.njit(cache=True)
def observable_at(z, xi, anchors, inv, adist, amps, r_max, u_max, c0, cos_c, sin_c, constant):
    """Periodized ``psi(cosh d(z, p)) * F(theta)`` with ``theta`` read in each translate's frame."""
    acc = constant
    lim = acosh_clip(cosh_dist_center(z)) + r_max + 1e-12
    inv_span = 1.0 / (u_max - 1.0)
    y = z.imag
    for k in range(anchors.shape[0]):
        if adist[k] > lim:
            break
        p = anchors[k]
        dx = z.real - p.real
        dy = y - p.imag
        s = (dx * dx + dy * dy) / (2.0 * y * p.imag) * inv_span
        if s >= 1.0:
            continue
        prof = math.exp(1.0 - 1.0 / (1.0 - s * s))
        w = inv[k, 1, 0] * z + inv[k, 1, 1]
        wc = w.conjugate()
        pulled = xi * wc * wc
        theta = math.atan2(pulled.imag, pulled.real) - 0.5 * math.pi
        f = c0
        for j in range(cos_c.shape[0]):
            f += cos_c[j] * math.cos((j + 1) * theta)
        for j in range(sin_c.shape[0]):
            f += sin_c[j] * math.sin((j + 1) * theta)
        acc += amps[k] * prof * f
    return acc


@nb.njit(cache=True)
def observable_values(z, xi, anchors, inv, adist, amps, r_max, u_max, c0, cos_c, sin_c, constant):
    n = z.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = observable_at(z[i], xi[i], anchors, inv, adist, amps, r_max, u_max, c0, cos_c, sin_c, constant)
    return out


@nb.njit(cache=True)
def observable_on_frames(frames, anchors, inv, adist, amps, r_max, u_max, c0, cos_c, sin_c, constant):
    n = frames.shape[0]
    out = np.empty(n)
    for i in range(n):
        f = frames[i]
        out[i] = observable_at(frame_point(f), frame_covector(f), anchors, inv, adist, amps, r_max, u_max,
                               c0, cos_c, sin_c, constant)
    return out


@nb.njit(cache=True)
def unstable_step(f, s):
    """``f @ [[1, 0], [s, 1]]``."""
    out = np.empty((2, 2))
    out[0, 0] = f[0, 0] + s * f[0, 1]
    out[1, 0] = f[1, 0] + s * f[1, 1]
    out[0, 1] = f[0, 1]
    out[1, 1] = f[1, 1]
    return out


@nb.njit(cache=True)
def horocycle_panels(frames, gens, n_panels, panel, x, w, anchors, inv, adist, amps, r_max, u_max,
                     c0, cos_c, sin_c, constant, max_steps):
    """Per-panel integrals ``int a(f n(s)) ds`` over ``[k*panel, (k+1)*panel]`` along the unstable horocycle.

    ``panel`` may be negative to run backwards. The frame is advanced by one
    exact unipotent step per panel and reduced into the domain.
    """
    n = frames.shape[0]
    out = np.empty((n, n_panels))
    length = abs(panel)
    for i in range(n):
        f, _, _ = reduce_frame(gens, frames[i], max_steps)
        for k in range(n_panels):
            acc = 0.0
            for q in range(x.shape[0]):
                g = unstable_step(f, x[q] * panel)
                acc += w[q] * observable_at(frame_point(g), frame_covector(g), anchors, inv, adist, amps,
                                            r_max, u_max, c0, cos_c, sin_c, constant)
            out[i, k] = acc * length
            f, _, _ = reduce_frame(gens, renorm(unstable_step(f, panel)), max_steps)
    return out
