"""Compact hyperbolic surfaces given by side-pairing generators of a Dirichlet domain."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from scipy.optimize import brentq

from .core import (
    CotangentState,
    DomainError,
    MoebiusMap,
    as_matrix,
    cosh_distance,
    matmul,
    mobius,
    projective_distance,
    push_covector,
    renormalize,
    rotation_matrix,
    geodesic_matrix,
    sl2_inverse,
)

CENTER = 1j
DIRICHLET_TOL = 1e-9
BALL_CAP_FACTOR = 3.0


class ConfigurationError(ValueError):
    pass


class ReductionError(RuntimeError):
    pass


def to_disk(z):
    return (z - 1j) / (z + 1j)


def from_disk(w):
    return 1j * (1 + w) / (1 - w)


@dataclass(frozen=True)
class Side:
    generator: int          # index g such that g maps the opposite side onto this one
    translate: complex      # g(i): the neighbouring center across this side
    direction: float        # angle of the side's foot point seen from the disk origin
    half_distance: float    # distance from the center to the side


@dataclass(frozen=True)
class ReducedPoint:
    state: CotangentState
    word: tuple              # generator indices, first applied first

    def element(self, surf: "FuchsianSurface") -> np.ndarray:
        m = np.eye(2)
        for k in self.word:
            m = matmul(surf.generators[k], m)
        return m


@dataclass(eq=False)
class FuchsianSurface:
    """Side pairings ``generators`` (closed under inverse) of a Dirichlet domain at ``i``.

    ``inverse_index[k]`` is the position of the inverse of generator ``k``.
    """

    generators: np.ndarray
    inverse_index: np.ndarray
    relator: Optional[tuple] = None
    name: str = "custom"
    max_reduction_steps: int = 10_000
    injectivity_radius: float = field(init=False)
    circumradius: float = field(init=False)
    area: float = field(init=False)
    sides: list = field(init=False)
    _ball_cache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self.generators = renormalize(np.asarray(self.generators, dtype=float))
        self.generators.setflags(write=False)
        self.inverse_index = np.asarray(self.inverse_index, dtype=int)
        self.sides = self._build_sides()
        self.circumradius = self._circumradius()
        self.area = domain_area(self)
        self.injectivity_radius = self._injectivity_radius()

    # -- geometry of the domain ------------------------------------------------

    def _build_sides(self) -> list:
        sides = []
        for k, g in enumerate(self.generators):
            p = mobius(g, CENTER)
            w = to_disk(p)
            dist = math.acosh(float(cosh_distance(p, CENTER)))
            sides.append(Side(k, complex(p), float(np.angle(w)), dist / 2))
        return sides

    def boundary_radius(self, phi) -> np.ndarray:
        """Hyperbolic distance from the center to the domain boundary along direction ``phi``."""
        phi = np.asarray(phi, dtype=float)
        best = np.full(phi.shape, np.inf)
        for side in self.sides:
            c = np.cos(phi - side.direction)
            th = math.tanh(side.half_distance)
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(c > th, np.arctanh(th / np.where(c > th, c, 1.0)), np.inf)
            best = np.minimum(best, r)
        return best

    def active_side(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        rs = []
        for side in self.sides:
            c = np.cos(phi - side.direction)
            th = math.tanh(side.half_distance)
            with np.errstate(divide="ignore", invalid="ignore"):
                rs.append(np.where(c > th, np.arctanh(th / np.where(c > th, c, 1.0)), np.inf))
        return np.argmin(np.stack(rs), axis=0)

    def kink_angles(self) -> np.ndarray:
        """Angles where the boundary passes from one side to the next (vertex directions)."""
        grid = np.linspace(-np.pi, np.pi, 4097)
        act = self.active_side(grid)
        kinks = []
        for i in np.nonzero(act[1:] != act[:-1])[0]:
            s0, s1 = self.sides[act[i]], self.sides[act[i + 1]]

            def gap(p):
                return float(self.boundary_single(s0, p) - self.boundary_single(s1, p))

            kinks.append(brentq(gap, grid[i], grid[i + 1], xtol=1e-15))
        return np.array(kinks)

    @staticmethod
    def boundary_single(side: Side, phi: float) -> float:
        c = math.cos(phi - side.direction)
        th = math.tanh(side.half_distance)
        return math.atanh(th / c) if c > th else math.inf

    def _circumradius(self) -> float:
        return float(np.max(self.boundary_radius(self.kink_angles())))

    def _injectivity_radius(self) -> float:
        ball = self.translate_ball(BALL_CAP_FACTOR * min(s.half_distance for s in self.sides))
        traces = np.abs(ball[..., 0, 0] + ball[..., 1, 1])
        nontrivial = traces[projective_distance(ball, np.eye(2)) > 1e-9]
        return float(np.arccosh(np.min(nontrivial) / 2))

    def contains(self, z, tol: float = DIRICHLET_TOL) -> np.ndarray:
        """Dirichlet inequalities ``d(z, i) <= d(z, g i) + tol`` for every generator."""
        z = np.asarray(z, dtype=complex)
        d0 = np.arccosh(cosh_distance(z, CENTER))
        ok = np.ones(z.shape, dtype=bool)
        for side in self.sides:
            dk = np.arccosh(np.maximum(cosh_distance(z, side.translate), 1.0))
            ok &= d0 <= dk + tol
        return ok

    # -- reduction -------------------------------------------------------------

    def reduce(self, z, xi=None, *, track: bool = True):
        """Vectorized greedy reduction into the closed domain.

        Returns ``(z, xi, gamma, steps)`` where ``gamma`` is the accumulated
        group element (``z_out = gamma(z_in)``) and ``steps`` the number of
        generator applications per point.
        """
        z = np.array(z, dtype=complex, copy=True)
        shape = z.shape
        z = z.reshape(-1)
        xi = None if xi is None else np.array(xi, dtype=complex, copy=True).reshape(-1)
        gamma = np.broadcast_to(np.eye(2), z.shape + (2, 2)).copy() if track else None
        steps = np.zeros(z.shape, dtype=np.int64)
        gens = self.generators
        active = np.arange(z.size)
        for _ in range(self.max_reduction_steps):
            za = z[active]
            d0 = _acosh(cosh_distance(za, CENTER))
            a, b, c, d = (gens[:, 0, 0, None], gens[:, 0, 1, None],
                          gens[:, 1, 0, None], gens[:, 1, 1, None])
            # cosh d(g z, i) = (|az+b|^2 + |cz+d|^2) / (2 Im z)
            q = (np.abs(a * za + b) ** 2 + np.abs(c * za + d) ** 2) / (2 * za.imag)
            dk = _acosh(q)
            best = np.argmin(dk, axis=0)
            improve = dk[best, np.arange(za.size)] < d0 - DIRICHLET_TOL
            if not np.any(improve):
                break
            idx = active[improve]
            g = gens[best[improve]]
            zi = z[idx]
            if xi is not None:
                xi[idx] = push_covector(g, zi, xi[idx])
            z[idx] = mobius(g, zi)
            if track:
                gamma[idx] = matmul(g, gamma[idx])
            steps[idx] += 1
            active = idx
        else:
            raise ReductionError(
                f"reduction did not terminate in {self.max_reduction_steps} steps; "
                f"{active.size} points still moving, e.g. z={z[active[:3]]}")
        out_xi = None if xi is None else xi.reshape(shape)
        out_g = None if gamma is None else gamma.reshape(shape + (2, 2))
        return z.reshape(shape), out_xi, out_g, steps.reshape(shape)

    def reduce_frames(self, f: np.ndarray):
        """Left-multiply frames into the domain; returns ``(frames, gamma)``."""
        f = np.asarray(f, dtype=float)
        z = mobius(f, CENTER)
        _, _, gamma, _ = self.reduce(z)
        return matmul(gamma, f), gamma

    def translate_ball(self, radius: float, *, cap: Optional[float] = None) -> np.ndarray:
        """All group elements moving the center by at most ``radius`` (array ``(n, 2, 2)``)."""
        limit = BALL_CAP_FACTOR * min(s.half_distance for s in self.sides) if cap is None else cap
        if radius > limit + 1e-12:
            raise ConfigurationError(f"translate_ball radius {radius} exceeds cap {limit}")
        key = round(float(radius), 12)
        if key in self._ball_cache:
            return self._ball_cache[key]
        # tiles met by the segment from the center to g(i) have centers within radius + circumradius
        prune = math.cosh(radius + self.circumradius + 1e-6)
        seen = {_key(np.eye(2))}
        found = [np.eye(2)]
        frontier = [np.eye(2)]
        while frontier:
            nxt = []
            for gam in frontier:
                for g in self.generators:
                    cand = renormalize(gam @ g)
                    k = _key(cand)
                    if k in seen:
                        continue
                    if cosh_distance(mobius(cand, CENTER), CENTER) > prune:
                        continue
                    seen.add(k)
                    nxt.append(cand)
                    found.append(cand)
            frontier = nxt
        found = np.array(found)
        dist = np.arccosh(np.maximum(cosh_distance(mobius(found, CENTER), CENTER), 1.0))
        order = np.lexsort((np.round(np.angle(to_disk(mobius(found, CENTER))), 9), np.round(dist, 9)))
        keep = order[dist[order] <= radius + 1e-12]
        ball = found[keep]
        ball.setflags(write=False)
        self._ball_cache[key] = ball
        return ball

    def relator_product(self) -> Optional[np.ndarray]:
        if self.relator is None:
            return None
        m = np.eye(2)
        for k in self.relator:
            m = matmul(m, self.generators[k])
        return m

    def validate(self) -> dict:
        """Check the structural invariants, raising ConfigurationError on failure."""
        traces = np.abs(self.generators[:, 0, 0] + self.generators[:, 1, 1])
        if np.any(traces <= 2):
            raise ConfigurationError("non-hyperbolic generator")
        for k, j in enumerate(self.inverse_index):
            if projective_distance(matmul(self.generators[k], self.generators[j]), np.eye(2)) > 1e-9:
                raise ConfigurationError(f"generator {j} is not the inverse of {k}")
        rel = self.relator_product()
        rel_err = None
        if rel is not None:
            rel_err = float(projective_distance(rel, np.eye(2)))
            if rel_err > 1e-9:
                raise ConfigurationError(f"relator product differs from identity by {rel_err}")
        euler = self.area / (2 * math.pi)
        if abs(euler - round(euler)) > 1e-6 or round(euler) < 2 or round(euler) % 2:
            raise ConfigurationError(f"area {self.area} is not 4*pi*(genus-1)")
        return {"max_trace": float(traces.max()), "min_trace": float(traces.min()),
                "relator_error": rel_err, "area": self.area,
                "injectivity_radius": self.injectivity_radius}


def _acosh(x):
    return np.arccosh(np.maximum(x, 1.0))


def _key(m: np.ndarray) -> tuple:
    flat = m.reshape(4)
    lead = flat[np.argmax(np.abs(flat) > 1e-9)]
    if lead < 0:
        flat = -flat
    return tuple(np.round(flat, 7) + 0.0)


def domain_area(surf: FuchsianSurface, nodes: int = 24) -> float:
    """Hyperbolic area of the Dirichlet domain by polar Gauss-Legendre quadrature.

    In geodesic polar coordinates the area is the integral over directions of
    ``cosh(R(phi)) - 1``; the integrand is smooth between kinks.
    """
    kinks = np.sort(surf.kink_angles())
    edges = np.concatenate([kinks, [kinks[0] + 2 * np.pi]])
    x, w = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        # the side foot splits each piece in two smooth halves
        mid = 0.5 * (lo + hi)
        for a, b in ((lo, mid), (mid, hi)):
            phi = 0.5 * (b - a) * x + 0.5 * (b + a)
            total += 0.5 * (b - a) * np.sum(w * (np.cosh(surf.boundary_radius(phi)) - 1))
    return float(total)


def monte_carlo_area(surf: FuchsianSurface, n: int = 200_000, seed: int = 0) -> tuple:
    """Area by uniform hyperbolic sampling of the circumscribed disk; returns (area, stderr)."""
    rng = np.random.default_rng(seed)
    ch_max = math.cosh(surf.circumradius)
    ch = 1.0 + rng.random(n) * (ch_max - 1.0)
    r = np.arccosh(ch)
    phi = rng.random(n) * 2 * np.pi
    w = np.tanh(r / 2) * np.exp(1j * phi)
    inside = surf.contains(from_disk(w))
    disk_area = 2 * math.pi * (ch_max - 1.0)
    p = inside.mean()
    return disk_area * p, disk_area * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------------------
# Bolza surface
# ---------------------------------------------------------------------------

def bolza_generators() -> np.ndarray:
    """Four translations of length 2*arccosh(1+sqrt 2) along axes at angles k*pi/4, then inverses."""
    ell = 2 * math.acosh(1 + math.sqrt(2))
    a = geodesic_matrix(ell)
    gens = []
    for k in range(4):
        r = rotation_matrix(k * math.pi / 8)
        gens.append(r @ a @ sl2_inverse(r))
    gens += [sl2_inverse(g) for g in gens]
    return np.array(gens)


def _find_relator(gens: np.ndarray, inverse_index: np.ndarray) -> tuple:
    a, b, c, d = 0, 1, 2, 3
    A, B, C, D = (int(inverse_index[k]) for k in range(4))
    classic = (a, B, c, D, A, b, C, d)
    cands = [classic]
    for perm in itertools.permutations(range(4)):
        for signs in itertools.product((0, 1), repeat=4):
            w1 = [perm[i] if not signs[i] else int(inverse_index[perm[i]]) for i in range(4)]
            cands.append(tuple(w1 + [int(inverse_index[x]) for x in w1]))
    for word in cands:
        m = np.eye(2)
        for k in word:
            m = m @ gens[k]
        if projective_distance(renormalize(m), np.eye(2)) < 1e-9:
            return word
    raise ConfigurationError("no relator found among candidate orderings")


def build_bolza() -> FuchsianSurface:
    gens = bolza_generators()
    inverse_index = np.array([4, 5, 6, 7, 0, 1, 2, 3])
    relator = _find_relator(gens, inverse_index)
    surf = FuchsianSurface(gens, inverse_index, relator=relator, name="bolza")
    surf.validate()
    return surf


def reduce_to_domain(surf: FuchsianSurface, s: CotangentState) -> ReducedPoint:
    """Scalar reduction recording the generator word."""
    z = complex(s.z)
    xi = complex(s.xi)
    word = []
    gens = surf.generators
    for _ in range(surf.max_reduction_steps):
        d0 = math.acosh(max(float(cosh_distance(z, CENTER)), 1.0))
        dk = _acosh((np.abs(gens[:, 0, 0] * z + gens[:, 0, 1]) ** 2
                     + np.abs(gens[:, 1, 0] * z + gens[:, 1, 1]) ** 2) / (2 * z.imag))
        k = int(np.argmin(dk))
        if not dk[k] < d0 - DIRICHLET_TOL:
            return ReducedPoint(CotangentState(z, xi), tuple(word))
        xi = complex(push_covector(gens[k], z, xi))
        z = complex(mobius(gens[k], z))
        word.append(k)
    raise ReductionError(f"reduction of {s.z} did not terminate within {surf.max_reduction_steps} steps")


def load_surface(path: str | Path) -> FuchsianSurface:
    """Read a surface description (YAML or JSON) and re-validate it.

    Expected keys: ``generators`` (list of 4-number rows, row-major), optional
    ``inverse_index``, ``relator``, ``center`` (must be the disk origin, i.e. 0),
    and ``area``.
    """
    text = Path(path).read_text()
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    gens = np.array([np.array(g, dtype=float).reshape(2, 2) for g in data["generators"]])
    if np.any(np.abs(gens[:, 0, 0] * gens[:, 1, 1] - gens[:, 0, 1] * gens[:, 1, 0] - 1) > 1e-9):
        raise ConfigurationError("generator determinant differs from 1")
    center = complex(data.get("center", 0))
    if abs(center) > 1e-12:
        raise ConfigurationError("domain center must be the disk origin")
    if "inverse_index" in data:
        inv = np.array(data["inverse_index"], dtype=int)
    else:
        inv = np.array([int(np.argmin([projective_distance(g @ h, np.eye(2)) for h in gens]))
                        for g in gens])
    surf = FuchsianSurface(gens, inv, relator=tuple(data["relator"]) if "relator" in data else None,
                           name=data.get("name", Path(path).stem))
    surf.validate()
    declared = data.get("area")
    if declared is not None and abs(declared - surf.area) > 1e-6:
        raise ConfigurationError(f"declared area {declared} disagrees with computed {surf.area}")
    return surf


def save_surface(surf: FuchsianSurface, path: str | Path) -> None:
    data = {"name": surf.name, "center": 0,
            "generators": [[float(repr_) for repr_ in g.reshape(4)] for g in surf.generators],
            "inverse_index": surf.inverse_index.tolist(),
            "area": surf.area}
    if surf.relator is not None:
        data["relator"] = list(surf.relator)
    Path(path).write_text(json.dumps(data, indent=2))
