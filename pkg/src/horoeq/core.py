"""Exact geometry of the upper half-plane and of its unit cotangent bundle.

Conventions
-----------
* Points are complex numbers ``z`` with ``Im z > 0``.
* A covector ``(xi_x, xi_y)`` is stored as the complex number ``xi_x + 1j*xi_y``.
  Its Riemannian norm at ``z`` is ``Im(z) * |xi|``.
* A unit-covector state is identified with a matrix ``g`` in SL(2, R), taken
  up to sign: the base point is ``g(i)`` and the covector is the push-forward
  of the upward unit covector at ``i``.
* Geodesic flow is right multiplication by ``diag(e^{t/2}, e^{-t/2})``.
  The expanding (unstable) horocycle is right multiplication by the lower
  unipotent ``[[1, 0], [s, 1]]``, the contracting (stable) one by the upper
  unipotent ``[[1, s], [0, 1]]``.
* The orthogonal covector is ``xi_perp = -1j * xi``. With this choice the base
  velocity of the unstable horocycle equals the vector dual to ``xi_perp``.

All functions broadcast over leading axes: matrices have shape ``(..., 2, 2)``
and points/covectors are complex arrays of matching leading shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

ArrayLike = Union[complex, np.ndarray]
Branch = Literal["unstable", "stable"]

RENORM_TOL = 1e-10


class DomainError(ValueError):
    """Input lies outside the domain of a geometric operation."""


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def as_matrix(m) -> np.ndarray:
    if isinstance(m, MoebiusMap):
        return m.mat
    return np.asarray(m, dtype=float)


def det(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def renormalize(m: np.ndarray) -> np.ndarray:
    """Scale so that det = 1. Negative determinants are rejected."""
    d = det(m)
    if np.any(d <= 0):
        raise DomainError("matrix does not have positive determinant")
    return m / np.sqrt(d)[..., None, None]


def matmul(a: np.ndarray, b: np.ndarray, *, renorm: bool = True) -> np.ndarray:
    p = np.matmul(a, b)
    return renormalize(p) if renorm else p


def sl2_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a unit-determinant matrix via the adjugate."""
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def canonical_sign(m: np.ndarray) -> np.ndarray:
    """Representative of +-m whose first nonzero entry (row-major) is positive."""
    flat = m.reshape(m.shape[:-2] + (4,))
    idx = np.argmax(np.abs(flat) > 1e-12, axis=-1)
    lead = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    sign = np.where(lead < 0, -1.0, 1.0)
    return m * sign[..., None, None]


def projective_distance(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Max-entry distance between two matrices, modulo global sign."""
    d_plus = np.max(np.abs(m1 - m2), axis=(-2, -1))
    d_minus = np.max(np.abs(m1 + m2), axis=(-2, -1))
    return np.minimum(d_plus, d_minus)


def geodesic_matrix(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (2, 2))
    out[..., 0, 0] = np.exp(t / 2)
    out[..., 1, 1] = np.exp(-t / 2)
    return out


def unstable_matrix(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 1, 0] = s
    return out


def stable_matrix(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape + (2, 2))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 0, 1] = s
    return out


def rotation_matrix(theta) -> np.ndarray:
    """Stabilizer element of i; rotates directions at i by ``2*theta``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = -s
    out[..., 1, 1] = c
    return out


@dataclass(frozen=True)
class MoebiusMap:
    """Element of PSL(2, R), stored as a unit-determinant matrix (or a batch)."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=float)
        if m.shape[-2:] != (2, 2):
            raise DomainError(f"expected (..., 2, 2) matrix, got {m.shape}")
        object.__setattr__(self, "mat", renormalize(m))

    @classmethod
    def identity(cls) -> "MoebiusMap":
        return cls(np.eye(2))

    @classmethod
    def from_entries(cls, a: float, b: float, c: float, d: float) -> "MoebiusMap":
        return cls(np.array([[a, b], [c, d]], dtype=float))

    def compose(self, other: "MoebiusMap") -> "MoebiusMap":
        """``self o other``."""
        return MoebiusMap(np.matmul(self.mat, other.mat))

    def __matmul__(self, other: "MoebiusMap") -> "MoebiusMap":
        return self.compose(other)

    def inverse(self) -> "MoebiusMap":
        return MoebiusMap(sl2_inverse(self.mat))

    def trace(self) -> np.ndarray:
        return self.mat[..., 0, 0] + self.mat[..., 1, 1]

    def __call__(self, z: ArrayLike) -> ArrayLike:
        return mobius(self.mat, z)

    def is_close(self, other: "MoebiusMap", tol: float = 1e-10) -> bool:
        return bool(np.all(projective_distance(self.mat, other.mat) <= tol))


def mobius(m: np.ndarray, z: ArrayLike) -> ArrayLike:
    m = as_matrix(m)
    return (m[..., 0, 0] * z + m[..., 0, 1]) / (m[..., 1, 0] * z + m[..., 1, 1])


# ---------------------------------------------------------------------------
# Points and covectors
# ---------------------------------------------------------------------------

def _check_upper(z) -> None:
    if np.any(np.imag(z) <= 0):
        raise DomainError("point not in the upper half-plane")


def cosh_distance(z1: ArrayLike, z2: ArrayLike) -> ArrayLike:
    return 1.0 + np.abs(z1 - z2) ** 2 / (2.0 * np.imag(z1) * np.imag(z2))


def hyperbolic_distance(z1: ArrayLike, z2: ArrayLike) -> ArrayLike:
    """Hyperbolic distance in the upper half-plane."""
    _check_upper(z1)
    _check_upper(z2)
    # arccosh(1 + x) = 2 asinh(sqrt(x/2)) is accurate for small separations
    x = np.abs(z1 - z2) ** 2 / (2.0 * np.imag(z1) * np.imag(z2))
    return 2.0 * np.arcsinh(np.sqrt(x / 2.0))


@dataclass(frozen=True)
class CotangentState:
    """A point ``z`` together with a covector ``xi`` (complex-encoded)."""

    z: ArrayLike
    xi: ArrayLike

    def __post_init__(self):
        _check_upper(self.z)

    @property
    def xi_x(self):
        return np.real(self.xi)

    @property
    def xi_y(self):
        return np.imag(self.xi)

    @property
    def norm(self):
        return np.imag(self.z) * np.abs(self.xi)

    @property
    def kinetic(self):
        return 0.5 * self.norm ** 2

    def normalized(self) -> "CotangentState":
        n = self.norm
        if np.any(n <= 0):
            raise DomainError("zero covector")
        return CotangentState(self.z, self.xi / n)

    def scaled(self, factor) -> "CotangentState":
        return CotangentState(self.z, self.xi * factor)

    def negated(self) -> "CotangentState":
        return CotangentState(self.z, -self.xi)

    def __getitem__(self, idx) -> "CotangentState":
        return CotangentState(np.asarray(self.z)[idx], np.asarray(self.xi)[idx])

    def __len__(self) -> int:
        return len(np.asarray(self.z))


def push_covector(m: np.ndarray, z: ArrayLike, xi: ArrayLike) -> ArrayLike:
    """Covector transported by the Moebius map: ``xi * conj(cz + d)**2``."""
    m = as_matrix(m)
    w = m[..., 1, 0] * z + m[..., 1, 1]
    return xi * np.conj(w) ** 2


def apply_moebius(m, s: CotangentState) -> CotangentState:
    m = as_matrix(m)
    return CotangentState(mobius(m, s.z), push_covector(m, s.z, s.xi))


def rotate_covector_perp(s: CotangentState) -> CotangentState:
    """Quarter turn ``xi -> -1j*xi``, the orthogonal partner used throughout."""
    if np.any(np.abs(s.xi) == 0):
        raise DomainError("zero covector has no orthogonal partner")
    return CotangentState(s.z, -1j * s.xi)


def cometric_pairing(z: ArrayLike, a: ArrayLike, b: ArrayLike) -> ArrayLike:
    """Inner product of two complex-encoded covectors at ``z``."""
    return np.imag(z) ** 2 * np.real(np.conj(a) * b)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def frame_to_state(f) -> CotangentState:
    """Base point ``f(i)`` and covector ``i * conj(c i + d)**2`` (always unit)."""
    f = as_matrix(f)
    a, b, c, d = f[..., 0, 0], f[..., 0, 1], f[..., 1, 0], f[..., 1, 1]
    w = c * 1j + d
    z = (a * 1j + b) / w
    xi = 1j * np.conj(w) ** 2
    return CotangentState(z, xi)


def state_to_frame(s: CotangentState, tol: float = 1e-9) -> np.ndarray:
    z = np.asarray(s.z, dtype=complex)
    xi = np.asarray(s.xi, dtype=complex)
    y = z.imag
    if np.any(np.abs(y * np.abs(xi) - 1.0) > tol):
        raise DomainError("state_to_frame needs a unit covector")
    theta = 0.5 * (np.angle(xi) - np.pi / 2)
    c, sn = np.cos(theta), np.sin(theta)
    ry = np.sqrt(y)
    out = np.empty(z.shape + (2, 2))
    # [[sqrt y, x/sqrt y], [0, 1/sqrt y]] @ rotation(theta)
    out[..., 0, 0] = ry * c - z.real / ry * sn
    out[..., 0, 1] = ry * sn + z.real / ry * c
    out[..., 1, 0] = -sn / ry
    out[..., 1, 1] = c / ry
    return out


def geodesic_flow_exact(f, t) -> np.ndarray:
    return matmul(as_matrix(f), geodesic_matrix(t))


def horocycle_flow(f, s, branch: Branch = "unstable") -> np.ndarray:
    if branch == "unstable":
        n = unstable_matrix(s)
    elif branch == "stable":
        n = stable_matrix(s)
    else:
        raise ValueError(f"unknown horocycle branch {branch!r}")
    return matmul(as_matrix(f), n)


def sl2_log_norm2(m: np.ndarray) -> np.ndarray:
    """Squared Frobenius norm of the Lie-algebra logarithm of ``+-m``.

    Elements with trace below -2 (no real log) and negative trace elements are
    handled by the sign ambiguity: we use ``|trace|``.
    """
    tau = np.abs(m[..., 0, 0] + m[..., 1, 1])
    sign = np.where(m[..., 0, 0] + m[..., 1, 1] < 0, -1.0, 1.0)[..., None, None]
    x = sign * m - 0.5 * tau[..., None, None] * np.eye(2)
    half = 0.5 * tau
    # log(M) = phi(M - tau/2 I) with phi = theta/sin(theta) (elliptic) or
    # lambda/sinh(lambda) (hyperbolic), where cos(theta) or cosh(lambda) = tau/2
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = np.arccosh(np.maximum(half, 1.0))
        th = np.arccos(np.minimum(half, 1.0))
        hyp = np.where(lam > 1e-8, lam / np.sinh(lam), 1.0 - lam ** 2 / 6)
        ell = np.where(th > 1e-8, th / np.sin(th), 1.0 + th ** 2 / 6)
    factor = np.where(half >= 1.0, hyp, ell)
    return factor ** 2 * np.sum(x * x, axis=(-2, -1))


def frame_distance(f1, f2) -> np.ndarray:
    """Left-invariant distance between frames (Sasaki-normalized).

    ``sqrt(2) * |log(f1^{-1} f2)|_F``, which is exact for points on one
    one-parameter subgroup and locally equivalent to the Sasaki distance.
    It is invariant under the deck group since it is left-invariant.
    """
    rel = np.matmul(sl2_inverse(as_matrix(f1)), as_matrix(f2))
    return np.sqrt(2.0 * sl2_log_norm2(rel))


@dataclass(frozen=True)
class CurvatureConstants:
    """Riccati values and expansion constants for curvature -1."""

    U_u: float = 1.0
    U_s: float = -1.0
    U_plus: float = 1.0
    U_minus: float = 1.0

    @property
    def gamma_c(self) -> float:
        return self.U_minus / (self.U_plus + self.U_minus)


def orientation_self_test(sigma: float = 1e-6, t_max: float = 5.0) -> float:
    """Measured log-slope of unstable-horocycle separation under the geodesic flow.

    Also checks that the unstable base velocity is dual to ``rotate_covector_perp``.
    Returns the slope (should be +1).
    """
    f = state_to_frame(CotangentState(0.3 + 1.7j, np.exp(0.4j) / 1.7))
    s = frame_to_state(f)
    h = 1e-7
    z1 = frame_to_state(horocycle_flow(f, h, "unstable")).z
    vel = (z1 - s.z) / h
    perp = rotate_covector_perp(s)
    dual = np.imag(s.z) ** 2 * perp.xi
    if abs(vel - dual) > 1e-4 * abs(dual):
        raise AssertionError("orthogonal covector disagrees with the unstable horocycle")
    g = horocycle_flow(f, sigma, "unstable")
    ts = np.linspace(0.0, t_max, 11)
    d = [frame_distance(geodesic_flow_exact(f, t), geodesic_flow_exact(g, t)) for t in ts]
    slope = np.polyfit(ts, np.log(d), 1)[0]
    return float(slope)
