import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horoeq.core import (
    CotangentState, CurvatureConstants, DomainError, MoebiusMap, apply_moebius, cometric_pairing, det,
    frame_distance, frame_to_state, geodesic_flow_exact, geodesic_matrix, horocycle_flow, hyperbolic_distance,
    matmul, mobius, orientation_self_test, projective_distance, rotate_covector_perp, stable_matrix,
    state_to_frame, unstable_matrix,
)

finite = dict(allow_nan=False, allow_infinity=False)
coords = st.floats(-3, 3, **finite)
heights = st.floats(0.05, 5, **finite)
angles = st.floats(-math.pi, math.pi, **finite)


def random_frames(n, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, 2, 2))
    d = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    m[d < 0, :, 0] *= -1
    return m / np.sqrt(np.abs(d))[:, None, None]


@st.composite
def sl2(draw):
    a, b, c = draw(coords), draw(coords), draw(coords)
    if abs(a) < 0.1:
        a = 0.1 if a >= 0 else -0.1
    return np.array([[a, b], [c, (1 + b * c) / a]])


@st.composite
def states(draw):
    z = complex(draw(coords), draw(heights))
    r = draw(st.floats(0.1, 3, **finite))
    return CotangentState(z, r * np.exp(1j * draw(angles)) / z.imag)


# -- distance ----------------------------------------------------------------

def test_distance_examples():
    assert hyperbolic_distance(1j, 1j) == 0.0
    assert hyperbolic_distance(1j, 2j) == pytest.approx(math.log(2), abs=1e-15)
    assert hyperbolic_distance(1j, 1 + 1j) == pytest.approx(math.acosh(1.5), abs=1e-15)


def test_distance_rejects_lower_half_plane():
    with pytest.raises(DomainError):
        hyperbolic_distance(1j, 1 - 1j)
    with pytest.raises(DomainError):
        CotangentState(0.5 + 0j, 1.0)


@given(sl2(), states(), states())
def test_isometry_preserves_distance_and_norm(m, s1, s2):
    t1, t2 = apply_moebius(m, s1), apply_moebius(m, s2)
    d = hyperbolic_distance(s1.z, s2.z)
    assert hyperbolic_distance(t1.z, t2.z) == pytest.approx(d, abs=1e-9 * max(1, math.exp(d)))
    assert t1.norm == pytest.approx(s1.norm, rel=1e-12)


# -- Moebius maps ------------------------------------------------------------

def test_identity_and_inversion_map():
    s = CotangentState(0.2 + 1.3j, 0.4 - 0.7j)
    same = apply_moebius(np.eye(2), s)
    assert same.z == s.z and same.xi == s.xi
    flip = apply_moebius(np.array([[0.0, -1.0], [1.0, 0.0]]), CotangentState(1j, 0.3 + 0.8j))
    assert flip.z == pytest.approx(1j, abs=1e-15)
    assert flip.xi == pytest.approx(-(0.3 + 0.8j), abs=1e-15)


def test_pushforward_is_inverse_conjugate_derivative():
    m = np.array([[2.0, 1.0], [3.0, 2.0]])
    s = CotangentState(0.4 + 0.9j, 1.1 + 0.2j)
    deriv = 1 / (m[1, 0] * s.z + m[1, 1]) ** 2
    assert apply_moebius(m, s).xi == pytest.approx(s.xi / np.conj(deriv), rel=1e-14)


@given(sl2(), sl2(), sl2())
def test_composition_associative_and_unimodular(a, b, c):
    A, B, C = MoebiusMap(a), MoebiusMap(b), MoebiusMap(c)
    left, right = (A @ B) @ C, A @ (B @ C)
    for m in (A @ B, left):
        # det is evaluated in floating point, so its own round-off scales with |ad| + |bc|
        cond = abs(m.mat[0, 0] * m.mat[1, 1]) + abs(m.mat[0, 1] * m.mat[1, 0])
        assert abs(det(m.mat) - 1) <= 1e-12 * max(1.0, cond / 4)
    scale = np.max(np.abs(left.mat))
    assert projective_distance(left.mat, right.mat) <= 1e-12 * max(1.0, scale ** 2)


def test_identity_map_fixes_points():
    z = np.array([0.1 + 0.2j, -3 + 4j, 1j])
    assert np.max(np.abs(MoebiusMap.identity()(z) - z)) <= 1e-12


def test_negated_matrix_is_same_map():
    m = MoebiusMap.from_entries(2.0, 1.0, 1.0, 1.0)
    neg = MoebiusMap(-m.mat)
    assert m.is_close(neg)
    assert m(0.3 + 0.7j) == pytest.approx(neg(0.3 + 0.7j), abs=1e-15)


def test_inverse_composes_to_identity():
    m = MoebiusMap.from_entries(1.5, -0.3, 2.0, 0.26)
    assert (m @ m.inverse()).is_close(MoebiusMap.identity(), 1e-12)


# -- covector rotation -------------------------------------------------------

@given(states())
def test_quarter_turn(s):
    p = rotate_covector_perp(s)
    assert rotate_covector_perp(p).xi == -s.xi
    assert p.norm == pytest.approx(s.norm, rel=1e-14)
    assert abs(cometric_pairing(s.z, s.xi, p.xi)) <= 1e-14 * s.norm ** 2


def test_quarter_turn_rejects_zero():
    with pytest.raises(DomainError):
        rotate_covector_perp(CotangentState(1j, 0.0))


# -- frames ------------------------------------------------------------------

def test_identity_frame_state():
    s = frame_to_state(np.eye(2))
    assert s.z == pytest.approx(1j, abs=1e-15)
    assert s.xi == pytest.approx(1j, abs=1e-15)


def test_frame_round_trip_1000():
    f = random_frames(1000, seed=3)
    s = frame_to_state(f)
    assert np.max(np.abs(s.norm - 1)) <= 1e-12
    back = state_to_frame(s)
    assert np.max(projective_distance(back, f)) <= 1e-10


@given(states())
def test_state_round_trip(s):
    u = s.normalized()
    back = frame_to_state(state_to_frame(u))
    assert back.z == pytest.approx(u.z, rel=1e-10)
    assert back.xi == pytest.approx(u.xi, rel=1e-10)


def test_state_to_frame_rejects_non_unit():
    with pytest.raises(DomainError):
        state_to_frame(CotangentState(1j, 1.01j))


def test_frames_transform_by_left_multiplication():
    f = random_frames(50, seed=4)
    g = np.array([[2.0, 1.0], [1.0, 1.0]])
    lhs = frame_to_state(matmul(g, f))
    rhs = apply_moebius(g, frame_to_state(f))
    assert np.max(np.abs(lhs.z - rhs.z)) <= 1e-12
    assert np.max(np.abs(lhs.xi - rhs.xi)) <= 1e-11


# -- flows -------------------------------------------------------------------

def test_geodesic_flow_from_identity():
    for t in (0.0, 0.5, -1.2, 3.0):
        assert mobius(geodesic_flow_exact(np.eye(2), t), 1j) == pytest.approx(math.exp(t) * 1j, rel=1e-14)
    assert np.array_equal(geodesic_flow_exact(np.eye(2), 0.0), np.eye(2))


def test_geodesic_flow_inverse():
    f = random_frames(20, seed=5)
    back = geodesic_flow_exact(geodesic_flow_exact(f, 1.3), -1.3)
    assert np.max(projective_distance(back, f)) <= 1e-13 * np.max(np.abs(f)) ** 2


def test_geodesic_flow_moves_along_covector():
    # base point velocity at time 0 is the metric dual of the covector
    f = random_frames(10, seed=6)
    h = 1e-6
    s = frame_to_state(f)
    vel = (frame_to_state(geodesic_flow_exact(f, h)).z - frame_to_state(geodesic_flow_exact(f, -h)).z) / (2 * h)
    assert np.max(np.abs(vel - s.z.imag ** 2 * s.xi)) <= 1e-6 * np.max(np.abs(vel))


@settings(max_examples=200)
@given(st.floats(-10, 10, **finite), st.floats(-1e3, 1e3, **finite))
def test_flow_intertwining(t, s):
    lhs = matmul(geodesic_matrix(t), unstable_matrix(s * math.exp(t)))
    rhs = matmul(unstable_matrix(s), geodesic_matrix(t))
    scale = max(1.0, np.max(np.abs(lhs)))
    assert projective_distance(lhs, rhs) <= 1e-12 * scale
    lhs = matmul(geodesic_matrix(t), stable_matrix(s * math.exp(-t)))
    rhs = matmul(stable_matrix(s), geodesic_matrix(t))
    assert projective_distance(lhs, rhs) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_intertwining_on_frames():
    f = random_frames(10, seed=7)
    for t in (-2.0, 0.7, 4.0):
        a = geodesic_flow_exact(horocycle_flow(f, 0.3, "unstable"), t)
        b = horocycle_flow(geodesic_flow_exact(f, t), 0.3 * math.exp(t), "unstable")
        assert np.max(projective_distance(a, b)) <= 1e-12 * np.max(np.abs(a)) ** 2


def test_horocycle_zero_and_bad_branch():
    f = random_frames(3, seed=8)
    assert np.max(np.abs(horocycle_flow(f, 0.0, "stable") - f)) <= 1e-15
    with pytest.raises(ValueError):
        horocycle_flow(f, 0.1, "sideways")


def _separation_slope(branch):
    f = random_frames(1, seed=9)[0]
    g = horocycle_flow(f, 1e-6, branch)
    ts = np.linspace(0, 5, 11)
    d = [frame_distance(geodesic_flow_exact(f, t), geodesic_flow_exact(g, t)) for t in ts]
    return np.polyfit(ts, np.log(d), 1)[0]


def test_unstable_expands_stable_contracts():
    assert _separation_slope("unstable") == pytest.approx(1.0, abs=0.05)
    assert _separation_slope("stable") == pytest.approx(-1.0, abs=0.05)
    assert orientation_self_test() == pytest.approx(1.0, abs=0.05)


def test_frame_distance_along_subgroups():
    f = random_frames(1, seed=10)[0]
    assert frame_distance(f, geodesic_flow_exact(f, 0.37)) == pytest.approx(0.37, rel=1e-10)
    assert frame_distance(f, f) == pytest.approx(0.0, abs=1e-7)
    # left invariance
    g = random_frames(1, seed=11)[0]
    a = frame_distance(f, horocycle_flow(f, 0.2))
    b = frame_distance(matmul(g, f), matmul(g, horocycle_flow(f, 0.2)))
    assert a == pytest.approx(b, rel=1e-8)


def test_curvature_constants():
    c = CurvatureConstants()
    assert c.U_u - c.U_s == 2.0
    assert c.gamma_c == 0.5 == c.U_minus / (c.U_plus + c.U_minus)
