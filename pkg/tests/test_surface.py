import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horoeq.core import CotangentState, apply_moebius, cosh_distance, mobius, projective_distance, renormalize
from horoeq.surface import (
    CENTER, ConfigurationError, FuchsianSurface, ReductionError, from_disk, load_surface, monte_carlo_area,
    reduce_to_domain, save_surface, to_disk,
)

finite = dict(allow_nan=False, allow_infinity=False)
SYSTOLE_HALF = math.acosh(1 + math.sqrt(2))


def test_area_is_four_pi(bolza):
    assert bolza.area == pytest.approx(4 * math.pi, abs=1e-6)


def test_monte_carlo_area(bolza):
    area, err = monte_carlo_area(bolza, n=200_000, seed=1)
    assert abs(area - 4 * math.pi) <= 4 * err


def test_generator_traces(bolza):
    # cosh(l/2) = |trace|/2 with l = 2 arccosh(1 + sqrt 2)
    expected = 2 * math.cosh(SYSTOLE_HALF)
    assert expected == pytest.approx(2 * (1 + math.sqrt(2)), rel=1e-15)
    traces = np.abs(bolza.generators[:, 0, 0] + bolza.generators[:, 1, 1])
    assert np.allclose(traces, expected, rtol=1e-13)


def test_injectivity_radius(bolza):
    assert bolza.injectivity_radius == pytest.approx(SYSTOLE_HALF, abs=1e-10)
    assert bolza.injectivity_radius == pytest.approx(1.5286, abs=1e-4)


def test_relator_and_inverses(bolza):
    assert projective_distance(bolza.relator_product(), np.eye(2)) <= 1e-9
    for k, j in enumerate(bolza.inverse_index):
        assert projective_distance(bolza.generators[k] @ bolza.generators[j], np.eye(2)) <= 1e-12
    report = bolza.validate()
    assert report["min_trace"] > 2


def test_regular_octagon(bolza):
    kinks = np.sort(bolza.kink_angles())
    assert len(kinks) == 8
    gaps = np.diff(np.concatenate([kinks, [kinks[0] + 2 * np.pi]]))
    assert np.allclose(gaps, np.pi / 4, atol=1e-9)
    # interior angle pi/4 at each vertex fixes the circumradius: cosh R = cot^2(pi/8)
    assert math.cosh(bolza.circumradius) == pytest.approx(1 / math.tan(math.pi / 8) ** 2, rel=1e-9)


def test_interior_point_unchanged(bolza):
    s = CotangentState(0.1 + 1.2j, 0.5 + 0.1j)
    red = reduce_to_domain(bolza, s)
    assert red.word == ()
    assert red.state.z == s.z and red.state.xi == s.xi


def test_generator_image_reduces_back(bolza):
    s = CotangentState(0.1 + 1.2j, 0.5 + 0.1j)
    for k, g in enumerate(bolza.generators):
        red = reduce_to_domain(bolza, apply_moebius(g, s))
        assert red.word == (int(bolza.inverse_index[k]),)
        assert red.state.z == pytest.approx(s.z, abs=1e-12)
        assert red.state.xi == pytest.approx(s.xi, abs=1e-12)


def random_word(bolza, rng, length):
    m = np.eye(2)
    for k in rng.integers(0, len(bolza.generators), size=length):
        m = renormalize(bolza.generators[k] @ m)
    return m


def test_random_words_round_trip(bolza):
    rng = np.random.default_rng(0)
    for _ in range(50):
        w = from_disk(0.6 * rng.random() * np.exp(2j * np.pi * rng.random()))
        s = CotangentState(w, np.exp(1j * rng.uniform(0, 2 * np.pi)) / w.imag)
        moved = apply_moebius(random_word(bolza, rng, 5), s)
        red = reduce_to_domain(bolza, moved)
        assert bool(bolza.contains(red.state.z))
        assert red.state.norm == pytest.approx(moved.norm, abs=1e-10)
        back = apply_moebius(np.linalg.inv(red.element(bolza)), red.state)
        assert back.z == pytest.approx(moved.z, rel=1e-9)
        assert back.xi == pytest.approx(moved.xi, rel=1e-9)


def test_vectorized_matches_scalar(bolza):
    rng = np.random.default_rng(1)
    z = from_disk(0.97 * np.sqrt(rng.random(200)) * np.exp(2j * np.pi * rng.random(200)))
    xi = np.exp(1j * rng.uniform(0, 6.3, 200)) / z.imag
    zr, xir, gamma, steps = bolza.reduce(z, xi)
    assert np.all(bolza.contains(zr))
    assert np.max(np.abs(mobius(gamma, z) - zr)) <= 1e-9
    for k in range(0, 200, 20):
        red = reduce_to_domain(bolza, CotangentState(z[k], xi[k]))
        assert red.state.z == pytest.approx(zr[k], abs=1e-9)
        assert len(red.word) == steps[k]


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 0.995, **finite), st.floats(0, 2 * math.pi, **finite), st.integers(0, 7))
def test_reduction_idempotent_and_equivariant(bolza, r, phi, k):
    z = complex(from_disk(r * np.exp(1j * phi)))
    s = CotangentState(z, 1j / z.imag)
    once = reduce_to_domain(bolza, s).state
    twice = reduce_to_domain(bolza, once)
    assert twice.word == ()
    moved = reduce_to_domain(bolza, apply_moebius(bolza.generators[k], s)).state
    # both land in the closed domain; off the boundary they coincide
    if np.all(bolza.contains(once.z, tol=-1e-6)):
        assert moved.z == pytest.approx(once.z, abs=1e-9)
        assert moved.xi == pytest.approx(once.xi, abs=1e-9 * abs(once.xi))


def test_reduction_iteration_cap():
    from horoeq.surface import build_bolza
    surf = build_bolza()
    surf.max_reduction_steps = 2
    far = from_disk(0.99999 + 0j)
    with pytest.raises(ReductionError):
        reduce_to_domain(surf, CotangentState(far, 1j))
    with pytest.raises(ReductionError):
        surf.reduce(np.array([far]))


def test_translate_ball_small(bolza):
    assert len(bolza.translate_ball(0.0)) == 1
    assert len(bolza.translate_ball(0.1)) == 1
    assert projective_distance(bolza.translate_ball(0.0)[0], np.eye(2)) == 0


def test_translate_ball_above_systole(bolza):
    radius = 2 * SYSTOLE_HALF + 0.01
    ball = bolza.translate_ball(radius)
    # independent enumeration of all words of length <= 2
    gens = list(bolza.generators)
    words = [np.eye(2)] + gens + [a @ b for a in gens for b in gens]
    near = []
    for w in words:
        if math.acosh(max(float(cosh_distance(mobius(w, CENTER), CENTER)), 1)) <= radius:
            if not any(projective_distance(w, v) < 1e-8 for v in near):
                near.append(w)
    assert len(ball) == len(near) == 9
    for w in near:
        assert min(projective_distance(w, b) for b in ball) < 1e-9


def test_translate_ball_closed_under_inverse(bolza):
    ball = bolza.translate_ball(4.0)
    for b in ball:
        assert min(projective_distance(np.linalg.inv(b), c) for c in ball) < 1e-9


def test_translate_ball_cap(bolza):
    with pytest.raises(ConfigurationError):
        bolza.translate_ball(3.5 * bolza.injectivity_radius)


def test_disk_maps_inverse():
    w = np.array([0.0, 0.3 + 0.4j, -0.9j])
    assert np.allclose(to_disk(from_disk(w)), w, atol=1e-14)
    assert from_disk(0.0) == pytest.approx(CENTER)


def test_surface_file_round_trip(bolza, tmp_path):
    path = tmp_path / "bolza.json"
    save_surface(bolza, path)
    again = load_surface(path)
    assert again.area == pytest.approx(bolza.area, abs=1e-12)
    assert np.allclose(again.generators, bolza.generators, atol=1e-15)


def test_surface_file_rejects_bad_area(bolza, tmp_path):
    import json
    path = tmp_path / "bad.json"
    save_surface(bolza, path)
    data = json.loads(path.read_text())
    data["area"] = 10.0
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigurationError):
        load_surface(path)


def test_non_hyperbolic_generators_rejected(bolza):
    gens = bolza.generators.copy()
    inv = bolza.inverse_index
    with pytest.raises((ConfigurationError, ValueError)):
        FuchsianSurface(np.array([np.eye(2)] * 8) + gens * 0, inv).validate()
