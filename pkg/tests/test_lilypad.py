import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pareto_lilypads import env, geometry, lilypad
from pareto_lilypads.errors import HorizonExceeded, InvalidInput

P12 = env.derive_exponents(1, 2)  # q = 1
P24 = env.derive_exponents(2, 4)  # q = 1, gamma = 3/4


def custom(params, pts, marks, delta, R=None):
    return env.make_point_set(params, np.asarray(pts, dtype=float).reshape(-1, params.d), marks, delta, R)


@pytest.fixture
def two_point():
    return lilypad.solve_hitting(custom(P12, [1.0, 4.0], [2.0, 8.0], 0.5), 0.5)


class TestWorkedExamples:
    def test_empty(self):
        sol = lilypad.solve_hitting(custom(P12, [], [], 0.5, R=1), 0.5)
        assert list(sol.H) == [0.0]
        assert lilypad.hitting_at(sol, [3.0]) == 6.0
        assert lilypad.hitting_at(sol, [0.0]) == 0.0

    def test_one_point(self):
        sol = lilypad.solve_hitting(custom(P12, [1.0], [2.0], 0.5), 0.5)
        assert sol.H[1] == 2.0

    def test_two_point_hitting(self, two_point):
        assert two_point.H[1] == 2.0 and two_point.H[2] == 3.5
        assert list(two_point.pred) == [-1, 0, 1]
        assert lilypad.hitting_at(two_point, [6.0]) == 3.75

    def test_particles(self, two_point):
        assert lilypad.particles_at(two_point, [1.0], 4.0) == 4.0
        assert lilypad.particles_at(two_point, [6.0], 4.0) == 2.0
        assert np.all(lilypad.particles_many(two_point, np.linspace(-5, 9, 50)[:, None], 0.0) == 0)

    def test_support(self, two_point):
        s0 = lilypad.support_at(two_point, 0.0)
        assert s0.radii.tolist() == [0.0] and s0.centers.tolist() == [[0.0]]
        s1 = lilypad.support_at(two_point, 1.0)
        assert s1.centers.tolist() == [[0.0]] and s1.radii.tolist() == [0.5]
        s4 = lilypad.support_at(two_point, 4.0)
        assert s4.centers.ravel().tolist() == [0.0, 1.0, 4.0]
        assert s4.radii.tolist() == [2.0, 4.0, 4.0]
        assert geometry._merge_intervals(s4) == [[-3.0, 8.0]]

    def test_maximizer(self, two_point):
        assert lilypad.maximizer(two_point, 0.0).point is None
        tie = lilypad.maximizer(two_point, 4.0)
        assert tie.point.pos == (4.0,) and tie.value == 4.0 and tie.near_tie_gap == 0.0
        early = lilypad.maximizer(two_point, 3.0)
        assert early.point.pos == (1.0,) and early.value == 2.0

    def test_lexicographic_tie_break(self):
        sol = lilypad.solve_hitting(custom(P24, [[1, 0], [0, 1]], [2.0, 2.0], 0.5), 0.5)
        assert lilypad.maximizer(sol, 5.0).point.pos == (0.0, 1.0)

    def test_brute_force(self):
        s = custom(P12, [1.0, 4.0], [2.0, 8.0], 0.5)
        assert lilypad.brute_force_hitting(s, 0.5, [6.0]) == 3.75
        assert lilypad.brute_force_hitting(custom(P12, [], [], 0.5, R=1), 0.5, [3.0]) == 6.0


class TestErrors:
    def test_mark_below_delta(self):
        with pytest.raises(InvalidInput):
            lilypad.solve_hitting(custom(P12, [1.0], [0.4], 0.3), 0.5)

    @pytest.mark.parametrize("horizon", [0.0, -1.0])
    def test_bad_horizon(self, horizon):
        with pytest.raises(InvalidInput):
            lilypad.solve_hitting(custom(P12, [1.0], [2.0], 0.5), 0.5, horizon)

    def test_horizon_exceeded(self):
        sol = lilypad.solve_hitting(custom(P12, [1.0, 4.0], [2.0, 8.0], 0.5), 0.5, horizon=2.5)
        assert not sol.complete and sol.H[1] == 2.0 and math.isinf(sol.H[2])
        assert lilypad.hitting_at(sol, [1.5]) == 2.25
        with pytest.raises(HorizonExceeded) as info:
            lilypad.hitting_at(sol, [6.0])
        assert info.value.required > 2.5
        with pytest.raises(HorizonExceeded):
            lilypad.support_at(sol, 3.0)

    def test_brute_force_refuses_large_sets(self):
        s = custom(P12, np.arange(1, 10), np.full(9, 2.0), 0.5)
        with pytest.raises(InvalidInput):
            lilypad.brute_force_hitting(s, 0.5, [0.0])


class TestBounds:
    def test_error_bound_example(self):
        params = env.ModelParams(d=1, alpha=3.0, q=1.0, gamma=2 / 3)
        eb = lilypad.delta_error_bound(params, 1e-3, 1.0)
        expected = 4 * 0.1 / (1 - 2 ** (-1 / 3))
        assert eb.epsilon == pytest.approx(expected, rel=1e-12)
        assert eb.epsilon == pytest.approx(1.9387, abs=5e-4)

    def test_error_bound_validity(self):
        assert not lilypad.delta_error_bound(P24, 0.05, 1.0).valid
        assert lilypad.delta_error_bound(P24, 5e-4, 1.0).valid
        assert not lilypad.delta_error_bound(P24, 5e-4, 1e-4).valid

    @given(st.floats(1e-6, 1), st.floats(1e-6, 1))
    def test_error_bound_monotone(self, a, b):
        lo, hi = sorted((a, b))
        e_lo = lilypad.delta_error_bound(P24, lo, 1).epsilon
        e_hi = lilypad.delta_error_bound(P24, hi, 1).epsilon
        assert e_lo <= e_hi
        if hi > lo * (1 + 1e-9):
            assert e_lo < e_hi

    def test_auto_radius_example(self):
        assert lilypad.auto_radius(P24, 0.5, 1.0, 0.1) == pytest.approx(1.1**4, rel=1e-12)

    def test_auto_radius_floor(self):
        assert lilypad.auto_radius(P24, 0.5, 1e-9) == 1.0

    @given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1e-4, 2))
    def test_auto_radius_monotone_and_minimal(self, t1, t2, delta):
        lo, hi = sorted((t1, t2))
        R_lo, R_hi = lilypad.auto_radius(P24, delta, lo), lilypad.auto_radius(P24, delta, hi)
        assert R_lo <= R_hi
        target = hi * 1.1
        if R_hi > 1:
            assert lilypad.exterior_bound(P24, R_hi, delta) > target
            assert lilypad.exterior_bound(P24, R_hi * (1 - 1e-9), delta) <= target * (1 + 1e-9)


# ------------------------------------------------------------ property tests


@st.composite
def small_sets(draw, d=None, max_points=6):
    d = draw(st.sampled_from([1, 2])) if d is None else d
    params = env.derive_exponents(d, 2 * d)
    n = draw(st.integers(0, max_points))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    delta = float(rng.uniform(0.1, 1.0))
    pos = rng.uniform(-3, 3, size=(n, d))
    marks = delta * (1 - rng.random(n)) ** -0.5
    return custom(params, pos, marks, delta, R=3 * d), delta, rng


@settings(max_examples=150, deadline=None)
@given(small_sets())
def test_oracle_equivalence(data):
    s, delta, rng = data
    sol = lilypad.solve_hitting(s, delta)
    for z in rng.uniform(-4, 4, size=(3, s.params.d)):
        a = lilypad.hitting_at(sol, z)
        b = lilypad.brute_force_hitting(s, delta, z)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


@settings(max_examples=100, deadline=None)
@given(small_sets(max_points=15))
def test_predecessor_invariant(data):
    s, delta, _ = data
    sol = lilypad.solve_hitting(s, delta)
    q = s.params.q
    pos, spd = sol.node_pos, sol.node_speed
    assert sol.H[0] == 0.0
    for a in range(1, len(sol.H)):
        b = sol.pred[a]
        assert sol.H[a] == pytest.approx(sol.H[b] + q * np.abs(pos[a] - pos[b]).sum() / spd[b], rel=1e-13)
        assert sol.H[b] <= sol.H[a]


@settings(max_examples=100, deadline=None)
@given(small_sets(max_points=15), st.floats(0.2, 5.0))
def test_scaling_covariance(data, c):
    s, delta, rng = data
    scaled = custom(s.params, s.positions, s.marks * c, delta * c, s.window_radius)
    a = lilypad.solve_hitting(s, delta)
    b = lilypad.solve_hitting(scaled, delta * c)
    assert np.allclose(b.H * c, a.H, rtol=1e-12, atol=0)
    Z = rng.uniform(-4, 4, size=(20, s.params.d))
    assert np.allclose(lilypad.hitting_many(b, Z) * c, lilypad.hitting_many(a, Z), rtol=1e-12, atol=0)


@settings(max_examples=100, deadline=None)
@given(small_sets(max_points=15))
def test_lipschitz(data):
    s, delta, rng = data
    sol = lilypad.solve_hitting(s, delta)
    Z1 = rng.uniform(-4, 4, size=(100, s.params.d))
    Z2 = Z1 + rng.normal(scale=0.5, size=Z1.shape)
    lhs = np.abs(lilypad.hitting_many(sol, Z1) - lilypad.hitting_many(sol, Z2))
    rhs = s.params.q / delta * np.abs(Z1 - Z2).sum(axis=1)
    assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(small_sets(max_points=10), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 5))
def test_adding_point_never_increases(data, x, y, mark):
    s, delta, rng = data
    new = np.array([x, y][: s.params.d])
    if any(np.array_equal(new, p) for p in s.positions):
        return
    bigger = custom(s.params, np.vstack([s.positions, new]), np.append(s.marks, max(mark, delta)), delta, s.window_radius)
    Z = rng.uniform(-4, 4, size=(30, s.params.d))
    a = lilypad.hitting_many(lilypad.solve_hitting(s, delta), Z)
    b = lilypad.hitting_many(lilypad.solve_hitting(bigger, delta), Z)
    assert np.all(b <= a + 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.3, 0.8))
def test_delta_monotone(seed, delta):
    s = env.sample_poisson_env(P24, 2.0, delta / 2, seed)
    fine = lilypad.solve_hitting(s, delta / 2)
    coarse = lilypad.solve_hitting(s.above(delta), delta)
    Z = np.random.default_rng(seed).uniform(-2, 2, size=(50, 2))
    assert np.all(lilypad.hitting_many(fine, Z) >= lilypad.hitting_many(coarse, Z) - 1e-12)


@settings(max_examples=60, deadline=None)
@given(small_sets(max_points=12), st.floats(0, 6), st.floats(0, 3))
def test_support_identity_and_nesting(data, t, dt):
    s, delta, rng = data
    sol = lilypad.solve_hitting(s, delta)
    Z = rng.uniform(-5, 5, size=(200, s.params.d))
    h = lilypad.hitting_many(sol, Z)
    S1 = lilypad.support_at(sol, t)
    member = S1.contains(Z, slack=1e-12)
    near = np.abs(h - t) <= 1e-9
    assert np.all((member == (h <= t)) | near)
    S2 = lilypad.support_at(sol, t + dt)
    assert np.all(~member | S2.contains(Z, slack=1e-12))


@settings(max_examples=60, deadline=None)
@given(small_sets(max_points=12), st.floats(0, 6), st.floats(0, 3))
def test_particle_field_properties(data, t, dt):
    s, delta, rng = data
    sol = lilypad.solve_hitting(s, delta)
    Z = rng.uniform(-5, 5, size=(100, s.params.d))
    m1 = lilypad.particles_many(sol, Z, t)
    m2 = lilypad.particles_many(sol, Z, t + dt)
    assert np.all(m1 >= 0) and np.all(m2 >= m1 - 1e-12)
    W = Z + rng.normal(scale=0.3, size=Z.shape)
    assert np.all(np.abs(m1 - lilypad.particles_many(sol, W, t)) <= s.params.q * np.abs(Z - W).sum(axis=1) + 1e-12)
    best = lilypad.maximizer(sol, t)
    top = max(m1.max(), 0.0)
    assert best.value >= top - 1e-12
    assert (best.value == 0) == (best.point is None)


def test_solution_round_trip(two_point):
    back = lilypad.LilypadSolution.from_dict(two_point.to_dict())
    assert np.array_equal(back.H, two_point.H)
    assert lilypad.hitting_at(back, [6.0]) == 3.75


# -------------------------------------------------- thinning certificate


@pytest.mark.parametrize("seed", range(12))
def test_thinned_solution_matches_full_sample(seed):
    delta, t_max = 0.3, 1.5
    R = lilypad.auto_radius(P24, delta, t_max)
    full = env.sample_poisson_env(P24, R, delta, seed)
    thin = env.sample_poisson_env(P24, R, delta, seed, env.Thinning(1.0))
    ref = lilypad.solve_hitting(full, delta, horizon=t_max)
    sol = lilypad.solve_environment(thin, delta, t_max)
    assert sol.certified
    Z = np.random.default_rng(seed).uniform(-0.7, 0.7, size=(300, 2))
    h_ref = lilypad._candidates(ref, Z).min(axis=1)
    ok = h_ref <= t_max
    assert ok.sum() > 30
    h = lilypad.hitting_many(sol, Z[ok])
    assert np.allclose(h, h_ref[ok], rtol=1e-12, atol=1e-12)
    for t in (1.0, t_max):
        a, b = lilypad.maximizer(ref, t), lilypad.maximizer(sol, t)
        assert a.point == b.point
        assert np.allclose(lilypad.particles_many(ref, Z, t), lilypad.particles_many(sol, Z, t), atol=1e-12)


def test_thinning_certificate_flags_unsafe_floor():
    delta, t_max = 0.3, 1.5
    R = lilypad.auto_radius(P24, delta, t_max)
    bad = env.sample_poisson_env(P24, R, delta, 1, env.Thinning(50.0))
    sol = lilypad.solve_hitting(bad, delta, t_max)
    assert lilypad.thinning_violations(sol)
