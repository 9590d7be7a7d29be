"""Acceptance criteria 1 to 11, each reporting one PASS/FAIL line."""

import hashlib
import math
import time

import numpy as np
import pytest

from conftest import record
from pareto_lilypads import brw, cli, env, experiments, geometry, lilypad

P12 = env.derive_exponents(1, 2)
P13 = env.derive_exponents(1, 3)
P24 = env.derive_exponents(2, 4)


def lower_hitting(sol, Z):
    """``h`` at each probe where it is at most the solve horizon, ``inf`` elsewhere."""
    h = lilypad._candidates(sol, np.asarray(Z, dtype=float)).min(axis=1)
    return np.where(h <= sol.horizon, h, math.inf)


def in_diamonds(S, rng, n):
    """``n`` uniform points from randomly chosen balls of a 2-d support."""
    k = rng.integers(len(S), size=n)
    u, v = rng.uniform(-1, 1, (2, n))
    return S.centers[k] + S.radii[k, None] * np.stack([(u + v) / 2, (u - v) / 2], axis=1)


# ---------------------------------------------------------------- 1


def test_oracle_equivalence():
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 3))
        params = env.derive_exponents(d, d + float(rng.uniform(0.5, 3.0)))
        delta = float(rng.uniform(0.1, 1.0))
        n = int(rng.integers(0, 7))
        pos = rng.uniform(-3, 3, (n, d))
        marks = delta * rng.uniform(size=n) ** (-1 / params.alpha) * 1.5
        s = env.make_point_set(params, pos, marks, delta, 6.5)
        z = rng.uniform(-4, 4, d)
        got = lilypad.hitting_at(lilypad.solve_hitting(s, delta), z)
        ref = lilypad.brute_force_hitting(s, delta, z)
        worst = max(worst, abs(got - ref) / max(abs(ref), 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    record(1, ok, f"max rel err {worst:.2e} over 1000 instances in {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2


def test_worked_examples():
    one = lilypad.solve_hitting(env.make_point_set(P12, [[1.0]], [2.0], 0.5), 0.5)
    two = lilypad.solve_hitting(env.make_point_set(P12, [[1.0], [4.0]], [2.0, 8.0], 0.5), 0.5)
    tie = lilypad.maximizer(two, 4.0)
    errs = [abs(one.H[1] - 2.0), abs(two.H[1] - 2.0), abs(two.H[2] - 3.5), abs(lilypad.hitting_at(two, [6.0]) - 3.75)]
    ok = max(errs) <= 1e-12 and tie.point.pos == (4.0,) and tie.point.xi == 8.0
    record(2, ok, f"H(y1)={two.H[1]}, H(y2)={two.H[2]}, h(6)={lilypad.hitting_at(two, [6.0])}, tie at t=4 -> {tie.point.pos}")
    assert ok


# ---------------------------------------------------------------- 3


def test_pam_identity():
    start = time.perf_counter()
    T = 2.0
    pot = brw.BoxPotential.sample(P13, 10, 3)
    snaps = (0.25, 0.5, 0.75, 1.0)
    base = brw.BrwConfig(P13, T, 10, 1.0, snapshot_times=snaps, boundary="absorb")
    n = 10**4
    counts = np.empty((n, len(snaps), len(pot.xi)))
    for i in range(n):
        cfg = brw.BrwConfig(**{**base.__dict__, "seed": experiments.replicate_seed(3, i)})
        run = brw.simulate_brw(pot, cfg)
        assert not run.cap_reached
        counts[i] = run.counts
    near = [tuple(z) for z in pot.sites if abs(z).sum() <= 2]
    idx = pot.index()
    worst = 0.0
    for k, s in enumerate(snaps):
        u = brw.pam_expectation(pot, near, s * T)
        for z in near:
            col = counts[:, k, idx[z]]
            se = col.std(ddof=1) / math.sqrt(n)
            worst = max(worst, abs(col.mean() - u[z]) / se if se > 0 else (0.0 if col.mean() == u[z] else math.inf))
    elapsed = time.perf_counter() - start
    ok = worst <= 3.0 and elapsed < 300
    record(3, ok, f"max |mean - u| = {worst:.2f} SE over {len(near) * len(snaps)} (z, t) pairs, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 4, 5, 7

SMALL_DELTA = 5e-4
T_MAX = 2.5
R0, r0, K = 8.0, 0.05, 6
N_ENVS = 200


@pytest.fixture(scope="module")
def checked_envs():
    """Environments at cutoff delta/2 that pass both growth checks, solved at delta and delta/2."""
    out, tried, uncertified = [], 0, 0
    R = lilypad.auto_radius(P24, SMALL_DELTA / 2, T_MAX)
    seed = 0
    while len(out) < N_ENVS:
        s = env.sample_poisson_env(P24, R, SMALL_DELTA / 2, seed, experiments.DEFAULT_THINNING)
        seed += 1
        tried += 1
        if not (env.check_A1(s, R0).holds and env.check_A2(s, r0, K).holds):
            continue
        coarse = lilypad.solve_environment(s, SMALL_DELTA, T_MAX)
        fine = lilypad.solve_environment(s, SMALL_DELTA / 2, T_MAX)
        if not (coarse.certified and fine.certified):
            uncertified += 1
            continue
        out.append((seed - 1, coarse, fine))
    return out, tried, uncertified


def test_delta_sandwich(checked_envs):
    envs, tried, uncertified = checked_envs
    bound = lilypad.delta_error_bound(P24, SMALL_DELTA, r0)
    assert bound.valid
    violations = probes = 0
    for seed, coarse, fine in envs:
        rng = np.random.default_rng(seed)
        Z = in_diamonds(lilypad.support_at(fine, T_MAX), rng, 100)
        hc, hf = lower_hitting(coarse, Z), lower_hitting(fine, Z)
        tol = 1e-12 * np.maximum(hf, 1.0)
        violations += int(np.sum((hc > hf + tol) | (hf > hc + bound.epsilon + tol)))
        probes += len(Z)
    ok = violations == 0 and len(envs) == N_ENVS
    record(4, ok, f"{violations} violations on {probes} probes, {len(envs)} envs (tried {tried}, uncertified {uncertified}), eps={bound.epsilon:.3f}")
    assert ok


def test_lemma_bounds(checked_envs):
    envs, _, _ = checked_envs
    unit = geometry.unit_sphere_samples(2, 64)
    radii_out = (8.0, 12.0, 16.0, 24.0)
    radii_in = [r0 * 2.0**-k for k in range(K + 1)]
    violations = checks = 0
    for seed, coarse, fine in envs:
        rng = np.random.default_rng(seed)
        for sol in (coarse, fine):
            for R in radii_out:
                need = lilypad.exterior_bound(P24, R, sol.delta)
                assert need <= T_MAX
                h = np.minimum(lower_hitting(sol, R * unit), sol.horizon)
                violations += int(h.min() < need)
                checks += 1
            for r in radii_in:
                Z = np.concatenate([r * unit, in_diamonds(geometry.SupportSet([[0.0, 0.0]], [r]), rng, 64)])
                violations += int(lower_hitting(sol, Z).max() > lilypad.interior_bound(P24, r))
                checks += 1
    ok = violations == 0 and len(envs) == N_ENVS
    record(5, ok, f"{violations} violations in {checks} radius checks on {len(envs)} envs (R0={R0}, r0={r0}, K={K})")
    assert ok


def test_support_consistency(checked_envs):
    envs, _, _ = checked_envs
    bound = lilypad.delta_error_bound(P24, SMALL_DELTA, r0)
    t = 1.0
    mismatches = probes = nest_fail = dh_fail = 0
    worst_ratio = 0.0
    for seed, coarse, fine in envs[:50]:
        rng = np.random.default_rng(10**6 + seed)
        S = lilypad.support_at(coarse, t)
        Z = np.concatenate([rng.uniform(-2, 2, (100, 2)), in_diamonds(S, rng, 100) * (1 + rng.normal(scale=1e-3, size=(100, 1)))])
        inside = S.contains(Z, slack=1e-12)
        mismatches += int(np.sum(inside != (lower_hitting(coarse, Z) <= t + 1e-12)))
        probes += len(Z)
        for t1, t2 in ((0.5, 1.0), (1.0, 2.0), (2.0, T_MAX)):
            a, b = coarse.H <= t1, coarse.H <= t2
            r1 = coarse.node_speed * (t1 - coarse.H) / P24.q
            r2 = coarse.node_speed * (t2 - coarse.H) / P24.q
            nest_fail += int(np.any(a & ~b) or np.any(r1[a] > r2[a]))
        Sf = lilypad.support_at(fine, t)
        speed = max(coarse.node_speed[coarse.H <= t].max(), fine.node_speed[fine.H <= t].max())
        allowed = bound.epsilon * speed / P24.q + max(geometry.sampling_resolution(S, 16), geometry.sampling_resolution(Sf, 16))
        dh = geometry.hausdorff(S, Sf, K=16)
        worst_ratio = max(worst_ratio, dh / allowed)
        dh_fail += int(dh > allowed)
    ok = mismatches == 0 and nest_fail == 0 and dh_fail == 0
    record(7, ok, f"{mismatches}/{probes} membership mismatches, {nest_fail} nesting failures, {dh_fail} d_H failures (max d_H/allowed {worst_ratio:.2e})")
    assert ok


# ---------------------------------------------------------------- 6


def test_scaling_and_lipschitz():
    rng = np.random.default_rng(6)
    worst_scale = 0.0
    lip_bad = pairs = 0
    for seed in range(5):
        base = env.sample_poisson_env(P24, 2.0, 0.3, seed)
        sol = lilypad.solve_hitting(base, 0.3)
        Z = rng.uniform(-2, 2, (400, 2))
        h = lilypad.hitting_many(sol, Z)
        for c in (0.5, 3.0):
            scaled = env.make_point_set(P24, base.positions, c * base.marks, c * 0.3, base.window_radius)
            hc = lilypad.hitting_many(lilypad.solve_hitting(scaled, c * 0.3), Z)
            worst_scale = max(worst_scale, float(np.max(np.abs(hc * c - h) / np.maximum(h, 1e-300))))
        A = rng.uniform(-2, 2, (2000, 2))
        B = A + rng.normal(scale=rng.choice([0.01, 0.3, 1.5]), size=A.shape)
        ha, hb = lilypad.hitting_many(sol, A), lilypad.hitting_many(sol, B)
        gap = P24.q / 0.3 * np.abs(A - B).sum(axis=1)
        lip_bad += int(np.sum(np.abs(ha - hb) > gap * (1 + 1e-12) + 1e-12))
        pairs += len(A)
    ok = worst_scale <= 1e-12 and lip_bad == 0 and pairs >= 10**4
    record(6, ok, f"max scaling rel err {worst_scale:.1e}; {lip_bad} Lipschitz violations on {pairs} pairs")
    assert ok


# ---------------------------------------------------------------- 8

THETAS = (0.1, 0.5, 1.0, 2.0)


def test_ageing_trend():
    start = time.perf_counter()
    rep = experiments.estimate_ageing_poisson(P24, THETAS, 2000, 0.05, 8)
    half = experiments.estimate_ageing_poisson(P24, THETAS, 2000, 0.025, 8)
    elapsed = time.perf_counter() - start
    inside = all(0 < e < 1 for e in rep.estimates)
    separated = rep.ci_low[0] > rep.ci_high[-1]
    hw, hw2 = rep.half_widths(), half.half_widths()
    moves = [abs(a - b) for a, b in zip(rep.estimates, half.estimates)]
    robust = all(m < a + b for m, a, b in zip(moves, hw, hw2))
    ok = inside and separated and robust and elapsed < 600
    est = ", ".join(f"{e:.3f}" for e in rep.estimates)
    est2 = ", ".join(f"{e:.3f}" for e in half.estimates)
    record(8, ok, f"estimates [{est}] at delta=0.05, [{est2}] at 0.025; excluded {max(rep.excluded)}/{max(half.excluded)}; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 9


def test_discrete_to_poisson_convergence():
    start = time.perf_counter()
    rep = experiments.convergence_study(P24, [1e2, 1e8], 2000, 0.05, (1.0, 0.0), 2024)
    elapsed = time.perf_counter() - start
    ok = rep.values[0] > rep.values[1] and rep.values[1] <= 2 * rep.noise_floor and elapsed < 600
    record(9, ok, f"KS {rep.values[0]:.4f} (T=1e2) -> {rep.values[1]:.4f} (T=1e8), floor {rep.noise_floor:.4f}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 10


def brw_scale(T, runs=50):
    a, r = env.scaling_factors(T, P13)
    box = int(math.ceil(4 * r)) + 5
    errors, uncensored, capped = [], 0, 0
    for i in range(runs):
        env_seed = experiments.replicate_seed(10, i)
        pot = brw.BoxPotential.sample(P13, box, env_seed)
        ps = env.sample_lattice_env(P13, T, box / r, 1 / a, env_seed)
        sol = lilypad.solve_hitting(ps, 1 / a)
        cfg = brw.BrwConfig(P13, T, box, 3.0, particle_cap=10**6, seed=experiments.replicate_seed(11, i))
        run = brw.simulate_brw(pot, cfg)
        cmp_ = brw.compare_fields(brw.rescale_run(run, cfg), sol, 1.0, ())
        # a capped run still observes every window site it hit before stopping;
        # unobserved window sites with h <= t_max are what counts as censoring
        uncensored += int(cmp_.censored == 0)
        capped += int(run.cap_reached)
        errors.append(cmp_.hit_sup)
    return float(np.median(errors)), uncensored / runs, capped / runs


def test_brw_against_lilypad():
    start = time.perf_counter()
    m1, u1, c1 = brw_scale(3.0)
    m2, u2, c2 = brw_scale(5.0)
    elapsed = time.perf_counter() - start
    ok = m2 < m1 and u1 >= 0.8 and u2 >= 0.8 and elapsed < 1800
    record(10, ok, f"median sup|H_T - h| {m1:.3f} (T=3) -> {m2:.3f} (T=5); uncensored {u1:.0%}/{u2:.0%} (cap reached {c1:.0%}/{c2:.0%}); {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 11


def test_cli_determinism(tmp_path):
    def digest(folder):
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}

    commands = {
        "env-sample": ["--R", "2", "--delta", "0.3", "--seed", "3"],
        "lilypad": ["--delta", "0.2", "--times", "0.5,1", "--t-max", "2", "--grid-R", "0.3", "--svg", "--seed", "3"],
        "brw": ["--T", "3", "--box-radius", "20", "--replicates", "4", "--seed", "3"],
        "ageing": ["--M", "8", "--delta", "0.1", "--seed", "3"],
        "converge": ["--M", "16", "--delta", "0.1", "--seed", "3"],
    }
    differing = []
    for name, argv in commands.items():
        outs = []
        for w in (1, 8):
            folder = tmp_path / f"{name}-{w}"
            cli.main([name, "--output-dir", str(folder), "--workers", str(w), *argv])
            outs.append(digest(folder))
        if outs[0] != outs[1] or not outs[0]:
            differing.append(name)
    solution = str(tmp_path / "lilypad-1" / "solution.json")
    outs = []
    for w in (1, 8):
        folder = tmp_path / f"render-{w}"
        cli.main(["render", "--output-dir", str(folder), "--workers", str(w), "--solution", solution, "--times", "0.5,1"])
        outs.append(digest(folder))
    if outs[0] != outs[1] or not outs[0]:
        differing.append("render")
    ok = not differing
    record(11, ok, f"{len(commands) + 1} commands byte-identical across workers 1 and 8" if ok else f"differing: {differing}")
    assert ok
