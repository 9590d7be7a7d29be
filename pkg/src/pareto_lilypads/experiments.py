"""Monte Carlo studies on sampled environments: ageing and convergence."""

from __future__ import annotations

import csv
import functools
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import env as env_mod
from . import lilypad
from .errors import HorizonExceeded, InvalidInput

DEFAULT_THINNING = env_mod.Thinning(coef=1.0)
NEAR_TIE = lilypad.NEAR_TIE


def replicate_seed(seed, *key):
    """64-bit seed of replicate ``key`` derived from ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def parallel_map(fn, items, workers=1):
    """``[fn(x) for x in items]``, optionally over processes; order preserved."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def wilson_ci(successes, n):
    """Wilson 95% score interval."""
    if n < 1 or not 0 <= successes <= n:
        raise InvalidInput("need n >= 1 and 0 <= successes <= n")
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def ks_noise_floor(M, N=None):
    """Large-sample 95% quantile ``1.36 sqrt(1/M + 1/N)`` of the two-sample KS statistic."""
    N = M if N is None else N
    return 1.36 * math.sqrt(1.0 / M + 1.0 / N)


def ks_statistic(x, y):
    return float(stats.ks_2samp(np.asarray(x), np.asarray(y)).statistic)


# --------------------------------------------------------------------------
# ageing


@dataclass(frozen=True)
class AgeingReport:
    thetas: tuple
    estimates: tuple
    ci_low: tuple
    ci_high: tuple
    successes: tuple
    included: tuple
    excluded: tuple
    replicates: int
    near_tie_count: int
    delta: float
    params: env_mod.ModelParams
    seed: int
    kind: str = "poisson"
    T: float | None = None

    def half_widths(self):
        return tuple(0.5 * (h - l) for l, h in zip(self.ci_low, self.ci_high))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "estimate", "ci_low", "ci_high", "successes", "included", "excluded"])
        for row in zip(self.thetas, self.estimates, self.ci_low, self.ci_high, self.successes, self.included, self.excluded):
            w.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])
        return buf.getvalue()

    def to_dict(self):
        out = asdict(self)
        out["params"] = asdict(self.params)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


@dataclass(frozen=True)
class AgeingDecision:
    """Outcome of one environment: per theta, True/False or None (excluded)."""

    same: tuple
    near_tie: bool


def ageing_decisions(sol, thetas):
    """Does the maximiser at time 1 coincide with the one at ``1 + theta``?"""
    if not sol.certified:
        return AgeingDecision((None,) * len(thetas), False)
    w1 = lilypad.maximizer(sol, 1.0)
    near = w1.point is not None and w1.near_tie_gap < NEAR_TIE
    out = []
    for th in thetas:
        w2 = lilypad.maximizer(sol, 1.0 + th)
        if w1.point is None or w2.point is None:
            out.append(None)
            continue
        near = near or w2.near_tie_gap < NEAR_TIE
        out.append(w1.index == w2.index)
    return AgeingDecision(tuple(out), bool(near))


def summarize_ageing(decisions, thetas, *, delta, params, seed, kind="poisson", T=None):
    est, lo, hi, succ, inc, exc = [], [], [], [], [], []
    for k in range(len(thetas)):
        col = [d.same[k] for d in decisions]
        n = sum(v is not None for v in col)
        s = sum(v is True for v in col)
        succ.append(s)
        inc.append(n)
        exc.append(len(col) - n)
        if n:
            est.append(s / n)
            l, h = wilson_ci(s, n)
        else:
            est.append(math.nan)
            l, h = 0.0, 1.0
        lo.append(min(l, est[-1]) if n else l)
        hi.append(max(h, est[-1]) if n else h)
    return AgeingReport(
        tuple(float(t) for t in thetas),
        tuple(est),
        tuple(lo),
        tuple(hi),
        tuple(succ),
        tuple(inc),
        tuple(exc),
        len(decisions),
        sum(d.near_tie for d in decisions),
        float(delta),
        params,
        int(seed),
        kind,
        T,
    )


def _ageing_task(i, params, thetas, delta, seed, kind, T, thinning):
    t_max = 1.0 + max(thetas)
    R = lilypad.auto_radius(params, delta, t_max)
    s = replicate_seed(seed, i)
    if kind == "poisson":
        ps = env_mod.sample_poisson_env(params, R, delta, s, thinning)
    else:
        ps = env_mod.sample_lattice_env(params, T, R, delta, s, thinning)
    sol = lilypad.solve_environment(ps, delta, t_max)
    return ageing_decisions(sol, thetas)


def _validate_ageing(thetas, M):
    if M < 1:
        raise InvalidInput("need at least one replicate")
    if not thetas or any(not th > 0 for th in thetas):
        raise InvalidInput("thetas must be positive")


def estimate_ageing_poisson(params, thetas, M, delta, seed, workers=1, thinning=DEFAULT_THINNING):
    """Fraction of Poisson environments whose maximiser at time 1 is still the
    maximiser at ``1 + theta``; uncertified environments are excluded."""
    thetas = tuple(float(t) for t in thetas)
    _validate_ageing(thetas, M)
    fn = functools.partial(_ageing_task, params=params, thetas=thetas, delta=delta, seed=seed, kind="poisson", T=None, thinning=thinning)
    dec = parallel_map(fn, range(M), workers)
    return summarize_ageing(dec, thetas, delta=delta, params=params, seed=seed)


def estimate_ageing_discrete(params, T, thetas, M, delta, seed, workers=1, thinning=DEFAULT_THINNING):
    """As :func:`estimate_ageing_poisson` on rescaled lattice environments at scale T."""
    thetas = tuple(float(t) for t in thetas)
    _validate_ageing(thetas, M)
    env_mod.scaling_factors(T, params)
    fn = functools.partial(_ageing_task, params=params, thetas=thetas, delta=delta, seed=seed, kind="lattice", T=float(T), thinning=thinning)
    dec = parallel_map(fn, range(M), workers)
    return summarize_ageing(dec, thetas, delta=delta, params=params, seed=seed, kind="lattice", T=float(T))


# --------------------------------------------------------------------------
# convergence of the discrete environment to the Poisson one


@dataclass(frozen=True)
class ConvergenceReport:
    T_values: tuple
    statistic: str
    values: tuple
    replicates: int
    probe: tuple
    delta: float
    params: env_mod.ModelParams
    seed: int
    noise_floor: float
    excluded: tuple = field(default=())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", self.statistic, "noise_floor", "excluded"])
        for T, v, e in zip(self.T_values, self.values, self.excluded):
            w.writerow([repr(float(T)), repr(float(v)), repr(self.noise_floor), e])
        return buf.getvalue()

    def to_dict(self):
        out = asdict(self)
        out["params"] = asdict(self.params)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def probe_hitting(point_set, delta, probe, t_start=2.0, max_steps=8):
    """``h^delta(probe)`` on a sampled environment, growing the time horizon
    (and with it the window) until the value is certified.  Returns ``nan``
    if certification fails."""
    t_max = t_start
    for _ in range(max_steps):
        R = lilypad.auto_radius(point_set.params, delta, t_max)
        ps = point_set if R <= point_set.window_radius else env_mod.extend_annulus(point_set, R)
        sol = lilypad.solve_environment(ps, delta, t_max)
        try:
            h = lilypad.hitting_at(sol, probe)
        except HorizonExceeded:
            h = math.inf
        if h <= t_max:
            return h if sol.certified else math.nan
        t_max *= 2
        point_set = sol.source_set
    return math.nan


def _probe_task(job, params, delta, probe, thinning):
    kind, T, s = job
    R = lilypad.auto_radius(params, delta, 2.0)
    if kind == "poisson":
        ps = env_mod.sample_poisson_env(params, R, delta, s, thinning)
    else:
        ps = env_mod.sample_lattice_env(params, T, R, delta, s, thinning)
    return probe_hitting(ps, delta, probe)


def probe_samples(params, kind, T, M, delta, probe, seed, key, workers=1, thinning=DEFAULT_THINNING):
    jobs = [(kind, T, replicate_seed(seed, key, i)) for i in range(M)]
    fn = functools.partial(_probe_task, params=params, delta=delta, probe=tuple(probe), thinning=thinning)
    return np.array(parallel_map(fn, jobs, workers))


def _check_probe(probe, M):
    if not any(float(x) != 0.0 for x in probe):
        raise InvalidInput("probe must differ from the origin")
    if M < 1:
        raise InvalidInput("need at least one replicate")


def convergence_study(params, T_values, M, delta, probe, seed, workers=1, thinning=DEFAULT_THINNING):
    """KS distance between ``h^delta(probe)`` on lattice environments at each T
    and on Poisson environments (one shared Poisson sample)."""
    probe = tuple(float(x) for x in probe)
    _check_probe(probe, M)
    ref = probe_samples(params, "poisson", None, M, delta, probe, seed, 0, workers, thinning)
    vals, excl = [], []
    for k, T in enumerate(T_values):
        env_mod.scaling_factors(T, params)
        x = probe_samples(params, "lattice", float(T), M, delta, probe, seed, k + 1, workers, thinning)
        ok_x, ok_r = x[np.isfinite(x)], ref[np.isfinite(ref)]
        vals.append(ks_statistic(ok_x, ok_r))
        excl.append(int(M - len(ok_x) + M - len(ok_r)))
    return ConvergenceReport(
        tuple(float(T) for T in T_values),
        "hitting_cdf_distance",
        tuple(vals),
        int(M),
        probe,
        float(delta),
        params,
        int(seed),
        ks_noise_floor(M),
        tuple(excl),
    )


def null_calibration(params, M, delta, probe, seed, workers=1, thinning=DEFAULT_THINNING):
    """KS distance between two independent Poisson samples (same law)."""
    probe = tuple(float(x) for x in probe)
    _check_probe(probe, M)
    a = probe_samples(params, "poisson", None, M, delta, probe, seed, 0, workers, thinning)
    b = probe_samples(params, "poisson", None, M, delta, probe, seed, 10**6, workers, thinning)
    a, b = a[np.isfinite(a)], b[np.isfinite(b)]
    return ConvergenceReport(
        (math.inf,),
        "hitting_cdf_distance",
        (ks_statistic(a, b),),
        int(M),
        probe,
        float(delta),
        params,
        int(seed),
        ks_noise_floor(M),
        (int(2 * M - len(a) - len(b)),),
    )
