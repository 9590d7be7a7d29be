"""Branching random walk in a frozen lattice potential.

Particles jump to each of the 2d neighbours at rate 1 and split in two at
rate ``xi(z)``.  Because all clocks are exponential, the particle system is a
continuous-time Markov chain on site occupation numbers, and the simulator
runs an exact direct-method SSA on those counts: the next event time is
exponential with the total rate ``sum_z N(z)(2d + xi(z))`` and the event
site is drawn proportionally to ``N(z)(2d + xi(z))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from . import env as env_mod
from . import geometry, lilypad
from .errors import AccuracyError, InvalidInput, PairingError

MISSING = -1


@dataclass(frozen=True, eq=False)
class BoxPotential:
    """Raw potential on a finite set of lattice sites (outside: absorbing)."""

    sites: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=np.int64)
        if sites.ndim == 1:
            sites = sites.reshape(-1, 1)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float).reshape(-1))
        if len(self.sites) != len(self.xi):
            raise InvalidInput("sites and potential differ in length")

    @property
    def d(self):
        return self.sites.shape[1]

    @classmethod
    def sample(cls, params, box_radius, seed):
        sites, xi = env_mod.lattice_potential(params, seed, box_radius)
        return cls(sites, xi)

    @classmethod
    def uniform(cls, d, box_radius, value):
        sites = env_mod._shell_sites(0, box_radius, d)
        return cls(sites, np.full(len(sites), float(value)))

    @classmethod
    def from_mapping(cls, mapping):
        keys = sorted(mapping)
        sites = np.array([k if isinstance(k, tuple) else (k,) for k in keys], dtype=np.int64)
        return cls(sites, [mapping[k] for k in keys])

    def index(self):
        return {tuple(int(x) for x in s): i for i, s in enumerate(self.sites)}

    def neighbours(self):
        """``(n, 2d)`` table of neighbour indices, -1 outside the site set."""
        idx = self.index()
        d = self.d
        out = np.full((len(self.sites), 2 * d), -1, dtype=np.int64)
        for i, s in enumerate(self.sites):
            for k in range(d):
                for j, step in enumerate((1, -1)):
                    nb = list(int(x) for x in s)
                    nb[k] += step
                    out[i, 2 * k + j] = idx.get(tuple(nb), -1)
        return out

    def origin_index(self):
        i = self.index().get((0,) * self.d)
        if i is None:
            raise InvalidInput("site set must contain the origin")
        return i


@dataclass(frozen=True)
class BrwConfig:
    params: env_mod.ModelParams
    T: float
    box_radius: int
    t_max_rescaled: float
    particle_cap: int = 10**6
    snapshot_times: tuple = ()
    seed: int = 0
    boundary: str = "stop"

    def __post_init__(self):
        if self.particle_cap < 1:
            raise InvalidInput("particle cap must be positive")
        if any(s < 0 or s > self.t_max_rescaled for s in self.snapshot_times):
            raise InvalidInput("snapshot times must lie in [0, t_max]")
        if self.boundary not in ("stop", "absorb"):
            raise InvalidInput("boundary must be 'stop' or 'absorb'")


@dataclass(frozen=True, eq=False)
class BrwRunResult:
    """Raw outcome of one run.

    ``first_hit[i]`` is ``inf`` for sites never visited.  ``counts[k]`` holds
    occupation numbers at ``snapshot_times[k] * T``; rows are ``-1`` when the
    run stopped before that time.
    """

    sites: np.ndarray
    xi: np.ndarray
    first_hit: np.ndarray
    counts: np.ndarray
    snapshot_times: tuple
    truncated: bool
    cap_reached: bool
    escaped: int
    events_processed: int
    branch_events: int
    stop_time: float

    def first_hit_map(self):
        return {tuple(int(x) for x in s): float(t) for s, t in zip(self.sites, self.first_hit) if np.isfinite(t)}

    def count_maps(self):
        out = []
        for row in self.counts:
            if row[0] == MISSING:
                out.append(None)
            else:
                out.append({tuple(int(x) for x in self.sites[i]): int(row[i]) for i in np.flatnonzero(row > 0)})
        return out


@numba.njit(cache=True)
def _ssa(seed, xi, nbr, origin, t_end, snaps, cap, absorb):
    np.random.seed(seed)
    n = xi.shape[0]
    n_dir = nbr.shape[1]
    counts = np.zeros(n, dtype=np.int64)
    counts[origin] = 1
    first = np.full(n, np.inf)
    first[origin] = 0.0
    rate = n_dir + xi
    out = np.full((snaps.shape[0], n), MISSING, dtype=np.int64)
    total = rate[origin]
    pop = 1
    t = 0.0
    k = 0
    events = 0
    branches = 0
    escaped = 0
    truncated = False
    cap_reached = False
    while True:
        if pop == 0:
            while k < snaps.shape[0]:
                out[k, :] = 0
                k += 1
            t = t_end
            break
        t_next = t + np.random.exponential(1.0) / total
        while k < snaps.shape[0] and snaps[k] < t_next:
            out[k, :] = counts
            k += 1
        if t_next > t_end:
            t = t_end
            break
        t = t_next
        target = np.random.random() * total
        acc = 0.0
        j = -1
        for i in range(n):
            if counts[i] > 0:
                j = i
                acc += counts[i] * rate[i]
                if acc > target:
                    break
        events += 1
        u = np.random.random() * rate[j]
        if u < xi[j]:
            counts[j] += 1
            pop += 1
            branches += 1
            total += rate[j]
            if pop >= cap:
                cap_reached = True
                truncated = True
                break
        else:
            m = int(u - xi[j])
            if m >= n_dir:
                m = n_dir - 1
            y = nbr[j, m]
            counts[j] -= 1
            total -= rate[j]
            if y < 0:
                escaped += 1
                pop -= 1
                truncated = True
                if not absorb:
                    break
            else:
                counts[y] += 1
                total += rate[y]
                if first[y] == np.inf:
                    first[y] = t
        if events % 4096 == 0:
            total = 0.0
            for i in range(n):
                total += counts[i] * rate[i]
    return first, out, truncated, cap_reached, escaped, events, branches, t


def simulate_brw(potential, cfg):
    """One exact run up to raw time ``cfg.t_max_rescaled * cfg.T``.

    Stops early at ``particle_cap`` particles, or (``boundary='stop'``) when
    a particle leaves the site set; both set ``truncated``.  With
    ``boundary='absorb'`` escaping particles are killed, matching the
    absorbing-boundary PAM, and still flag the run.
    """
    nbr = potential.neighbours()
    origin = potential.origin_index()
    snaps = np.asarray(cfg.snapshot_times, dtype=float) * cfg.T
    seed32 = int(np.random.SeedSequence(cfg.seed).generate_state(1)[0] & 0x7FFFFFFF)
    first, counts, trunc, cap, esc, ev, br, t = _ssa(
        seed32,
        potential.xi,
        nbr,
        origin,
        float(cfg.t_max_rescaled * cfg.T),
        snaps,
        int(cfg.particle_cap),
        cfg.boundary == "absorb",
    )
    return BrwRunResult(
        potential.sites, potential.xi, first, counts, tuple(cfg.snapshot_times), bool(trunc), bool(cap), int(esc), int(ev), int(br), float(t)
    )


# --------------------------------------------------------------------------
# expectation oracle


def pam_generator(potential):
    """Sparse matrix of ``Delta + xi`` with zero boundary values outside."""
    nbr = potential.neighbours()
    n, n_dir = nbr.shape
    rows, cols = np.nonzero(nbr >= 0)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, nbr[rows, cols])), shape=(n, n))
    return A + sp.diags(potential.xi - n_dir)


def _rk4(A, u0, t, steps):
    u = u0.copy()
    h = t / steps
    for _ in range(steps):
        k1 = A @ u
        k2 = A @ (u + 0.5 * h * k1)
        k3 = A @ (u + 0.5 * h * k2)
        k4 = A @ (u + h * k3)
        u = u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def pam_expectation(potential, z_list, t, rtol=1e-8):
    """``u(z, t)`` for ``u' = Delta u + xi u``, ``u(., 0) = 1{0}``, via RK4.

    Step at most ``0.1 / (2d + max xi)``; the step-halving (Richardson)
    estimate must stay below ``rtol`` relative to ``max u``.
    """
    if t < 0:
        raise InvalidInput("time must be nonnegative")
    A = pam_generator(potential)
    u0 = np.zeros(len(potential.xi))
    u0[potential.origin_index()] = 1.0
    idx = potential.index()
    keys = [k if isinstance(k, tuple) else (k,) for k in z_list]
    if t == 0:
        u = u0
    else:
        h_max = 0.025 / (2 * potential.d + float(potential.xi.max()))
        steps = max(1, math.ceil(t / h_max))
        coarse = _rk4(A, u0, t, steps)
        u = _rk4(A, u0, t, 2 * steps)
        err = np.abs(u - coarse).max() / 15.0
        if not err <= rtol * max(np.abs(u).max(), 1e-300):
            raise AccuracyError(f"Richardson error estimate {err:.3e} exceeds tolerance")
    return {k: float(u[idx[k]]) if k in idx else 0.0 for k in keys}


# --------------------------------------------------------------------------
# rescaling and comparison with the lilypad model


@dataclass(frozen=True, eq=False)
class RescaledFields:
    sites: np.ndarray
    positions: np.ndarray
    marks: np.ndarray
    H_T: np.ndarray
    M_T: np.ndarray
    S_T: np.ndarray
    times: tuple
    a: float
    r: float
    t_max: float
    complete: np.ndarray = field(default=None)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.positions.shape[1]
        w.writerow([f"z{i + 1}" for i in range(d)] + ["H_T"] + [f"M_T@{t:g}" for t in self.times])
        for i in range(len(self.sites)):
            h = self.H_T[i]
            row = [repr(float(x)) for x in self.positions[i]] + ["" if not np.isfinite(h) else repr(float(h))]
            row += ["" if np.isnan(m) else repr(float(m)) for m in self.M_T[:, i]]
            w.writerow(row)
        return buf.getvalue()


def rescale_run(run, cfg):
    """``H_T = first_hit / T``, ``M_T = log_+ N / (a T)``, ``S_T`` = hit sites."""
    a, r = env_mod.scaling_factors(cfg.T, cfg.params)
    H = run.first_hit / cfg.T
    counts = run.counts.astype(float)
    M = np.log(np.maximum(counts, 1.0)) / (a * cfg.T)
    complete = run.counts[:, 0] != MISSING if len(run.counts) else np.zeros(0, dtype=bool)
    M[~complete] = np.nan
    S = np.array([H <= s for s in run.snapshot_times], dtype=bool).reshape(len(run.snapshot_times), len(H))
    return RescaledFields(run.sites, run.sites / r, run.xi / a, H, M, S, run.snapshot_times, a, r, cfg.t_max_rescaled, complete)


@dataclass(frozen=True)
class FieldComparison:
    hit_sup: float
    count_sup: float
    support_dH: dict
    censored: int
    flagged: bool
    window: float


def compare_fields(fields, sol, window_R, times):
    """Sup-discrepancies between a rescaled run and the lilypad fields.

    Sites inside the window that the run never reached contribute
    ``t_max - h(z)`` when ``h(z) <= t_max`` (and are counted as censored);
    otherwise both sides agree that the site is not hit by ``t_max``.
    """
    _check_pairing(fields, sol)
    win = np.abs(fields.positions).sum(axis=1) <= window_R * (1 + 1e-12)
    pos = fields.positions[win]
    H_run = fields.H_T[win]
    h = lilypad.hitting_many(sol, pos)
    diff = np.abs(H_run - h)
    never = ~np.isfinite(H_run)
    cens = never & (h <= fields.t_max)
    diff[never] = 0.0
    diff[cens] = np.abs(fields.t_max - h[cens])
    hit_sup = float(diff.max()) if len(diff) else 0.0
    count_sup = 0.0
    dh = {}
    flagged = bool(cens.any())
    for t in times:
        k = fields.times.index(t)
        if not fields.complete[k]:
            flagged = True
            continue
        m = lilypad.particles_many(sol, pos, t)
        count_sup = max(count_sup, float(np.abs(fields.M_T[k][win] - m).max()))
        hit = fields.S_T[k]
        S_run = geometry.SupportSet(fields.positions[hit], np.zeros(int(hit.sum())))
        dh[t] = geometry.hausdorff(S_run, lilypad.support_at(sol, t))
    return FieldComparison(hit_sup, count_sup, dh, int(cens.sum()), flagged, float(window_R))


def _check_pairing(fields, sol):
    """Every retained run site inside the solution window must appear in the
    solution with the same rescaled mark, and vice versa."""
    s = sol.source_set
    if s.lattice is None:
        raise PairingError("lilypad solution is not built on a lattice sample")
    table = {tuple(int(x) for x in z): m for z, m in zip(s.lattice, s.marks)}
    radius = s.window_radius * fields.r * (1 + 1e-12)
    seen = 0
    for z, m in zip(fields.sites, fields.marks):
        if m < sol.delta or np.abs(z).sum() > radius:
            continue
        key = tuple(int(v) for v in z)
        other = table.get(key)
        if other is None or not math.isclose(other, m, rel_tol=1e-12):
            raise PairingError(f"environment mismatch at site {key}")
        seen += 1
    box = int(np.abs(fields.sites).sum(axis=1).max())
    inside = sum(1 for z in table if sum(abs(v) for v in z) <= box)
    if inside != seen:
        raise PairingError("solution contains sites absent from the run")
