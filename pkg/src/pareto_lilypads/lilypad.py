"""Delta-truncated lilypad hitting times and the fields built on them.

Each point ``y`` hosts a pad growing in L1 distance at speed ``xi(y)/q`` once
it is touched; a virtual pad of speed ``delta/q`` sits at the origin and is
touched at time 0.  Hitting times are then single-source shortest paths on
the complete graph over ``{origin} + points`` with edge weight
``q |b - a| / speed(a)`` for growth from ``a`` reaching ``b``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from . import env as env_mod
from .errors import HorizonExceeded, InvalidInput
from .geometry import SupportSet

TIE_RTOL = 1e-12
NEAR_TIE = 1e-9


@dataclass(frozen=True, eq=False)
class LilypadSolution:
    """Hitting times on ``{origin} + points``; node 0 is the origin.

    ``H`` is ``inf`` on nodes not settled before ``horizon``.  ``complete``
    means every node is settled, in which case queries are exact at any
    time.  ``certified`` is False when the window/thinning certificate for
    the underlying infinite environment could not be established.
    """

    source_set: env_mod.MarkedPointSet
    delta: float
    H: np.ndarray
    pred: np.ndarray
    horizon: float
    complete: bool
    tentative: np.ndarray = field(repr=False)
    certified: bool = True
    notes: tuple = ()

    @property
    def params(self):
        return self.source_set.params

    @property
    def node_pos(self):
        return np.vstack([np.zeros((1, self.params.d)), self.source_set.positions])

    @property
    def node_speed(self):
        return np.concatenate([[self.delta], self.source_set.marks])

    @property
    def settled(self):
        return np.isfinite(self.H)

    def to_dict(self):
        s = self.source_set
        nodes = [{"pos": [0.0] * s.params.d, "mark": self.delta, "H": 0.0, "pred": None}]
        for i in range(len(s)):
            h = self.H[i + 1]
            nodes.append(
                {
                    "pos": [float(x) for x in s.positions[i]],
                    "mark": float(s.marks[i]),
                    "H": float(h) if np.isfinite(h) else None,
                    "pred": int(self.pred[i + 1]) if self.pred[i + 1] >= 0 else None,
                }
            )
        return {
            "params": s.params.to_dict(),
            "delta": self.delta,
            "horizon": self.horizon if math.isfinite(self.horizon) else None,
            "complete": self.complete,
            "certified": self.certified,
            "window_radius": s.window_radius,
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, data):
        params = env_mod.derive_exponents(data["params"]["d"], data["params"]["alpha"])
        nodes = data["nodes"][1:]
        pos = np.asarray([n["pos"] for n in nodes], dtype=float).reshape(-1, params.d)
        marks = np.asarray([n["mark"] for n in nodes], dtype=float)
        s = env_mod.MarkedPointSet(params, pos, marks, float(data["window_radius"]), float(data["delta"]), "custom")
        H = np.array([0.0] + [math.inf if n["H"] is None else n["H"] for n in nodes])
        pred = np.array([-1] + [-1 if n["pred"] is None else n["pred"] for n in nodes], dtype=np.int64)
        horizon = math.inf if data["horizon"] is None else float(data["horizon"])
        return cls(s, float(data["delta"]), H, pred, horizon, bool(data["complete"]), H.copy(), bool(data["certified"]))


@numba.njit(cache=True)
def _dijkstra(pos, speed, q, horizon):
    n, d = pos.shape
    tent = np.full(n, np.inf)
    tent[0] = 0.0
    work = tent.copy()
    H = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    for _ in range(n):
        i = -1
        t_i = np.inf
        for j in range(n):
            if work[j] < t_i:
                t_i = work[j]
                i = j
        if i < 0 or not t_i <= horizon:
            break
        H[i] = t_i
        done[i] = True
        work[i] = np.inf
        for j in range(n):
            if done[j]:
                continue
            dist = 0.0
            for k in range(d):
                dist += abs(pos[j, k] - pos[i, k])
            cand = t_i + q * dist / speed[i]
            if cand < tent[j]:
                tent[j] = cand
                work[j] = cand
                pred[j] = i
    return H, pred, tent


def solve_hitting(point_set, delta, horizon=math.inf):
    """Dijkstra from the origin on the dense growth graph, stopped at ``horizon``.

    O(N^2) time and O(N) memory; each settle step relaxes all remaining nodes
    with one vectorised pass.
    """
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    if not horizon > 0:
        raise InvalidInput("horizon must be positive")
    marks = point_set.marks
    if np.any(marks < delta):
        raise InvalidInput("set contains marks below delta")
    q = point_set.params.q
    pos = np.ascontiguousarray(np.vstack([np.zeros((1, point_set.params.d)), point_set.positions]))
    speed = np.concatenate([[delta], marks])
    H, pred, tent = _dijkstra(pos, speed, float(q), float(horizon))
    pred[~np.isfinite(H)] = -1
    complete = bool(np.all(np.isfinite(H)))
    return LilypadSolution(point_set, float(delta), H, pred, float(horizon), complete, tent)


def _candidates(sol, Z):
    """Matrix of ``H(a) + q|z - a| / speed(a)`` over settled nodes ``a``."""
    mask = sol.settled
    pos = sol.node_pos[mask]
    spd = sol.node_speed[mask]
    return sol.H[mask][None, :] + sol.params.q * np.abs(Z[:, None, :] - pos[None, :, :]).sum(axis=2) / spd[None, :]


def hitting_many(sol, Z, chunk=2048):
    """``h^delta`` at each row of ``Z``; raises if any value is not certified."""
    Z = np.asarray(Z, dtype=float).reshape(-1, sol.params.d)
    out = np.empty(len(Z))
    for lo in range(0, len(Z), chunk):
        out[lo : lo + chunk] = _candidates(sol, Z[lo : lo + chunk]).min(axis=1)
    if not sol.complete and np.any(out > sol.horizon):
        raise HorizonExceeded(
            f"hitting time exceeds the certified horizon {sol.horizon}",
            required=float(out.max()),
        )
    return out


def hitting_at(sol, z):
    return float(hitting_many(sol, np.asarray(z, dtype=float).reshape(1, -1))[0])


def _check_time(sol, t):
    if t < 0:
        raise InvalidInput("time must be nonnegative")
    if t > sol.horizon and not sol.complete:
        raise HorizonExceeded(f"time {t} beyond horizon {sol.horizon}", required=t)


def _point_values(sol, t):
    """``xi(y)(t - H(y))`` for every point (``-inf`` for unsettled ones)."""
    H = sol.H[1:]
    with np.errstate(invalid="ignore"):
        vals = sol.source_set.marks * (t - H)
    vals[~np.isfinite(H)] = -math.inf
    return vals


def particles_many(sol, Z, t, chunk=2048):
    _check_time(sol, t)
    Z = np.asarray(Z, dtype=float).reshape(-1, sol.params.d)
    vals = _point_values(sol, t)
    live = vals > 0
    out = np.zeros(len(Z))
    if not live.any():
        return out
    pos = sol.source_set.positions[live]
    v = vals[live]
    q = sol.params.q
    for lo in range(0, len(Z), chunk):
        block = v[None, :] - q * np.abs(Z[lo : lo + chunk, None, :] - pos[None, :, :]).sum(axis=2)
        out[lo : lo + chunk] = np.maximum(block.max(axis=1), 0.0)
    return out


def particles_at(sol, z, t):
    """``m^delta(z, t) = max_y [xi(y)(t - H(y)) - q|z - y|] v 0``."""
    return float(particles_many(sol, np.asarray(z, dtype=float).reshape(1, -1), t)[0])


def support_at(sol, t):
    """Exact ``{z : h^delta(z) <= t}`` as a union of closed L1 balls."""
    _check_time(sol, t)
    hit = sol.H <= t
    radii = sol.node_speed[hit] * (t - sol.H[hit]) / sol.params.q
    return SupportSet(sol.node_pos[hit], radii)


@dataclass(frozen=True)
class MaximizerResult:
    point: env_mod.MarkedPoint | None
    value: float
    near_tie_gap: float
    index: int | None = None


def maximizer(sol, t):
    """Point maximising ``m^delta(., t)``.

    Ties (relative 1e-12) go to the larger mark, then to the
    lexicographically smaller position.  ``near_tie_gap`` is the distance to
    the runner-up value (or to 0 when there is none).
    """
    _check_time(sol, t)
    vals = _point_values(sol, t)
    live = np.flatnonzero(vals > 0)
    if len(live) == 0:
        return MaximizerResult(None, 0.0, 0.0)
    v = vals[live]
    top = v.max()
    tied = live[v >= top - TIE_RTOL * max(1.0, abs(top))]
    s = sol.source_set
    best = min(tied, key=lambda i: (-s.marks[i], tuple(s.positions[i])))
    others = np.delete(vals, best)
    runner = max(0.0, float(others.max())) if len(others) else 0.0
    return MaximizerResult(s.point(best), float(vals[best]), float(vals[best] - runner), int(best))


# --------------------------------------------------------------------------
# bounds from the approximation argument


@dataclass(frozen=True)
class ErrorBound:
    epsilon: float
    valid: bool


def delta_error_bound(params, delta, r0):
    """``epsilon = 4 q delta^(1-gamma) / (1 - 2^(gamma-1))`` and whether
    ``(delta/4)^gamma >= 2 delta`` and ``delta <= r0`` hold."""
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    g = params.gamma
    eps = 4 * params.q * delta ** (1 - g) / (1 - 2 ** (g - 1))
    valid = (delta / 4) ** g >= 2 * delta and delta <= r0
    return ErrorBound(float(eps), bool(valid))


def interior_bound(params, r):
    """Upper bound ``4 q r^(1-gamma) / (1 - 2^(gamma-1))`` on hitting times in B(0, r)."""
    g = params.gamma
    return 4 * params.q * r ** (1 - g) / (1 - 2 ** (g - 1))


def exterior_bound(params, R, delta):
    """Lower bound ``min{R^(1-gamma), qR/delta}`` on hitting times outside B(0, R)."""
    return min(R ** (1 - params.gamma), params.q * R / delta)


def auto_radius(params, delta, t_max, margin=0.1):
    """Smallest ``R >= 1`` with ``min{R^(1-gamma), qR/delta} > t_max (1 + margin)``."""
    if not t_max > 0 or margin < 0:
        raise InvalidInput("need t_max > 0 and margin >= 0")
    target = t_max * (1 + margin)
    R = max(target ** (1 / (1 - params.gamma)), target * delta / params.q)
    if R < 1:
        return 1.0
    # step past the point where rounding could still make the bound equal
    while exterior_bound(params, R, delta) <= target:
        R = float(np.nextafter(R, math.inf))
    return R


def window_horizon(point_set, delta):
    """Time below which no point outside the window can influence ``h^delta``.

    Every chain from outside ``B(0, R)`` crosses L1 distance R on pads no
    faster than the largest mark inside the window.  Unsampled points below
    a cell floor are accounted for by their floor.
    """
    top = max(delta, point_set.omitted_mark_bound())
    if len(point_set):
        top = max(top, float(point_set.marks.max()))
    return point_set.params.q * point_set.window_radius / top


@numba.njit(cache=True)
def _reach(pos, speed, H, tent, active, tau, q):
    n, d = pos.shape
    out = np.empty(active.shape[0])
    for j in range(active.shape[0]):
        a = active[j]
        r = speed[a] * (tau - H[a]) / q
        for b in range(n):
            if speed[b] > speed[a] and tent[b] < np.inf:
                sep = 0.0
                for k in range(d):
                    sep += abs(pos[a, k] - pos[b, k])
                num = tent[b] - H[a] + q * sep / speed[b]
                den = q * (1.0 / speed[a] - 1.0 / speed[b])
                r = min(r, num / den)
        out[j] = r
    return out


def thinning_violations(sol, tau=None):
    """Nodes whose growth region might contain omitted points faster than the node.

    An unsampled point ``u`` cannot change ``h^delta`` below ``tau`` if the
    pad that reaches it first is at least as fast as ``u``; its ball is then
    nested in that pad's ball forever.  For a node ``a`` the region it
    reaches first lies within L1 distance ``D_a`` of ``a``, where ``D_a`` uses
    the time budget ``tau - H(a)`` and, for every faster node ``b``, the
    separation bound ``(H(b) - H(a) + q|a-b|/xi_b) / (q (1/xi_a - 1/xi_b))``.
    The check fails when a cell meeting ``B(a, D_a)`` has a floor above
    ``xi_a``.  Returns ``[(node, reach_radius, speed)]``.
    """
    s = sol.source_set
    tau = sol.horizon if tau is None else tau
    floors = {c: f for c, f in s.floors.items() if f > sol.delta}
    if not floors:
        return []
    q = s.params.q
    pos = sol.node_pos
    speed = sol.node_speed
    tent = np.where(np.isfinite(sol.H), sol.H, sol.tentative)
    active = np.flatnonzero(sol.H <= tau)
    cell_list = sorted(floors)
    bounds = np.array([s.cell_bounds(c) for c in cell_list])
    fl = np.array([floors[c] for c in cell_list])
    reach = _reach(np.ascontiguousarray(pos), speed, sol.H, tent, active, float(tau), float(q))
    norm_a = np.abs(pos[active]).sum(axis=1)
    r_hi = norm_a + reach
    touched = (bounds[None, :, 0] <= r_hi[:, None]) & (bounds[None, :, 1] >= (norm_a - reach)[:, None])
    worst = np.where(touched, fl[None, :], -math.inf).max(axis=1)
    out = []
    for j in np.flatnonzero(worst > speed[active]):
        a = active[j]
        out.append((int(a), float(min(r_hi[j], s.window_radius)), float(speed[a])))
    return out


def solve_environment(point_set, delta, t_max, margin=0.1, max_doublings=3, max_refinements=60):
    """Solve a sampled environment with window and thinning certificates.

    The window starts at ``point_set.window_radius`` and doubles (same
    streams) until :func:`window_horizon` exceeds ``t_max``; cell floors are
    lowered and the cells resampled until :func:`thinning_violations` is
    empty.  If either loop runs out of budget the solution is returned with
    ``certified=False``.
    """
    s = point_set
    if s.delta > delta:
        raise InvalidInput("point set cutoff above delta")
    if s.delta < delta:
        s = s.above(delta) if s.kind == "custom" else env_mod.resample(s, delta=delta)
    notes = []
    doublings = 0
    refinements = 0
    while True:
        if window_horizon(s, delta) <= t_max * (1 + margin) and s.kind != "custom":
            if doublings < max_doublings:
                doublings += 1
                s = env_mod.extend_annulus(s, 2 * s.window_radius)
                continue
            notes.append("window")
        sol = solve_hitting(s, delta, horizon=t_max)
        bad = thinning_violations(sol) if s.kind != "custom" else []
        if not bad:
            break
        if refinements >= max_refinements:
            notes.append("thinning")
            break
        refinements += 1
        th = s.thinning
        for _, reach, spd in bad:
            cells = [c for c, f in s.floors.items() if f > spd and s.cell_bounds(c)[0] <= reach]
            th = th.lowered(cells, spd)
        s = env_mod.resample(s, thinning=th)
    certified = not notes and window_horizon(s, delta) > t_max
    return replace(sol, certified=certified, notes=tuple(notes))


# --------------------------------------------------------------------------
# brute-force oracle

BRUTE_FORCE_MAX = 8


def brute_force_hitting(point_set, delta, z, max_len=None):
    """Minimum chain cost by enumerating every chain of distinct points.

    Cost of ``z = y_0, y_1, ..., y_n`` is
    ``sum_j q|y_{j-1} - y_j| / xi(y_j) + q|y_n| / delta``.
    """
    n = len(point_set)
    if n > BRUTE_FORCE_MAX:
        raise InvalidInput(f"brute force refuses sets larger than {BRUTE_FORCE_MAX}")
    max_len = n if max_len is None else int(max_len)
    q = point_set.params.q
    pts = [tuple(float(x) for x in p) for p in point_set.positions]
    marks = [float(x) for x in point_set.marks]
    z = tuple(float(x) for x in np.asarray(z, dtype=float).reshape(-1))

    def dist(a, b):
        return sum(abs(x - y) for x, y in zip(a, b))

    best = q * dist(z, (0.0,) * len(z)) / delta
    for length in range(1, min(max_len, n) + 1):
        for chain in itertools.permutations(range(n), length):
            cost = 0.0
            prev = z
            for j in chain:
                cost += q * dist(prev, pts[j]) / marks[j]
                prev = pts[j]
            cost += q * dist(prev, (0.0,) * len(z)) / delta
            best = min(best, cost)
    return best
