"""Pareto environments on the rescaled lattice and their Poisson limit.

Every sampler here is a pure function of ``(seed, params, window, cutoff)``.
Randomness is organised by *cells*: L1 annuli with a fixed dyadic layout that
does not depend on the requested window or mark cutoff.  Each cell owns an
independent counter-based stream keyed by ``(seed, cell)``, and inside a cell
points are generated in order of decreasing mark.  Two consequences:

* enlarging the window adds cells and never touches existing ones;
* lowering the mark cutoff only continues a cell's stream, so the set at
  cutoff ``delta`` is exactly the subset of the set at ``delta / 2`` with
  marks ``>= delta``.

Cells may additionally carry a mark *floor* above ``delta`` (see
:class:`Thinning`).  Points below a cell's floor are not generated; the
lilypad engine later certifies that none of them could have mattered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvalidParameters

POISSON_CORE_LEVEL = -40
DENSE_CELL_MAX = 4096
MAX_RAW_NORM = 2**60

_BLOCK = 128
_TAG_POISSON = 11
_TAG_LATTICE_MARK = 12
_TAG_LATTICE_SITE = 13
_CELL_OFFSET = 1000


@dataclass(frozen=True)
class ModelParams:
    d: int
    alpha: float
    q: float
    gamma: float

    def to_dict(self):
        return {"d": self.d, "alpha": self.alpha}


def derive_exponents(d, alpha):
    """Return :class:`ModelParams` with ``q = d/(alpha-d)`` and
    ``gamma = (d+alpha)/(2 alpha)``."""
    if int(d) != d or d < 1:
        raise InvalidParameters(f"dimension d must be a positive integer, got {d!r}")
    d = int(d)
    alpha = float(alpha)
    if not alpha > d:
        raise InvalidParameters(f"tail index must satisfy alpha > d (got alpha={alpha}, d={d})")
    return ModelParams(d=d, alpha=alpha, q=d / (alpha - d), gamma=(d + alpha) / (2 * alpha))


def scaling_factors(T, params):
    """Potential and space scales ``a(T) = (T/log T)^q`` and ``r(T) = a(T) T/log T``."""
    if not T > 1:
        raise InvalidParameters(f"time scale must satisfy T > 1, got {T}")
    base = T / math.log(T)
    a = base**params.q
    return a, a * base


def sample_pareto(u, alpha):
    """Inverse-CDF transform ``u -> u^(-1/alpha)`` for ``u`` in (0, 1]."""
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0) & (arr <= 1))):
        raise InvalidInput("Pareto inverse transform needs u in (0, 1]")
    out = arr ** (-1.0 / alpha)
    return float(out) if out.ndim == 0 else out


def l1_ball_volume(radius, d):
    return (2.0 * radius) ** d / math.factorial(d)


def _stream(seed, tag, cell):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag, cell + _CELL_OFFSET)))


@dataclass(frozen=True)
class MarkedPoint:
    pos: tuple
    xi: float


@dataclass(frozen=True)
class Thinning:
    """Per-cell mark floors ``max(delta, coef * inner_radius^(d/alpha))``.

    The profile is invariant under the scaling symmetry of the Poisson limit,
    so every dyadic annulus contributes a comparable number of points.
    ``overrides`` lowers the floor of individual cells (never below delta).
    ``coef = 0`` disables thinning.
    """

    coef: float = 0.0
    overrides: tuple = ()

    def floor(self, cell, inner, delta, params):
        value = delta
        if self.coef > 0 and inner > 0:
            value = max(delta, self.coef * inner ** (params.d / params.alpha))
        for c, v in self.overrides:
            if c == cell:
                value = min(value, v)
        return max(value, delta)

    def lowered(self, cells, value):
        """Return a copy whose floor is at most ``value`` on ``cells``."""
        current = dict(self.overrides)
        for c in cells:
            current[int(c)] = min(current.get(int(c), math.inf), float(value))
        return Thinning(self.coef, tuple(sorted(current.items())))

    def to_dict(self):
        return {"coef": self.coef, "overrides": [list(x) for x in self.overrides]}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["coef"]), tuple((int(c), float(v)) for c, v in data["overrides"]))


@dataclass(frozen=True, eq=False)
class MarkedPointSet:
    """Finite marked point configuration inside the L1 ball ``B(0, R)``.

    ``cells``/``ranks`` identify every point by the cell that produced it and
    its position in that cell's stream; they are stable under window growth
    and cutoff lowering.  ``floors`` maps each sampled cell to its mark floor.
    """

    params: ModelParams
    positions: np.ndarray
    marks: np.ndarray
    window_radius: float
    delta: float
    kind: str
    seed: int | None = None
    T: float | None = None
    lattice: np.ndarray | None = None
    cells: np.ndarray | None = None
    ranks: np.ndarray | None = None
    floors: dict = field(default_factory=dict)
    thinning: Thinning = field(default_factory=Thinning)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, self.params.d)
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        if len(pos) != len(marks):
            raise InvalidInput("positions and marks differ in length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "marks", marks)
        pos.setflags(write=False)
        marks.setflags(write=False)

    def __len__(self):
        return len(self.marks)

    @property
    def norms(self):
        return np.abs(self.positions).sum(axis=1)

    def point(self, i):
        return MarkedPoint(tuple(float(x) for x in self.positions[i]), float(self.marks[i]))

    def cell_bounds(self, cell):
        """Rescaled (inner, outer) L1 radii of a sampling cell."""
        return _cell_bounds(self.kind, cell, self.T, self.params)

    def omitted_mark_bound(self, r_lo=0.0, r_hi=math.inf):
        """Upper bound on marks of unsampled points with ``r_lo <= |z| <= r_hi``.

        Equals ``delta`` unless some cell meeting the annulus has a floor above
        the cutoff.
        """
        bound = self.delta
        for cell, fl in self.floors.items():
            if fl <= self.delta:
                continue
            inner, outer = self.cell_bounds(cell)
            if inner <= min(r_hi, self.window_radius) and outer >= r_lo:
                bound = max(bound, fl)
        return bound

    def restrict(self, R):
        keep = self.norms <= R
        floors = {c: f for c, f in self.floors.items() if self.cell_bounds(c)[0] <= R}
        return _replace_points(self, keep, window_radius=float(R), floors=floors)

    def above(self, delta):
        """Sub-configuration with marks ``>= delta`` (cutoff raised)."""
        if delta < self.delta:
            raise InvalidInput("cannot lower the cutoff by filtering; resample instead")
        keep = self.marks >= delta
        floors = {c: max(f, delta) for c, f in self.floors.items()}
        return _replace_points(self, keep, delta=float(delta), floors=floors)

    def to_dict(self):
        pts = [list(map(float, p)) + [float(x)] for p, x in zip(self.positions, self.marks)]
        out = {
            "kind": self.kind,
            "params": self.params.to_dict(),
            "R": self.window_radius,
            "delta": self.delta,
            "seed": self.seed,
            "T": self.T,
            "thinning": self.thinning.to_dict(),
            "floors": [[int(c), float(f)] for c, f in sorted(self.floors.items())],
            "points": pts,
        }
        if self.lattice is not None:
            out["lattice"] = self.lattice.tolist()
        if self.cells is not None:
            out["cells"] = self.cells.tolist()
            out["ranks"] = self.ranks.tolist()
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data):
        params = derive_exponents(data["params"]["d"], data["params"]["alpha"])
        pts = np.asarray(data["points"], dtype=float).reshape(-1, params.d + 1)
        lattice = data.get("lattice")
        return cls(
            params=params,
            positions=pts[:, : params.d],
            marks=pts[:, params.d],
            window_radius=float(data["R"]),
            delta=float(data["delta"]),
            kind=data["kind"],
            seed=data.get("seed"),
            T=data.get("T"),
            lattice=None if lattice is None else np.asarray(lattice, dtype=np.int64).reshape(-1, params.d),
            cells=None if "cells" not in data else np.asarray(data["cells"], dtype=np.int64),
            ranks=None if "ranks" not in data else np.asarray(data["ranks"], dtype=np.int64),
            floors={int(c): float(f) for c, f in data.get("floors", [])},
            thinning=Thinning.from_dict(data.get("thinning", {"coef": 0.0, "overrides": []})),
        )


def make_point_set(params, positions, marks, delta, window_radius=None):
    """Hand-built configuration (kind ``custom``); checks the cutoff and window."""
    pos = np.asarray(positions, dtype=float).reshape(-1, params.d)
    marks = np.asarray(marks, dtype=float).reshape(-1)
    if not delta > 0:
        raise InvalidInput("cutoff delta must be positive")
    if np.any(marks < delta):
        raise InvalidInput("every mark must be >= delta")
    norms = np.abs(pos).sum(axis=1)
    if window_radius is None:
        window_radius = float(norms.max()) if len(norms) else 1.0
        window_radius = max(window_radius, 1e-12)
    if np.any(norms > window_radius):
        raise InvalidInput("point outside the window")
    if len(pos) != len(np.unique(pos, axis=0)):
        raise InvalidInput("positions must be pairwise distinct")
    return MarkedPointSet(params, pos, marks, float(window_radius), float(delta), "custom")


def _replace_points(s, keep, **changes):
    kw = dict(
        params=s.params,
        positions=s.positions[keep],
        marks=s.marks[keep],
        window_radius=s.window_radius,
        delta=s.delta,
        kind=s.kind,
        seed=s.seed,
        T=s.T,
        lattice=None if s.lattice is None else s.lattice[keep],
        cells=None if s.cells is None else s.cells[keep],
        ranks=None if s.ranks is None else s.ranks[keep],
        floors=dict(s.floors),
        thinning=s.thinning,
    )
    kw.update(changes)
    return MarkedPointSet(**kw)


# --------------------------------------------------------------------------
# cell layout


def _cell_bounds(kind, cell, T, params):
    if kind == "poisson":
        if cell == POISSON_CORE_LEVEL:
            return 0.0, 2.0**cell
        return 2.0 ** (cell - 1), 2.0**cell
    if kind == "lattice":
        _, r = scaling_factors(T, params)
        if cell == 0:
            return 0.0, 0.0
        return 2.0 ** (cell - 1) / r, (2.0**cell - 1) / r
    raise InvalidInput(f"kind {kind!r} has no cell layout")


def _poisson_cells(R):
    top = max(POISSON_CORE_LEVEL, math.ceil(math.log2(R)))
    return range(POISSON_CORE_LEVEL, top + 1)


def _lattice_cells(raw_radius):
    if raw_radius < 1:
        return range(0, 1)
    return range(0, int(raw_radius).bit_length() + 1)


def lattice_count(n, d):
    """Number of points of Z^d with L1 norm at most ``n`` (exact integer)."""
    if n < 0:
        return 0
    return sum(2**j * math.comb(d, j) * math.comb(n, j) for j in range(min(d, n) + 1))


# --------------------------------------------------------------------------
# Poisson cells


def _poisson_cell(seed, cell, params, floor):
    """Points of the limiting Poisson process in one cell with mark >= floor.

    Arrivals ``E_1 < E_2 < ...`` of a unit-rate process are mapped to marks
    ``(E_j / vol)^(-1/alpha)``, i.e. marks come out in decreasing order.
    Every block consumes a fixed number of draws, so the output for a floor
    is a prefix of the output for any lower floor.
    """
    d, alpha = params.d, params.alpha
    if cell == POISSON_CORE_LEVEL:
        inner, outer = 0.0, 2.0**cell
    else:
        inner, outer = 2.0 ** (cell - 1), 2.0**cell
    vol = l1_ball_volume(outer, d) - l1_ball_volume(inner, d)
    limit = vol * floor ** (-alpha)
    rng = _stream(seed, _TAG_POISSON, cell)
    arrivals, radial, dirs, signs = [], [], [], []
    last = 0.0
    while True:
        e = rng.standard_exponential(_BLOCK)
        u_rad = rng.random(_BLOCK)
        w = rng.standard_exponential((_BLOCK, d))
        s = rng.random((_BLOCK, d))
        arr = last + np.cumsum(e)
        n_take = int(np.searchsorted(arr, limit, side="right"))
        arrivals.append(arr[:n_take])
        radial.append(u_rad[:n_take])
        dirs.append(w[:n_take])
        signs.append(s[:n_take])
        if n_take < _BLOCK:
            break
        last = arr[-1]
    arr = np.concatenate(arrivals)
    marks = (arr / vol) ** (-1.0 / alpha)
    rho = (inner**d + np.concatenate(radial) * (outer**d - inner**d)) ** (1.0 / d)
    w = np.concatenate(dirs).reshape(-1, d)
    w = w / w.sum(axis=1, keepdims=True)
    sign = np.where(np.concatenate(signs).reshape(-1, d) < 0.5, -1.0, 1.0)
    pos = sign * w * rho[:, None]
    return pos, marks


def sample_poisson_env(params, R, delta, seed, thinning=None):
    """Poisson process with intensity ``dz x alpha x^(-alpha-1) dx`` on
    ``B(0, R) x [delta, inf)``.

    With ``thinning`` set, cells only produce marks above their floor.
    """
    if not R > 0 or not delta > 0:
        raise InvalidParameters("window radius and cutoff must be positive")
    thinning = thinning or Thinning()
    pos_parts, mark_parts, cell_parts, rank_parts = [], [], [], []
    floors = {}
    for cell in _poisson_cells(R):
        inner = 0.0 if cell == POISSON_CORE_LEVEL else 2.0 ** (cell - 1)
        if inner > R:
            break
        fl = thinning.floor(cell, inner, delta, params)
        floors[cell] = fl
        pos, marks = _poisson_cell(seed, cell, params, fl)
        keep = np.abs(pos).sum(axis=1) <= R
        pos_parts.append(pos[keep])
        mark_parts.append(marks[keep])
        cell_parts.append(np.full(int(keep.sum()), cell, dtype=np.int64))
        rank_parts.append(np.flatnonzero(keep).astype(np.int64))
    return MarkedPointSet(
        params=params,
        positions=np.concatenate(pos_parts) if pos_parts else np.zeros((0, params.d)),
        marks=np.concatenate(mark_parts) if mark_parts else np.zeros(0),
        window_radius=float(R),
        delta=float(delta),
        kind="poisson",
        seed=seed,
        cells=np.concatenate(cell_parts),
        ranks=np.concatenate(rank_parts),
        floors=floors,
        thinning=thinning,
    )


def poisson_expected_count(params, R, delta):
    return l1_ball_volume(R, params.d) * delta ** (-params.alpha)


# --------------------------------------------------------------------------
# lattice cells


def _shell_sites(n_lo, n_hi, d):
    """All sites with ``n_lo <= |z| <= n_hi`` in lexicographic order."""
    axes = np.arange(-n_hi, n_hi + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    norms = np.abs(grid).sum(axis=1)
    return grid[(norms >= n_lo) & (norms <= n_hi)]


def _lattice_cell_raw(seed, cell, d, alpha, u_max):
    """Raw sites and raw Pareto values of one cell with ``xi >= u_max^(-1/alpha)``.

    Small cells draw one uniform per site in canonical order.  Large cells
    generate the ascending order statistics of the cell's uniforms
    sequentially and attach them to distinct uniformly chosen sites, which
    has the same law but costs only the number of exceedances.
    """
    if cell == 0:
        n_lo = n_hi = 0
    else:
        n_lo, n_hi = 2 ** (cell - 1), 2**cell - 1
    n_sites = lattice_count(n_hi, d) - lattice_count(n_lo - 1, d)
    rng = _stream(seed, _TAG_LATTICE_MARK, cell)
    if n_sites <= DENSE_CELL_MAX:
        sites = _shell_sites(n_lo, n_hi, d)
        u = 1.0 - rng.random(len(sites))
        keep = u <= u_max
        idx = np.flatnonzero(keep)
        return sites[keep], u[keep] ** (-1.0 / alpha), idx
    if u_max <= 0:
        return np.zeros((0, d), dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64)
    n_float = float(n_sites)
    us = []
    log_tail = 0.0
    count = 0
    while count < n_sites:
        v = 1.0 - rng.random(_BLOCK)
        remaining = n_float - (count + np.arange(_BLOCK, dtype=float))
        steps = np.log(v) / np.where(remaining > 0, remaining, np.inf)
        tails = log_tail + np.cumsum(steps)
        u = -np.expm1(tails)
        n_take = int(np.searchsorted(u, u_max, side="right"))
        n_take = min(n_take, n_sites - count)
        us.append(u[:n_take])
        count += n_take
        if n_take < _BLOCK:
            break
        log_tail = tails[-1]
    u = np.concatenate(us) if us else np.zeros(0)
    site_rng = _stream(seed, _TAG_LATTICE_SITE, cell)
    chosen = []
    seen = set()
    while len(chosen) < len(u):
        cand = site_rng.integers(-n_hi, n_hi, size=(_BLOCK, d), endpoint=True)
        norms = np.abs(cand).sum(axis=1)
        for row in cand[(norms >= n_lo) & (norms <= n_hi)]:
            key = tuple(int(x) for x in row)
            if key in seen:
                continue
            seen.add(key)
            chosen.append(key)
            if len(chosen) == len(u):
                break
    sites = np.asarray(chosen, dtype=np.int64).reshape(-1, d)
    return sites, u ** (-1.0 / alpha), np.arange(len(u), dtype=np.int64)


def sample_lattice_env(params, T, R, delta, seed, thinning=None):
    """The rescaled point process ``Pi_T`` restricted to ``B(0,R) x [delta, inf)``.

    Sites ``z`` of ``L_T = Z^d / r(T)`` carry marks ``xi(r(T) z) / a(T)`` with
    i.i.d. Pareto ``xi``.  Integer lattice coordinates are kept alongside the
    float positions.
    """
    if not R > 0 or not delta > 0:
        raise InvalidParameters("window radius and cutoff must be positive")
    a, r = scaling_factors(T, params)
    raw_radius = math.floor(R * r * (1 + 1e-12))
    if raw_radius > MAX_RAW_NORM:
        raise InvalidParameters("window too large for 64-bit lattice coordinates")
    thinning = thinning or Thinning()
    parts = []
    floors = {}
    for cell in _lattice_cells(raw_radius):
        inner = 0.0 if cell == 0 else 2.0 ** (cell - 1) / r
        fl = thinning.floor(cell, inner, delta, params)
        floors[cell] = fl
        u_max = min(1.0, (fl * a) ** (-params.alpha))
        sites, xi, ranks = _lattice_cell_raw(seed, cell, params.d, params.alpha, u_max)
        marks = xi / a
        keep = (np.abs(sites).sum(axis=1) <= raw_radius) & (marks >= fl)
        parts.append((sites[keep], marks[keep], np.full(int(keep.sum()), cell, dtype=np.int64), ranks[keep]))
    sites = np.concatenate([p[0] for p in parts]).reshape(-1, params.d)
    return MarkedPointSet(
        params=params,
        positions=sites / r,
        marks=np.concatenate([p[1] for p in parts]),
        window_radius=float(R),
        delta=float(delta),
        kind="lattice",
        seed=seed,
        T=float(T),
        lattice=sites,
        cells=np.concatenate([p[2] for p in parts]),
        ranks=np.concatenate([p[3] for p in parts]),
        floors=floors,
        thinning=thinning,
    )


def lattice_potential(params, seed, box_radius):
    """Raw i.i.d. Pareto potential on ``{z in Z^d : |z| <= box_radius}``.

    Uses the same cell streams as :func:`sample_lattice_env`, so the two agree
    site by site for equal seeds.  Returns ``(sites, xi)``.
    """
    parts = []
    for cell in _lattice_cells(box_radius):
        sites, xi, _ = _lattice_cell_raw(seed, cell, params.d, params.alpha, 1.0)
        keep = np.abs(sites).sum(axis=1) <= box_radius
        parts.append((sites[keep], xi[keep]))
    sites = np.concatenate([p[0] for p in parts]).reshape(-1, params.d)
    xi = np.concatenate([p[1] for p in parts])
    order = np.lexsort(sites.T[::-1])
    return sites[order], xi[order]


# --------------------------------------------------------------------------
# window growth and resampling


def resample(s, R=None, delta=None, thinning=None):
    """Draw the same environment (same seed and cell streams) with new settings."""
    R = s.window_radius if R is None else R
    delta = s.delta if delta is None else delta
    thinning = s.thinning if thinning is None else thinning
    if s.kind == "poisson":
        return sample_poisson_env(s.params, R, delta, s.seed, thinning)
    if s.kind == "lattice":
        return sample_lattice_env(s.params, s.T, R, delta, s.seed, thinning)
    raise InvalidInput("only sampled environments can be resampled")


def extend_annulus(s, R_new):
    """Grow the window to ``R_new``; points already present are unchanged."""
    if not R_new > s.window_radius:
        raise InvalidInput("new radius must exceed the current window radius")
    return resample(s, R=R_new)


# --------------------------------------------------------------------------
# conditions on the environment


@dataclass(frozen=True)
class A1Result:
    holds: bool
    worst_R: float | None = None
    worst_point: MarkedPoint | None = None


@dataclass(frozen=True)
class A2Result:
    holds: bool
    failing_k: int | None = None


def check_A1(s, R0, include_omitted=True):
    """Check ``max{xi(y) : |y| < R} <= q R^gamma`` for all R in [R0, window].

    A point at norm ``rho`` is constrained by the radius ``max(rho, R0)``.
    With ``include_omitted`` the floors of thinned cells count as potential
    marks, which keeps the check valid for the unthinned process.
    """
    if not R0 > 0:
        raise InvalidInput("R0 must be positive")
    params = s.params
    best = None
    if R0 <= s.window_radius:
        norms = s.norms
        binding = np.maximum(norms, R0)
        bad = s.marks > params.q * binding**params.gamma
        if bad.any():
            i = int(np.flatnonzero(bad)[np.argmin(binding[bad])])
            best = (float(binding[i]), s.point(i))
        if include_omitted:
            for cell, fl in s.floors.items():
                if fl <= s.delta:
                    continue
                inner, _ = s.cell_bounds(cell)
                rb = max(inner, R0)
                if rb <= s.window_radius and fl > params.q * rb**params.gamma:
                    if best is None or rb < best[0]:
                        best = (rb, None)
    if best is None:
        return A1Result(True)
    return A1Result(False, best[0], best[1])


def check_A2(s, r0, K):
    """Dyadic check: for k = 0..K some point has ``|Z| < r0 2^-k`` and
    ``xi(Z) >= (r0 2^-k)^gamma``.  Thinned sets give a conservative answer."""
    if not 0 < r0 <= s.window_radius:
        raise InvalidInput("need 0 < r0 <= window radius")
    norms = s.norms
    for k in range(int(K) + 1):
        r = r0 * 2.0**-k
        if not np.any((norms < r) & (s.marks >= r**s.params.gamma)):
            return A2Result(False, k)
    return A2Result(True)
