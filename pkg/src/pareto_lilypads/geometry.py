"""L1 balls, finite unions of them, and Hausdorff distances between unions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class L1Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise InvalidInput("ball radius must be nonnegative")


class SupportSet:
    """Nonempty finite union of closed L1 balls, stored as arrays."""

    def __init__(self, centers, radii):
        centers = np.asarray(centers, dtype=float)
        radii = np.asarray(radii, dtype=float).reshape(-1)
        if centers.ndim == 1:
            centers = centers.reshape(len(radii), -1)
        if len(radii) == 0:
            raise InvalidInput("a support set needs at least one ball")
        if np.any(radii < 0):
            raise InvalidInput("ball radius must be nonnegative")
        self.centers = centers
        self.radii = radii

    @classmethod
    def from_balls(cls, balls):
        balls = list(balls)
        return cls([b.center for b in balls], [b.radius for b in balls])

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def balls(self):
        return [L1Ball(tuple(c), float(r)) for c, r in zip(self.centers, self.radii)]

    def __len__(self):
        return len(self.radii)

    def contains(self, x, slack=0.0):
        """Membership of each row of ``x`` in the union (with additive slack)."""
        return dist_to_set(x, self) <= slack

    def pruned(self):
        """Drop balls contained in another ball; the union is unchanged."""
        order = np.argsort(-self.radii, kind="stable")
        keep = []
        for i in order:
            if keep:
                kc = self.centers[keep]
                kr = self.radii[keep]
                if np.any(np.abs(kc - self.centers[i]).sum(axis=1) + self.radii[i] <= kr):
                    continue
            keep.append(i)
        keep = np.sort(np.asarray(keep))
        return SupportSet(self.centers[keep], self.radii[keep])


def l1_dist(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise InvalidInput("dimension mismatch")
    out = np.abs(x - y).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def dist_to_set(x, S, chunk=4096):
    """L1 distance from ``x`` (a point or rows of points) to the union ``S``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(-1, S.dim)
    if pts.shape[1] != S.dim:
        raise InvalidInput("dimension mismatch")
    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        block = pts[lo : lo + chunk]
        gap = np.abs(block[:, None, :] - S.centers[None, :, :]).sum(axis=2) - S.radii[None, :]
        out[lo : lo + chunk] = np.maximum(gap.min(axis=1), 0.0)
    return float(out[0]) if single else out


def _van_der_corput(n):
    out = np.zeros(n)
    for i in range(n):
        k, denom, v = i, 1.0, 0.0
        while k:
            denom *= 2
            k, rem = divmod(k, 2)
            v += rem / denom
        out[i] = v
    return out


def unit_sphere_samples(d, K):
    """``K`` points on the unit L1 sphere; the first K are a prefix of the
    first K+1, so refinement is nested.

    d=2 walks the perimeter at van der Corput arc positions; higher d uses a
    Halton-type sequence mapped onto the 2^d simplex facets.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]] * ((K + 1) // 2))[:K]
    if d == 2:
        s = _van_der_corput(K) * 4.0
        edge = np.floor(s).astype(int) % 4
        f = s - np.floor(s)
        corners = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 0.0]])
        return corners[edge] * (1 - f)[:, None] + corners[edge + 1] * f[:, None]
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
    out = np.zeros((K, d))
    for i in range(K):
        facet = i % (2**d)
        signs = np.array([1.0 if (facet >> j) & 1 == 0 else -1.0 for j in range(d)])
        u = []
        for j in range(d - 1):
            b, k, denom, v = primes[j], i // (2**d) + 1, 1.0, 0.0
            while k:
                denom *= b
                k, rem = divmod(k, b)
                v += rem / denom
            u.append(v)
        cuts = np.sort(np.concatenate([[0.0], u, [1.0]]))
        out[i] = signs * np.diff(cuts)
    return out


def sample_points(S, K):
    """Ball centers plus ``K`` boundary points per ball."""
    unit = unit_sphere_samples(S.dim, K)
    boundary = S.centers[:, None, :] + S.radii[:, None, None] * unit[None, :, :]
    return np.concatenate([S.centers, boundary.reshape(-1, S.dim)])


def sampling_resolution(S, K):
    """Largest L1 gap between neighbouring boundary samples (times one half)."""
    if S.dim == 1:
        return 0.0
    if S.dim == 2:
        m = 2 ** int(math.floor(math.log2(max(K, 1))))
        return float(S.radii.max()) * 8.0 / m / 2.0
    return float(S.radii.max()) * 2.0 * S.dim / K ** (1.0 / (S.dim - 1))


def directed_hausdorff(S1, S2, K):
    # balls that also occur in S2 contribute exactly zero; skipping them
    # avoids rounding noise in their boundary samples
    shared = np.array([np.any((S2.radii == r) & np.all(S2.centers == c, axis=1)) for c, r in zip(S1.centers, S1.radii)])
    if shared.all():
        return 0.0
    rest = SupportSet(S1.centers[~shared], S1.radii[~shared])
    return float(dist_to_set(sample_points(rest, K), S2).max())


def hausdorff_sampled(S1, S2, K):
    """Sampled estimate: a lower bound on the true distance, nondecreasing in K."""
    return max(directed_hausdorff(S1, S2, K), directed_hausdorff(S2, S1, K))


def _merge_intervals(S):
    lo = S.centers[:, 0] - S.radii
    hi = S.centers[:, 0] + S.radii
    order = np.argsort(lo, kind="stable")
    merged = []
    for a, b in zip(lo[order], hi[order]):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return merged


def _directed_intervals(A, B):
    """sup over x in union(A) of dist(x, union(B)); both are merged lists."""
    best = 0.0
    cand = []
    for a, b in A:
        cand += [a, b]
        for (_, g0), (g1, _) in zip(B[:-1], B[1:]):
            mid = 0.5 * (g0 + g1)
            if a <= mid <= b:
                cand.append(mid)
    for x in cand:
        d = min(max(lo - x, x - hi, 0.0) for lo, hi in B)
        best = max(best, d)
    return best


def hausdorff_intervals(S1, S2):
    """Exact Hausdorff distance between two unions of intervals on the line."""
    if S1.dim != 1 or S2.dim != 1:
        raise InvalidInput("interval algorithm is one-dimensional")
    A, B = _merge_intervals(S1), _merge_intervals(S2)
    return max(_directed_intervals(A, B), _directed_intervals(B, A))


def hausdorff(S1, S2, K=16):
    """Hausdorff distance between unions of L1 balls.

    Exact in d=1; otherwise the sampled lower bound of
    :func:`hausdorff_sampled`, whose error is at most
    :func:`sampling_resolution` when the far point lies on a ball boundary.
    """
    if S1.dim != S2.dim:
        raise InvalidInput("dimension mismatch")
    if S1.dim == 1:
        return hausdorff_intervals(S1, S2)
    return hausdorff_sampled(S1, S2, K)
