"""Self- and cross-intersection detection and the SM / IM / NM classification.

Pipeline for a group of trajectories:

1. every non-stationary cubic Hermite segment gets a padded bounding box that
   is hashed into a uniform grid; segment pairs sharing a cell are candidates;
2. the distance between the two cubic pieces is minimized over both curve
   parameters (grid-seeded bounded Gauss-Newton);
3. pairs closer than ``eps_pos`` with both speeds above ``eps_speed`` are
   kept when their velocities differ (angle or relative magnitude); equal
   velocity coincidences are dropped;
4. adjacent surviving pairs are merged into one event;
5. with ``strict_crossing`` an event must be a genuine coincidence: its gap is
   at round-off level, or it shrinks when the trajectory is regenerated at a
   tighter tolerance, or (without a regenerator) the two pieces cross with a
   sign change.  Otherwise it is reported as a near miss.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .bloch import dim_to_n
from .propagation import Trajectory, hermite_coefficients

KINDS = ("crossing", "retrace", "loop_closure", "near_miss")
_NOISE_ULPS = 32.0
_PARALLEL_COS = 0.99
MAX_REFINE_LEVEL = 2


class Verdict(str, Enum):
    SM = "SM"
    IM = "IM"
    NM = "NM"

    @property
    def long_name(self) -> str:
        return {"SM": "StrictlyMarkovian", "IM": "InitialStateMarkovian",
                "NM": "NonMarkovian"}[self.value]


@dataclass(frozen=True)
class DetectionParams:
    """Detection tolerances.  ``None`` entries are resolved against the data:
    ``eps_pos = rel_eps_pos * R`` with R the bounding-box diagonal,
    ``tau_min = tau_steps * median step`` and ``eps_speed`` the larger of
    ``rel_eps_speed * R`` and ``min(eps_pos, rel_eps_pos * R) / tau_min``."""

    eps_pos: float | None = None
    eps_angle: float = 1e-2
    eps_relmag: float = 1e-3
    eps_speed: float | None = None
    tau_min: float | None = None
    strict_crossing: bool = True
    rel_eps_pos: float = 1e-6
    rel_eps_speed: float = 1e-8
    tau_steps: int = 10
    threads: int = 1
    use_purity_shortcut: bool = True
    noise_floor: float | None = None

    def __post_init__(self):
        for name in ("eps_pos", "eps_angle", "eps_relmag", "eps_speed", "tau_min"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    def resolve(self, trajectories: Sequence[Trajectory]) -> "DetectionParams":
        R = bounding_diagonal(trajectories)
        scale = max(R, max((float(np.max(np.abs(tr.x))) for tr in trajectories if len(tr)),
                           default=0.0), 1e-300)
        R = R if R > 0 else 1.0
        eps_pos = self.eps_pos if self.eps_pos is not None else self.rel_eps_pos * R
        eps_speed = self.eps_speed
        if eps_speed is None:
            # a segment moving less than the default position tolerance within
            # tau_min cannot carry a resolvable crossing; a looser user eps_pos
            # must not raise this floor, or events would vanish as it grows
            tau = self.tau_min if self.tau_min is not None else self.tau_steps * _median_step(
                trajectories)
            resolvable = min(eps_pos, self.rel_eps_pos * R)
            eps_speed = max(self.rel_eps_speed * R, resolvable / tau if tau > 0 else 0.0)
        return replace(
            self,
            eps_pos=eps_pos,
            eps_speed=eps_speed,
            noise_floor=self.noise_floor if self.noise_floor is not None
            else _NOISE_ULPS * np.finfo(float).eps * scale,
        )

    def tau_for(self, traj: Trajectory) -> float:
        if self.tau_min is not None:
            return self.tau_min
        dt = np.diff(traj.t)
        dt = dt[dt > 0]
        return self.tau_steps * float(np.median(dt)) if dt.size else 0.0

    def to_dict(self) -> dict:
        # the worker count never changes results, so it is left out of reports
        d = asdict(self)
        d.pop("threads")
        return {k: (float(v) if isinstance(v, np.floating) else v) for k, v in d.items()}


def _median_step(trajectories: Sequence[Trajectory]) -> float:
    dts = [np.diff(tr.t) for tr in trajectories if len(tr) > 1]
    dt = np.concatenate(dts) if dts else np.zeros(0)
    dt = dt[dt > 0]
    return float(np.median(dt)) if dt.size else 0.0


def bounding_diagonal(trajectories: Sequence[Trajectory]) -> float:
    xs = [tr.x for tr in trajectories if len(tr)]
    if not xs:
        return 0.0
    allx = np.concatenate(xs)
    return float(np.linalg.norm(allx.max(axis=0) - allx.min(axis=0)))


@dataclass(frozen=True)
class IntersectionEvent:
    t1: float
    t2: float
    x1: np.ndarray
    x2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    residual: float
    velocity_gap: float
    velocity_angle: float
    kind: str
    traj_a: int = 0
    traj_b: int = 0
    refined: bool = False
    cluster_size: int = 1

    @property
    def accepted(self) -> bool:
        return self.kind != "near_miss"

    def to_dict(self) -> dict:
        return {
            "traj_id": self.traj_a, "traj_b": self.traj_b, "t1": self.t1, "t2": self.t2,
            "x1": self.x1.tolist(), "x2": self.x2.tolist(), "residual": self.residual,
            "kind": self.kind, "velocity_angle": self.velocity_angle,
            "velocity_gap": self.velocity_gap, "refined": self.refined,
            "cluster_size": self.cluster_size,
        }


# segments ------------------------------------------------------------------

class _Segments:
    """Non-degenerate Hermite segments of one or more trajectories."""

    def __init__(self, trajs: Sequence[Trajectory], ids: Sequence[int]):
        parts = []
        for tid, tr in zip(ids, trajs):
            if len(tr) < 2:
                continue
            h = np.diff(tr.t)
            k = np.nonzero(h > 0)[0]
            parts.append((np.full(k.size, tid), k, tr.t[k], h[k], tr.x[k], tr.x[k + 1],
                          tr.v[k], tr.v[k + 1]))
        d = trajs[0].dim if trajs else 0
        if parts:
            cols = [np.concatenate(c) for c in zip(*parts)]
        else:
            cols = [np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0),
                    np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, d))]
        self.tid, self.k, self.t0, self.h, self.x0, self.x1, self.v0, self.v1 = cols
        self.coef = np.stack(hermite_coefficients(self.x0, self.x1, self.v0, self.v1, self.h)) \
            if len(self.h) else np.zeros((4, 0, d))

    def __len__(self):
        return len(self.h)


def _eval(coef, idx, s):
    return _eval_local(coef[:, idx], s)


def _eval_local(C, s):
    a0, a1, a2, a3 = C
    s = s[:, None]
    P = a0 + s * (a1 + s * (a2 + s * a3))
    dP = a1 + s * (2 * a2 + 3 * s * a3)
    return P, dP


def _closest(segA: _Segments, ia, segB: _Segments, ib, iters: int = 16):
    """Minimize |P(s) - Q(u)| over [0,1]^2 for each pair (ia[k], ib[k]).

    Seeded from the best point of a 5x5 parameter grid, then bounded
    Gauss-Newton with interleaved coordinate steps (these handle minima on
    the box boundary).
    """
    K = len(ia)
    if K == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    CA = segA.coef[:, ia]
    CB = segB.coef[:, ib]
    grid = np.linspace(0.0, 1.0, 5)
    Pg = np.stack([_eval_local(CA, np.full(K, g))[0] for g in grid], axis=1)
    Qg = np.stack([_eval_local(CB, np.full(K, g))[0] for g in grid], axis=1)
    D = np.einsum("kaid,kaid->kai", Pg[:, :, None] - Qg[:, None], Pg[:, :, None] - Qg[:, None])
    flat = np.argmin(D.reshape(K, -1), axis=1)
    s = grid[flat // 5].copy()
    u = grid[flat % 5].copy()
    for it in range(iters):
        P, dP = _eval_local(CA, s)
        Q, dQ = _eval_local(CB, u)
        F = P - Q
        a11 = np.einsum("ij,ij->i", dP, dP)
        a22 = np.einsum("ij,ij->i", dQ, dQ)
        lam = 1e-9 * (a11 + a22) + 1e-300
        if it % 3 == 2:
            s = np.clip(s - np.einsum("ij,ij->i", dP, F) / (a11 + lam), 0.0, 1.0)
            P, dP = _eval_local(CA, s)
            u = np.clip(u + np.einsum("ij,ij->i", dQ, P - Q) / (a22 + lam), 0.0, 1.0)
            continue
        a12 = -np.einsum("ij,ij->i", dP, dQ)
        g1 = np.einsum("ij,ij->i", dP, F)
        g2 = -np.einsum("ij,ij->i", dQ, F)
        det = (a11 + lam) * (a22 + lam) - a12 * a12
        s = np.clip(s - ((a22 + lam) * g1 - a12 * g2) / det, 0.0, 1.0)
        u = np.clip(u - ((a11 + lam) * g2 - a12 * g1) / det, 0.0, 1.0)
    P, _ = _eval_local(CA, s)
    Q, _ = _eval_local(CB, u)
    r = np.linalg.norm(P - Q, axis=1)
    # never worse than the seed
    seed_r = np.sqrt(D.reshape(K, -1)[np.arange(K), flat])
    worse = r > seed_r
    s[worse] = grid[flat[worse] // 5]
    u[worse] = grid[flat[worse] % 5]
    r[worse] = seed_r[worse]
    return r, s, u


def _boxes(seg: _Segments, eps_pos: float):
    chord = seg.x1 - seg.x0
    m = chord / seg.h[:, None]
    dev = 0.25 * seg.h * np.maximum(np.linalg.norm(seg.v0 - m, axis=1),
                                    np.linalg.norm(seg.v1 - m, axis=1))
    pad = (dev + 0.5 * eps_pos)[:, None]
    return np.minimum(seg.x0, seg.x1) - pad, np.maximum(seg.x0, seg.x1) + pad


def _candidate_pairs(seg: _Segments, active: np.ndarray, eps_pos: float):
    """Index pairs (i < j) of active segments whose padded boxes overlap."""
    idx = np.nonzero(active)[0]
    if idx.size < 2:
        return np.zeros(0, int), np.zeros(0, int)
    lo, hi = _boxes(seg, eps_pos)
    lo, hi = lo[idx], hi[idx]
    d = lo.shape[1]
    lengths = np.linalg.norm(seg.x1[idx] - seg.x0[idx], axis=1)
    cell = max(4.0 * eps_pos, float(np.quantile(lengths, 0.75)))
    lo_c = np.floor(lo / cell).astype(np.int64)
    hi_c = np.floor(hi / cell).astype(np.int64)
    span = hi_c - lo_c
    smax = 3 if d <= 4 else 1
    short = np.all(span <= smax, axis=1)
    keys, owners = [], []
    for off in itertools.product(range(smax + 1), repeat=d):
        off = np.array(off)
        ok = short & np.all(off <= span, axis=1)
        if np.any(ok):
            keys.append(lo_c[ok] + off)
            owners.append(np.nonzero(ok)[0])
    ii, jj = [], []
    if keys:
        keys = np.concatenate(keys)
        owners = np.concatenate(owners)
        _, gid = np.unique(keys, axis=0, return_inverse=True)
        gid = gid.reshape(-1)
        order = np.lexsort((owners, gid))
        gid, owners = gid[order], owners[order]
        bounds = np.flatnonzero(np.diff(gid)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(gid)]])
        big = np.nonzero(ends - starts >= 2)[0]
        for g in big:
            members = owners[starts[g]:ends[g]]
            a, b = np.triu_indices(len(members), 1)
            ii.append(members[a])
            jj.append(members[b])
    long_idx = np.nonzero(~short)[0]
    chunk = max(1, 2_000_000 // (len(idx) * d))
    for c in range(0, long_idx.size, chunk):
        L = long_idx[c:c + chunk]
        ov = np.ones((L.size, len(idx)), dtype=bool)
        for k in range(d):
            ov &= (lo[L, k][:, None] <= hi[:, k]) & (hi[L, k][:, None] >= lo[:, k])
        ov[np.arange(L.size), L] = False
        r, o = np.nonzero(ov)
        ii.append(L[r])
        jj.append(o)
    if not ii:
        return np.zeros(0, int), np.zeros(0, int)
    a = np.concatenate(ii)
    b = np.concatenate(jj)
    lo_ab, hi_ab = np.minimum(a, b), np.maximum(a, b)
    n = len(idx)
    code = np.unique(lo_ab.astype(np.int64) * n + hi_ab)
    a, b = code // n, code % n
    keep = np.all(lo[a] <= hi[b], axis=1) & np.all(hi[a] >= lo[b], axis=1)
    return idx[a[keep]], idx[b[keep]]


# event assembly ----------------------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, i):
        while self.p[i] != i:
            self.p[i] = self.p[self.p[i]]
            i = self.p[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.p[max(ri, rj)] = min(ri, rj)


def _kind_from_cos(c: float) -> str:
    if c < -_PARALLEL_COS:
        return "retrace"
    if c > _PARALLEL_COS:
        return "loop_closure"
    return "crossing"


def _velocity_stats(v1, v2):
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.clip(np.einsum("...i,...i->...", v1, v2) / (n1 * n2), -1.0, 1.0)
        relmag = np.abs(n1 - n2) / np.maximum(n1, n2)
    return n1, n2, cos, relmag


def _strict_sign_crossing(seg, i, j) -> bool:
    """Chords of segments i, j cross with strict sign changes in the plane of
    their tangents (2-D orientation test)."""
    p0, p1 = seg.x0[i], seg.x1[i]
    q0, q1 = seg.x0[j], seg.x1[j]
    e1 = p1 - p0
    n1 = np.linalg.norm(e1)
    if n1 == 0:
        return False
    e1 = e1 / n1
    w = q1 - q0
    e2 = w - (w @ e1) * e1
    n2 = np.linalg.norm(e2)
    if n2 <= 1e-3 * np.linalg.norm(w):
        return False
    e2 = e2 / n2
    pr = lambda x: np.array([(x - p0) @ e1, (x - p0) @ e2])  # noqa: E731
    P0, P1, Q0, Q1 = pr(p0), pr(p1), pr(q0), pr(q1)

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    return (orient(P0, P1, Q0) * orient(P0, P1, Q1) < 0
            and orient(Q0, Q1, P0) * orient(Q0, Q1, P1) < 0)


@dataclass
class _Detection:
    events: list
    near_misses: list
    coincident: int = 0
    candidates: int = 0


def _detect(trajs: Sequence[Trajectory], ids: Sequence[int], p: DetectionParams, mode: str,
            regenerate: dict | None = None) -> _Detection:
    """Shared machinery; ``mode`` is 'self' (one trajectory) or 'cross'."""
    seg = _Segments(trajs, ids)
    out = _Detection([], [])
    if len(seg) < 2:
        return out
    speed = np.maximum(np.linalg.norm(seg.v0, axis=1), np.linalg.norm(seg.v1, axis=1))
    active = speed >= p.eps_speed
    a, b = _candidate_pairs(seg, active, p.eps_pos)
    if mode == "self":
        tau = p.tau_for(trajs[0])
        ok = (seg.t0[b] - (seg.t0[a] + seg.h[a])) >= tau
    else:
        ok = seg.tid[a] != seg.tid[b]
    a, b = a[ok], b[ok]
    out.candidates = int(a.size)
    if a.size == 0:
        return out
    r, s, u = _closest(seg, a, seg, b)
    close = r < p.eps_pos
    a, b, r, s, u = a[close], b[close], r[close], s[close], u[close]
    _, dP = _eval(seg.coef, a, s)
    _, dQ = _eval(seg.coef, b, u)
    v1 = dP / seg.h[a, None]
    v2 = dQ / seg.h[b, None]
    n1, n2, cos, relmag = _velocity_stats(v1, v2)
    moving = (n1 >= p.eps_speed) & (n2 >= p.eps_speed)
    differ = (np.arccos(cos) > p.eps_angle) | (relmag > p.eps_relmag)
    out.coincident = int(np.sum(moving & ~differ))
    hit = moving & differ
    a, b, r, s, u, cos = a[hit], b[hit], r[hit], s[hit], u[hit], cos[hit]
    if a.size == 0:
        return out

    lookup = {(int(x), int(y)): k for k, (x, y) in enumerate(zip(a, b))}
    uf = _UnionFind(len(a))
    for (x, y), k in lookup.items():
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                j = lookup.get((x + dx, y + dy))
                if j is not None:
                    uf.union(k, j)
    clusters: dict[int, list[int]] = {}
    for k in range(len(a)):
        clusters.setdefault(uf.find(k), []).append(k)

    for members in clusters.values():
        rep = min(members, key=lambda k: (r[k], k))
        ia, ib = int(a[rep]), int(b[rep])
        ev = _make_event(seg, seg, ia, ib, float(s[rep]), float(u[rep]), float(r[rep]),
                         len(members))
        genuine = ev.residual <= p.noise_floor or not p.strict_crossing
        if not genuine:
            ta, tb = int(seg.tid[ia]), int(seg.tid[ib])
            if regenerate is not None and ta in regenerate and tb in regenerate:
                refined = _refine(ev, seg, ia, ib, regenerate[ta], regenerate[tb], ta, tb, p)
                if refined is not None:
                    differ = _velocities_differ(refined, p)
                    if not differ:
                        # the converged point has equal velocities or sits at rest
                        out.coincident += 1
                        continue
                    ev = refined
                    genuine = True
            elif ev.kind == "crossing":
                genuine = any(_strict_sign_crossing(seg, int(a[k]), int(b[k]))
                              for k in members)
        if genuine:
            out.events.append(ev)
        else:
            out.near_misses.append(replace(ev, kind="near_miss"))
    key = lambda e: (e.traj_a, e.traj_b, e.t1, e.t2)  # noqa: E731
    span = max(float(tr.t[-1] - tr.t[0]) for tr in trajs)
    out.events = _dedupe(out.events, 1e-9 * max(span, 1.0))
    out.events.sort(key=key)
    out.near_misses.sort(key=key)
    return out


def _make_event(fa, fb, ia, ib, s, u, r, size, refined=False) -> IntersectionEvent:
    P, dP = _eval(fa.coef, np.array([ia]), np.array([s]))
    Q, dQ = _eval(fb.coef, np.array([ib]), np.array([u]))
    v1 = dP[0] / fa.h[ia]
    v2 = dQ[0] / fb.h[ib]
    _, _, cos, _ = _velocity_stats(v1, v2)
    return IntersectionEvent(
        t1=float(fa.t0[ia] + s * fa.h[ia]), t2=float(fb.t0[ib] + u * fb.h[ib]),
        x1=P[0], x2=Q[0], v1=v1, v2=v2, residual=r,
        velocity_gap=float(np.linalg.norm(v1 - v2)), velocity_angle=float(np.arccos(cos)),
        kind=_kind_from_cos(float(cos)), traj_a=int(fa.tid[ia]), traj_b=int(fb.tid[ib]),
        refined=refined, cluster_size=size,
    )


def _window(seg: _Segments, t_lo: float, t_hi: float) -> np.ndarray:
    return np.nonzero((seg.t0 + seg.h >= t_lo) & (seg.t0 <= t_hi))[0]


def _window_min(tra, trb, ta, tb, ev, wa, wb, size, refined):
    """Closest approach between the two branches within +/- wa, wb of the event."""
    fa = _Segments([tra], [ta])
    fb = fa if ta == tb else _Segments([trb], [tb])
    A = _window(fa, ev.t1 - wa, ev.t1 + wa)
    B = _window(fb, ev.t2 - wb, ev.t2 + wb)
    ia, ib = np.repeat(A, B.size), np.tile(B, A.size)
    if ta == tb:
        ok = ia < ib
        ia, ib = ia[ok], ib[ok]
    if ia.size == 0:
        return None
    r, s, u = _closest(fa, ia, fb, ib)
    k = int(np.argmin(r))
    return _make_event(fa, fb, int(ia[k]), int(ib[k]), float(s[k]), float(u[k]), float(r[k]),
                       size, refined)


def _refine(ev, seg, ia, ib, regen_a, regen_b, ta, tb, p) -> IntersectionEvent | None:
    """Convergence check.  Over fixed windows around the event, the gap must
    shrink at least tenfold per refinement level (tol / 100, h_max / 4) until
    it reaches the round-off floor; a gap that plateaus is a near miss.
    Returns the most refined event, or None."""
    wa = 2.0 * seg.h[ia]
    wb = 2.0 * seg.h[ib]
    prev = None
    for level in range(MAX_REFINE_LEVEL + 1):
        tra = regen_a(level)
        trb = tra if ta == tb else regen_b(level)
        cur = _window_min(tra, trb, ta, tb, ev, wa, wb, ev.cluster_size, level > 0)
        if cur is None:
            return None
        if prev is not None:
            if cur.residual >= p.eps_pos:
                return None
            if cur.residual > max(p.noise_floor, min(prev.residual, ev.residual) / 10.0):
                return None
            if cur.residual <= p.noise_floor:
                return cur
        prev = cur
    return prev


def _velocities_differ(ev: IntersectionEvent, p: DetectionParams) -> bool | None:
    """None when a branch is stationary, else whether the velocities differ."""
    n1, n2, cos, relmag = _velocity_stats(ev.v1, ev.v2)
    if n1 < p.eps_speed or n2 < p.eps_speed:
        return None
    return bool(np.arccos(cos) > p.eps_angle or relmag > p.eps_relmag)


def _dedupe(events: list, tol: float) -> list:
    out: list = []
    for ev in sorted(events, key=lambda e: (e.traj_a, e.traj_b, e.t1, e.t2, e.residual)):
        if any(o.traj_a == ev.traj_a and o.traj_b == ev.traj_b and abs(o.t1 - ev.t1) <= tol
               and abs(o.t2 - ev.t2) <= tol for o in out):
            continue
        out.append(ev)
    return out


# public detectors -----------------------------------------------------------------

Regenerator = Callable[[int], Trajectory]


def _resolved(p: DetectionParams | None, trajs) -> DetectionParams:
    p = p or DetectionParams()
    if p.eps_pos is None or p.eps_speed is None or p.noise_floor is None:
        p = p.resolve(trajs)
    return p


def find_self_intersections(traj: Trajectory, p: DetectionParams | None = None,
                            regenerate: Regenerator | None = None,
                            include_near_miss: bool = False) -> list[IntersectionEvent]:
    """Accepted self events of one trajectory (near misses appended on request).

    ``regenerate(level)`` must return the same trajectory integrated at
    ``tol / 100**level``; it enables the convergence check of step 5.
    """
    if len(traj) < 2:
        raise ValueError("self-intersection search needs at least 2 samples")
    p = _resolved(p, [traj])
    det = _detect([traj], [0], p, "self", {0: regenerate} if regenerate else None)
    return det.events + (det.near_misses if include_near_miss else [])


def find_cross_intersections(traj_a: Trajectory, traj_b: Trajectory,
                             p: DetectionParams | None = None,
                             regenerate_a: Regenerator | None = None,
                             regenerate_b: Regenerator | None = None,
                             include_near_miss: bool = False) -> list[IntersectionEvent]:
    # one trajectory passed twice coincides with itself everywhere; its
    # different-time meetings are self events, not cross events
    if traj_a.same_samples(traj_b):
        return []
    p = _resolved(p, [traj_a, traj_b])
    regen = None
    if regenerate_a is not None and regenerate_b is not None:
        regen = {0: regenerate_a, 1: regenerate_b}
    det = _detect([traj_a, traj_b], [0, 1], p, "cross", regen)
    return det.events + (det.near_misses if include_near_miss else [])


# classification -------------------------------------------------------------------

@dataclass
class ClassificationReport:
    verdict: Verdict
    horizon: float
    params: DetectionParams
    self_events: dict
    cross_events: list
    nm_ratio: float
    near_miss_count: int
    purity_shortcut_applied: bool
    caveats: list
    n_trajectories: int = 0
    model_time_independent: bool | None = None
    cross_searched: bool = True

    @property
    def event_count(self) -> int:
        return sum(len(v) for v in self.self_events.values()) + len(self.cross_events)

    def all_self_events(self) -> list[IntersectionEvent]:
        return [e for k in sorted(self.self_events) for e in self.self_events[k]]

    def to_dict(self) -> dict:
        events = [e.to_dict() for e in self.all_self_events()]
        return {
            "verdict": self.verdict.value,
            "verdict_name": self.verdict.long_name,
            "horizon": self.horizon,
            "params": self.params.to_dict(),
            "events": events,
            "cross_events": [e.to_dict() for e in self.cross_events],
            "nm_ratio": self.nm_ratio,
            "near_miss_count": self.near_miss_count,
            "purity_shortcut_applied": self.purity_shortcut_applied,
            "model_time_independent": self.model_time_independent,
            "n_trajectories": self.n_trajectories,
            "cross_searched": self.cross_searched,
            "caveats": list(self.caveats),
        }


def _threads(p: DetectionParams) -> int:
    if p.threads and p.threads > 0:
        return p.threads
    return int(os.environ.get("TRAJMARK_THREADS", "1") or 1)


def _regenerators(tset) -> dict | None:
    src = getattr(tset, "source", None)
    if src is None:
        return None
    return {k: (lambda level, k=k: src.trajectory(k, level)) for k in range(len(tset))}


def _self_detections(tset, p: DetectionParams) -> list[_Detection]:
    regen = _regenerators(tset)

    def run(k):
        tr = tset[k]
        if len(tr) < 2:
            return _Detection([], [])
        return _detect([tr], [k], p, "self", {k: regen[k]} if regen else None)

    n = _threads(p)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(run, range(len(tset))))
    return [run(k) for k in range(len(tset))]


def nm_ratio(tset, p: DetectionParams | None = None, detections=None) -> float:
    """Fraction of trajectories with at least one accepted self event."""
    if len(tset) == 0:
        raise ValueError("nm_ratio needs a non-empty set")
    p = _resolved(p, list(tset))
    dets = detections if detections is not None else _self_detections(tset, p)
    return sum(1 for d in dets if d.events) / len(tset)


def self_event_summary(tset, p: DetectionParams | None = None) -> dict:
    p = _resolved(p, list(tset))
    dets = _self_detections(tset, p)
    return {
        "nm_ratio": sum(1 for d in dets if d.events) / len(tset),
        "accepted": sum(len(d.events) for d in dets),
        "near_miss_count": sum(len(d.near_misses) for d in dets),
        "trajectories_with_events": [k for k, d in enumerate(dets) if d.events],
    }


def purity_monotone_check(tset, eps_speed: float | None = None) -> bool:
    """True iff d|x|^2/dt < 0 at every sample moving faster than ``eps_speed``."""
    dim_to_n(tset.dim)
    if eps_speed is None:
        eps_speed = 1e-8 * (bounding_diagonal(list(tset)) or 1.0)
    for tr in tset:
        speed = np.linalg.norm(tr.v, axis=1)
        moving = speed >= eps_speed
        rate = np.einsum("ij,ij->i", tr.x, tr.v)
        if np.any(rate[moving] >= 0):
            return False
    return True


def classify(tset, p: DetectionParams | None = None, model=None) -> ClassificationReport:
    if len(tset) == 0:
        raise ValueError("classify needs a non-empty trajectory set")
    p = _resolved(p, list(tset))
    model = model if model is not None else getattr(tset, "model", None)
    horizon = tset.horizon
    caveats = [f"verdict holds up to horizon T={horizon:g} and N={len(tset)} sampled "
               "initial states"]

    shortcut = False
    if p.use_purity_shortcut:
        try:
            shortcut = purity_monotone_check(tset, p.eps_speed)
        except ValueError:
            shortcut = False
    if shortcut:
        dets = [_Detection([], []) for _ in range(len(tset))]
        caveats.append("purity strictly decreasing: self-intersection search skipped")
    else:
        dets = _self_detections(tset, p)
    self_events = {k: d.events for k, d in enumerate(dets) if d.events}
    near = sum(len(d.near_misses) for d in dets)
    ratio = sum(1 for d in dets if d.events) / len(tset)

    cross: list = []
    cross_searched = False
    indep = None
    if model is not None:
        indep = bool(model.is_time_independent(np.linspace(0.0, horizon, 64)))
    if self_events:
        verdict = Verdict.NM
    else:
        cross_searched = True
        regen = _regenerators(tset)
        det = _detect(list(tset), list(range(len(tset))), p, "cross", regen)
        cross = det.events
        if cross:
            verdict = Verdict.IM
        elif model is None:
            verdict = Verdict.SM
            caveats.append("no model attached: strict Markovianity inferred from the absence "
                           "of intersections only")
        else:
            verdict = Verdict.SM if indep else Verdict.IM
    return ClassificationReport(verdict, horizon, p, self_events, cross, ratio, near, shortcut,
                                caveats, len(tset), indep, cross_searched)
