"""Initial-state sampling, trajectory sets, the text file format and time reversal.

File format (UTF-8, LF)::

    # trajset v1 dim=<d> provenance=<label>
    ## traj id=0
    t,x1,...,xd,v1,...,vd
    ...
    <blank line>
    ## traj id=1
    ...

Floats are written with ``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bloch import dim_to_n, ket_to_bloch, to_bloch
from .model import ReversedModel
from .propagation import DEFAULT_TOL, PropagatorTable, Trajectory, propagate

STRATEGIES = ("pure-uniform", "ball-uniform", "grid", "canonical", "explicit-list")


class TrajsetParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class SamplerSpec:
    strategy: str = "pure-uniform"
    count: int = 20
    seed: int = 0
    states: tuple = ()
    include_canonical: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}; "
                             f"valid: {', '.join(STRATEGIES)}")
        if self.strategy != "explicit-list" and self.count < 1:
            raise ValueError("count must be >= 1")
        object.__setattr__(self, "states", tuple(tuple(float(c) for c in s) for s in self.states))

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "count": self.count, "seed": self.seed,
                "states": [list(s) for s in self.states],
                "include_canonical": self.include_canonical}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerSpec":
        return cls(d.get("strategy", "pure-uniform"), int(d.get("count", 20)),
                   int(d.get("seed", 0)), tuple(tuple(s) for s in d.get("states", ())),
                   bool(d.get("include_canonical", True)))


def _quantum_n(dim: int) -> int | None:
    try:
        return dim_to_n(dim)
    except ValueError:
        return None


def canonical_states(dim: int) -> list[np.ndarray]:
    """Unit +/- axis vectors, computational basis states and the origin."""
    out = []
    for i in range(dim - 1, -1, -1) if dim == 3 else range(dim):
        for sgn in (1.0, -1.0):
            e = np.zeros(dim)
            e[i] = sgn
            out.append(e)
    n = _quantum_n(dim)
    if n is not None and n > 2:
        for k in range(n):
            psi = np.zeros(n)
            psi[k] = 1.0
            out.append(ket_to_bloch(psi))
    out.append(np.zeros(dim))
    uniq = []
    for s in out:
        if not any(np.array_equal(s, u) for u in uniq):
            uniq.append(s)
    return uniq


def _random_pure(rng, dim: int, count: int) -> list[np.ndarray]:
    n = _quantum_n(dim)
    if n is None or n == 2:
        g = rng.standard_normal((count, dim))
        return list(g / np.linalg.norm(g, axis=1, keepdims=True))
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    return [ket_to_bloch(psi) for psi in z]


def _random_ball(rng, dim: int, count: int) -> list[np.ndarray]:
    n = _quantum_n(dim)
    if n is None or n == 2:
        g = rng.standard_normal((count, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(count) ** (1.0 / dim)
        return list(g * r[:, None])
    out = []
    for _ in range(count):
        G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        rho = G @ G.conj().T
        out.append(to_bloch(rho / np.trace(rho).real))
    return out


def _grid(dim: int, count: int) -> list[np.ndarray]:
    k = max(2, int(round(count ** (1.0 / dim))))
    axis = np.linspace(-1.0, 1.0, k)
    pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), -1).reshape(-1, dim)
    inside = pts[np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12]
    return list(inside[:count])


def sample_initial_states(spec: SamplerSpec, dim: int) -> list[np.ndarray]:
    """Deterministic initial Bloch vectors; canonical states come first when merged."""
    rng = np.random.default_rng(spec.seed)
    if spec.strategy == "canonical":
        states = canonical_states(dim)
    elif spec.strategy == "explicit-list":
        states = [np.asarray(s, dtype=float) for s in spec.states]
        for s in states:
            if s.shape != (dim,):
                raise ValueError(f"explicit state {s} does not have length {dim}")
        return states
    elif spec.strategy == "pure-uniform":
        states = _random_pure(rng, dim, spec.count)
    elif spec.strategy == "ball-uniform":
        states = _random_ball(rng, dim, spec.count)
    else:
        states = _grid(dim, spec.count)
    if spec.include_canonical and spec.strategy != "canonical":
        states = canonical_states(dim) + list(states)
    extra = [np.asarray(s, dtype=float) for s in spec.states]
    return states + extra


class SetSource:
    """Regenerates the trajectories of a model-generated set, optionally refined.

    All trajectories share one propagator table, so a refined rerun costs a
    single integration of the affine propagator.
    """

    def __init__(self, model, initial_states, t_span, tol=DEFAULT_TOL, h_max=None,
                 reduction=None, label=None):
        self.model = model
        self.initial_states = [np.asarray(s, dtype=float) for s in initial_states]
        self.t_span = (float(t_span[0]), float(t_span[1]))
        self.tol = tol
        self.h_max = h_max if h_max else (self.t_span[1] - self.t_span[0]) / 512
        self.reduction = reduction  # (R, E, e) or None
        self.label = label or model.label
        self._tables: dict[int, PropagatorTable] = {}

    def table(self, level: int = 0) -> PropagatorTable:
        if level not in self._tables:
            tol = self.tol / 100.0**level
            h_max = self.h_max / 4.0**level
            tab = propagate(self.model, self.t_span, tol, h_max)
            if self.reduction is not None:
                tab = tab.reduce(*self.reduction, label=self.label)
            else:
                tab = replace(tab, label=self.label)
            self._tables[level] = tab
        return self._tables[level]

    def trajectory(self, index: int, level: int = 0) -> Trajectory:
        return self.table(level).trajectory(self.initial_states[index])


class ReversedSource:
    def __init__(self, base, t_end: float):
        self.base = base
        self.t_end = t_end

    def trajectory(self, index: int, level: int = 0) -> Trajectory:
        return reverse_trajectory(self.base.trajectory(index, level), self.t_end)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    dim: int
    trajectories: tuple
    provenance: str = "unknown"
    sampler: dict = field(default_factory=dict)
    model: object = None
    source: object = None

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        for tr in trajs:
            if tr.dim != self.dim:
                raise ValueError(f"trajectory of dim {tr.dim} in a dim={self.dim} set")
        object.__setattr__(self, "trajectories", trajs)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    @property
    def horizon(self) -> float:
        if not self.trajectories:
            return 0.0
        return max(float(tr.t[-1]) for tr in self.trajectories)

    def same_samples(self, other: "TrajectorySet") -> bool:
        return (self.dim == other.dim and len(self) == len(other)
                and all(a.same_samples(b) for a, b in zip(self, other)))


def simulate_set(model, initial_states, t_span, tol=DEFAULT_TOL, h_max=None,
                 reduction=None, label=None, sampler: dict | None = None) -> TrajectorySet:
    src = SetSource(model, initial_states, t_span, tol, h_max, reduction, label)
    trajs = tuple(src.trajectory(i) for i in range(len(src.initial_states)))
    dim = trajs[0].dim if trajs else (model.dim if reduction is None else reduction[0].shape[0])
    return TrajectorySet(dim, trajs, f"model:{src.label}", sampler or {}, model, src)


# persistence ----------------------------------------------------------------

_HEADER = re.compile(r"^# trajset v1 dim=(\d+) provenance=(\S*)\s*$")


def _fmt(v: float) -> str:
    return repr(float(v))


def persist_trajset(tset: TrajectorySet, path) -> None:
    lines = [f"# trajset v1 dim={tset.dim} provenance={tset.provenance.replace(' ', '_')}"]
    for k, tr in enumerate(tset):
        if k:
            lines.append("")
        lines.append(f"## traj id={k}")
        for t, x, v in zip(tr.t, tr.x, tr.v):
            lines.append(",".join([_fmt(t)] + [_fmt(c) for c in x] + [_fmt(c) for c in v]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_blocks(text: str, require_header: bool = True):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    dim = provenance = None
    start = 0
    if lines and lines[0].startswith("# trajset"):
        m = _HEADER.match(lines[0])
        if not m:
            raise TrajsetParseError("malformed header", 1)
        dim, provenance = int(m.group(1)), m.group(2)
        start = 1
    elif require_header:
        raise TrajsetParseError("missing '# trajset v1' header", 1)
    blocks, cur = [], []
    for lineno, raw in enumerate(lines[start:], start + 1):
        line = raw.rstrip("\r")
        if not line.strip():
            if cur:
                blocks.append(cur)
                cur = []
            continue
        if line.startswith("#"):
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise TrajsetParseError(f"cannot parse row {line!r}", lineno) from None
        cur.append((lineno, row))
    if cur:
        blocks.append(cur)
    return dim, provenance, blocks


def load_trajset(path) -> TrajectorySet:
    with open(path, encoding="utf-8") as fh:
        dim, provenance, blocks = _parse_blocks(fh.read())
    trajs = []
    for block in blocks:
        for lineno, row in block:
            if len(row) != 1 + 2 * dim:
                raise TrajsetParseError(
                    f"expected {1 + 2 * dim} columns for dim={dim}, got {len(row)}", lineno)
        arr = np.array([row for _, row in block])
        if np.any(np.diff(arr[:, 0]) < 0):
            raise TrajsetParseError("timestamps decrease", block[0][0])
        trajs.append(Trajectory(arr[:, 0], arr[:, 1:1 + dim], arr[:, 1 + dim:],
                                model_label=provenance))
    return TrajectorySet(dim, tuple(trajs), provenance)


def write_series(path, series: Sequence[tuple[np.ndarray, np.ndarray]], provenance="series"):
    """Write position-only blocks ``(t, x)`` in the trajectory format."""
    dim = series[0][1].shape[1] if series else 0
    lines = [f"# trajset v1 dim={dim} provenance={provenance}"]
    for k, (t, x) in enumerate(series):
        if k:
            lines.append("")
        lines.append(f"## traj id={k}")
        for ti, xi in zip(t, x):
            lines.append(",".join([_fmt(ti)] + [_fmt(c) for c in xi]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _central_difference(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.gradient(x, t, axis=0, edge_order=1)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    out = np.empty_like(x)
    m = len(x)
    for i in range(m):
        w = min(half, i, m - 1 - i)
        out[i] = x[i - w:i + w + 1].mean(axis=0)
    return out


def ingest_timeseries(path, derivative_policy: str = "central-difference",
                      window: int = 5, dim: int | None = None) -> TrajectorySet:
    """Load an external series, filling velocities per ``derivative_policy``.

    Policies: ``provided`` (v columns in the file), ``central-difference``,
    ``smoothed-difference`` (centred moving average of odd ``window`` first).
    Without a header line the dimension is ``dim`` if given, else inferred
    from the column count (``t,x,v`` for ``provided``, ``t,x`` otherwise).
    """
    if derivative_policy not in ("provided", "central-difference", "smoothed-difference"):
        raise ValueError(f"unknown derivative policy {derivative_policy!r}")
    if derivative_policy == "smoothed-difference" and (window < 1 or window % 2 == 0):
        raise ValueError("smoothing window must be a positive odd integer")
    with open(path, encoding="utf-8") as fh:
        header_dim, provenance, blocks = _parse_blocks(fh.read(), require_header=False)
    if header_dim is not None:
        if dim is not None and dim != header_dim:
            raise ValueError(f"dim={dim} conflicts with header dim={header_dim}")
        dim = header_dim
    provenance = f"ingested:{provenance or str(path).replace(' ', '_')}"
    trajs = []
    for block in blocks:
        ncols = {len(r) for _, r in block}
        if len(ncols) != 1:
            raise TrajsetParseError("inconsistent column count", block[0][0])
        nc = ncols.pop()
        if dim is not None:
            d = dim
        elif derivative_policy == "provided":
            if (nc - 1) % 2:
                raise TrajsetParseError(f"{nc} columns cannot hold t,x,v", block[0][0])
            d = (nc - 1) // 2
        else:
            d = nc - 1
        if nc not in (1 + d, 1 + 2 * d):
            raise TrajsetParseError(f"{nc} columns do not match dim={d}", block[0][0])
        dim = d
        arr = np.array([r for _, r in block])
        t = arr[:, 0]
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"non-monotone timestamps in block starting at line {block[0][0]}")
        x = arr[:, 1:1 + d]
        if derivative_policy == "provided":
            if nc != 1 + 2 * d:
                raise ValueError("policy 'provided' needs velocity columns")
            v = arr[:, 1 + d:]
        else:
            if len(t) < 3:
                raise ValueError("difference policies need at least 3 samples")
            xs = _moving_average(x, window) if derivative_policy == "smoothed-difference" else x
            v = _central_difference(t, xs)
        trajs.append(Trajectory(t, x, v, model_label=provenance))
    return TrajectorySet(dim or 0, tuple(trajs), provenance,
                         {"derivative_policy": derivative_policy, "window": window})


# time reversal ----------------------------------------------------------------

def reverse_trajectory(tr: Trajectory, t_max: float) -> Trajectory:
    return Trajectory((t_max - tr.t)[::-1], tr.x[::-1], -tr.v[::-1], None,
                      tr.model_label, dict(tr.meta, reversed=not tr.meta.get("reversed", False)))


def time_reverse(tset: TrajectorySet) -> TrajectorySet:
    """Reverse every trajectory: ``t -> t_max - t`` and ``v -> -v``.

    Attached models and regeneration sources are wrapped so that the reversed
    set can still be classified with the same machinery.
    """
    t_max = tset.horizon
    trajs = tuple(reverse_trajectory(tr, t_max) for tr in tset)
    model = ReversedModel(tset.model, t_max) if tset.model is not None else None
    if isinstance(tset.model, ReversedModel) and tset.model.t_end == t_max:
        model = tset.model.base
    source = None
    if tset.source is not None:
        if isinstance(tset.source, ReversedSource) and tset.source.t_end == t_max:
            source = tset.source.base
        else:
            source = ReversedSource(tset.source, t_max)
    prov = tset.provenance
    prov = prov[len("reversed:"):] if prov.startswith("reversed:") else "reversed:" + prov
    return TrajectorySet(tset.dim, trajs, prov, dict(tset.sampler), model, source)
