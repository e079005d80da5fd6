"""Rival non-Markovianity witnesses and the five-model comparison grid.

Each criterion returns a :class:`CriterionResult` holding an ``M`` / ``NM``
verdict and the witness value compared against the criterion's threshold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bloch import dim_to_n, from_coords, operator_coords, su_basis
from .model import kossakowski
from .propagation import (DEFAULT_TOL, SingularPropagatorError, intermediate_map,
                          interval_map, propagator_grid)
from .store import SamplerSpec, sample_initial_states

CRITERIA = ("blp", "rates", "cpdiv", "volume")
CRITERION_NAMES = {"blp": "TraceDistance", "rates": "DecayRates", "cpdiv": "CPDivisibility",
                   "volume": "BlochVolume"}

BLP_THRESHOLD = 1e-6
RATE_THRESHOLD = -1e-9
CHOI_THRESHOLD = -1e-8
VOLUME_THRESHOLD = 1e-9

BLP_GRID = 401
RATE_GRID = 201
CP_GRID = 101
VOLUME_GRID = 201


@dataclass
class CriterionResult:
    criterion: str
    verdict: str
    witness: float
    threshold: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "verdict": self.verdict, "witness": self.witness,
                "threshold": self.threshold, "meta": self.meta}


def _grid(horizon: float, size: int) -> np.ndarray:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if size < 2:
        raise ValueError("grid needs at least 2 points")
    return np.linspace(0.0, float(horizon), int(size))


# trace distance ---------------------------------------------------------------

def _pair_states(dim: int, sampler: SamplerSpec | None, n_random: int) -> list:
    """Antipodal pure pairs on every axis, canonical pairs, then random pure pairs."""
    pairs = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        pairs.append((e, -e))
    n = dim_to_n(dim)
    if n > 2:
        # pairs of orthogonal computational basis states
        basis = sample_initial_states(SamplerSpec("canonical"), dim)
        pure = [s for s in basis if abs(np.linalg.norm(s) - np.sqrt(n * (n - 1) / 2)) < 1e-12]
        pairs += [(pure[i], pure[j]) for i in range(len(pure)) for j in range(i + 1, len(pure))]
    sampler = sampler or SamplerSpec("pure-uniform", 2 * n_random, 0, include_canonical=False)
    rand = sample_initial_states(sampler, dim)
    pairs += [(rand[2 * k], rand[2 * k + 1]) for k in range(len(rand) // 2)]
    return pairs


def _trace_distances(diff: np.ndarray, n: int) -> np.ndarray:
    """Trace distance for Bloch differences of shape (..., d)."""
    if n == 2:
        return 0.5 * np.linalg.norm(diff, axis=-1)
    basis = su_basis(n)
    ops = np.tensordot(diff, basis.elements, axes=([-1], [0])) / n
    eig = np.linalg.eigvalsh(ops)
    return 0.5 * np.abs(eig).sum(axis=-1)


def blp_measure(model, pair_sampler: SamplerSpec | None = None, horizon: float = 10.0,
                grid_size: int = BLP_GRID, n_random: int = 200,
                tol: float = DEFAULT_TOL) -> CriterionResult:
    """Information backflow: N = max over pairs of the integral of max(dD/dt, 0)."""
    t = _grid(horizon, grid_size)
    props = propagator_grid(model, t, tol)
    M = np.stack([P.M for P in props])
    pairs = _pair_states(model.dim, pair_sampler, n_random)
    diffs = np.stack([a - b for a, b in pairs])  # (p, d)
    xdiff = np.einsum("tij,pj->pti", M, diffs)  # offsets cancel
    D = _trace_distances(xdiff, dim_to_n(model.dim))
    sigma = np.gradient(D, t, axis=1)
    dt = np.gradient(t)
    N = np.sum(np.clip(sigma, 0.0, None) * dt, axis=1)
    k = int(np.argmax(N))
    witness = float(N[k])
    return CriterionResult("TraceDistance", "NM" if witness > BLP_THRESHOLD else "M", witness,
                           BLP_THRESHOLD, {"horizon": float(horizon), "grid_size": int(grid_size),
                                           "pairs": len(pairs), "best_pair": k})


# decay rates ------------------------------------------------------------------

def decay_rate_criterion(model, t_grid) -> CriterionResult:
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0):
        raise ValueError("grid times must be non-negative")
    worst, t_worst = np.inf, None
    for t in t_grid:
        r = float(np.min(kossakowski(model, t).rates))
        if r < worst:
            worst, t_worst = r, float(t)
    return CriterionResult("DecayRates", "NM" if worst < RATE_THRESHOLD else "M", worst,
                           RATE_THRESHOLD, {"grid_size": int(t_grid.size), "t_min_rate": t_worst})


# CP divisibility ---------------------------------------------------------------

def lift_to_operator_map(M: np.ndarray, c: np.ndarray, n: int):
    """Linear extension of the affine Bloch map ``x -> M x + c`` to n x n matrices."""
    basis = su_basis(n)

    def V(X):
        tr, x = operator_coords(X, basis)
        return from_coords(tr, M @ x + tr * c, basis)

    return V


def choi_matrix(V, n: int) -> np.ndarray:
    """``C = sum_ij |i><j| (x) V(|i><j|)``."""
    C = np.zeros((n * n, n * n), dtype=complex)
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = 1.0
            C[i * n:(i + 1) * n, j * n:(j + 1) * n] = V(E)
    return C


def min_choi_eigenvalue(M: np.ndarray, c: np.ndarray, n: int) -> float:
    C = choi_matrix(lift_to_operator_map(M, c, n), n)
    return float(np.linalg.eigvalsh(0.5 * (C + C.conj().T))[0])


def cp_divisibility_criterion(model, t_grid, delta: float | None = None,
                              tol: float = DEFAULT_TOL) -> CriterionResult:
    """Choi positivity of every intermediate map between consecutive grid times."""
    t_grid = np.asarray(t_grid, dtype=float)
    steps = np.diff(t_grid)
    if delta is not None:
        if not delta > 0:
            raise ValueError("delta must be positive")
        if np.any(steps < delta * (1 - 1e-12)):
            raise ValueError("grid step must be at least delta")
    n = dim_to_n(model.dim)
    props = propagator_grid(model, t_grid, tol)
    worst, t_worst, fallback = np.inf, None, []
    for P_s, P_t in zip(props[:-1], props[1:]):
        try:
            M, c = intermediate_map(P_s, P_t)
        except SingularPropagatorError:
            M, c = interval_map(model, P_s.t, P_t.t, tol)
            fallback.append((P_s.t, P_t.t))
        lam = min_choi_eigenvalue(M, c, n)
        if lam < worst:
            worst, t_worst = lam, (P_s.t, P_t.t)
    return CriterionResult("CPDivisibility", "NM" if worst < CHOI_THRESHOLD else "M", worst,
                           CHOI_THRESHOLD, {"grid_size": int(t_grid.size), "worst_interval":
                                            t_worst, "direct_intervals": len(fallback)})


# Bloch volume -------------------------------------------------------------------

def bloch_volume_criterion(model, t_grid) -> CriterionResult:
    """NM iff Tr A(t) > 0 somewhere, i.e. |det M(t)| grows."""
    t_grid = np.asarray(t_grid, dtype=float)
    traces = np.array([np.trace(model.affine_form(t).A) for t in t_grid])
    k = int(np.argmax(traces))
    w = float(traces[k])
    return CriterionResult("BlochVolume", "NM" if w > VOLUME_THRESHOLD else "M", w,
                           VOLUME_THRESHOLD, {"grid_size": int(t_grid.size),
                                              "t_max_trace": float(t_grid[k])})


def bloch_volume_from_det(model, t_grid, tol: float = DEFAULT_TOL) -> str:
    """Second implementation: sign of the numerical derivative of log|det M(t)|."""
    t_grid = np.asarray(t_grid, dtype=float)
    props = propagator_grid(model, t_grid, tol)
    logdet = np.array([np.linalg.slogdet(P.M)[1] for P in props])
    # once the volume underflows it cannot be seen to grow again
    finite = np.isfinite(logdet)
    k = int(np.argmin(finite)) if not finite.all() else len(logdet)
    if k < 2:
        return "M"
    rate = np.diff(logdet[:k]) / np.diff(t_grid[:k])
    return "NM" if np.max(rate) > VOLUME_THRESHOLD else "M"


# comparison grid ------------------------------------------------------------------

def evaluate(model, horizon: float, criteria=CRITERIA, tol: float = DEFAULT_TOL,
             threads: int = 1) -> dict[str, CriterionResult]:
    unknown = [c for c in criteria if c not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}; valid: {', '.join(CRITERIA)}")
    jobs = {
        "blp": lambda: blp_measure(model, horizon=horizon, tol=tol),
        "rates": lambda: decay_rate_criterion(model, _grid(horizon, RATE_GRID)),
        "cpdiv": lambda: cp_divisibility_criterion(model, _grid(horizon, CP_GRID), tol=tol),
        "volume": lambda: bloch_volume_criterion(model, _grid(horizon, VOLUME_GRID)),
    }
    names = list(criteria)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: jobs[c](), names))
    else:
        results = [jobs[c]() for c in names]
    return dict(zip(names, results))


# expected grid: our verdict then the four rival columns; '*' marks naive use
TABLE1_EXPECTED = {
    "ex1": ("SM", "NM*", "NM*", "NM*", "NM*"),
    "ex2": ("NM", "M", "M", "M", "M"),
    "ex3": ("NM", "M", "M", "M", "M"),
    "ex4": ("IM", "M", "NM", "NM", "M"),
    "ex5_ramp": ("NM", "M", "M", "M", "M"),
}


@dataclass
class TableRow:
    entry_id: str
    trajectory_verdict: str
    results: dict
    physical: bool = True

    def cells(self) -> tuple:
        mark = "" if self.physical else "*"
        return (self.trajectory_verdict,) + tuple(
            self.results[c].verdict + mark for c in CRITERIA if c in self.results)

    def to_dict(self) -> dict:
        return {"id": self.entry_id, "trajectory": self.trajectory_verdict,
                "physical": self.physical, "cells": list(self.cells()),
                "criteria": {c: r.to_dict() for c, r in self.results.items()}}


def criteria_table(entries, classify_fn=None, threads: int = 1) -> list[TableRow]:
    """One row per catalog entry: our verdict plus the four rival verdicts."""
    from .intersect import DetectionParams, classify

    rows = []
    for entry in entries:
        if classify_fn is None:
            verdict = classify(entry.simulate(), DetectionParams(threads=threads)).verdict.value
        else:
            verdict = classify_fn(entry)
        results = evaluate(entry.model, entry.horizon, threads=threads)
        rows.append(TableRow(entry.id, verdict, results, entry.physical))
    return rows


def check_table(rows: list[TableRow]) -> list[str]:
    """Mismatches against the expected grid, as readable strings."""
    bad = []
    for row in rows:
        want = TABLE1_EXPECTED.get(row.entry_id)
        if want is not None and row.cells() != want:
            bad.append(f"{row.entry_id}: got {row.cells()}, expected {want}")
    return bad


def render_table(rows: list[TableRow]) -> str:
    header = ("Example", "Trajectory", "Trace dist.", "Decay rates", "CP-div.", "Bloch vol.")
    body = [(r.entry_id,) + r.cells() for r in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)] if body else \
        [len(h) for h in header]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(line, widths)).rstrip()
             for line in [header] + body]
    if any(not r.physical for r in rows):
        lines.append("* unphysical model: the rival criteria are applied naively")
    return "\n".join(lines) + "\n"
