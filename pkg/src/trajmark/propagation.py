"""Adaptive Dormand-Prince integration of affine Bloch-space flows.

Schedule breakpoints are mandatory mesh points.  Where the vector field jumps,
the trajectory carries two samples with the same time: the first holds the
left-limit derivative, the second the right-limit one, so each Hermite
segment uses the derivative of its own side of the jump.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_SEGMENTS = 512

# Dormand-Prince 5(4), FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state; ``last_t`` is the last good time."""

    def __init__(self, message: str, last_t: float):
        super().__init__(f"{message} (last good t={last_t!r})")
        self.last_t = last_t


class SingularPropagatorError(np.linalg.LinAlgError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered samples ``(t, x, v)`` with ``v = dx/dt``."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    initial_state: np.ndarray | None = None
    model_label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(t), -1)
        if v.ndim == 1:
            v = v.reshape(len(t), -1)
        if x.shape != v.shape or x.shape[0] != t.shape[0]:
            raise ValueError(f"inconsistent sample shapes t{t.shape} x{x.shape} v{v.shape}")
        if np.any(np.diff(t) < 0):
            raise ValueError("trajectory times must be non-decreasing")
        x0 = x[0] if self.initial_state is None and len(t) else self.initial_state
        object.__setattr__(self, "t", _readonly(t))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "v", _readonly(v))
        if x0 is not None:
            object.__setattr__(self, "initial_state", _readonly(np.asarray(x0, dtype=float)))

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def same_samples(self, other: "Trajectory") -> bool:
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.v, other.v)
        )


def hermite_coefficients(x0, x1, v0, v1, h):
    """Power-basis coefficients of the cubic Hermite segment in s in [0, 1]."""
    h = np.asarray(h)[..., None] if np.ndim(h) else h
    a0 = x0
    a1 = h * v0
    a2 = -3 * x0 - 2 * h * v0 + 3 * x1 - h * v1
    a3 = 2 * x0 + h * v0 - 2 * x1 + h * v1
    return a0, a1, a2, a3


def dense_eval(traj: Trajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Cubic Hermite interpolation between the bracketing samples."""
    t0, t1 = traj.span
    if not t0 <= t <= t1:
        raise ValueError(f"t={t} outside trajectory span [{t0}, {t1}]")
    ts = traj.t
    k = int(np.searchsorted(ts, t, side="right")) - 1
    if ts[k] == t:
        return traj.x[k].copy(), traj.v[k].copy()
    h = ts[k + 1] - ts[k]
    s = (t - ts[k]) / h
    a0, a1, a2, a3 = hermite_coefficients(traj.x[k], traj.x[k + 1], traj.v[k], traj.v[k + 1], h)
    x = a0 + s * (a1 + s * (a2 + s * a3))
    v = (a1 + s * (2 * a2 + 3 * s * a3)) / h
    return x, v


def _err_norm(err, y, y_new, tol):
    scale = tol * np.maximum(1.0, np.maximum(np.abs(y), np.abs(y_new)))
    return float(np.max(np.abs(err) / scale))


def solve(
    rhs: Callable[[float, np.ndarray, int], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    tol: float = DEFAULT_TOL,
    h_max: float | None = None,
    stops: Sequence[float] = (),
):
    """Integrate ``y' = rhs(t, y, side)`` on [t0, t1] through the given stops.

    Returns ``(ts, ys, fs, stats)`` with ``fs`` the stored derivatives.  At a
    stop the left and right derivatives both appear when they differ.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    y = np.array(y0, dtype=float)
    if t1 == t0:
        return [t0], [y], [rhs(t0, y, 1)], {"accepted": 0, "rejected": 0}
    if h_max is None:
        h_max = (t1 - t0) / DEFAULT_SEGMENTS
    edges = [t0] + sorted(s for s in set(stops) if t0 < s < t1) + [t1]
    ts, ys, fs = [], [], []
    accepted = rejected = 0
    h = None
    for a, b in zip(edges[:-1], edges[1:]):
        f = rhs(a, y, 1)
        if ts and ts[-1] == a and np.array_equal(fs[-1], f):
            pass
        else:
            ts.append(a)
            ys.append(y.copy())
            fs.append(f)
        t = a
        if h is None:
            fnorm = np.max(np.abs(f)) / max(1.0, np.max(np.abs(y)))
            h = 0.01 / fnorm if fnorm > 0 else h_max
        while t < b:
            h = min(h, h_max)
            last = False
            if t + h >= b or (b - (t + h)) < 1e-12 * max(1.0, abs(b)):
                h = b - t
                last = True
            k = [f]
            # overflow is caught below as a non-finite step
            with np.errstate(over="ignore", invalid="ignore"):
                for i in range(1, 7):
                    yi = y + h * sum(aij * kj for aij, kj in zip(_A[i], k) if aij != 0.0)
                    ti = b if (last and _C[i] == 1.0) else t + _C[i] * h
                    k.append(rhs(ti, yi, -1 if (last and _C[i] == 1.0) else 1))
                y_new = y + h * sum(bi * ki for bi, ki in zip(_B5, k) if bi != 0.0)
                err = h * sum(ei * ki for ei, ki in zip(_E, k))
                en = _err_norm(err, y, y_new, tol)
            if not np.all(np.isfinite(y_new)):
                en = np.inf
            if en <= 1.0:
                accepted += 1
                t = b if last else t + h
                y = y_new
                f = k[6]
                ts.append(t)
                ys.append(y.copy())
                fs.append(f)
                fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** -0.2)
                if not last:
                    h = h * max(0.2, fac)
                else:
                    h = max(h, h_max * 1e-3) * max(0.2, fac)
            else:
                rejected += 1
                h = h * (0.2 if not np.isfinite(en) else max(0.2, 0.9 * en ** -0.2))
                if h < 1e-13 * max(1.0, abs(t)):
                    raise IntegrationError("step size underflow", t)
    return ts, ys, fs, {"accepted": accepted, "rejected": rejected}


def _affine_rhs(model):
    def rhs(t, x, side):
        f = model.affine_form(t, side)
        return f.A @ x + f.b

    return rhs


def integrate(model, x0, t_span, tol: float = DEFAULT_TOL, h_max: float | None = None) -> Trajectory:
    """Integrate one initial Bloch vector with the embedded RK pair."""
    t0, t1 = map(float, t_span)
    if t0 < 0:
        raise ValueError("t_span must start at t >= 0")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"initial state of length {model.dim} expected, got {x0.shape}")
    ts, ys, fs, stats = solve(
        _affine_rhs(model), x0, t0, t1, tol, h_max, stops=model.breakpoints(t0, t1)
    )
    return Trajectory(
        np.array(ts), np.array(ys), np.array(fs), x0, model.label,
        {"tol": tol, "h_max": h_max if h_max else (t1 - t0) / DEFAULT_SEGMENTS, **stats},
    )


@dataclass(frozen=True)
class AffinePropagator:
    """``x(t) = M x(0) + c``."""

    t: float
    M: np.ndarray
    c: np.ndarray

    def __call__(self, x0):
        return self.M @ np.asarray(x0) + self.c


@dataclass(frozen=True, eq=False)
class PropagatorTable:
    """Affine propagator and its time derivative on the adaptive mesh."""

    t: np.ndarray
    M: np.ndarray  # (m, d_out, d_in)
    c: np.ndarray  # (m, d_out)
    Mdot: np.ndarray
    cdot: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def trajectory(self, x0) -> Trajectory:
        x0 = np.asarray(x0, dtype=float)
        x = self.M @ x0 + self.c
        v = self.Mdot @ x0 + self.cdot
        return Trajectory(self.t, x, v, x0, self.label, dict(self.meta))

    def reduce(self, R: np.ndarray, E: np.ndarray, e: np.ndarray, label: str | None = None):
        """Propagator of ``y = R x`` for initial data ``x(0) = E y(0) + e``."""
        M = R @ self.M @ E
        c = (R @ (self.M @ e + self.c).T).T
        Md = R @ self.Mdot @ E
        cd = (R @ (self.Mdot @ e + self.cdot).T).T
        return PropagatorTable(self.t, M, c, Md, cd, label or self.label, dict(self.meta))

    def at(self, k: int) -> AffinePropagator:
        return AffinePropagator(float(self.t[k]), self.M[k], self.c[k])


def propagate(model, t_span, tol: float = DEFAULT_TOL, h_max: float | None = None,
              stops: Sequence[float] = ()) -> PropagatorTable:
    """Integrate ``M' = A M, c' = A c + b`` jointly from ``(I, 0)``."""
    t0, t1 = map(float, t_span)
    d = model.dim

    def rhs(t, Y, side):
        f = model.affine_form(t, side)
        out = f.A @ Y
        out[:, -1] += f.b
        return out

    Y0 = np.hstack([np.eye(d), np.zeros((d, 1))])
    ts, Ys, Fs, stats = solve(rhs, Y0, t0, t1, tol, h_max,
                              stops=list(model.breakpoints(t0, t1)) + list(stops))
    Ys, Fs = np.array(Ys), np.array(Fs)
    return PropagatorTable(
        np.array(ts), Ys[:, :, :d], Ys[:, :, d], Fs[:, :, :d], Fs[:, :, d], model.label,
        {"tol": tol, "h_max": h_max if h_max else (t1 - t0) / DEFAULT_SEGMENTS, **stats},
    )


def propagator_grid(model, t_grid, tol: float = DEFAULT_TOL) -> list[AffinePropagator]:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        return []
    if t_grid[0] != 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must start at 0 and be increasing")
    d = model.dim
    if t_grid.size == 1:
        return [AffinePropagator(0.0, np.eye(d), np.zeros(d))]
    table = propagate(model, (0.0, t_grid[-1]), tol, stops=t_grid[1:-1])
    out = []
    for tg in t_grid:
        # right-continuous pick at duplicated breakpoint times
        k = int(np.searchsorted(table.t, tg, side="right")) - 1
        out.append(table.at(k))
    return out


def intermediate_map(P_s: AffinePropagator, P_t: AffinePropagator, cond_max: float = 1e12):
    """Affine map taking x(s) to x(t): ``M_ts = M_t M_s^-1``, ``c_ts = c_t - M_ts c_s``."""
    if P_t.t < P_s.t:
        raise ValueError("intermediate_map needs t >= s")
    if not np.all(np.isfinite(P_s.M)) or np.linalg.cond(P_s.M) > cond_max:
        raise SingularPropagatorError(f"propagator at t={P_s.t} is singular")
    M_ts = np.linalg.solve(P_s.M.T, P_t.M.T).T
    c_ts = P_t.c - M_ts @ P_s.c
    return M_ts, c_ts


def interval_map(model, s: float, t: float, tol: float = DEFAULT_TOL):
    """Map x(s) -> x(t) obtained by integrating from the identity at s."""
    if t == s:
        return np.eye(model.dim), np.zeros(model.dim)
    table = propagate(model, (s, t), tol)
    return table.M[-1], table.c[-1]
