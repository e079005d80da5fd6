"""Time-dependent master equations and their affine Bloch-space form.

A :class:`GeneratorModel` describes

    d rho/dt = -i [H(t), rho] + sum_k g_k(t) (L_k rho L_k^+ - 1/2 {L_k^+ L_k, rho})

with ``H(t) = sum_j c_j(t) H_j``.  Because the generator is linear in the
scalar schedules, its Bloch-space action ``dx/dt = A(t) x + b(t)`` is a fixed
linear combination of per-term matrices that are computed once.

Every model-like object (quantum, classical or time-reversed) exposes
``dim``, ``label``, ``affine_form(t, side)`` and ``breakpoints(t0, t1)``;
that is all the integrator needs.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .bloch import DimensionError, su_basis

SCHEDULE_KINDS = (
    "constant",
    "square_wave",
    "piecewise",
    "tanh",
    "linear_ramp",
    "exp_ramp",
    "hold_then_ramp",
    "table",
    "cosine",
)


@dataclass(frozen=True)
class RateSchedule:
    """Scalar coefficient ``value(t)`` of a Hamiltonian term or channel.

    Parameters by kind:

    ``constant``        (value,)
    ``square_wave``     (T, on, off): ``on`` for t in [2kT, (2k+1)T), else ``off``
    ``piecewise``       (t_1, ..., t_m, v_0, ..., v_m): ``v_i`` on [t_i, t_{i+1})
    ``tanh``            (scale, rate): scale * tanh(rate t)
    ``linear_ramp``     (v0, slope, cap)
    ``exp_ramp``        (v0, rate, cap)
    ``hold_then_ramp``  (v_hold, t_eq, rate, cap): exponential ramp after t_eq
    ``table``           (t_0..t_m, v_0..v_m): linear interpolation, flat outside
    ``cosine``          (amplitude, omega, phase)

    Piecewise kinds are right-continuous; ``side=-1`` returns the left limit.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind in ("piecewise", "table"):
            m = len(self.params)
            if self.kind == "piecewise" and m % 2 != 1:
                raise ValueError("piecewise schedule needs m breakpoints and m+1 values")
            if self.kind == "table" and (m % 2 != 0 or m < 2):
                raise ValueError("table schedule needs equal numbers of times and values")
        if self.kind == "square_wave" and self.params[0] <= 0:
            raise ValueError("square wave period must be positive")

    # convenience constructors
    @classmethod
    def constant(cls, value: float) -> "RateSchedule":
        return cls("constant", (value,))

    @classmethod
    def square_wave(cls, T: float, on: float = 1.0, off: float = 0.0) -> "RateSchedule":
        return cls("square_wave", (T, on, off))

    @classmethod
    def piecewise(cls, times: Sequence[float], values: Sequence[float]) -> "RateSchedule":
        if len(values) != len(times) + 1:
            raise ValueError("piecewise schedule needs len(values) == len(times) + 1")
        return cls("piecewise", tuple(times) + tuple(values))

    @classmethod
    def hold_then_ramp(cls, hold: float, t_eq: float, rate: float, cap: float) -> "RateSchedule":
        return cls("hold_then_ramp", (hold, t_eq, rate, cap))

    def _pw(self):
        m = len(self.params) // 2
        return self.params[:m], self.params[m:]

    def value(self, t: float, side: int = 1) -> float:
        p = self.params
        k = self.kind
        if k == "constant":
            return p[0]
        if k == "square_wave":
            T, on, off = p
            q = t / T
            idx = math.floor(q)
            if side < 0 and q == idx:
                idx -= 1
            return on if idx % 2 == 0 else off
        if k == "piecewise":
            times, values = self._pw()
            i = (bisect.bisect_right if side >= 0 else bisect.bisect_left)(times, t)
            return values[i]
        if k == "tanh":
            return p[0] * math.tanh(p[1] * t)
        if k == "linear_ramp":
            v0, slope, cap = p
            return min(v0 + slope * t, cap) if slope >= 0 else max(v0 + slope * t, cap)
        if k == "exp_ramp":
            v0, r, cap = p
            return min(v0 * math.exp(r * t), cap)
        if k == "hold_then_ramp":
            hold, t_eq, r, cap = p
            if t <= t_eq:
                return hold
            return min(hold * math.exp(r * (t - t_eq)), cap)
        if k == "table":
            m = len(p) // 2
            return float(np.interp(t, p[:m], p[m:]))
        if k == "cosine":
            a, w, ph = p
            return a * math.cos(w * t + ph)
        raise AssertionError(k)

    __call__ = value

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        """Discontinuities (or kinks) of the schedule strictly inside (t0, t1)."""
        p = self.params
        pts: list[float] = []
        if self.kind == "square_wave":
            T = p[0]
            k = math.floor(t0 / T) + 1
            while k * T < t1:
                pts.append(k * T)
                k += 1
        elif self.kind == "piecewise":
            pts = list(self._pw()[0])
        elif self.kind == "table":
            pts = list(p[: len(p) // 2])
        elif self.kind == "hold_then_ramp":
            hold, t_eq, r, cap = p
            pts = [t_eq]
            if r > 0 and cap > hold > 0:
                pts.append(t_eq + math.log(cap / hold) / r)
        elif self.kind == "exp_ramp":
            v0, r, cap = p
            if r > 0 and cap > v0 > 0:
                pts.append(math.log(cap / v0) / r)
        elif self.kind == "linear_ramp":
            v0, slope, cap = p
            if slope != 0:
                pts.append((cap - v0) / slope)
        return sorted(x for x in pts if t0 < x < t1)

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "square_wave":
            return self.params[1] == self.params[2]
        if self.kind in ("piecewise", "table"):
            return len(set(self._pw()[1])) == 1
        if self.kind == "tanh":
            return self.params[0] == 0 or self.params[1] == 0
        if self.kind == "cosine":
            return self.params[0] == 0 or self.params[1] == 0
        return False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "RateSchedule":
        return cls(d["kind"], tuple(d.get("params", ())))


@dataclass(frozen=True)
class AffineField:
    """``dx/dt = A x + b`` at one instant."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x + self.b


def _clean(arr: np.ndarray, rel: float = 1e-14) -> np.ndarray:
    scale = np.max(np.abs(arr)) if arr.size else 0.0
    out = np.array(arr, dtype=float)
    out[np.abs(out) <= rel * scale] = 0.0
    return out


def _commutator_action(H: np.ndarray):
    return lambda rho: -1j * (H @ rho - rho @ H)


def _dissipator_action(L: np.ndarray):
    Ld = L.conj().T
    LdL = Ld @ L
    return lambda rho: L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)


def _bloch_form(action, n: int) -> tuple[np.ndarray, np.ndarray]:
    """A_ij = 1/2 Tr(s_i L(s_j)), b_i = 1/2 Tr(s_i L(I))."""
    basis = su_basis(n).elements
    images = np.array([action(s) for s in basis])
    A = 0.5 * np.einsum("iab,jba->ij", basis, images).real
    b = 0.5 * np.einsum("iab,ba->i", basis, action(np.eye(n, dtype=complex))).real
    return _clean(A), _clean(b)


class _TimeDependenceMixin:
    def is_time_independent(self, t_grid: Sequence[float] | None = None,
                            t_max: float = 10.0, tol: float = 1e-12) -> bool:
        """Check that ``A(t), b(t)`` are constant on a sampled grid (64 points)."""
        if t_grid is None:
            t_grid = np.linspace(0.0, t_max, 64)
        ref = self.affine_form(float(t_grid[0]))
        for t in t_grid[1:]:
            f = self.affine_form(float(t))
            if np.max(np.abs(f.A - ref.A), initial=0.0) > tol or np.max(
                np.abs(f.b - ref.b), initial=0.0
            ) > tol:
                return False
        return True


@dataclass(frozen=True, eq=False)
class GeneratorModel(_TimeDependenceMixin):
    """Lindblad-form generator with scalar time-dependent coefficients.

    Rates may be negative; nothing here enforces physicality.
    """

    n: int
    hamiltonian_terms: tuple = ()
    channels: tuple = ()
    label: str = "model"

    def __post_init__(self):
        ham = tuple((np.asarray(H, dtype=complex), s) for H, s in self.hamiltonian_terms)
        chans = tuple((np.asarray(L, dtype=complex), s) for L, s in self.channels)
        for H, _ in ham:
            if H.shape != (self.n, self.n):
                raise DimensionError(f"Hamiltonian term of shape {H.shape} in n={self.n} model")
            if not np.allclose(H, H.conj().T, atol=1e-12):
                raise ValueError("Hamiltonian terms must be Hermitian")
        for L, _ in chans:
            if L.shape != (self.n, self.n):
                raise DimensionError(f"jump operator of shape {L.shape} in n={self.n} model")
        object.__setattr__(self, "hamiltonian_terms", ham)
        object.__setattr__(self, "channels", chans)

    @property
    def dim(self) -> int:
        return self.n * self.n - 1

    @cached_property
    def _terms(self):
        out = []
        for H, s in self.hamiltonian_terms:
            out.append((s, *_bloch_form(_commutator_action(H), self.n)))
        for L, s in self.channels:
            out.append((s, *_bloch_form(_dissipator_action(L), self.n)))
        return out

    def coefficients(self, t: float, side: int = 1) -> list[float]:
        return [s.value(t, side) for s, _, _ in self._terms]

    def hamiltonian(self, t: float, side: int = 1) -> np.ndarray:
        H = np.zeros((self.n, self.n), dtype=complex)
        for Hj, s in self.hamiltonian_terms:
            H += s.value(t, side) * Hj
        return H

    def apply(self, rho: np.ndarray, t: float, side: int = 1) -> np.ndarray:
        """Generator action on an arbitrary n x n matrix."""
        rho = np.asarray(rho, dtype=complex)
        H = self.hamiltonian(t, side)
        out = -1j * (H @ rho - rho @ H)
        for L, s in self.channels:
            out = out + s.value(t, side) * _dissipator_action(L)(rho)
        return out

    def affine_form(self, t: float, side: int = 1) -> AffineField:
        d = self.dim
        A = np.zeros((d, d))
        b = np.zeros(d)
        for s, Ak, bk in self._terms:
            c = s.value(t, side)
            if c != 0.0:
                A += c * Ak
                b += c * bk
        return AffineField(A, b)

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        pts = set()
        for s, _, _ in self._terms:
            pts.update(s.breakpoints(t0, t1))
        return sorted(pts)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "hamiltonian": [
                {"matrix": _matrix_to_json(H), "schedule": s.to_dict()}
                for H, s in self.hamiltonian_terms
            ],
            "channels": [
                {"matrix": _matrix_to_json(L), "schedule": s.to_dict()} for L, s in self.channels
            ],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorModel":
        n = int(d["n"])
        ham = tuple(
            (_matrix_from_json(t["matrix"], n), RateSchedule.from_dict(t["schedule"]))
            for t in d.get("hamiltonian", [])
        )
        chans = tuple(
            (_matrix_from_json(t["matrix"], n), RateSchedule.from_dict(t["schedule"]))
            for t in d.get("channels", [])
        )
        return cls(n, ham, chans, d.get("label", "model"))


def _matrix_to_json(M: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(M).ravel()]


def _matrix_from_json(data, n: int) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.shape == (n * n, 2):
        flat = arr
    elif arr.shape == (n, n, 2):
        flat = arr.reshape(n * n, 2)
    else:
        raise ValueError(f"matrix entry of shape {arr.shape} does not fit n={n}")
    return (flat[:, 0] + 1j * flat[:, 1]).reshape(n, n)


def save_model(model: GeneratorModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def load_model(path) -> GeneratorModel:
    with open(path, encoding="utf-8") as fh:
        return GeneratorModel.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class AffineModel(_TimeDependenceMixin):
    """Plain affine vector field ``A(t) = sum s_k(t) A_k``, ``b(t) = sum r_k(t) b_k``.

    Used for classical demo systems that have no density-matrix structure.
    """

    dim: int
    A_terms: tuple = ()
    b_terms: tuple = ()
    label: str = "affine"

    def __post_init__(self):
        A_terms = tuple((np.asarray(A, dtype=float), s) for A, s in self.A_terms)
        b_terms = tuple((np.asarray(b, dtype=float), s) for b, s in self.b_terms)
        for A, _ in A_terms:
            if A.shape != (self.dim, self.dim):
                raise DimensionError(f"A term of shape {A.shape} in dim={self.dim} model")
        for b, _ in b_terms:
            if b.shape != (self.dim,):
                raise DimensionError(f"b term of shape {b.shape} in dim={self.dim} model")
        object.__setattr__(self, "A_terms", A_terms)
        object.__setattr__(self, "b_terms", b_terms)

    def affine_form(self, t: float, side: int = 1) -> AffineField:
        A = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for Ak, s in self.A_terms:
            A += s.value(t, side) * Ak
        for bk, s in self.b_terms:
            b += s.value(t, side) * bk
        return AffineField(A, b)

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        pts = set()
        for _, s in self.A_terms + self.b_terms:
            pts.update(s.breakpoints(t0, t1))
        return sorted(pts)


@dataclass(frozen=True, eq=False)
class ReversedModel(_TimeDependenceMixin):
    """Field generating ``x(t_end - t)`` from a trajectory ``x(t)`` of ``base``."""

    base: object
    t_end: float

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def label(self) -> str:
        return f"reversed({self.base.label})"

    def affine_form(self, t: float, side: int = 1) -> AffineField:
        f = self.base.affine_form(self.t_end - t, -side)
        return AffineField(-f.A, -f.b)

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        pts = self.base.breakpoints(self.t_end - t1, self.t_end - t0)
        return sorted(self.t_end - p for p in pts)


def affine_form(model, t: float, side: int = 1) -> AffineField:
    if t < 0:
        raise ValueError("t must be non-negative")
    return model.affine_form(t, side)


@dataclass(frozen=True)
class KossakowskiForm:
    hamiltonian: np.ndarray
    matrix: np.ndarray
    rates: np.ndarray  # descending

    def __iter__(self):
        return iter((self.hamiltonian, self.matrix, self.rates))


def _orthonormal_operator_basis(n: int) -> np.ndarray:
    F = [np.eye(n, dtype=complex) / math.sqrt(n)]
    F.extend(s / math.sqrt(2.0) for s in su_basis(n).elements)
    return np.array(F)


def kossakowski(model: GeneratorModel, t: float, side: int = 1) -> KossakowskiForm:
    """Canonical decomposition of the instantaneous generator.

    The generator's Choi matrix ``J = sum_ij L(E_ij) (x) E_ij`` is expanded in
    the orthonormal basis ``F_0 = I/sqrt(n)``, ``F_i = s_i/sqrt(2)``; the block
    with i, j >= 1 is the Kossakowski matrix and its eigenvalues are the
    canonical decay rates.
    """
    n = model.n
    J = np.zeros((n * n, n * n), dtype=complex)
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = 1.0
            J += np.kron(model.apply(E, t, side), E)
    F = _orthonormal_operator_basis(n)
    V = F.reshape(n * n, n * n).T  # columns are row-major vec(F_alpha)
    c = V.conj().T @ J @ V
    a = c[1:, 1:]
    a = 0.5 * (a + a.conj().T)
    K = np.tensordot(c[1:, 0], F[1:], axes=1) / math.sqrt(n) + c[0, 0] / (2 * n) * np.eye(n)
    H = 0.5j * (K - K.conj().T)
    rates = np.sort(np.linalg.eigvalsh(a))[::-1]
    return KossakowskiForm(H, a, rates)


def rebuild_generator(form: KossakowskiForm, n: int):
    """Action ``rho -> -i[H, rho] + sum a_ij (F_i rho F_j^+ - 1/2 {F_j^+ F_i, rho})``."""
    F = _orthonormal_operator_basis(n)[1:]
    H, a = form.hamiltonian, form.matrix

    def action(rho):
        out = -1j * (H @ rho - rho @ H)
        for i in range(len(F)):
            for j in range(len(F)):
                if a[i, j] == 0:
                    continue
                Fj_d = F[j].conj().T
                out = out + a[i, j] * (
                    F[i] @ rho @ Fj_d - 0.5 * (Fj_d @ F[i] @ rho + rho @ Fj_d @ F[i])
                )
        return out

    return action


# standard qubit operators (excited state first)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |0><1|, excited -> ground
SIGMA_PLUS = SIGMA_MINUS.conj().T
