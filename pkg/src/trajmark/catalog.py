"""Named example models with their default horizons and expected verdicts.

Every entry can simulate a trajectory set with its default sampler; set-level
tests and the CLI draw from here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import operator_coords, partial_trace, su_basis
from .model import (SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Y, SIGMA_Z, AffineModel,
                    GeneratorModel, RateSchedule, save_model)
from .propagation import DEFAULT_TOL
from .store import SamplerSpec, TrajectorySet, sample_initial_states, simulate_set

CATALOG_IDS = ("ex1", "ex2", "ex3", "ex4", "ex5_const", "ex5_ramp", "remark4", "jc_vacuum",
               "classical_spiral", "classical_loop")

# ids of the five rows of the comparison grid
TABLE1_IDS = ("ex1", "ex2", "ex3", "ex4", "ex5_ramp")

DEFAULT_SAMPLES = 24


class UnknownEntryError(KeyError):
    def __init__(self, entry_id):
        super().__init__(f"unknown catalog id {entry_id!r}; valid ids: {', '.join(CATALOG_IDS)}")
        self.entry_id = entry_id

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True, eq=False)
class CatalogEntry:
    id: str
    model: object
    horizon: float
    expected_verdict: str
    notes: str = ""
    reference_state: tuple = ()
    extra_states: tuple = ()
    reduction: tuple | None = None
    physical: bool = True
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim if self.reduction is None else self.reduction[0].shape[0]

    def default_sampler(self, count: int = DEFAULT_SAMPLES, seed: int = 0,
                        strategy: str = "pure-uniform", include_canonical: bool = True
                        ) -> SamplerSpec:
        return SamplerSpec(strategy, count, seed, self.extra_states, include_canonical)

    def initial_states(self, sampler: SamplerSpec | None = None) -> list[np.ndarray]:
        return sample_initial_states(sampler or self.default_sampler(), self.dim)

    def simulate(self, sampler: SamplerSpec | None = None, t_max: float | None = None,
                 tol: float = DEFAULT_TOL, states=None) -> TrajectorySet:
        sampler = sampler or self.default_sampler()
        if states is None:
            states = self.initial_states(sampler)
        horizon = self.horizon if t_max is None else float(t_max)
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        return simulate_set(self.model, states, (0.0, horizon), tol, reduction=self.reduction,
                            label=self.id, sampler=sampler.to_dict())

    def reference_trajectory(self, t_max: float | None = None, tol: float = DEFAULT_TOL):
        return self.simulate(t_max=t_max, tol=tol, states=[np.array(self.reference_state)])[0]


# constructors -----------------------------------------------------------------

def _ex1(p):
    model = GeneratorModel(2, (), ((SIGMA_Z, RateSchedule.constant(-1.0)),), "ex1")
    return model, dict(horizon=p["horizon"], expected_verdict="SM", physical=False,
                       notes="negative dephasing rate; unphysical, time-independent")


def ex2_hamiltonian_schedule():
    """Breakpoints of the piecewise Hamiltonian: sigma_y, then sigma_x, then sigma_z."""
    return (np.pi / 2, 3 * np.pi / 4)


def _ex2(p):
    t1, t2 = ex2_hamiltonian_schedule()
    pw = lambda v: RateSchedule.piecewise((t1, t2), v)  # noqa: E731
    model = GeneratorModel(2, ((SIGMA_Y, pw((1.0, 0.0, 0.0))), (SIGMA_X, pw((0.0, 1.0, 0.0))),
                               (SIGMA_Z, pw((0.0, 0.0, 1.0)))), (), "ex2")
    return model, dict(horizon=p["horizon"], expected_verdict="NM",
                       notes="unitary; crosses (1,0,0) at pi/4 and 3pi/2")


def _ex3(p):
    T = p["T"]
    model = GeneratorModel(2, (), ((SIGMA_MINUS, RateSchedule.square_wave(T, 1.0, 0.0)),
                                   (SIGMA_PLUS, RateSchedule.square_wave(T, 0.0, 1.0))), "ex3")
    return model, dict(horizon=p["horizon"], expected_verdict="NM",
                       notes="alternating cold/hot baths, period 2T")


def _ex4(p):
    # (1/2) sum_k gamma_k (s_k rho s_k - rho), gamma = (1, 1, -tanh t)
    model = GeneratorModel(2, (), ((SIGMA_X, RateSchedule.constant(0.5)),
                                   (SIGMA_Y, RateSchedule.constant(0.5)),
                                   (SIGMA_Z, RateSchedule("tanh", (-0.5, 1.0)))), "ex4")
    return model, dict(horizon=p["horizon"], expected_verdict="IM",
                       notes="eternally non-Markovian Pauli channel")


def _ex5(gamma: RateSchedule, label):
    return GeneratorModel(2, ((SIGMA_X, RateSchedule.constant(1.0)),),
                          ((SIGMA_MINUS, gamma),), label)


def _ex5_const(p):
    return _ex5(RateSchedule.constant(p["gamma"]), "ex5_const"), dict(
        horizon=p["horizon"], expected_verdict="SM", notes="driven decay, constant rate")


def _ex5_ramp(p):
    sched = RateSchedule.hold_then_ramp(p["hold"], p["t_eq"], p["rate"], p["cap"])
    return _ex5(sched, "ex5_ramp"), dict(
        horizon=p["horizon"], expected_verdict="NM",
        notes="rate held, then ramped so the state tracks the steady-state ellipse")


def _remark4(p):
    model = GeneratorModel(2, (), ((SIGMA_Z, RateSchedule("linear_ramp", (0.0, 1.0, 1e300))),),
                           "remark4")
    return model, dict(horizon=p["horizon"], expected_verdict="IM",
                       extra_states=((0.5, 0.0, 0.0),),
                       notes="dephasing with rate t: no self-intersection, yet not SM")


def jc_reduction():
    """(R, E, e) mapping qubit Bloch data to the qubit (x) 2-level cavity space.

    ``E y + e`` embeds a qubit state with the cavity in vacuum; ``R`` is the
    Bloch form of the partial trace over the cavity.
    """
    qb, cb = su_basis(2), su_basis(4)
    vac = np.diag([1.0, 0.0])  # cavity vacuum is the first basis vector
    _, e = operator_coords(np.kron(np.eye(2) / 2, vac), cb)
    E = np.stack([operator_coords(np.kron(s / 2, vac), cb)[1] for s in qb], axis=1)
    R = np.stack([0.25 * np.einsum("ij,kji->k", partial_trace(S, (2, 2)), qb.elements)
                  for S in cb], axis=1)
    return R.real, E.real, e.real


def _jc(p):
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    H = p["g"] * (np.kron(SIGMA_PLUS, a) + np.kron(SIGMA_MINUS, a.T))
    model = GeneratorModel(4, ((H, RateSchedule.constant(1.0)),), (), "jc_vacuum")
    return model, dict(horizon=p["horizon"], expected_verdict="NM", reduction=jc_reduction(),
                       notes="qubit coupled to a cavity in vacuum; reduced qubit dynamics")


def _classical_spiral(p):
    damp = np.array([[-1.0, 0.0], [0.0, -1.0]])
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    model = AffineModel(2, ((damp, RateSchedule("linear_ramp", (p["kappa0"], p["kappa1"], 1e300))),
                            (rot, RateSchedule.constant(p["omega"]))), (), "classical_spiral")
    return model, dict(horizon=p["horizon"], expected_verdict="IM", reference_state=(1.0, 0.0),
                       notes="oscillator with growing damping")


def _classical_loop(p):
    A = np.array([[0.0, 1.0], [-p["omega"] ** 2, 0.0]])
    model = AffineModel(2, ((A, RateSchedule.constant(1.0)),),
                        ((np.array([0.0, 1.0]),
                          RateSchedule("cosine", (p["force"], p["drive"], p["phase"]))),),
                        "classical_loop")
    return model, dict(horizon=p["horizon"], expected_verdict="NM", reference_state=(1.0, 0.0),
                       notes="periodically driven oscillator; orbit crosses itself")


_BUILDERS = {
    "ex1": (_ex1, {"horizon": 2.0}),
    "ex2": (_ex2, {"horizon": 5.2}),
    "ex3": (_ex3, {"T": 10.0, "horizon": 60.0}),
    "ex4": (_ex4, {"horizon": 10.0}),
    "ex5_const": (_ex5_const, {"gamma": 1.0, "horizon": 60.0}),
    "ex5_ramp": (_ex5_ramp, {"hold": 0.35, "t_eq": 40.0, "rate": 0.05, "cap": 300.0,
                             "horizon": 180.0}),
    "remark4": (_remark4, {"horizon": 10.0}),
    "jc_vacuum": (_jc, {"g": 1.0, "horizon": 8.0}),
    "classical_spiral": (_classical_spiral, {"kappa0": 0.05, "kappa1": 0.05, "omega": 1.0,
                                             "horizon": 20.0}),
    "classical_loop": (_classical_loop, {"omega": 1.0, "force": 1.0, "drive": 2.0,
                                         "phase": 0.0, "horizon": 10.0}),
}


def build(entry_id: str, overrides: dict | None = None) -> CatalogEntry:
    if entry_id not in _BUILDERS:
        raise UnknownEntryError(entry_id)
    fn, defaults = _BUILDERS[entry_id]
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"{entry_id} does not accept overrides {sorted(unknown)}; "
                         f"allowed: {sorted(defaults)}")
    params = {**defaults, **{k: float(v) for k, v in overrides.items()}}
    model, kw = fn(params)
    kw.setdefault("reference_state", (0.0, 0.0, 1.0))
    return CatalogEntry(entry_id, model, params=params, **kw)


def entries() -> list[CatalogEntry]:
    return [build(i) for i in CATALOG_IDS]


def export_model(entry_id: str, path, overrides: dict | None = None) -> None:
    """Write an entry's generator as a model specification file."""
    entry = build(entry_id, overrides)
    if not isinstance(entry.model, GeneratorModel):
        raise ValueError(f"{entry_id} is not a master-equation model and has no model file")
    save_model(entry.model, path)
