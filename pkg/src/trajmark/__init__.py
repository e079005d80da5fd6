"""Trajectory-based Markovianity classification of open-system dynamics."""

from .bloch import from_bloch, partial_trace, purity, su_basis, to_bloch, trace_distance
from .catalog import CATALOG_IDS, build
from .intersect import (ClassificationReport, DetectionParams, IntersectionEvent, Verdict,
                        classify, find_cross_intersections, find_self_intersections, nm_ratio,
                        purity_monotone_check)
from .model import AffineModel, GeneratorModel, RateSchedule, affine_form, kossakowski
from .propagation import Trajectory, integrate, propagate
from .store import (SamplerSpec, TrajectorySet, ingest_timeseries, load_trajset,
                    persist_trajset, sample_initial_states, simulate_set, time_reverse)

__version__ = "0.1.0"

__all__ = [
    "from_bloch",
    "partial_trace",
    "purity",
    "su_basis",
    "to_bloch",
    "trace_distance",
    "CATALOG_IDS",
    "build",
    "ClassificationReport",
    "DetectionParams",
    "IntersectionEvent",
    "Verdict",
    "classify",
    "find_cross_intersections",
    "find_self_intersections",
    "nm_ratio",
    "purity_monotone_check",
    "AffineModel",
    "GeneratorModel",
    "RateSchedule",
    "affine_form",
    "kossakowski",
    "Trajectory",
    "integrate",
    "propagate",
    "SamplerSpec",
    "TrajectorySet",
    "ingest_timeseries",
    "load_trajset",
    "persist_trajset",
    "sample_initial_states",
    "simulate_set",
    "time_reverse",
]
