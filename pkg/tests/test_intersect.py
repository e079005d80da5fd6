import math

import numpy as np
import pytest

from trajmark.catalog import build
from trajmark.intersect import (DetectionParams, Verdict, classify, find_cross_intersections,
                                find_self_intersections, nm_ratio, purity_monotone_check,
                                self_event_summary)
from trajmark.propagation import Trajectory
from trajmark.store import SamplerSpec, TrajectorySet


def reference(cid, overrides=None):
    entry = build(cid, overrides)
    tset = entry.simulate(states=[np.array(entry.reference_state)])
    return tset[0], (lambda lvl: tset.source.trajectory(0, lvl))


def curve(fn, dfn, t0, t1, m=2001):
    t = np.linspace(t0, t1, m)
    return Trajectory(t, np.array([fn(s) for s in t]), np.array([dfn(s) for s in t]))


def figure_eight(t0=0.5, t1=2 * math.pi + 0.5):
    return curve(lambda s: (math.sin(s), math.sin(s) * math.cos(s)),
                 lambda s: (math.cos(s), math.cos(2 * s)), t0, t1)


# synthetic oracles -----------------------------------------------------------

def test_figure_eight_crossing_without_regenerator():
    events = find_self_intersections(figure_eight())
    assert len(events) == 1
    e = events[0]
    assert e.t1 == pytest.approx(math.pi, abs=1e-6)
    assert e.t2 == pytest.approx(2 * math.pi, abs=1e-6)
    assert np.allclose(e.x1, 0, atol=1e-6)
    assert e.kind == "crossing"
    assert e.velocity_angle == pytest.approx(math.pi / 2, abs=1e-6)


def test_circle_has_no_self_intersection_before_closing():
    c = curve(lambda s: (math.cos(s), math.sin(s)), lambda s: (-math.sin(s), math.cos(s)),
              0.0, 1.9 * math.pi)
    assert find_self_intersections(c) == []


def test_periodic_retrace_is_a_coincidence():
    c = curve(lambda s: (math.cos(s), math.sin(s)), lambda s: (-math.sin(s), math.cos(s)),
              0.0, 2.2 * math.pi)
    assert find_self_intersections(c, DetectionParams(strict_crossing=False)) == []


def test_faster_return_is_a_loop_closure():
    # back through (1, 0) after one turn with the same heading, 10% faster
    k = 0.1 / (2 * math.pi)
    c = curve(lambda s: (math.cos(s), math.sin(s) * (1 + k * s)),
              lambda s: (-math.sin(s), math.cos(s) * (1 + k * s) + k * math.sin(s)),
              -0.3, 2 * math.pi + 0.3)
    events = find_self_intersections(c, DetectionParams(strict_crossing=False))
    assert len(events) == 1
    e = events[0]
    assert e.kind == "loop_closure"
    # a tangential touch fixes the times only to about sqrt(resolution)
    assert e.t1 == pytest.approx(0.0, abs=1e-3) and e.t2 == pytest.approx(2 * math.pi, abs=1e-3)


def test_near_miss_with_strict_crossing():
    # two lines that pass 1e-3 apart in 3D never meet
    a = curve(lambda s: (s, 0.0, 0.0), lambda s: (1.0, 0.0, 0.0), -1, 1, 201)
    b = curve(lambda s: (0.0, s, 1e-3), lambda s: (0.0, 1.0, 0.0), -1, 1, 201)
    loose = DetectionParams(eps_pos=1e-2)
    assert find_cross_intersections(a, b, loose) == []
    near = find_cross_intersections(a, b, loose, include_near_miss=True)
    assert len(near) == 1 and near[0].kind == "near_miss"
    assert find_cross_intersections(a, b, DetectionParams(eps_pos=1e-2, strict_crossing=False))


def test_identical_trajectories_are_not_cross_events():
    tr = figure_eight()
    assert find_cross_intersections(tr, tr) == []
    # an equal copy coincides only at equal times, which is not an event either
    arc = curve(lambda s: (math.cos(s), math.sin(s)), lambda s: (-math.sin(s), math.cos(s)),
                0.0, 1.5 * math.pi)
    copy = Trajectory(arc.t, arc.x + 0.0, arc.v * (1 + 1e-13))
    assert find_cross_intersections(arc, copy) == []


def test_stationary_points_are_not_events():
    # a curve that stops at the origin and stays there
    t = np.linspace(0.0, 4.0, 401)
    x = np.stack([np.where(t < 1, 1 - t, 0.0), np.zeros_like(t)], 1)
    v = np.stack([np.where(t < 1, -1.0, 0.0), np.zeros_like(t)], 1)
    assert find_self_intersections(Trajectory(t, x, v)) == []


# catalog trajectories ----------------------------------------------------------

def test_ex2_single_crossing():
    tr, regen = reference("ex2")
    events = find_self_intersections(tr, regenerate=regen)
    assert len(events) == 1
    e = events[0]
    assert e.t1 == pytest.approx(math.pi / 4, abs=1e-6)
    assert e.t2 == pytest.approx(3 * math.pi / 2, abs=1e-6)
    assert e.kind == "crossing" and e.refined
    assert e.residual < 1e-8


def test_ex3_reference_returns_along_axis():
    tr, regen = reference("ex3")
    events = find_self_intersections(tr, regenerate=regen)
    assert events
    for e in events:
        assert np.allclose(e.x1[:2], 0.0, atol=1e-6)
        assert e.t2 - e.t1 > 1.0


def test_ex5_ramp_crossing_and_constant_spiral():
    tr, regen = reference("ex5_ramp")
    assert find_self_intersections(tr, regenerate=regen)
    tr, regen = reference("ex5_const")
    assert find_self_intersections(tr, regenerate=regen) == []


def test_ex4_has_no_events():
    tset = build("ex4").simulate(SamplerSpec("pure-uniform", 6, seed=2))
    p = DetectionParams(use_purity_shortcut=False)
    for i, tr in enumerate(tset):
        assert find_self_intersections(tr, p, lambda lvl, i=i: tset.source.trajectory(i, lvl)) == []


def test_remark4_cross_event(cached_report):
    report = cached_report("remark4")
    assert report.verdict is Verdict.IM
    assert report.cross_events
    assert not report.all_self_events()


# classification -------------------------------------------------------------------

@pytest.mark.parametrize("cid,verdict", [("ex1", "SM"), ("ex3", "NM"), ("ex4", "IM")])
def test_catalog_verdicts(cid, verdict, cached_report):
    report = cached_report(cid)
    assert report.verdict.value == verdict
    assert report.verdict.value == build(cid).expected_verdict


def test_ex4_uses_purity_shortcut(cached_report):
    report = cached_report("ex4")
    assert report.purity_shortcut_applied and report.nm_ratio == 0.0


def test_data_only_classification_flags_missing_model(cached_set):
    tset = cached_set("ex1")
    bare = TrajectorySet(tset.dim, tset.trajectories, "file")
    report = classify(bare)
    assert report.verdict is Verdict.SM
    assert report.caveats


def test_nm_ratio_and_summary(cached_set):
    assert nm_ratio(cached_set("ex4")) == 0.0
    summary = self_event_summary(cached_set("ex3"))
    assert 0.0 < summary["nm_ratio"] <= 1.0
    assert summary["accepted"] >= len(summary["trajectories_with_events"])


def test_purity_monotone_check(cached_set):
    assert purity_monotone_check(cached_set("ex4"))
    assert not purity_monotone_check(cached_set("ex3"))
    assert not purity_monotone_check(cached_set("ex2"))


def test_tolerance_monotonicity():
    # two parallel segments 0.02 apart: found only once eps_pos exceeds the gap
    a = curve(lambda s: (s, 0.0, 0.0), lambda s: (1.0, 0.0, 0.0), -1, 1, 201)
    b = curve(lambda s: (0.0, s, 0.02), lambda s: (0.0, 1.0, 0.0), -1, 1, 201)
    found = []
    for eps in (1e-4, 1e-3, 1e-2, 3e-2, 5e-2, 1e-1):
        p = DetectionParams(eps_pos=eps, strict_crossing=False)
        found.append(len(find_cross_intersections(a, b, p)))
    assert found == [0, 0, 0, 1, 1, 1]


def test_thread_count_does_not_change_report(cached_set):
    tset = cached_set("ex3")
    a = classify(tset, DetectionParams(threads=1), model=tset.model).to_dict()
    b = classify(tset, DetectionParams(threads=4), model=tset.model).to_dict()
    assert a == b


def test_empty_set_is_rejected():
    with pytest.raises(ValueError):
        classify(TrajectorySet(3, (), "empty"))
