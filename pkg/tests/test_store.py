import numpy as np
import pytest

from trajmark.catalog import build
from trajmark.intersect import DetectionParams, find_self_intersections
from trajmark.store import (SamplerSpec, TrajsetParseError, canonical_states, ingest_timeseries,
                            load_trajset, persist_trajset, sample_initial_states, time_reverse,
                            write_series)


def test_sampler_is_deterministic():
    spec = SamplerSpec("pure-uniform", 10, seed=7)
    a, b = sample_initial_states(spec, 3), sample_initial_states(spec, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = sample_initial_states(SamplerSpec("pure-uniform", 10, seed=8), 3)
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_canonical_states_come_first():
    spec = SamplerSpec("ball-uniform", 5, seed=1, states=((0.1, 0.2, 0.3),))
    states = sample_initial_states(spec, 3)
    canon = canonical_states(3)
    assert len(states) == len(canon) + 5 + 1
    assert all(np.array_equal(a, b) for a, b in zip(states, canon))
    assert np.array_equal(states[-1], [0.1, 0.2, 0.3])
    assert any(np.allclose(s, [0, 0, 1]) for s in canon)
    assert any(np.allclose(s, [0, 0, -1]) for s in canon)


def test_sampler_shapes_and_ranges():
    pure = sample_initial_states(SamplerSpec("pure-uniform", 50, include_canonical=False), 3)
    assert np.allclose(np.linalg.norm(pure, axis=1), 1.0)
    ball = sample_initial_states(SamplerSpec("ball-uniform", 50, include_canonical=False), 3)
    assert np.all(np.linalg.norm(ball, axis=1) <= 1.0)
    # pure states have |x|^2 = n (n-1) / 2 with rho = (I + x.sigma) / n
    qutrit = sample_initial_states(SamplerSpec("pure-uniform", 5, include_canonical=False), 8)
    assert np.allclose(np.sum(np.square(qutrit), axis=1), 3.0)


def test_sampler_validation():
    with pytest.raises(ValueError):
        SamplerSpec("sobol", 3)
    with pytest.raises(ValueError):
        SamplerSpec("pure-uniform", 0)
    with pytest.raises(ValueError):
        sample_initial_states(SamplerSpec("explicit-list", 1, states=((1.0, 0.0),)), 3)


def test_round_trip_is_bitwise(tmp_path):
    entry = build("ex4")
    tset = entry.simulate(SamplerSpec("pure-uniform", 5, seed=3, include_canonical=False))
    path = tmp_path / "ex4.trajset"
    persist_trajset(tset, path)
    again = load_trajset(path)
    assert again.dim == 3 and len(again) == 5
    assert again.provenance == tset.provenance
    assert again.same_samples(tset)
    for a, b in zip(tset, again):
        assert np.array_equal(a.t, b.t) and np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    text = path.read_text()
    assert text.startswith("# trajset v1 dim=3 provenance=")
    assert "\r" not in text


def test_parse_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.trajset"
    path.write_text("# trajset v1 dim=1 provenance=x\n## traj id=0\n0.0,1.0,0.0\n0.5,oops,1\n")
    with pytest.raises(TrajsetParseError) as err:
        load_trajset(path)
    assert err.value.line == 4
    path.write_text("# trajset v1 dim=1 provenance=x\n## traj id=0\n0.0,1.0,0.0\n0.5,1.0\n")
    with pytest.raises(TrajsetParseError) as err:
        load_trajset(path)
    assert err.value.line == 4
    path.write_text("0.0,1.0,0.0\n")
    with pytest.raises(TrajsetParseError) as err:
        load_trajset(path)
    assert err.value.line == 1


def _circle_series(m=400):
    t = np.linspace(0.0, 3 * np.pi, m)
    return t, np.stack([np.cos(t), np.sin(t)], axis=1)


def test_ingest_difference_policies(tmp_path):
    t, x = _circle_series()
    path = tmp_path / "series.csv"
    write_series(path, [(t, x)])
    exact = np.stack([-np.sin(t), np.cos(t)], axis=1)
    raw = ingest_timeseries(path, "central-difference")[0]
    assert np.max(np.abs(raw.v[1:-1] - exact[1:-1])) < 1e-3
    smooth = ingest_timeseries(path, "smoothed-difference", window=3)[0]
    assert np.max(np.abs(smooth.v[2:-2] - exact[2:-2])) < 1e-2
    assert raw.dim == 2


def test_ingest_provided_and_errors(tmp_path):
    t, x = _circle_series(50)
    v = np.stack([-np.sin(t), np.cos(t)], axis=1)
    path = tmp_path / "full.csv"
    path.write_text("\n".join(",".join(repr(float(c)) for c in [a, *p, *q]) for a, p, q in zip(t, x, v)) + "\n")
    tset = ingest_timeseries(path, "provided")
    assert np.array_equal(tset[0].v, v)
    assert tset.provenance.startswith("ingested:")
    with pytest.raises(ValueError):
        ingest_timeseries(path, "spline")
    with pytest.raises(ValueError):
        ingest_timeseries(path, "smoothed-difference", window=4)
    pos = tmp_path / "pos.csv"
    write_series(pos, [(t, x)])
    with pytest.raises(ValueError):
        ingest_timeseries(pos, "provided")
    back = tmp_path / "back.csv"
    write_series(back, [(t[::-1], x)])
    with pytest.raises(ValueError):
        ingest_timeseries(back)


def test_time_reverse_is_an_involution():
    tset = build("ex3", {"horizon": 20.0}).simulate(
        SamplerSpec("pure-uniform", 3, seed=1, include_canonical=False))
    rev = time_reverse(tset)
    assert rev[0].t[0] == 0.0 and rev[0].t[-1] == tset.horizon
    assert np.array_equal(rev[0].x[0], tset[0].x[-1])
    assert np.array_equal(rev[0].v[0], -tset[0].v[-1])
    again = time_reverse(rev)
    for a, b in zip(again, tset):
        assert np.allclose(a.t, b.t, rtol=0, atol=1e-13)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)
    assert again.model is tset.model


def test_reversal_preserves_self_intersection_structure():
    ex3 = build("ex3")
    tr = ex3.simulate(states=[np.array(ex3.reference_state)])
    fwd = find_self_intersections(tr[0])
    rev_set = time_reverse(tr)
    bwd = find_self_intersections(rev_set[0], regenerate=lambda lvl: rev_set.source.trajectory(0, lvl))
    assert len(fwd) > 0 and len(bwd) == len(fwd)
    ex4 = build("ex4").simulate(SamplerSpec("pure-uniform", 4, include_canonical=False))
    assert all(not find_self_intersections(t, DetectionParams()) for t in time_reverse(ex4))


def test_pure_uniform_is_isotropic():
    xs = np.array(sample_initial_states(SamplerSpec("pure-uniform", 10_000, seed=4,
                                                    include_canonical=False), 3))
    assert np.allclose(np.linalg.norm(xs, axis=1), 1.0)
    # each coordinate of a uniform point on the sphere has variance 1/3
    assert np.all(np.abs(xs.mean(axis=0)) < 3 * np.sqrt(1 / 3 / len(xs)))


def test_canonical_qubit_states():
    want = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 0)]
    got = {tuple(s) for s in canonical_states(3)}
    assert {tuple(float(c) for c in w) for w in want} <= got


def test_explicit_list_pass_through():
    states = ((0.1, 0.2, 0.3), (0.0, 0.0, -1.0))
    got = sample_initial_states(SamplerSpec("explicit-list", 1, states=states), 3)
    assert [tuple(s) for s in got] == list(states)


def test_empty_set_and_hand_written_file(tmp_path):
    from trajmark.store import TrajectorySet
    path = tmp_path / "empty.trajset"
    persist_trajset(TrajectorySet(3, (), "nothing"), path)
    assert path.read_text() == "# trajset v1 dim=3 provenance=nothing\n"
    empty = load_trajset(path)
    assert len(empty) == 0 and empty.dim == 3
    path = tmp_path / "two.trajset"
    path.write_text("# trajset v1 dim=2 provenance=hand\n0,1,0,0,1\n0.5,1,0.5,0,1\n")
    tset = load_trajset(path)
    assert len(tset) == 1 and len(tset[0]) == 2
    assert np.array_equal(tset[0].x[1], [1.0, 0.5])


def test_central_difference_oracle(tmp_path):
    t = np.arange(0.0, 3.0, 1e-3)
    x = np.stack([np.cos(2 * t), np.sin(2 * t)], axis=1)
    path = tmp_path / "c.csv"
    write_series(path, [(t, x)])
    v = ingest_timeseries(path, "central-difference")[0].v
    exact = np.stack([-2 * np.sin(2 * t), 2 * np.cos(2 * t)], axis=1)
    assert np.max(np.abs(v[1:-1] - exact[1:-1])) < 1e-5
    path.write_text("0,1,0\n1,0,1\n")
    with pytest.raises(ValueError):
        ingest_timeseries(path, "central-difference")


def test_provided_ingest_is_idempotent(tmp_path):
    tset = build("ex4").simulate(SamplerSpec("pure-uniform", 2, include_canonical=False))
    a, b = tmp_path / "a.trajset", tmp_path / "b.trajset"
    persist_trajset(tset, a)
    once = ingest_timeseries(a, "provided")
    persist_trajset(once, b)
    twice = load_trajset(b)
    assert twice.same_samples(once) and once.same_samples(tset)
