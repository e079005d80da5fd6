"""``trajmark`` command-line interface.

Exit codes: 0 success, 2 usage or parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import catalog, criteria
from .intersect import DetectionParams, classify
from .model import load_model
from .propagation import DEFAULT_TOL, IntegrationError, SingularPropagatorError, dense_eval
from .store import (STRATEGIES, SamplerSpec, TrajsetParseError, ingest_timeseries,
                    load_trajset, persist_trajset, sample_initial_states, simulate_set)

COMMANDS = ("simulate", "classify", "compare", "table1", "export-plot", "ingest")
PLOT_IDS = ("ex3", "ex5_const", "ex5_ramp")
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "classify"
    example: str | None = None
    model: str | None = None
    input: str | None = None
    overrides: dict = field(default_factory=dict)
    sampler: str = "pure-uniform"
    samples: int = catalog.DEFAULT_SAMPLES
    seed: int = 0
    canonical: bool = True
    t_max: float | None = None
    tol: float = DEFAULT_TOL
    eps_pos: float | None = None
    eps_angle: float = 1e-2
    strict_crossing: bool = True
    criteria: list = field(default_factory=lambda: list(criteria.CRITERIA))
    derivative_policy: str = "central-difference"
    window: int = 5
    dim: int | None = None
    out: str | None = None
    threads: int = 0
    check: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def detection_params(self) -> DetectionParams:
        return DetectionParams(eps_pos=self.eps_pos, eps_angle=self.eps_angle,
                               strict_crossing=self.strict_crossing,
                               threads=resolve_threads(self.threads))

    def sampler_spec(self) -> SamplerSpec:
        try:
            return SamplerSpec(self.sampler, self.samples, self.seed,
                               include_canonical=self.canonical)
        except ValueError as exc:
            raise UsageError(str(exc)) from None


def resolve_threads(n: int | None) -> int:
    if n and n > 0:
        return int(n)
    env = os.environ.get("TRAJMARK_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"TRAJMARK_THREADS must be an integer, got {env!r}") from None


# argument parsing -----------------------------------------------------------------

def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"override value must be a number: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # defaults are None so that only explicit flags override a --config file
    S = argparse.SUPPRESS
    common.add_argument("--example", default=S, help="catalog id")
    common.add_argument("--model", default=S, help="model specification file (JSON)")
    common.add_argument("--input", default=S, help="trajectory-set or series file")
    common.add_argument("--set", dest="overrides", action="append", type=_parse_override,
                        default=S, metavar="KEY=VALUE", help="catalog parameter override")
    common.add_argument("--sampler", default=S, choices=STRATEGIES)
    common.add_argument("--samples", type=int, default=S)
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--no-canonical", dest="canonical", action="store_false", default=S)
    common.add_argument("--t-max", dest="t_max", type=float, default=S)
    common.add_argument("--tol", type=float, default=S)
    common.add_argument("--eps-pos", dest="eps_pos", type=float, default=S)
    common.add_argument("--eps-angle", dest="eps_angle", type=float, default=S)
    common.add_argument("--no-strict", dest="strict_crossing", action="store_false", default=S)
    common.add_argument("--criteria", type=lambda s: [c for c in s.split(",") if c], default=S)
    common.add_argument("--policy", dest="derivative_policy", default=S,
                        choices=("provided", "central-difference", "smoothed-difference"))
    common.add_argument("--window", type=int, default=S)
    common.add_argument("--dim", type=int, default=S, help="state dimension of headerless input")
    common.add_argument("--out", default=S)
    common.add_argument("--threads", type=int, default=S)
    common.add_argument("--check", action="store_true", default=S)
    common.add_argument("--config", default=None, help="JSON run configuration to start from")
    common.add_argument("--dump-config", dest="dump_config", default=None,
                        help="write the effective configuration to this path and exit")

    parser = argparse.ArgumentParser(prog="trajmark",
                                     description="Trajectory-based Markovianity analysis.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate a trajectory set and write it to --out",
        "classify": "classify a trajectory set as SM, IM or NM",
        "compare": "evaluate the rival criteria for one model",
        "table1": "build the full comparison grid",
        "export-plot": "write plot-ready CSV data",
        "ingest": "load an external time series as a trajectory set",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(argv) -> tuple[RunConfig, str | None]:
    args = vars(build_parser().parse_args(argv))
    dump = args.pop("dump_config", None)
    path = args.pop("config", None)
    base = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
    if "overrides" in args:
        args["overrides"] = {**base.get("overrides", {}), **dict(args["overrides"])}
    merged = {**base, **args}
    return RunConfig.from_dict(merged), dump


# helpers ------------------------------------------------------------------------

def _entry(cfg: RunConfig):
    try:
        return catalog.build(cfg.example, cfg.overrides)
    except catalog.UnknownEntryError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_user_model(cfg: RunConfig):
    try:
        return load_model(cfg.model)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load model {cfg.model}: {exc}") from None


def _simulate(cfg: RunConfig):
    spec = cfg.sampler_spec()
    if cfg.example and cfg.model:
        raise UsageError("give either --example or --model, not both")
    if cfg.example:
        entry = _entry(cfg)
        spec = SamplerSpec(spec.strategy, spec.count, spec.seed, entry.extra_states,
                           spec.include_canonical)
        return entry.simulate(spec, t_max=cfg.t_max, tol=cfg.tol)
    if cfg.model:
        model = _load_user_model(cfg)
        if cfg.t_max is None:
            raise UsageError("--t-max is required with --model")
        states = sample_initial_states(spec, model.dim)
        return simulate_set(model, states, (0.0, cfg.t_max), cfg.tol, sampler=spec.to_dict())
    raise UsageError("a model source is required: --example or --model")


def _load_set(cfg: RunConfig):
    try:
        return load_trajset(cfg.input)
    except TrajsetParseError as exc:
        raise UsageError(f"{cfg.input}: {exc}") from None
    except OSError as exc:
        raise UsageError(str(exc)) from None


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def _set_summary(tset) -> str:
    steps = np.concatenate([np.diff(tr.t) for tr in tset if len(tr) > 1] or [np.zeros(0)])
    steps = steps[steps > 0]
    stats = (f"step min={steps.min():.3g} median={np.median(steps):.3g} max={steps.max():.3g}"
             if steps.size else "no steps")
    return f"trajectories={len(tset)} horizon={tset.horizon:g} dim={tset.dim} {stats}"


def _verdict_line(report) -> str:
    return f"VERDICT: {report.verdict.value} (horizon={report.horizon:g}, events={report.event_count})"


# commands -----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    if not cfg.out:
        raise UsageError("simulate needs --out")
    tset = _simulate(cfg)
    persist_trajset(tset, cfg.out)
    print(_set_summary(tset))
    return 0


def cmd_classify(cfg: RunConfig) -> int:
    if cfg.input:
        tset = _load_set(cfg)
        model = _load_user_model(cfg) if cfg.model else None
    else:
        tset = _simulate(cfg)
        model = None
    report = classify(tset, cfg.detection_params(), model=model)
    _write_json(report.to_dict(), cfg.out)
    print(_verdict_line(report))
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    unknown = [c for c in cfg.criteria if c not in criteria.CRITERIA]
    if unknown:
        raise UsageError(f"unknown criteria {unknown}; valid: {', '.join(criteria.CRITERIA)}")
    if cfg.example:
        entry = _entry(cfg)
        model, horizon, label, physical = entry.model, entry.horizon, entry.id, entry.physical
    elif cfg.model:
        model, label, physical = _load_user_model(cfg), cfg.model, True
        horizon = None
    else:
        raise UsageError("compare needs --example or --model")
    horizon = cfg.t_max if cfg.t_max is not None else horizon
    if horizon is None:
        raise UsageError("--t-max is required with --model")
    results = criteria.evaluate(model, horizon, cfg.criteria, cfg.tol,
                                resolve_threads(cfg.threads))
    mark = "" if physical else "*"
    cells = [f"{criteria.CRITERION_NAMES[c]}={results[c].verdict}{mark}" for c in cfg.criteria]
    print(f"{label}: " + " ".join(cells))
    _write_json({"id": label, "horizon": horizon,
                 "criteria": {c: r.to_dict() for c, r in results.items()}}, cfg.out)
    return 0


def cmd_table1(cfg: RunConfig) -> int:
    entries = [catalog.build(i) for i in catalog.TABLE1_IDS]
    rows = criteria.criteria_table(entries, threads=resolve_threads(cfg.threads))
    sys.stdout.write(criteria.render_table(rows))
    _write_json({"rows": [r.to_dict() for r in rows]}, cfg.out)
    if cfg.check:
        bad = criteria.check_table(rows)
        for line in bad:
            print(f"MISMATCH {line}", file=sys.stderr)
        if bad:
            return 1
        print("CHECK: all verdicts match")
    return 0


def _export_rows(cfg: RunConfig, entry):
    horizon = cfg.t_max if cfg.t_max is not None else entry.horizon
    t = np.linspace(0.0, horizon, int(round(horizon / 0.05)) + 1)
    if entry.id == "ex3":
        tr = entry.reference_trajectory(horizon, cfg.tol)
        z = np.array([dense_eval(tr, ti)[0][2] for ti in t])
        return ["t,mean_excitation"] + [f"{float(a)!r},{float(b)!r}"
                                        for a, b in zip(t, (z + 1) / 2)]
    lines = ["traj,t,y,z"]
    tr = entry.reference_trajectory(horizon, cfg.tol)
    for ti in t:
        x = dense_eval(tr, ti)[0]
        lines.append(f"0,{float(ti)!r},{float(x[1])!r},{float(x[2])!r}")
    return lines


def cmd_export_plot(cfg: RunConfig) -> int:
    if cfg.example not in PLOT_IDS:
        raise UsageError(f"export-plot supports {', '.join(PLOT_IDS)}; got {cfg.example!r}")
    if not cfg.out:
        raise UsageError("export-plot needs --out")
    lines = _export_rows(cfg, _entry(cfg))
    with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} rows to {cfg.out}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.input:
        raise UsageError("ingest needs --input")
    try:
        tset = ingest_timeseries(cfg.input, cfg.derivative_policy, cfg.window, cfg.dim)
    except TrajsetParseError as exc:
        raise UsageError(f"{cfg.input}: {exc}") from None
    except (OSError, ValueError) as exc:
        raise UsageError(f"{cfg.input}: {exc}") from None
    if cfg.out:
        persist_trajset(tset, cfg.out)
    print(_set_summary(tset))
    report = classify(tset, cfg.detection_params())
    print(_verdict_line(report))
    return 0


HANDLERS = {"simulate": cmd_simulate, "classify": cmd_classify, "compare": cmd_compare,
            "table1": cmd_table1, "export-plot": cmd_export_plot, "ingest": cmd_ingest}


def main(argv=None) -> int:
    try:
        cfg, dump = config_from_args(argv)
        if dump:
            _write_json(cfg.to_dict(), dump)
            return 0
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"trajmark: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, SingularPropagatorError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"trajmark: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
