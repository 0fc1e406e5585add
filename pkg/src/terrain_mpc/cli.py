"""Command-line entry points: run scenarios, compare runs, dump foothold scores.

Exit codes: 0 success, 1 configuration error, 2 controller failure, 3 fall.
Set ``TERRAIN_MPC_LOG`` (DEBUG, INFO, WARNING, ...) for log verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .foothold import NoSafeFoothold, build_contact_sequence
from .gait import GaitError, GaitParams, build_schedule
from .sim import (CommandSegment, Disturbance, QpGains, SimConfig, initial_state,
                  run_closed_loop, summarize)
from .terrain import HeightMap, TerrainError, flat_heightmap, load_heightmap

SUMMARY_SCHEMA = "terrain_mpc.summary/1"
EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_FALL = 0, 1, 2, 3
LOG_ENV = "TERRAIN_MPC_LOG"

log = logging.getLogger("terrain_mpc")


class ScenarioError(ValueError):
    """Scenario file missing, malformed or inconsistent."""


@dataclass
class ScenarioSpec:
    name: str
    duration: float
    terrain: Path | None = None          # None: flat ground
    gait: GaitParams = field(default_factory=GaitParams)
    commands: list = field(default_factory=lambda: [CommandSegment(0.0)])
    disturbances: list = field(default_factory=list)
    mpc: bool = True
    leg_compensation: bool = True
    seed: int = 0
    output: Path | None = None
    controller: dict = field(default_factory=dict)   # extra SimConfig fields

    @property
    def configuration(self) -> str:
        if not self.mpc:
            return "QP+IC" if self.leg_compensation else "QP"
        return "MPC+IC" if self.leg_compensation else "MPC"

    def hmap(self) -> HeightMap:
        if self.terrain is None:
            return flat_heightmap((-3.0, -3.0), (12.0, 6.0))
        return load_heightmap(self.terrain)

    def ablate(self, what: str | None) -> "ScenarioSpec":
        """``mpc`` swaps in the single-step QP and drops compensation; ``ic`` drops compensation."""
        if what is None:
            return self
        if what == "mpc":
            return replace(self, mpc=False, leg_compensation=False)
        if what == "ic":
            return replace(self, leg_compensation=False)
        raise ScenarioError(f"unknown ablation {what!r}")

    def sim_config(self) -> SimConfig:
        extra = dict(self.controller)
        if "qp_gains" in extra:
            extra["qp_gains"] = QpGains(**extra["qp_gains"])
        for key in ("state_weight", "initial_position"):
            if isinstance(extra.get(key), list):
                extra[key] = tuple(extra[key])
        try:
            return SimConfig(duration=self.duration, gait=self.gait, terrain=self.hmap(),
                             commands=list(self.commands), disturbances=list(self.disturbances),
                             controller="mpc" if self.mpc else "qp",
                             leg_compensation=self.leg_compensation, seed=self.seed, **extra)
        except TypeError as exc:
            raise ScenarioError(f"bad controller settings: {exc}") from exc


_KEYS = {"name", "duration", "terrain", "gait", "commands", "disturbances", "ablation",
         "seed", "output", "controller"}


def _resolve(path) -> Path:
    p = Path(path)
    for cand in (p, p.with_name(p.name + ".json"), p / "scenario.json"):
        if cand.is_file():
            return cand
    raise ScenarioError(f"scenario not found: {path}")


def load_scenario(path) -> ScenarioSpec:
    """Parse a JSON scenario. ``scenarios/flat_trot`` finds ``flat_trot.json``."""
    src = _resolve(path)
    try:
        d = json.loads(src.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{src}: does not parse: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError(f"{src}: expected a JSON object")
    unknown = set(d) - _KEYS
    if unknown:
        raise ScenarioError(f"{src}: unknown fields {sorted(unknown)}")
    try:
        duration = float(d["duration"])
        name = str(d.get("name", src.stem))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{src}: needs a numeric duration") from exc
    if not duration > 0:
        raise ScenarioError(f"{src}: duration must be positive")

    terrain = None
    if d.get("terrain") is not None:
        terrain = (src.parent / d["terrain"]).resolve()
        if not terrain.is_file():
            raise ScenarioError(f"{src}: terrain file {terrain} does not exist")
    try:
        gait = GaitParams(**d.get("gait", {}))
        commands = [CommandSegment(float(c.get("start", 0.0)), tuple(c.get("velocity", (0.0, 0.0))),
                                   float(c.get("yaw_rate", 0.0)))
                    for c in d.get("commands", [{}])]
        disturbances = [Disturbance(float(x["start"]), float(x["duration"]),
                                    tuple(x.get("force", (0.0, 0.0, 0.0))),
                                    tuple(x.get("torque", (0.0, 0.0, 0.0))))
                        for x in d.get("disturbances", [])]
    except (GaitError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{src}: {exc}") from exc
    if not commands:
        raise ScenarioError(f"{src}: empty command profile")
    abl = d.get("ablation", {})
    out = d.get("output")
    return ScenarioSpec(name, duration, terrain, gait, commands, disturbances,
                        mpc=bool(abl.get("mpc", True)), leg_compensation=bool(abl.get("ic", True)),
                        seed=int(d.get("seed", 0)), output=Path(out) if out else None,
                        controller=dict(d.get("controller", {})))


def _sig9(obj):
    """Round every float to 9 significant digits; non-finite floats become None."""
    if isinstance(obj, dict):
        return {k: _sig9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sig9(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.9g}") if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(_sig9(summary), indent=2, sort_keys=True) + "\n")


def run(path, ablate: str | None = None, seed: int | None = None, out=None) -> int:
    try:
        spec = load_scenario(path).ablate(ablate)
        if seed is not None:
            spec = replace(spec, seed=int(seed))
        config = spec.sim_config()
    except (ScenarioError, TerrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out or spec.output or Path("runs") / f"{spec.name}-{spec.configuration}")
    log.info("running %s (%s) for %.1f s", spec.name, spec.configuration, spec.duration)
    sim_log = run_closed_loop(config)
    sim_log.write_csv(out_dir)
    summary = summarize(sim_log)
    summary.update({"schema_version": SUMMARY_SCHEMA, "scenario": spec.name,
                    "configuration": spec.configuration, "ablation": ablate, "seed": spec.seed})
    # wall-clock numbers stay out of the deterministic summary
    summary.pop("solve_time", None)
    times = [s.solve_time for s in sim_log.solves]
    timing = {"count": len(times), "mean": float(np.mean(times)) if times else 0.0,
              "max": float(np.max(times)) if times else 0.0}
    write_summary(out_dir / "summary.json", summary)
    write_summary(out_dir / "timing.json", {"schema_version": SUMMARY_SCHEMA, "solve_time": timing})
    print(format_summary(summary))
    print(f"artifacts written to {out_dir}")
    if sim_log.failure:
        return EXIT_FAILURE
    if sim_log.fallen:
        return EXIT_FALL
    return EXIT_OK


def format_summary(s: dict) -> str:
    lines = [f"{s['scenario']} [{s['configuration']}]",
             f"  completed: {s['completed']}  fallen: {s['fallen']}"]
    if s.get("failure"):
        lines.append(f"  failure: {s['failure']}")
    if "mean_forward_velocity" in s:
        lines.append(f"  mean forward velocity (final window): {s['mean_forward_velocity']:.9g} m/s"
                     f"  error {s['velocity_error_mean']:.9g}")
    for leg, e in sorted(s["foothold_error"].items()):
        lines.append(f"  leg {leg}: {e['count']} touchdowns  RMS(e) {e['rms']:.9g}  max|e| {e['max']:.9g}")
    return "\n".join(lines)


def _load_summary(run_dir) -> dict:
    p = Path(run_dir) / "summary.json"
    if not p.is_file():
        raise ScenarioError(f"no summary in {run_dir}")
    return json.loads(p.read_text())


def _delta(a, b):
    """Percentage change of ``a`` relative to ``b``."""
    if a is None or b is None:
        return None
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return 100.0 * (a - b) / b


def compare(run_a, run_b) -> dict:
    """Per-leg RMS(e), max|e| and velocity error of run a against run b."""
    a, b = _load_summary(run_a), _load_summary(run_b)
    if a.get("schema_version") != b.get("schema_version"):
        raise ScenarioError(f"schema mismatch: {a.get('schema_version')} vs {b.get('schema_version')}")
    if a.get("scenario") != b.get("scenario"):
        raise ScenarioError(f"scenario mismatch: {a.get('scenario')} vs {b.get('scenario')}")
    legs = {}
    for leg in sorted(set(a["foothold_error"]) | set(b["foothold_error"])):
        ea, eb = a["foothold_error"].get(leg, {}), b["foothold_error"].get(leg, {})
        legs[leg] = {m: {"a": ea.get(m), "b": eb.get(m), "delta_pct": _delta(ea.get(m), eb.get(m))}
                     for m in ("rms", "max")}
    va, vb = a.get("velocity_error_rms"), b.get("velocity_error_rms")
    return {"scenario": a["scenario"], "a": a["configuration"], "b": b["configuration"],
            "completed": {"a": a["completed"], "b": b["completed"]},
            "legs": legs, "velocity_error_rms": {"a": va, "b": vb, "delta_pct": _delta(va, vb)}}


def _pct(x):
    return "   n/a" if x is None else f"{x:+.1f}%"


def format_comparison(c: dict) -> str:
    def f(x):
        return "n/a" if x is None else f"{x:.9g}"
    rows = [f"{c['scenario']}: a = {c['a']}, b = {c['b']}",
            f"completed: a {c['completed']['a']}, b {c['completed']['b']}",
            f"{'leg':>4} {'RMS(e) a':>13} {'RMS(e) b':>13} {'delta':>8} {'max|e| a':>13} {'max|e| b':>13} {'delta':>8}"]
    for leg, m in c["legs"].items():
        r, x = m["rms"], m["max"]
        rows.append(f"{leg:>4} {f(r['a']):>13} {f(r['b']):>13} {_pct(r['delta_pct']):>8}"
                    f" {f(x['a']):>13} {f(x['b']):>13} {_pct(x['delta_pct']):>8}")
    v = c["velocity_error_rms"]
    rows.append(f"velocity RMS error: a {f(v['a'])}, b {f(v['b'])} ({_pct(v['delta_pct']).strip()})")
    return "\n".join(rows)


def dump_scores(path, leg: int, stance: int, out=None) -> np.ndarray:
    """Foothold cost grid for ``leg`` at stance change ``stance`` of the first plan."""
    spec = load_scenario(path)
    config = spec.sim_config()
    hmap = config.terrain
    state = initial_state(config, hmap)
    schedule = build_schedule(config.gait, 0.0)
    if not 0 < stance < len(schedule.times):
        raise ScenarioError(f"stance change {stance} outside 1..{len(schedule.times) - 1}")
    if not schedule.touchdown[stance] or int(schedule.legs[stance]) != leg:
        touch = [k for k in range(1, len(schedule.times))
                 if schedule.touchdown[k] and int(schedule.legs[k]) == leg]
        raise ScenarioError(f"stance change {stance} is not a touchdown of leg {leg}; "
                            f"its touchdowns are {touch}")
    choices = {}
    build_contact_sequence(state, schedule, hmap, config.gait, config.legs.hips,
                           config.foothold, choices=choices)
    choice = choices[stance]
    if out is not None:
        choice.to_csv(out)
    return choice.costs


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    ap = argparse.ArgumentParser(prog="terrain-mpc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("spec")
    p.add_argument("--ablate", choices=("mpc", "ic"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p = sub.add_parser("compare", help="compare two run directories")
    p.add_argument("a")
    p.add_argument("b")
    p = sub.add_parser("dump-scores", help="write the foothold cost grid as CSV")
    p.add_argument("spec")
    p.add_argument("--leg", type=int, required=True)
    p.add_argument("--stance", type=int, required=True)
    p.add_argument("--out")
    args = ap.parse_args(argv)

    if args.cmd == "run":
        return run(args.spec, args.ablate, args.seed, args.out)
    try:
        if args.cmd == "compare":
            print(format_comparison(compare(args.a, args.b)))
        else:
            costs = dump_scores(args.spec, args.leg, args.stance, args.out)
            if args.out is None:
                np.savetxt(sys.stdout, costs, delimiter=",", fmt="%.9g")
    except (ScenarioError, TerrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoSafeFoothold as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
