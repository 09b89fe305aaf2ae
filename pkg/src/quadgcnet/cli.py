"""Command-line entry point: ``quadgcnet <subcommand> --config run.json``.

Every subcommand validates its JSON config against a schema (print it with
``quadgcnet <subcommand> --schema``), writes its outputs plus a
``provenance.json`` into ``--out``, and is byte-for-byte reproducible for a
fixed config and seed.  Failures print one machine-parseable line on stderr,

    quadgcnet-error code=SOLVER_FAILED exit=3 detail="..."

followed by human-readable diagnostics.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
import zlib
from pathlib import Path

import jsonschema
import numpy as np

from quadgcnet import __version__
from quadgcnet import dynamics as dyn
from quadgcnet.io import ContainerError, dumps_json, sha256_of

log = logging.getLogger("quadgcnet")

EXIT_CODES = {
    "CONFIG_INVALID": 2,
    "SOLVER_FAILED": 3,
    "DATASET_FAILED": 4,
    "TRAINING_DIVERGED": 5,
    "IO_ERROR": 6,
    "AUDIT_FAILED": 7,
}


class CliError(Exception):
    def __init__(self, code: str, detail: str, diagnostics: str = ""):
        super().__init__(detail)
        self.code = code
        self.detail = detail
        self.diagnostics = diagnostics


# --- schemas -------------------------------------------------------------------

_NUM = {"type": "number"}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_PARAMS = {"oneOf": [{"type": "string"}, {"type": "object", "additionalProperties": _NUM}, {"type": "null"}]}
_VARIANT = {"enum": ["BASE", "OMEGA_MAX", "WP_REL"]}
_BOUNDS = {"type": "object", "additionalProperties": {"oneOf": [_NUM, _RANGE, {"type": "null"}]}}

SCHEMAS = {
    "solve": {
        "type": "object",
        "additionalProperties": False,
        "required": ["problem"],
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "params": _PARAMS,
            "problem": {"enum": ["landing", "sampled", "explicit"]},
            "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
            "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                         "minItems": 1},
            "n_segments": {"type": "integer", "minimum": 10},
            "refine_to": {"type": ["integer", "null"], "minimum": 4},
            "landing": {"type": "object", "additionalProperties": False,
                        "properties": {"height": {"type": "number", "exclusiveMinimum": 0}}},
            "sampled": {"type": "object", "additionalProperties": False,
                        "properties": {"variant": _VARIANT, "wp_arity": {"enum": [1, 2, 3]},
                                       "bounds": _BOUNDS}},
            "spec": {"type": "object"},
        },
    },
    "gen-dataset": {
        "type": "object",
        "additionalProperties": False,
        "required": ["epsilon", "n_trajectories"],
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "params": _PARAMS,
            "variant": _VARIANT,
            "wp_arity": {"enum": [1, 2, 3]},
            "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
            "n_trajectories": {"type": "integer", "minimum": 1},
            "samples_per_traj": {"type": ["integer", "null"], "minimum": 2},
            "n_segments": {"type": "integer", "minimum": 10},
            "bounds": _BOUNDS,
            "csv": {"type": "boolean"},
            "output": {"type": "string"},
        },
    },
    "train": {
        "type": "object",
        "additionalProperties": False,
        "required": ["dataset"],
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "dataset": {"type": "string"},
            "train_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
            "epochs": {"type": "integer", "minimum": 1},
            "batch_size": {"type": "integer", "minimum": 1},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "factor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "patience": {"type": "integer", "minimum": 1},
            "output": {"type": "string"},
        },
    },
    "evaluate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["network"],
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "params": _PARAMS,
            "network": {"type": "string"},
            "references": {"type": "array", "items": {"type": "string"}},
            "reference_set": {
                "type": "object", "additionalProperties": False, "required": ["count"],
                "properties": {"count": {"type": "integer", "minimum": 1},
                               "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                               "n_segments": {"type": "integer", "minimum": 10},
                               "refine_to": {"type": ["integer", "null"], "minimum": 4},
                               "omega_max": {"type": ["number", "null"]},
                               "bounds": _BOUNDS}},
            "omega_max_inputs": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 1},
            "sim": {"type": "object"},
        },
    },
    "fly": {
        "type": "object",
        "additionalProperties": False,
        "required": ["network"],
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "params": _PARAMS,
            "network": {"type": "string"},
            "track": {
                "type": "object", "additionalProperties": False,
                "properties": {"kind": {"enum": ["rectangle", "randomized", "waypoints"]},
                               "length": _NUM, "width": _NUM, "side": _NUM,
                               "rule": {"enum": ["single", "consecutive", "none"]},
                               "threshold": _NUM, "sphere_radius": _NUM,
                               "waypoints": {"type": "array",
                                             "items": {"type": "array", "items": _NUM,
                                                       "minItems": 4, "maxItems": 4}},
                               "cyclic": {"type": "boolean"}}},
            "start": {"type": "object", "additionalProperties": False,
                      "properties": {"distance": _NUM, "speed": _NUM,
                                     "x0": {"type": "array", "items": _NUM, "minItems": 19, "maxItems": 19}}},
            "sim": {"type": "object"},
        },
    },
    "tracker-demo": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": {"type": "integer", "minimum": 0},
            "params": _PARAMS,
            "scenario": {"enum": ["step", "drift"]},
            "ceiling": _NUM, "command": _NUM, "initial": {"type": ["number", "null"]},
            "rate_hz": {"type": "number", "exclusiveMinimum": 0},
            "duration": {"type": "number", "exclusiveMinimum": 0},
            "drift_rate": {"type": "number", "minimum": 0},
            "burst_every": {"type": "number", "exclusiveMinimum": 0},
            "burst_length": {"type": "number", "exclusiveMinimum": 0},
            "window": {"type": "number", "exclusiveMinimum": 0},
            "p_thresh": {"type": "number", "exclusiveMinimum": 0},
        },
    },
}


def validate_config(command: str, config: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    err = jsonschema.exceptions.best_match(validator.iter_errors(config))
    if err is not None:
        field_path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            field_path = ".".join([*(str(p) for p in err.absolute_path), *extra])
        raise CliError("CONFIG_INVALID", f"config field '{field_path}': {err.message}")


# --- shared helpers --------------------------------------------------------------

def sub_seed(seed: int, name: str) -> int:
    """Deterministic named sub-seed (dataset, init, shuffle, split, ...)."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def load_params(doc, base_dir: Path) -> dyn.ModelParams:
    if doc is None:
        return dyn.default_params()
    if isinstance(doc, str):
        path = Path(doc)
        return dyn.load_params(path if path.is_absolute() else base_dir / path)
    return dyn.default_params().replace(**doc)


def _resolve(path: str, base_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base_dir / p


def write_provenance(out: Path, command: str, config: dict, seed: int, outputs: list, extra=None) -> None:
    import scipy

    doc = {
        "command": command,
        "config": config,
        "config_sha256": sha256_of(config),
        "seed": seed,
        "outputs": sorted(outputs),
        "versions": {"quadgcnet": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if extra:
        doc.update(extra)
    (out / "provenance.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --- solve -------------------------------------------------------------------------

def _solve_task(args):
    spec_doc, refine_to = args
    from quadgcnet.trajopt import NonConvergenceError, OcpSpec, refine_node_doubling, solve_ocp

    spec = OcpSpec.from_dict(spec_doc)
    try:
        traj = solve_ocp(spec)
        if refine_to:
            traj = refine_node_doubling(traj, refine_to)
    except NonConvergenceError as err:
        return None, str(err)
    return traj, ""


def _pool_map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    import multiprocessing as mp
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(min(jobs, len(tasks)), mp_context=mp.get_context("spawn")) as pool:
        return list(pool.map(fn, tasks))


def cmd_solve(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet.dataset import SamplingBounds, sample_ocp
    from quadgcnet.trajopt import OcpSpec, audit_solution, braking_onset_time, landing_spec
    from quadgcnet.trajopt.io import save_trajectory, write_trajectory_csv

    params = load_params(config.get("params"), base_dir)
    n_seg = config.get("n_segments", 60)
    if "epsilons" in config and "epsilon" in config:
        raise CliError("CONFIG_INVALID", "config field 'epsilon': give either 'epsilon' or 'epsilons'")
    epsilons = config.get("epsilons", [config.get("epsilon", 0.0)])
    kind = config["problem"]
    if kind == "landing":
        base = landing_spec(config.get("landing", {}).get("height", 5.0), 0.0, params, n_seg)
    elif kind == "sampled":
        sc = config.get("sampled", {})
        try:
            bounds = SamplingBounds.from_dict(sc.get("bounds", {}))
        except (ValueError, TypeError) as err:
            raise CliError("CONFIG_INVALID", f"config field 'sampled.bounds': {err}") from err
        base = sample_ocp(bounds, 0.0, sub_seed(seed, "problem"), variant=sc.get("variant", "BASE"),
                          params=params, n_segments=n_seg, wp_arity=sc.get("wp_arity", 1))
    else:
        if "spec" not in config:
            raise CliError("CONFIG_INVALID", "config field 'spec': required for problem 'explicit'")
        try:
            base = OcpSpec.from_dict(config["spec"])
        except (KeyError, TypeError, ValueError) as err:
            raise CliError("CONFIG_INVALID", f"config field 'spec': {err}") from err

    tasks = [(dataclasses.replace(base, epsilon=float(e)).to_dict(), config.get("refine_to")) for e in epsilons]
    results = _pool_map(_solve_task, tasks, jobs)
    outputs, rows, failures = [], [], []
    for eps, (traj, err) in zip(epsilons, results):
        tag = f"eps{float(eps):.3f}"
        if traj is None:
            failures.append(f"epsilon={eps}: {err}")
            continue
        audit = audit_solution(traj)
        save_trajectory(traj, out / f"trajectory_{tag}.bin")
        write_trajectory_csv(traj, out / f"trajectory_{tag}.csv")
        onset = braking_onset_time(traj)
        report = {**audit, "epsilon": float(eps), "iterations": traj.info["iterations"],
                  "strategy": traj.info["strategy"],
                  "braking_onset_time": None if np.isnan(onset) else onset}
        (out / f"audit_{tag}.json").write_text(dumps_json(report) + "\n")
        outputs += [f"trajectory_{tag}.bin", f"trajectory_{tag}.csv", f"audit_{tag}.json"]
        rows.append([_fmt(float(eps)), _fmt(traj.T), _fmt(traj.cost), traj.info["iterations"],
                     _fmt(audit["saturation_fraction"]), _fmt(audit["max_defect"])])
    _write_csv(out / "sweep.csv", ["epsilon", "T", "cost", "iterations", "saturation_fraction", "max_defect"], rows)
    outputs.append("sweep.csv")
    if failures:
        raise CliError("SOLVER_FAILED", f"{len(failures)} of {len(epsilons)} solves failed",
                       "\n".join(failures))
    return outputs


# --- gen-dataset -------------------------------------------------------------------

def cmd_gen_dataset(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet.dataset import (SAMPLES_PER_TRAJECTORY, DatasetGenerationError, SamplingBounds, Variant,
                                   generate_dataset)

    params = load_params(config.get("params"), base_dir)
    try:
        bounds = SamplingBounds.from_dict(config.get("bounds", {}))
    except (ValueError, TypeError) as err:
        raise CliError("CONFIG_INVALID", f"config field 'bounds': {err}") from err
    variant = config.get("variant", "BASE")
    if variant == "OMEGA_MAX" and bounds.omega_max_range is None:
        raise CliError("CONFIG_INVALID", "config field 'bounds.omega_max_range': required for OMEGA_MAX")
    try:
        ds = generate_dataset(bounds, config["epsilon"], config["n_trajectories"],
                              config.get("samples_per_traj") or SAMPLES_PER_TRAJECTORY[Variant(variant)],
                              variant, seed=sub_seed(seed, "dataset"),
                              params=params, n_segments=config.get("n_segments", 60),
                              wp_arity=config.get("wp_arity", 1), jobs=jobs)
    except DatasetGenerationError as err:
        raise CliError("DATASET_FAILED", str(err)) from err
    name = config.get("output", "dataset.bin")
    ds.save(out / name)
    outputs = [name]
    if config.get("csv", False):
        ds.to_csv(out / (Path(name).stem + ".csv"))
        outputs.append(Path(name).stem + ".csv")
    return outputs


# --- train ---------------------------------------------------------------------------

def cmd_train(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet.dataset import Dataset, split_train_val
    from quadgcnet.gcnet import HIDDEN, TrainConfig, TrainingDivergedError, init_policy, train

    path = _resolve(config["dataset"], base_dir)
    try:
        ds = Dataset.load(path)
    except (OSError, ContainerError) as err:
        raise CliError("IO_ERROR", f"cannot read dataset {path}: {err}") from err
    tr, va = split_train_val(ds, config.get("train_fraction", 0.8), sub_seed(seed, "split"))
    params = dyn.ModelParams.from_dict(ds.provenance["params"]) if "params" in ds.provenance else dyn.default_params()
    net = init_policy(ds.variant, ds.wp_arity, sub_seed(seed, "init"), tuple(config.get("hidden", HIDDEN)),
                      omega_min=params.omega_min, omega_max=params.omega_max)
    tc = TrainConfig(epochs=config.get("epochs", 10), batch_size=config.get("batch_size", 256),
                     lr=config.get("lr", 1e-3), factor=config.get("factor", 0.9),
                     patience=config.get("patience", 6), seed=sub_seed(seed, "shuffle"))
    try:
        net, history = train(net, tr, va if len(va) else None, tc)
    except TrainingDivergedError as err:
        raise CliError("TRAINING_DIVERGED", str(err)) from err
    net.provenance["dataset_file"] = path.name
    name = config.get("output", "network.bin")
    net.save(out / name)
    _write_csv(out / "loss_history.csv", ["epoch", "train_loss", "val_loss", "lr", "control_error_pct"],
               [[h["epoch"], _fmt(h["train_loss"]), _fmt(h["val_loss"]), _fmt(h["lr"]),
                 _fmt(100.0 * np.sqrt(h["val_loss"]))] for h in history])
    return [name, "loss_history.csv"]


# --- evaluate ------------------------------------------------------------------------

def _make_reference(args):
    spec_doc, refine_to = args
    return _solve_task((spec_doc, refine_to))


def cmd_evaluate(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet.dataset import SamplingBounds, Variant, sample_ocp
    from quadgcnet.gcnet import PolicyNet
    from quadgcnet.simulator import SimConfig, evaluate_tracking
    from quadgcnet.trajopt.io import load_trajectory, save_trajectory

    try:
        net = PolicyNet.load(_resolve(config["network"], base_dir))
    except (OSError, ContainerError) as err:
        raise CliError("IO_ERROR", f"cannot read network: {err}") from err
    outputs = []
    if "references" in config:
        refs = [load_trajectory(_resolve(p, base_dir)) for p in config["references"]]
        names = [Path(p).stem for p in config["references"]]
    elif "reference_set" in config:
        rs = config["reference_set"]
        params = load_params(config.get("params"), base_dir)
        if rs.get("omega_max") is not None:
            params = params.replace(omega_max=float(rs["omega_max"]))
        try:
            bounds = SamplingBounds.from_dict(rs.get("bounds", {}))
        except (ValueError, TypeError) as err:
            raise CliError("CONFIG_INVALID", f"config field 'reference_set.bounds': {err}") from err
        variant = Variant.WP_REL if net.variant is Variant.WP_REL else Variant.BASE
        children = np.random.SeedSequence(sub_seed(seed, "references")).spawn(rs["count"])
        specs = [sample_ocp(bounds, rs.get("epsilon", 1.0), c, variant=variant, params=params,
                            n_segments=rs.get("n_segments", 60), wp_arity=max(net.wp_arity, 1)).to_dict()
                 for c in children]
        results = _pool_map(_make_reference, [(s, rs.get("refine_to")) for s in specs], jobs)
        refs, names = [], []
        (out / "references").mkdir(exist_ok=True)
        for i, (traj, err) in enumerate(results):
            if traj is None:
                log.warning("reference %d failed to solve: %s", i, err)
                continue
            save_trajectory(traj, out / "references" / f"ref{i:04d}.bin")
            outputs.append(f"references/ref{i:04d}.bin")
            refs.append(traj)
            names.append(f"ref{i:04d}")
    else:
        raise CliError("CONFIG_INVALID", "config field 'references': give 'references' or 'reference_set'")
    if not refs:
        raise CliError("SOLVER_FAILED", "no reference trajectory available")

    sim = SimConfig.from_dict(config.get("sim", {}))
    inputs = config.get("omega_max_inputs", [None])
    columns, summaries = [], []
    for om in inputs:
        res = evaluate_tracking(net, refs, om, sim, jobs=jobs)
        columns.append(res["errors"])
        summaries.append(res)
    labels = ["own" if om is None else f"{float(om):g}" for om in inputs]
    header = ["reference", "T"] + [f"error_m@{lab}" for lab in labels]
    rows = [[n, _fmt(tr.T)] + [_fmt(c[i]) for c in columns] for i, (n, tr) in enumerate(zip(names, refs))]
    for stat in ("median", "mean", "q25", "q75", "n_diverged"):
        rows.append([f"# {stat}", ""] + [_fmt(s[stat]) for s in summaries])
    _write_csv(out / "metrics.csv", header, rows)
    outputs.append("metrics.csv")
    return outputs


# --- fly -------------------------------------------------------------------------------

def build_track(doc: dict, seed: int):
    from quadgcnet.simulator import Track

    kind = doc.get("kind", "rectangle")
    extra = {k: doc[k] for k in ("threshold", "sphere_radius") if k in doc}
    rule = doc.get("rule", "single")
    if kind == "rectangle":
        return Track.rectangle(doc.get("length", 4.0), doc.get("width", 3.0), rule=rule, **extra)
    if kind == "randomized":
        base = Track.rectangle(doc.get("length", 4.0), doc.get("width", 3.0), rule=rule)
        return Track.randomized(sub_seed(seed, "track"), base, doc.get("side", 1.0), rule=rule, **extra)
    wps = np.asarray(doc.get("waypoints", []), float)
    if len(wps) == 0:
        raise CliError("CONFIG_INVALID", "config field 'track.waypoints': at least one waypoint needed")
    return Track(wps[:, :3], np.deg2rad(wps[:, 3]), rule=rule, cyclic=doc.get("cyclic", True),
                 geometry="waypoints", **extra)


def cmd_fly(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet.gcnet import PolicyNet
    from quadgcnet.simulator import SimConfig, energy_cost_of_flight, saturation_time_fraction, simulate_closed_loop

    try:
        net = PolicyNet.load(_resolve(config["network"], base_dir))
    except (OSError, ContainerError) as err:
        raise CliError("IO_ERROR", f"cannot read network: {err}") from err
    params = load_params(config.get("params"), base_dir)
    track = build_track(config.get("track", {}), seed)
    try:
        sim = SimConfig.from_dict(config.get("sim", {}))
    except (TypeError, ValueError) as err:
        raise CliError("CONFIG_INVALID", f"config field 'sim': {err}") from err
    start = config.get("start", {})
    if "x0" in start:
        x0 = np.asarray(start["x0"], float)
    else:
        x0 = track.start_state(params, start.get("distance", 3.0), start.get("speed", 0.0))
    flight = simulate_closed_loop(x0, net, track, sim, params)
    flight.to_csv(out / "flight.csv")
    summary = {
        "status": flight.status,
        "message": flight.message,
        "duration": float(flight.t[-1]),
        "energy": energy_cost_of_flight(flight),
        "saturation_time_fraction": saturation_time_fraction(flight),
        "lap_times": flight.lap_times,
        "events": flight.events,
        "n_tracker_triggers": sum(e["kind"] == "tracker_trigger" for e in flight.events),
        "final_estimate": float(flight.estimate[-1]),
        "track": {"geometry": track.geometry, "rule": track.rule,
                  "waypoints": track.positions, "headings": track.headings},
    }
    if len(flight.lap_times) >= 2:
        lap = flight.lap(0)
        summary["lap"] = {"energy": energy_cost_of_flight(lap), "time": float(lap.t[-1] - lap.t[0]),
                          "saturation_time_fraction": saturation_time_fraction(lap)}
    (out / "summary.json").write_text(dumps_json(summary) + "\n")
    return ["flight.csv", "summary.json"]


# --- tracker-demo --------------------------------------------------------------------

def cmd_tracker_demo(config: dict, out: Path, seed: int, jobs: int, base_dir: Path) -> list:
    from quadgcnet import peaktracker as pt

    params = load_params(config.get("params"), base_dir)
    kw = {k: config[k] for k in ("window", "p_thresh") if k in config}
    if config.get("scenario", "step") == "step":
        tracker, t_sat = pt.saturation_step_scenario(config.get("ceiling", 11300.0), config.get("command", 12000.0),
                                                     config.get("rate_hz", 500.0), config.get("duration", 0.5),
                                                     config.get("initial"), params, **kw)
        first = tracker.triggers[0]["t"] if tracker.triggers else None
        summary = {"first_saturation": t_sat, "first_trigger": first,
                   "latency": None if first is None or t_sat is None else first - t_sat,
                   "final_estimate": tracker.estimate, "triggers": tracker.triggers}
        pt.write_telemetry_csv(tracker, out / "telemetry.csv")
    else:
        rows, tracker = pt.drift_scenario(config.get("drift_rate", 1.0), config.get("duration", 60.0),
                                          config.get("ceiling", 11300.0), config.get("burst_every", 2.0),
                                          config.get("burst_length", 0.4), config.get("rate_hz", 500.0),
                                          params, **kw)
        _write_csv(out / "telemetry.csv", ["t", "ceiling", "estimate", "saturated"],
                   [[_fmt(r[0]), _fmt(r[1]), _fmt(r[2]), int(r[3])] for r in rows])
        summary = {"max_abs_error": float(np.max(np.abs(rows[:, 2] - rows[:, 1]))),
                   "n_triggers": len(tracker.triggers), "final_estimate": tracker.estimate}
    (out / "summary.json").write_text(dumps_json(summary) + "\n")
    return ["telemetry.csv", "summary.json"]


COMMANDS = {
    "solve": cmd_solve,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "fly": cmd_fly,
    "tracker-demo": cmd_tracker_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadgcnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--schema", action="store_true", help="print the config schema and exit")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(err: CliError) -> int:
    code = EXIT_CODES[err.code]
    detail = err.detail.replace('"', "'").replace("\n", " ")
    print(f'quadgcnet-error code={err.code} exit={code} detail="{detail}"', file=sys.stderr)
    if err.diagnostics:
        print(err.diagnostics, file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.schema:
        print(json.dumps(SCHEMAS[args.command], indent=2, sort_keys=True))
        return 0
    try:
        if args.config is None:
            raise CliError("CONFIG_INVALID", "config field '<root>': --config is required")
        try:
            config = json.loads(args.config.read_text())
        except OSError as err:
            raise CliError("IO_ERROR", f"cannot read config {args.config}: {err}") from err
        except json.JSONDecodeError as err:
            raise CliError("CONFIG_INVALID", f"config field '<root>': invalid JSON ({err})") from err
        if not isinstance(config, dict):
            raise CliError("CONFIG_INVALID", "config field '<root>': must be a JSON object")
        if args.seed is not None:
            config["seed"] = args.seed
        validate_config(args.command, config)
        seed = int(config.get("seed", 0))
        args.out.mkdir(parents=True, exist_ok=True)
        base_dir = args.config.resolve().parent
        try:
            outputs = COMMANDS[args.command](config, args.out, seed, max(1, args.jobs), base_dir)
        except OSError as err:
            raise CliError("IO_ERROR", str(err)) from err
        write_provenance(args.out, args.command, config, seed, outputs)
    except CliError as err:
        return _fail(err)
    return 0


if __name__ == "__main__":
    sys.exit(main())
