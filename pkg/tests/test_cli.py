import csv
import json

import numpy as np
import pytest

from quadgcnet.cli import EXIT_CODES, main, sub_seed
from quadgcnet.dataset import Variant
from quadgcnet.gcnet import init_policy


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


def run(tmp_path, command, doc, out, *extra):
    cfg = write_config(tmp_path / f"{command}-{out}.json", doc)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_sub_seeds_are_named_and_stable():
    assert sub_seed(0, "init") == sub_seed(0, "init")
    assert len({sub_seed(0, "init"), sub_seed(0, "shuffle"), sub_seed(1, "init")}) == 3


def test_landing_solve_gives_identical_rotor_columns(tmp_path):
    assert run(tmp_path, "solve", {"problem": "landing", "epsilon": 0.0}, "landing") == 0
    rows = read_csv(tmp_path / "landing" / "trajectory_eps0.000.csv")
    u = np.array([[float(v) for v in r[20:24]] for r in rows[1:]])
    assert rows[0][20:24] == ["u1", "u2", "u3", "u4"]
    assert np.max(np.abs(u - u[:, :1])) < 1e-4
    audit = json.loads((tmp_path / "landing" / "audit_eps0.000.json").read_text())
    assert audit["saturation_fraction"] >= 0.95 and audit["max_defect"] < 1e-6
    prov = json.loads((tmp_path / "landing" / "provenance.json").read_text())
    assert {"config_sha256", "seed", "outputs"} <= set(prov)


def test_epsilon_sweep_final_time_decreases(tmp_path):
    doc = {"problem": "sampled", "seed": 3, "epsilons": [1.0, 0.5, 0.0]}
    assert run(tmp_path, "solve", doc, "sweep") == 0
    rows = read_csv(tmp_path / "sweep" / "sweep.csv")
    assert rows[0][:2] == ["epsilon", "T"]
    T = [float(r[1]) for r in rows[1:]]
    assert len(T) == 3 and T[0] > T[1] > T[2]


def test_malformed_config_names_the_field(tmp_path, capsys):
    code = run(tmp_path, "solve", {"problem": "landing", "epsilon": "zero"}, "bad")
    err = capsys.readouterr().err
    assert code == EXIT_CODES["CONFIG_INVALID"] == 2
    line = err.splitlines()[0]
    assert line.startswith("quadgcnet-error code=CONFIG_INVALID exit=2 ")
    assert "'epsilon'" in line


def test_unknown_field_and_missing_file_are_reported(tmp_path, capsys):
    assert run(tmp_path, "train", {"dataset": "nowhere.bin", "epochs": 1}, "t") == EXIT_CODES["IO_ERROR"]
    assert run(tmp_path, "train", {"dataset": "x.bin", "epoch": 1}, "t") == EXIT_CODES["CONFIG_INVALID"]
    assert "epoch" in capsys.readouterr().err


def test_schema_is_printed(capsys):
    assert main(["fly", "--schema"]) == 0
    assert "network" in json.loads(capsys.readouterr().out)["properties"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-dataset -> train -> fly, each run twice with identical configs."""
    root = tmp_path_factory.mktemp("pipeline")
    gen = {"seed": 5, "variant": "BASE", "epsilon": 1.0, "n_trajectories": 3}
    train = {"seed": 5, "dataset": str(root / "gen-a" / "dataset.bin"), "epochs": 3, "batch_size": 64}
    fly = {"seed": 5, "network": str(root / "train-a" / "network.bin"),
           "track": {"kind": "rectangle", "rule": "single"}, "sim": {"max_time": 1.0}}
    codes = []
    for tag in ("a", "b"):
        codes.append(run(root, "gen-dataset", gen, f"gen-{tag}"))
        codes.append(run(root, "train", train, f"train-{tag}"))
        codes.append(run(root, "fly", fly, f"fly-{tag}"))
    return root, codes


@pytest.mark.parametrize("step,files", [("gen", ["dataset.bin", "provenance.json"]),
                                        ("train", ["network.bin", "loss_history.csv", "provenance.json"]),
                                        ("fly", ["flight.csv", "summary.json", "provenance.json"])])
def test_reruns_are_byte_identical(pipeline, step, files):
    root, codes = pipeline
    assert codes == [0] * 6
    for name in files:
        assert (root / f"{step}-a" / name).read_bytes() == (root / f"{step}-b" / name).read_bytes(), name


def test_seed_flag_overrides_config(pipeline):
    root, _ = pipeline
    cfg = write_config(root / "gen-c.json", {"seed": 5, "variant": "BASE", "epsilon": 1.0, "n_trajectories": 1})
    assert main(["gen-dataset", "--config", str(cfg), "--out", str(root / "gen-c"), "--seed", "6"]) == 0
    assert json.loads((root / "gen-c" / "provenance.json").read_text())["seed"] == 6


def test_evaluate_three_references(pipeline):
    root, _ = pipeline
    doc = {"seed": 0, "network": str(root / "train-a" / "network.bin"),
           "reference_set": {"count": 3, "epsilon": 1.0}}
    assert run(root, "evaluate", doc, "eval") == 0
    rows = read_csv(root / "eval" / "metrics.csv")
    body = [r for r in rows[1:] if not r[0].startswith("#")]
    footer = [r[0] for r in rows[1:] if r[0].startswith("#")]
    assert len(body) == 3
    assert footer == ["# median", "# mean", "# q25", "# q75", "# n_diverged"]


def test_fly_with_tracker_corrects_overestimate(tmp_path):
    # stub adaptive network pinned at full throttle, so the rotors hit the ceiling at once
    net = init_policy(Variant.OMEGA_MAX, seed=0)
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 10.0
    net.save(tmp_path / "full.bin")
    doc = {"network": str(tmp_path / "full.bin"),
           "track": {"kind": "waypoints", "waypoints": [[0, 0, 0, 45]], "rule": "none", "cyclic": False},
           "start": {"distance": 0.0},
           "sim": {"max_time": 0.5, "ceiling": 11100, "use_tracker": True, "tracker_initial": 11800}}
    assert run(tmp_path, "fly", doc, "fly") == 0
    summary = json.loads((tmp_path / "fly" / "summary.json").read_text())
    assert summary["n_tracker_triggers"] == 1
    assert abs(summary["final_estimate"] - 11100) <= 1.0
    rows = read_csv(tmp_path / "fly" / "flight.csv")
    est = [float(r[-1]) for r in rows[1:]]
    assert est[0] == 11800.0


def test_tracker_demo_step(tmp_path):
    doc = {"scenario": "step", "ceiling": 11300, "command": 12000, "rate_hz": 500, "duration": 0.5}
    assert run(tmp_path, "tracker-demo", doc, "trk") == 0
    summary = json.loads((tmp_path / "trk" / "summary.json").read_text())
    assert summary["latency"] <= 0.13
    assert summary["final_estimate"] == pytest.approx(11300.0)
