import json
import os
import subprocess
import sys

import pytest

from fpp1d import cli
from fpp1d.fpp_core import CertificationError

SMALL = ["--graph", "tube:2,2", "--dist", "exp:1", "--increments", "300"]


def _run(args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "fpp1d.cli", *args], capture_output=True, text=True, env={**os.environ, **(env or {})}
    )


def test_estimate_outputs(tmp_path):
    rc = cli.main(["estimate", *SMALL, "--out", str(tmp_path)])
    assert rc == 0
    d = json.loads((tmp_path / "estimate.json").read_text())
    assert d["all_certified"] and 0.6 < d["constants"]["mu"] < 0.8
    assert d["config"]["graph"] == "tube:2,2" and "out" not in d["config"]
    assert (tmp_path / "estimate_samples.csv").exists()


def test_verify_csv_identical_across_thread_counts(tmp_path):
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / threads
        args = ["verify", "lln", *SMALL, "--n", "60", "--replicas", "30", "--levels", "15,30,60", "--out", str(out), "--no-svg"]
        p = _run(args, {"FPP_THREADS": threads})
        assert p.returncode in (0, 1), p.stderr
        outs.append((out / "verify_lln_samples.csv").read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "args",
    [
        ["estimate", "--graph", "tube:0,2"],
        ["estimate", "--dist", "gamma:2"],
        ["estimate", "--params", '{"t_lo": 2, "t_hi": 1}'],
        ["couple", "discrete", "--graph", "cylinder:3,2", "--dist", "disc:1@0.5,2@0.5"],
    ],
)
def test_schema_errors_exit_2(tmp_path, args):
    assert cli.main([*args, "--out", str(tmp_path)]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["bogus"])
    assert exc.value.code == 2


def test_certification_failure_exit_3(tmp_path, monkeypatch):
    def boom(cfg):
        raise CertificationError("travel time not certified", (0, 1))

    monkeypatch.setitem(cli._RUNNERS, "estimate", boom)
    assert cli.run({"kind": "estimate", "out": str(tmp_path)}) == 3


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"graph": "line", "dist": "unif:0,1", "increments": 200, "seed": 4}))
    rc = cli.main(["estimate", "--config", str(conf), "--seed", "5", "--out", str(tmp_path)])
    assert rc == 0
    d = json.loads((tmp_path / "estimate.json").read_text())
    assert d["config"]["seed"] == 5 and d["config"]["graph"] == "line"
    conf.write_text(json.dumps({"nonsense": 1}))
    assert cli.main(["estimate", "--config", str(conf), "--out", str(tmp_path)]) == 2


def test_tree_demo(tmp_path):
    rc = cli.main(["tree-demo", "--replicas", "1000", "--out", str(tmp_path)])
    d = json.loads((tmp_path / "tree_demo.json").read_text())
    assert rc == 0 and d["pass"]
    assert abs(d["mean_W"] - 3) < 0.3
    assert (tmp_path / "tree_demo_W.csv").read_text().startswith("replica,W")
