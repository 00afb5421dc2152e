import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from ultradiff import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = """
[tree]
mode = "compact"
degrees = 2
window = [0, 5]

[walk]
kind = "FT41"
p = "1/3"
seed = 5
trajectories = 2000
resolution = 3

[experiment]
tasks = ["tree_info", "spectrum", "heat", "walk_exact", "walk_simulate"]
t = 1
tolerance = 4
"""


def write_cfg(tmp_path, text, name="x.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_ft41_config(tmp_path, capsys):
    out = tmp_path / "ft41"
    code, _, err = run(["run", str(CONFIGS / "ft41.cfg"), "--out", str(out)], capsys)
    assert code == 0, err
    assert (out / "converge.csv").read_text().startswith("theorem,n,k_or_char")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["seed"] == 20240601
    assert {"converge.csv", "spectrum.csv", "first_passage.csv"} <= set(manifest["files"])


def test_small_run_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    code, _, err = run(["run", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0, err
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"tree.csv", "spectrum.csv", "heat.csv", "transform.csv", "first_passage.csv",
            "hitting.csv", "manifest.json"} <= names


def test_degree_one_is_schema_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("degrees = 2", "degrees = [1, 2, 2, 2, 2]"))
    code, _, err = run(["tree", "info", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "q_k >= 2" in err


def test_unknown_key_is_schema_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("[tree]", "[tree]\ncolour = 3"))
    code, _, err = run(["spectrum", cfg], capsys)
    assert code == 2 and "colour" in err


def test_size_cap_exit(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("window = [0, 5]", "window = [0, 20]"))
    code, _, err = run(["walk", "exact", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 3 and "2^20" in err


def test_spectrum_prints_powers(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    code, out, _ = run(["spectrum", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    rows = (tmp_path / "o" / "spectrum.csv").read_text().splitlines()
    assert rows[1:] == [f"{k},{2 ** k}" for k in range(5)]
    assert "4,16" in out


def test_walk_exact_green_column(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    code, _, _ = run(["walk", "exact", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    lines = (tmp_path / "o" / "first_passage.csv").read_text().splitlines()
    assert lines[0] == "vertex,F_up,F_down,G_self,G_to_root"
    root = lines[1].split(",")
    assert root[0] == "0:-" and root[-1] == "2"
    level3 = [ln for ln in lines if ln.startswith("3:")]
    assert all(ln.endswith(",1/4") for ln in level3)


def test_heat_equilibrium(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    code, _, _ = run(["heat", cfg, "--t", "1e9", "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    rows = (tmp_path / "o" / "heat.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[1]) == pytest.approx(1, abs=1e-12) for r in rows)


def test_converge_argument_order(tmp_path, capsys):
    cfg = str(CONFIGS / "ft43.cfg")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["converge", "FT43", cfg, "--out", str(a)], capsys)[0] == 0
    assert run(["converge", cfg, "FT43", "--out", str(b)], capsys)[0] == 0
    assert (a / "converge.csv").read_bytes() == (b / "converge.csv").read_bytes()


def test_assertion_failure_exit(tmp_path, capsys):
    code, _, err = run(["converge", "FT41", str(CONFIGS / "ft41.cfg"), "--tolerance", "1e-9",
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "assertion failed" in err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "assertion failed"


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    for d in ("a", "b"):
        assert run(["run", cfg, "--out", str(tmp_path / d)], capsys)[0] == 0
    for name in ("hitting.csv", "first_passage.csv", "heat.csv", "spectrum.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_thread_count_does_not_change_results(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    outputs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        env = dict(os.environ, ULTRADIFF_THREADS=threads)
        subprocess.run([sys.executable, "-m", "ultradiff", "walk", "simulate", cfg, "--out", str(out)],
                       check=True, env=env, capture_output=True)
        outputs.append((out / "hitting.csv").read_bytes())
    assert outputs[0] == outputs[1]


def test_seed_override_changes_samples(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    run(["walk", "simulate", cfg, "--out", str(tmp_path / "a")], capsys)
    run(["walk", "simulate", cfg, "--seed", "6", "--out", str(tmp_path / "b")], capsys)
    assert (tmp_path / "a" / "hitting.csv").read_bytes() != (tmp_path / "b" / "hitting.csv").read_bytes()
