import json
import subprocess
import sys

import numpy as np
import pytest

from autopoi import __version__
from autopoi.cli import main, read_config
from autopoi.eda import IterationRecord
from autopoi.individual import Individual
from autopoi.report import (
    RunManifest,
    emit_iteration_csv,
    file_digest,
    format_eval,
    iteration_header,
)
from autopoi.traces import read_sctf


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def traces(tmp_path_factory):
    d = tmp_path_factory.mktemp("traces")
    common = ["--n-samples", 30, "--noise", 1.0, "--leak-value", "7,19"]
    assert run("simulate", "--n-traces", 1500, "--seed", 1, "--out", d / "prof.sctf", *common) == 0
    assert run("simulate", "--n-traces", 40, "--seed", 2, "--key", "fixed", "--out", d / "att.sctf",
               *common) == 0
    assert run("simulate", "--n-traces", 40, "--seed", 3, "--key", "fixed", "--n-devices", 2,
               "--device-index", 2, "--gain-jitter", 0.1, "--out", d / "att2.sctf", *common) == 0
    return d


def test_simulate_outputs(traces):
    ts = read_sctf(traces / "prof.sctf")
    assert ts.n_traces == 1500 and ts.n_samples == 30
    att = read_sctf(traces / "att.sctf")
    assert len({bytes(r) for r in att.field("key")}) == 1
    m = json.loads((traces / "prof.sctf.manifest.json").read_text())
    assert m["subcommand"] == "simulate" and m["seeds"]["seed"] == 1
    assert m["tool_version"] == __version__


def test_simulate_hex_key(tmp_path):
    key = "000102030405060708090a0b0c0d0e0f"
    assert run("simulate", "--n-traces", 3, "--n-samples", 25, "--key", key, "--out", tmp_path / "k.sctf") == 0
    assert bytes(read_sctf(tmp_path / "k.sctf").field("key")[0]).hex() == key


def test_poi_graph(traces, tmp_path):
    out = tmp_path / "g.csv"
    assert run("poi-graph", "--traces", traces / "prof.sctf", "--method", "snr", "--out", out,
               "--top-k", 2) == 0
    raw = out.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "sample_index,value" and len(lines) == 31
    values = np.array([float(line.split(",")[1]) for line in lines[1:]])
    assert set(np.argsort(values)[-2:]) == {7, 19}


def test_attack_ge_curve(traces, tmp_path, capsys):
    out = tmp_path / "ge.csv"
    assert run("attack", "--profile", traces / "prof.sctf", "--attack", traces / "att.sctf",
               "--poi", "7,19", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "n_traces_used,rank" and len(lines) == 41
    assert lines[1].startswith("1,") and lines[-1] == "40,1"
    assert "rank 1" in capsys.readouterr().out
    m = RunManifest.read(str(out) + ".manifest.json")
    assert m.flags["rank_base"] == 1 and set(m.inputs) == {str(traces / "prof.sctf"), str(traces / "att.sctf")}


def test_eda_outputs_and_replay(traces, tmp_path):
    out = tmp_path / "run"
    args = ["eda", "--profile", traces / "prof.sctf", "--attack", traces / "att.sctf",
            "--iterations", 3, "--population", 10, "--seed", 5, "--out", out]
    assert run(*args) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["best.csv", "iteration_000.csv", "iteration_001.csv", "iteration_002.csv",
                     "iteration_003.csv", "manifest.json"]
    rows = (out / "iteration_002.csv").read_text().splitlines()
    assert rows[0] == "Ind,Eval,n_POI,ge" and len(rows) == 11
    ev = rows[1].split(",")[1]
    assert ev == format_eval(float(ev))
    m = RunManifest.read(out)
    assert m.flags["ge_aggregation"] == "product" and m.flags["eval_n_samples"] == 30
    assert m.config["seed"] == 5 and m.config["population"] == 10

    again = tmp_path / "replayed"
    assert run("replay", out / "manifest.json", "--out", again) == 0
    for name in names:
        if name != "manifest.json":
            assert file_digest(out / name) == file_digest(again / name), name


def test_eda_multi_device_columns(traces, tmp_path):
    out = tmp_path / "multi"
    assert run("eda", "--profile", traces / "prof.sctf",
               "--attack", f"{traces / 'att.sctf'},{traces / 'att2.sctf'}",
               "--iterations", 1, "--population", 6, "--out", out) == 0
    header = (out / "iteration_001.csv").read_text().splitlines()[0]
    assert header == "Ind,Eval,n_POI,ge_D1,ge_D2"


def test_doe_outputs(traces, tmp_path):
    out = tmp_path / "doe"
    assert run("doe", "--profile", traces / "prof.sctf", "--attack", traces / "att.sctf",
               "--factor-b", "eda.n_iterations:1:2", "--factor-c", "eda.population_size:4:6",
               "--out", out) == 0
    runs = (out / "doe_runs.csv").read_text().splitlines()
    assert runs[0] == "exp,A,B,C,n_POI,ge,Eval" and len(runs) == 9
    assert runs[1].split(",")[:4] == ["1", "1.0", "1.0", "4.0"]
    effects = (out / "doe_effects.csv").read_text().splitlines()
    assert effects[0] == "effect,value"
    assert [line.split(",")[0] for line in effects[1:]] == ["A", "B", "C", "AB", "AC", "BC", "ABC"]


def test_config_file_and_precedence(traces, tmp_path, monkeypatch):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""# search settings
[inputs]
profile = {traces / 'prof.sctf'}
attack = {traces / 'att.sctf'}
[eda]
population = 8   # small
iterations = 1
[run]
seed = 11
""")
    assert run("eda", "--config", cfg, "--out", tmp_path / "a") == 0
    m = RunManifest.read(tmp_path / "a")
    assert m.config["population"] == 8 and m.config["seed"] == 11
    assert run("eda", "--config", cfg, "--seed", 12, "--out", tmp_path / "b") == 0
    assert RunManifest.read(tmp_path / "b").config["seed"] == 12
    monkeypatch.setenv("SCA_SEED", "21")
    cfg.write_text(cfg.read_text().replace("seed = 11", ""))
    assert run("eda", "--config", cfg, "--out", tmp_path / "c") == 0
    assert RunManifest.read(tmp_path / "c").config["seed"] == 21


@pytest.mark.parametrize("text", ["[eda]\nno_such_key = 1\n", "[nowhere]\nx = 1\n", "not an ini"])
def test_bad_config_is_usage_error(traces, tmp_path, capsys, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    code = run("eda", "--profile", traces / "prof.sctf", "--attack", traces / "att.sctf",
               "--config", cfg, "--out", tmp_path / "x")
    assert code == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_key_named(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[eda]\npopulaton = 4\n")
    assert run("eda", "--config", cfg, "--profile", "p", "--attack", "a", "--out", tmp_path) == 1
    assert "populaton" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["eda", "--out", "x"],
    ["simulate", "--out", "x", "--impl", "bogus"],
    ["attack", "--profile", "p", "--attack", "a", "--poi", "one", "--out", "x"],
    ["nosuchcommand"],
    [],
])
def test_usage_errors(argv):
    assert run(*argv) == 1


def test_data_errors(traces, tmp_path):
    assert run("attack", "--profile", tmp_path / "missing.sctf", "--attack", traces / "att.sctf",
               "--poi", "7", "--out", tmp_path / "ge.csv") == 2
    bad = tmp_path / "bad.sctf"
    bad.write_bytes(b"HDF5" + bytes(40))
    assert run("poi-graph", "--traces", bad, "--out", tmp_path / "g.csv") == 2
    # POI outside the trace
    assert run("attack", "--profile", traces / "prof.sctf", "--attack", traces / "att.sctf",
               "--poi", "99", "--out", tmp_path / "ge.csv") == 2
    assert run("replay", tmp_path / "nothing.json") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "autopoi", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout


def test_read_config_missing(tmp_path):
    from autopoi.cli import UsageError

    with pytest.raises(UsageError):
        read_config(tmp_path / "none.ini")


def test_iteration_csv_format(tmp_path):
    inds = []
    for ev, ge in ((-4.84375e-5, (1, 1)), (-0.5078125, (13, 2))):
        ind = Individual([1, 0, 1])
        ind.cached_eval, ind.cached_ge = ev, ge
        inds.append(ind)
    rec = IterationRecord(4, tuple(inds), np.full(3, 0.5))
    (path,) = emit_iteration_csv([rec], tmp_path)
    assert path.name == "iteration_004.csv"
    assert path.read_bytes() == b"Ind,Eval,n_POI,ge_D1,ge_D2\n1,-4.84375E-05,2,1,1\n2,-5.07812E-01,2,13,2\n"
    assert iteration_header(1) == ["Ind", "Eval", "n_POI", "ge"]
