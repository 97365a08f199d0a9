import io
import json
import subprocess
import sys

import pytest

from markovsprt.chain import derive_seed, save_chain, toy_chains
from markovsprt.cli import main


@pytest.fixture
def chains(tmp_path):
    P, Q = toy_chains(0.5)
    paths = {}
    for name, M in (("P", P), ("Q", Q), ("I", [[1.0, 0.0], [0.0, 1.0]]),
                    ("R", [[0.2, 0.3, 0.5]] * 3)):
        p = tmp_path / f"{name}.json"
        save_chain(M, p)
        paths[name] = str(p)
    return paths


def run(*args, stdin=None):
    return subprocess.run([sys.executable, "-m", "markovsprt", *args], input=stdin,
                          capture_output=True, text=True)


def test_simulate(chains, capsys):
    assert main(["simulate", "--chain", chains["P"], "--x0", "0", "--len", "5",
                 "--seed", "7"]) == 0
    out, err = capsys.readouterr()
    lines = out.split()
    assert len(lines) == 5 and all(x in ("0", "1") for x in lines)
    assert json.loads(err.splitlines()[0])["seed"] == 7


def test_simulate_identity(chains, capsys):
    main(["simulate", "--chain", chains["I"], "--x0", "1", "--len", "4", "--seed", "1"])
    assert capsys.readouterr().out.split() == ["1"] * 4


def test_simulate_echoes_entropy_seed(chains, capsys):
    main(["simulate", "--chain", chains["P"], "--len", "2"])
    assert isinstance(json.loads(capsys.readouterr().err)["seed"], int)


def test_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--chain", str(bad), "--len", "3"]) == 2
    assert "error" in capsys.readouterr().err


def test_invalid_chain(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rows": [[1.0, 0.1], [0.5, 0.5]]}))
    assert main(["simulate", "--chain", str(bad), "--len", "3"]) == 2


def feed(argv, text):
    saved = sys.stdin
    sys.stdin = io.StringIO(text)
    try:
        return main(argv)
    finally:
        sys.stdin = saved


def test_pipe_null_mostly_clean(chains, capsys):
    codes = []
    for r in range(40):
        main(["simulate", "--chain", chains["P"], "--len", "5000", "--seed",
              str(derive_seed(3, r))])
        stream = capsys.readouterr().out
        codes.append(feed(["test", "--chain", chains["P"]], stream))
        capsys.readouterr()
    assert set(codes) <= {0, 3}
    assert codes.count(0) >= 36


def test_pipe_alternative_alerts(chains, tmp_path):
    sim = run("simulate", "--chain", chains["Q"], "--len", "20000", "--seed", "4")
    res = run("test", "--chain", chains["P"], stdin=sim.stdout)
    assert res.returncode == 3
    last = json.loads(res.stdout.splitlines()[-1])
    assert last["decision"] == "reject" and last["tau"] == last["t"]
    assert len(res.stdout.splitlines()) == last["t"]
    # the stream file path behaves like stdin
    f = tmp_path / "s.txt"
    f.write_text(sim.stdout)
    assert run("test", "--chain", chains["P"], "--input", str(f)).stdout == res.stdout


def test_stream_errors(chains):
    for text in ("0\n1\n7\n", "0\nabc\n", "", "-1\n"):
        assert feed(["test", "--chain", chains["P"]], text) == 4


def test_test_config_errors(chains):
    assert main(["test", "--chain", chains["P"], "--alpha", "1.5"]) == 2
    assert main(["test", "--chain", chains["P"], "--estimator", "bogus"]) == 2
    assert main(["test", "--chain", chains["P"], "--input", "/no/such/file"]) == 2


def test_max_samples_and_records(chains, capsys):
    assert feed(["test", "--chain", chains["P"], "--max-samples", "5"],
                "0\n" + "0\n1\n" * 10) == 0
    recs = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [r["t"] for r in recs] == [1, 2, 3, 4, 5]
    assert all(set(r) == {"t", "log_lr", "decision"} for r in recs)


def test_divergence(chains, capsys):
    assert main(["divergence", chains["Q"], chains["P"]]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["d_m_kl"] == pytest.approx(0.04155, abs=1e-4)
    assert out["markov_distance"] == pytest.approx(0.4)
    assert out["max_lr"] == pytest.approx(9 / 7)
    assert main(["divergence", chains["P"], chains["P"]]) == 0
    assert json.loads(capsys.readouterr().out) == {"d_m_kl": 0.0, "markov_distance": 0.0,
                                                   "max_lr": 1.0}
    assert main(["divergence", chains["P"], chains["R"]]) == 2


def test_calibrate(chains, tmp_path, capsys):
    out = tmp_path / "cfg.json"
    args = ["calibrate", "--chain", chains["P"], "--len", "200", "--trials", "100"]
    assert main(args) == 2
    assert main(args + ["--seed", "1", "--out", str(out)]) == 0
    assert main(args + ["--seed", "1"]) == 0
    assert capsys.readouterr().out.strip() == out.read_text().strip()


def test_experiment(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "adaptivity", "grid": [1, 2], "sample_sizes": [200],
                                "trials": 5, "calibration_trials": 50, "horizon": 5000}))
    out = tmp_path / "out"
    assert main(["experiment", "--spec", str(spec), "--out-dir", str(out)]) == 2
    assert main(["experiment", "--spec", str(spec), "--seed", "3", "--out-dir", str(out)]) == 0
    files = sorted(p.name for p in out.iterdir())
    assert len(files) == 2 and files[0].startswith("adaptivity_")
    csv_text = (out / files[0]).read_text().splitlines()
    assert len(csv_text) == 1 + 5 * 2 + 5 * 2
    assert "sequential|k=1|kt" in capsys.readouterr().out


def test_experiment_bad_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "type1", "seed": 1, "colour": "red"}))
    assert main(["experiment", "--spec", str(spec)]) == 2
    spec.write_text("[1, 2]")
    assert main(["experiment", "--spec", str(spec)]) == 2
