import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from entqkd import cli
from entqkd.scenario import load_config, load_preset
from entqkd.tags import TagStream, write_tags
from entqkd.timesync import COINCIDENCE_HEADER, DRIFT_HEADER


def run_cli(*argv):
    buf = io.StringIO()
    parser = cli.build_parser()
    args = parser.parse_args([str(a) for a in argv])
    try:
        code = args.func(args, out=buf)
    except cli.UsageError:
        code = cli.EXIT_USAGE
    return code, buf.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


# -- predict -----------------------------------------------------------------------


def test_predict_presets():
    code, out = run_cli("predict", "--scenario", "all")
    assert code == 0
    got = {r["scenario"]: float(r["secure_rate_bits_per_s"]) for r in rows(out)}
    for name, ref in (("at-alice", 24.0), ("asymmetric", 0.6), ("middle", 0.02)):
        assert ref / 2 <= got[name] <= ref * 2
    assert out.splitlines()[0] == ",".join(cli.PREDICT_COLUMNS)


def test_predict_zero_link_equals_three_db_point():
    # the curve describes the bare source, without the preset's feed-fibre depolarisation
    _, out = run_cli("predict", "--scenario", "at-alice", "--bob-arm-db", "0", "--set", "link_visibility=1")
    _, curve = run_cli("curve", "--placement", "at-alice", "--range", "3:3")
    assert float(rows(out)[0]["secure_rate_bits_per_s"]) == float(rows(curve)[0]["secure_rate_bits_per_s"])


def test_predict_set_override():
    _, base = run_cli("predict", "--scenario", "at-alice")
    _, worse = run_cli("predict", "--scenario", "at-alice", "--set", "v_sys=0.9")
    assert float(rows(worse)[0]["qber"]) > float(rows(base)[0]["qber"])


def test_predict_unknown_preset_exit_2():
    assert cli.main(["predict", "--scenario", "nowhere"]) == cli.EXIT_USAGE


def test_predict_from_config_file(tmp_path):
    path = tmp_path / "mine.cfg"
    load_preset("middle").replace(name="mine").save(path)
    _, out = run_cli("--config", path, "predict")
    assert rows(out)[0]["scenario"] == "mine"


# -- curve -------------------------------------------------------------------------


def test_curve_starts_at_three_db():
    code, out = run_cli("curve", "--placement", "at-alice", "--range", "3:80", "--step", "1")
    r = rows(out)
    assert code == 0 and float(r[0]["attenuation_db"]) == 3.0 and len(r) == 78
    assert out.splitlines()[0] == cli.CURVE_HEADER


def test_curve_asymmetric_uses_fixed_alice_arm():
    _, out = run_cli("curve", "--placement", "asymmetric", "--range", "0:40")
    r = rows(out)
    assert float(r[0]["attenuation_db"]) == 20.0
    # the 20 dB point has a lossless link arm
    at20 = float(r[0]["coincidence_rate_per_s"])
    assert at20 == pytest.approx(load_preset("asymmetric").local_pair_rate_hz * 0.01, rel=1e-6)


def test_curve_all_writes_three_files(tmp_path):
    code, _ = run_cli("curve", "--all", "--range", "20:75", "--step", "5", "--out", tmp_path)
    assert code == 0
    for p in ("at-alice", "asymmetric", "middle"):
        assert header(tmp_path / f"curve_{p}.csv") == cli.CURVE_HEADER.split(",")


@pytest.mark.parametrize("argv", [["--range", "10:5"], ["--range", "abc"], ["--step", "0"]])
def test_curve_usage_errors(argv):
    assert cli.main(["curve", *argv]) == cli.EXIT_USAGE


# -- simulate / sync / distill ----------------------------------------------------------


def test_simulate_manifest_reproducible(tmp_path):
    digests = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert run_cli("simulate", "--scenario", "at-alice", "--duration", "1", "--seed", "9", "--out", d)[0] == 0
        man = json.loads((d / "manifest.json").read_text())
        assert man["seed"] == 9
        digests.append(man["outputs"])
    assert digests[0] == digests[1]
    d = tmp_path / "r2"
    run_cli("simulate", "--scenario", "at-alice", "--duration", "1", "--seed", "10", "--out", d)
    assert json.loads((d / "manifest.json").read_text())["outputs"] != digests[0]


def test_simulate_writes_round_trippable_config(tmp_path):
    run_cli("simulate", "--scenario", "middle", "--duration", "5", "--out", tmp_path)
    cfg = load_config(tmp_path / "scenario.cfg")
    assert cfg == load_preset("middle").replace(duration_s=5.0)
    assert header(tmp_path / "truth.csv") == ["pair_id", "alice_index", "bob_index"]


def test_simulate_middle_truth_count(tmp_path):
    run_cli("simulate", "--scenario", "middle", "--duration", "600", "--seed", "4", "--out", tmp_path)
    n = sum(1 for _ in open(tmp_path / "truth.csv")) - 1
    assert abs(n - 0.071 * 600) < 3 * math.sqrt(0.071 * 600)


def test_simulate_zero_duration_exit_2(tmp_path):
    assert cli.main(["simulate", "--scenario", "at-alice", "--duration", "0", "--out", str(tmp_path)]) == 2


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    code, _ = run_cli("simulate", "--scenario", "at-alice", "--duration", "20", "--seed", "3", "--out", d)
    assert code == 0
    return d


def test_sync_outputs(run_dir, tmp_path):
    code, msg = run_cli("sync", run_dir, "--block-s", "5", "--out", tmp_path)
    assert code == 0 and "4/4 blocks locked" in msg
    assert header(tmp_path / "drift.csv") == DRIFT_HEADER
    assert header(tmp_path / "coincidences.csv") == COINCIDENCE_HEADER
    drift = np.loadtxt(tmp_path / "drift.csv", delimiter=",", skiprows=1)
    assert np.all(np.abs(drift[:, 1] - 2300.0) < 10)


def test_sync_accepts_two_files(run_dir, tmp_path):
    code, _ = run_cli("sync", run_dir / "alice.qtt", run_dir / "bob.qtt", "--block-s", "10", "--out", tmp_path)
    assert code == 0


def test_sync_no_lock_exit_3(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("alice", "bob"):
        t = np.sort(rng.integers(0, 2 * 10**12, 20_000))
        write_tags(tmp_path / f"{name}.qtt", TagStream(t, rng.integers(0, 2, t.size), rng.integers(0, 2, t.size)))
    assert cli.main(["sync", str(tmp_path), "--out", str(tmp_path / "o")]) == cli.EXIT_NOLOCK


def test_distill_outputs(run_dir, tmp_path):
    code, out = run_cli("distill", run_dir, "--scenario", "at-alice", "--seed", "1", "--out", tmp_path)
    assert code == 0
    report = dict(line.split(" = ", 1) for line in (tmp_path / "report.txt").read_text().splitlines())
    assert report["status"] == "ok"
    assert abs(float(report["measured_qber"]) - 0.069) < 0.025
    assert (tmp_path / "alice_secure.key").read_bytes() == (tmp_path / "bob_secure.key").read_bytes()
    assert header(tmp_path / "sifted_rate.csv") == ["time_s", "sifted_rate_bits_per_s"]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["keys_identical"] is True


def test_distill_reproducible(run_dir, tmp_path):
    for k in range(2):
        run_cli("distill", run_dir, "--scenario", "at-alice", "--seed", "1", "--out", tmp_path / str(k))
    for name in ("report.txt", "transcript.bin", "bob_secure.key", "sifted_rate.csv"):
        assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()


def test_distill_identical_toy_input_zero_qber(tmp_path):
    rng = np.random.default_rng(1)
    n = 6000
    t = np.sort(rng.choice(10**12, n, replace=False)).astype(np.int64) + 10**6
    basis = rng.integers(0, 2, n)
    bits = rng.integers(0, 2, n)
    write_tags(tmp_path / "alice.qtt", TagStream(t, bits, basis, 10**6))
    write_tags(tmp_path / "bob.qtt", TagStream(t, 1 - bits, basis, 10**6))
    code, _ = run_cli("distill", tmp_path, "--block-s", "1", "--out", tmp_path / "o")
    assert code == 0
    report = (tmp_path / "o" / "report.txt").read_text()
    assert "estimated_qber = 0.000000" in report and "measured_qber = 0.000000" in report


def test_distill_above_cutoff_exit_4(tmp_path):
    run_cli("simulate", "--scenario", "at-alice", "--set", "v_sys=0.75", "--duration", "20", "--out", tmp_path)
    code = cli.main(["distill", str(tmp_path), "--scenario", "at-alice", "--out", str(tmp_path)])
    assert code == cli.EXIT_CUTOFF
    assert "status = above-cutoff" in (tmp_path / "report.txt").read_text()


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "entqkd.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("predict", "curve", "simulate", "sync", "distill"):
        assert cmd in res.stdout


def test_preset_round_trip_via_text():
    for name in ("at-alice", "asymmetric", "middle"):
        cfg = load_preset(name)
        assert type(cfg).from_text(cfg.to_text()) == cfg
