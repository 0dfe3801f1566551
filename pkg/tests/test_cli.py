import csv
import io
import json
import subprocess
import sys
from pathlib import Path

from nicis.cli import main


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def only_dir(tmp_path, prefix):
    (d,) = [p for p in tmp_path.iterdir() if p.name.startswith(prefix)]
    return d


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_cf_golden_quotients(tmp_path):
    code = run(tmp_path, "cf", "--alpha", "golden", "--depth", "10")
    assert code == 0
    table = rows(only_dir(tmp_path, "cf-") / "convergents.csv")
    assert [r["a_k"] for r in table] == ["1"] * 10


def test_cf_liouville_witness(tmp_path):
    code = run(tmp_path, "cf", "--alpha", "series:factorial10", "--liouville-tau", "3")
    assert code == 0
    summary = json.loads((only_dir(tmp_path, "cf-") / "summary.json").read_text())
    assert summary["liouville_witness"]["q"] in (10 ** 6, str(10 ** 6))


def test_cf_bad_alpha_exit_2(tmp_path):
    assert main(["cf", "--alpha", "bogus", "--out", str(tmp_path)]) == 2


def test_no_command_exit_2():
    assert main([]) == 2


def test_bad_flag_exit_2(tmp_path):
    assert main(["cf", "--depth", "ten", "--out", str(tmp_path)]) == 2


def test_config_requires_seed(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("alpha: golden\n")
    assert main(["cf", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("seed: 3\nalpha: golden\ncf:\n  depth: 5\n")
    assert main(["cf", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    meta = json.loads((only_dir(tmp_path, "cf-") / "run.json").read_text())
    assert meta["config"]["depth"] == 5 and meta["config"]["seed"] == 3


def test_cli_flag_beats_config(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("seed: 1\ncf:\n  depth: 5\n")
    main(["cf", "--config", str(cfg), "--depth", "7", "--out", str(tmp_path)])
    meta = json.loads((only_dir(tmp_path, "cf-") / "run.json").read_text())
    assert meta["config"]["depth"] == 7


def test_skew_dk(tmp_path):
    code = run(tmp_path, "skew", "dk", "--alpha", "golden", "--terms", "6", "--grid", "20000")
    table = rows(only_dir(tmp_path, "skew-dk-") / "dk_profile.csv")
    sups = [float(r["sup_abs_phi_q"]) for r in table]
    assert code == 0 and len(sups) == 6
    assert all(a > b for a, b in zip(sups[1:], sups[2:]))


def test_skew_residuals(tmp_path):
    code = run(tmp_path, "skew", "residuals", "--terms", "6", "--samples", "2000",
                  "--starts", "10", "--steps", "200")
    table = rows(only_dir(tmp_path, "skew-residuals-") / "residuals.csv")
    assert code == 0
    assert {r["suite"] for r in table} >= {"mean", "symmetry", "involution", "coboundary"}
    assert all(r["pass"] in ("True", "true", "1") for r in table)


def test_skew_classify_and_orbit(tmp_path):
    code = run(tmp_path, "skew", "classify", "--samples", "20", "--horizon", "10000")
    assert code == 0
    verdicts = rows(only_dir(tmp_path, "skew-classify-") / "verdicts.csv")
    assert len(verdicts) == 20
    code = run(tmp_path, "skew", "orbit", "--steps", "100", "--stride", "10")
    assert code == 0
    assert len(rows(only_dir(tmp_path, "skew-orbit-") / "orbit.csv")) == 11


def test_akc_zero_stages(tmp_path):
    code = run(tmp_path, "akc", "--stages", "0")
    assert code == 0
    rep = json.loads((only_dir(tmp_path, "akc-") / "scheme.json").read_text())
    assert rep["n_stages"] == 0 and rep["feasible"] and rep["distances"] == []


def test_report_merges_runs(tmp_path):
    main(["cf", "--alpha", "golden", "--depth", "5", "--out", str(tmp_path)])
    main(["cf", "--alpha", "sqrt2", "--depth", "5", "--out", str(tmp_path)])
    dirs = [str(p) for p in sorted(tmp_path.iterdir())]
    assert main(["report", *dirs, "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["runs"]) == 2
    assert {r["config"]["alpha"] for r in manifest["runs"]} == {"golden", "sqrt2"}


def test_report_missing_dir(tmp_path):
    assert main(["report", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 2


def test_report_detects_tampering(tmp_path):
    main(["cf", "--alpha", "golden", "--depth", "5", "--out", str(tmp_path)])
    d = only_dir(tmp_path, "cf-")
    (d / "convergents.csv").write_text("tampered\r\n")
    assert main(["report", str(d), "--out", str(tmp_path)]) == 2


def test_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for root in (a, b):
        main(["skew", "classify", "--samples", "15", "--horizon", "5000", "--seed", "4", "--out", str(root)])
        main(["skew", "pushforward", "--terms-list", "0,3", "--samples", "5000", "--seed", "4",
              "--out", str(root)])
    files_a = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    files_b = sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("NICIS_OUTPUT_ROOT", str(tmp_path / "env"))
    assert main(["cf", "--alpha", "golden", "--depth", "3"]) == 0
    assert any((tmp_path / "env").iterdir())


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nicis.cli", "cf", "--alpha", "golden", "--depth", "3",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert Path(proc.stdout.strip().splitlines()[-1].split("output: ")[1]).is_dir()
