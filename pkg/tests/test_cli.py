import csv
import io
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from maqkd import cli, devices

SWEEPS = Path(__file__).resolve().parents[1] / "sweeps"


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sweep_distance(capsys):
    code, out, _ = run(
        ["sweep", "--preset", "ideal", "--from", "10", "--to", "100", "--steps", "4", "--baselines", "plob", "--threads", "1"],
        capsys,
    )
    assert code == 0
    table = rows(out)
    assert [float(r["L_km"]) for r in table] == [10.0, 32.5, 55.0, 77.5, 100.0]
    assert list(table[0]) == cli.HEADER + cli.EXTRA_COLUMNS
    assert all(r["PLOB_per_pulse"] for r in table)
    assert table[0]["nomem_per_second"] == ""


def test_sweep_parameter_family(capsys):
    code, out, _ = run(
        ["sweep", "--preset", "ExC", "--var", "dark_count", "--from", "1e-9", "--to", "1e-5",
         "--steps", "4", "--log", "--length", "300", "--per", "second", "--threads", "1"],
        capsys,
    )
    assert code == 0
    table = rows(out)
    assert {r["L_km"] for r in table} == {"300"}
    assert float(table[0]["var_value"]) == pytest.approx(1e-9)
    rates_ = [float(r["R_per_second"]) for r in table]
    assert rates_ == sorted(rates_, reverse=True)


def test_output_is_byte_identical_across_thread_counts(tmp_path):
    args = ["sweep", "--preset", "WV2", "--from", "10", "--to", "300", "--steps", "7", "--baselines", "nomem,plob"]
    cli.main(args + ["--threads", "1", "--out", str(tmp_path / "a.csv")])
    cli.main(args + ["--threads", "3", "--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_fix_and_scheme_override(capsys):
    code, out, _ = run(
        ["sweep", "--preset", "ideal", "--scheme", "NLA", "--fix", "eta_NLA=0.3",
         "--from", "50", "--to", "60", "--steps", "1", "--threads", "1"],
        capsys,
    )
    assert code == 0
    assert float(rows(out)[0]["P_SBSM"]) > 0


def test_empty_range_is_an_error(capsys):
    code, _, err = run(["sweep", "--preset", "ideal", "--from", "100", "--to", "10"], capsys)
    assert code == cli.EXIT_CONFIG
    assert "range" in err


def test_unknown_preset_exit_code(capsys):
    code, _, err = run(["sweep", "--preset", "nope", "--from", "1", "--to", "2"], capsys)
    assert code == cli.EXIT_CONFIG
    assert "nope" in err


def test_bad_config_names_field(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("extends: ExC\nmemory:\n  cohrence_time: 1\n")
    code, _, err = run(["sweep", "--config", str(path), "--from", "1", "--to", "2"], capsys)
    assert code == cli.EXIT_CONFIG
    assert "memory.cohrence_time" in err and "bad.yaml" in err


def test_crossover_report(capsys):
    code, out, _ = run(["crossover", "--preset", "ExC", "--against", "nomem", "--from", "100", "--to", "400", "--steps", "30"], capsys)
    assert code == 0
    km = float(out.split("crossover at ")[1].split(" km")[0])
    assert 200 <= km <= 260


def test_crossover_none_in_range(capsys):
    code, out, _ = run(["crossover", "--preset", "WV1", "--against", "nomem", "--from", "10", "--to", "100", "--steps", "5"], capsys)
    assert code == 0
    assert "none in range" in out


def test_presets_listing(capsys):
    code, out, _ = run(["presets"], capsys)
    assert code == 0
    names = [r["name"] for r in rows(out)]
    assert set(names) == set(devices.list_presets())


def test_presets_validate_corrupted(tmp_path, capsys):
    for path in devices.preset_dir().glob("*.yaml"):
        shutil.copy(path, tmp_path / path.name)
    (tmp_path / "ca1.yaml").write_text((tmp_path / "ca1.yaml").read_text().replace("efficiency: 0.14", "efficiency: 1.4"))
    code, out, _ = run(["presets", "--validate", "--dir", str(tmp_path)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "ca1.yaml" in out and "memory.efficiency" in out


def test_verify_fails_on_corrupted_presets(tmp_path, capsys):
    for path in devices.preset_dir().glob("*.yaml"):
        shutil.copy(path, tmp_path / path.name)
    (tmp_path / "wv3.yaml").write_text("name: WV3\nextends: common\nmemory: {spectral_modes: 0}\n")
    code, out, _ = run(["verify", "--dir", str(tmp_path)], capsys)
    assert code == cli.EXIT_VERIFY
    assert "FAIL  presets" in out


@pytest.mark.slow
def test_verify_quick_passes(capsys):
    code, out, _ = run(["verify", "--level", "quick"], capsys)
    assert code == 0, out
    assert "all checks passed" in out


@pytest.mark.parametrize("spec", sorted(SWEEPS.glob("*.yaml")), ids=lambda p: p.stem)
def test_checked_in_sweep_specs_load(spec):
    jobs, doc = cli.load_sweep_spec(spec)
    assert jobs
    assert len(jobs) == (doc["steps"] + 1) * len(doc["curves"])


def test_sweep_spec_runs(tmp_path):
    spec = tmp_path / "tiny.yaml"
    spec.write_text(
        "var: L\nfrom: 50\nto: 150\nsteps: 2\nper: second\nbaselines: [nomem]\n"
        "curves:\n  - preset: ExC\n    label: exc\n  - preset: ExC\n    fix: {dark_count: 1e-6}\n    label: noisy\n"
    )
    out = tmp_path / "out.csv"
    assert cli.main(["sweep", "--spec", str(spec), "--threads", "1", "--out", str(out)]) == 0
    table = rows(out.read_text())
    assert [r["curve"] for r in table] == ["exc"] * 3 + ["noisy"] * 3


def test_sweep_spec_unknown_key(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text("var: L\nfrom: 1\nto: 2\nsteps: 1\nwhatever: 1\ncurves: []\n")
    code, _, err = run(["sweep", "--spec", str(spec)], capsys)
    assert code == cli.EXIT_CONFIG
    assert "whatever" in err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "maqkd.cli", "presets"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "WV2" in res.stdout
