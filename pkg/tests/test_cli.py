import csv
import io

import pytest

from qsl_lab import __version__
from qsl_lab.cli import (
    COLUMNS,
    config_from_settings,
    dump_config,
    main,
    parse_config,
    presets,
)


def run_cli(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def data_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_fig2_preset_output(tmp_path, capsys):
    out = tmp_path / "fig2.csv"
    code, _, _ = run_cli(["boson", "--preset", "fig2", "--out", str(out)], capsys)
    assert code == 0
    text = out.read_text()
    first, second = text.splitlines()[:2]
    assert first.startswith(f"# qsl-lab v{__version__} preset=fig2 params=model=boson,A=1.0")
    assert second == ",".join(COLUMNS)
    rows = data_rows(text)
    assert [float(r["tau"]) for r in rows] == [50, 100, 150, 200]
    for r in rows:
        assert float(r["tau"]) >= float(r["R_mt"])


def test_output_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["boson", "--A", "6", "--omega", "4", "--V0", "3", "--tau", "5,10",
                     "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_nine_significant_digits(capsys):
    code, out, _ = run_cli(["boson", "--preset", "fig3", "--tau", "50"], capsys)
    row = data_rows(out)[0]
    assert row["C"] == "0.785398163"


def test_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[chain]\nN = 100\ngamma = 0.5\n\n[run]\ntau = 10\n")
    model, _, config = parse_config(["chain", "--config", str(cfg), "--N", "8"])
    p = config.param_dict()
    assert p["N"] == 8 and p["gamma"] == 0.5
    assert config.taus == (10.0,)


def test_unknown_config_key_is_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[chain]\nN = 8\nfoo = 1\n")
    code, _, err = run_cli(["chain", "--config", str(cfg)], capsys)
    assert code == 1 and "foo" in err


def test_invalid_gamma_exit_code(capsys):
    code, out, err = run_cli(["chain", "--gamma", "1.5"], capsys)
    assert code == 1
    assert "gamma" in err and "[0, 1]" in err


def test_bad_flag_exit_code(capsys):
    code, _, _ = run_cli(["boson", "--nope"], capsys)
    assert code == 1
    code, _, err = run_cli(["boson", "--N", "8"], capsys)
    assert code == 1 and "N" in err


def test_dump_config_round_trip(tmp_path, capsys):
    argv = ["chain", "--N", "10", "--gamma", "0.3", "--tau-max", "20", "--tau-steps", "4",
            "--bound", "mt", "--dt", "0.0005"]
    _, _, original = parse_config(argv)
    code, text, _ = run_cli(argv + ["--dump-config"], capsys)
    assert code == 0
    path = tmp_path / "dump.ini"
    path.write_text(text)
    _, _, again = parse_config(["chain", "--config", str(path)])
    assert again == original
    assert dump_config(again) == text


def test_tau_range_expansion():
    cfg = config_from_settings("boson", {"tau_max": 10.0, "tau_steps": 4})
    assert cfg.taus == (2.5, 5.0, 7.5, 10.0)


def test_zero_drive_row(capsys):
    code, out, _ = run_cli(["boson", "--V0", "0", "--tau", "3"], capsys)
    row = data_rows(out)[0]
    assert row["C"] == "0" and row["R_ml"] == "0" and row["R_mt"] == "0"
    assert row["dE_ml"] == ""


def test_bound_selection_blanks_other_columns(capsys):
    code, out, _ = run_cli(["boson", "--preset", "fig3", "--tau", "50", "--bound", "mt"], capsys)
    row = data_rows(out)[0]
    assert row["R_ml"] == "" and row["dE_ml"] == "" and row["R_mt"]


def test_numerical_failure_exit_code_leaves_no_file(tmp_path, capsys):
    # this drive violates the energy-average inequality at small tau
    out = tmp_path / "v.csv"
    code, _, err = run_cli(["boson", "--A", "6.19", "--omega", "3.27", "--V0", "3.43",
                            "--tau", "0.138", "--out", str(out)], capsys)
    assert code == 2
    assert not out.exists()
    assert "tau=0.138" in err


def test_compare_zero_drive_has_zero_errors(capsys):
    code, out, _ = run_cli(["compare", "--h1", "0", "--tau", "10"], capsys)
    assert code == 0
    row = data_rows(out)[0]
    assert float(row["abs_err"]) == 0 and float(row["rel_err"]) == 0


def test_compare_desk_and_strict(capsys):
    code, out, _ = run_cli(["compare", "--tau", "100", "--strict"], capsys)
    assert code == 0
    row = data_rows(out)[0]
    assert float(row["rel_err"]) <= 0.05
    assert float(row["S1"]) == pytest.approx(1e-4)


def test_compare_rejects_large_chain(capsys):
    code, _, err = run_cli(["compare", "--N", "14"], capsys)
    assert code == 1


def test_chain_exact_command(capsys):
    code, out, _ = run_cli(["chain-exact", "--N", "4", "--tau", "5"], capsys)
    assert code == 0
    row = data_rows(out)[0]
    assert 0 < float(row["C"]) < 0.1


def test_preset_table1_tags(capsys):
    code, out, _ = run_cli(["preset", "table1"], capsys)
    assert code == 0
    rows = data_rows(out)
    assert [(r["gamma"], r["tauH"], r["h1"]) for r in rows] == [
        ("0.1", "0.01", "1"), ("0.2", "0.01", "1"), ("0.5", "0.01", "2")]


def test_presets_are_frozen():
    table = presets()
    with pytest.raises(AttributeError):
        table["fig2"][0].model = "chain"
    assert table["fig3"][0].param_dict() == {"A": 6.0, "omega": 4.0, "V0": 3.0}


def test_extrema_command(tmp_path, capsys):
    sweep = tmp_path / "sweep.csv"
    assert main(["boson", "--A", "1", "--omega", "1.6", "--V0", "0.3", "--tau-max", "30",
                 "--tau-steps", "120", "--bound", "mt", "--out", str(sweep)]) == 0
    out = tmp_path / "ext.csv"
    code, _, _ = run_cli(["extrema", "--input", str(sweep), "--bound", "mt", "--out", str(out)],
                         capsys)
    assert code == 0
    rows = data_rows(out.read_text())
    assert rows and {r["kind"] for r in rows} <= {"maximum", "minimum", "inflexion"}


def test_extrema_missing_input(capsys):
    code, _, err = run_cli(["extrema", "--input", "/nonexistent.csv"], capsys)
    assert code == 1


def test_threads_do_not_change_output(monkeypatch, capsys):
    argv = ["boson", "--preset", "fig3"]
    monkeypatch.setenv("QSL_THREADS", "1")
    _, serial, _ = run_cli(argv, capsys)
    monkeypatch.setenv("QSL_THREADS", "4")
    _, parallel, _ = run_cli(argv, capsys)
    assert serial == parallel
