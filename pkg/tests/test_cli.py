import json

import pytest

from pump_deck.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    FIGURES,
    PUMP_HEADER,
    TRANSITION_HEADER,
    load_configs,
    main,
    preset_path,
    read_rows,
    run_experiment,
)
from pump_deck.errors import ConfigInvalid

SMALL_PUMP = """
experiment = "pump_sweep"
name = "small"
gammas = [0.1, 0.5, 2.0]
numeric = false

[model]
kind = "qwz"
delta = {delta}

[initial]
kind = "band"
populations = [1.0, 0.0]

[grid]
n_k = 21
n_s = 21
"""

SMALL_LZ = """
experiment = "transition_sweep"
name = "lz"
gammas = [0.5, 2.0]
rate = 0.01
closed_form = "lz"

[model]
kind = "landau_zener"
g0 = 1.0

[initial]
kind = "coherent"
weights = [0.75, 0.25]
phases = [0.0, 3.141592653589793]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_presets_parse():
    for name in FIGURES:
        assert load_configs(preset_path(name))


@pytest.mark.parametrize(
    "edit,field",
    [
        (('delta = 1.0', 'delta = "one"'), "model.delta"),
        (('gammas = [0.1, 0.5, 2.0]', 'gammas = [0.5, 0.1]'), "gammas"),
        (('gammas = [0.1, 0.5, 2.0]', 'gammas = [-1.0]'), "gammas"),
        (('n_k = 21', 'n_k = 0'), "grid"),
        (('populations = [1.0, 0.0]', 'populations = [0.7, 0.7]'), "initial"),
        (('numeric = false', 'numeric = false\ncolour = "red"'), "colour"),
        (('experiment = "pump_sweep"', 'experiment = "pump"'), "experiment"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, edit, field):
    text = SMALL_PUMP.format(delta=1.0).replace(*edit)
    assert main(["run", str(write(tmp_path, text)), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert field in capsys.readouterr().err


def test_missing_file_is_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_run_table_errors_carry_index(tmp_path):
    text = SMALL_LZ + '\n[[run]]\nname = "a"\n\n[[run]]\nname = "b"\nrate = -1.0\n'
    with pytest.raises(ConfigInvalid, match=r"run\[1\]\.rate"):
        load_configs(write(tmp_path, text))


def test_gapless_model_exits_2_with_location(tmp_path, capsys):
    code = main(["run", str(write(tmp_path, SMALL_PUMP.format(delta=2.0))), "--out", str(tmp_path)])
    assert code == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert "DegenerateSpectrum" in err
    assert "3.14159" in err


def test_pump_csv_and_sidecar(tmp_path):
    (cfg,) = load_configs(write(tmp_path, SMALL_PUMP.format(delta=1.0)))
    path = run_experiment(cfg, out=tmp_path)
    lines = path.read_text().splitlines()
    assert lines[0] == PUMP_HEADER
    assert len(lines) == 4
    rows = read_rows(path)
    assert [r["gamma"] for r in rows] == [0.1, 0.5, 2.0]
    for r in rows:
        assert r["Q_numeric"] is None and r["abs_err"] is None and r["wall_time_seconds"] is None
        assert r["Q_theory"] == pytest.approx(r["Q_a"] + r["Q_b"] + r["Q_c"] + r["Q_d"], abs=1e-15)

    # the sidecar reproduces the run byte for byte
    sidecar = tmp_path / "small.json"
    assert json.loads(sidecar.read_text())["config"]["grid"] == {"n_k": 21, "n_s": 21}
    first = path.read_bytes()
    again = tmp_path / "again"
    (cfg2,) = load_configs(sidecar)
    assert cfg2 == cfg
    assert run_experiment(cfg2, out=again).read_bytes() == first


def test_worker_count_does_not_change_output(tmp_path):
    p = write(tmp_path, SMALL_PUMP.format(delta=1.0))
    assert main(["run", str(p), "--out", str(tmp_path / "one"), "--workers", "1"]) == EXIT_OK
    assert main(["run", str(p), "--out", str(tmp_path / "two"), "--workers", "2"]) == EXIT_OK
    for name in ("small.csv", "small.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_timing_fills_wall_time(tmp_path):
    p = write(tmp_path, SMALL_PUMP.format(delta=1.0))
    assert main(["run", str(p), "--out", str(tmp_path), "--timing"]) == EXIT_OK
    assert all(r["wall_time_seconds"] >= 0 for r in read_rows(tmp_path / "small.csv"))


def test_numeric_pump_row(tmp_path):
    text = SMALL_PUMP.format(delta=1.0).replace("numeric = false", "rate = 0.02").replace(
        "gammas = [0.1, 0.5, 2.0]", "gammas = [0.5]"
    )
    (cfg,) = load_configs(write(tmp_path, text))
    (row,) = read_rows(run_experiment(cfg, out=tmp_path))
    assert row["abs_err"] == pytest.approx(abs(row["Q_theory"] - row["Q_numeric"]), abs=1e-15)
    assert row["abs_err"] < 0.05


def test_transition_sweep_with_closed_form(tmp_path):
    assert main(["run", str(write(tmp_path, SMALL_LZ)), "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "lz.csv").read_text().splitlines()
    assert lines[0] == TRANSITION_HEADER
    rows = read_rows(tmp_path / "lz.csv")
    for r in rows:
        assert r["delta_p_theory"] == pytest.approx(r["closed_form"], abs=1e-9)
        assert r["abs_err"] < 1e-4
        assert r["flags"] == ()


def test_lz_closed_form_rejects_other_endpoints(tmp_path):
    text = SMALL_LZ.replace('closed_form = "lz"', 'closed_form = "lz"\ns_start = -2.0')
    with pytest.raises(ConfigInvalid, match="closed_form"):
        load_configs(write(tmp_path, text))


def test_verify_fast_passes(capsys):
    assert main(["verify", "--fast"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_verify_gauge_scramble_passes(capsys):
    assert main(["verify", "--gauge-scramble"]) == EXIT_OK


def test_verify_coarse_step_is_caught(capsys):
    assert main(["verify", "--coarse-step", "8"]) == EXIT_RUNTIME
    out = capsys.readouterr().out
    assert "FAIL" in out and "step convergence" in out


def test_verify_defaults_to_fast():
    from pump_deck.cli import build_parser

    assert build_parser().parse_args(["verify"]).full is False
    assert build_parser().parse_args(["verify", "--full"]).full is True
