import argparse
import json
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats

from ebmkit.cli import build_parser, main
from ebmkit.csvio import config_hash, format_value, read_csv, write_csv

from conftest import column, summary


def test_fig_gauss(cli):
    t = cli("fig-gauss")["fig_gauss.csv"]
    x, pdf, energy = (np.array(column(t, c)) for c in ("x", "pdf", "energy"))
    assert len(x) == 100
    assert np.trapezoid(pdf, x) == pytest.approx(1.0, abs=1e-4)
    centered = (energy - energy.mean()) - (-np.log(pdf) - (-np.log(pdf)).mean())
    assert np.max(np.abs(centered)) < 1e-10
    obs, exp = np.array(column(t, "count")), np.array(column(t, "expected_count"))
    keep = exp >= 5
    chi2 = np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.001


def test_fig_divergence_small(cli):
    t = cli("fig-divergence", "--n-list", "2000", "--z-points", "6")["fig_divergence.csv"]
    z, kl, kl_se = (np.array(column(t, c)) for c in ("z", "kl", "kl_se"))
    fi, fi_se = np.array(column(t, "fisher")), np.array(column(t, "fisher_se"))
    assert abs(kl[0]) <= 4 * kl_se[0] and abs(fi[0]) <= 4 * fi_se[0]
    assert np.all(np.diff(kl) > 0)
    assert np.all(fi < kl + 1e-12)


def test_ula_bias_status_column(cli):
    t = cli("ula-bias", "--h-list", "0.25,1.5,2.0", "--n-walkers", "200", "--n-steps", "50")["ula_bias.csv"]
    assert column(t, "status", str) == ["ok", "outside-guard", "divergent"]
    assert column(t, "ula_var")[2] is None
    assert column(t, "ula_analytic")[0] == pytest.approx(8 / 7)


def test_train_cd_zero_rate_constant(cli):
    t = cli("train", "--algo", "cd", "--learning-rate", "0", "--total-steps", "5", "--n-walkers", "100",
            "--n-data", "100")["train_cd.csv"]
    assert len(set(column(t, "theta_0"))) == 1
    assert column(t, "log_Z_estimate") == [None] * 5


def test_train_checkpoint_written(cli, tmp_path):
    cli("train", "--algo", "pcd", "--total-steps", "3", "--n-walkers", "50", "--n-data", "50")
    ck = json.loads((tmp_path / "train_pcd.json").read_text())
    assert ck["family"] == "mixture1d" and len(ck["theta"]) == 1 and ck["metadata"]["step"] == 3


def test_train_score_matching(cli):
    t = cli("train", "--algo", "sm", "--learning-rate", "0.5", "--total-steps", "100", "--n-data", "100000")
    assert float(summary(t["train_sm_summary.csv"])["theta_final"]) == pytest.approx(1.0, abs=0.02)


def test_train_missing_capability(capsys, tmp_path):
    rc = main(["--out", str(tmp_path), "train", "--algo", "cd", "--track", "cross_entropy"])
    assert rc == 2
    assert "'cd' does not provide cross_entropy" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path, capsys):
    rc = main(["--out", str(tmp_path), "train", "--algo", "pcd", "--family", "quadratic", "--ula-step", "100",
               "--total-steps", "400", "--n-walkers", "10", "--n-data", "10"])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err


def test_hopfield(cli):
    t = cli("hopfield", "--corruption", "0", "--trials", "5")["hopfield.csv"]
    assert column(t, "overlap_final") == [1.0] * 5
    assert column(t, "iterations", int) == [0] * 5
    t = cli("hopfield", "--n-patterns", "60", "--n-units", "60", "--trials", "60")["hopfield.csv"]
    assert np.mean(column(t, "overlap_final")) < 0.9


def test_thermo_small(cli):
    out = cli("thermo", "--n-samples", "20000")
    assert column(out["thermo.csv"], "family", str) == ["quadratic", "mixture"]
    assert column(out["thermo_maxent.csv"], "holds", str) == ["true", "true"]


def test_flows_interpolant_small(cli):
    t = cli("flows", "--n-train", "20000", "--n-gen", "500", "--sde-steps", "50", "--eps-list", "0.1")
    rows = t["flows_interpolant.csv"]
    assert column(rows, "method", str) == ["ode"] * 4 + ["sde"]


def test_help_lists_flags_with_defaults():
    parser, sub = build_parser()
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for act in sp._actions:
            if act.option_strings and act.dest != "help" and act.default is not argparse.SUPPRESS:
                assert act.option_strings[0] in text
                if act.default is not None:
                    assert f"(default: {act.default})" in " ".join(text.split()), (name, act.dest)


def test_unknown_flag_named(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["hopfield", "--bogus", "1"])
    assert exc.value.code != 0
    assert "--bogus" in capsys.readouterr().err


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trials": 3, "corruption": 0.0, "seed": 5}))
    out = tmp_path / "o"
    assert main(["--out", str(out), "--config", str(cfg), "hopfield", "--trials", "2"]) == 0
    comment, _, rows = read_csv(out / "hopfield.csv")
    assert len(rows) == 2 and comment.startswith("# seed=5 ")
    cfg.write_text(json.dumps({"trails": 3}))
    assert main(["--out", str(out), "--config", str(cfg), "hopfield"]) == 2
    assert "'trails'" in capsys.readouterr().err


def test_csv_format_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, threads in ((a, 1), (b, 3)):
        assert main(["--seed", "9", "--out", str(d), "--threads", str(threads), "hopfield", "--trials", "3"]) == 0
    raw = (a / "hopfield.csv").read_bytes()
    assert raw == (b / "hopfield.csv").read_bytes()
    first = raw.split(b"\r\n")[0].decode()
    assert first.startswith("# seed=9 git=") and " config=" in first
    assert raw.count(b"\r\n") == 5


def test_float_round_trip(tmp_path):
    vals = [0.1, 1 / 3, np.pi * 1e-300, -2.5e17, np.nextafter(1.0, 2.0)]
    p = write_csv(tmp_path / "f.csv", ["v"], [(v,) for v in vals], 0, {})
    _, _, rows = read_csv(p)
    assert [float(r[0]) for r in rows] == vals
    assert format_value(True) == "true" and format_value(None) == "" and format_value(np.int64(3)) == "3"
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ebmkit", "--out", str(tmp_path), "hopfield", "--trials", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "hopfield.csv" in r.stdout
