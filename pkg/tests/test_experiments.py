"""Experiment runner: config handling, reports, CLI, reproducibility."""

import json

import jsonschema
import numpy as np
import pytest

from gwharmonic.cli import main
from gwharmonic.experiments import (
    EXPERIMENT_KEYS,
    build_config,
    config_help,
    exp_kolmogorov,
    exp_yaglom,
    load_summary_schema,
    parse_config_file,
    run_experiment,
    write_report,
)


# ----------------------------------------------------------------------
# configuration plumbing
# ----------------------------------------------------------------------
def test_defaults_and_overrides():
    cfg = build_config("yaglom")
    assert cfg["n"] == 200 and cfg["samples"] == 10000
    cfg = build_config("yaglom", overrides={"n": "50", "ks_tol": "0.2"})
    assert cfg["n"] == 50 and cfg["ks_tol"] == 0.2


def test_unknown_key_rejected():
    with pytest.raises(ValueError):
        build_config("yaglom", overrides={"bogus": "1"})
    with pytest.raises(ValueError):
        build_config("not_an_experiment")


def test_config_file_parsing(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# comment line\n"
        "\n"
        "samples = 123   # inline comment\n"
        "n = 60\n"
        "offspring = binary\n"
    )
    cfg = build_config("yaglom", parse_config_file(path))
    assert (cfg["samples"], cfg["n"], cfg["offspring"]) == (123, 60, "binary")
    bad = tmp_path / "bad.cfg"
    bad.write_text("samples 123\n")
    with pytest.raises(ValueError):
        parse_config_file(bad)


def test_pmf_and_list_values():
    cfg = build_config(
        "yaglom",
        overrides={"offspring": "custom", "pmf": "0:0.5,2:0.5"},
    )
    assert cfg["pmf"] == [(0, 0.5), (2, 0.5)]
    cfg = build_config("mass_exponents", overrides={"n_values": "10,20"})
    assert cfg["n_values"] == (10, 20)


def test_config_help_mentions_every_key():
    for name in EXPERIMENT_KEYS:
        text = config_help(name)
        for key in EXPERIMENT_KEYS[name]:
            assert key in text
        assert "seed" in text


# ----------------------------------------------------------------------
# report output
# ----------------------------------------------------------------------
def test_report_written_and_schema_valid(tmp_path):
    cfg = build_config("yaglom", overrides={"samples": "300", "n": "40"})
    rep = exp_yaglom(cfg)
    raw, summary = write_report(rep, tmp_path / "out")
    header = open(raw).readline().strip().split(",")
    assert header == rep.raw_header
    doc = json.load(open(summary))
    jsonschema.validate(doc, load_summary_schema())
    assert doc["experiment"] == "yaglom"
    for est in doc["estimates"]:
        assert "stderr" in est or est.get("exact") is True


def test_estimates_require_error_or_exact_flag():
    schema = load_summary_schema()
    bad = {
        "experiment": "x",
        "seed": 1,
        "threads": 1,
        "params": {},
        "estimates": [{"name": "naked", "value": 1.0}],
        "checks": [],
        "all_passed": True,
    }
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, schema)


# ----------------------------------------------------------------------
# reproducibility contracts
# ----------------------------------------------------------------------
def _raw_bytes(tmp_path, name, overrides):
    cfg = build_config(name, overrides=overrides)
    rep = run_experiment(name, cfg)
    out = tmp_path / f"{name}-{overrides.get('threads', '1')}-{np.random.random():.6f}"
    raw, _ = write_report(rep, out)
    return open(raw, "rb").read()


def test_same_seed_byte_identical(tmp_path):
    overrides = {"samples": "250", "n": "40"}
    a = _raw_bytes(tmp_path, "yaglom", overrides)
    b = _raw_bytes(tmp_path, "yaglom", overrides)
    assert a == b


def test_different_seed_differs(tmp_path):
    a = _raw_bytes(tmp_path, "yaglom", {"samples": "250", "n": "40"})
    b = _raw_bytes(tmp_path, "yaglom", {"samples": "250", "n": "40", "seed": "99"})
    assert a != b


def test_thread_count_does_not_change_output(tmp_path):
    base = {"samples": "250", "n": "40"}
    a = _raw_bytes(tmp_path, "yaglom", base)
    b = _raw_bytes(tmp_path, "yaglom", {**base, "threads": "2"})
    assert a == b


# ----------------------------------------------------------------------
# CLI
# ----------------------------------------------------------------------
def test_cli_show_config(capsys):
    assert main(["show-config", "kolmogorov"]) == 0
    out = capsys.readouterr().out
    assert "tol" in out and "seed" in out


def test_cli_run_and_exit_codes(tmp_path, capsys):
    rc = main(
        [
            "kolmogorov",
            "--out",
            str(tmp_path / "ok"),
            "--param",
            "n=2000",
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    assert (tmp_path / "ok" / "summary.json").exists()
    assert (tmp_path / "ok" / "raw.csv").exists()

    # absurd tolerance forces a failed check and exit code 1
    rc = main(["kolmogorov", "--param", "n=2000", "--param", "tol=1e-9"])
    assert rc == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_cli_config_file_and_flag_priority(tmp_path, capsys):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("n = 1000\ntol = 0.5\n")
    rc = main(["kolmogorov", "--config", str(cfgfile)])
    assert rc == 0
    capsys.readouterr()


def test_kolmogorov_families_all_reported():
    rep = exp_kolmogorov(build_config("kolmogorov", overrides={"n": "500"}))
    names = {c["name"] for c in rep.checks}
    assert names == {"kolmogorov_geometric", "kolmogorov_poisson", "kolmogorov_binary"}


def test_custom_offspring_end_to_end():
    cfg = build_config(
        "yaglom",
        overrides={
            "offspring": "custom",
            "pmf": "0:0.5,2:0.5",
            "samples": "400",
            "n": "50",
            "ks_tol": "0.2",
        },
    )
    rep = exp_yaglom(cfg)
    assert rep.all_passed
