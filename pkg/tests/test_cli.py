import json

import pytest

from rhflow.cli import ConfigError, ExperimentConfig, emit_plotdata, main, parse_config, run_experiment
from rhflow.functionals import CSV_HEADER, EntropyReport
from rhflow.inequalities import GaussianReport

import numpy as np

MINIMAL = """
[flow]
N = 256
t_end = 0.2
family = round
r0 = 1
"""


def test_minimal_flow_config_is_valid():
    cfg = parse_config(MINIMAL, kind="flow")
    assert cfg.kind == "flow" and cfg.flow.N == 256 and cfg.flow.r0 == 1.0


def test_large_cfl_rejected_with_line():
    with pytest.raises(ConfigError, match="cfl exceeds 0.25") as info:
        parse_config("[flow]\nN = 64\ncfl = 0.5\n", kind="flow")
    assert info.value.line == 3


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match="gamma") as info:
        parse_config("[experiment]\nkind = flow\n\n[checks]\ngamma = 2\n")
    assert info.value.line == 5


def test_type_mismatch():
    with pytest.raises(ConfigError, match="type mismatch") as info:
        parse_config("[flow]\nN = many\n", kind="flow")
    assert info.value.line == 2


def test_missing_kind():
    with pytest.raises(ConfigError, match="missing required key 'kind'"):
        parse_config(MINIMAL)


def test_comments_and_lists():
    cfg = parse_config("# header\n[checks]  ; trailing\neps_list = 0.5, 1 # two values\n", kind="sobolev")
    assert cfg.checks.eps_list == (0.5, 1.0)


def test_print_config_roundtrip():
    cfg = ExperimentConfig("verify-all")
    assert parse_config(cfg.to_text()) == cfg


def test_print_config_command(capsys):
    assert main(["print-config"]) == 0
    out = capsys.readouterr().out
    assert "[flow]" in out and "cfl = 0.25" in out


def test_flow_experiment_exit_and_manifest(tmp_path):
    cfg = parse_config("[flow]\nN = 32\nt_end = 0.05\n", kind="flow")
    cfg.out = str(tmp_path)
    man = run_experiment(cfg)
    assert man.exit_code == 0
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert set(data["files"]) == {"flow.json", "history.txt"}
    assert data["checks"] == {"flow": "pass"}


def test_rerun_gives_identical_hashes(tmp_path):
    text = "[flow]\nN = 32\nt_end = 0.05\n"
    hashes = []
    for sub in ("a", "b"):
        cfg = parse_config(text, kind="kernel")
        cfg.out = str(tmp_path / sub)
        hashes.append(run_experiment(cfg).files)
    assert hashes[0] == hashes[1]


def test_override_flags_gaussian(tmp_path):
    code = main(["gaussian", "--grid", "128", "--out", str(tmp_path), "--quiet",
                 "--config", str(_write(tmp_path / "c.cfg", "[experiment]\ns_override = -1\n"))])
    assert code == 2
    rep = json.loads((tmp_path / "gaussian.json").read_text())
    assert rep["margins"]["note"] == "hypotheses not satisfied; bound not asserted"


def test_cli_reports_bad_config(tmp_path, capsys):
    code = main(["flow", "--config", str(_write(tmp_path / "c.cfg", "[flow]\ncfl = 0.5\n"))])
    assert code == 1
    assert "line 2" in capsys.readouterr().err


def test_verify_all_round_sphere(tmp_path):
    cfg = parse_config("[flow]\nN = 128\n", kind="verify-all")
    cfg.out = str(tmp_path)
    man = run_experiment(cfg)
    # the parameter a = 5 violates the generalized-entropy bound; everything else holds
    failed = {k for k, v in man.checks.items() if v != "pass"}
    assert failed == {"entropy_generalized"}
    assert man.exit_code == 1
    assert {"entropy.csv", "sobolev.json", "gaussian.csv", "gaussian.json"} <= set(man.files)
    assert (tmp_path / "entropy.csv").read_text().splitlines()[0] == CSV_HEADER


def test_verify_all_without_large_parameter(tmp_path):
    cfg = parse_config("[flow]\nN = 128\n[checks]\na_params = 0, 1, 2.5066282746310002\n", kind="verify-all")
    cfg.out = str(tmp_path)
    assert run_experiment(cfg).exit_code == 0


def test_emit_plotdata_empty_reports(tmp_path):
    e = np.zeros(0)
    paths = emit_plotdata(EntropyReport(e, e, e, e, e, e, e, e), tmp_path)
    assert paths[0].read_text() == CSV_HEADER + "\n"
    g = GaussianReport(e, e, e, e, e, e, 1 / 16, float("nan"), {}, "fail", {})
    paths = emit_plotdata(g, tmp_path)
    assert (tmp_path / "gaussian.csv").read_text() == "t,x,G,d,ball,ratio\n"
    with pytest.raises(TypeError):
        emit_plotdata(object(), tmp_path)


def _write(path, text):
    path.write_text(text)
    return path
