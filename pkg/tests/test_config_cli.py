import json

import pytest

from condchaos.chaos_lab import RateReport
from condchaos.cli import RATES_COLUMNS, config_from_summary, emit_reports, main, resolve_seed
from condchaos.config import ExperimentConfig, parse_config, to_text
from condchaos.errors import ConfigError


def test_minimal_config_gets_defaults():
    cfg = parse_config("model = zero\nT = 1\nK = 10\nseed = 7\nkind = solve")
    assert (cfg.model, cfg.T, cfg.K, cfg.seed, cfg.kind) == ("zero", 1.0, 10, 7, "solve")
    assert cfg.n == [64, 128, 256, 512, 1024] and cfg.R == 4 and cfg.n_ref == 4096
    assert cfg.tol == 1e-4 and cfg.max_iter == 20 and cfg.q == 2 and cfg.J == 2
    assert cfg.ridge is None and cfg.alpha is None


def test_lists_comments_and_model_params():
    cfg = parse_config("# header\nmodel = linear_mean  # inline\nn = 64, 128, 256\nmodel.a = 0.25\n\n")
    assert cfg.n == [64, 128, 256]
    assert cfg.model_params == {"a": 0.25}


@pytest.mark.parametrize("text,key,line", [
    ("T = 1\n", "model", None),
    ("model = zero\nbogus = 3\n", "bogus", 2),
    ("model = zero\nK = ten\n", "K", 2),
    ("model = zero\nK = 0\n", "K", 2),
    ("model = zero\nn = 64, 32\n", "n", 2),
    ("model = zero\nT = -1\n", "T", 2),
    ("model = nope\n", "model", 1),
    ("model = zero\nmodel.a = 1\n", "model.a", 2),
    ("model = zero\nK = 5\nK = 6\n", "K", 3),
    ("model = zero\np = 1\n", "p", 2),
    ("model = zero\nkind = plot\n", "kind", 2),
])
def test_parse_errors_name_line_and_key(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key and info.value.line == line
    assert repr(key) in str(info.value)
    if line is not None:
        assert f"line {line}" in str(info.value)


def test_missing_equals_names_line():
    with pytest.raises(ConfigError) as info:
        parse_config("model = zero\njust words\n")
    assert info.value.line == 2


def test_overrides_apply_last():
    cfg = parse_config("model = zero\nK = 5\n", ["K=9", "model.c = 3"])
    assert cfg.K == 9 and cfg.model_params == {"c": 3.0}


def test_text_round_trip():
    cfg = parse_config("model = w2_interaction\nmodel.b = 0.3\nn = 8,16,32\nseed = 4\nridge = 1e-6\nalpha = 2.5")
    assert parse_config(to_text(cfg)) == cfg
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_seed_resolution_order():
    assert resolve_seed(3, 5, {"CONDCHAOS_SEED": "9"}) == 5
    assert resolve_seed(3, None, {"CONDCHAOS_SEED": "9"}) == 3
    assert resolve_seed(None, None, {"CONDCHAOS_SEED": "9"}) == 9
    assert resolve_seed(None, None, {}) == 0
    with pytest.raises(ConfigError):
        resolve_seed(None, None, {"CONDCHAOS_SEED": "x"})


def test_empty_rate_report_gives_header_only(tmp_path):
    rep = RateReport([], [], [], [], [], None, None, None, None, None, None, [], [], -0.5, -0.375)
    files = emit_reports(rep, str(tmp_path))
    assert (tmp_path / "rates.csv").read_text() == ",".join(RATES_COLUMNS) + "\n"
    assert str(tmp_path / "summary.json") in files.paths


def test_emit_reports_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(Exception) as info:
        emit_reports({"a": 1}, str(blocker / "sub"))
    assert str(blocker) in str(info.value)


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()[-1]
    return code, json.loads(out)


def test_cli_solve_zero_model(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model = zero\nmodel.c = 1.25\nT = 1\nK = 10\nseed = 7\nkind = solve\nn = 16\nM = 8\ndump_bundle = true\n")
    code, msg = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0 and msg["ok"]
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["results"]["max_abs_Y_minus_c"] == 0.0
    assert summary["manifest"]["seed"] == 7
    assert (tmp_path / "o" / "bundle.bin").exists()
    back = config_from_summary(str(tmp_path / "o" / "summary.json"))
    assert back == parse_config(cfg.read_text(), [f"out={tmp_path / 'o'}"])


def test_cli_rates_csv_and_determinism(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CONDCHAOS_SEED", "11")
    cfg = tmp_path / "r.cfg"
    cfg.write_text("model = martingale\nkind = rates\nK = 8\nn = 8, 16, 32\nM = 8\nn_ref = 64\nR = 2\n")
    bodies = []
    for out in ("a", "b"):
        code, _ = _run(["run", "--config", str(cfg), "--out", str(tmp_path / out)], capsys)
        assert code == 0
        bodies.append((tmp_path / out / "rates.csv").read_bytes())
    assert bodies[0] == bodies[1]
    lines = bodies[0].decode().splitlines()
    assert lines[0].split(",") == RATES_COLUMNS and len(lines) == 4
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["manifest"]["seed"] == 11
    # the flag wins over the environment
    code, _ = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "3"], capsys)
    assert json.loads((tmp_path / "c" / "summary.json").read_text())["manifest"]["seed"] == 3
    assert (tmp_path / "c" / "rates.csv").read_bytes() != bodies[0]


def test_cli_set_overrides_file(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model = zero\nK = 10\nseed = 1\nn = 8\nM = 8\n")
    code, _ = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--set", "K=4",
                    "--set", "seed=2"], capsys)
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "summary.json").read_text())["manifest"]
    assert manifest["config"]["K"] == 4 and manifest["seed"] == 2


@pytest.mark.parametrize("text,kind", [("T = 1\n", "ConfigError"), ("model = zero\nfoo = 2\n", "ConfigError"),
                                       ("model = martingale\nkind = rates\nn = 8,16,64\nn_ref = 32\nK = 4\n",
                                        "InvalidArgument")])
def test_cli_failures_emit_json(tmp_path, capsys, text, kind):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, msg = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code != 0 and msg["error"]["type"] == kind


def test_cli_usage_and_missing_file(tmp_path, capsys):
    code, msg = _run(["run"], capsys)
    assert code != 0 and msg["error"]["type"] == "UsageError"
    code, msg = _run(["bogus"], capsys)
    assert code != 0
    code, msg = _run(["run", "--config", str(tmp_path / "missing.cfg")], capsys)
    assert code != 0 and msg["error"]["type"] == "ConfigError"


def test_cli_validate(tmp_path, capsys):
    code, msg = _run(["validate", "--out", str(tmp_path / "v")], capsys)
    assert code == 0 and msg["ok"]
    results = json.loads((tmp_path / "v" / "summary.json").read_text())["results"]
    assert results["all_passed"] and len(results["checks"]) >= 9
