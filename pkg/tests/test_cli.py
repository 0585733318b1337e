import json
from pathlib import Path

import numpy as np
import pytest

from ofmtss.annealer import exhaustive_search
from ofmtss.cli import main, parse_config_text
from ofmtss.codes import build_code, crest_cost, load_code, save_code
from ofmtss.simlab import ConfigError

ZETA16 = [1, -1, 1, 1, -1, -1, 1, 1, 1, -1, -1, 1, 1, 1, -1, 1]


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def only(tmp_path, prefix) -> Path:
    (d,) = [p for p in tmp_path.iterdir() if p.name.startswith(prefix)]
    return d


@pytest.fixture
def code16(tmp_path):
    p = tmp_path / "code16.json"
    save_code(build_code(ZETA16), p, "manual", None, None)
    return p


class TestParsing:
    def test_key_value(self):
        m = parse_config_text("# c\nmode = biorth\nM = 4  # codes\n"
                              "ebn0_grid_db = [1, 2]\ncode = codes/x.json\nclip = null\n")
        assert m == {"mode": "biorth", "M": 4, "ebn0_grid_db": [1, 2],
                     "code": "codes/x.json", "clip": None}

    def test_json(self):
        assert parse_config_text('{"M": 2}') == {"M": 2}

    def test_malformed(self):
        with pytest.raises(ConfigError) as ei:
            parse_config_text("mode qpsk\n")
        assert "line 1" in ei.value.fields


class TestExitCodes:
    def test_unknown_flag(self, tmp_path):
        assert run(tmp_path, "design-code", "--L", "8", "--bogus") == 2

    def test_invalid_L(self, tmp_path):
        assert run(tmp_path, "design-code", "--L", "7") == 2

    def test_oracle_limit(self, tmp_path):
        assert run(tmp_path, "oracle-search", "--L", "40") == 2

    def test_malformed_code_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(tmp_path, "evaluate", str(bad)) == 2

    def test_config_fields_listed(self, tmp_path, capsys):
        cfg = tmp_path / "x.conf"
        cfg.write_text("mode = bpsk\nmin_errors = 3\ncode = [1, 1, 1, 1]\n")
        assert run(tmp_path, "simulate", str(cfg)) == 2
        err = capsys.readouterr().err
        assert "mode" in err and "min_errors" in err

    def test_design_tolerance_is_numerical_failure(self, tmp_path, code16):
        assert run(tmp_path, "synth", str(code16), "--L", "16", "--alpha", "0.25") == 3


def test_design_code_reaches_oracle(tmp_path):
    assert run(tmp_path, "design-code", "--L", "8", "--cost", "crest", "--restarts", "2") == 0
    d = only(tmp_path, "design-code-")
    code = load_code(d / "code.json")
    _, best = exhaustive_search(8, crest_cost)
    assert crest_cost(code.zeta) == pytest.approx(best, abs=1e-12)
    assert (d / "cost_trace.csv").read_text().startswith("temperature,best_cost")


def test_oracle_search(tmp_path, capsys):
    assert run(tmp_path, "oracle-search", "--L", "8") == 0
    assert "global minimum" in capsys.readouterr().out


class TestEvaluate:
    def test_code(self, tmp_path, code16):
        assert run(tmp_path, "evaluate", str(code16), "--intervals", "100") == 0
        rep = json.loads((only(tmp_path, "evaluate-") / "report.json").read_text())
        assert rep["ici_free"]["pass"]
        assert rep["crest"] == pytest.approx(crest_cost(np.array(ZETA16)))
        assert 0 < rep["frame_papr_db"] < 15
        assert sum(rep["cross_corr_histogram"].values()) > 0
        assert (only(tmp_path, "evaluate-") / "psd.csv").exists()

    def test_all_ones(self, tmp_path):
        p = tmp_path / "ones.json"
        save_code(build_code(np.ones(16)), p, "manual", None, None)
        assert run(tmp_path, "evaluate", str(p), "--intervals", "60") == 0
        rep = json.loads((only(tmp_path, "evaluate-") / "report.json").read_text())
        assert rep["ici_free"]["pass"]

    def test_violating_gains(self, tmp_path):
        g = [[1.0, 0.0]] * 8  # real gains on every subcarrier break the quadrature rule
        p = tmp_path / "gamma.json"
        p.write_text(json.dumps({"gamma": g}))
        assert run(tmp_path, "evaluate", str(p)) == 0
        rep = json.loads((only(tmp_path, "evaluate-") / "report.json").read_text())
        assert not rep["ici_free"]["pass"]
        assert rep["ici_free"]["residual"] == pytest.approx(2.0)


def test_synth_then_psd(tmp_path, code16):
    assert run(tmp_path, "synth", str(code16), "--L", "16", "--intervals", "80",
               "--mode", "biorth", "--M", "4") == 0
    d = only(tmp_path, "synth-")
    assert (d / "frame.json").exists()
    assert run(tmp_path, "psd", str(d / "tx.iq"), "--segment", "64") == 0
    rows = np.loadtxt(only(tmp_path, "psd-") / "psd.csv", delimiter=",", skiprows=1)
    assert rows.shape[1] == 2 and np.all(rows[:, 1] >= 0)


def test_clip_sweep(tmp_path, code16):
    assert run(tmp_path, "clip-sweep", str(code16), "--L", "16", "--M", "4",
               "--intervals", "120", "--mu", "4", "6") == 0
    text = (only(tmp_path, "clip-sweep-") / "clip_sweep.csv").read_text().splitlines()
    assert text[0].startswith("mu_db") and len(text) == 3


def test_simulate_is_reproducible(tmp_path, code16):
    cfg = tmp_path / "s.conf"
    cfg.write_text(f"waveform.N = 8\ncode = {code16.name}\nebn0_grid_db = [1, 3]\n"
                   "frame_intervals = 200\nmax_symbols = 20000\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "simulate", str(cfg), "--seed", "5"]) == 0
    assert main(["--out", str(b), "simulate", str(cfg), "--seed", "5"]) == 0
    ca = (only(a, "simulate-") / "results.csv").read_bytes()
    cb = (only(b, "simulate-") / "results.csv").read_bytes()
    assert ca == cb
    # a different seed lands in a different directory
    assert main(["--out", str(a), "simulate", str(cfg), "--seed", "6"]) == 0
    assert len(list(a.iterdir())) == 2


def test_output_root_from_env(tmp_path, monkeypatch, code16):
    monkeypatch.setenv("OFMTSS_OUTPUT_ROOT", str(tmp_path / "env"))
    assert main(["oracle-search", "--L", "4"]) == 0
    assert any((tmp_path / "env").iterdir())


def test_bundled_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    from ofmtss.simlab import ExperimentConfig
    for p in sorted(root.glob("*.conf")):
        m = parse_config_text(p.read_text())
        m["code"] = str(root / m["code"])
        cfg = ExperimentConfig.from_mapping(m)
        assert cfg.waveform.L == 128
