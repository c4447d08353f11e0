import csv
import json

import numpy as np
import pytest

from robustgate import cli
from robustgate.config import DEFAULTS, ExperimentConfig, RunRecord, load_config, parse_override, set_path
from robustgate.errors import ValidationError

FAST = ["--override", "scp.max_iter=15", "--override", "train_counts=[2,2]", "--override", "eval_counts=[3,3]",
        "--override", "heatmap_resolution=[3,3]"]


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([name if name in cli.COMMANDS else name.split("_")[0], "--out", str(out), *args])
    return code, out


def read_csv(path):
    raw = path.read_bytes()
    rows = list(csv.reader(raw.decode().splitlines()))
    return raw, rows


class TestConfig:
    def test_defaults_validate(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.scp.max_iter == 20000 and cfg.gate == "identity" and cfg.box.half_widths == (0.01, 0.2)
        assert cfg.raw["schema_version"] == 1 and set(cfg.raw) == set(DEFAULTS)

    @pytest.mark.parametrize("doc", [
        {"N": 0}, {"N": 2.5}, {"T": -1}, {"gate": "cnot"}, {"bogus": 1}, {"boxes": []}, {"boxes": ["D9"]},
        {"half_widths": [-0.1, 0.0]}, {"eval_counts": [1, 5]}, {"scp": {"grow": 0.5}}, {"scp": {"nope": 1}},
        {"constraints": {"slew": -1}}, {"noise": {"sigmas": []}}, {"batch": [{"gate": "x"}]}, {"seed": -1},
        {"schema_version": 2}, {"nominal_target": 1.0},
    ])
    def test_invalid(self, doc):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict(doc)

    def test_box_labels(self):
        cfg = ExperimentConfig.from_dict({"boxes": ["D1", "D3"]})
        assert cfg.boxes == {"D1": (0.001, 0.02), "D3": (0.001, 0.1)}

    def test_overrides(self):
        assert parse_override("scp.max_iter=5") == ("scp.max_iter", 5)
        assert parse_override("gate=phase") == ("gate", "phase")
        with pytest.raises(ValidationError):
            parse_override("novalue")
        doc = {"scp": 3}
        with pytest.raises(ValidationError):
            set_path(doc, "scp.max_iter", 1)
        doc = {}
        set_path(doc, "a.b.c", [1])
        assert doc == {"a": {"b": {"c": [1]}}}

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"N": 6, "scp": {"max_iter": 4}}))
        cfg = load_config(p, ["scp.rho0=0.05"], seed=3, out=tmp_path / "o")
        assert (cfg.N, cfg.scp.max_iter, cfg.scp.rho0, cfg.seed) == (6, 4, 0.05, 3)
        p.write_text("{not json")
        with pytest.raises(ValidationError):
            load_config(p)

    def test_record_round_trip(self):
        rec = RunRecord("robust", {"N": 10}, [{"iteration": 0, "predicted": None}], {"x": 1.5}, {"total": 0.1}, ["a"])
        assert RunRecord.from_json(rec.to_json()) == rec
        with pytest.raises(ValueError):
            RunRecord("x", {"v": float("inf")}).to_json()


class TestCommands:
    def test_nominal_outputs(self, tmp_path):
        code, out = run(tmp_path, "nominal")
        assert code == 0
        raw, rows = read_csv(out / "field.csv")
        assert raw.count(b"\r\n") == len(rows) == 11 and rows[0] == cli.FIELD_HEADER
        _, hist = read_csv(out / "history.csv")
        assert hist[0] == cli.HISTORY_HEADER and {r[1] for r in hist[1:]} == {"nominal"}
        rec = RunRecord.from_json((out / "report.json").read_text())
        assert rec.report["nominal_fidelity"] >= 0.999
        assert json.loads((out / "config.json").read_text()) == rec.config
        t = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
        np.testing.assert_allclose(t[:, 1] - t[:, 0], 0.2)

    def test_robust_outputs_and_determinism(self, tmp_path):
        code, a = run(tmp_path, "robust_a", *FAST)
        assert code == 0
        code, b = run(tmp_path, "robust_b", *FAST)
        for name, header in [("field.csv", cli.FIELD_HEADER), ("history.csv", cli.HISTORY_HEADER),
                             ("heatmap.csv", cli.HEATMAP_HEADER), ("table.csv", cli.TABLE_HEADER)]:
            raw, rows = read_csv(a / name)
            assert rows[0] == header
            assert raw == (b / name).read_bytes()
        _, heat = read_csv(a / "heatmap.csv")
        assert len(heat) == 10
        hist = read_csv(a / "history.csv")[1]
        scp = [r for r in hist[1:] if r[1] == "scp"]
        assert len(scp) == 16 and all(r[5] in "01" for r in scp)

    def test_batch(self, tmp_path):
        code, out = run(tmp_path, "robust", *FAST, "--override",
                        'batch=[{"gate":"hadamard"},{"gate":"phase","N":8}]')
        assert code == 0
        _, table = read_csv(out / "table.csv")
        assert [r[:2] for r in table[1:]] == [["hadamard", "10"], ["phase", "8"]]

    def test_tradeoff(self, tmp_path):
        code, out = run(tmp_path, "tradeoff", *FAST, "--override", "stage_scp.max_iter=5",
                        "--override", 'boxes=["D1"]')
        assert code == 0
        _, rows = read_csv(out / "tradeoff.csv")
        assert rows[0] == cli.TRADEOFF_HEADER and rows[1][1] == "inf" and len(rows) > 2
        assert json.loads((out / "report.json").read_text())["report"]["series"][0]["gamma"][0] is None

    def test_noise(self, tmp_path):
        code, out = run(tmp_path, "noise", "--override", "half_widths=[0,0]", "--override",
                        'noise={"sigmas":[0.001],"tau_over_T":[0.1,10],"mc_paths":50}')
        assert code == 0
        _, rows = read_csv(out / "noise.csv")
        assert rows[0] == cli.NOISE_HEADER and len(rows) == 3
        wna, mc = float(rows[1][2]), float(rows[1][3])
        assert abs(wna - mc) < 1.0

    def test_config_error_exit(self, tmp_path, capsys):
        code, out = run(tmp_path, "nominal", "--override", "N=0")
        assert code == 2 and not out.exists()
        assert "invalid configuration" in capsys.readouterr().err

    def test_optimization_error_exit(self, tmp_path):
        code, _ = run(tmp_path, "nominal", "--override", "nominal_max_iter=1", "--override", "nominal_target=0.9999999")
        assert code == 3

    def test_io_error_exit(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["nominal", "--out", str(blocker / "sub")]) == 4

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["nominal", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 4

    def test_fmt(self):
        assert cli.fmt(True) == "1" and cli.fmt(np.bool_(False)) == "0"
        assert float(cli.fmt(0.1 + 0.2)) == 0.1 + 0.2


@pytest.mark.parametrize("name", ["robust_gates", "tradeoff", "noise"])
def test_shipped_configs_validate(name):
    from pathlib import Path
    load_config(Path(__file__).parents[1] / "configs" / f"{name}.json")
