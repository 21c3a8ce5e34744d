import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import scipy.stats

import spectrascan
from conftest import diag_matrix, make_run
from spectrascan import refdata, timelapse
from spectrascan.cli import main

SCHEMA_DIR = Path(spectrascan.__file__).parent / "schemas"


def validate(payload_path, schema_name):
    payload = json.loads(Path(payload_path).read_text())
    schema = json.loads((SCHEMA_DIR / f"{schema_name}.json").read_text())
    jsonschema.validate(payload, schema)
    return payload


def wave_run(tmp_path):
    """Three layers whose stable rank collapses at steps 2, 3, 4 respectively."""
    flat = diag_matrix([1.0, 1.0, 1.0, 1.0])
    collapsed = diag_matrix([1.0, 0.1, 0.1, 0.1])
    steps = [1, 2, 3, 4, 5]
    layer_matrices = {
        s: {(l, "Q"): (collapsed if s >= 2 + l else flat) for l in range(3)}
        for s in steps
    }
    return make_run(tmp_path, steps, layer_matrices)


def scan(tmp_path, out_name="log.csv"):
    root, manifest = wave_run(tmp_path)
    out = tmp_path / out_name
    code = main(
        ["scan", "--manifest", str(manifest), "--root", str(root),
         "--out", str(out), "--types", "Q"]
    )
    assert code == 0
    return out


class TestScan:
    def test_writes_complete_log(self, tmp_path):
        out = scan(tmp_path)
        log = timelapse.read_log_csv(str(out))
        assert len(log.records) == 15  # 5 steps x 3 layers x 1 type
        assert log.layer_count == 3
        srs = {r.step: r.stable_rank for r in log.records if r.layer == 0}
        assert srs[1] == pytest.approx(4.0)
        assert srs[5] == pytest.approx(1.03 / 1.0, rel=1e-6)

    def test_deterministic_bytes(self, tmp_path):
        a = scan(tmp_path, "a.csv").read_bytes()
        b = scan(tmp_path, "b.csv").read_bytes()
        assert a == b

    def test_threaded_matches_serial(self, tmp_path, monkeypatch):
        serial = scan(tmp_path, "serial.csv").read_bytes()
        monkeypatch.setenv("SPECTRA_THREADS", "4")
        threaded = scan(tmp_path, "threaded.csv").read_bytes()
        assert serial == threaded

    def test_missing_manifest_is_input_error(self, tmp_path):
        code = main(
            ["scan", "--manifest", str(tmp_path / "nope.json"),
             "--root", str(tmp_path), "--out", str(tmp_path / "x.csv")]
        )
        assert code == 2

    def test_missing_required_flag_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as ei:
            main(["scan", "--root", str(tmp_path)])
        assert ei.value.code == 1


class TestWave:
    def test_report_schema_and_fit(self, tmp_path):
        log = scan(tmp_path)
        out = tmp_path / "wave.json"
        assert main(["wave", "--log", str(log), "--out", str(out)]) == 0
        payload = validate(out, "wave_report")
        assert payload["onsets"] == {"0": 2, "1": 3, "2": 4}
        assert payload["fit"]["slope"] == pytest.approx(1.0)
        assert payload["fit"]["r2"] == pytest.approx(1.0)
        assert (tmp_path / "wave.png").exists()

    def test_no_plots(self, tmp_path):
        log = scan(tmp_path)
        out = tmp_path / "wave.json"
        assert main(["wave", "--log", str(log), "--out", str(out), "--no-plots"]) == 0
        assert not (tmp_path / "wave.png").exists()

    def test_missing_log_is_input_error(self, tmp_path):
        code = main(["wave", "--log", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o.json")])
        assert code == 2


class TestProfile:
    def test_outputs(self, tmp_path):
        log = scan(tmp_path)
        prefix = tmp_path / "prof"
        assert main(["profile", "--log", str(log), "--out-prefix", str(prefix)]) == 0
        payload = validate(prefix.with_suffix(".json"), "profile_report")
        assert payload["step"] == 5
        assert payload["layer_count"] == 3
        with open(prefix.with_suffix(".csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["layer"] for r in rows] == ["0", "1", "2"]
        assert (prefix.with_suffix(".png")).exists()

    def test_unknown_step_is_compute_error(self, tmp_path):
        log = scan(tmp_path)
        code = main(
            ["profile", "--log", str(log), "--step", "99",
             "--out-prefix", str(tmp_path / "p"), "--no-plots"]
        )
        assert code == 3


class TestScaling:
    def write_summary(self, tmp_path):
        path = tmp_path / "summary.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["L", "delta_alpha", "alpha_max", "peak_ratio", "wave_velocity"])
            for row in refdata.SCALING_SUMMARY:
                w.writerow(row)
        return path

    def test_reference_fit(self, tmp_path):
        summary = self.write_summary(tmp_path)
        out = tmp_path / "scaling.json"
        assert main(["scaling", "--summary", str(summary), "--out", str(out)]) == 0
        payload = validate(out, "scaling_report")
        assert payload["delta_alpha_fit"]["exponent"] == pytest.approx(0.26, abs=0.015)
        assert payload["alpha_max_fit"]["exponent"] == pytest.approx(0.30, abs=0.01)
        assert payload["peak_position_fit"]["slope"] == pytest.approx(-0.0375, abs=1e-6)
        assert payload["wave_velocity_summary"]["n"] == 3
        assert (tmp_path / "scaling.png").exists()

    def test_too_few_rows_is_compute_error(self, tmp_path):
        path = tmp_path / "short.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["L", "delta_alpha", "alpha_max", "peak_ratio"])
            w.writerow([8, 0.2, 0.4, 0.5])
        assert main(["scaling", "--summary", str(path), "--out", str(tmp_path / "o.json")]) == 3


class TestSimulate:
    def test_default_run(self, tmp_path):
        prefix = tmp_path / "sim"
        assert main(["simulate", "--out-prefix", str(prefix)]) == 0
        payload = validate(prefix.with_suffix(".json"), "prediction_report")
        assert payload["transient_sr_gradient"]
        assert payload["persistent_alpha_gradient"]
        assert payload["forward_wave"]
        with open(prefix.with_suffix(".csv"), newline="") as f:
            header = f.readline().strip()
        assert header == "time,layer,stable_rank,alpha"
        assert (prefix.with_suffix(".png")).exists()

    def test_params_file_and_noise_skips_report(self, tmp_path):
        params = tmp_path / "params.json"
        params.write_text(json.dumps({"steps": 50, "noise_sigma_R": 0.1}))
        prefix = tmp_path / "noisy"
        assert main(
            ["simulate", "--params", str(params), "--out-prefix", str(prefix), "--no-plots"]
        ) == 0
        assert prefix.with_suffix(".csv").exists()
        assert not prefix.with_suffix(".json").exists()

    def test_unstable_config_is_compute_error(self, tmp_path):
        params = tmp_path / "params.json"
        params.write_text(json.dumps({"dt": 100.0}))
        code = main(
            ["simulate", "--params", str(params),
             "--out-prefix", str(tmp_path / "x"), "--no-plots"]
        )
        assert code == 3


class TestPrunePlan:
    def write_profile(self, tmp_path, alphas):
        path = tmp_path / "profile.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["layer", "alpha"])
            for l, a in enumerate(alphas):
                w.writerow([l, a])
        return path

    def test_zone_aware_reference(self, tmp_path):
        prof = self.write_profile(tmp_path, refdata.LAYER_ABLATION_ALPHA["D16"])
        out = tmp_path / "plan.json"
        code = main(
            ["prune-plan", "--profile", str(prof), "--strategy", "zone-aware",
             "--k", "3", "--out", str(out)]
        )
        assert code == 0
        payload = validate(out, "prune_plan")
        assert payload["strategy"] == "ZONE_AWARE"
        assert payload["removed_layers"] == [9, 11, 13]
        assert payload["b"] == 2

    def test_last_n(self, tmp_path):
        prof = self.write_profile(tmp_path, [0.1] * 24)
        out = tmp_path / "plan.json"
        code = main(
            ["prune-plan", "--profile", str(prof), "--strategy", "last-n",
             "--k", "4", "--out", str(out)]
        )
        assert code == 0
        assert json.loads(out.read_text())["removed_layers"] == [20, 21, 22, 23]

    def test_magnitude_from_log(self, tmp_path):
        log = scan(tmp_path)
        out = tmp_path / "plan.json"
        code = main(
            ["prune-plan", "--log", str(log), "--strategy", "magnitude",
             "--k", "1", "--out", str(out)]
        )
        assert code == 0
        payload = validate(out, "prune_plan")
        # all layers collapsed by the last step share the same norm; tie
        # breaks to the lowest layer
        assert payload["removed_layers"] == [0]

    def test_infeasible_is_compute_error(self, tmp_path):
        prof = self.write_profile(tmp_path, [0.5, 0.1, 0.2, 0.3, 0.5])
        code = main(
            ["prune-plan", "--profile", str(prof), "--strategy", "zone-aware",
             "--k", "3", "--boundary", "1", "--out", str(tmp_path / "o.json")]
        )
        assert code == 3

    def test_no_input_is_usage_error(self, tmp_path):
        code = main(
            ["prune-plan", "--strategy", "zone-aware", "--k", "1",
             "--out", str(tmp_path / "o.json")]
        )
        assert code == 1

    def test_bad_strategy_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit) as ei:
            main(["prune-plan", "--strategy", "best-effort", "--k", "1",
                  "--out", str(tmp_path / "o.json")])
        assert ei.value.code == 1


class TestWarmup:
    def test_synthesizes_tensors(self, tmp_path):
        log_path = scan(tmp_path)
        out_dir = tmp_path / "init"
        assert main(
            ["warmup", "--log", str(log_path), "--out-dir", str(out_dir), "--seed", "3"]
        ) == 0
        meta = json.loads((out_dir / "warmup.json").read_text())
        assert meta == {"seed": 3, "scale": 1.0, "step": 5, "tensors": 3}
        from spectrascan.tensor_io import load_npy

        log = timelapse.read_log_csv(str(log_path))
        for l in range(3):
            t = load_npy(out_dir / f"layers.{l}.attn.q_proj.weight.npy")
            assert t.values.shape == (4, 4)
            (rec,) = [r for r in log.records if r.step == 5 and r.layer == l]
            # synthesized tensors are stored as float32
            assert np.linalg.norm(t.values) == pytest.approx(rec.frob_norm, rel=1e-6)

    def test_deterministic(self, tmp_path):
        log_path = scan(tmp_path)
        for name in ("a", "b"):
            main(["warmup", "--log", str(log_path), "--out-dir", str(tmp_path / name)])
        f = "layers.1.attn.q_proj.weight.npy"
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestSpearman:
    def test_matches_scipy(self, tmp_path, rng):
        x = rng.standard_normal(12)
        y = rng.standard_normal(12)
        data = tmp_path / "data.csv"
        with open(data, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["x", "y"])
            for a, b in zip(x, y):
                w.writerow([a, b])
        out = tmp_path / "corr.json"
        assert main(
            ["spearman", "--data", str(data), "--out", str(out), "--permutations", "2000"]
        ) == 0
        payload = validate(out, "rank_corr")
        assert payload["rho"] == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-12)

    def test_bad_csv_is_input_error(self, tmp_path):
        data = tmp_path / "data.csv"
        data.write_text("x,y\n1,notanumber\n")
        assert main(["spearman", "--data", str(data), "--out", str(tmp_path / "o.json")]) == 2
