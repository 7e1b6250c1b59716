import json

import numpy as np
import pytest

import otfsq.sim as sim
from otfsq.cli import main
from otfsq.config import ExperimentConfig, parse_config_file
from otfsq.detectors import DetectionResult
from otfsq.modem import qpsk
from otfsq.sim import (
    compute_ber,
    compute_nmse,
    compute_ser,
    run_bench,
    run_iteration_trace,
    run_sweep,
    run_trial,
)
from otfsq.validate import ALL_CHECKS, check_banded_inverse

TINY = dict(m=16, n=4, p=4, l_max=3, k_max=2, trials=3,
            snr_db=(12.0,), bits=(3,), algorithms=("gec_sr_fast", "gamp"))


class TestMetrics:
    def test_perfect_estimate(self):
        x = np.array([1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert compute_nmse(x, x) == 0.0
        assert compute_ser(x, x, qpsk()) == 0.0

    def test_zero_estimate_is_unit_nmse(self):
        x = np.array([1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert np.isclose(compute_nmse(np.zeros(2), x), 1.0)

    def test_negated_qpsk_all_symbol_errors(self):
        x = np.array([1 + 1j, -1 + 1j, 1 - 1j]) / np.sqrt(2)
        assert compute_ser(-x, x, qpsk()) == 1.0

    def test_ber_counts_gray_bits(self):
        const = qpsk()
        x = np.array([(1 + 1j), (1 - 1j)]) / np.sqrt(2)   # bits 00, 01
        x_hat = np.array([(1 + 1j), (1 + 1j)]) / np.sqrt(2)  # bits 00, 00
        assert np.isclose(compute_ber(x_hat, np.array([0, 0, 0, 1]), const), 0.25)

    def test_zero_norm_reference_rejected(self):
        with pytest.raises(ValueError):
            compute_nmse(np.ones(3), np.zeros(3))


class TestRunTrial:
    def test_deterministic_records(self):
        cfg = ExperimentConfig(**TINY)
        rec1 = run_trial(cfg, 0)
        rec2 = run_trial(cfg, 0)
        for a, b in zip(rec1, rec2):
            assert (a.nmse, a.ser, a.ber, a.iters_run, a.failed) == \
                   (b.nmse, b.ser, b.ber, b.iters_run, b.failed)

    def test_record_cardinality(self):
        cfg = ExperimentConfig(**{**TINY, "snr_db": (0.0, 8.0), "bits": (1, 3)})
        assert len(run_trial(cfg, 1)) == 2 * 2 * 2

    def test_noiseless_limit_zero_ser(self):
        cfg = ExperimentConfig(m=16, n=4, p=4, l_max=3, k_max=2, trials=1,
                               snr_db=(60.0,), bits=(None,), algorithms=("gec_sr_fast",))
        rec = run_trial(cfg, 0)[0]
        assert rec.ser == 0.0
        assert rec.ber == 0.0

    def test_trials_differ_across_indices(self):
        cfg = ExperimentConfig(**TINY)
        r0 = run_trial(cfg, 0)[0]
        r1 = run_trial(cfg, 1)[0]
        assert r0.nmse != r1.nmse


class TestSweep:
    def test_row_cardinality_and_schema(self, tmp_path):
        out = tmp_path / "sweep.csv"
        cfg = ExperimentConfig(**{**TINY, "snr_db": tuple(np.linspace(0, 16, 5)),
                                  "bits": (3,), "algorithms": ("gec_sr_fast", "lmmse"),
                                  "trials": 2, "out": str(out)})
        rows = run_sweep(cfg)
        assert len(rows) == 10
        header = out.read_text().splitlines()[0]
        assert header == "snr_db,bits,algorithm,P,trials,nmse_db,ser,ber,mean_iters,runtime_ms,failures"
        assert (tmp_path / "sweep.csv.meta.json").exists()
        assert (tmp_path / "sweep.csv.gp").exists()

    def test_rerun_identical_except_runtime(self, tmp_path):
        def strip_runtime(path):
            lines = path.read_text().splitlines()
            cols = lines[0].split(",")
            idx = cols.index("runtime_ms")
            return [",".join(v for i, v in enumerate(l.split(",")) if i != idx) for l in lines]

        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        cfg1 = ExperimentConfig(**{**TINY, "trials": 2, "out": str(out1)})
        cfg2 = ExperimentConfig(**{**TINY, "trials": 2, "out": str(out2)})
        run_sweep(cfg1)
        run_sweep(cfg2)
        assert strip_runtime(out1) == strip_runtime(out2)

    def test_failed_trials_excluded_and_counted(self, tmp_path, monkeypatch):
        def always_diverged(y, channel, quant, noise, constellation, config, x_true=None):
            return DetectionResult(
                x_soft=np.full(channel.n, np.inf + 0j), x_hard=np.zeros(channel.n),
                iters_run=1, diverged=True,
            )

        monkeypatch.setattr(sim, "gamp_detect", always_diverged)
        out = tmp_path / "f.csv"
        cfg = ExperimentConfig(**{**TINY, "trials": 3, "out": str(out)})
        rows = run_sweep(cfg)
        gamp_row = next(r for r in rows if r["algorithm"] == "gamp")
        gec_row = next(r for r in rows if r["algorithm"] == "gec_sr_fast")
        assert gamp_row["failures"] == 3 and np.isnan(gamp_row["nmse_db"])
        assert gec_row["failures"] == 0 and np.isfinite(gec_row["nmse_db"])

    def test_curve_shape_monotone_decreasing(self, tmp_path):
        # end-to-end: NMSE improves monotonically with SNR for the proposed
        # detector at desk scale
        out = tmp_path / "shape.csv"
        cfg = ExperimentConfig(m=16, n=4, p=4, l_max=3, k_max=2, trials=20,
                               snr_db=(0.0, 8.0, 16.0), bits=(3,),
                               algorithms=("gec_sr_fast",), out=str(out))
        rows = run_sweep(cfg)
        curve = [r["nmse_db"] for r in rows]
        assert curve[0] > curve[1] > curve[2]

    def test_worker_pool_matches_serial(self, tmp_path):
        out1, out2 = tmp_path / "s.csv", tmp_path / "w.csv"
        base = {**TINY, "trials": 2}
        rows_serial = run_sweep(ExperimentConfig(**{**base, "out": str(out1)}))
        rows_pool = run_sweep(ExperimentConfig(**{**base, "workers": 2, "out": str(out2)}))
        for a, b in zip(rows_serial, rows_pool):
            assert a["nmse_db"] == b["nmse_db"]
            assert a["failures"] == b["failures"]


class TestIterationTrace:
    def test_trace_layout_and_flatness(self, tmp_path):
        out = tmp_path / "trace.csv"
        cfg = ExperimentConfig(**{**TINY, "bits": (None,), "trials": 3,
                                  "algorithms": ("gec_sr_fast", "lmmse"),
                                  "max_iters": 10, "out": str(out)})
        rows = run_iteration_trace(cfg)
        # lmmse skipped; gec trace padded out to max_iters
        assert {r["algorithm"] for r in rows} == {"gec_sr_fast"}
        assert [r["iteration"] for r in rows] == list(range(1, 11))
        # early-stopped traces are padded with their final value: flat tail
        assert np.isclose(rows[-1]["nmse_db"], rows[-2]["nmse_db"], atol=0.05)

    def test_uses_trace_snr(self, tmp_path):
        out = tmp_path / "trace2.csv"
        cfg = ExperimentConfig(**{**TINY, "trials": 1, "algorithms": ("gec_sr_fast",),
                                  "trace_snr_db": 6.0, "out": str(out)})
        run_iteration_trace(cfg)
        meta = json.loads((tmp_path / "trace2.csv.meta.json").read_text())
        assert meta["trace_snr_db"] == 6.0


class TestBench:
    def test_ladder_monotone_and_positive(self, tmp_path):
        out = tmp_path / "bench.csv"
        cfg = ExperimentConfig(m=32, n=8, p=4, l_max=14, k_max=6,
                               bench_mn=(256, 1024), bench_dense_mn=(128, 256),
                               bench_reps=2, out=str(out))
        result = run_bench(cfg)
        rows = result["rows"]
        fast = [r["runtime_ms"] for r in rows if r["mode"] == "fast"]
        dense = [r["runtime_ms"] for r in rows if r["mode"] == "dense"]
        assert all(t > 0 for t in fast + dense)
        assert fast == sorted(fast)
        assert dense == sorted(dense)

    def test_rejects_bad_sizes(self, tmp_path):
        cfg = ExperimentConfig(m=32, n=8, bench_mn=(100,), out=str(tmp_path / "x.csv"))
        with pytest.raises(ValueError):
            run_bench(cfg)


class TestValidate:
    def test_fresh_checkout_passes(self):
        for check in ALL_CHECKS:
            result = check()
            assert result.ok, f"{result.name} failed: max_err={result.max_err}"

    def test_at_least_five_families(self):
        assert len(ALL_CHECKS) >= 5

    def test_perturbed_band_entry_detected(self):
        assert check_banded_inverse().ok
        assert not check_banded_inverse(perturb=1e-3).ok


class TestConfig:
    def test_defaults_match_reference_setup(self):
        cfg = ExperimentConfig()
        assert (cfg.m, cfg.n, cfg.l_max, cfg.k_max) == (32, 8, 14, 6)
        assert cfg.constellation == "qpsk"

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("m = 16\nn = 4\nbits = 3, inf\n# comment\ntrials = 7\n")
        overrides = parse_config_file(str(path))
        assert overrides == {"m": 16, "n": 4, "bits": (3, None), "trials": 7}
        cfg = ExperimentConfig(l_max=3).with_overrides(**overrides)
        assert cfg.bits == (3, None) and cfg.trials == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("turbo = yes\n")
        with pytest.raises(ValueError):
            parse_config_file(str(path))

    def test_invalid_settings_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(trials=0)
        with pytest.raises(ValueError):
            ExperimentConfig(snr_db=())
        with pytest.raises(ValueError):
            ExperimentConfig(algorithms=("magic",))
        with pytest.raises(ValueError):
            ExperimentConfig(m=4, n=4, l_max=8)

    def test_detector_config_per_algorithm(self):
        cfg = ExperimentConfig(damping=0.85, gamp_damping=0.6)
        assert cfg.detector_config("gec_sr_fast").mode == "fast"
        assert cfg.detector_config("gec_sr_dense").mode == "dense"
        assert cfg.detector_config("gec_sr_fast").damping == 0.85
        assert cfg.detector_config("gamp").damping == 0.6


class TestCli:
    def test_sweep_command(self, tmp_path):
        out = tmp_path / "cli.csv"
        code = main(["sweep", "--m", "16", "--n", "4", "--p", "4", "--l_max", "3",
                     "--k_max", "2", "--trials", "2", "--snr_db", "12",
                     "--algorithms", "gec_sr_fast", "--seed", "3", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_seed_flag_changes_results(self, tmp_path):
        outs = []
        for seed in ("1", "2"):
            out = tmp_path / f"s{seed}.csv"
            main(["sweep", "--m", "16", "--n", "4", "--p", "4", "--l_max", "3",
                  "--k_max", "2", "--trials", "2", "--snr_db", "12",
                  "--algorithms", "lmmse", "--seed", seed, "--out", str(out)])
            outs.append(out.read_text())
        assert outs[0] != outs[1]

    def test_validate_command(self, tmp_path):
        out = tmp_path / "report.json"
        assert main(["validate", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["passed"] is True
        assert len(report["families"]) >= 5

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense = 1\n")
        assert main(["sweep", "--config", str(bad)]) == 2

    def test_missing_config_file_exits_2(self):
        assert main(["sweep", "--config", "/nonexistent/cfg.txt"]) == 2
