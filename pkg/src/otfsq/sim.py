"""Monte Carlo trial engine, metrics, and the sweep/trace/bench drivers.

Every trial derives its own RNG stream from (master_seed, trial_index) via
``numpy.random.SeedSequence`` spawn keys, so results are reproducible and
independent of worker scheduling. Within a trial, all (snr, bits, algorithm)
combinations consume the identical (channel, symbols, noise direction)
tuple: comparisons are paired.

SNR convention: SNR = E|z|^2 / sigma^2 with E|z|^2 = 1 by the 1/P gain
normalisation and unit-energy symbols, so sigma^2 = 10^(-snr_db/10). The
quantizer step is chosen for the model pre-ADC power (1 + sigma^2)/2 per
real dimension (ideal AGC), unless ``step_override`` pins it.

Outputs are UTF-8 CSV files with a header row, a deterministic JSON metadata
sidecar (<out>.meta.json), and a gnuplot companion script (<out>.gp). Only
the runtime_ms column varies between identical runs.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from . import __version__
from .banded import assemble_gram, assemble_psi, factorize, solve, trace_inverse
from .channel import OtfsDims, build_h0, draw_channel
from .config import ExperimentConfig
from .detectors import DetectionError, gamp_detect, gec_sr_detect, lmmse_detect
from .modem import get_constellation, hard_demap, modulate
from .quantizer import NoiseSpec, QuantizerSpec, choose_step, quantize

__all__ = [
    "TrialRecord",
    "run_trial",
    "run_sweep",
    "run_iteration_trace",
    "run_bench",
    "compute_nmse",
    "compute_ser",
    "compute_ber",
    "SWEEP_COLUMNS",
]

SWEEP_COLUMNS = [
    "snr_db", "bits", "algorithm", "P", "trials",
    "nmse_db", "ser", "ber", "mean_iters", "runtime_ms", "failures",
]

_FAIL_NMSE = 1e3  # ratios beyond this count as a failed (divergent) trial


@dataclass
class TrialRecord:
    seed: int
    trial_index: int
    snr_db: float
    bits: int | None
    algorithm: str
    num_paths: int
    nmse: float
    ser: float
    ber: float
    iters_run: int
    runtime_ms: float
    failed: bool = False
    per_iter_nmse: list | None = None


def compute_nmse(x_hat: np.ndarray, x: np.ndarray) -> float:
    """||x_hat - x||^2 / ||x||^2 (linear ratio; report dB downstream)."""
    x = np.asarray(x)
    denom = float(np.sum(np.abs(x) ** 2))
    if denom == 0.0:
        raise ValueError("reference vector has zero norm")
    return float(np.sum(np.abs(np.asarray(x_hat) - x) ** 2) / denom)


def compute_ser(x_hat: np.ndarray, x: np.ndarray, constellation) -> float:
    idx_hat = constellation.nearest_index(x_hat)
    idx = constellation.nearest_index(x)
    return float(np.mean(idx_hat != idx))


def compute_ber(x_hat: np.ndarray, bits_tx: np.ndarray, constellation) -> float:
    bits_rx = hard_demap(x_hat, constellation)
    return float(np.mean(bits_rx != np.asarray(bits_tx)))


def _trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_index,))
    )


def _quantizer_for(bits: int | None, sigma2: float, cfg: ExperimentConfig) -> QuantizerSpec:
    if bits is None:
        return QuantizerSpec.infinite()
    step = choose_step(bits, (1.0 + sigma2) / 2.0, override=cfg.step_override)
    return QuantizerSpec(bits=bits, step=step)


def run_trial(cfg: ExperimentConfig, trial_index: int, keep_traces: bool = False) -> list[TrialRecord]:
    """One seeded trial across every (snr, bits, algorithm) combination."""
    rng = _trial_rng(cfg.master_seed, trial_index)
    dims = OtfsDims(cfg.m, cfg.n)
    const = get_constellation(cfg.constellation)
    n = dims.mn

    channel = draw_channel(rng, cfg.p, cfg.l_max, cfg.k_max)
    op = build_h0(channel, dims)
    bits_tx = rng.integers(0, 2, size=n * const.bits_per_symbol)
    x = modulate(bits_tx, const)
    z = op.apply(x)
    w_unit = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)

    records: list[TrialRecord] = []
    for snr_db in cfg.snr_db:
        sigma2 = 10.0 ** (-snr_db / 10.0)
        noise = NoiseSpec(sigma2)
        w = np.sqrt(sigma2) * w_unit
        for bits in cfg.bits:
            spec = _quantizer_for(bits, sigma2, cfg)
            y = quantize(z + w, spec)
            for alg in cfg.algorithms:
                det_cfg = cfg.detector_config(alg)
                t0 = time.perf_counter()
                failed = False
                result = None
                try:
                    if alg in ("gec_sr_fast", "gec_sr_dense"):
                        result = gec_sr_detect(y, op, spec, noise, const, det_cfg, x_true=x)
                    elif alg == "gamp":
                        result = gamp_detect(y, op, spec, noise, const, det_cfg, x_true=x)
                    elif alg == "lmmse":
                        result = lmmse_detect(y, op, noise, const)
                except DetectionError:
                    failed = True
                elapsed_ms = (time.perf_counter() - t0) * 1e3
                if failed:
                    rec = TrialRecord(
                        seed=cfg.master_seed, trial_index=trial_index, snr_db=snr_db,
                        bits=bits, algorithm=alg, num_paths=cfg.p,
                        nmse=float("nan"), ser=float("nan"), ber=float("nan"),
                        iters_run=0, runtime_ms=elapsed_ms, failed=True,
                    )
                else:
                    nmse = compute_nmse(result.x_soft, x)
                    failed = bool(result.diverged or not np.isfinite(nmse) or nmse > _FAIL_NMSE)
                    rec = TrialRecord(
                        seed=cfg.master_seed, trial_index=trial_index, snr_db=snr_db,
                        bits=bits, algorithm=alg, num_paths=cfg.p,
                        nmse=nmse,
                        ser=compute_ser(result.x_soft, x, const),
                        ber=compute_ber(result.x_soft, bits_tx, const),
                        iters_run=result.iters_run, runtime_ms=elapsed_ms, failed=failed,
                        per_iter_nmse=(list(result.per_iter_nmse) if keep_traces and result.per_iter_nmse else None),
                    )
                records.append(rec)
    return records


def _run_all_trials(cfg: ExperimentConfig, keep_traces: bool = False) -> list[TrialRecord]:
    worker = partial(run_trial, cfg, keep_traces=keep_traces)
    if cfg.workers == 1:
        batches = [worker(t) for t in range(cfg.trials)]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            batches = list(pool.map(worker, range(cfg.trials), chunksize=1))
    return [rec for batch in batches for rec in batch]


def _bits_label(bits: int | None) -> str:
    return "inf" if bits is None else str(bits)


def aggregate_sweep(cfg: ExperimentConfig, records: list[TrialRecord]) -> list[dict]:
    rows = []
    for snr_db in cfg.snr_db:
        for bits in cfg.bits:
            for alg in cfg.algorithms:
                group = [
                    r for r in records
                    if r.snr_db == snr_db and r.bits == bits and r.algorithm == alg
                ]
                good = [r for r in group if not r.failed]
                failures = len(group) - len(good)
                if good:
                    nmse_db = 10.0 * np.log10(np.mean([r.nmse for r in good]))
                    ser = float(np.mean([r.ser for r in good]))
                    ber = float(np.mean([r.ber for r in good]))
                    iters = float(np.mean([r.iters_run for r in good]))
                    rt = float(np.mean([r.runtime_ms for r in good]))
                else:
                    nmse_db = ser = ber = iters = rt = float("nan")
                rows.append({
                    "snr_db": snr_db, "bits": _bits_label(bits), "algorithm": alg,
                    "P": cfg.p, "trials": len(group), "nmse_db": nmse_db,
                    "ser": ser, "ber": ber, "mean_iters": iters,
                    "runtime_ms": rt, "failures": failures,
                })
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _write_metadata(path: str, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    import scipy

    meta = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        "otfsq_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "snr_definition": "SNR = E|z|^2 / sigma^2 with E|z|^2 = 1 (unit-energy symbols, 1/P gains)",
        "nmse_definition": "||x_hat - x||^2 / ||x||^2, dB of the trial-averaged ratio",
    }
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_gnuplot(path: str, csv_path: str, rows: list[dict], xcol: str, series_cols: tuple[str, ...],
                   ycol: str = "nmse_db", logx: bool = False, logy: bool = False) -> None:
    """Self-contained gnuplot script with inline data blocks, one per series."""
    series: dict[tuple, list] = {}
    for row in rows:
        key = tuple(row[c] for c in series_cols)
        series.setdefault(key, []).append((row[xcol], row[ycol]))
    lines = [
        f"# generated by otfsq from {csv_path}",
        "set datafile separator ','",
        f"set xlabel '{xcol}'",
        f"set ylabel '{ycol}'",
        "set key outside",
        "set grid",
    ]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
    names = []
    for i, (key, pts) in enumerate(series.items()):
        name = f"$series{i}"
        names.append((name, "_".join(str(k) for k in key)))
        lines.append(f"{name} << EOD")
        for xv, yv in sorted(pts, key=lambda t: t[0]):
            lines.append(f"{_fmt(xv)},{_fmt(yv)}")
        lines.append("EOD")
    plot_parts = [
        f"{name} using 1:2 with linespoints title '{label}'" for name, label in names
    ]
    lines.append("plot " + ", \\\n     ".join(plot_parts))
    lines.append("pause -1 'press enter'")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Monte Carlo SNR sweep; writes <out>, <out>.meta.json, and <out>.gp."""
    records = _run_all_trials(cfg)
    rows = aggregate_sweep(cfg, records)
    write_csv(cfg.out, SWEEP_COLUMNS, rows)
    _write_metadata(cfg.out + ".meta.json", cfg)
    _write_gnuplot(cfg.out + ".gp", cfg.out, rows, "snr_db", ("algorithm", "bits"))
    return rows


TRACE_COLUMNS = ["algorithm", "bits", "iteration", "nmse_db", "trials", "failures"]


def run_iteration_trace(cfg: ExperimentConfig) -> list[dict]:
    """Per-iteration NMSE at a fixed SNR, averaged over trials.

    Traces shorter than max_iters (early-stopped) are padded with their final
    value, so converged runs show up as flat lines. Non-iterative algorithms
    (lmmse) are skipped.
    """
    algs = tuple(a for a in cfg.algorithms if a != "lmmse")
    skipped = set(cfg.algorithms) - set(algs)
    if skipped:
        print(f"note: skipping non-iterative algorithms in iter-trace: {sorted(skipped)}")
    trace_cfg = cfg.with_overrides(algorithms=algs, snr_db=(cfg.trace_snr_db,))
    records = _run_all_trials(trace_cfg, keep_traces=True)
    rows = []
    for bits in trace_cfg.bits:
        for alg in algs:
            group = [r for r in records if r.bits == bits and r.algorithm == alg]
            good = [r for r in group if not r.failed and r.per_iter_nmse]
            failures = len(group) - len(good)
            if not good:
                continue
            padded = np.array([
                r.per_iter_nmse + [r.per_iter_nmse[-1]] * (cfg.max_iters - len(r.per_iter_nmse))
                for r in good
            ])
            mean_trace = 10.0 * np.log10(np.mean(padded, axis=0))
            for it, val in enumerate(mean_trace, start=1):
                rows.append({
                    "algorithm": alg, "bits": _bits_label(bits), "iteration": it,
                    "nmse_db": float(val), "trials": len(group), "failures": failures,
                })
    write_csv(cfg.out, TRACE_COLUMNS, rows)
    _write_metadata(cfg.out + ".meta.json", cfg, {"trace_snr_db": cfg.trace_snr_db})
    _write_gnuplot(cfg.out + ".gp", cfg.out, rows, "iteration", ("algorithm", "bits"))
    return rows


BENCH_COLUMNS = ["mode", "mn", "runtime_ms"]


def _bench_once(cfg: ExperimentConfig, mn: int, mode: str) -> float:
    if mn % cfg.m:
        raise ValueError(f"bench sizes must be multiples of m={cfg.m}")
    dims = OtfsDims(cfg.m, mn // cfg.m)
    rng = _trial_rng(cfg.master_seed, mn)
    channel = draw_channel(rng, cfg.p, cfg.l_max, cfg.k_max)
    op = build_h0(channel, dims)
    gram = assemble_gram(op)
    psi = assemble_psi(gram, 0.5, 1.0)
    rhs = rng.standard_normal(mn) + 1j * rng.standard_normal(mn)
    times = []
    dense = psi.to_dense() if mode == "dense" else None
    for rep in range(cfg.bench_reps + 1):
        if mode == "fast":
            t0 = time.perf_counter()
            factors = factorize(psi)
            solve(factors, rhs)
            trace_inverse(factors)
            elapsed = time.perf_counter() - t0
        else:
            # time the O(n^3) inversion itself, not the band-to-dense copy
            t0 = time.perf_counter()
            np.linalg.inv(dense)
            elapsed = time.perf_counter() - t0
        if rep > 0:  # first rep is warmup
            times.append(elapsed)
    return float(np.min(times) * 1e3)


def _loglog_slope(sizes, times_ms) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times_ms, float)), 1)[0])


def run_bench(cfg: ExperimentConfig) -> dict:
    """Wall-time ladders for the fast and dense inversion paths plus slopes."""
    rows = []
    fast_times = []
    for mn in cfg.bench_mn:
        t = _bench_once(cfg, mn, "fast")
        fast_times.append(t)
        rows.append({"mode": "fast", "mn": mn, "runtime_ms": t})
    dense_times = []
    for mn in cfg.bench_dense_mn:
        t = _bench_once(cfg, mn, "dense")
        dense_times.append(t)
        rows.append({"mode": "dense", "mn": mn, "runtime_ms": t})
    slopes = {
        "fast_slope": _loglog_slope(cfg.bench_mn, fast_times),
        "dense_slope": _loglog_slope(cfg.bench_dense_mn, dense_times),
    }
    write_csv(cfg.out, BENCH_COLUMNS, rows)
    _write_metadata(cfg.out + ".meta.json", cfg, slopes)
    _write_gnuplot(cfg.out + ".gp", cfg.out, rows, "mn", ("mode",),
                   ycol="runtime_ms", logx=True, logy=True)
    print(f"fast-path log-log slope:  {slopes['fast_slope']:.3f} over MN={list(cfg.bench_mn)}")
    print(f"dense-path log-log slope: {slopes['dense_slope']:.3f} over MN={list(cfg.bench_dense_mn)}")
    return {"rows": rows, **slopes}
