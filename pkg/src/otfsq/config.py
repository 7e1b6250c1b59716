"""Experiment configuration: defaults, key=value config files, CLI overrides.

Config files are line-oriented ``key = value`` text; ``#`` starts a comment.
List-valued keys take comma-separated entries. Every key can also be set by
a CLI flag of the same name (see ``otfsq --help``).

Keys
----
m, n                 grid size (subcarriers x time slots); defaults 32 x 8
p                    number of channel paths (default 6)
l_max, k_max         maximum delay / Doppler taps (defaults 14 / 6)
constellation        symbol alphabet (qpsk)
bits                 ADC depths, integers or "inf" (default "3")
snr_db               SNR grid in dB (default "0,4,8,12,16")
algorithms           subset of gec_sr_fast, gec_sr_dense, gamp, lmmse
trials               Monte Carlo trials per point (default 50)
master_seed          base seed; per-trial streams are spawned from it
workers              process-pool size for trials (default 1)
out                  output CSV path
max_iters, damping, stop_tol, v_min, v_max
                     detector loop controls (gamp_damping applies to GAMP,
                     default 0.7; other iterative detectors use damping)
step_override        fixed quantizer step, bypassing the power-scaled table
trace_snr_db         SNR for the iteration-trace command (default 12)
bench_mn             grid sizes for the fast-path benchmark ladder
bench_dense_mn       grid sizes for the dense benchmark ladder
bench_reps           timing repetitions per size (median is reported)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .detectors import DetectorConfig

__all__ = ["ExperimentConfig", "parse_config_file", "ALGORITHMS"]

ALGORITHMS = ("gec_sr_fast", "gec_sr_dense", "gamp", "lmmse")


def _parse_bits(text: str) -> tuple:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok in ("inf", "infinite", "none"):
            out.append(None)
        else:
            out.append(int(tok))
    return tuple(out)


def _parse_float_list(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _parse_int_list(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _parse_str_list(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    m: int = 32
    n: int = 8
    p: int = 6
    l_max: int = 14
    k_max: int = 6
    constellation: str = "qpsk"
    bits: tuple = (3,)
    snr_db: tuple = (0.0, 4.0, 8.0, 12.0, 16.0)
    algorithms: tuple = ("gec_sr_fast", "gamp", "lmmse")
    trials: int = 50
    master_seed: int = 1234
    workers: int = 1
    out: str = "results.csv"
    max_iters: int = 20
    damping: float = 0.8
    gamp_damping: float = 0.7
    stop_tol: float = 1e-8
    v_min: float = 1e-12
    v_max: float = 1e12
    step_override: float | None = None
    trace_snr_db: float = 12.0
    bench_mn: tuple = (256, 1024, 4096, 16384)
    bench_dense_mn: tuple = (256, 1024)
    bench_reps: int = 3

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db:
            raise ValueError("snr_db must be nonempty")
        if not self.bits:
            raise ValueError("bits must be nonempty")
        if self.l_max >= self.m * self.n / 2:
            raise ValueError("l_max must be < MN/2")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def detector_config(self, algorithm: str) -> DetectorConfig:
        mode = "dense" if algorithm == "gec_sr_dense" else "fast"
        damping = self.gamp_damping if algorithm == "gamp" else self.damping
        return DetectorConfig(
            max_iters=self.max_iters,
            damping=damping,
            v_min=self.v_min,
            v_max=self.v_max,
            mode=mode,
            stop_tol=self.stop_tol,
        )

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


_PARSERS = {
    "m": int,
    "n": int,
    "p": int,
    "l_max": int,
    "k_max": int,
    "constellation": str,
    "bits": _parse_bits,
    "snr_db": _parse_float_list,
    "algorithms": _parse_str_list,
    "trials": int,
    "master_seed": int,
    "workers": int,
    "out": str,
    "max_iters": int,
    "damping": float,
    "gamp_damping": float,
    "stop_tol": float,
    "v_min": float,
    "v_max": float,
    "step_override": float,
    "trace_snr_db": float,
    "bench_mn": _parse_int_list,
    "bench_dense_mn": _parse_int_list,
    "bench_reps": int,
}


def parse_config_file(path: str) -> dict:
    """Read a key = value config file into typed override values."""
    overrides: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _PARSERS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = _PARSERS[key](value)
    return overrides
