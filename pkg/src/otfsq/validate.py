"""Self-check oracle families behind ``otfsq validate``.

Each family re-derives a quantity through an independent reference route
(dense accumulation, explicit Kronecker products, dense inversion, adaptive
quadrature, direct enumeration, scalar minimisation) and compares it against
the production path at a fixed tolerance. The same functions back the pytest
suite, so a fresh checkout and the CLI agree about what "passing" means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .banded import assemble_gram, assemble_psi, dense_inverse_oracle, factorize, solve, trace_inverse
from .channel import OtfsDims, build_h0, doppler_dft, doppler_dft_matrix, draw_channel
from .modem import get_constellation
from .quantizer import (
    GAUSSIAN_STEP_TABLE,
    NoiseSpec,
    QuantizerSpec,
    gaussian_optimal_step,
    interval_of,
    output_posterior_moments,
    quantize,
)

__all__ = [
    "CheckResult",
    "dense_h0_oracle",
    "quadrature_output_moments",
    "enumeration_prior_moments",
    "run_validate",
    "ALL_CHECKS",
]


@dataclass
class CheckResult:
    name: str
    ok: bool
    max_err: float
    tol: float
    detail: str = ""


# ---------------------------------------------------------------------------
# independent reference routes


def dense_h0_oracle(channel, dims: OtfsDims) -> np.ndarray:
    """H0 by explicit accumulation of permutation/diagonal matrix products."""
    n = dims.mn
    eye = np.eye(n, dtype=np.complex128)
    h0 = np.zeros((n, n), dtype=np.complex128)
    for path in channel.paths:
        pi_l = np.roll(eye, path.delay_tap, axis=0)
        delta_k = np.diag(np.exp(2j * np.pi * path.doppler_tap * np.arange(n) / n))
        h0 += path.gain * (pi_l @ delta_k)
    return h0


def quadrature_output_moments(y_re: float, mean: float, var: float, noise_var: float,
                              spec: QuantizerSpec) -> tuple[float, float]:
    """Adaptive-quadrature posterior moments for one real dimension.

    Integrates in the standardised variable u = (t - mean)/sqrt(var) so the
    integrand is well scaled for scipy's quad regardless of the cavity width.
    """
    a, b = interval_of(y_re, spec)
    sd = np.sqrt(var)
    ns = np.sqrt(max(noise_var, 1e-300))

    def like(t):
        return special.ndtr((b - t) / ns) - special.ndtr((a - t) / ns)

    def integrand(u, power):
        t = mean + sd * u
        return t**power * np.exp(-0.5 * u**2) * like(t)

    # subdivision hints: interval edges and their transition shoulders, which
    # can be far narrower than the prior scale
    pts = set()
    for edge in (a, b):
        if np.isfinite(edge):
            for t in (edge - 8 * ns, edge, edge + 8 * ns):
                u = (t - mean) / sd
                if abs(u) < 14:
                    pts.add(float(u))
    kw = dict(limit=800, epsabs=1e-15, epsrel=5e-13, points=sorted(pts) or None)
    z0 = integrate.quad(integrand, -14, 14, args=(0,), **kw)[0]
    z1 = integrate.quad(integrand, -14, 14, args=(1,), **kw)[0]
    z2 = integrate.quad(integrand, -14, 14, args=(2,), **kw)[0]
    mu = z1 / z0
    return mu, z2 / z0 - mu**2


def enumeration_prior_moments(mean, var, constellation):
    """Direct (unstabilised) enumeration over the constellation."""
    mean = np.asarray(mean, dtype=np.complex128)
    w = np.exp(-np.abs(mean[..., None] - constellation.points) ** 2 / var)
    w /= w.sum(axis=-1, keepdims=True)
    post_mean = w @ constellation.points
    post_var = w @ (np.abs(constellation.points) ** 2) - np.abs(post_mean) ** 2
    return post_mean, post_var


# ---------------------------------------------------------------------------
# check families


def check_channel_dense(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-12
    worst = 0.0
    for _ in range(20):
        dims = OtfsDims(int(rng.integers(2, 7)), int(rng.integers(1, 7)))
        l_max = max(1, min(3, dims.mn // 2 - 1))
        ch = draw_channel(rng, int(rng.integers(1, 5)), l_max, int(rng.integers(0, 5)))
        op = build_h0(ch, dims)
        ref = dense_h0_oracle(ch, dims)
        worst = max(worst, float(np.abs(op.h0_dense() - ref).max()))
        x = rng.standard_normal(dims.mn) + 1j * rng.standard_normal(dims.mn)
        f = doppler_dft_matrix(dims)
        worst = max(worst, float(np.abs(op.apply(x) - ref @ (f.conj().T @ x)).max()))
    return CheckResult("channel_dense_accumulation", worst <= tol, worst, tol)


def check_kron_dft(seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-12
    worst = 0.0
    for _ in range(20):
        dims = OtfsDims(int(rng.integers(1, 8)), int(rng.integers(1, 8)))
        f = doppler_dft_matrix(dims)
        x = rng.standard_normal(dims.mn) + 1j * rng.standard_normal(dims.mn)
        worst = max(worst, float(np.abs(doppler_dft(x, dims, forward=True) - f @ x).max()))
        worst = max(worst, float(np.abs(doppler_dft(x, dims, forward=False) - f.conj().T @ x).max()))
        rt = doppler_dft(doppler_dft(x, dims, forward=True), dims, forward=False)
        worst = max(worst, float(np.abs(rt - x).max()))
    return CheckResult("kron_dft_apply", worst <= tol, worst, tol)


def check_gram_structure(seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-12
    worst = 0.0
    for _ in range(20):
        dims = OtfsDims(8, 4)
        ch = draw_channel(rng, int(rng.integers(1, 6)), int(rng.integers(1, 6)), 4)
        op = build_h0(ch, dims)
        h0 = op.h0_dense()
        worst = max(worst, float(np.abs(assemble_gram(op).to_dense() - h0.conj().T @ h0).max()))
    return CheckResult("gram_structure", worst <= tol, worst, tol)


def check_banded_inverse(seed: int = 3, perturb: float = 0.0) -> CheckResult:
    """Solve/trace against dense inversion; ``perturb`` poisons one band entry
    to prove the comparison has teeth."""
    rng = np.random.default_rng(seed)
    solve_tol, trace_tol = 1e-10, 1e-9
    worst = 0.0
    for _ in range(25):
        dims = OtfsDims(8, 4)
        ch = draw_channel(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)), 4)
        op = build_h0(ch, dims)
        psi = assemble_psi(assemble_gram(op), float(10 ** rng.uniform(-2, 2)), float(10 ** rng.uniform(-2, 2)))
        dense = psi.to_dense()
        if perturb:
            psi.band[psi.bw, psi.n // 2] += perturb
        factors = factorize(psi)
        r = rng.standard_normal(psi.n) + 1j * rng.standard_normal(psi.n)
        u = solve(factors, r)
        worst = max(worst, float(np.linalg.norm(dense @ u - r) / np.linalg.norm(r)) / solve_tol)
        tr_ref = float(np.trace(np.linalg.inv(dense)).real)
        worst = max(worst, abs(trace_inverse(factors) - tr_ref) / abs(tr_ref) / trace_tol)
    return CheckResult("banded_inverse", worst <= 1.0, worst, 1.0,
                       detail="errors normalised by their tolerances")


def check_kron_identity(seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-9
    worst = 0.0
    for _ in range(20):
        dims = OtfsDims(8, 4)
        ch = draw_channel(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5)), 4)
        op = build_h0(ch, dims)
        v1 = float(10 ** rng.uniform(-2, 2))
        v0 = float(10 ** rng.uniform(-2, 2))
        h = op.to_dense()
        lhs = np.linalg.inv(h.conj().T @ h / v1 + np.eye(dims.mn) / v0)
        f = doppler_dft_matrix(dims)
        psi = assemble_psi(assemble_gram(op), v1, v0)
        rhs = f @ dense_inverse_oracle(psi) @ f.conj().T
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs)))
    return CheckResult("kron_identity", worst <= tol, worst, tol)


def check_quantizer_moments(seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-8
    worst = 0.0
    for bits in (1, 2, 3):
        for v in (1e-4, 1e-2, 1.0, 1e2, 1e4):
            spec = QuantizerSpec(bits=bits, step=0.7)
            for _ in range(4):
                m = rng.normal() * 1.5
                sigma2 = float(10 ** rng.uniform(-3, 1))
                z = m + np.sqrt(v / 2) * rng.normal() + np.sqrt(sigma2 / 2) * rng.normal()
                yq = float(quantize(np.array([z + 0j]), spec)[0].real)
                mean, var = output_posterior_moments(
                    np.array([yq + 1j * yq]), np.array([m + 1j * m]), v, NoiseSpec(sigma2), spec
                )
                mu_ref, var_ref = quadrature_output_moments(yq, m, v / 2, sigma2 / 2, spec)
                worst = max(worst, abs(mean[0].real - mu_ref), abs(var[0] / 2 - var_ref))
    return CheckResult("quantizer_moments", worst <= tol, worst, tol)


def check_prior_denoiser(seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    tol = 1e-12
    const = get_constellation("qpsk")
    worst = 0.0
    for _ in range(50):
        m = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        v = float(10 ** rng.uniform(-2, 2))
        got_mean, got_var = const.posterior_moments(m, v)
        ref_mean, ref_var = enumeration_prior_moments(m, v, const)
        worst = max(worst, float(np.abs(got_mean - ref_mean).max()), float(np.abs(got_var - ref_var).max()))
    return CheckResult("prior_denoiser_enumeration", worst <= tol, worst, tol)


def check_step_table() -> CheckResult:
    tol = 1e-6
    worst = 0.0
    for bits, frozen in GAUSSIAN_STEP_TABLE.items():
        worst = max(worst, abs(frozen - gaussian_optimal_step(bits)))
    return CheckResult("gaussian_step_table", worst <= tol, worst, tol)


ALL_CHECKS = (
    check_channel_dense,
    check_kron_dft,
    check_gram_structure,
    check_banded_inverse,
    check_kron_identity,
    check_quantizer_moments,
    check_prior_denoiser,
    check_step_table,
)


def run_validate(out_path: str | None = None) -> bool:
    """Run every oracle family; print a line per family plus a JSON summary."""
    results = [check() for check in ALL_CHECKS]
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        extra = f"  ({r.detail})" if r.detail else ""
        print(f"{status}  {r.name:<28} max_err={r.max_err:.3e}  tol={r.tol:.1e}{extra}")
    summary = {
        "passed": bool(all(r.ok for r in results)),
        "families": {
            r.name: {"ok": bool(r.ok), "max_err": float(r.max_err), "tol": r.tol}
            for r in results
        },
    }
    print(json.dumps(summary, sort_keys=True))
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary["passed"]
