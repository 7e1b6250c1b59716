"""Quasi-banded matrices and their blockwise fast inversion.

The Gram matrix G = H0^H H0 of a cyclic multipath channel is Hermitian and
quasi-banded: a central band of half-width l_max plus two l_max x l_max
wrap-around corners. The regularised matrix Psi = G/v1 + I/v0 inherits the
pattern, and its leading (n - l_max)-dimensional block T is fully banded.
Linear solves and the trace of the inverse are obtained from

    T = L U                      banded LU, no pivoting (T is HPD)
    E = T^{-1} B                 banded solves against the edge panel
    K = (C - B^H E)^{-1}         dense Schur-complement inverse

at O(l_max^2 n + l_max^3) total cost; per-solve cost is O(l_max n).
tr(T^{-1}) uses Takahashi-style selected inversion over the banded factors,
so only in-band entries of the inverse are ever formed.

Band layout: ``band[bw + d, c]`` holds entry (c + d, c) for offsets
d in [-bw, bw]; slots whose row index falls outside [0, n) are zero and the
wrapped entries live in the corner blocks instead. The factorization works
on a copy padded with ``bw`` guard columns of zeros on each side, so the
row/window views used by the sequential recurrences never need boundary
branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "QuasiBandedMatrix",
    "BandedFactors",
    "IllConditionedError",
    "assemble_gram",
    "assemble_psi",
    "factorize",
    "solve",
    "trace_inverse",
    "dense_inverse_oracle",
]

_PIVOT_FLOOR = 1e-14


class IllConditionedError(RuntimeError):
    """Raised when a pivot collapses; cannot happen for valid Psi inputs."""


@dataclass
class QuasiBandedMatrix:
    n: int
    bw: int
    band: np.ndarray        # (2*bw + 1, n)
    corner_tr: np.ndarray   # (bw, bw), rows 0..bw-1, cols n-bw..n-1
    corner_bl: np.ndarray   # (bw, bw), rows n-bw..n-1, cols 0..bw-1

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.complex128)
        for d in range(-self.bw, self.bw + 1):
            cols = np.arange(max(0, -d), min(self.n, self.n - d))
            a[cols + d, cols] = self.band[self.bw + d, cols]
        if self.bw:
            a[: self.bw, self.n - self.bw :] += self.corner_tr
            a[self.n - self.bw :, : self.bw] += self.corner_bl
        return a

    def copy(self) -> "QuasiBandedMatrix":
        return QuasiBandedMatrix(
            self.n, self.bw, self.band.copy(), self.corner_tr.copy(), self.corner_bl.copy()
        )


def assemble_gram(op) -> QuasiBandedMatrix:
    """Build G = H0^H H0 from a channel operator in O(P^2 n).

    Path pair (i, j) contributes conj(h_i) h_j z^{k_j c - k_i r} at rows
    r = (c + l_j - l_i) mod n; offsets stay inside the band because every
    delay tap is bounded by the declared l_max.
    """
    n = op.n
    bw = op.l_max
    if n <= 2 * bw:
        raise ValueError("quasi-banded structure requires l_max < n/2")
    delays = op.delays
    if np.any(delays > bw):
        raise ValueError("a delay tap exceeds the declared l_max (band overflow)")
    gains = op.channel.gains
    dopplers = op.channel.dopplers
    band = np.zeros((2 * bw + 1, n), dtype=np.complex128)
    corner_tr = np.zeros((bw, bw), dtype=np.complex128)
    corner_bl = np.zeros((bw, bw), dtype=np.complex128)
    c = np.arange(n)
    for i in range(len(gains)):
        for j in range(len(gains)):
            d = int(delays[j] - delays[i])
            r = np.mod(c + d, n)
            expo = np.mod(dopplers[j] * c - dopplers[i] * r, n)
            val = np.conj(gains[i]) * gains[j] * np.exp(2j * np.pi * expo / n)
            inside = (c + d >= 0) & (c + d < n)
            band[bw + d, inside] += val[inside]
            if d > 0:
                wrap = c + d >= n
                if np.any(wrap):
                    corner_tr[c[wrap] + d - n, c[wrap] - (n - bw)] += val[wrap]
            elif d < 0:
                wrap = c + d < 0
                if np.any(wrap):
                    corner_bl[c[wrap] + d + bw, c[wrap]] += val[wrap]
    return QuasiBandedMatrix(n=n, bw=bw, band=band, corner_tr=corner_tr, corner_bl=corner_bl)


def assemble_psi(gram: QuasiBandedMatrix, v1: float, v0: float) -> QuasiBandedMatrix:
    """Psi = G/v1 + I/v0; Hermitian positive definite for positive v0, v1."""
    if v1 <= 0 or v0 <= 0:
        raise ValueError("variances must be positive")
    band = gram.band / v1
    band[gram.bw, :] += 1.0 / v0
    return QuasiBandedMatrix(
        n=gram.n,
        bw=gram.bw,
        band=band,
        corner_tr=gram.corner_tr / v1,
        corner_bl=gram.corner_bl / v1,
    )


# ---------------------------------------------------------------------------
# banded kernels on guard-padded storage
#
# wb has shape (2*bw + 1, nt + 2*bw); column bw + k holds matrix column k.


def _row_views(wb: np.ndarray, bw: int, nt: int):
    """Strided row/window views over padded factor storage (built once).

    u_rows[k, t]   = A[k, k+1+t]           (upper row beyond the diagonal)
    l_rows[i, t]   = L[i, i-bw+t]          (lower row before the diagonal)
    windows[k]     = A[k+1:k+1+bw, k+1:k+1+bw]
    """
    s0, s1 = wb.strides
    u_rows = as_strided(wb[bw - 1 :, bw + 1 :], shape=(nt, bw), strides=(s1, s1 - s0))
    l_rows = as_strided(wb[2 * bw :, :], shape=(nt, bw), strides=(s1, s1 - s0))
    windows = as_strided(wb[bw:, bw + 1 :], shape=(nt, bw, bw), strides=(s1, s0, s1 - s0))
    return u_rows, l_rows, windows


def _banded_lu(wb: np.ndarray, bw: int, nt: int) -> None:
    """In-place LU (Doolittle, no pivoting) on padded band storage.

    On return the sub-diagonal offsets hold L (unit diagonal implied) and the
    diagonal plus super-diagonal offsets hold U.
    """
    if bw == 0:
        if np.any(np.abs(wb[0, :nt]) < _PIVOT_FLOOR):
            raise IllConditionedError("zero pivot in banded LU")
        return
    u_rows, _, windows = _row_views(wb, bw, nt)
    diag = wb[bw]
    lcols = wb[bw + 1 :]
    for k in range(nt):
        piv = diag[bw + k]
        if not abs(piv) > _PIVOT_FLOOR:
            raise IllConditionedError(f"pivot collapse at column {k}")
        lcol = lcols[:, bw + k]
        lcol /= piv
        windows[k] -= np.outer(lcol, u_rows[k])


def _forward_unit_lower(wb: np.ndarray, bw: int, nt: int, rhs: np.ndarray) -> np.ndarray:
    """Solve L y = rhs with L the unit lower factor stored in ``wb``."""
    if bw == 0:
        return rhs.astype(np.complex128, copy=True)
    _, l_rows, _ = _row_views(wb, bw, nt)
    pad_shape = (nt + bw,) + rhs.shape[1:]
    y = np.zeros(pad_shape, dtype=np.complex128)
    y[bw:] = rhs
    for i in range(nt):
        y[bw + i] -= l_rows[i] @ y[i : i + bw]
    return y[bw:]


def _backward_upper(wb: np.ndarray, bw: int, nt: int, rhs: np.ndarray) -> np.ndarray:
    """Solve U x = rhs with U the upper factor stored in ``wb``."""
    diag = wb[bw, bw : bw + nt]
    if bw == 0:
        return (rhs.T / diag).T if rhs.ndim > 1 else rhs / diag
    u_rows, _, _ = _row_views(wb, bw, nt)
    pad_shape = (nt + bw,) + rhs.shape[1:]
    x = np.zeros(pad_shape, dtype=np.complex128)
    for i in range(nt - 1, -1, -1):
        x[i] = (rhs[i] - u_rows[i] @ x[i + 1 : i + 1 + bw]) / diag[i]
    return x[:nt]


def _selected_inverse_trace(wb: np.ndarray, bw: int, nt: int) -> float:
    """tr(T^{-1}) from the banded LU factors via Takahashi recurrences.

    Only in-band entries of the inverse are formed; cost O(bw^2 nt). T must
    be Hermitian (true for Psi blocks), which lets the upper in-band entries
    be mirrored instead of recomputed.
    """
    diag = wb[bw, bw : bw + nt]
    if bw == 0:
        return float(np.sum(1.0 / diag).real)
    u_rows, _, _ = _row_views(wb, bw, nt)
    lcols = wb[bw + 1 :, bw:]
    zb = np.zeros((2 * bw + 1, nt + bw), dtype=np.complex128)
    zs0, zs1 = zb.strides
    windows = as_strided(zb[bw:, 1:], shape=(nt, bw, bw), strides=(zs1, zs0, zs1 - zs0))
    # mirrors[j, t-1] aliases Z[j, j+t] for t = 1..bw
    mirrors = as_strided(zb[bw - 1 :, 1:], shape=(nt, bw), strides=(zs1, zs1 - zs0))
    trace = 0.0 + 0.0j
    for j in range(nt - 1, -1, -1):
        zcol = -(windows[j] @ lcols[:, j])
        zb[bw + 1 :, j] = zcol
        # Hermitian mirror into the upper triangle of columns j+1 .. j+bw
        np.conjugate(zcol, out=mirrors[j])
        zjj = (1.0 - u_rows[j] @ zcol) / diag[j]
        zb[bw, j] = zjj
        trace += zjj
    return float(trace.real)


@dataclass
class BandedFactors:
    """Reusable factorization of a quasi-banded HPD matrix."""

    n: int
    bw: int
    wb: np.ndarray          # padded banded LU of T
    b_panel: np.ndarray     # (nt, bw) dense edge block B
    e_panel: np.ndarray     # (nt, bw) dense T^{-1} B
    schur_inv: np.ndarray   # (bw, bw) dense (C - B^H E)^{-1}

    @property
    def nt(self) -> int:
        return self.n - self.bw


def _edge_blocks(psi: QuasiBandedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Dense B (nt x bw) and C (bw x bw) blocks of the [T B; S C] partition."""
    n, bw = psi.n, psi.bw
    nt = n - bw
    b = np.zeros((nt, bw), dtype=np.complex128)
    c_blk = np.zeros((bw, bw), dtype=np.complex128)
    if bw == 0:
        return b, c_blk
    b[:bw, :] += psi.corner_tr
    cols = np.arange(nt, n)
    for d in range(-bw, bw + 1):
        r = cols + d
        ok = (r >= 0) & (r < n)
        vals = psi.band[bw + d, cols[ok]]
        rr = r[ok]
        cc = cols[ok] - nt
        in_b = rr < nt
        b[rr[in_b], cc[in_b]] += vals[in_b]
        c_blk[rr[~in_b] - nt, cc[~in_b]] += vals[~in_b]
    return b, c_blk


def factorize(psi: QuasiBandedMatrix) -> BandedFactors:
    """Banded LU of the leading block plus the dense Schur corner inverse."""
    n, bw = psi.n, psi.bw
    nt = n - bw
    if nt <= bw and bw > 0:
        raise ValueError("quasi-banded factorization requires n > 2*bw")
    wb = np.zeros((2 * bw + 1, nt + 2 * bw), dtype=np.complex128)
    wb[:, bw : bw + nt] = psi.band[:, :nt]
    if bw:
        # entries A[c+d, c] with c+d >= nt belong to the S block, not to T
        for d in range(1, bw + 1):
            wb[bw + d, bw + nt - d : bw + nt] = 0.0
    _banded_lu(wb, bw, nt)
    b_panel, c_blk = _edge_blocks(psi)
    if bw:
        e_panel = _backward_upper(wb, bw, nt, _forward_unit_lower(wb, bw, nt, b_panel))
        schur = c_blk - b_panel.conj().T @ e_panel
        schur_inv = np.linalg.inv(schur)
    else:
        e_panel = b_panel
        schur_inv = c_blk
    return BandedFactors(n=n, bw=bw, wb=wb, b_panel=b_panel, e_panel=e_panel, schur_inv=schur_inv)


def solve(factors: BandedFactors, rhs: np.ndarray) -> np.ndarray:
    """Solve Psi u = rhs through the blockwise inverse, O(bw * n) per call."""
    rhs = np.asarray(rhs, dtype=np.complex128)
    if rhs.shape[0] != factors.n:
        raise ValueError(f"rhs length {rhs.shape[0]} != {factors.n}")
    bw, nt = factors.bw, factors.nt
    if bw == 0:
        return _backward_upper(factors.wb, 0, nt, rhs)
    r1, r2 = rhs[:nt], rhs[nt:]
    t = _backward_upper(factors.wb, bw, nt, _forward_unit_lower(factors.wb, bw, nt, r1))
    u2 = factors.schur_inv @ (r2 - factors.b_panel.conj().T @ t)
    u1 = t - factors.e_panel @ u2
    return np.concatenate([u1, u2])


def trace_inverse(factors: BandedFactors) -> float:
    """tr(Psi^{-1}) = tr(T^{-1}) + tr(E K E^H) + tr(K); real and positive."""
    t_trace = _selected_inverse_trace(factors.wb, factors.bw, factors.nt)
    if factors.bw:
        ek = factors.e_panel @ factors.schur_inv
        corr = float(np.sum(ek * np.conj(factors.e_panel)).real)
        k_trace = float(np.trace(factors.schur_inv).real)
    else:
        corr = 0.0
        k_trace = 0.0
    total = t_trace + corr + k_trace
    if not np.isfinite(total) or total <= 0:
        raise IllConditionedError(f"non-positive trace of inverse ({total}); input not HPD?")
    return total


def dense_inverse_oracle(psi: QuasiBandedMatrix, cap: int = 4096) -> np.ndarray:
    """Plain O(n^3) Hermitian inversion; reference path and dense-mode backend."""
    if psi.n > cap:
        raise ValueError(f"dense oracle capped at n = {cap}")
    return np.linalg.inv(psi.to_dense())
