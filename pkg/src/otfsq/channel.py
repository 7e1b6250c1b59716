"""Delay-Doppler multipath channel and the quantizer-side effective operator.

The physical channel acting on the time-domain frame is a sum of P cyclic
delay/Doppler shifts,

    H0 = sum_i  h_i * Pi^{l_i} * D^{k_i},

with Pi the MN x MN cyclic shift-down matrix and D = diag(z^0 .. z^{MN-1}),
z = exp(2j*pi/MN). Because the receiver quantizes *before* the Doppler-axis
DFT, the operator seen by the detector is H = H0 (F_N^H kron I_M): only the
transmit-side transform is absorbed. The receive-side transform would make
the conjugated matrix H_ideal = (F_N kron I_M) H0 (F_N^H kron I_M), which is
kept here as a dense test-scale reference.

Vectorisation convention: x = vec(X) is column-major with the delay index
(length M) fastest, so (F_N kron I_M) x acts along the Doppler axis of the
M x N grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "OtfsDims",
    "ChannelPath",
    "ChannelRealization",
    "ChannelOperator",
    "DenseOperator",
    "build_h0",
    "draw_channel",
    "doppler_dft",
    "vec_to_grid",
    "grid_to_vec",
    "ideal_channel_matrix",
]


@dataclass(frozen=True)
class OtfsDims:
    """Grid dimensions: m subcarriers (delay bins) by n time slots (Doppler bins)."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def mn(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class ChannelPath:
    gain: complex
    delay_tap: int
    doppler_tap: int


@dataclass(frozen=True)
class ChannelRealization:
    """A P-path channel draw plus its declared tap bounds."""

    paths: tuple[ChannelPath, ...]
    l_max: int
    k_max: int

    def __post_init__(self):
        if not self.paths:
            raise ValueError("at least one path required")
        for p in self.paths:
            if not 0 <= p.delay_tap <= self.l_max:
                raise ValueError(f"delay tap {p.delay_tap} outside [0, {self.l_max}]")
            if abs(p.doppler_tap) > self.k_max:
                raise ValueError(f"Doppler tap {p.doppler_tap} outside +-{self.k_max}")

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=np.complex128)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay_tap for p in self.paths], dtype=np.int64)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler_tap for p in self.paths], dtype=np.int64)


def draw_channel(rng: np.random.Generator, num_paths: int, l_max: int, k_max: int) -> ChannelRealization:
    """Draw a random channel: l_1 = 0, l_i ~ U[1, l_max] for i >= 2,
    k_i ~ U[-k_max, k_max], gains circularly symmetric complex Gaussian with
    per-path variance 1/P (so the expected total gain power is 1).
    """
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    if l_max < 1 and num_paths > 1:
        raise ValueError("l_max must be >= 1 when drawing more than one path")
    delays = np.zeros(num_paths, dtype=np.int64)
    if num_paths > 1:
        delays[1:] = rng.integers(1, l_max + 1, size=num_paths - 1)
    dopplers = rng.integers(-k_max, k_max + 1, size=num_paths)
    scale = np.sqrt(1.0 / (2.0 * num_paths))
    gains = scale * (rng.standard_normal(num_paths) + 1j * rng.standard_normal(num_paths))
    paths = tuple(
        ChannelPath(gain=complex(g), delay_tap=int(l), doppler_tap=int(k))
        for g, l, k in zip(gains, delays, dopplers)
    )
    return ChannelRealization(paths=paths, l_max=max(l_max, 0), k_max=k_max)


def vec_to_grid(x: np.ndarray, dims: OtfsDims) -> np.ndarray:
    """Reshape a length-MN vector into the M x N delay-Doppler grid."""
    x = np.asarray(x)
    if x.shape != (dims.mn,):
        raise ValueError(f"expected vector of length {dims.mn}, got shape {x.shape}")
    return x.reshape(dims.n, dims.m).T


def grid_to_vec(grid: np.ndarray) -> np.ndarray:
    """Vectorise an M x N grid column-major with the delay index fastest."""
    return np.asarray(grid).T.reshape(-1)


def doppler_dft(x: np.ndarray, dims: OtfsDims, forward: bool = True) -> np.ndarray:
    """Apply (F_N kron I_M) (forward) or its adjoint to a length-MN vector.

    Equivalent to a normalised N-point DFT (resp. inverse DFT) along the
    Doppler axis of the M x N grid; costs O(MN log N).
    """
    grid = vec_to_grid(x, dims)
    if forward:
        out = np.fft.fft(grid, axis=1, norm="ortho")
    else:
        out = np.fft.ifft(grid, axis=1, norm="ortho")
    return grid_to_vec(out)


def doppler_dft_matrix(dims: OtfsDims) -> np.ndarray:
    """Dense (F_N kron I_M), test-scale reference for doppler_dft."""
    n = dims.n
    f = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / np.sqrt(n)
    return np.kron(f, np.eye(dims.m))


class ChannelOperator:
    """The effective channel H = H0 (F_N^H kron I_M) in operator form.

    H0 is held per path as (delay offset, modulated gain ramp), giving an
    O(P*MN) apply; nothing MN x MN is ever materialised outside the dense
    test helpers.
    """

    def __init__(self, channel: ChannelRealization, dims: OtfsDims):
        if channel.l_max >= dims.mn:
            raise ValueError("delay taps must be smaller than the grid size MN")
        if channel.l_max >= dims.mn / 2 and dims.mn > 1:
            raise ValueError("l_max must be < MN/2 for the quasi-banded structure")
        self.channel = channel
        self.dims = dims
        n = dims.mn
        c = np.arange(n)
        gains = channel.gains
        # ramps[i, c] = h_i * z^{k_i c}; H0 x = sum_i roll(ramps[i] * x, l_i)
        expo = np.mod(np.outer(channel.dopplers, c), n)
        self.ramps = gains[:, None] * np.exp(2j * np.pi * expo / n)
        self.delays = channel.delays

    @property
    def n(self) -> int:
        return self.dims.mn

    @property
    def l_max(self) -> int:
        return self.channel.l_max

    @property
    def frob_norm_sq(self) -> float:
        """||H||_F^2 = ||H0||_F^2 = MN * sum_i |h_i|^2 up to tap collisions."""
        return float(np.sum(np.abs(self.ramps) ** 2))

    @property
    def gain_power(self) -> float:
        return float(np.sum(np.abs(self.channel.gains) ** 2))

    def apply_h0(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.complex128)
        for ramp, l in zip(self.ramps, self.delays):
            out += np.roll(ramp * x, l)
        return out

    def apply_h0_adjoint(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.complex128)
        for ramp, l in zip(self.ramps, self.delays):
            out += np.conj(ramp) * np.roll(y, -l)
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """z = H x = H0 (F_N^H kron I_M) x."""
        return self.apply_h0(doppler_dft(x, self.dims, forward=False))

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """H^H y = (F_N kron I_M) H0^H y."""
        return doppler_dft(self.apply_h0_adjoint(y), self.dims, forward=True)

    def h0_dense(self) -> np.ndarray:
        n = self.n
        h0 = np.zeros((n, n), dtype=np.complex128)
        c = np.arange(n)
        for ramp, l in zip(self.ramps, self.delays):
            h0[(c + l) % n, c] += ramp
        return h0

    def to_dense(self) -> np.ndarray:
        return self.h0_dense() @ doppler_dft_matrix(self.dims).conj().T


def build_h0(channel: ChannelRealization, dims: OtfsDims) -> ChannelOperator:
    """Construct the effective channel operator for a channel realization."""
    return ChannelOperator(channel, dims)


def ideal_channel_matrix(op: ChannelOperator) -> np.ndarray:
    """Dense (F_N kron I_M) H0 (F_N^H kron I_M): the infinite-precision
    channel that shifts symbols circularly on the delay-Doppler grid.
    Test/validation use only.
    """
    f = doppler_dft_matrix(op.dims)
    return f @ op.h0_dense() @ f.conj().T


class DenseOperator:
    """Wrap an explicit matrix behind the operator interface the detectors use."""

    def __init__(self, mat: np.ndarray):
        mat = np.asarray(mat, dtype=np.complex128)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("DenseOperator expects a square matrix")
        self.mat = mat

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    @property
    def frob_norm_sq(self) -> float:
        return float(np.sum(np.abs(self.mat) ** 2))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.mat @ x

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.mat.conj().T @ y

    def to_dense(self) -> np.ndarray:
        return self.mat
