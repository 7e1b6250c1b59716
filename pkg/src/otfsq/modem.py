"""Constellation mapping for the delay-Doppler symbol grid.

The default constellation is Gray-labelled QPSK with unit average energy:

    bits (b0, b1) -> ((1 - 2*b0) + 1j*(1 - 2*b1)) / sqrt(2)

    00 -> (+1+1j)/sqrt(2)    01 -> (+1-1j)/sqrt(2)
    10 -> (-1+1j)/sqrt(2)    11 -> (-1-1j)/sqrt(2)

b0 drives the real part, b1 the imaginary part, so neighbouring points
differ in exactly one bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Constellation", "qpsk", "modulate", "hard_demap"]


@dataclass(frozen=True)
class Constellation:
    """A finite symbol alphabet with fixed bit labels.

    points[k] is the complex symbol whose label is labels[k, :] (one row of
    bits per point). Average energy must be 1 so that E|x|^2 = 1 under
    uniform symbol draws.
    """

    name: str
    points: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.complex128)
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape[0] != points.shape[0]:
            raise ValueError("one label row per constellation point required")
        energy = np.mean(np.abs(points) ** 2)
        if not np.isclose(energy, 1.0, atol=1e-12):
            raise ValueError(f"constellation must have unit average energy, got {energy}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    def nearest_index(self, x: np.ndarray) -> np.ndarray:
        """Index of the closest constellation point, per entry of x."""
        x = np.asarray(x, dtype=np.complex128)
        d2 = np.abs(x[..., None] - self.points) ** 2
        return np.argmin(d2, axis=-1)

    def posterior_moments(self, mean, var):
        """Mean and variance of a symbol under a Gaussian pseudo-observation.

        The symbol prior is uniform over the alphabet; the observation model
        is circular complex Gaussian with mean ``mean`` and variance ``var``
        (scalar or per-component). Returns per-component posterior means and
        variances. Weights are normalised with max-subtraction so extreme
        variances cannot overflow.
        """
        mean = np.asarray(mean, dtype=np.complex128)
        var = np.asarray(var, dtype=np.float64)
        logw = -np.abs(mean[..., None] - self.points) ** 2 / var[..., None]
        logw -= logw.max(axis=-1, keepdims=True)
        w = np.exp(logw)
        w /= w.sum(axis=-1, keepdims=True)
        post_mean = w @ self.points
        second = w @ (np.abs(self.points) ** 2)
        post_var = np.maximum(second - np.abs(post_mean) ** 2, 0.0)
        return post_mean, post_var


def qpsk() -> Constellation:
    """Gray-labelled QPSK with unit average energy (table in module docstring)."""
    bits = np.array([[b0, b1] for b0 in (0, 1) for b1 in (0, 1)], dtype=np.int64)
    points = ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2.0)
    return Constellation(name="qpsk", points=points, labels=bits)


def get_constellation(name: str) -> Constellation:
    if name.lower() == "qpsk":
        return qpsk()
    raise ValueError(f"unknown constellation {name!r}")


def modulate(bits: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Map a flat bit vector to symbols (delay-fastest vectorised grid order)."""
    bits = np.asarray(bits, dtype=np.int64)
    bps = constellation.bits_per_symbol
    if bits.ndim != 1 or bits.size % bps != 0:
        raise ValueError(f"bit count {bits.size} is not a multiple of {bps} bits/symbol")
    groups = bits.reshape(-1, bps)
    # label rows are lexicographic over bits, so the label is also an index
    weights = 1 << np.arange(bps - 1, -1, -1)
    idx = groups @ weights
    lab_idx = constellation.labels @ weights
    lut = np.empty(constellation.size, dtype=np.complex128)
    lut[lab_idx] = constellation.points
    return lut[idx]


def hard_demap(x: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Nearest-point decisions, returned as a flat bit vector."""
    idx = constellation.nearest_index(np.asarray(x))
    return constellation.labels[idx].reshape(-1)


def hard_symbols(x: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Nearest-point decisions, returned as symbols."""
    return constellation.points[constellation.nearest_index(np.asarray(x))]
