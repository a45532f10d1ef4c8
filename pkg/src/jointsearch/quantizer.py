"""Linear weight/activation quantization with KL-calibrated clipping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTensorError

SYMMETRIC = "symmetric-weights"
NONNEG = "nonneg-activations"
MODES = (SYMMETRIC, NONNEG)


@dataclass(frozen=True)
class QuantScheme:
    bits: int
    clip: float
    mode: str = SYMMETRIC

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError("bits must be >= 2")
        if not (np.isfinite(self.clip) and self.clip > 0):
            raise ValueError("clip must be finite and positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def step(self) -> float:
        # symmetric: 2^b - 1 levels k*s, |k| <= 2^(b-1) - 1, covering -v, 0 and v
        if self.mode == SYMMETRIC:
            return self.clip / (2 ** (self.bits - 1) - 1)
        return self.clip / (2**self.bits - 1)

    @property
    def lower(self) -> float:
        return -self.clip if self.mode == SYMMETRIC else 0.0


@dataclass(frozen=True)
class CalibConfig:
    histogram_bins: int = 2048
    candidate_grid_size: int = 100
    epsilon_smoothing: float = 1e-8

    def __post_init__(self):
        if self.histogram_bins < 16:
            raise ValueError("histogram_bins must be >= 16")
        if self.candidate_grid_size < 2:
            raise ValueError("candidate_grid_size must be >= 2")


def quantize(tensor, scheme: QuantScheme) -> np.ndarray:
    """Clamp to the scheme's range and snap to the nearest level (dequantized output)."""
    x = np.asarray(tensor, dtype=float)
    if x.size == 0:
        raise DegenerateTensorError("cannot quantize an empty tensor")
    s = scheme.step
    levels = np.rint(np.clip(x, scheme.lower, scheme.clip) / s)
    return levels * s


def kl_divergence(p, q, epsilon: float = 1e-8) -> float:
    """KL(p || q) in nats after adding ``epsilon`` to every bin and renormalizing."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"bin-count mismatch: {p.shape} vs {q.shape}")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("histograms must be nonnegative")
    p = p + epsilon
    q = q + epsilon
    p = p / p.sum()
    q = q / q.sum()
    return max(float(np.sum(p * np.log(p / q))), 0.0)


def _histograms(x: np.ndarray, scheme: QuantScheme, bins: int,
                top: float) -> tuple[np.ndarray, np.ndarray]:
    # Bin width is fixed by the full data range ``top``; the candidate clip
    # range spans as many of those bins as it covers.
    lo, hi = scheme.lower, scheme.clip
    full_lo = -top if scheme.mode == SYMMETRIC else 0.0
    n = max(1, int(round(bins * (hi - lo) / (top - full_lo))))
    width = (hi - lo) / n
    inside = (x >= lo) & (x <= hi)
    idx = np.clip(np.floor((x - lo) / width).astype(np.int64), 0, n - 1)
    # reference: clipped values folded into the edge bins
    p = np.bincount(idx, minlength=n).astype(float)
    p_in = np.bincount(idx[inside], minlength=n).astype(float)

    centers = lo + (np.arange(n) + 0.5) * width
    cell = np.rint(centers / scheme.step).astype(np.int64)
    cell -= cell.min()
    # quantized: each cell's in-range mass spread evenly over the bins of the
    # cell the data occupies. Clipped mass is left out, so clipping costs KL.
    mass = np.bincount(cell, weights=p_in)
    occupied = np.bincount(cell, weights=(p_in > 0).astype(float))
    q = np.where(p_in > 0, mass[cell] / np.maximum(occupied[cell], 1.0), 0.0)
    return p, q


def _top(x: np.ndarray, mode: str) -> float:
    top = float(np.max(np.abs(x))) if mode == SYMMETRIC else float(np.max(x))
    if top <= 0:
        raise DegenerateTensorError("tensor has no positive range to calibrate")
    return top


def calibration_grid(tensor, cfg: CalibConfig, mode: str = SYMMETRIC) -> np.ndarray:
    top = _top(np.asarray(tensor, dtype=float).ravel(), mode)
    g = cfg.candidate_grid_size
    return top * np.arange(1, g + 1) / g


def kl_at(tensor, bits: int, clip: float, cfg: CalibConfig = CalibConfig(),
          mode: str = SYMMETRIC) -> float:
    """KL between the tensor's histogram and its quantized counterpart at one clip value."""
    x = np.asarray(tensor, dtype=float).ravel()
    p, q = _histograms(x, QuantScheme(bits, clip, mode), cfg.histogram_bins, _top(x, mode))
    return kl_divergence(p, q, cfg.epsilon_smoothing)


def kl_scan(tensor, bits: int, cfg: CalibConfig = CalibConfig(),
            mode: str = SYMMETRIC) -> tuple[np.ndarray, np.ndarray]:
    """Candidate clip values and the KL attained at each."""
    x = np.asarray(tensor, dtype=float).ravel()
    if x.size == 0 or np.all(x == x[0]):
        raise DegenerateTensorError("tensor elements are all equal")
    grid = calibration_grid(x, cfg, mode)
    kls = np.array([kl_at(x, bits, v, cfg, mode) for v in grid])
    return grid, kls


def kl_calibrate(tensor, bits: int, cfg: CalibConfig = CalibConfig(),
                 mode: str = SYMMETRIC) -> float:
    """Clip value minimizing the KL divergence; the smallest one wins ties."""
    grid, kls = kl_scan(tensor, bits, cfg, mode)
    return float(grid[int(np.argmin(kls))])
