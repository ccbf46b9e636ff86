"""Grid arithmetic, seeded noise, finite differences and image metrics.

A *grid* is simply a float64 :class:`numpy.ndarray`. Every public function
here returns fresh arrays and never mutates its inputs.

Random streams use the counter-based Philox generator keyed by
``(seed, stream)`` so that draws are bitwise reproducible across platforms
and independent streams can be split off without coordination.
"""

from __future__ import annotations

import hashlib
import math
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, NumericError

__all__ = [
    "as_grid",
    "make_rng",
    "gaussian_noise",
    "finite_diff_grad",
    "psnr",
    "ssim",
    "high_frequency_ratio",
    "checksum",
    "write_grd",
    "read_grd",
    "grd_bytes",
    "grd_from_bytes",
    "write_pgm",
]

GRD_MAGIC = b"GRD1"
SSIM_WINDOW = 8


def as_grid(x, *, name: str = "grid") -> np.ndarray:
    """Converts ``x`` to a float64 array and checks that it is finite."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Returns a Philox generator keyed by ``(seed, stream)``.

    Distinct ``stream`` values give statistically independent sequences for
    the same seed; this is how trials and trajectories get their own noise.
    """
    if seed < 0 or stream < 0:
        raise InvalidArgumentError("seed and stream must be non-negative")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def gaussian_noise(shape: Sequence[int] | int, rng: np.random.Generator) -> np.ndarray:
    """Draws i.i.d. standard normal entries of the given shape."""
    shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
    if len(shape) == 0 or any(int(d) < 1 for d in shape):
        raise InvalidArgumentError(f"invalid noise shape {shape}")
    return rng.standard_normal(shape)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise InvalidArgumentError("finite-difference step must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x))
        flat[i] = orig - h
        f_minus = float(f(x))
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` marks identical grids."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if not peak > 0:
        raise InvalidArgumentError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM over all uniform 8x8 windows of two 2-D grids.

    Uniform windows (not the usual 11x11 Gaussian) keep the metric usable on
    small grids; values are therefore self-consistent within this package but
    not comparable with other SSIM implementations.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    if a.ndim != 2:
        raise InvalidArgumentError("ssim needs 2-D grids")
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidArgumentError(f"grid smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def local_mean(z: np.ndarray) -> np.ndarray:
        return sliding_window_view(z, (SSIM_WINDOW, SSIM_WINDOW)).mean(axis=(-2, -1))

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def high_frequency_ratio(x: np.ndarray, cutoff: float = 0.25) -> float:
    """Fraction of (mean-removed) spectral energy above ``cutoff`` cycles/sample.

    Blur lowers this ratio, sharpening raises it.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = np.abs(np.fft.fftn(x - x.mean())) ** 2
    freqs = np.meshgrid(*[np.fft.fftfreq(n) for n in x.shape], indexing="ij")
    radius = np.sqrt(sum(f * f for f in freqs))
    total = spec.sum()
    if total == 0.0:
        return 0.0
    return float(spec[radius > cutoff].sum() / total)


def checksum(x: np.ndarray) -> str:
    """Short hex digest of the exact float64 bytes of a grid."""
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()[:16]


def grd_bytes(x: np.ndarray) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    header = GRD_MAGIC + struct.pack("<I", x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    return header + np.ascontiguousarray(x, dtype="<f8").tobytes()


def grd_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != GRD_MAGIC:
        raise InvalidArgumentError("not a GRD1 container")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(buf) - offset != 8 * count:
        raise InvalidArgumentError("GRD1 payload length does not match its dims")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims).astype(np.float64)


def write_grd(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_bytes(grd_bytes(x))


def read_grd(path: str | Path) -> np.ndarray:
    return grd_from_bytes(Path(path).read_bytes())


def write_pgm(path: str | Path, x: np.ndarray) -> None:
    """Writes a 2-D grid as binary PGM, linearly rescaled to [0, 255]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("PGM export needs a 2-D grid")
    lo, hi = float(x.min()), float(x.max())
    scaled = np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)
    pixels = np.round(scaled * 255.0).astype(np.uint8)
    header = f"P5\n{x.shape[1]} {x.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
