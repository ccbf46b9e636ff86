"""Forward degradations and the restorers that (approximately) undo them.

Blur is a circular convolution, so the operator is square and diagonal in
the DFT basis; its adjoint and Tikhonov pseudo-inverse are per-frequency
divisions. Haze and rain are simple parametric stand-ins chosen so that
exact oracle restorers exist.

Clamping to [0, 1] happens here and only here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, NumericError, SingularityError
from .numerics import as_grid

__all__ = [
    "LinearOperator",
    "IdentityOperator",
    "MatrixOperator",
    "CircularConvolution",
    "motion_blur_operator",
    "motion_blur_kernel",
    "haze_apply",
    "rain_apply",
    "DegradationSpec",
    "degrade",
    "Restorer",
    "IdentityRestorer",
    "TikhonovRestorer",
    "GaussianPosteriorRestorer",
    "DehazeRestorer",
    "DerainRestorer",
    "MismatchedRestorer",
    "tikhonov_restorer",
    "gaussian_posterior_restorer",
    "mismatched_restorer",
    "dense_matrix",
]

# frequencies with |H| below this are treated as the null space when lam == 0
NULL_TOL = 1e-12


@runtime_checkable
class LinearOperator(Protocol):
    descriptor: str

    def apply(self, x: np.ndarray) -> np.ndarray: ...

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray: ...

    def pseudo_inverse(self, y: np.ndarray, lam: float = 0.0) -> np.ndarray: ...


@dataclass(frozen=True)
class IdentityOperator:
    descriptor: str = "identity"

    def apply(self, x):
        return np.array(x, dtype=np.float64)

    def apply_adjoint(self, y):
        return np.array(y, dtype=np.float64)

    def pseudo_inverse(self, y, lam: float = 0.0):
        if lam < 0:
            raise InvalidArgumentError("regularization must be non-negative")
        return np.asarray(y, dtype=np.float64) / (1.0 + lam)


@dataclass(frozen=True)
class MatrixOperator:
    """Dense linear map acting on grids of ``shape`` (flattened row-major)."""

    matrix: np.ndarray
    shape: tuple[int, ...]
    descriptor: str = "linear-generic"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        d = int(np.prod(self.shape))
        if m.ndim != 2 or m.shape[1] != d:
            raise InvalidArgumentError("matrix columns must match the grid size")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "shape", tuple(self.shape))

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.shape if self.matrix.shape[0] == self.matrix.shape[1] else (self.matrix.shape[0],)

    def apply(self, x):
        return (self.matrix @ np.asarray(x, dtype=np.float64).reshape(-1)).reshape(self.out_shape)

    def apply_adjoint(self, y):
        return (self.matrix.T @ np.asarray(y, dtype=np.float64).reshape(-1)).reshape(self.shape)

    def pseudo_inverse(self, y, lam: float = 0.0):
        if lam < 0:
            raise InvalidArgumentError("regularization must be non-negative")
        yv = np.asarray(y, dtype=np.float64).reshape(-1)
        if lam == 0.0:
            return (np.linalg.pinv(self.matrix) @ yv).reshape(self.shape)
        a = self.matrix.T @ self.matrix + lam * np.eye(self.matrix.shape[1])
        return np.linalg.solve(a, self.matrix.T @ yv).reshape(self.shape)


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized line kernel: ``length`` taps along ``angle`` degrees, centered."""
    if length < 1:
        raise InvalidArgumentError("blur length must be at least 1")
    theta = math.radians(angle)
    offsets = [
        (round((i - (length - 1) / 2) * -math.sin(theta)), round((i - (length - 1) / 2) * math.cos(theta)))
        for i in range(length)
    ]
    rmin = min(o[0] for o in offsets)
    cmin = min(o[1] for o in offsets)
    rows = max(o[0] for o in offsets) - rmin + 1
    cols = max(o[1] for o in offsets) - cmin + 1
    kernel = np.zeros((rows, cols))
    for r, c in offsets:
        kernel[r - rmin, c - cmin] += 1.0
    return kernel / kernel.sum()


@dataclass(frozen=True)
class CircularConvolution:
    """Circular convolution with a small kernel, centered at the origin."""

    kernel: np.ndarray
    descriptor: str = "blur"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def transfer(self, shape: tuple[int, ...]) -> np.ndarray:
        """DFT of the kernel embedded in a grid of ``shape``."""
        shape = tuple(shape)
        if shape not in self._cache:
            k = self.kernel
            if len(shape) != 2 or k.shape[0] > shape[0] or k.shape[1] > shape[1]:
                raise InvalidArgumentError(f"kernel {k.shape} does not fit grid {shape}")
            padded = np.zeros(shape)
            padded[: k.shape[0], : k.shape[1]] = k
            padded = np.roll(padded, (-(k.shape[0] // 2), -(k.shape[1] // 2)), axis=(0, 1))
            self._cache[shape] = np.fft.fft2(padded)
        return self._cache[shape]

    def _filter(self, x, gain):
        return np.fft.ifft2(gain * np.fft.fft2(x)).real

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self._filter(x, self.transfer(x.shape))

    def apply_adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self._filter(y, np.conj(self.transfer(y.shape)))

    def pseudo_inverse(self, y, lam: float = 0.0):
        if lam < 0:
            raise InvalidArgumentError("regularization must be non-negative")
        y = np.asarray(y, dtype=np.float64)
        h = self.transfer(y.shape)
        power = np.abs(h) ** 2
        if lam == 0.0:
            gain = np.zeros_like(h)
            live = power > NULL_TOL
            gain[live] = np.conj(h[live]) / power[live]
        else:
            gain = np.conj(h) / (power + lam)
        return self._filter(y, gain)

    def is_full_rank(self, shape) -> bool:
        return bool(np.all(np.abs(self.transfer(shape)) ** 2 > NULL_TOL))


def motion_blur_operator(length: int, angle: float = 0.0, shape: tuple[int, int] | None = None) -> CircularConvolution:
    """Linear motion blur of ``length`` pixels along ``angle`` degrees.

    When ``shape`` is given the kernel is checked against it up front
    (``length`` may be at most half the smaller grid dimension).
    """
    kernel = motion_blur_kernel(length, angle)
    if shape is not None:
        if length > min(shape) // 2 and length > 1:
            raise InvalidArgumentError(f"blur length {length} exceeds half the grid size {shape}")
    op = CircularConvolution(kernel, descriptor=f"blur(len={length},angle={angle:g})")
    if shape is not None:
        op.transfer(tuple(shape))
    return op


def dense_matrix(op: LinearOperator, shape: tuple[int, ...]) -> np.ndarray:
    """Materializes ``op`` on grids of ``shape`` by applying it to basis vectors."""
    d = int(np.prod(shape))
    cols = []
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        cols.append(np.asarray(op.apply(e.reshape(shape))).reshape(-1))
    return np.stack(cols, axis=1)


def haze_apply(x: np.ndarray, transmission, airlight: float) -> np.ndarray:
    """Atmospheric scattering ``y = t * x + A * (1 - t)``, clamped to [0, 1]."""
    x = as_grid(x, name="x")
    t = np.asarray(transmission, dtype=np.float64)
    if np.any(t <= 0) or np.any(t > 1):
        raise InvalidArgumentError("transmission must lie in (0, 1]")
    if not 0.0 <= airlight <= 1.0:
        raise InvalidArgumentError("airlight must lie in [0, 1]")
    return np.clip(t * x + airlight * (1.0 - t), 0.0, 1.0)


def rain_apply(
    x: np.ndarray,
    streaks: int,
    angle: float,
    intensity: float,
    rng: np.random.Generator,
    length: tuple[int, int] = (4, 10),
) -> tuple[np.ndarray, np.ndarray]:
    """Adds ``streaks`` bright line segments; returns ``(y, mask)``.

    ``mask`` holds the additive streak layer (``intensity`` on streak pixels),
    so ``y - mask == x`` wherever ``x + mask <= 1``.
    """
    x = as_grid(x, name="x")
    if x.ndim != 2:
        raise InvalidArgumentError("rain needs a 2-D grid")
    if not 0.0 < intensity <= 1.0:
        raise InvalidArgumentError("intensity must lie in (0, 1]")
    if streaks < 0:
        raise InvalidArgumentError("streak count must be non-negative")
    mask = np.zeros_like(x)
    theta = math.radians(angle)
    dr, dc = math.sin(theta), math.cos(theta)
    rows, cols = x.shape
    for _ in range(streaks):
        r0 = rng.uniform(0, rows)
        c0 = rng.uniform(0, cols)
        n = int(rng.integers(length[0], length[1] + 1))
        for i in range(n):
            mask[int(r0 + i * dr) % rows, int(c0 + i * dc) % cols] = intensity
    return np.minimum(x + mask, 1.0), mask


FAMILIES = ("blur", "haze", "rain", "linear-generic", "identity")


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one degradation family plus additive Gaussian noise."""

    family: str = "blur"
    blur_len: int = 5
    blur_angle: float = 0.0
    transmission: float = 0.6
    airlight: float = 0.8
    streaks: int = 12
    streak_angle: float = 80.0
    intensity: float = 0.5
    noise_std: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown degradation family {self.family!r}")
        if self.blur_len < 1:
            raise InvalidArgumentError("blur_len must be at least 1")
        if not 0.0 < self.transmission <= 1.0:
            raise InvalidArgumentError("haze transmission must lie in (0, 1]")
        if not 0.0 <= self.airlight <= 1.0:
            raise InvalidArgumentError("airlight must lie in [0, 1]")
        if self.streaks < 0 or not 0.0 < self.intensity <= 1.0:
            raise InvalidArgumentError("invalid rain parameters")
        if self.noise_std < 0:
            raise InvalidArgumentError("noise_std must be non-negative")

    def with_(self, **changes) -> "DegradationSpec":
        return replace(self, **changes)

    def operator(self) -> LinearOperator:
        if self.family == "blur":
            return motion_blur_operator(self.blur_len, self.blur_angle)
        if self.family == "identity":
            return IdentityOperator()
        raise InvalidArgumentError(f"{self.family} degradation has no linear operator")

    def describe(self) -> str:
        if self.family == "blur":
            return f"blur(len={self.blur_len},angle={self.blur_angle:g})"
        if self.family == "haze":
            return f"haze(t={self.transmission:g},A={self.airlight:g})"
        if self.family == "rain":
            return f"rain(n={self.streaks},angle={self.streak_angle:g},I={self.intensity:g})"
        return self.family


def degrade(x: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """Applies ``spec`` to a clean grid, then adds ``noise_std`` Gaussian noise."""
    x = as_grid(x, name="x")
    if spec.family in ("blur", "identity"):
        y = spec.operator().apply(x)
    elif spec.family == "haze":
        y = haze_apply(x, spec.transmission, spec.airlight)
    elif spec.family == "rain":
        y, _ = rain_apply(x, spec.streaks, spec.streak_angle, spec.intensity, rng)
    else:
        raise InvalidArgumentError("linear-generic degradations need an explicit operator")
    if spec.noise_std > 0:
        y = y + spec.noise_std * rng.standard_normal(y.shape)
    return y


@runtime_checkable
class Restorer(Protocol):
    descriptor: str

    def restore(self, y: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class IdentityRestorer:
    descriptor: str = "identity"

    def restore(self, y):
        return np.array(y, dtype=np.float64)


REGULARIZERS = ("identity", "gradient")


def _laplacian_symbol(shape: tuple[int, int]) -> np.ndarray:
    """Eigenvalues of the periodic 5-point negative Laplacian, i.e. of ``D^T D``."""
    fy = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(shape[0]))
    fx = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(shape[1]))
    return fy[:, None] + fx[None, :]


@dataclass(frozen=True)
class TikhonovRestorer:
    """``argmin ||Hx - y||^2 + lam ||Lx||^2``.

    ``regularizer="identity"`` uses ``L = I`` and defers to
    ``H.pseudo_inverse``. ``"gradient"`` penalizes finite differences
    instead (a constrained least-squares deconvolver); it leaves the mean
    untouched and needs a circular convolution operator.
    """

    op: LinearOperator
    lam: float
    noise_std: float = 0.0
    regularizer: str = "identity"

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise InvalidArgumentError(f"unknown regularizer {self.regularizer!r}")
        if self.regularizer == "gradient" and not isinstance(self.op, CircularConvolution):
            raise InvalidArgumentError("gradient regularization needs a circular convolution")

    @property
    def descriptor(self) -> str:
        tag = "" if self.regularizer == "identity" else f",{self.regularizer}"
        return f"tikhonov[{self.op.descriptor},lam={self.lam:g}{tag}]"

    def restore(self, y):
        if self.regularizer == "identity":
            return self.op.pseudo_inverse(y, self.lam)
        y = np.asarray(y, dtype=np.float64)
        h = self.op.transfer(y.shape)
        denom = np.abs(h) ** 2 + self.lam * _laplacian_symbol(y.shape)
        gain = np.zeros_like(h)
        live = denom > NULL_TOL
        gain[live] = np.conj(h[live]) / denom[live]
        return np.fft.ifft2(gain * np.fft.fft2(y)).real


def tikhonov_restorer(
    h: LinearOperator, lam: float, noise_std: float = 0.0, shape=None, regularizer: str = "identity"
) -> TikhonovRestorer:
    """Builds a Tikhonov restorer; ``lam == 0`` is allowed only for full-rank ``h``."""
    if lam < 0 or noise_std < 0:
        raise InvalidArgumentError("lam and noise_std must be non-negative")
    if regularizer != "identity" and lam > 0:
        return TikhonovRestorer(h, lam, noise_std, regularizer)
    if lam == 0.0:
        if shape is None:
            raise InvalidArgumentError("lam == 0 needs a grid shape to check invertibility")
        if isinstance(h, CircularConvolution):
            full = h.is_full_rank(shape)
        else:
            full = np.linalg.matrix_rank(dense_matrix(h, shape)) == int(np.prod(shape))
        if not full:
            raise SingularityError("lam == 0 with a singular operator")
    return TikhonovRestorer(h, lam, noise_std, regularizer)


@dataclass(frozen=True)
class GaussianPosteriorRestorer:
    """Exact linear-Gaussian posterior mean for ``y = Hx + n``.

    ``x ~ N(mu, diag(var))``, ``n ~ N(0, noise_var I)``. Dense linear algebra
    on flattened grids, so meant for small problems.
    """

    mu: np.ndarray
    var: np.ndarray
    matrix: np.ndarray
    noise_var: float
    descriptor: str = "gaussian-posterior"
    _gain: np.ndarray = field(default=None, repr=False, compare=False)
    _cov: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        h = self.matrix
        if not np.all(np.isfinite(h)):
            raise NumericError("operator matrix has non-finite entries")
        s = self.var.reshape(-1)
        sht = s[:, None] * h.T
        system = h @ sht + self.noise_var * np.eye(h.shape[0])
        try:
            chol = np.linalg.cholesky(system)
        except np.linalg.LinAlgError as exc:
            raise NumericError("posterior system is not positive definite") from exc
        # gain = S H^T (H S H^T + noise I)^-1
        solved = np.linalg.solve(chol.T, np.linalg.solve(chol, sht.T))
        gain = solved.T
        object.__setattr__(self, "_gain", gain)
        object.__setattr__(self, "_cov", np.diag(s) - gain @ h @ np.diag(s))

    @property
    def posterior_cov(self) -> np.ndarray:
        return self._cov

    def restore(self, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        mu = self.mu.reshape(-1)
        return (mu + self._gain @ (y - self.matrix @ mu)).reshape(self.mu.shape)

    def neg_log_posterior(self, x, y) -> float:
        """``-log p(x | y)`` up to an additive constant."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        resid = np.asarray(y, dtype=np.float64).reshape(-1) - self.matrix @ x
        dev = x - self.mu.reshape(-1)
        return float(0.5 * resid @ resid / self.noise_var + 0.5 * np.sum(dev**2 / self.var.reshape(-1)))


def gaussian_posterior_restorer(mu, var, h, noise_var: float) -> GaussianPosteriorRestorer:
    if not noise_var > 0:
        raise InvalidArgumentError("noise variance must be positive")
    mu = np.asarray(mu, dtype=np.float64)
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), mu.shape).copy()
    if np.any(var <= 0):
        raise InvalidArgumentError("prior variances must be positive")
    matrix = h if isinstance(h, np.ndarray) else dense_matrix(h, mu.shape)
    return GaussianPosteriorRestorer(mu, var, np.asarray(matrix, dtype=np.float64), float(noise_var))


@dataclass(frozen=True)
class DehazeRestorer:
    """Affine inverse of :func:`haze_apply` for an assumed ``(t, A)`` pair."""

    transmission: float
    airlight: float

    @property
    def descriptor(self) -> str:
        return f"dehaze[t={self.transmission:g},A={self.airlight:g}]"

    def restore(self, y):
        y = np.asarray(y, dtype=np.float64)
        return (y - self.airlight * (1.0 - self.transmission)) / self.transmission


@dataclass(frozen=True)
class DerainRestorer:
    """Suppresses thin bright outliers: pixels far above a local median are replaced by it."""

    threshold: float = 0.1
    size: int = 3

    @property
    def descriptor(self) -> str:
        return f"derain[thr={self.threshold:g},size={self.size}]"

    def restore(self, y):
        y = np.asarray(y, dtype=np.float64)
        med = ndimage.median_filter(y, size=self.size, mode="wrap")
        return np.where(y - med > self.threshold, med, y)


@dataclass(frozen=True)
class MismatchedRestorer:
    """Transparent wrapper that records which degradation a restorer was built for."""

    base: Restorer
    built_for: DegradationSpec

    @property
    def descriptor(self) -> str:
        return f"{self.base.descriptor}@{self.built_for.describe()}"

    def restore(self, y):
        return self.base.restore(y)


def mismatched_restorer(base: Restorer, built_for: DegradationSpec) -> MismatchedRestorer:
    return MismatchedRestorer(base, built_for)
