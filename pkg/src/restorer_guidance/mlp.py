"""Small MLP score network trained by denoising score matching.

The network predicts the forward-kernel noise ``eps`` from ``(x_t, t)``; the
score is recovered as ``-eps_hat / sqrt(1 - alpha_bar_t)``. Backpropagation
is written out by hand so the package has no autodiff dependency.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergenceError
from .numerics import make_rng, read_grd, write_grd
from .schedule import NoiseSchedule

__all__ = ["MlpScoreNet", "TrainResult", "dsm_loss", "train_score_mlp", "zero_predictor_loss"]

logger = logging.getLogger(__name__)

MAX_WIDTH = 128


def time_features(t: np.ndarray, N: int, n_features: int) -> np.ndarray:
    """Sinusoidal features of ``t / N`` at octave-spaced frequencies."""
    tau = np.asarray(t, dtype=np.float64).reshape(-1, 1) / N
    freqs = np.pi * 2.0 ** np.arange(n_features // 2)
    return np.concatenate([np.sin(tau * freqs), np.cos(tau * freqs)], axis=1)


@dataclass
class MlpScoreNet:
    """Fully connected tanh network over flattened grids plus time features."""

    data_shape: tuple[int, ...]
    N: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    n_time_features: int = 8
    activation: str = "tanh"
    # set by bind(); needed to turn noise predictions into scores
    _schedule: NoiseSchedule | None = field(default=None, repr=False, compare=False)

    @classmethod
    def init(
        cls,
        data_shape: Sequence[int],
        N: int,
        hidden: Sequence[int] = (64, 64, 64),
        n_time_features: int = 8,
        seed: int = 0,
    ) -> "MlpScoreNet":
        if any(h > MAX_WIDTH or h < 1 for h in hidden):
            raise InvalidArgumentError(f"hidden widths must lie in [1, {MAX_WIDTH}]")
        data_shape = tuple(int(d) for d in data_shape)
        d = int(np.prod(data_shape))
        sizes = [d + n_time_features, *hidden, d]
        rng = make_rng(seed, stream=1)
        weights = [rng.standard_normal((a, b)) / math.sqrt(a) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(data_shape, N, weights, biases, n_time_features)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpScoreNet":
        return MlpScoreNet(
            self.data_shape,
            self.N,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.n_time_features,
            self.activation,
            self._schedule,
        )

    def _inputs(self, x_flat: np.ndarray, t: np.ndarray) -> np.ndarray:
        return np.concatenate([x_flat, time_features(t, self.N, self.n_time_features)], axis=1)

    def forward(self, x_flat: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batched noise prediction; also returns layer activations for backprop."""
        h = self._inputs(x_flat, t)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def predict_noise(self, x_flat: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.forward(x_flat, t)[0]

    def evaluate(self, x: np.ndarray, t: int, schedule: NoiseSchedule | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        eps = self.predict_noise(x.reshape(1, -1), np.array([t]))[0]
        sigma = math.sqrt(1.0 - self._alpha_bar(t, schedule))
        return (-eps / sigma).reshape(x.shape)

    def _alpha_bar(self, t: int, schedule: NoiseSchedule | None) -> float:
        if schedule is None:
            schedule = self._schedule
        if schedule is None:
            raise InvalidArgumentError("network is not bound to a schedule")
        return float(schedule.alpha_bar[t])

    def bind(self, schedule: NoiseSchedule) -> "MlpScoreNet":
        """Attaches the schedule used to turn noise predictions into scores."""
        if schedule.N != self.N:
            raise InvalidArgumentError("schedule length does not match the network's N")
        self._schedule = schedule
        return self

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [
            f"layers = {','.join(str(s) for s in self.layer_sizes)}",
            f"activation = {self.activation}",
            f"data_shape = {','.join(str(s) for s in self.data_shape)}",
            f"N = {self.N}",
            f"time_features = {self.n_time_features}",
        ]
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            write_grd(directory / f"W{i}.grd", w)
            write_grd(directory / f"b{i}.grd", b)

    @classmethod
    def load(cls, directory: str | Path) -> "MlpScoreNet":
        directory = Path(directory)
        meta = {}
        for line in (directory / "manifest.txt").read_text().splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
        if meta.get("activation") != "tanh":
            raise InvalidArgumentError(f"unsupported activation {meta.get('activation')!r}")
        n_layers = len(meta["layers"].split(",")) - 1
        weights = [read_grd(directory / f"W{i}.grd") for i in range(n_layers)]
        biases = [read_grd(directory / f"b{i}.grd") for i in range(n_layers)]
        shape = tuple(int(v) for v in meta["data_shape"].split(","))
        return cls(shape, int(meta["N"]), weights, biases, int(meta["time_features"]))


def dsm_loss(
    net: MlpScoreNet, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule
) -> tuple[float, list[np.ndarray]]:
    """Mean squared noise-prediction error and its gradient w.r.t. every parameter.

    ``x0`` and ``eps`` are ``(B, d)``; ``t`` is ``(B,)``. The loss is the
    denoising score-matching objective weighted by ``1 - alpha_bar_t``, which
    turns the target ``-eps / sigma_t`` into plain ``eps``.
    """
    ab = schedule.alpha_bar[t].reshape(-1, 1)
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    # a diverging run overflows here; the caller turns that into an error
    with np.errstate(over="ignore", invalid="ignore"):
        pred, acts = net.forward(x_t, t)
        resid = pred - eps
        batch, dim = resid.shape
        loss = float(np.mean(resid**2))

        grads_w = [np.empty(0)] * len(net.weights)
        grads_b = [np.empty(0)] * len(net.weights)
        delta = 2.0 * resid / (batch * dim)
        for i in range(len(net.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ net.weights[i].T) * (1.0 - acts[i] ** 2)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads += [gw, gb]
    return loss, grads


def zero_predictor_loss(x0: np.ndarray, t: np.ndarray, eps: np.ndarray) -> float:
    """Loss of the score-free predictor (``eps_hat = 0``) on the same draws."""
    return float(np.mean(eps**2))


@dataclass
class TrainResult:
    net: MlpScoreNet
    final_loss: float
    losses: list[float]
    baseline_loss: float


def train_score_mlp(
    samples: Sequence[np.ndarray] | np.ndarray,
    schedule: NoiseSchedule,
    *,
    lr: float = 1e-2,
    momentum: float = 0.9,
    epochs: int = 50,
    batch_size: int = 128,
    hidden: Sequence[int] = (64, 64, 64),
    n_time_features: int = 8,
    seed: int = 0,
) -> TrainResult:
    """Fits an :class:`MlpScoreNet` with minibatch SGD + momentum.

    Each epoch reshuffles the data and redraws ``(t, eps)`` per sample, all
    from a stream keyed by ``seed``. ``losses`` holds the mean minibatch loss
    per epoch. ``baseline_loss`` is the zero-predictor loss on a fixed
    evaluation draw, and ``final_loss`` the trained net's loss on that draw.
    """
    data = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    if data.shape[0] < 100:
        raise InvalidArgumentError("need at least 100 training samples")
    if not all(math.isfinite(v) for v in (lr, momentum)) or epochs < 0 or batch_size < 1:
        raise InvalidArgumentError("invalid training hyperparameters")
    shape = data.shape[1:]
    flat = data.reshape(data.shape[0], -1)
    net = MlpScoreNet.init(shape, schedule.N, hidden, n_time_features, seed).bind(schedule)

    eval_rng = make_rng(seed, stream=2)
    eval_t = eval_rng.integers(1, schedule.N + 1, size=flat.shape[0])
    eval_eps = eval_rng.standard_normal(flat.shape)
    baseline = zero_predictor_loss(flat, eval_t, eval_eps)

    rng = make_rng(seed, stream=3)
    velocity = [np.zeros_like(p) for p in net.params()]
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(flat.shape[0])
        batch_losses = []
        for start in range(0, flat.shape[0], batch_size):
            idx = order[start : start + batch_size]
            t = rng.integers(1, schedule.N + 1, size=idx.size)
            eps = rng.standard_normal((idx.size, flat.shape[1]))
            loss, grads = dsm_loss(net, flat[idx], t, eps, schedule)
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch, loss)
            with np.errstate(over="ignore", invalid="ignore"):
                for p, g, v in zip(net.params(), grads, velocity):
                    v *= momentum
                    v -= lr * g
                    p += v
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        logger.debug("epoch %d loss %.6f", epoch, losses[-1])

    final, _ = dsm_loss(net, flat, eval_t, eval_eps, schedule)
    if not math.isfinite(final):
        raise TrainingDivergenceError(epochs, final)
    return TrainResult(net, final, losses, baseline)
