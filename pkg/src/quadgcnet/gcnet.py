"""Guidance & control network: a small ReLU MLP with sigmoid outputs that maps
the (normalized) state features straight to the four throttle commands.

The forward/backward passes, Adam and the plateau learning-rate schedule are
written out in numpy; the network is tiny, and owning every step keeps the
training bit-reproducible under a seed.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit as _sigmoid

from quadgcnet import __version__
from quadgcnet.dataset import Dataset, Variant, feature_arity, normalization_stats
from quadgcnet.io import read_container, write_container

log = logging.getLogger(__name__)

HIDDEN = (120, 120, 120)
N_OUT = 4


class ArityError(ValueError):
    """Feature vector length does not match the network input."""


class TrainingDivergedError(RuntimeError):
    """Training loss became NaN or infinite."""


@dataclass
class PolicyNet:
    weights: list
    biases: list
    mean: np.ndarray
    std: np.ndarray
    variant: Variant = Variant.BASE
    wp_arity: int = 0
    omega_min: float = 3000.0
    omega_max: float = 12000.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.mean = np.asarray(self.mean, float)
        self.std = np.asarray(self.std, float)
        if self.weights[0].shape[0] != feature_arity(self.variant, self.wp_arity):
            raise ArityError("first layer does not match the variant's feature count")

    @property
    def arity(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "PolicyNet":
        return dataclasses.replace(self, weights=[w.copy() for w in self.weights],
                                   biases=[b.copy() for b in self.biases],
                                   mean=self.mean.copy(), std=self.std.copy(),
                                   provenance=dict(self.provenance))

    def save(self, path) -> None:
        arrays = {"mean": self.mean, "std": self.std}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = w
            arrays[f"b{i}"] = b
        meta = {"variant": self.variant.value, "wp_arity": self.wp_arity, "arity": self.arity,
                "hidden": list(self.hidden), "omega_min": self.omega_min, "omega_max": self.omega_max,
                "activation": {"hidden": "relu", "output": "sigmoid"}, "provenance": self.provenance}
        write_container(path, "policy_net", arrays, meta)

    @classmethod
    def load(cls, path) -> "PolicyNet":
        arrays, meta = read_container(path, "policy_net")
        n_layers = len(meta["hidden"]) + 1
        return cls([arrays[f"W{i}"] for i in range(n_layers)], [arrays[f"b{i}"] for i in range(n_layers)],
                   arrays["mean"], arrays["std"], meta["variant"], meta["wp_arity"],
                   meta["omega_min"], meta["omega_max"], meta["provenance"])


def init_policy(variant: Variant | str = Variant.BASE, wp_arity: int = 0, seed: int = 0,
                hidden: Sequence[int] = HIDDEN, mean=None, std=None,
                omega_min: float = 3000.0, omega_max: float = 12000.0) -> PolicyNet:
    """He-uniform weights (fan-in), zero biases; identity normalization unless given."""
    variant = Variant(variant)
    if variant is not Variant.WP_REL:
        wp_arity = 0
    n_in = feature_arity(variant, wp_arity)
    rng = np.random.default_rng(seed)
    sizes = [n_in, *hidden, N_OUT]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    mean = np.zeros(n_in) if mean is None else mean
    std = np.ones(n_in) if std is None else std
    return PolicyNet(weights, biases, mean, std, variant, wp_arity, omega_min, omega_max)


def _check_arity(net: PolicyNet, x: np.ndarray):
    if x.shape[-1] != net.arity:
        raise ArityError(f"expected {net.arity} features ({net.variant.value}), got {x.shape[-1]}")


def forward(net: PolicyNet, features) -> np.ndarray:
    """Throttle commands in (0, 1) for one feature vector or a batch of rows."""
    x = np.asarray(features, dtype=float)
    _check_arity(net, x)
    h = (x - net.mean) / net.std
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return _sigmoid(h)


def command_rpm(net: PolicyNet, features, omega_max: Optional[float] = None) -> np.ndarray:
    """Map the network output onto rotor speeds in RPM.

    For the adaptive variant the ceiling defaults to the network's own
    omega_max input feature.
    """
    x = np.asarray(features, dtype=float)
    u = forward(net, x)
    if omega_max is None:
        omega_max = x[..., 19:20] if net.variant is Variant.OMEGA_MAX else net.omega_max
    return (np.asarray(omega_max) - net.omega_min) * u + net.omega_min


def loss_and_grads(net: PolicyNet, features: np.ndarray, labels: np.ndarray):
    """MSE (mean over records and outputs) and its gradients w.r.t. every
    weight and bias, in the order of :meth:`PolicyNet.parameters`."""
    x = (np.asarray(features, float) - net.mean) / net.std
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    y = _sigmoid(acts[-1])
    diff = y - labels
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size * y * (1.0 - y)
    grads = [None] * (2 * len(net.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0.0)
    return loss, grads


def mse(net: PolicyNet, features, labels, batch: int = 8192) -> float:
    total = 0.0
    n = len(features)
    for s in range(0, n, batch):
        d = forward(net, features[s:s + batch]) - labels[s:s + batch]
        total += float(np.sum(d * d))
    return total / (n * N_OUT)


def control_error_pct(loss: float) -> float:
    """RMS control error in percent of the unit throttle range."""
    if loss < 0:
        raise ValueError("loss must be non-negative")
    return 100.0 * float(np.sqrt(loss))


def gradient_check(net: PolicyNet, features, labels, step: float = 1e-5,
                   max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Largest relative gap between backprop and central differences.

    Per entry the gap is |g_bp - g_fd| / max(|g_bp| + |g_fd|, 1e-7).
    ``max_entries`` checks a seeded random subset of each parameter array.
    """
    features = np.asarray(features, float)
    labels = np.asarray(labels, float)
    _, grads = loss_and_grads(net, features, labels)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for param, grad in zip(net.parameters(), grads):
        flat = param.reshape(-1)
        gflat = grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for j in idx:
            keep = flat[j]
            flat[j] = keep + step
            lp, _ = loss_and_grads(net, features, labels)
            flat[j] = keep - step
            lm, _ = loss_and_grads(net, features, labels)
            flat[j] = keep
            fd = (lp - lm) / (2.0 * step)
            rel = abs(gflat[j] - fd) / max(abs(gflat[j]) + abs(fd), 1e-7)
            worst = max(worst, rel)
    return worst


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    factor: float = 0.9
    patience: int = 6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    plateau_threshold: float = 1e-6

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class _Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / b1t) / (np.sqrt(v / b2t) + c.adam_eps)


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` once the validation loss has
    failed to improve by more than ``threshold`` for ``patience`` epochs."""

    def __init__(self, lr: float, factor: float, patience: int, threshold: float):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.best = np.inf
        self.bad = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the rate for the next epoch."""
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


def train(net: PolicyNet, train_set: Dataset, val_set: Optional[Dataset], config: TrainConfig,
          progress=None):
    """Minibatch Adam on the MSE; returns (trained copy, per-epoch history).

    Normalization statistics are taken from the training set (its stored
    ones if present).  History rows: epoch, train_loss, val_loss, lr.
    """
    for ds in (train_set, val_set):
        if ds is not None and (ds.variant != net.variant or ds.arity != net.arity):
            raise ArityError(f"dataset {ds.variant.value}/{ds.arity} does not match the network "
                             f"{net.variant.value}/{net.arity}")
    net = net.copy()
    if train_set.mean is not None:
        net.mean, net.std = train_set.mean.copy(), train_set.std.copy()
    else:
        net.mean, net.std = normalization_stats(train_set)
    X, Y = train_set.features, train_set.labels
    n = len(X)
    params = net.parameters()
    opt = _Adam(params, config)
    schedule = PlateauSchedule(config.lr, config.factor, config.patience, config.plateau_threshold)
    lr = schedule.lr
    history = []
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_grads(net, X[idx], Y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            opt.step(params, grads, lr)
            total += loss * len(idx)
        train_loss = total / n
        val_loss = mse(net, val_set.features, val_set.labels) if val_set is not None and len(val_set) else train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        if progress is not None:
            progress(history[-1])
        lr = schedule.step(val_loss)
    net.provenance = {"train_config": config.to_dict(), "n_train": int(n),
                      "n_val": 0 if val_set is None else int(len(val_set)),
                      "final_val_loss": history[-1]["val_loss"],
                      "dataset": train_set.provenance.get("seed") if train_set.provenance else None,
                      "version": __version__}
    return net, history
