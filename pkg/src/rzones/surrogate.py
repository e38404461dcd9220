"""Patch-level yield regression: a pluggable regressor interface, a dense
reference network with hand-rolled backprop, an SGD trainer, and a finite
difference gradient check.

The pipeline only relies on the cube -> 5x5 patch contract, so any regressor
implementing :class:`PatchRegressor` (a convolutional drop-in, say) can replace
:class:`DenseNet`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import PATCH_SIZE, Patch

Array = np.ndarray

ACTIVATIONS = ("tanh", "sigmoid", "identity")


def _act(name: str, z: Array) -> Array:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(name: str, a: Array) -> Array:
    # Derivative expressed through the activation value a = act(z).
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


class PatchRegressor:
    """Deterministic map from a (patch_size, patch_size, n_features) cube to a
    (patch_size, patch_size) yield patch. Pure after training."""

    n_features: int
    patch_size: int

    def predict(self, cube: Array) -> Array:
        raise NotImplementedError

    def predict_batch(self, cubes: Array) -> Array:
        """Default batch path: stacked single predictions."""
        return np.stack([self.predict(c) for c in cubes])


class DenseNet(PatchRegressor):
    """Fully connected regression network.

    layer_sizes lists every layer width, input and output included; the default
    is [patch*patch*n_features, 128, 64, patch*patch]. Hidden layers use a
    smooth activation, the output layer is linear. Inputs are min-max scaled
    per feature with the ranges captured from the training field; without
    ranges the network runs on raw values. Outputs are produced in a
    standardized target space and mapped back through (y_scale, y_shift),
    which the trainer sets from the training targets.
    """

    def __init__(self, layer_sizes=None, n_features=8, patch_size=PATCH_SIZE,
                 activation="tanh", seed=0, feature_ranges=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_features = n_features
        self.patch_size = patch_size
        self.activation = activation
        self.seed = seed
        if layer_sizes is None:
            layer_sizes = [patch_size * patch_size * n_features, 128, 64, patch_size * patch_size]
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ValueError("layer_sizes needs at least input and output widths")
        self.layer_sizes = [int(s) for s in layer_sizes]
        if feature_ranges is not None:
            feature_ranges = np.asarray(feature_ranges, dtype=float)
            if feature_ranges.shape != (n_features, 2):
                raise ValueError("feature_ranges must be (n_features, 2)")
        self.feature_ranges = feature_ranges
        self.y_shift = 0.0
        self.y_scale = 1.0
        rng = np.random.default_rng(seed)
        self.weights: list[Array] = []
        self.biases: list[Array] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- shape helpers ------------------------------------------------------

    @property
    def _cube_shape(self):
        return (self.patch_size, self.patch_size, self.n_features)

    def _normalize(self, cubes: Array) -> Array:
        if self.feature_ranges is None:
            return cubes
        lo = self.feature_ranges[:, 0]
        span = self.feature_ranges[:, 1] - lo
        span = np.where(span > 0, span, 1.0)
        return (cubes - lo) / span

    def _flatten_cubes(self, cubes: Array) -> Array:
        cubes = np.asarray(cubes, dtype=float)
        if cubes.shape[-3:] != self._cube_shape:
            raise ValueError(f"cube shape {cubes.shape[-3:]} does not match {self._cube_shape}")
        flat = self._normalize(cubes).reshape(-1, self.layer_sizes[0])
        if flat.shape[1] != self.layer_sizes[0]:
            raise ValueError("cube does not flatten to the network input width")
        return flat

    # -- forward / backward -------------------------------------------------

    def forward_raw(self, x: Array) -> Array:
        """Forward pass on already flattened, already normalized inputs."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        if a.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input width {a.shape[1]} != {self.layer_sizes[0]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else _act(self.activation, z)
        return a

    def _forward_cached(self, x: Array) -> list[Array]:
        acts = [x]
        last = len(self.weights) - 1
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if i == last else _act(self.activation, z)
            acts.append(a)
        return acts

    def _backward(self, acts: list[Array], residual_grad: Array):
        """Gradients of the loss w.r.t. every weight and bias.

        residual_grad is dLoss/dOutput for the batch, shape (B, n_out).
        """
        gw = [np.empty_like(w) for w in self.weights]
        gb = [np.empty_like(b) for b in self.biases]
        delta = residual_grad
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * _act_grad(self.activation, acts[i])
        return gw, gb

    def _core_loss_and_gradient(self, x: Array, t: Array):
        """MSE against targets already in the network's output space."""
        acts = self._forward_cached(x)
        resid = acts[-1] - t
        loss = float(np.mean(resid * resid))
        gw, gb = self._backward(acts, 2.0 * resid / resid.size)
        return loss, gw, gb

    def loss_and_gradient(self, x: Array, y: Array):
        """Raw-scale mean squared error over output cells plus its gradient.

        y is in raw yield units; the residual passes through the stored output
        scaling, so the gradient matches the loss the user observes.
        """
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        acts = self._forward_cached(x)
        resid = acts[-1] * self.y_scale + self.y_shift - y
        loss = float(np.mean(resid * resid))
        gw, gb = self._backward(acts, 2.0 * self.y_scale * resid / resid.size)
        return loss, gw, gb

    # -- parameter vector view (for the gradient check and tests) -----------

    def parameter_vector(self) -> Array:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_parameter_vector(self, vec: Array):
        vec = np.asarray(vec, dtype=float)
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = vec[pos:pos + b.size].copy()
            pos += b.size
        if pos != vec.size:
            raise ValueError("parameter vector length mismatch")

    # -- public prediction API ----------------------------------------------

    def predict(self, cube: Array) -> Array:
        out = self.forward_raw(self._flatten_cubes(cube)) * self.y_scale + self.y_shift
        return out.reshape(self.patch_size, self.patch_size)

    def predict_batch(self, cubes: Array) -> Array:
        cubes = np.asarray(cubes, dtype=float)
        out = self.forward_raw(self._flatten_cubes(cubes)) * self.y_scale + self.y_shift
        return out.reshape(-1, self.patch_size, self.patch_size)

    # -- serialization -------------------------------------------------------

    def save(self, path):
        doc = {
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "n_features": self.n_features,
            "patch_size": self.patch_size,
            "seed": self.seed,
            "feature_ranges": None if self.feature_ranges is None else self.feature_ranges.tolist(),
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DenseNet":
        doc = json.loads(Path(path).read_text())
        net = cls(layer_sizes=doc["layer_sizes"], n_features=doc["n_features"],
                  patch_size=doc["patch_size"], activation=doc["activation"],
                  seed=doc["seed"],
                  feature_ranges=doc["feature_ranges"])
        net.y_shift = float(doc["y_shift"])
        net.y_scale = float(doc["y_scale"])
        for i, (w, b) in enumerate(zip(doc["weights"], doc["biases"])):
            net.weights[i] = np.asarray(w, dtype=float).reshape(net.weights[i].shape)
            net.biases[i] = np.asarray(b, dtype=float)
        return net


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 0.005
    seed: int = 0
    l2_penalty: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    final_train_rmse: float
    final_val_rmse: float
    loss_history: Array
    batches_per_epoch: int

    def epoch_means(self) -> Array:
        return self.loss_history.reshape(-1, self.batches_per_epoch).mean(axis=1)


def _patch_matrix(regressor: DenseNet, patches: list[Patch]):
    cubes = np.stack([p.cube for p in patches])
    x = regressor._flatten_cubes(cubes)
    targets = []
    for p in patches:
        if p.target is None:
            raise ValueError(f"patch at {p.origin} is unlabeled")
        targets.append(p.target.ravel())
    return x, np.stack(targets)


def train(regressor: DenseNet, train_patches: list[Patch], val_patches: list[Patch],
          config: TrainConfig) -> TrainReport:
    """Mini-batch SGD on mean squared patch error; deterministic given the seed.

    With a positive learning rate the model's output scaling is first set to
    the training targets' mean and standard deviation, so the optimizer works
    on a standardized residual; at learning_rate=0 the network is left
    untouched. L2 decay applies to weights only. A non-finite batch loss
    aborts. loss_history holds the raw-scale batch MSE before each update.
    """
    if not train_patches or not val_patches:
        raise ValueError("need nonempty train and validation sets")
    x_tr, y_tr = _patch_matrix(regressor, train_patches)
    x_val, y_val = _patch_matrix(regressor, val_patches)

    lr = config.learning_rate
    if lr > 0:
        regressor.y_shift = float(y_tr.mean())
        sd = float(y_tr.std())
        regressor.y_scale = sd if sd > 0 else 1.0
    # The optimizer works on the standardized residual for conditioning; the
    # recorded history is still the raw-scale MSE.
    t_tr = (y_tr - regressor.y_shift) / regressor.y_scale
    raw_factor = regressor.y_scale ** 2

    rng = np.random.default_rng(config.seed)
    m = x_tr.shape[0]
    batches = [(s, min(s + config.batch_size, m)) for s in range(0, m, config.batch_size)]
    history = np.empty(config.epochs * len(batches))
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(m)
        for lo, hi in batches:
            idx = order[lo:hi]
            loss, gw, gb = regressor._core_loss_and_gradient(x_tr[idx], t_tr[idx])
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}")
            history[step] = loss * raw_factor
            step += 1
            if lr > 0:
                for i in range(len(regressor.weights)):
                    g = gw[i]
                    if config.l2_penalty > 0:
                        g = g + 2.0 * config.l2_penalty * regressor.weights[i]
                    regressor.weights[i] = regressor.weights[i] - lr * g
                    regressor.biases[i] = regressor.biases[i] - lr * gb[i]

    for w, b in zip(regressor.weights, regressor.biases):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise RuntimeError("non-finite parameters after training")

    def rmse(x, y):
        pred = regressor.forward_raw(x) * regressor.y_scale + regressor.y_shift
        return float(np.sqrt(np.mean((pred - y) ** 2)))

    return TrainReport(rmse(x_tr, y_tr), rmse(x_val, y_val), history, len(batches))


def predict(regressor: PatchRegressor, cube: Array) -> Array:
    """Contract form of regressor.predict."""
    return regressor.predict(cube)


def gradient_check(regressor: DenseNet, cube: Array, target: Array,
                   epsilon: float = 1e-5, n_params: int = 64, seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    The loss is the mean squared error of predicting ``target`` from ``cube``.
    A random subset of at least min(50, total) parameters is probed; epsilon
    must lie in [1e-7, 1e-3].
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    cube = np.asarray(cube, dtype=float)
    if cube.shape == regressor._cube_shape:
        x = regressor._flatten_cubes(cube)
    else:
        x = np.atleast_2d(cube.ravel())
    y = np.atleast_2d(np.asarray(target, dtype=float).ravel())

    _, gw, gb = regressor.loss_and_gradient(x, y)
    analytic = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gw, gb)])

    theta = regressor.parameter_vector()
    total = theta.size
    k = min(total, max(50, n_params))
    idx = np.sort(np.random.default_rng(seed).choice(total, size=k, replace=False))

    def raw_loss():
        pred = regressor.forward_raw(x) * regressor.y_scale + regressor.y_shift
        return float(np.mean((pred - y) ** 2))

    worst = 0.0
    try:
        for i in idx:
            bump = np.zeros_like(theta)
            bump[i] = epsilon
            regressor.set_parameter_vector(theta + bump)
            up = raw_loss()
            regressor.set_parameter_vector(theta - bump)
            dn = raw_loss()
            numeric = (up - dn) / (2.0 * epsilon)
            rel = abs(numeric - analytic[i]) / max(abs(numeric) + abs(analytic[i]), 1e-8)
            worst = max(worst, rel)
    finally:
        regressor.set_parameter_vector(theta)
    return worst
