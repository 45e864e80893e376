"""Rectifier MLPs with a logistic output, trained by minibatch SGD with momentum
on binary cross-entropy plus an optional L2 penalty on the weights."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from shapleyvic.errors import NumericalError, ValidationError

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class MLPArch:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ValidationError("an MLP needs an input layer, at least one hidden layer and an output")
        if sizes[-1] != 1:
            raise ValidationError("output layer must have exactly one unit")
        if any(s < 1 for s in sizes):
            raise ValidationError(f"layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def for_inputs(cls, d: int, hidden=(32,)) -> "MLPArch":
        return cls((d, *hidden, 1))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


@dataclass(frozen=True, eq=False)
class MLPModel:
    """Weights are ``(fan_in, fan_out)`` matrices.

    ``input_shift``/``input_scale`` standardize raw rows before the first
    layer; they are fixed at training time and are not parameters.
    """

    arch: MLPArch
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    init_seed: int
    input_shift: np.ndarray = field(default=None)
    input_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        ws = tuple(np.array(w, dtype=float) for w in self.weights)
        bs = tuple(np.array(b, dtype=float).reshape(-1) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(ws):
            raise ValidationError("number of weight/bias arrays does not match the architecture")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValidationError(f"layer {i} parameter shapes do not match the architecture")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {i} has non-finite parameters")
        d = sizes[0]
        shift = np.zeros(d) if self.input_shift is None else np.array(self.input_shift, dtype=float)
        scale = np.ones(d) if self.input_scale is None else np.array(self.input_scale, dtype=float)
        if shift.shape != (d,) or scale.shape != (d,) or np.any(scale <= 0):
            raise ValidationError("input standardization must have one positive scale per input")
        for a in (*ws, *bs, shift, scale):
            a.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_scale", scale)

    @property
    def d(self) -> int:
        return self.arch.n_inputs

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_flat_params(self, theta: np.ndarray) -> "MLPModel":
        ws, bs = unflatten(self.arch, theta)
        return replace(self, weights=ws, biases=bs)

    def weight_sq_sum(self) -> float:
        return float(sum(np.sum(w * w) for w in self.weights))

    def same_params(self, other: "MLPModel") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a, b)
            for a, b in zip((*self.weights, *self.biases), (*other.weights, *other.biases))
        )


def unflatten(arch: MLPArch, theta: np.ndarray) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    sizes = arch.layer_sizes
    theta = np.asarray(theta, dtype=float)
    if theta.size != arch.n_params:
        raise ValidationError(f"expected {arch.n_params} parameters, got {theta.size}")
    ws, bs, pos = [], [], 0
    for i in range(len(sizes) - 1):
        n_w = sizes[i] * sizes[i + 1]
        ws.append(theta[pos:pos + n_w].reshape(sizes[i], sizes[i + 1]))
        pos += n_w
        bs.append(theta[pos:pos + sizes[i + 1]])
        pos += sizes[i + 1]
    return tuple(ws), tuple(bs)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    momentum: float = 0.9
    standardize: bool = True

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError("lambda must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must be in [0, 1)")


def init_model(arch: MLPArch, seed: int) -> MLPModel:
    """Weights uniform on ``±1/sqrt(fan_in)``, biases zero."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    ws = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    bs = [np.zeros(s) for s in sizes[1:]]
    return MLPModel(arch=arch, weights=tuple(ws), biases=tuple(bs), init_seed=int(seed))


def _check_rows(model: MLPModel, rows) -> np.ndarray:
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ValidationError(f"expected rows of width {model.d}, got shape {np.shape(rows)}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input rows contain non-finite values")
    return x


def _forward(model: MLPModel, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Return the activations feeding each layer and the output logits."""
    a = (x - model.input_shift) / model.input_scale
    acts = [a]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i == last:
            return acts, z[:, 0]
        a = np.maximum(z, 0.0)
        acts.append(a)
    raise AssertionError("unreachable")


def logits(model: MLPModel, rows) -> np.ndarray:
    return _forward(model, _check_rows(model, rows))[1]


def predict(model: MLPModel, rows) -> np.ndarray:
    """Probability of class 1 for each row."""
    return expit(logits(model, rows))


def predict_unchecked(model: MLPModel, x: np.ndarray) -> np.ndarray:
    """``predict`` without input validation, for hot loops over trusted arrays."""
    return expit(_forward(model, x)[1])


def _check_labels(labels, k: int) -> np.ndarray:
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != k:
        raise ValidationError(f"got {y.size} labels for {k} rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    return y


def cross_entropy(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))


def loss(model: MLPModel, rows, labels, lam: float = 0.0) -> float:
    """Mean binary cross-entropy plus ``lam`` times the sum of squared weights (biases excluded)."""
    x = _check_rows(model, rows)
    if x.shape[0] == 0:
        raise ValidationError("loss of an empty row set is undefined")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    y = _check_labels(labels, x.shape[0])
    value = cross_entropy(expit(_forward(model, x)[1]), y)
    if lam:
        value += lam * model.weight_sq_sum()
    return value


def _grad_core(ws, bs, a: np.ndarray, y: np.ndarray, lam: float):
    """Backprop on already-standardized inputs ``a``."""
    acts = [a]
    last = len(ws) - 1
    for i in range(last):
        a = np.maximum(a @ ws[i] + bs[i], 0.0)
        acts.append(a)
    p = expit((a @ ws[last] + bs[last])[:, 0])
    # the clamp is flat outside its bounds, so clamped rows carry no gradient
    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    delta = (np.where(inside, p - y, 0.0) / y.size)[:, None]
    dws: list[np.ndarray] = [None] * len(ws)
    dbs: list[np.ndarray] = [None] * len(ws)
    for i in range(last, -1, -1):
        dws[i] = acts[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        if lam:
            dws[i] += 2.0 * lam * ws[i]
        if i:
            delta = (delta @ ws[i].T) * (acts[i] > 0)
    return dws, dbs


def gradient(model: MLPModel, rows, labels, lam: float = 0.0):
    """Exact gradient of :func:`loss` on the given batch.

    Returns ``(weight_grads, bias_grads)``, each a list shaped like the model's parameters.
    """
    x = _check_rows(model, rows)
    if x.shape[0] == 0:
        raise ValidationError("gradient needs a nonempty batch")
    y = _check_labels(labels, x.shape[0])
    a = (x - model.input_shift) / model.input_scale
    return _grad_core(model.weights, model.biases, a, y, lam)


def flat_gradient(model: MLPModel, rows, labels, lam: float = 0.0) -> np.ndarray:
    dws, dbs = gradient(model, rows, labels, lam)
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(dws, dbs)])


def _standardizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return shift, scale


def train(
    rows,
    labels,
    arch: MLPArch,
    cfg: TrainConfig,
    init: MLPModel | None = None,
) -> MLPModel:
    """Minibatch SGD with momentum on the ``cfg.lam``-penalized loss.

    Starts from ``init_model(arch, cfg.seed)`` unless ``init`` is given, in
    which case training continues from its parameters and keeps its input
    standardization (fine-tuning). Runs ``epochs * ceil(n / batch_size)``
    steps; the shuffle order is drawn from ``cfg.seed``.
    """
    if init is not None:
        if init.arch != arch:
            raise ValidationError("init model architecture differs from arch")
        model = init
    else:
        model = init_model(arch, cfg.seed)
    x = _check_rows(model, rows)
    y = _check_labels(labels, x.shape[0])
    if init is None:
        if np.unique(y).size < 2:
            raise ValidationError("training data must contain both outcome classes")
        if cfg.standardize:
            shift, scale = _standardizer(x)
            model = replace(model, input_shift=shift, input_scale=scale)
    n = x.shape[0]
    if n == 0 or cfg.epochs == 0:
        return model

    ws = [w.copy() for w in model.weights]
    bs = [b.copy() for b in model.biases]
    vw = [np.zeros_like(w) for w in ws]
    vb = [np.zeros_like(b) for b in bs]
    xs = (x - model.input_shift) / model.input_scale
    rng = np.random.default_rng([cfg.seed, 1])
    lr, mu, lam = cfg.learning_rate, cfg.momentum, cfg.lam
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                dws, dbs = _grad_core(ws, bs, xs[idx], y[idx], lam)
                for i in range(len(ws)):
                    vw[i] *= mu
                    vw[i] += dws[i]
                    ws[i] -= lr * vw[i]
                    vb[i] *= mu
                    vb[i] += dbs[i]
                    bs[i] -= lr * vb[i]
            if not all(np.all(np.isfinite(p)) for p in (*ws, *bs)):
                raise NumericalError(
                    f"training diverged at epoch {epoch + 1} (lr={lr}, lambda={lam}, seed={cfg.seed})"
                )
    out = replace(model, weights=tuple(ws), biases=tuple(bs))
    with np.errstate(over="ignore", invalid="ignore"):
        final = loss(out, x, y, lam)
    if not math.isfinite(final):
        raise NumericalError(f"training ended with non-finite loss (lr={lr}, lambda={lam})")
    return out


def model_to_dict(model: MLPModel) -> dict:
    return {
        "arch": list(model.arch.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "init_seed": model.init_seed,
        "input_shift": model.input_shift.tolist(),
        "input_scale": model.input_scale.tolist(),
    }


def model_from_dict(obj: dict) -> MLPModel:
    arch = MLPArch(tuple(obj["arch"]))
    return MLPModel(
        arch=arch,
        weights=tuple(np.array(w, dtype=float).reshape(a, b)
                      for w, a, b in zip(obj["weights"], arch.layer_sizes[:-1], arch.layer_sizes[1:])),
        biases=tuple(np.array(b, dtype=float) for b in obj["biases"]),
        init_seed=int(obj["init_seed"]),
        input_shift=obj.get("input_shift"),
        input_scale=obj.get("input_scale"),
    )


def save_model(model: MLPModel, path: str | os.PathLike) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path: str | os.PathLike) -> MLPModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
