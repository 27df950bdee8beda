"""Shared-trunk network with a classification head and a regression head.

One parameter set serves all three approaches:

* ``baseline``: trunk -> classification head, trained on binary cross-entropy.
* ``hybrid``: trunk -> regression head, trained on mean squared error over
  magnitudes (0 for normal cases); deviance is ``raw output > 0``.
* ``mtl``: both heads; the regression head reads the trunk output concatenated
  with the classification probability, and the loss is BCE + MSE.

Gradients are computed analytically with numpy and can be verified against
central finite differences with :func:`gradient_check`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from pcm.errors import ConfigError, ContractError, ParseError, TrainingError, VersionError

EPS = 1e-12
MODEL_FORMAT = "pcm-model"
MODEL_VERSION = 1


class Mode(str, Enum):
    BASELINE = "baseline"
    HYBRID = "hybrid"
    MTL = "mtl"


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (32, 16)
    activation: str = "tanh"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 60
    seed: int = 0
    dropout: float = 0.0
    patience: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**dict(d))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _tanh_grad(z, h):
    return 1.0 - h * h


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, h):
    return (z > 0).astype(z.dtype)


_ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
}


def sigmoid(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_bce(y, p) -> float:
    """Mean binary cross-entropy; probabilities are clipped to [EPS, 1 - EPS]."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    if y.shape != p.shape:
        raise ContractError(f"shape mismatch: {y.shape} vs {p.shape}")
    if y.size == 0:
        raise ContractError("loss_bce of an empty batch")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def loss_mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ContractError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ContractError("loss_mse of an empty batch")
    return float(np.mean((y - y_hat) ** 2))


def loss_total(bce: float, mse: float) -> float:
    """Unweighted sum of the classification and regression losses."""
    if not (math.isfinite(bce) and math.isfinite(mse)):
        raise ContractError("loss_total needs finite inputs")
    return bce + mse


@dataclass(frozen=True)
class BatchLoss:
    bce: float
    mse: float
    total: float


@dataclass
class Prediction:
    prob: np.ndarray
    raw_magnitude: np.ndarray
    decision: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        """Inference-time magnitude: the raw regression output clamped at 0."""
        return np.maximum(self.raw_magnitude, 0.0)


class MtlModel:
    """Dense trunk plus classification and/or regression head, per ``mode``."""

    def __init__(
        self,
        n_features: int,
        hidden: Sequence[int] = (32, 16),
        mode: Mode | str = Mode.MTL,
        activation: str = "tanh",
        seed: int = 0,
    ):
        if n_features < 1:
            raise ContractError("model needs at least one input feature")
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.n_features = int(n_features)
        self.hidden = tuple(int(h) for h in hidden)
        self.mode = Mode(mode)
        self.activation = activation
        self.seed = int(seed)
        self.params: dict[str, np.ndarray] = {}
        self._init_params()

    @classmethod
    def from_config(cls, n_features: int, mode: Mode | str, config: TrainConfig) -> "MtlModel":
        return cls(n_features, config.hidden, mode, config.activation, config.seed)

    @property
    def trunk_width(self) -> int:
        return self.hidden[-1] if self.hidden else self.n_features

    @property
    def has_cls(self) -> bool:
        return self.mode in (Mode.BASELINE, Mode.MTL)

    @property
    def has_reg(self) -> bool:
        return self.mode in (Mode.HYBRID, Mode.MTL)

    @property
    def reg_input_width(self) -> int:
        return self.trunk_width + (1 if self.mode is Mode.MTL else 0)

    def _init_params(self):
        rng = np.random.default_rng(self.seed)

        def dense(fan_in, fan_out):
            limit = math.sqrt(3.0 / fan_in)
            return rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)

        width = self.n_features
        for i, size in enumerate(self.hidden):
            self.params[f"trunk.{i}.W"], self.params[f"trunk.{i}.b"] = dense(width, size)
            width = size
        if self.has_cls:
            self.params["cls.W"], self.params["cls.b"] = dense(self.trunk_width, 1)
        if self.has_reg:
            self.params["reg.W"], self.params["reg.b"] = dense(self.reg_input_width, 1)

    def copy(self) -> "MtlModel":
        clone = MtlModel.__new__(MtlModel)
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    # -- forward / backward -------------------------------------------------

    def _forward(self, X: np.ndarray, masks: Sequence[np.ndarray] | None = None) -> dict:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ContractError(
                f"expected input of width {self.n_features}, got shape {X.shape}"
            )
        act, _ = _ACTIVATIONS[self.activation]
        inputs, zs, hs = [], [], []
        a = X
        for i in range(len(self.hidden)):
            inputs.append(a)
            z = a @ self.params[f"trunk.{i}.W"] + self.params[f"trunk.{i}.b"]
            h = act(z)
            zs.append(z)
            hs.append(h)
            a = h * masks[i] if masks is not None else h
        cache = {"inputs": inputs, "zs": zs, "hs": hs, "H": a, "masks": masks}
        n = X.shape[0]
        if self.has_cls:
            s = (a @ self.params["cls.W"])[:, 0] + self.params["cls.b"][0]
            cache["s"] = s
            cache["p"] = sigmoid(s)
        if self.has_reg:
            G = np.column_stack([a, cache["p"]]) if self.mode is Mode.MTL else a
            cache["G"] = G
            cache["r"] = (G @ self.params["reg.W"])[:, 0] + self.params["reg.b"][0]
        else:
            cache["r"] = np.zeros(n)
        return cache

    def predict(self, X) -> Prediction:
        """Batch inference (dropout off)."""
        cache = self._forward(np.atleast_2d(X))
        raw = cache["r"]
        decision = (raw > 0).astype(np.int64) if self.mode is Mode.HYBRID else None
        if self.has_cls:
            prob = np.clip(cache["p"], EPS, 1.0 - EPS)
            if decision is None:
                decision = (prob >= 0.5).astype(np.int64)
        else:
            prob = np.where(decision == 1, 1.0 - EPS, EPS)
        return Prediction(prob, raw, decision)

    def row_losses(self, X, y, m) -> np.ndarray:
        """Per-row terms whose sum is the batch ``total`` loss (no dropout)."""
        cache = self._forward(X)
        y = np.asarray(y, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        n = y.shape[0]
        out = np.zeros(n)
        if self.mode is not Mode.HYBRID:
            p = np.clip(cache["p"], EPS, 1.0 - EPS)
            out -= (y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n
        if self.mode is not Mode.BASELINE:
            out += (m - cache["r"]) ** 2 / n
        return out

    def losses(self, X, y, m, masks=None) -> BatchLoss:
        return self._losses(self._forward(X, masks), y, m)

    def _losses(self, cache, y, m) -> BatchLoss:
        bce = loss_bce(y, cache["p"]) if self.has_cls else 0.0
        mse = loss_mse(m, cache["r"]) if self.has_reg else 0.0
        if self.mode is Mode.BASELINE:
            total = bce
        elif self.mode is Mode.HYBRID:
            total = mse
        else:
            total = loss_total(bce, mse)
        return BatchLoss(bce, mse, total)

    def loss_and_grads(self, X, y, m, masks=None) -> tuple[BatchLoss, dict[str, np.ndarray]]:
        """Mode-appropriate loss on a batch and its exact gradient per parameter."""
        y = np.asarray(y, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64)
        cache = self._forward(X, masks)
        loss = self._losses(cache, y, m)
        n = y.shape[0]
        H = cache["H"]
        grads: dict[str, np.ndarray] = {}
        dH = np.zeros_like(H)
        ds = np.zeros(n)
        if self.has_reg:
            dr = 2.0 * (cache["r"] - m) / n
            grads["reg.W"] = (cache["G"].T @ dr)[:, None]
            grads["reg.b"] = np.array([dr.sum()])
            dG = np.outer(dr, self.params["reg.W"][:, 0])
            dH += dG[:, : self.trunk_width]
            if self.mode is Mode.MTL:
                p = cache["p"]
                ds += dG[:, -1] * p * (1.0 - p)
        if self.has_cls:
            p = cache["p"]
            inside = (p > EPS) & (p < 1.0 - EPS)  # gradient is 0 where the clip is active
            ds += np.where(inside, (p - y) / n, 0.0)
            grads["cls.W"] = (H.T @ ds)[:, None]
            grads["cls.b"] = np.array([ds.sum()])
            dH += np.outer(ds, self.params["cls.W"][:, 0])
        _, act_grad = _ACTIVATIONS[self.activation]
        da = dH
        for i in reversed(range(len(self.hidden))):
            if cache["masks"] is not None:
                da = da * cache["masks"][i]
            dz = da * act_grad(cache["zs"][i], cache["hs"][i])
            grads[f"trunk.{i}.W"] = cache["inputs"][i].T @ dz
            grads[f"trunk.{i}.b"] = dz.sum(axis=0)
            da = dz @ self.params[f"trunk.{i}.W"].T
        return loss, {k: grads[k] for k in self.params}


def forward(model: MtlModel, features) -> tuple[float, float]:
    """Probability and raw magnitude for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("forward expects a single feature vector")
    pred = model.predict(x[None, :])
    return float(pred.prob[0]), float(pred.raw_magnitude[0])


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, params: Mapping[str, np.ndarray], config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.adam_eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _dropout_masks(model: MtlModel, n: int, rate: float, rng) -> list[np.ndarray] | None:
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return [(rng.random((n, h)) < keep) / keep for h in model.hidden]


def backward_and_step(
    model: MtlModel,
    X,
    y,
    m,
    config: TrainConfig,
    optimizer: Adam | None = None,
    rng: np.random.Generator | None = None,
) -> BatchLoss:
    """One optimizer step on a batch; returns the batch loss before the step."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ContractError("empty batch")
    if optimizer is None:
        optimizer = Adam(model.params, config)
    masks = None
    if config.dropout > 0:
        masks = _dropout_masks(model, X.shape[0], config.dropout, rng or np.random.default_rng(0))
    # non-finite values are reported below, not as numpy warnings
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grads = model.loss_and_grads(X, y, m, masks)
    if not math.isfinite(loss.total):
        raise TrainingError(f"non-finite loss (bce={loss.bce}, mse={loss.mse})")
    optimizer.step(model.params, grads)
    for k, v in model.params.items():
        if not np.all(np.isfinite(v)):
            raise TrainingError(f"parameter {k} became non-finite after step {optimizer.t}")
    return loss


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train(
    model: MtlModel,
    X,
    y,
    m,
    config: TrainConfig,
    validation: tuple | None = None,
) -> TrainHistory:
    """Mini-batch training. Deterministic given ``config.seed`` and the data order.

    With ``config.patience > 0`` training stops once the monitored loss (on
    ``validation`` if given, else the epoch training loss) has not improved for
    that many epochs, and the best parameters are restored.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ContractError("cannot train on zero rows")
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config)
    history = TrainHistory()
    best = math.inf
    best_params = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss = backward_and_step(model, X[idx], y[idx], m[idx], config, opt, rng)
            total += loss.total * len(idx)
        history.epoch_loss.append(total / n)
        if config.patience > 0:
            if validation is not None:
                monitored = model.losses(*validation).total
                history.val_loss.append(monitored)
            else:
                monitored = history.epoch_loss[-1]
            if monitored < best:
                best, stale, history.best_epoch = monitored, 0, epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best_params is not None:
        model.params = best_params
    else:
        history.best_epoch = len(history.epoch_loss) - 1
    return history


# -- gradient verification ----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    h: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def to_text(self) -> str:
        lines = [f"{'parameter':<14} max_rel_error"]
        for k, v in self.max_rel_error.items():
            lines.append(f"{k:<14} {v:.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"worst {self.worst:.3e} (tolerance {self.tolerance:g}, h={self.h:g}): {verdict}")
        return "\n".join(lines) + "\n"


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """``|a - n| / max(|a|, |n|)``; 0 when both magnitudes are below ``floor``."""
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return 0.0
    return abs(analytic - numeric) / scale


def gradient_check(
    model: MtlModel,
    X,
    y,
    m,
    tolerance: float = 1e-5,
    h: float = 1e-5,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences, entry by entry.

    ``analytic`` overrides the model's own gradients (used for negative controls).
    """
    if analytic is None:
        _, analytic = model.loss_and_grads(X, y, m)
    report: dict[str, float] = {}
    for name, param in model.params.items():
        worst = 0.0
        flat = param.reshape(-1)
        grad = np.asarray(analytic[name]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = model.row_losses(X, y, m)
            flat[j] = orig - h
            down = model.row_losses(X, y, m)
            flat[j] = orig
            # differencing row by row before summing limits cancellation error
            numeric = math.fsum(up - down) / (2.0 * h)
            worst = max(worst, relative_error(float(grad[j]), numeric))
        report[name] = worst
    return GradCheckReport(report, tolerance, h)


def random_gradcheck_problem(seed: int, mode: Mode | str, n_features: int = 6, rows: int = 32,
                             hidden: Sequence[int] = (8, 6)):
    """Random model and batch used by the gradient-check command and tests."""
    rng = np.random.default_rng(seed)
    model = MtlModel(n_features, hidden, mode, "tanh", seed)
    X = rng.normal(size=(rows, n_features))
    y = (rng.random(rows) < 0.5).astype(np.float64)
    m = np.where(y == 1, rng.gamma(2.0, 0.5, size=rows), 0.0)
    return model, X, y, m


# -- persistence ----------------------------------------------------------------


@dataclass
class ModelBundle:
    model: MtlModel
    encoder: object | None = None  # EncoderSpec
    train_config: TrainConfig | None = None
    max_prefix_len: int | None = None


def model_to_dict(bundle: ModelBundle) -> dict:
    model = bundle.model
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "mode": model.mode.value,
        "n_features": model.n_features,
        "hidden": list(model.hidden),
        "activation": model.activation,
        "seed": model.seed,
        "params": {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.reshape(-1)]}
            for k, v in model.params.items()
        },
        "max_prefix_len": bundle.max_prefix_len,
        "train_config": bundle.train_config.to_dict() if bundle.train_config else None,
        "train_config_digest": bundle.train_config.digest() if bundle.train_config else None,
        "encoder": bundle.encoder.to_dict() if bundle.encoder is not None else None,
    }
    return doc


def model_from_dict(doc: dict) -> ModelBundle:
    from pcm.encoding import EncoderSpec

    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ParseError("not a model document")
    if doc.get("version") != MODEL_VERSION:
        raise VersionError(
            f"model format version {doc.get('version')!r} unsupported (expected {MODEL_VERSION})"
        )
    try:
        model = MtlModel(
            doc["n_features"], doc["hidden"], doc["mode"], doc["activation"], doc["seed"]
        )
        loaded = {}
        for k, entry in doc["params"].items():
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            loaded[k] = arr
        if set(loaded) != set(model.params) or any(
            loaded[k].shape != model.params[k].shape for k in loaded
        ):
            raise ParseError("model parameters do not match the declared architecture")
        model.params = {k: loaded[k] for k in model.params}
        encoder = EncoderSpec.from_dict(doc["encoder"]) if doc.get("encoder") else None
        config = TrainConfig.from_dict(doc["train_config"]) if doc.get("train_config") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from None
    return ModelBundle(model, encoder, config, doc.get("max_prefix_len"))


def save_model(path: str | Path, bundle: ModelBundle | MtlModel) -> None:
    if isinstance(bundle, MtlModel):
        bundle = ModelBundle(bundle)
    Path(path).write_text(json.dumps(model_to_dict(bundle), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> ModelBundle:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file {path} is not valid JSON: {exc}") from None
    return model_from_dict(doc)
