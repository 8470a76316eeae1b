"""Model definition: MLP backbone, linear classifier head, and the scalar
uncertainty branch.

The uncertainty branch maps a feature vector s to a positive variance

    v = softplus(exp(BN(w · s + b)))

where BN is a scalar batch-normalization over the batch and the BN output
is clamped to [-clamp_limit, +clamp_limit] before exponentiation.  The
composition forces v > ln 2 for every input, and the clamp keeps the
double exponential finite for arbitrary parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateBatchError, ShapeError
from .jsonio import dump, load
from .rng import STREAM_INIT, derive_rng

VARIANCE_FLOOR = math.log(2.0)

CHECKPOINT_FORMAT = "dise-ckpt/1"


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    hidden_dims are the backbone layer widths; the backbone ends with a
    linear (non-rectified) projection to feature_dim.  clamp_limit bounds
    the BN output before it is exponentiated.
    """

    input_dim: int = 16
    hidden_dims: list[int] = field(default_factory=lambda: [32, 32])
    feature_dim: int = 8
    num_classes: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    clamp_limit: float = 20.0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        for width in self.hidden_dims:
            if width < 1:
                raise ConfigError(f"hidden layer widths must be >= 1, got {width}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.num_classes != 2:
            raise ConfigError(
                f"num_classes must be 2 (genuine vs spoof), got {self.num_classes}"
            )
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigError(f"bn_momentum must be in (0, 1), got {self.bn_momentum}")
        if self.bn_eps <= 0.0:
            raise ConfigError(f"bn_eps must be > 0, got {self.bn_eps}")
        if self.clamp_limit <= 0.0:
            raise ConfigError(f"clamp_limit must be > 0, got {self.clamp_limit}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for each backbone layer, last one the feature map."""
        widths = [self.input_dim, *self.hidden_dims, self.feature_dim]
        return list(zip(widths[:-1], widths[1:]))


@dataclass
class BatchNormState:
    """Scalar batch-norm state for the uncertainty branch.

    gamma/beta are learnable; running statistics are updated by
    exponential moving average in train mode and are the sole source of
    normalization in eval mode.
    """

    gamma: float = 1.0
    beta: float = 0.0
    running_mean: float = 0.0
    running_var: float = 1.0
    momentum: float = 0.1
    eps: float = 1e-5

    def validate(self) -> None:
        if self.running_var < 0.0:
            raise ConfigError(f"running_var must be >= 0, got {self.running_var}")
        if self.eps <= 0.0:
            raise ConfigError(f"bn eps must be > 0, got {self.eps}")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"bn momentum must be in (0, 1), got {self.momentum}")


@dataclass
class DistributionalOutput:
    """Per-sample model output: feature mean, class logits, and variance.

    The variance doubles as the softmax temperature; the branch
    construction guarantees variance > ln 2.
    """

    mean: np.ndarray
    logits: np.ndarray
    variance: float

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.variance = float(self.variance)
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.logits))):
            raise ShapeError("distributional output contains non-finite entries")
        if not self.variance > VARIANCE_FLOOR:
            raise ShapeError(
                f"variance {self.variance} violates the softplus(exp(.)) floor ln 2"
            )


@dataclass
class ModelParams:
    """All learnable state plus the config that fixes its shapes.

    Weight matrices are stored (fan_in, fan_out) so a forward step is
    `h @ W + b`.  The uncertainty head is a single linear unit
    (weight vector + scalar bias) followed by the BN state.
    """

    config: ModelConfig
    backbone_weights: list[np.ndarray]
    backbone_biases: list[np.ndarray]
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray
    uncertainty_weight: np.ndarray
    uncertainty_bias: float
    bn_state: BatchNormState

    def param_names(self) -> list[str]:
        """Names of every learnable array, in a fixed order."""
        names = []
        for i in range(len(self.backbone_weights)):
            names.append(f"backbone.{i}.weight")
            names.append(f"backbone.{i}.bias")
        names += [
            "classifier.weight",
            "classifier.bias",
            "uncertainty.weight",
            "uncertainty.bias",
            "bn.gamma",
            "bn.beta",
        ]
        return names

    def get_param(self, name: str) -> np.ndarray:
        """The named parameter as an ndarray (0-d for scalars)."""
        if name.startswith("backbone."):
            _, idx, kind = name.split(".")
            arrays = self.backbone_weights if kind == "weight" else self.backbone_biases
            return arrays[int(idx)]
        if name == "classifier.weight":
            return self.classifier_weight
        if name == "classifier.bias":
            return self.classifier_bias
        if name == "uncertainty.weight":
            return self.uncertainty_weight
        if name == "uncertainty.bias":
            return np.float64(self.uncertainty_bias)
        if name == "bn.gamma":
            return np.float64(self.bn_state.gamma)
        if name == "bn.beta":
            return np.float64(self.bn_state.beta)
        raise KeyError(name)

    def set_param(self, name: str, value: np.ndarray) -> None:
        if name.startswith("backbone."):
            _, idx, kind = name.split(".")
            arrays = self.backbone_weights if kind == "weight" else self.backbone_biases
            arrays[int(idx)] = np.asarray(value, dtype=np.float64)
        elif name == "classifier.weight":
            self.classifier_weight = np.asarray(value, dtype=np.float64)
        elif name == "classifier.bias":
            self.classifier_bias = np.asarray(value, dtype=np.float64)
        elif name == "uncertainty.weight":
            self.uncertainty_weight = np.asarray(value, dtype=np.float64)
        elif name == "uncertainty.bias":
            self.uncertainty_bias = float(value)
        elif name == "bn.gamma":
            self.bn_state.gamma = float(value)
        elif name == "bn.beta":
            self.bn_state.beta = float(value)
        else:
            raise KeyError(name)

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            backbone_weights=[w.copy() for w in self.backbone_weights],
            backbone_biases=[b.copy() for b in self.backbone_biases],
            classifier_weight=self.classifier_weight.copy(),
            classifier_bias=self.classifier_bias.copy(),
            uncertainty_weight=self.uncertainty_weight.copy(),
            uncertainty_bias=self.uncertainty_bias,
            bn_state=replace(self.bn_state),
        )


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Initialize parameters from a seed, bitwise deterministically.

    Weights are drawn uniform on [-sqrt(3/fan_in), +sqrt(3/fan_in)]
    (zero mean, variance 1/fan_in, magnitude bounded by sqrt(3/fan_in));
    biases start at zero and BN starts as the identity.
    """
    config.validate()
    rng = derive_rng(seed, STREAM_INIT)

    def draw(fan_in: int, fan_out: int) -> np.ndarray:
        bound = math.sqrt(3.0 / fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    weights, biases = [], []
    for fan_in, fan_out in config.layer_dims():
        weights.append(draw(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    classifier_weight = draw(config.feature_dim, config.num_classes)
    uncertainty_weight = draw(config.feature_dim, 1)[:, 0]
    return ModelParams(
        config=config,
        backbone_weights=weights,
        backbone_biases=biases,
        classifier_weight=classifier_weight,
        classifier_bias=np.zeros(config.num_classes),
        uncertainty_weight=uncertainty_weight,
        uncertainty_bias=0.0,
        bn_state=BatchNormState(momentum=config.bn_momentum, eps=config.bn_eps),
    )


def stable_softplus(t: np.ndarray) -> np.ndarray:
    """softplus(t) = max(t, 0) + log(1 + exp(-|t|)), safe for large t."""
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have length {dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"{what} contains non-finite entries")
    return x, single


def backbone_forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Feature embedding s for one input vector (or a batch of rows)."""
    h, single = _as_batch(x, params.config.input_dim, "input")
    last = len(params.backbone_weights) - 1
    for i, (w, b) in enumerate(zip(params.backbone_weights, params.backbone_biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def classifier_forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class logits z for one feature vector (or a batch of rows)."""
    s, single = _as_batch(features, params.config.feature_dim, "feature")
    z = s @ params.classifier_weight + params.classifier_bias
    return z[0] if single else z


@dataclass
class BranchInternals:
    """Intermediates of the uncertainty branch, cached for the backward pass."""

    pre_activation: np.ndarray  # a = s @ w + b
    batch_mean: float
    batch_var: float  # biased (population) variance
    inv_std: float
    normalized: np.ndarray  # (a - mean) / sqrt(var + eps)
    bn_output: np.ndarray  # gamma * normalized + beta, before the clamp
    clamp_mask: np.ndarray  # 1 where the clamp passed the value through
    exp_value: np.ndarray  # t = exp(clamped bn output)
    variance: np.ndarray  # v = softplus(t)


def _branch_forward(
    params: ModelParams, features: np.ndarray, mode: str
) -> tuple[BranchInternals, BatchNormState]:
    state = params.bn_state
    a = features @ params.uncertainty_weight + params.uncertainty_bias
    if mode == "train":
        if a.shape[0] < 2:
            raise DegenerateBatchError(
                f"train-mode batch statistics need >= 2 samples, got {a.shape[0]}"
            )
        mean = float(np.mean(a))
        var = float(np.mean((a - mean) ** 2))
        m = state.momentum
        new_state = replace(
            state,
            running_mean=(1.0 - m) * state.running_mean + m * mean,
            running_var=(1.0 - m) * state.running_var + m * var,
        )
    else:
        mean = state.running_mean
        var = state.running_var
        new_state = state
    inv_std = 1.0 / math.sqrt(var + state.eps)
    normalized = (a - mean) * inv_std
    u = state.gamma * normalized + state.beta
    limit = params.config.clamp_limit
    clamp_mask = (np.abs(u) <= limit).astype(np.float64)
    t = np.exp(np.clip(u, -limit, limit))
    internals = BranchInternals(
        pre_activation=a,
        batch_mean=mean,
        batch_var=var,
        inv_std=inv_std,
        normalized=normalized,
        bn_output=u,
        clamp_mask=clamp_mask,
        exp_value=t,
        variance=stable_softplus(t),
    )
    return internals, new_state


def uncertainty_forward(
    params: ModelParams, features: np.ndarray, mode: str = "eval"
) -> tuple[np.ndarray, BatchNormState]:
    """Per-sample variances for a batch of feature vectors.

    Train mode normalizes with the batch's own statistics and returns a
    BatchNormState with EMA-updated running statistics; eval mode uses the
    running statistics and returns the state unchanged.
    """
    _check_mode(mode)
    s, _ = _as_batch(features, params.config.feature_dim, "feature")
    internals, new_state = _branch_forward(params, s, mode)
    return internals.variance, new_state


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one batch forward."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]  # per backbone layer, before ReLU
    features: np.ndarray  # s, (n, feature_dim)
    logits: np.ndarray  # z, (n, num_classes)
    branch: BranchInternals | None  # None when the branch is bypassed
    variance: np.ndarray  # v, (n,); all ones when the branch is bypassed
    new_bn_state: BatchNormState


def forward_pass(
    params: ModelParams,
    inputs: np.ndarray,
    mode: str = "eval",
    with_uncertainty: bool = True,
) -> ForwardCache:
    """Instrumented batch forward over raw input rows.

    with_uncertainty=False bypasses the branch (variance fixed at 1, BN
    state untouched), realizing the baseline system without the
    distributional head.
    """
    _check_mode(mode)
    x, _ = _as_batch(inputs, params.config.input_dim, "input")
    pre_activations = []
    h = x
    last = len(params.backbone_weights) - 1
    for i, (w, b) in enumerate(zip(params.backbone_weights, params.backbone_biases)):
        pre = h @ w + b
        pre_activations.append(pre)
        h = np.maximum(pre, 0.0) if i < last else pre
    features = h
    logits = features @ params.classifier_weight + params.classifier_bias
    if with_uncertainty:
        branch, new_state = _branch_forward(params, features, mode)
        variance = branch.variance
    else:
        branch, new_state = None, params.bn_state
        variance = np.ones(x.shape[0])
    return ForwardCache(
        inputs=x,
        pre_activations=pre_activations,
        features=features,
        logits=logits,
        branch=branch,
        variance=variance,
        new_bn_state=new_state,
    )


def model_forward(
    params: ModelParams, batch, mode: str = "eval"
) -> tuple[list[DistributionalOutput], BatchNormState]:
    """Distributional outputs for a batch of Samples, in input order."""
    if len(batch) == 0:
        raise ShapeError("model_forward needs a nonempty batch")
    x = np.stack([np.asarray(sample.features, dtype=np.float64) for sample in batch])
    cache = forward_pass(params, x, mode=mode)
    outputs = [
        DistributionalOutput(
            mean=cache.features[i].copy(),
            logits=cache.logits[i].copy(),
            variance=float(cache.variance[i]),
        )
        for i in range(x.shape[0])
    ]
    return outputs, cache.new_bn_state


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "input_dim": config.input_dim,
        "hidden_dims": list(config.hidden_dims),
        "feature_dim": config.feature_dim,
        "num_classes": config.num_classes,
        "bn_momentum": config.bn_momentum,
        "bn_eps": config.bn_eps,
        "clamp_limit": config.clamp_limit,
    }


def _config_from_dict(doc: dict) -> ModelConfig:
    config = ModelConfig(
        input_dim=int(doc["input_dim"]),
        hidden_dims=[int(w) for w in doc["hidden_dims"]],
        feature_dim=int(doc["feature_dim"]),
        num_classes=int(doc["num_classes"]),
        bn_momentum=float(doc["bn_momentum"]),
        bn_eps=float(doc["bn_eps"]),
        clamp_limit=float(doc["clamp_limit"]),
    )
    config.validate()
    return config


def save_checkpoint(params: ModelParams, path: str, use_dise: bool = True) -> None:
    """Write a dise-ckpt/1 JSON checkpoint.

    use_dise records whether the model was trained with the distributional
    head, so evaluation can score baseline checkpoints at v = 1.
    """
    bn = params.bn_state
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": _config_to_dict(params.config),
        "use_dise": bool(use_dise),
        "backbone": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.backbone_weights, params.backbone_biases)
        ],
        "classifier": {
            "weight": params.classifier_weight.tolist(),
            "bias": params.classifier_bias.tolist(),
        },
        "uncertainty": {
            "weight": params.uncertainty_weight.tolist(),
            "bias": params.uncertainty_bias,
        },
        "bn": {
            "gamma": bn.gamma,
            "beta": bn.beta,
            "running_mean": bn.running_mean,
            "running_var": bn.running_var,
            "momentum": bn.momentum,
            "eps": bn.eps,
        },
    }
    dump(doc, path)


def load_checkpoint(path: str) -> tuple[ModelParams, bool]:
    """Read a dise-ckpt/1 checkpoint; returns (params, use_dise)."""
    doc = load(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(
            f"unsupported checkpoint format {doc.get('format')!r}, "
            f"expected {CHECKPOINT_FORMAT!r}"
        )
    config = _config_from_dict(doc["config"])
    bn_doc = doc["bn"]
    bn = BatchNormState(
        gamma=float(bn_doc["gamma"]),
        beta=float(bn_doc["beta"]),
        running_mean=float(bn_doc["running_mean"]),
        running_var=float(bn_doc["running_var"]),
        momentum=float(bn_doc["momentum"]),
        eps=float(bn_doc["eps"]),
    )
    bn.validate()
    params = ModelParams(
        config=config,
        backbone_weights=[np.asarray(l["weight"], dtype=np.float64) for l in doc["backbone"]],
        backbone_biases=[np.asarray(l["bias"], dtype=np.float64) for l in doc["backbone"]],
        classifier_weight=np.asarray(doc["classifier"]["weight"], dtype=np.float64),
        classifier_bias=np.asarray(doc["classifier"]["bias"], dtype=np.float64),
        uncertainty_weight=np.asarray(doc["uncertainty"]["weight"], dtype=np.float64),
        uncertainty_bias=float(doc["uncertainty"]["bias"]),
        bn_state=bn,
    )
    expected = config.layer_dims()
    got = [w.shape for w in params.backbone_weights]
    if got != [tuple(d) for d in expected]:
        raise ConfigError(f"backbone shapes {got} do not match config {expected}")
    return params, bool(doc["use_dise"])
