"""Greedy layer-wise DBN pretraining, supervised head, and baselines.

Pretraining swaps the model-expectation estimator via a sampler spec:
CD-k Gibbs chains, exact enumeration (tiny nets), or the QUBO route
(energy -> QUBO -> weighted MAX-SAT -> stochastic solve -> best assignment
or trace time-average).  The supervised phase is plain back-propagation
with momentum over a softmax head, with optional batch normalization and
ReLU for the no-pretraining baseline.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from dbnsat import rbm as _rbm
from dbnsat.rbm import (
    RbmParams,
    MomentumState,
    ShapeError,
    data_expectation,
    cd_estimate,
    exact_model_expectation,
    hidden_conditional,
    visible_conditional,
    apply_update,
)
from dbnsat.qubo import rbm_to_qubo
from dbnsat.maxsat import (
    ConfigurationError,
    SolverConfig,
    qubo_to_wcnf,
    solve_sls,
    solve_exact_bipartite,
    model_stats_from_solve,
)

SAMPLER_KINDS = ("cd", "qubo_best", "qubo_time_average", "exact_enumeration")

# alpha = 0.1 through iteration 5, then 0.5; None bounds mean "all later ones"
DEFAULT_MOMENTUM_SCHEDULE = ((5, 0.1), (None, 0.5))


def momentum_at(schedule, iteration: int) -> float:
    """Momentum coefficient for a 1-based iteration number."""
    for through, alpha in schedule:
        if through is None or iteration <= through:
            return alpha
    return schedule[-1][1]


@dataclass
class SamplerSpec:
    kind: str = "cd"
    cd_k: int = 1
    backend: str = "sls"  # "sls" or "exact" for the qubo kinds
    solver: SolverConfig | None = None

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigurationError(f"unknown sampler kind {self.kind!r}")
        if self.backend not in ("sls", "exact"):
            raise ConfigurationError(f"unknown solver backend {self.backend!r}")


@dataclass
class PretrainConfig:
    iterations: int = 10
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    learning_rate: float = 0.1
    momentum_schedule: tuple = DEFAULT_MOMENTUM_SCHEDULE
    mini_batch: int | None = None  # None = full batch

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class DbnModel:
    layers: list  # RbmParams, chained dimensions
    output_weights: np.ndarray  # (num_classes, top hidden size)
    output_bias: np.ndarray

    def __post_init__(self):
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.num_visible != lower.num_hidden:
                raise ShapeError("adjacent RBM layers do not chain")
        self.output_weights = np.asarray(self.output_weights, dtype=np.float64)
        self.output_bias = np.asarray(self.output_bias, dtype=np.float64)
        if self.output_weights.shape != (
            len(self.output_bias),
            self.layers[-1].num_hidden,
        ):
            raise ShapeError("output layer does not match top hidden size")

    @property
    def num_classes(self) -> int:
        return len(self.output_bias)

    @classmethod
    def initialize(cls, layer_sizes, rng, num_classes=10, weight_scale=0.01):
        """layer_sizes like (32, 32, 32): visible size then hidden sizes."""
        layers = [
            RbmParams.initialize(m, n, rng, weight_scale)
            for m, n in zip(layer_sizes, layer_sizes[1:])
        ]
        wout = rng.normal(0.0, weight_scale, size=(num_classes, layer_sizes[-1]))
        return cls(layers, wout, np.zeros(num_classes))


def _model_expectation(params, batch, sampler: SamplerSpec, rng):
    """Model-side statistics via the configured sampler; also returns a
    diagnostic solve weight for the qubo kinds (None otherwise)."""
    if sampler.kind == "cd":
        _, model = cd_estimate(params, batch, sampler.cd_k, rng)
        return model, None
    if sampler.kind == "exact_enumeration":
        if params.num_visible + params.num_hidden > _rbm.MAX_EXACT_UNITS:
            raise ConfigurationError(
                "exact_enumeration sampler needs m+n <= " f"{_rbm.MAX_EXACT_UNITS}"
            )
        return exact_model_expectation(params).stats, None

    mode = "best" if sampler.kind == "qubo_best" else "time_average"
    q = rbm_to_qubo(params)
    if sampler.backend == "exact":
        if mode == "time_average":
            raise ConfigurationError("time_average requires the sls backend")
        result = solve_exact_bipartite(q)
    else:
        base = sampler.solver or SolverConfig()
        cfg = replace(
            base,
            seed=int(rng.integers(2**63)),
            record_assignments=(mode == "time_average"),
        )
        result = solve_sls(qubo_to_wcnf(q), cfg)
    return model_stats_from_solve(q, result, mode), float(result.best_weight)


def reconstruction_error(params: RbmParams, batch) -> float:
    """Mean squared error of the deterministic one-step reconstruction."""
    hp = hidden_conditional(params, batch)
    recon = visible_conditional(params, hp)
    return float(np.mean((np.asarray(batch, dtype=np.float64) - recon) ** 2))


def pretrain_rbm(params: RbmParams, data, cfg: PretrainConfig, rng):
    """Momentum gradient-ascent pretraining of one RBM layer.

    Returns (trained params, per-iteration log).  One iteration is a full
    pass over the data: a single update when mini_batch is None, otherwise
    one update per mini-batch of a seeded shuffle.
    """
    data = np.asarray(data, dtype=np.float64)
    mom = MomentumState.zeros(params)
    log = []
    for it in range(1, cfg.iterations + 1):
        alpha = momentum_at(cfg.momentum_schedule, it)
        if cfg.mini_batch is None:
            batches = [data]
        else:
            order = rng.permutation(len(data))
            batches = [
                data[order[s : s + cfg.mini_batch]]
                for s in range(0, len(data), cfg.mini_batch)
            ]
        weights = []
        for batch in batches:
            stats = data_expectation(params, batch)
            model, w = _model_expectation(params, batch, cfg.sampler, rng)
            params, mom = apply_update(params, mom, stats, model, cfg.learning_rate, alpha)
            if w is not None:
                weights.append(w)
        log.append(
            {
                "iteration": it,
                "recon_error": reconstruction_error(params, data),
                "solve_weight": float(np.mean(weights)) if weights else None,
            }
        )
    return params, log


def pretrain_dbn(model: DbnModel, data, cfg: PretrainConfig, rng):
    """Greedy layer-wise pretraining; the output layer is left untouched.

    Each trained layer's hidden conditional probabilities become the next
    layer's training data.
    """
    data = np.asarray(data, dtype=np.float64)
    layers = []
    logs = []
    x = data
    for layer in model.layers:
        trained, log = pretrain_rbm(layer, x, cfg, rng)
        layers.append(trained)
        logs.append(log)
        x = hidden_conditional(trained, x)
    return DbnModel(layers, model.output_weights.copy(), model.output_bias.copy()), logs


# ---------------------------------------------------------------------------
# Supervised phase
# ---------------------------------------------------------------------------


@dataclass
class SupervisedConfig:
    iterations: int = 100
    mini_batch: int = 100
    activation: str = "sigmoid"  # "sigmoid" or "relu"
    batch_norm: bool = False
    learning_rate: float = 0.1
    momentum_schedule: tuple = DEFAULT_MOMENTUM_SCHEDULE

    def __post_init__(self):
        if self.mini_batch < 1:
            raise ValueError("mini_batch must be >= 1")
        if self.activation not in ("sigmoid", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class BatchNormState:
    gamma: list
    beta: list
    running_mean: list
    running_var: list
    eps: float = 1e-5
    momentum: float = 0.9

    @classmethod
    def for_model(cls, model: DbnModel) -> "BatchNormState":
        sizes = [layer.num_hidden for layer in model.layers]
        return cls(
            gamma=[np.ones(s) for s in sizes],
            beta=[np.zeros(s) for s in sizes],
            running_mean=[np.zeros(s) for s in sizes],
            running_var=[np.ones(s) for s in sizes],
        )


def _activate(z, activation):
    if activation == "sigmoid":
        return _rbm.sigmoid(z)
    return np.maximum(z, 0.0)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model, batch, cfg, bn=None, mode="train"):
    """Feed-forward pass; returns (class probabilities, caches for backward)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.layers[0].num_visible:
        raise ShapeError("input width does not match the first layer")
    if cfg.batch_norm and mode == "train" and x.shape[0] < 2:
        raise ConfigurationError("batch norm in train mode needs batch size >= 2")

    caches = []
    for li, layer in enumerate(model.layers):
        z = x @ layer.weights.T + layer.hidden_bias
        cache = {"x": x, "z": z}
        if cfg.batch_norm:
            if bn is None:
                raise ConfigurationError("batch_norm enabled but no BatchNormState given")
            if mode == "train":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
            else:
                mu = bn.running_mean[li]
                var = bn.running_var[li]
            zhat = (z - mu) / np.sqrt(var + bn.eps)
            z = bn.gamma[li] * zhat + bn.beta[li]
            cache.update(mu=mu, var=var, zhat=zhat)
        a = _activate(z, cfg.activation)
        cache["z_post"] = z
        cache["a"] = a
        caches.append(cache)
        x = a

    logits = x @ model.output_weights.T + model.output_bias
    probs = _softmax(logits)
    return probs, {"layers": caches, "top": x, "probs": probs}


def cross_entropy_loss(probs, labels) -> float:
    labels = np.asarray(labels)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


@dataclass
class NetMomentum:
    """Previous update for every supervised parameter, keyed by name."""

    deltas: dict = field(default_factory=dict)

    def step(self, name, param, grad, lr, alpha):
        prev = self.deltas.get(name)
        if prev is None:
            prev = np.zeros_like(param)
        delta = alpha * prev - lr * grad
        self.deltas[name] = delta
        return param + delta


def supervised_gradients(model, batch, labels, cfg, bn=None):
    """Analytic gradients of the mean cross-entropy; returns (grads, loss).

    Grad keys: out_w, out_b, and per layer w{i}, c{i} (+ gamma{i}, beta{i}
    when batch norm is on).
    """
    labels = np.asarray(labels)
    probs, caches = forward(model, batch, cfg, bn, mode="train")
    loss = cross_entropy_loss(probs, labels)
    b = probs.shape[0]

    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b

    grads = {
        "out_w": dlogits.T @ caches["top"],
        "out_b": dlogits.sum(axis=0),
    }
    da = dlogits @ model.output_weights

    for li in reversed(range(len(model.layers))):
        cache = caches["layers"][li]
        if cfg.activation == "sigmoid":
            dz = da * cache["a"] * (1.0 - cache["a"])
        else:
            dz = da * (cache["z_post"] > 0)
        if cfg.batch_norm:
            zhat = cache["zhat"]
            grads[f"gamma{li}"] = (dz * zhat).sum(axis=0)
            grads[f"beta{li}"] = dz.sum(axis=0)
            dzhat = dz * bn.gamma[li]
            inv_std = 1.0 / np.sqrt(cache["var"] + bn.eps)
            dz = (
                inv_std
                / b
                * (
                    b * dzhat
                    - dzhat.sum(axis=0)
                    - zhat * (dzhat * zhat).sum(axis=0)
                )
            )
        grads[f"w{li}"] = dz.T @ cache["x"]
        grads[f"c{li}"] = dz.sum(axis=0)
        da = dz @ model.layers[li].weights
    return grads, loss, caches


def backprop_step(model, batch, labels, cfg, bn=None, momentum_state=None, iteration=1):
    """One momentum gradient-descent step; returns (model, bn, momentum, loss).

    Inputs are not mutated; batch-norm running statistics are refreshed from
    the batch statistics of this step.
    """
    if momentum_state is None:
        momentum_state = NetMomentum()
    grads, loss, caches = supervised_gradients(model, batch, labels, cfg, bn)
    lr = cfg.learning_rate
    alpha = momentum_at(cfg.momentum_schedule, iteration)

    new_layers = []
    new_bn = None
    if cfg.batch_norm:
        new_bn = BatchNormState(
            gamma=list(bn.gamma),
            beta=list(bn.beta),
            running_mean=list(bn.running_mean),
            running_var=list(bn.running_var),
            eps=bn.eps,
            momentum=bn.momentum,
        )
    for li, layer in enumerate(model.layers):
        w = momentum_state.step(f"w{li}", layer.weights, grads[f"w{li}"], lr, alpha)
        c = momentum_state.step(f"c{li}", layer.hidden_bias, grads[f"c{li}"], lr, alpha)
        new_layers.append(RbmParams(w, layer.visible_bias.copy(), c))
        if cfg.batch_norm:
            cache = caches["layers"][li]
            new_bn.gamma[li] = momentum_state.step(
                f"gamma{li}", bn.gamma[li], grads[f"gamma{li}"], lr, alpha
            )
            new_bn.beta[li] = momentum_state.step(
                f"beta{li}", bn.beta[li], grads[f"beta{li}"], lr, alpha
            )
            new_bn.running_mean[li] = (
                bn.momentum * bn.running_mean[li] + (1 - bn.momentum) * cache["mu"]
            )
            new_bn.running_var[li] = (
                bn.momentum * bn.running_var[li] + (1 - bn.momentum) * cache["var"]
            )

    out_w = momentum_state.step("out_w", model.output_weights, grads["out_w"], lr, alpha)
    out_b = momentum_state.step("out_b", model.output_bias, grads["out_b"], lr, alpha)
    new_model = DbnModel(new_layers, out_w, out_b)
    return new_model, new_bn if cfg.batch_norm else bn, momentum_state, loss


def train_supervised(model, images, labels, cfg, rng, bn=None):
    """cfg.iterations epochs of mini-batch momentum SGD.

    One iteration is a full pass over a fresh seeded shuffle in mini_batch
    chunks; mini_batch >= dataset size degenerates to one full-batch step
    per iteration.  Returns per-epoch mean losses.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if cfg.batch_norm and bn is None:
        bn = BatchNormState.for_model(model)
    momentum_state = NetMomentum()
    losses = []
    for it in range(1, cfg.iterations + 1):
        order = rng.permutation(len(images))
        epoch_losses = []
        for start in range(0, len(images), cfg.mini_batch):
            idx = order[start : start + cfg.mini_batch]
            model, bn, momentum_state, loss = backprop_step(
                model, images[idx], labels[idx], cfg, bn, momentum_state, iteration=it
            )
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    return model, bn, losses


def evaluate(model, images, labels, cfg, bn=None) -> float:
    """Classification accuracy with inference-mode batch norm."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("test set must be non-empty")
    probs, _ = forward(model, images, cfg, bn, mode="inference")
    return float(np.mean(probs.argmax(axis=1) == labels))


# ---------------------------------------------------------------------------
# Checkpoints: versioned binary container
# ---------------------------------------------------------------------------

_CHECKPOINT_MAGIC = b"DBNC"
_CHECKPOINT_VERSION = 1


def save_model(model: DbnModel, path, config: dict | None = None):
    """Magic, version, JSON header with dims/config, then little-endian
    float64 parameter blocks in a fixed order."""
    header = {
        "layer_sizes": [model.layers[0].num_visible]
        + [layer.num_hidden for layer in model.layers],
        "num_classes": model.num_classes,
        "config": config or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blocks = []
    for layer in model.layers:
        blocks += [layer.weights, layer.visible_bias, layer.hidden_bias]
    blocks += [model.output_weights, model.output_bias]
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_model(path):
    """Inverse of save_model; returns (DbnModel, stored config dict)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())

        def read_block(shape):
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
            if data.size != count:
                raise ValueError("truncated checkpoint")
            return data.reshape(shape)

        sizes = header["layer_sizes"]
        layers = []
        for m, n in zip(sizes, sizes[1:]):
            w = read_block((n, m))
            b = read_block((m,))
            c = read_block((n,))
            layers.append(RbmParams(w, b, c))
        k = header["num_classes"]
        out_w = read_block((k, sizes[-1]))
        out_b = read_block((k,))
    return DbnModel(layers, out_w, out_b), header.get("config", {})
