"""Restricted Boltzmann machine core: energy, conditionals, sampling, updates.

Conventions: weights have shape (n_hidden, n_visible), visible bias length
n_visible, hidden bias length n_hidden.  Visible data may be real-valued in
[0, 1] (grayscale pixels are used as-is); hidden units are binary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Enumeration guard for exact partition-function computations.
MAX_EXACT_UNITS = 24


class ShapeError(ValueError):
    """Dimension mismatch between parameters and states."""


class CapacityError(ValueError):
    """Exact enumeration requested on a model too large to enumerate."""


@dataclass
class RbmParams:
    """One RBM layer: weights w[i, j], visible bias b[j], hidden bias c[i]."""

    weights: np.ndarray
    visible_bias: np.ndarray
    hidden_bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.visible_bias = np.asarray(self.visible_bias, dtype=np.float64)
        self.hidden_bias = np.asarray(self.hidden_bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError("weights must be a 2-D matrix")
        n, m = self.weights.shape
        if self.visible_bias.shape != (m,) or self.hidden_bias.shape != (n,):
            raise ShapeError(
                f"bias shapes {self.visible_bias.shape}/{self.hidden_bias.shape} "
                f"do not match weights {self.weights.shape}"
            )
        if not (
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.visible_bias))
            and np.all(np.isfinite(self.hidden_bias))
        ):
            raise ValueError("RBM parameters must be finite")

    @property
    def num_visible(self) -> int:
        return self.weights.shape[1]

    @property
    def num_hidden(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def initialize(cls, num_visible, num_hidden, rng, weight_scale=0.01):
        """Gaussian weights (sd 0.01 by default), zero biases."""
        w = rng.normal(0.0, weight_scale, size=(num_hidden, num_visible))
        return cls(w, np.zeros(num_visible), np.zeros(num_hidden))


@dataclass
class ExpectationStats:
    """First and second moments entering the gradient: <v h>, <v>, <h>."""

    vh: np.ndarray  # shape (n_hidden, n_visible), matches weights
    v: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.vh = np.asarray(self.vh, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.h = np.asarray(self.h, dtype=np.float64)


@dataclass
class ExactModelStats:
    partition_function: float
    log_partition_function: float
    stats: ExpectationStats


@dataclass
class MomentumState:
    prev_dw: np.ndarray
    prev_db: np.ndarray
    prev_dc: np.ndarray

    @classmethod
    def zeros(cls, params: RbmParams) -> "MomentumState":
        return cls(
            np.zeros_like(params.weights),
            np.zeros_like(params.visible_bias),
            np.zeros_like(params.hidden_bias),
        )


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def _check_state(params: RbmParams, v, h):
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape[-1] != params.num_visible:
        raise ShapeError(f"visible state length {v.shape[-1]} != {params.num_visible}")
    if h.shape[-1] != params.num_hidden:
        raise ShapeError(f"hidden state length {h.shape[-1]} != {params.num_hidden}")
    return v, h


def energy(params: RbmParams, v, h) -> float:
    """E(v, h) = -sum_ij w_ij h_i v_j - sum_j b_j v_j - sum_i c_i h_i."""
    v, h = _check_state(params, v, h)
    return float(
        -(h @ params.weights @ v) - params.visible_bias @ v - params.hidden_bias @ h
    )


def hidden_conditional(params: RbmParams, v) -> np.ndarray:
    """p(h_i = 1 | v) for each hidden unit; v may be a vector or a batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.num_visible:
        raise ShapeError(f"visible length {v.shape[-1]} != {params.num_visible}")
    return sigmoid(v @ params.weights.T + params.hidden_bias)


def visible_conditional(params: RbmParams, h) -> np.ndarray:
    """p(v_j = 1 | h) for each visible unit; h may be a vector or a batch."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.num_hidden:
        raise ShapeError(f"hidden length {h.shape[-1]} != {params.num_hidden}")
    return sigmoid(h @ params.weights + params.visible_bias)


def sample_bernoulli(probs, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draws, one per entry of probs."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return (rng.random(probs.shape) < probs).astype(np.float64)


def _batch2d(batch, m):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != m:
        raise ShapeError(f"batch shape {batch.shape} incompatible with m={m}")
    if batch.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    return batch


def data_expectation(params: RbmParams, batch) -> ExpectationStats:
    """Data-side statistics with the visible layer clamped to the batch.

    The hidden side uses conditional probabilities, not samples, so the
    result is deterministic and lower-variance.
    """
    batch = _batch2d(batch, params.num_visible)
    hp = hidden_conditional(params, batch)  # (B, n)
    b = batch.shape[0]
    return ExpectationStats(vh=hp.T @ batch / b, v=batch.mean(axis=0), h=hp.mean(axis=0))


def _model_stats_from_chain(v, hp) -> ExpectationStats:
    b = v.shape[0]
    return ExpectationStats(vh=hp.T @ v / b, v=v.mean(axis=0), h=hp.mean(axis=0))


def cd_estimate(params: RbmParams, batch, k: int, rng: np.random.Generator):
    """CD-k estimate: (data stats, model stats from k-step Gibbs reconstructions).

    One chain per batch row, started at the data.  Intermediate layers are
    sampled; the hidden side of the final statistics uses probabilities.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = _batch2d(batch, params.num_visible)
    data = data_expectation(params, batch)

    h = sample_bernoulli(hidden_conditional(params, batch), rng)
    v = batch
    for _ in range(k):
        v = sample_bernoulli(visible_conditional(params, h), rng)
        hp = hidden_conditional(params, v)
        h = sample_bernoulli(hp, rng)
    model = _model_stats_from_chain(v, hp)
    return data, model


def _all_states(n: int) -> np.ndarray:
    """All 2^n binary vectors of length n, row-major (bit 0 = leftmost unit)."""
    idx = np.arange(2**n, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(
        np.float64
    )


def exact_model_expectation(params: RbmParams, chunk=4096) -> ExactModelStats:
    """Exact Z and model expectations by full enumeration of all joint states.

    Only feasible for num_visible + num_hidden <= 24; log-sum-exp keeps the
    partition function stable.
    """
    m, n = params.num_visible, params.num_hidden
    if m + n > MAX_EXACT_UNITS:
        raise CapacityError(f"m+n = {m + n} exceeds enumeration guard {MAX_EXACT_UNITS}")

    H = _all_states(n)  # (2^n, n)
    ch = H @ params.hidden_bias  # (2^n,)
    V_all = _all_states(m)

    # First pass: global log-normalizer over every joint state.
    log_max = -np.inf
    for start in range(0, V_all.shape[0], chunk):
        V = V_all[start : start + chunk]
        neg_e = V @ params.weights.T @ H.T + (V @ params.visible_bias)[:, None] + ch
        log_max = max(log_max, float(neg_e.max()))

    z_scaled = 0.0
    vh = np.zeros((n, m))
    v_mean = np.zeros(m)
    h_mean = np.zeros(n)
    for start in range(0, V_all.shape[0], chunk):
        V = V_all[start : start + chunk]
        neg_e = V @ params.weights.T @ H.T + (V @ params.visible_bias)[:, None] + ch
        w = np.exp(neg_e - log_max)  # (B, 2^n)
        z_scaled += float(w.sum())
        vh += (H.T @ w.T) @ V  # (n, m) unnormalized
        v_mean += w.sum(axis=1) @ V
        h_mean += w.sum(axis=0) @ H

    log_z = log_max + np.log(z_scaled)
    stats = ExpectationStats(vh=vh / z_scaled, v=v_mean / z_scaled, h=h_mean / z_scaled)
    return ExactModelStats(
        partition_function=float(np.exp(log_z)), log_partition_function=float(log_z), stats=stats
    )


def _softplus(x):
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(x)))


def exact_log_likelihood(params: RbmParams, batch) -> float:
    """Mean log-likelihood of the batch with hidden units summed out exactly."""
    batch = _batch2d(batch, params.num_visible)
    log_z = exact_model_expectation(params).log_partition_function
    field = batch @ params.weights.T + params.hidden_bias
    unnorm = batch @ params.visible_bias + _softplus(field).sum(axis=1)
    return float(np.mean(unnorm) - log_z)


def apply_update(
    params: RbmParams,
    mom: MomentumState,
    data: ExpectationStats,
    model: ExpectationStats,
    learning_rate: float,
    momentum: float,
):
    """Momentum ascent step on the log-likelihood gradient estimate.

    dW <- alpha*dW + eps*(data.vh - model.vh), and likewise for both biases.
    Returns new (params, momentum state); inputs are not mutated.
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    if data.vh.shape != params.weights.shape or model.vh.shape != params.weights.shape:
        raise ShapeError("expectation statistics do not match parameter shapes")

    dw = momentum * mom.prev_dw + learning_rate * (data.vh - model.vh)
    db = momentum * mom.prev_db + learning_rate * (data.v - model.v)
    dc = momentum * mom.prev_dc + learning_rate * (data.h - model.h)
    new = RbmParams(params.weights + dw, params.visible_bias + db, params.hidden_bias + dc)
    return new, MomentumState(dw, db, dc)
