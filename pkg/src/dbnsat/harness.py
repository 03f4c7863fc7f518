"""Experiment runner: accuracy sweeps, solver traces, deterministic CSV.

Four experiments: pretraining-iteration sweeps with mini-batched or
full-batch back-propagation, the batch-norm + ReLU comparison, and a
single solver trace.  Output is plain CSV with a commented header holding
every hyperparameter; identical config and seeds give identical bytes
(wall times are kept out of the file unless explicitly requested).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from dbnsat.data import (
    LabeledImages,
    PartitionSpec,
    load_mnist,
    partition,
    reduce_images,
)
from dbnsat.maxsat import SolverConfig, qubo_to_wcnf, solve_sls
from dbnsat.qubo import rbm_to_qubo
from dbnsat.rbm import RbmParams
from dbnsat.training import (
    BatchNormState,
    DbnModel,
    NetMomentum,
    PretrainConfig,
    SamplerSpec,
    SupervisedConfig,
    backprop_step,
    evaluate,
    pretrain_dbn,
)

EXPERIMENTS = ("minibatch_sweep", "fullbatch_sweep", "bn_relu_comparison", "solver_trace")

SAMPLER_NAMES = {
    "cd": ("cd", {}),
    "qubo-best": ("qubo_best", {}),
    "qubo-avg": ("qubo_time_average", {}),
    "exact": ("exact_enumeration", {}),
}


@dataclass
class ExperimentConfig:
    experiment: str = "minibatch_sweep"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    samplers: tuple = ("qubo-best", "cd")
    pretrain_iters: tuple = tuple(range(1, 51))
    backprop_iters: tuple = (100, 200, 400)
    seeds: tuple = (0,)
    layer_sizes: tuple = (32, 32, 32)
    cd_k: int = 1
    learning_rate: float = 0.1
    minibatch: int = 100
    restart_patience: int = 28
    noise: float = 0.1
    train_size: int = 0  # 0 = all
    test_size: int = 0
    num_parts: int = 1
    part_size: int = 0
    partition_seed: int = 0
    pretrain_minibatch: int = 0  # 0 = full batch, per the reference protocol
    stall_flips: int = 0  # 0 = full flip budget each restart
    # solver_trace only
    trace_visible: int = 32
    trace_hidden: int = 32
    trace_weight_scale: float = 1.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.experiment != "solver_trace" and not self.samplers:
            raise ValueError("at least one sampler is required")


@dataclass
class ResultRow:
    method: str
    pretrain_iters: int
    backprop_iters: int
    seed: int
    accuracy: float
    wall_time_seconds: float

    def key(self):
        return (self.method, self.pretrain_iters, self.backprop_iters, self.seed)


def make_sampler(name: str, cfg: ExperimentConfig) -> SamplerSpec:
    if name not in SAMPLER_NAMES:
        raise ValueError(f"unknown sampler {name!r}")
    kind, _ = SAMPLER_NAMES[name]
    return SamplerSpec(
        kind=kind,
        cd_k=cfg.cd_k,
        solver=SolverConfig(
            restart_patience=cfg.restart_patience,
            noise=cfg.noise,
            stall_flips=cfg.stall_flips or None,
        ),
    )


def load_reduced(cfg: ExperimentConfig):
    """Load the IDX files, apply the 784 -> 32 reduction, truncate to size."""
    train = load_mnist(cfg.train_images, cfg.train_labels)
    test = load_mnist(cfg.test_images, cfg.test_labels)

    def prep(ds: LabeledImages, size: int):
        images = ds.images
        if images.shape[1] == 784:
            images = reduce_images(images)
        labels = ds.labels
        if size:
            images, labels = images[:size], labels[:size]
        return images, labels

    return prep(train, cfg.train_size), prep(test, cfg.test_size)


def train_to_checkpoints(model, images, labels, sup_cfg, checkpoints, rng, bn=None):
    """Momentum SGD with snapshots at each checkpoint iteration (epoch).

    Mini-batching matches train_supervised: one iteration is a full pass
    over a fresh seeded shuffle.  Returns {iteration: (model, bn)}.
    """
    if sup_cfg.batch_norm and bn is None:
        bn = BatchNormState.for_model(model)
    momentum_state = NetMomentum()
    snapshots = {}
    last = max(checkpoints)
    for it in range(1, last + 1):
        order = rng.permutation(len(images))
        for start in range(0, len(images), sup_cfg.mini_batch):
            idx = order[start : start + sup_cfg.mini_batch]
            model, bn, momentum_state, _ = backprop_step(
                model, images[idx], labels[idx], sup_cfg, bn, momentum_state, iteration=it
            )
        if it in checkpoints:
            snapshots[it] = (model, bn)
    return snapshots


def _run_cell(cfg, method, sampler_name, pretrain_n, seed, train, test, sup_cfg):
    """One (method, pretrain N, seed) cell: pretrain, fine-tune, evaluate."""
    (train_x, train_y) = train
    (test_x, test_y) = test
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    model = DbnModel.initialize(cfg.layer_sizes, rng, num_classes=10)
    if pretrain_n > 0 and sampler_name is not None:
        pre_cfg = PretrainConfig(
            iterations=pretrain_n,
            sampler=make_sampler(sampler_name, cfg),
            learning_rate=cfg.learning_rate,
            mini_batch=cfg.pretrain_minibatch or None,
        )
        model, _ = pretrain_dbn(model, train_x, pre_cfg, rng)
    checkpoints = set(cfg.backprop_iters)
    snaps = train_to_checkpoints(model, train_x, train_y, sup_cfg, checkpoints, rng)
    rows = []
    for it in sorted(checkpoints):
        m, bn = snaps[it]
        acc = evaluate(m, test_x, test_y, sup_cfg, bn)
        rows.append(
            ResultRow(method, pretrain_n, it, seed, acc, time.perf_counter() - t0)
        )
    return rows


def run_experiment(cfg: ExperimentConfig):
    """All cells of the configured sweep, as deterministically sorted rows."""
    train, test = load_reduced(cfg)
    rows = []

    if cfg.experiment in ("minibatch_sweep", "fullbatch_sweep"):
        if cfg.experiment == "minibatch_sweep":
            sup_cfg = SupervisedConfig(
                mini_batch=cfg.minibatch,
                learning_rate=cfg.learning_rate,
            )
        else:
            sup_cfg = SupervisedConfig(
                mini_batch=max(1, len(train[0])),
                learning_rate=cfg.learning_rate,
            )
        parts = None
        if cfg.num_parts > 1:
            size = cfg.part_size or len(train[0]) // cfg.num_parts
            spec = PartitionSpec(cfg.num_parts, size, cfg.partition_seed)
            ds = LabeledImages(train[0], train[1], 0, 0)
            parts = [(p.images, p.labels) for p in partition(ds, spec)]
        for sampler_name in cfg.samplers:
            for i, seed in enumerate(cfg.seeds):
                cell_train = parts[i % cfg.num_parts] if parts else train
                for n in cfg.pretrain_iters:
                    rows += _run_cell(
                        cfg, sampler_name, sampler_name, n, seed, cell_train, test, sup_cfg
                    )

    elif cfg.experiment == "bn_relu_comparison":
        sampler_name = cfg.samplers[0]
        pretrain_n = max(cfg.pretrain_iters)
        sig_cfg = SupervisedConfig(
            mini_batch=cfg.minibatch, learning_rate=cfg.learning_rate
        )
        bn_cfg = SupervisedConfig(
            mini_batch=cfg.minibatch,
            learning_rate=cfg.learning_rate,
            activation="relu",
            batch_norm=True,
        )
        for seed in cfg.seeds:
            rows += _run_cell(
                cfg,
                f"{sampler_name}+sigmoid",
                sampler_name,
                pretrain_n,
                seed,
                train,
                test,
                sig_cfg,
            )
            rows += _run_cell(
                cfg, "bn+relu", None, 0, seed, train, test, bn_cfg
            )
    else:
        raise ValueError("solver_trace runs through emit_trace, not run_experiment")

    rows.sort(key=ResultRow.key)
    return rows


def emit_trace(cfg: ExperimentConfig, seed: int | None = None):
    """Solve one random-RBM instance; returns (flip, best weight, is_restart) rows."""
    seed = cfg.seeds[0] if seed is None else seed
    rng = np.random.default_rng(seed)
    params = RbmParams.initialize(
        cfg.trace_visible, cfg.trace_hidden, rng, weight_scale=cfg.trace_weight_scale
    )
    f = qubo_to_wcnf(rbm_to_qubo(params))
    result = solve_sls(
        f,
        SolverConfig(
            restart_patience=cfg.restart_patience,
            noise=cfg.noise,
            seed=int(rng.integers(2**31 - 1)),
        ),
    )
    markers = set(result.trace.restart_markers)
    rows = []
    seen_restarts = 0
    for i, (flip, weight) in enumerate(result.trace.points):
        # A restart marker at flip f labels the first point of the new segment.
        is_restart = i > 0 and flip in markers and result.trace.points[i - 1][0] == flip
        if is_restart:
            seen_restarts += 1
        rows.append((flip, weight, int(is_restart)))
    return rows, result


def config_header(cfg: ExperimentConfig):
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {f.name}={value}")
    return lines


def write_rows_csv(path, cfg: ExperimentConfig, rows, include_timings=False):
    """Sorted rows under a provenance header.  Wall times are excluded by
    default so identical runs are byte-identical."""
    cols = "method,pretrain_iters,backprop_iters,seed,accuracy"
    if include_timings:
        cols += ",wall_time_seconds"
    lines = config_header(cfg) + [cols]
    for r in rows:
        line = f"{r.method},{r.pretrain_iters},{r.backprop_iters},{r.seed},{r.accuracy:.6f}"
        if include_timings:
            line += f",{r.wall_time_seconds:.3f}"
        lines.append(line)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path, cfg: ExperimentConfig, rows):
    lines = config_header(cfg) + ["flip_count,best_weight,is_restart"]
    for flip, weight, is_restart in rows:
        lines.append(f"{flip},{weight:.9f},{is_restart}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
