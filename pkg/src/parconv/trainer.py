"""End-to-end training over any parallel plan, evaluation, and the
scheme-equivalence runner.

The batch schedule is a pure function of (seed, epoch): a Fisher-Yates
permutation of the training set per epoch, cut into consecutive batches of
the configured size (a trailing remainder smaller than one batch is skipped
that epoch). Plans never influence the schedule, so runs under different
plans see identical sample sequences and their per-update losses can be
compared directly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .costmodel import DEFAULT_MEMORY, CostParams, step_time
from .data import Dataset, gen_synthetic
from .errors import InfeasiblePlanError, ValidationError
from .fabric import DeviceSpec, Fabric, spawn
from .kernels import SgdState
from .metrics import MetricsRecord
from .netdef import NetworkSpec, columnize, worker_footprint_bytes
from .schemes import (
    ParallelPlan,
    ParamSet,
    evaluation_errors,
    gather_dense_params,
    hybrid_step,
    init_dense_params,
    plan_columnized,
    reference_step,
    setup_workers,
)


@dataclass
class TrainConfig:
    net: NetworkSpec
    plan: ParallelPlan
    epochs: int
    batch: int
    seed: int
    train_data: Dataset
    test_data: Dataset | None = None
    sgd: SgdState = field(default_factory=SgdState)
    cost: CostParams | None = None
    memory_capacity: int | None = None  # overrides cost.memory / the 6 GB default
    scheduling: str = "lockstep"
    record_wall_time: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ValidationError("batch size must be >= 1")
        if self.batch % self.plan.data_shards != 0:
            raise ValidationError(
                f"batch {self.batch} not divisible by {self.plan.data_shards} data shards"
            )
        if self.train_data.classes != self.net.classes:
            raise ValidationError(
                f"dataset has {self.train_data.classes} classes but the network head "
                f"expects {self.net.classes}"
            )
        if self.test_data is not None and self.test_data.classes != self.net.classes:
            raise ValidationError("test split class count does not match the network")
        if self.train_data.size < self.batch:
            raise ValidationError(
                f"training split has {self.train_data.size} samples, need >= {self.batch}"
            )
        if self.train_data.sample_shape != self.net.input_shape:
            raise ValidationError(
                f"dataset samples are {self.train_data.sample_shape}, network input is "
                f"{self.net.input_shape}"
            )

    @property
    def device_capacity(self) -> int:
        if self.memory_capacity is not None:
            return self.memory_capacity
        if self.cost is not None:
            return self.cost.memory
        return DEFAULT_MEMORY


@dataclass
class TrainResult:
    records: list[MetricsRecord]
    final_params: ParamSet | None  # dense layout when the plan merges back, else None
    fabric: Fabric
    step_seconds: float  # cost-model seconds per update (0.0 without cost params)


def train(cfg: TrainConfig) -> TrainResult:
    """Run the synchronous training loop under cfg.plan; returns per-update metrics."""
    plan = cfg.plan
    cs = plan_columnized(cfg.net, plan)
    shard = cfg.batch // plan.data_shards

    # fail fast on memory before spawning anything (the runtime meter re-checks)
    need = worker_footprint_bytes(cs, shard, holds_velocity=True)
    if need > cfg.device_capacity:
        raise InfeasiblePlanError(0, need, cfg.device_capacity)

    step_seconds = 0.0
    if cfg.cost is not None:
        cp = replace(cfg.cost, memory=cfg.device_capacity)
        step_seconds = step_time(plan, cfg.net, cfg.batch, cp).step_seconds

    fabric = spawn(
        plan.workers,
        DeviceSpec(memory_capacity=cfg.device_capacity),
        scheduling=cfg.scheduling,
    )
    dense = init_dense_params(cfg.net, cfg.seed)
    setup_workers(fabric, plan, cs, dense, cfg.sgd)

    steps_per_epoch = cfg.train_data.size // cfg.batch
    records: list[MetricsRecord] = []
    update = 0
    wall_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(cfg.seed, epoch, cfg.train_data.size)
        for step in range(steps_per_epoch):
            chosen = order[step * cfg.batch : (step + 1) * cfg.batch]
            result = hybrid_step(
                fabric, plan, cs, cfg.train_data.images[chosen], cfg.train_data.labels[chosen]
            )
            update += 1
            records.append(
                MetricsRecord(
                    update=update,
                    epoch=epoch + 1,
                    train_loss=result.loss,
                    test_error=None,
                    sim_seconds=update * step_seconds,
                    wall_seconds=(time.perf_counter() - wall_start) if cfg.record_wall_time else 0.0,
                    ledger_bytes=fabric.ledger.total_bytes,
                )
            )
        if cfg.test_data is not None and records:
            err = _fabric_error_rate(fabric, plan, cs, cfg.test_data, eval_batch=shard)
            records[-1] = records[-1].with_test_error(err)

    try:
        final = gather_dense_params(fabric, plan, cs)
    except ValidationError:
        final = None  # grouped columnization: parameters have no dense layout
    return TrainResult(records=records, final_params=final, fabric=fabric, step_seconds=step_seconds)


def _fabric_error_rate(
    fabric: Fabric, plan: ParallelPlan, cs, test: Dataset, eval_batch: int
) -> float:
    if test.size < 1:
        raise ValidationError("cannot evaluate on an empty test split")
    wrong = 0
    for lo in range(0, test.size, eval_batch):
        hi = min(lo + eval_batch, test.size)
        wrong += evaluation_errors(fabric, plan, cs, test.images[lo:hi], test.labels[lo:hi])
    return wrong / test.size


def evaluate(net: NetworkSpec, params: ParamSet, test: Dataset) -> float:
    """Error rate of dense parameters on a test split (host-side forward).

    Argmax ties break to the lowest class index, matching np.argmax.
    """
    if test.size < 1:
        raise ValidationError("cannot evaluate on an empty test split")
    if test.classes != net.classes:
        raise ValidationError("test split class count does not match the network")
    cs = columnize(net, 1)
    wrong = 0
    for lo in range(0, test.size, 256):
        hi = min(lo + 256, test.size)
        x = test.images[lo:hi]
        labels = test.labels[lo:hi]
        # forward only: reuse the engine with a zero-loss scale and read logits
        logits = _dense_logits(cs, params, x)
        predictions = np.argmax(logits, axis=1)
        wrong += int(np.count_nonzero(predictions != labels))
    return wrong / test.size


def _dense_logits(cs, params: ParamSet, x: np.ndarray) -> np.ndarray:
    from .kernels import ConvParams, conv2d_forward, fc_forward, maxpool_forward, relu_forward
    from .netdef import Conv, FC, MaxPool, ReLU

    a = x
    logits = None
    for cl in cs.col_layers:
        layer = cl.layer
        if isinstance(layer, Conv):
            p = ConvParams(params[cl.index]["w"], params[cl.index]["b"], layer.stride, layer.pad)
            a = conv2d_forward(a, p)
        elif isinstance(layer, FC):
            a = fc_forward(a.reshape(a.shape[0], -1), params[cl.index]["w"], params[cl.index]["b"])
        elif isinstance(layer, ReLU):
            a = relu_forward(a)
        elif isinstance(layer, MaxPool):
            a, _ = maxpool_forward(a, layer.kernel, layer.stride)
        else:
            logits = a.reshape(a.shape[0], -1)
    return logits


# ---------------------------------------------------------------------------
# Equivalence suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Divergence:
    """Worst relative deviation of a plan's run from the single-worker reference."""

    plan: ParallelPlan
    loss_rel: float  # max over updates of |loss - ref| / max(|loss|, |ref|)
    param_rel: float  # max over tensors of max|delta| / max absolute value

    @property
    def worst(self) -> float:
        return max(self.loss_rel, self.param_rel)


def _loss_rel(a: list[float], b: list[float]) -> float:
    worst = 0.0
    for x, y in zip(a, b):
        denom = max(abs(x), abs(y), 1e-300)
        worst = max(worst, abs(x - y) / denom)
    return worst


def _param_rel(a: ParamSet, b: ParamSet) -> float:
    worst = 0.0
    for idx in sorted(a):
        for key in ("w", "b"):
            ta, tb = a[idx][key], b[idx][key]
            scale = max(float(np.max(np.abs(ta))), float(np.max(np.abs(tb))), 1e-300)
            worst = max(worst, float(np.max(np.abs(ta - tb))) / scale)
    return worst


def _batch_schedule(seed: int, n: int, batch: int, steps: int) -> list[np.ndarray]:
    """The trainer's batch order, flattened across as many epochs as needed."""
    per_epoch = n // batch
    if per_epoch < 1:
        raise ValidationError("dataset too small for one batch")
    batches = []
    epoch = 0
    while len(batches) < steps:
        order = rng.permutation(seed, epoch, n)
        for step in range(per_epoch):
            if len(batches) == steps:
                break
            batches.append(order[step * batch : (step + 1) * batch])
        epoch += 1
    return batches


def equivalence_data(net: NetworkSpec, batch: int, seed: int) -> Dataset:
    """Deterministic in-memory blobs sized for the equivalence runs."""
    per_class = max(1, math.ceil(8 * batch / net.classes))
    train, _ = gen_synthetic(net.classes, per_class, net.input_shape, seed)
    return train


def run_equivalence(
    net: NetworkSpec,
    plans: list[ParallelPlan],
    steps: int = 50,
    seed: int = 0,
    batch: int = 8,
    scheduling: str = "lockstep",
    data: Dataset | None = None,
) -> list[Divergence]:
    """Train every plan on the identical batch sequence and compare per-update
    losses and final parameters against the single-worker reference."""
    if data is None:
        data = equivalence_data(net, batch, seed)
    batches = _batch_schedule(seed, data.size, batch, steps)

    ref_params = init_dense_params(net, seed)
    ref_sgd = SgdState()
    ref_losses: list[float] = []
    for chosen in batches:
        out = reference_step(net, ref_params, (data.images[chosen], data.labels[chosen]), ref_sgd)
        ref_params, ref_sgd = out.params, out.sgd
        ref_losses.append(out.loss)

    results = []
    for plan in plans:
        if batch % plan.data_shards != 0:
            raise ValidationError(
                f"batch {batch} not divisible by plan {plan.describe()} data shards"
            )
        cs = plan_columnized(net, plan)
        fabric = spawn(plan.workers, scheduling=scheduling)
        setup_workers(fabric, plan, cs, init_dense_params(net, seed), SgdState())
        losses = []
        for chosen in batches:
            res = hybrid_step(fabric, plan, cs, data.images[chosen], data.labels[chosen])
            losses.append(res.loss)
        merged = gather_dense_params(fabric, plan, cs)
        results.append(
            Divergence(
                plan=plan,
                loss_rel=_loss_rel(losses, ref_losses),
                param_rel=_param_rel(merged, ref_params),
            )
        )
    return results
