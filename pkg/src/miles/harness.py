"""End-to-end experiment runs: epoch loop, CSV logging, sweeps, comparisons.

One run is strictly sequential and fully determined by its config: data
order, initialization, and scheduling all draw from explicitly seeded
streams, so the serialized run log is byte-identical across reruns.

Per epoch the loop trains on shuffled minibatches under the current
per-group rates, evaluates all three splits with both metrics, derives
the utilization rates on the configured split, and hands the scheduler
one observation; whatever rates (and freeze flags) it returns apply to
the next epoch.  Epoch 1 always trains at the global rate.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datagen import BimodalDataset, DatasetSplit, SyntheticSpec, generate, load
from .errors import ConfigError, MilesError, NumericError
from .metrics import MetricKind, compute_metric, conditional_utilization, encoder_gap, utilization_delta
from .model import FusionKind, ModelConfig, init_parameters, joint_loss
from .optim import Group, adam_step
from .rng import make_rng
from .schedulers import (
    Action,
    Decision,
    EpochObservation,
    MilesConfig,
    MilesScheduler,
    MslrD,
    MslrK,
    MslrS,
    MsesScheduler,
    VanillaScheduler,
)
from .tensor import GradientTape, Tensor, backward

CSV_HEADER = (
    "epoch,split,metric_AB,metric_A,metric_B,u_A,u_B,delta,"
    "alpha_A,alpha_B,alpha_AB,action,loss_AB,loss_A,loss_B"
)

SCHEDULER_KINDS = ("miles", "vanilla", "mslr_k", "mslr_s", "mslr_d", "mses")
COMPARE_METHODS = ("vanilla", "mslr_k", "mslr_s", "mslr_d", "mses", "miles")


@dataclass
class ModelSpec:
    """Model settings that do not depend on the dataset's dimensions."""

    hidden_a: tuple[int, ...] = (32,)
    hidden_b: tuple[int, ...] = (32,)
    latent_a: int = 16
    latent_b: int = 16
    fusion: FusionKind = FusionKind.CONCAT
    seed: int | None = None  # None -> the run seed

    def resolve(self, d_a: int, d_b: int, classes: int, run_seed: int) -> ModelConfig:
        return ModelConfig(
            d_a=d_a,
            d_b=d_b,
            classes=classes,
            hidden_a=self.hidden_a,
            hidden_b=self.hidden_b,
            latent_a=self.latent_a,
            latent_b=self.latent_b,
            fusion=self.fusion,
            seed=self.seed if self.seed is not None else run_seed,
        )


@dataclass
class SchedulerSpec:
    kind: str = "miles"
    tau: float = 0.2
    mu: float = 0.5
    gamma: float = 0.1  # mslr_s
    window: int = 3  # mslr_d
    factor: float = 0.05  # mslr_d
    patience: int = 5  # mses
    lr_a: float | None = None  # mslr_k / mslr_s / mslr_d base rates
    lr_b: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ConfigError(f"unknown scheduler kind {self.kind!r}; expected one of {SCHEDULER_KINDS}")


def build_scheduler(spec: SchedulerSpec, alpha: float, utilization_split: str):
    if spec.kind == "miles":
        return MilesScheduler(alpha, MilesConfig(spec.tau, spec.mu, utilization_split))
    if spec.kind == "vanilla":
        return VanillaScheduler(alpha)
    if spec.kind == "mslr_k":
        return MslrK(alpha, spec.lr_a, spec.lr_b)
    if spec.kind == "mslr_s":
        return MslrS(alpha, spec.gamma, spec.lr_a, spec.lr_b)
    if spec.kind == "mslr_d":
        return MslrD(alpha, spec.window, spec.factor, spec.lr_a, spec.lr_b)
    return MsesScheduler(alpha, spec.patience)


@dataclass
class RunConfig:
    dataset: SyntheticSpec | str | Path = field(default_factory=SyntheticSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    scheduler: SchedulerSpec = field(default_factory=SchedulerSpec)
    alpha: float = 1e-3
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    utilization_split: str = "val"
    metric: MetricKind = MetricKind.ACCURACY
    dominant: str = "a"  # which modality the encoder gap treats as the stronger one
    out_dir: Path | None = None

    def __post_init__(self):
        self.metric = MetricKind(self.metric)
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.utilization_split not in ("train", "val"):
            raise ConfigError(f"utilization split must be 'train' or 'val', got {self.utilization_split!r}")
        if self.dominant not in ("a", "b"):
            raise ConfigError(f"dominant modality must be 'a' or 'b', got {self.dominant!r}")


@dataclass
class SplitMetrics:
    acc_ab: float
    acc_a: float
    acc_b: float
    f1_ab: float
    f1_a: float
    f1_b: float

    def by_kind(self, kind: MetricKind) -> tuple[float, float, float]:
        if kind is MetricKind.ACCURACY:
            return self.acc_ab, self.acc_a, self.acc_b
        return self.f1_ab, self.f1_a, self.f1_b


@dataclass
class EpochRecord:
    epoch: int
    splits: dict[str, SplitMetrics]
    u_a: float
    u_b: float
    delta: float
    alpha_a: float  # rates in effect while this epoch trained
    alpha_b: float
    alpha_ab: float
    action: str  # what the scheduler did after observing this epoch
    next_alpha_a: float  # rates it set for the next epoch
    next_alpha_b: float
    loss_ab: float  # mean training-loss terms over the epoch's minibatches
    loss_a: float
    loss_b: float


@dataclass
class RunSeries:
    """The nine per-epoch series a learning-dynamics plot shows."""

    epochs: list[int]
    u_a: list[float]
    u_b: list[float]
    delta: list[float]
    alpha_a: list[float]
    alpha_b: list[float]
    alpha_ab: list[float]
    val_ab: list[float]
    val_a: list[float]
    val_b: list[float]


@dataclass
class RunLog:
    config: RunConfig
    records: list[EpochRecord]
    best_epoch: int  # 1-indexed; argmax of validation fused metric, earliest on ties

    def best_record(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]

    def series(self) -> RunSeries:
        kind = self.config.metric
        vals = [r.splits["val"].by_kind(kind) for r in self.records]
        return RunSeries(
            epochs=[r.epoch for r in self.records],
            u_a=[r.u_a for r in self.records],
            u_b=[r.u_b for r in self.records],
            delta=[r.delta for r in self.records],
            alpha_a=[r.alpha_a for r in self.records],
            alpha_b=[r.alpha_b for r in self.records],
            alpha_ab=[r.alpha_ab for r in self.records],
            val_ab=[v[0] for v in vals],
            val_a=[v[1] for v in vals],
            val_b=[v[2] for v in vals],
        )

    def to_csv(self) -> str:
        lines = [f"# {key} = {value}" for key, value in _config_snapshot(self.config)]
        lines.append(f"# best_epoch = {self.best_epoch}")
        lines.append(CSV_HEADER)
        kind = self.config.metric
        for r in self.records:
            for split_name in ("train", "val", "test"):
                m_ab, m_a, m_b = r.splits[split_name].by_kind(kind)
                su_a, su_b = conditional_utilization(m_ab, m_a, m_b)
                lines.append(
                    ",".join(
                        (
                            str(r.epoch),
                            split_name,
                            _fmt(m_ab),
                            _fmt(m_a),
                            _fmt(m_b),
                            _fmt(su_a),
                            _fmt(su_b),
                            _fmt(utilization_delta(su_a, su_b)),
                            _fmt(r.alpha_a),
                            _fmt(r.alpha_b),
                            _fmt(r.alpha_ab),
                            "",
                            "",
                            "",
                            "",
                        )
                    )
                )
            lines.append(
                ",".join(
                    (
                        str(r.epoch),
                        "scheduler",
                        "",
                        "",
                        "",
                        _fmt(r.u_a),
                        _fmt(r.u_b),
                        _fmt(r.delta),
                        _fmt(r.next_alpha_a),
                        _fmt(r.next_alpha_b),
                        _fmt(r.alpha_ab),
                        r.action,
                        _fmt(r.loss_ab),
                        _fmt(r.loss_a),
                        _fmt(r.loss_b),
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())


def _fmt(value: float) -> str:
    return repr(float(value))


def _config_snapshot(config: RunConfig) -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    if isinstance(config.dataset, SyntheticSpec):
        ds = config.dataset
        items += [
            ("dataset.mode", ds.mode),
            ("dataset.classes", str(ds.classes)),
            ("dataset.sizes", f"{ds.n_train}/{ds.n_val}/{ds.n_test}"),
            ("dataset.dims", f"{ds.d_a}/{ds.d_b}"),
            ("dataset.sigma", f"{ds.sigma_a}/{ds.sigma_b}"),
            ("dataset.nonlinear_b", str(ds.nonlinear_b).lower()),
            ("dataset.seed", str(ds.seed)),
        ]
    else:
        items.append(("dataset.path", str(config.dataset)))
    sched = config.scheduler
    items.append(("scheduler.kind", sched.kind))
    if sched.kind == "miles":
        items += [("scheduler.tau", _fmt(sched.tau)), ("scheduler.mu", _fmt(sched.mu))]
    elif sched.kind == "mslr_s":
        items.append(("scheduler.gamma", _fmt(sched.gamma)))
    elif sched.kind == "mslr_d":
        items += [("scheduler.window", str(sched.window)), ("scheduler.factor", _fmt(sched.factor))]
    elif sched.kind == "mses":
        items.append(("scheduler.patience", str(sched.patience)))
    items += [
        ("model.fusion", config.model.fusion.value),
        ("alpha", _fmt(config.alpha)),
        ("epochs", str(config.epochs)),
        ("batch_size", str(config.batch_size)),
        ("seed", str(config.seed)),
        ("utilization_split", config.utilization_split),
        ("metric", config.metric.value),
        ("dominant", config.dominant),
    ]
    return items


def resolve_dataset(source: SyntheticSpec | str | Path) -> BimodalDataset:
    if isinstance(source, SyntheticSpec):
        return generate(source)
    return load(source)


def _evaluate(model, split: DatasetSplit, classes: int) -> SplitMetrics:
    bundle = model.forward(split.features_a, split.features_b)
    preds = {
        name: np.argmax(logits.data, axis=1)
        for name, logits in (
            ("ab", bundle.logits_ab),
            ("a", bundle.logits_a),
            ("b", bundle.logits_b),
        )
    }
    labels = split.labels
    return SplitMetrics(
        acc_ab=compute_metric(MetricKind.ACCURACY, preds["ab"], labels, classes),
        acc_a=compute_metric(MetricKind.ACCURACY, preds["a"], labels, classes),
        acc_b=compute_metric(MetricKind.ACCURACY, preds["b"], labels, classes),
        f1_ab=compute_metric(MetricKind.MACRO_F1, preds["ab"], labels, classes),
        f1_a=compute_metric(MetricKind.MACRO_F1, preds["a"], labels, classes),
        f1_b=compute_metric(MetricKind.MACRO_F1, preds["b"], labels, classes),
    )


def _action_label(decision: Decision, previous: Decision | None) -> str:
    events = []
    if decision.action is not Action.NONE:
        events.append(decision.action.value)
    prev_a = previous.freeze_a if previous else False
    prev_b = previous.freeze_b if previous else False
    prev_ab = previous.freeze_fusion if previous else False
    if decision.freeze_a and not prev_a:
        events.append("freeze_a")
    if decision.freeze_b and not prev_b:
        events.append("freeze_b")
    if decision.freeze_fusion and not prev_ab:
        events.append("freeze_ab")
    if decision.stop and not (previous.stop if previous else False):
        events.append("stop")
    return "+".join(events) if events else Action.NONE.value


def run_experiment(config: RunConfig, dataset: BimodalDataset | None = None, scheduler=None) -> RunLog:
    """Train one model under one scheduling policy, logging every epoch.

    `dataset` lets sweeps share a generated dataset across cells;
    `scheduler` is an injection seam for pre-built (or custom) policies,
    bypassing the kind/params in the config.
    """
    if dataset is None:
        dataset = resolve_dataset(config.dataset)
    model_cfg = config.model.resolve(dataset.d_a, dataset.d_b, dataset.classes, config.seed)
    model = init_parameters(model_cfg)
    if scheduler is None:
        scheduler = build_scheduler(config.scheduler, config.alpha, config.utilization_split)
    shuffle_rng = make_rng([config.seed, 0x5F73])
    train = dataset.train
    n_train = len(train)

    records: list[EpochRecord] = []
    alpha_a = alpha_b = config.alpha
    frozen = {Group.MODALITY_A: False, Group.MODALITY_B: False, Group.FUSION: False}
    prev_decision: Decision | None = None

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        loss_sums = np.zeros(3)
        batches = 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            tape = GradientTape()
            bundle = model.forward(
                Tensor(train.features_a.data[idx]), Tensor(train.features_b.data[idx]), tape
            )
            loss = joint_loss(bundle, train.labels[idx], tape)
            if not math.isfinite(float(loss.total.data)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"ab={loss.loss_ab} a={loss.loss_a} b={loss.loss_b}"
                )
            grads = backward(tape, loss.total)
            rates = {
                Group.MODALITY_A: alpha_a,
                Group.MODALITY_B: alpha_b,
                Group.FUSION: scheduler.alpha_ab,
            }
            for group_id, group in model.groups.items():
                if not frozen[group_id]:
                    adam_step(group, grads, rates[group_id])
            loss_sums += (loss.loss_ab, loss.loss_a, loss.loss_b)
            batches += 1

        split_metrics = {
            name: _evaluate(model, split, dataset.classes) for name, split in dataset.splits().items()
        }
        m_ab, m_a, m_b = split_metrics[config.utilization_split].by_kind(config.metric)
        v_ab, v_a, v_b = split_metrics["val"].by_kind(config.metric)
        obs = EpochObservation.from_metrics(
            epoch, m_ab, m_a, m_b, val_m_ab=v_ab, val_m_a=v_a, val_m_b=v_b
        )
        decision = scheduler.step(obs)
        records.append(
            EpochRecord(
                epoch=epoch,
                splits=split_metrics,
                u_a=obs.u_a,
                u_b=obs.u_b,
                delta=obs.delta,
                alpha_a=alpha_a,
                alpha_b=alpha_b,
                alpha_ab=scheduler.alpha_ab,
                action=_action_label(decision, prev_decision),
                next_alpha_a=decision.alpha_a,
                next_alpha_b=decision.alpha_b,
                loss_ab=float(loss_sums[0] / batches),
                loss_a=float(loss_sums[1] / batches),
                loss_b=float(loss_sums[2] / batches),
            )
        )
        alpha_a, alpha_b = decision.alpha_a, decision.alpha_b
        frozen = {
            Group.MODALITY_A: decision.freeze_a,
            Group.MODALITY_B: decision.freeze_b,
            Group.FUSION: decision.freeze_fusion,
        }
        prev_decision = decision
        if decision.stop:
            break

    best_epoch = 1 + max(
        range(len(records)),
        key=lambda i: (records[i].splits["val"].by_kind(config.metric)[0], -i),
    )
    return RunLog(config, records, best_epoch)


def read_run_csv(path) -> RunSeries:
    """Rebuild the plottable series from a serialized run log."""
    epochs: list[int] = []
    u_a: list[float] = []
    u_b: list[float] = []
    delta: list[float] = []
    alpha_a: list[float] = []
    alpha_b: list[float] = []
    alpha_ab: list[float] = []
    val_ab: list[float] = []
    val_a: list[float] = []
    val_b: list[float] = []
    lines = Path(path).read_text().splitlines()
    rows = [line for line in lines if line and not line.startswith("#")]
    if not rows or rows[0] != CSV_HEADER:
        raise ConfigError(f"{path}: not a run log (unexpected header)")
    for row in rows[1:]:
        cells = row.split(",")
        epoch, split_name = int(cells[0]), cells[1]
        if split_name == "val":
            epochs.append(epoch)
            val_ab.append(float(cells[2]))
            val_a.append(float(cells[3]))
            val_b.append(float(cells[4]))
            alpha_a.append(float(cells[8]))
            alpha_b.append(float(cells[9]))
            alpha_ab.append(float(cells[10]))
        elif split_name == "scheduler":
            u_a.append(float(cells[5]))
            u_b.append(float(cells[6]))
            delta.append(float(cells[7]))
    return RunSeries(epochs, u_a, u_b, delta, alpha_a, alpha_b, alpha_ab, val_ab, val_a, val_b)


@dataclass
class CellResult:
    tau: float
    mu: float
    seed: int
    error: str | None = None
    val_ab: float = math.nan
    test_ab: float = math.nan
    test_a: float = math.nan
    test_b: float = math.nan
    gap: float = math.nan


@dataclass
class SweepResult:
    cells: list[CellResult]
    taus: list[float]
    mus: list[float]

    def summary_rows(self) -> list[dict]:
        rows = []
        for tau in self.taus:
            for mu in self.mus:
                group = [c for c in self.cells if c.tau == tau and c.mu == mu]
                ok = [c for c in group if c.error is None]
                row = {"tau": tau, "mu": mu, "runs": len(ok)}
                for key in ("val_ab", "test_ab", "test_a", "test_b", "gap"):
                    row[key] = statistics.median(getattr(c, key) for c in ok) if ok else math.nan
                rows.append(row)
        return rows

    def to_csv(self) -> str:
        lines = ["tau,mu,runs,val_AB,test_AB,test_A,test_B,gap"]
        for row in self.summary_rows():
            lines.append(
                ",".join(
                    (
                        _fmt(row["tau"]),
                        _fmt(row["mu"]),
                        str(row["runs"]),
                        _fmt(row["val_ab"]),
                        _fmt(row["test_ab"]),
                        _fmt(row["test_a"]),
                        _fmt(row["test_b"]),
                        _fmt(row["gap"]),
                    )
                )
            )
        return "\n".join(lines) + "\n"


def _cell_metrics(config: RunConfig, log: RunLog) -> tuple[float, float, float, float, float]:
    best = log.best_record()
    val_ab = best.splits["val"].by_kind(config.metric)[0]
    test_ab, test_a, test_b = best.splits["test"].by_kind(config.metric)
    if config.dominant == "a":
        gap = encoder_gap(test_a, test_b)
    else:
        gap = encoder_gap(test_b, test_a)
    return val_ab, test_ab, test_a, test_b, gap


def sweep(base: RunConfig, taus, mus, seeds, runlog_dir=None) -> SweepResult:
    """Grid of runs over (tau, mu, seed) with per-cell error isolation.

    Cells share the dataset; each owns its model, scheduler, and RNG
    streams.  Results come back in grid order regardless of failures.
    """
    taus, mus, seeds = list(taus), list(mus), list(seeds)
    if not taus or not mus or not seeds:
        raise ConfigError("sweep grids must be nonempty")
    dataset = resolve_dataset(base.dataset)
    cells = []
    for tau in taus:
        for mu in mus:
            for seed in seeds:
                cfg = replace(
                    base,
                    scheduler=replace(base.scheduler, kind="miles", tau=tau, mu=mu),
                    seed=seed,
                )
                cell = CellResult(tau=tau, mu=mu, seed=seed)
                try:
                    log = run_experiment(cfg, dataset)
                    cell.val_ab, cell.test_ab, cell.test_a, cell.test_b, cell.gap = _cell_metrics(cfg, log)
                    if runlog_dir is not None:
                        log.write_csv(Path(runlog_dir) / f"run_tau{tau}_mu{mu}_seed{seed}.csv")
                except MilesError as exc:
                    cell.error = str(exc)
                cells.append(cell)
    return SweepResult(cells, taus, mus)


@dataclass
class CompareRow:
    method: str
    m_fused: float
    m_a: float
    m_b: float
    gap: float


@dataclass
class CompareResult:
    rows: list[CompareRow]

    def to_csv(self) -> str:
        lines = ["method,M_fused,M_A,M_B,gap"]
        for row in self.rows:
            lines.append(
                ",".join((row.method, _fmt(row.m_fused), _fmt(row.m_a), _fmt(row.m_b), _fmt(row.gap)))
            )
        return "\n".join(lines) + "\n"


def compare(base: RunConfig, methods=None, seeds=None) -> CompareResult:
    """Run every method on one dataset; report per-method seed medians.

    Test metrics are taken at each run's best-validation epoch; the gap
    column is the signed designated-dominant-minus-other difference.
    """
    methods = list(methods) if methods is not None else list(COMPARE_METHODS)
    seeds = list(seeds) if seeds is not None else [base.seed]
    unknown = [m for m in methods if m not in COMPARE_METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; expected a subset of {COMPARE_METHODS}")
    dataset = resolve_dataset(base.dataset)
    rows = []
    for method in methods:
        fused, m_a, m_b, gaps = [], [], [], []
        for seed in seeds:
            spec = replace(base.scheduler, kind=method)
            if method in ("mslr_k", "mslr_s", "mslr_d") and spec.lr_a is None:
                spec = replace(spec, lr_a=base.alpha, lr_b=base.alpha)
            cfg = replace(base, scheduler=spec, seed=seed)
            log = run_experiment(cfg, dataset)
            _, test_ab, test_a, test_b, gap = _cell_metrics(cfg, log)
            fused.append(test_ab)
            m_a.append(test_a)
            m_b.append(test_b)
            gaps.append(gap)
        rows.append(
            CompareRow(
                method,
                statistics.median(fused),
                statistics.median(m_a),
                statistics.median(m_b),
                statistics.median(gaps),
            )
        )
    return CompareResult(rows)
