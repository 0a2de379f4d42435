"""Learning-rate policies that react to epoch-wise modality utilization.

The MILES rule: after each training epoch, compare the conditional
utilization rates of the two modalities.  When their gap stays within
the target threshold tau, or the fused model trails both encoders
(typical of the first epochs, before fusion starts working), both
modality rates return to the global rate.  Otherwise the over-utilized
modality's rate is set to mu times the global rate for the next epoch:
slowing the modality the model leans on gives the other one room to be
learned.  At most one modality is slowed per epoch, the scale is always
applied to the global rate (never compounded), and the fused head's
rate is never touched.

Simplified baselines live alongside: a constant-rate policy, fixed
per-modality rates, smoothing of per-modality rates toward their mean,
windowed multiplicative rate adaptation, and per-part early stopping
that freezes converged parameter groups.

Every scheduler is a small state machine: ``step(obs)`` consumes one
EpochObservation, updates internal state, and returns a Decision with
the rates (and freeze flags) to use for the next epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigError, InputError
from .metrics import conditional_utilization, utilization_delta


class Action(str, Enum):
    NONE = "none"
    RESET = "reset"
    SCALED_A = "scaled_a"
    SCALED_B = "scaled_b"


@dataclass
class EpochObservation:
    """Per-epoch metrics the schedulers react to.

    m_ab / m_a / m_b come from whichever split is configured for
    utilization tracking.  val_m_* always carry the validation metrics,
    which the early-stopping and windowed baselines need regardless of
    that setting.
    """

    epoch: int
    m_ab: float
    m_a: float
    m_b: float
    u_a: float
    u_b: float
    delta: float
    val_m_ab: float = math.nan
    val_m_a: float = math.nan
    val_m_b: float = math.nan

    @classmethod
    def from_metrics(cls, epoch: int, m_ab: float, m_a: float, m_b: float, **kwargs) -> "EpochObservation":
        """Derive the utilization quantities from raw metric values."""
        u_a, u_b = conditional_utilization(m_ab, m_a, m_b)
        return cls(epoch, m_ab, m_a, m_b, u_a, u_b, utilization_delta(u_a, u_b), **kwargs)


@dataclass
class MilesConfig:
    """Knobs of the utilization-driven policy.

    tau: utilization-gap level below which no action is taken.
    mu: factor in (0, 1] applied to the global rate to slow a modality.
    utilization_split: which split's metrics feed the utilization rates.
    """

    tau: float = 0.2
    mu: float = 0.5
    utilization_split: str = "val"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if not 0.0 < self.mu <= 1.0:
            raise ConfigError(f"mu must lie in (0, 1], got {self.mu}")
        if self.utilization_split not in ("train", "val"):
            raise ConfigError(f"utilization split must be 'train' or 'val', got {self.utilization_split!r}")


@dataclass
class Decision:
    """Rates and freeze flags to apply to the next epoch."""

    alpha_a: float
    alpha_b: float
    alpha_ab: float
    action: Action = Action.NONE
    freeze_a: bool = False
    freeze_b: bool = False
    freeze_fusion: bool = False
    stop: bool = False


def miles_rates(
    alpha_ab: float,
    alpha_a: float,
    alpha_b: float,
    u_a: float,
    u_b: float,
    delta: float,
    tau: float,
    mu: float,
) -> tuple[float, float, Action]:
    """One scheduling decision; returns the next (alpha_a, alpha_b, action).

    Branches, in order:
      1. gap within tolerance, or both utilization rates negative (the
         encoders outperform the fused head) -> both rates back to the
         global rate;
      2. exactly one modality under-utilized (negative rate) -> slow the
         other one;
      3. both rates positive -> slow whichever modality contributes more.
    A rate not assigned in branches 2-3 keeps its previous value.
    """
    if not (math.isfinite(u_a) and math.isfinite(u_b) and math.isfinite(delta)):
        raise InputError(f"utilization must be finite, got u_a={u_a} u_b={u_b} delta={delta}")
    if delta <= tau or (u_a < 0.0 and u_b < 0.0):
        return alpha_ab, alpha_ab, Action.RESET
    if u_a > 0.0 and u_b < 0.0:
        return mu * alpha_ab, alpha_b, Action.SCALED_A
    if u_a < 0.0 and u_b > 0.0:
        return alpha_a, mu * alpha_ab, Action.SCALED_B
    if u_a < u_b:
        return alpha_a, mu * alpha_ab, Action.SCALED_B
    return mu * alpha_ab, alpha_b, Action.SCALED_A


class MilesScheduler:
    """Utilization-driven per-modality learning-rate adjustment."""

    def __init__(self, alpha: float, config: MilesConfig | None = None):
        if alpha <= 0:
            raise ConfigError(f"global learning rate must be positive, got {alpha}")
        self.config = config if config is not None else MilesConfig()
        self.alpha_ab = float(alpha)
        self.alpha_a = float(alpha)
        self.alpha_b = float(alpha)
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        self.alpha_a, self.alpha_b, self.last_action = miles_rates(
            self.alpha_ab,
            self.alpha_a,
            self.alpha_b,
            obs.u_a,
            obs.u_b,
            obs.delta,
            self.config.tau,
            self.config.mu,
        )
        return Decision(self.alpha_a, self.alpha_b, self.alpha_ab, self.last_action)


class VanillaScheduler:
    """Both modality rates stay at the global rate for the whole run."""

    def __init__(self, alpha: float):
        if alpha <= 0:
            raise ConfigError(f"global learning rate must be positive, got {alpha}")
        self.alpha_ab = float(alpha)
        self.alpha_a = float(alpha)
        self.alpha_b = float(alpha)
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        return Decision(self.alpha_ab, self.alpha_ab, self.alpha_ab, Action.NONE)


class MslrK:
    """Keep strategy: per-modality rates fixed at configured values."""

    def __init__(self, alpha: float, lr_a: float | None, lr_b: float | None):
        if lr_a is None or lr_b is None or lr_a <= 0 or lr_b <= 0:
            raise ConfigError("the keep strategy needs positive per-modality base rates")
        self.alpha_ab = float(alpha)
        self.alpha_a = float(lr_a)
        self.alpha_b = float(lr_b)
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        return Decision(self.alpha_a, self.alpha_b, self.alpha_ab, Action.NONE)


class MslrS:
    """Smooth strategy: each epoch both rates move a fraction gamma toward their mean.

    Both updates use the pre-step mean, so with gamma = 1 the two rates
    meet at that mean in a single step.
    """

    def __init__(self, alpha: float, gamma: float, lr_a: float | None = None, lr_b: float | None = None):
        if not 0.0 < gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
        self.alpha_ab = float(alpha)
        self.alpha_a = float(lr_a) if lr_a is not None else float(alpha)
        self.alpha_b = float(lr_b) if lr_b is not None else float(alpha)
        if self.alpha_a <= 0 or self.alpha_b <= 0:
            raise ConfigError("per-modality rates must be positive")
        self.gamma = float(gamma)
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        mean = 0.5 * (self.alpha_a + self.alpha_b)
        self.alpha_a += self.gamma * (mean - self.alpha_a)
        self.alpha_b += self.gamma * (mean - self.alpha_b)
        return Decision(self.alpha_a, self.alpha_b, self.alpha_ab, Action.NONE)


class MslrD:
    """Dynamic strategy: windowed multiplicative rate adaptation per modality.

    Once 2*window validation points exist for a modality, the mean of
    the newest window is compared with the mean of the window before it:
    strictly higher multiplies the rate by (1 + factor), strictly lower
    by (1 - factor); ties and shorter histories leave it unchanged.
    """

    def __init__(
        self,
        alpha: float,
        window: int,
        factor: float,
        lr_a: float | None = None,
        lr_b: float | None = None,
    ):
        if window < 1:
            raise ConfigError(f"window must be >= 1, got {window}")
        if not 0.0 < factor < 1.0:
            raise ConfigError(f"factor must lie in (0, 1), got {factor}")
        self.alpha_ab = float(alpha)
        self.alpha_a = float(lr_a) if lr_a is not None else float(alpha)
        self.alpha_b = float(lr_b) if lr_b is not None else float(alpha)
        self.window = int(window)
        self.factor = float(factor)
        self._history_a: list[float] = []
        self._history_b: list[float] = []
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        self._history_a.append(obs.val_m_a)
        self._history_b.append(obs.val_m_b)
        self.alpha_a = self._adapt(self.alpha_a, self._history_a)
        self.alpha_b = self._adapt(self.alpha_b, self._history_b)
        return Decision(self.alpha_a, self.alpha_b, self.alpha_ab, Action.NONE)

    def _adapt(self, lr: float, history: list[float]) -> float:
        w = self.window
        if len(history) < 2 * w:
            return lr
        recent = sum(history[-w:]) / w
        previous = sum(history[-2 * w : -w]) / w
        if recent > previous:
            return lr * (1.0 + self.factor)
        if recent < previous:
            return lr * (1.0 - self.factor)
        return lr


class _ConvergenceTracker:
    """Latches frozen once the metric stops improving for `patience` epochs."""

    def __init__(self, patience: int, tol: float):
        self.patience = patience
        self.tol = tol
        self.best = -math.inf
        self.count = 0
        self.frozen = False

    def update(self, metric: float) -> None:
        if self.frozen:
            return
        if metric > self.best + self.tol:
            self.best = metric
            self.count = 0
        else:
            self.count += 1
            if self.count >= self.patience:
                self.frozen = True


class MsesScheduler:
    """Per-part early stopping: converged parts stop receiving updates.

    All rates stay at the global rate; instead, a modality's parameter
    group is permanently frozen once its validation metric has failed to
    improve its best by more than `tol` for `patience` consecutive
    epochs.  The same rule applies to the fused head's metric, and the
    stop signal fires once all three parts are frozen.
    """

    def __init__(self, alpha: float, patience: int, tol: float = 1e-4):
        if alpha <= 0:
            raise ConfigError(f"global learning rate must be positive, got {alpha}")
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.alpha_ab = float(alpha)
        self.alpha_a = float(alpha)
        self.alpha_b = float(alpha)
        self._track_a = _ConvergenceTracker(patience, tol)
        self._track_b = _ConvergenceTracker(patience, tol)
        self._track_ab = _ConvergenceTracker(patience, tol)
        self.last_action = Action.NONE

    def step(self, obs: EpochObservation) -> Decision:
        self._track_a.update(obs.val_m_a)
        self._track_b.update(obs.val_m_b)
        self._track_ab.update(obs.val_m_ab)
        frozen_a = self._track_a.frozen
        frozen_b = self._track_b.frozen
        frozen_ab = self._track_ab.frozen
        return Decision(
            self.alpha_ab,
            self.alpha_ab,
            self.alpha_ab,
            Action.NONE,
            freeze_a=frozen_a,
            freeze_b=frozen_b,
            freeze_fusion=frozen_ab,
            stop=frozen_a and frozen_b and frozen_ab,
        )
