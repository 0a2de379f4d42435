"""Two-encoder joint-fusion classifier with auxiliary unimodal heads.

Each modality runs through its own dense+ReLU encoder.  The two latent
matrices are fused (column concatenation or elementwise sum) and a
single linear layer maps the fusion to multimodal logits.  A linear
probe on each latent produces unimodal logits, and the training loss is
the plain, equally weighted sum of the three cross-entropy terms: every
encoder therefore receives direct supervision, and its contribution to
the fused prediction can be measured each epoch.

Parameters split into three groups: encoder A plus its probe, encoder B
plus its probe, and the fusion head.  The split is exhaustive and
disjoint, which is what lets a scheduler steer each modality's learning
rate independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, NumericError
from .optim import Group, ParamGroup
from .rng import make_rng
from .tensor import (
    GradientTape,
    Tensor,
    add,
    concat_cols,
    dense_forward,
    relu,
    softmax_cross_entropy,
)


class FusionKind(str, Enum):
    CONCAT = "concat"
    SUM = "sum"


@dataclass
class ModelConfig:
    d_a: int
    d_b: int
    classes: int
    hidden_a: tuple[int, ...] = (32,)
    hidden_b: tuple[int, ...] = (32,)
    latent_a: int = 16
    latent_b: int = 16
    fusion: FusionKind = FusionKind.CONCAT
    seed: int = 0

    def __post_init__(self):
        self.fusion = FusionKind(self.fusion)
        self.hidden_a = tuple(int(h) for h in self.hidden_a)
        self.hidden_b = tuple(int(h) for h in self.hidden_b)
        dims = (self.d_a, self.d_b, self.latent_a, self.latent_b, *self.hidden_a, *self.hidden_b)
        if any(d < 1 for d in dims):
            raise ConfigError(f"all dimensions must be >= 1, got {dims}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.fusion is FusionKind.SUM and self.latent_a != self.latent_b:
            raise ConfigError(
                f"sum fusion needs equal latent dims, got {self.latent_a} and {self.latent_b}"
            )


def fuse(z_a: Tensor, z_b: Tensor, kind: FusionKind, tape: GradientTape | None = None) -> Tensor:
    """Combine two latent matrices: concat puts z_a's columns first, sum adds them."""
    if FusionKind(kind) is FusionKind.CONCAT:
        return concat_cols(z_a, z_b, tape)
    if z_a.data.shape[1] != z_b.data.shape[1]:
        raise ConfigError(
            f"sum fusion needs equal latent widths, got {z_a.data.shape[1]} and {z_b.data.shape[1]}"
        )
    return add(z_a, z_b, tape)


@dataclass
class PredictionBundle:
    logits_ab: Tensor
    logits_a: Tensor
    logits_b: Tensor

    def __post_init__(self):
        shapes = {t.data.shape for t in (self.logits_ab, self.logits_a, self.logits_b)}
        if len(shapes) != 1:
            raise ConfigError(f"logit shapes disagree: {sorted(shapes)}")


@dataclass
class LossBreakdown:
    total: Tensor
    loss_ab: float
    loss_a: float
    loss_b: float


Layer = tuple[Tensor, Tensor]  # (weights, bias)


class MultimodalModel:
    """Encoders, probe heads, and fusion head, with their parameter-group split."""

    def __init__(
        self,
        config: ModelConfig,
        encoder_a: list[Layer],
        encoder_b: list[Layer],
        head_a: Layer,
        head_b: Layer,
        head_ab: Layer,
    ):
        self.config = config
        self.encoder_a = encoder_a
        self.encoder_b = encoder_b
        self.head_a = head_a
        self.head_b = head_b
        self.head_ab = head_ab
        self.groups = {
            Group.MODALITY_A: ParamGroup(Group.MODALITY_A, _flatten(encoder_a) + list(head_a)),
            Group.MODALITY_B: ParamGroup(Group.MODALITY_B, _flatten(encoder_b) + list(head_b)),
            Group.FUSION: ParamGroup(Group.FUSION, list(head_ab)),
        }

    def parameters(self) -> list[Tensor]:
        return [p for group in self.groups.values() for p in group.parameters]

    def forward(self, batch_a: Tensor, batch_b: Tensor, tape: GradientTape | None = None) -> PredictionBundle:
        """Run both encoders, the probes, and the fused head on one tape."""
        z_a = _encode(self.encoder_a, batch_a, tape)
        z_b = _encode(self.encoder_b, batch_b, tape)
        logits_a = dense_forward(z_a, self.head_a[0], self.head_a[1], tape)
        logits_b = dense_forward(z_b, self.head_b[0], self.head_b[1], tape)
        fused = fuse(z_a, z_b, self.config.fusion, tape)
        logits_ab = dense_forward(fused, self.head_ab[0], self.head_ab[1], tape)
        for t in (logits_ab, logits_a, logits_b):
            if not np.isfinite(t.data).all():
                raise NumericError("non-finite logits in forward pass")
        return PredictionBundle(logits_ab, logits_a, logits_b)


def joint_loss(bundle: PredictionBundle, labels, tape: GradientTape | None = None) -> LossBreakdown:
    """Equally weighted sum of the fused and the two unimodal loss terms.

    The total is the exact float sum ``(term_ab + term_a) + term_b``.
    """
    term_ab = softmax_cross_entropy(bundle.logits_ab, labels, tape)
    term_a = softmax_cross_entropy(bundle.logits_a, labels, tape)
    term_b = softmax_cross_entropy(bundle.logits_b, labels, tape)
    total = add(add(term_ab, term_a, tape), term_b, tape)
    return LossBreakdown(total, float(term_ab.data), float(term_a.data), float(term_b.data))


def init_parameters(config: ModelConfig) -> MultimodalModel:
    """Build a model with uniform Glorot weights and zero biases.

    Layers are drawn from a PCG64 stream seeded with config.seed, in a
    fixed order (encoder A, probe A, encoder B, probe B, fusion head),
    so the same seed always yields the same parameters.
    """
    rng = make_rng(config.seed)
    encoder_a = _stack(rng, (config.d_a, *config.hidden_a, config.latent_a))
    head_a = _glorot(rng, config.latent_a, config.classes)
    encoder_b = _stack(rng, (config.d_b, *config.hidden_b, config.latent_b))
    head_b = _glorot(rng, config.latent_b, config.classes)
    if config.fusion is FusionKind.CONCAT:
        fused_dim = config.latent_a + config.latent_b
    else:
        fused_dim = config.latent_a
    head_ab = _glorot(rng, fused_dim, config.classes)
    return MultimodalModel(config, encoder_a, encoder_b, head_a, head_b, head_ab)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    weights = Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    bias = Tensor(np.zeros(fan_out))
    return weights, bias


def _stack(rng: np.random.Generator, dims: tuple[int, ...]) -> list[Layer]:
    return [_glorot(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def _encode(layers: list[Layer], x: Tensor, tape: GradientTape | None) -> Tensor:
    z = x
    for weights, bias in layers:
        z = relu(dense_forward(z, weights, bias, tape), tape)
    return z


def _flatten(layers: list[Layer]) -> list[Tensor]:
    return [t for layer in layers for t in layer]
