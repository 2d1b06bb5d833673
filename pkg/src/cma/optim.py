"""Hand-written AdamW with decoupled weight decay, plus the episode loop.

Training follows the few-shot recipe: shuffled mini-batches over the
episode's train set, validation accuracy after every epoch, the best
validation snapshot kept, and early stopping after a fixed number of
epochs without improvement. Every source of randomness is derived from
explicit seeds through counter-based generators, so a (episode, seed,
config) triple determines the trained parameters bitwise.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .fusion import IMAGE_TO_TEXT, TEXT_TO_IMAGE, CrossAttentionParams
from .heads import (
    VARIANT_BRANCHES,
    VARIANTS,
    BranchHead,
    CmaModel,
    MetaHead,
    batch_loss_and_grads,
    branch_feature_dim,
    cma_forward,
    named_params,
)

if TYPE_CHECKING:  # pragma: no cover
    from .datastore import Episode

# Stream tags keep the per-purpose generators disjoint under a shared seed.
_INIT_STREAM = 0x494E4954  # "INIT"
_SHUFFLE_STREAM = 0x53484646  # "SHFF"


def seeded_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, stream, extra)."""
    words = [seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF]
    words.extend(int(e) & 0xFFFFFFFFFFFFFFFF for e in extra)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass
class TrainConfig:
    """Optimizer and loop settings; defaults follow the training recipe
    verbatim (AdamW, lr 1e-3, decay 1e-2, 20 epochs, patience 3, batch 32)."""

    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_seed: int = 0

    def validate(self) -> None:
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not (0.0 <= self.weight_decay < 1.0):
            raise ConfigError(f"weight_decay must be in [0, 1), got {self.weight_decay!r}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be at least 1, got {self.max_epochs!r}")
        if not (1 <= self.patience <= self.max_epochs):
            raise ConfigError(
                f"patience must be in [1, max_epochs], got patience={self.patience!r} "
                f"max_epochs={self.max_epochs!r}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size!r}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise ConfigError(f"{name} must be in [0, 1), got {b!r}")
        if not (self.adam_eps > 0):
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps!r}")


def load_train_config(path: str) -> TrainConfig:
    """Parse a ``key = value`` config file ('#' starts a comment)."""
    spec = {f.name: f.type for f in fields(TrainConfig)}
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in spec:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if spec[key] in ("int", int):
                    values[key] = int(value)
                else:
                    values[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


@dataclass
class AdamWState:
    """First/second moment accumulators for one parameter block."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState,
               cfg: TrainConfig, name: str = "params") -> tuple[np.ndarray, AdamWState]:
    """One decoupled-AdamW update, in place.

    w <- w - lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * w )
    """
    if param.shape != grad.shape:
        raise DimensionError(
            f"adamw_step: param block {name!r} has shape {param.shape}, grad {grad.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    state.m *= cfg.beta1
    state.m += (1.0 - cfg.beta1) * grad
    state.v *= cfg.beta2
    state.v += (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1 ** t)
    v_hat = state.v / (1.0 - cfg.beta2 ** t)
    param -= cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
                                  + cfg.weight_decay * param)
    return param, state


def init_model(d: int, variant: str = "full", seed: int = 0, hidden_dim: int = 0,
               meta_input: str = "probs") -> CmaModel:
    """Deterministically initialized model.

    Head weights are uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] and
    biases zero; cross-attention projections start at identity plus
    uniform noise of scale 1e-2. Draws come from a counter-based
    generator keyed by ``seed`` in a fixed block order, so equal seeds
    give bitwise-identical models.
    """
    if d < 1:
        raise DimensionError(f"model dimension must be positive, got {d}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    rng = seeded_rng(seed, _INIT_STREAM)
    active = VARIANT_BRANCHES[variant]

    attn_mt = attn_tm = None
    if "mt" in active:
        def _proj() -> np.ndarray:
            return np.eye(d) + rng.uniform(-1e-2, 1e-2, size=(d, d))

        attn_mt = CrossAttentionParams(_proj(), _proj(), _proj(), IMAGE_TO_TEXT)
        attn_tm = CrossAttentionParams(_proj(), _proj(), _proj(), TEXT_TO_IMAGE)

    def _linear(fan_in: int, fan_out: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(float(fan_in))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    branches: dict[str, BranchHead] = {}
    for name in active:
        in_dim = branch_feature_dim(name, d)
        if hidden_dim > 0:
            branches[name] = BranchHead(
                weights=_linear(hidden_dim, 2),
                bias=np.zeros(2),
                hidden_weights=_linear(in_dim, hidden_dim),
                hidden_bias=np.zeros(hidden_dim),
            )
        else:
            branches[name] = BranchHead(weights=_linear(in_dim, 2), bias=np.zeros(2))

    meta = None
    if variant != "-meta":
        if meta_input == "probs":
            width = 2 * len(active)
        else:
            width = sum(branch_feature_dim(b, d) for b in active)
        meta = MetaHead(weights=_linear(width, 2), bias=np.zeros(2), z=len(active))

    return CmaModel(
        d=d,
        variant=variant,
        branches=branches,
        meta=meta,
        attn_mt=attn_mt,
        attn_tm=attn_tm,
        meta_input=meta_input,
    )


@dataclass
class TrainHistory:
    """Per-epoch trace of one training run (epochs are 1-based)."""

    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = "completed"

    @property
    def epochs_ran(self) -> int:
        return len(self.train_loss)


def _accuracy_on(model: CmaModel, records, labels) -> float:
    hits = 0
    for rec, y in zip(records, labels):
        pred = int(np.argmax(cma_forward(rec, model).y_hat))
        hits += int(pred == y)
    return hits / float(len(labels))


def train_episode(episode: "Episode", model: CmaModel, cfg: TrainConfig,
                  aux_branch_losses: bool = False) -> tuple[CmaModel, TrainHistory]:
    """Train one episode, returning the best-validation snapshot.

    The input model is left untouched; a copy is trained. When the
    episode has no validation split the last epoch's parameters are
    returned instead of a validation-selected snapshot.
    """
    cfg.validate()
    train_records = episode.train_records()
    if not train_records:
        raise DimensionError("train_episode: episode has an empty train set")
    if episode.store.dimension != model.d:
        raise DimensionError(
            f"train_episode: store dimension {episode.store.dimension} != model dimension {model.d}"
        )
    train_labels = [r.label for r in train_records]
    val_records = episode.val_records()
    val_labels = [r.label for r in val_records]

    model = copy.deepcopy(model)
    states = {name: AdamWState.like(p) for name, p in named_params(model)}
    rng = seeded_rng(episode.seed, _SHUFFLE_STREAM)

    history = TrainHistory()
    n = len(train_records)
    batch = min(cfg.batch_size, n)
    best_acc = -1.0
    best_snapshot = copy.deepcopy(model)
    best_epoch = 0
    epochs_since_improve = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            recs = [train_records[i] for i in idx]
            labs = [train_labels[i] for i in idx]
            loss, grads = batch_loss_and_grads(recs, labs, model, aux_branch_losses)
            epoch_loss += loss * len(idx)
            for name, p in named_params(model):
                adamw_step(p, grads[name], states[name], cfg, name)
        history.train_loss.append(epoch_loss / n)

        if val_records:
            vacc = _accuracy_on(model, val_records, val_labels)
            history.val_accuracy.append(vacc)
            if vacc > best_acc:
                best_acc = vacc
                best_snapshot = copy.deepcopy(model)
                best_epoch = epoch
                epochs_since_improve = 0
            else:
                epochs_since_improve += 1
            if epochs_since_improve >= cfg.patience:
                history.stop_reason = "early-stopped"
                break

    if val_records:
        history.best_epoch = best_epoch
        return best_snapshot, history
    history.best_epoch = history.epochs_ran
    return model, history
