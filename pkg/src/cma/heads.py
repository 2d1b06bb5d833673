"""Branch probes, the meta-linear ensemble, the loss, and exact gradients.

Each active feature branch owns a linear probe producing a 2-class
probability vector. The meta head consumes the concatenation of those
probabilities (in the fixed branch order) and emits the final
prediction. Training minimizes binary cross-entropy on the meta output;
gradients are derived analytically end to end, including through both
cross-attention directions, and are verified against central finite
differences in the test suite.

Checkpoint files use the same tensor encoding as the feature store:
32-bit little-endian IEEE-754 payloads behind explicit shape headers.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import (
    BadMagicError,
    DimensionError,
    StoreFormatError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .fusion import (
    IMAGE_TO_TEXT,
    TEXT_TO_IMAGE,
    AttentionCache,
    CrossAttentionParams,
    attention_forward,
    concat_normalized,
    pooled_backward,
)
from .numerics import affine, mean_rows, softmax

if TYPE_CHECKING:  # pragma: no cover
    from .datastore import FeatureRecord

# Fixed branch order everywhere: text, image, concat, image->text, text->image.
BRANCH_ORDER = ("t", "m", "c", "mt", "tm")

VARIANTS = ("full", "-cross", "-meta", "-img", "-txt")

# Active branch set per ablation variant.
VARIANT_BRANCHES = {
    "full": ("t", "m", "c", "mt", "tm"),
    "-cross": ("t", "m", "c"),
    "-meta": ("c",),
    "-img": ("t",),
    "-txt": ("m",),
}

META_INPUT_MODES = ("probs", "features")

# Probabilities are clamped to [LOG_CLAMP, 1 - LOG_CLAMP] before logarithms
# so a confidently wrong prediction yields a large but finite loss.
LOG_CLAMP = 1e-12

_CHECKPOINT_MAGIC = b"CMAM"
_CHECKPOINT_VERSION = 1


def branch_feature_dim(name: str, d: int) -> int:
    """Input width of a branch head: d everywhere except 2d for the concat."""
    return 2 * d if name == "c" else d


@dataclass
class BranchHead:
    """One linear probe. ``hidden_weights`` enables the optional one-hidden-layer form."""

    weights: np.ndarray  # (in_dim, 2), or (hidden, 2) when a hidden layer is present
    bias: np.ndarray  # (2,)
    hidden_weights: np.ndarray | None = None  # (in_dim, hidden)
    hidden_bias: np.ndarray | None = None  # (hidden,)

    @property
    def in_dim(self) -> int:
        if self.hidden_weights is not None:
            return self.hidden_weights.shape[0]
        return self.weights.shape[0]


@dataclass
class MetaHead:
    """Final linear layer over the concatenated branch probabilities."""

    weights: np.ndarray  # (2z, 2) in probs mode; (sum feature dims, 2) in features mode
    bias: np.ndarray  # (2,)
    z: int  # number of active branches


@dataclass
class CmaModel:
    """All trainable parameters plus the ablation variant tag.

    ``meta_input`` selects what the meta head consumes: the default
    "probs" concatenates the per-branch probability vectors; the
    documented non-default "features" concatenates the raw branch
    features instead (in which case branch heads receive gradient only
    from the optional auxiliary losses).
    """

    d: int
    variant: str
    branches: dict[str, BranchHead]
    meta: MetaHead | None
    attn_mt: CrossAttentionParams | None = None
    attn_tm: CrossAttentionParams | None = None
    meta_input: str = "probs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.meta_input not in META_INPUT_MODES:
            raise ValueError(f"unknown meta_input {self.meta_input!r}")
        expected = VARIANT_BRANCHES[self.variant]
        if tuple(sorted(self.branches)) != tuple(sorted(expected)):
            raise ValueError(
                f"variant {self.variant} requires branches {expected}, got {tuple(self.branches)}"
            )
        if (self.variant == "-meta") != (self.meta is None):
            raise ValueError("meta head must be present exactly when variant != '-meta'")
        needs_attention = "mt" in expected
        if needs_attention and (self.attn_mt is None or self.attn_tm is None):
            raise ValueError(f"variant {self.variant} requires both attention directions")
        if not needs_attention and (self.attn_mt is not None or self.attn_tm is not None):
            raise ValueError(f"variant {self.variant} must not carry attention parameters")
        for name, head in self.branches.items():
            want = branch_feature_dim(name, self.d)
            if head.in_dim != want:
                raise DimensionError(
                    f"branch {name!r} head expects width {head.in_dim}, feature is {want}"
                )

    @property
    def active_branches(self) -> tuple[str, ...]:
        return VARIANT_BRANCHES[self.variant]

    def meta_width(self) -> int:
        """Input width of the meta head for this model's configuration."""
        if self.meta_input == "probs":
            return 2 * len(self.active_branches)
        return sum(branch_feature_dim(b, self.d) for b in self.active_branches)


@dataclass
class Prediction:
    """Final probabilities plus the per-branch probabilities that fed them."""

    y_hat: np.ndarray
    branch_probs: list[np.ndarray]


def branch_forward(feature: np.ndarray, head: BranchHead) -> np.ndarray:
    """softmax(affine(feature)) with the optional hidden ReLU layer."""
    x = np.asarray(feature, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != head.in_dim:
        raise DimensionError(
            f"branch_forward: feature has shape {x.shape}, head expects ({head.in_dim},)"
        )
    if head.hidden_weights is not None:
        x = np.maximum(affine(x, head.hidden_weights, head.hidden_bias), 0.0)
    return softmax(affine(x, head.weights, head.bias))


def meta_forward(branch_probs: Iterable[np.ndarray], head: MetaHead) -> np.ndarray:
    """softmax over the affine map of the concatenated probability vectors."""
    probs = [np.asarray(p, dtype=np.float64) for p in branch_probs]
    if len(probs) != head.z:
        raise DimensionError(
            f"meta_forward: got {len(probs)} branch probability vectors, expected {head.z}"
        )
    flat = np.concatenate(probs)
    return softmax(affine(flat, head.weights, head.bias))


def cross_entropy(y: int, y_hat: np.ndarray) -> float:
    """Binary cross-entropy against the class-1 probability, clamped before the log."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    p = np.asarray(y_hat, dtype=np.float64)
    if p.shape != (2,):
        raise DimensionError(f"cross_entropy: expected a 2-class probability vector, got {p.shape}")
    p1 = float(p[1])
    # Each class probability is clamped separately before its logarithm, so a
    # saturated prediction yields the exact -ln(1e-12) rather than a value
    # polluted by 1 - (1 - eps) cancellation.
    c1 = min(max(p1, LOG_CLAMP), 1.0 - LOG_CLAMP)
    c0 = min(max(1.0 - p1, LOG_CLAMP), 1.0 - LOG_CLAMP)
    return -(y * math.log(c1) + (1 - y) * math.log(c0))


# ---------------------------------------------------------------------------
# Forward with cached intermediates, and the exact backward pass.
# ---------------------------------------------------------------------------


@dataclass
class _BranchCache:
    feature: np.ndarray
    hidden_pre: np.ndarray | None  # pre-ReLU activations, hidden mode only
    hidden_out: np.ndarray | None
    probs: np.ndarray


@dataclass
class _ForwardCache:
    features: dict[str, np.ndarray]
    attn: dict[str, AttentionCache] = field(default_factory=dict)
    branch: dict[str, _BranchCache] = field(default_factory=dict)
    meta_in: np.ndarray | None = None
    y_hat: np.ndarray | None = None


def _compute_features(record: "FeatureRecord", model: CmaModel) -> _ForwardCache:
    """Build only the features the variant needs; unused modalities stay untouched."""
    text = np.asarray(record.text_tokens, dtype=np.float64)
    image = np.asarray(record.image_tokens, dtype=np.float64)
    active = set(model.active_branches)
    if ("t" in active or "c" in active) and text.shape[1] != model.d:
        raise DimensionError(
            f"record {record.id!r}: text width {text.shape[1]} != model dimension {model.d}"
        )
    if ("m" in active or "c" in active) and image.shape[1] != model.d:
        raise DimensionError(
            f"record {record.id!r}: image width {image.shape[1]} != model dimension {model.d}"
        )
    cache = _ForwardCache(features={})
    if "t" in active or "c" in active:
        cache.features["t"] = mean_rows(text)
    if "m" in active or "c" in active:
        cache.features["m"] = mean_rows(image)
    if "c" in active:
        cache.features["c"] = concat_normalized(cache.features["t"], cache.features["m"])
    if "mt" in active:
        ac = attention_forward(image, text, model.attn_mt)
        cache.attn["mt"] = ac
        cache.features["mt"] = mean_rows(ac.out)
    if "tm" in active:
        ac = attention_forward(text, image, model.attn_tm)
        cache.attn["tm"] = ac
        cache.features["tm"] = mean_rows(ac.out)
    return cache


def _forward_cached(record: "FeatureRecord", model: CmaModel) -> _ForwardCache:
    cache = _compute_features(record, model)
    for name in model.active_branches:
        head = model.branches[name]
        x = cache.features[name]
        hidden_pre = hidden_out = None
        if head.hidden_weights is not None:
            hidden_pre = affine(x, head.hidden_weights, head.hidden_bias)
            hidden_out = np.maximum(hidden_pre, 0.0)
            logits = affine(hidden_out, head.weights, head.bias)
        else:
            logits = affine(x, head.weights, head.bias)
        cache.branch[name] = _BranchCache(
            feature=x, hidden_pre=hidden_pre, hidden_out=hidden_out, probs=softmax(logits)
        )
    if model.variant == "-meta":
        cache.y_hat = cache.branch["c"].probs
        return cache
    if model.meta_input == "probs":
        cache.meta_in = np.concatenate(
            [cache.branch[b].probs for b in model.active_branches]
        )
    else:
        cache.meta_in = np.concatenate(
            [cache.features[b] for b in model.active_branches]
        )
    cache.y_hat = softmax(affine(cache.meta_in, model.meta.weights, model.meta.bias))
    return cache


def cma_forward(record: "FeatureRecord", model: CmaModel) -> Prediction:
    """Full forward pass: branch probabilities plus the final prediction."""
    cache = _forward_cached(record, model)
    return Prediction(
        y_hat=cache.y_hat,
        branch_probs=[cache.branch[b].probs for b in model.active_branches],
    )


def _ce_grad_p1(y: int, p1: float) -> float:
    """d(cross_entropy)/d(p1); exactly zero where the clamps are active."""
    grad = 0.0
    if y == 1:
        if LOG_CLAMP <= p1 <= 1.0 - LOG_CLAMP:
            grad -= 1.0 / p1
    else:
        q = 1.0 - p1
        if LOG_CLAMP <= q <= 1.0 - LOG_CLAMP:
            grad += 1.0 / q
    return grad


def _softmax_vjp(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. softmax outputs."""
    return probs * (d_probs - float(np.dot(d_probs, probs)))


def _ce_logits_grad(y: int, probs: np.ndarray) -> np.ndarray:
    """Gradient of the clamped cross-entropy w.r.t. the logits behind ``probs``."""
    d_probs = np.array([0.0, _ce_grad_p1(y, float(probs[1]))])
    return _softmax_vjp(probs, d_probs)


def cma_loss(record: "FeatureRecord", label: int, model: CmaModel,
             aux_branch_losses: bool = False) -> float:
    """Scalar training loss for one record.

    The meta cross-entropy alone by default; with ``aux_branch_losses``
    every branch adds its own equally weighted cross-entropy term.
    """
    cache = _forward_cached(record, model)
    loss = cross_entropy(label, cache.y_hat)
    if aux_branch_losses and model.variant != "-meta":
        for name in model.active_branches:
            loss += cross_entropy(label, cache.branch[name].probs)
    return loss


def _branch_backward(head: BranchHead, bc: _BranchCache, d_logits: np.ndarray,
                     grads: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    """Accumulate head gradients, return the gradient w.r.t. the branch feature."""
    if head.hidden_weights is not None:
        grads[f"{prefix}.weights"] += np.outer(bc.hidden_out, d_logits)
        grads[f"{prefix}.bias"] += d_logits
        d_hidden = head.weights @ d_logits
        d_pre = d_hidden * (bc.hidden_pre > 0.0)
        grads[f"{prefix}.hidden_weights"] += np.outer(bc.feature, d_pre)
        grads[f"{prefix}.hidden_bias"] += d_pre
        return head.hidden_weights @ d_pre
    grads[f"{prefix}.weights"] += np.outer(bc.feature, d_logits)
    grads[f"{prefix}.bias"] += d_logits
    return head.weights @ d_logits


def cma_backward(record: "FeatureRecord", label: int, model: CmaModel,
                 aux_branch_losses: bool = False) -> dict[str, np.ndarray]:
    """Analytic gradients of ``cma_loss`` for every trainable parameter.

    Gradient flows through the branch probabilities into both
    cross-attention directions. Keys match :func:`named_params`.
    """
    loss, grads = _loss_and_grads(record, label, model, aux_branch_losses)
    return grads


def _loss_and_grads(record: "FeatureRecord", label: int, model: CmaModel,
                    aux_branch_losses: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    cache = _forward_cached(record, model)
    grads = {name: np.zeros_like(p) for name, p in named_params(model)}
    loss = cross_entropy(label, cache.y_hat)
    d_feature: dict[str, np.ndarray] = {}

    if model.variant == "-meta":
        d_logits = _ce_logits_grad(label, cache.y_hat)
        d_feature["c"] = _branch_backward(
            model.branches["c"], cache.branch["c"], d_logits, grads, "branch_c"
        )
    else:
        d_meta_logits = _ce_logits_grad(label, cache.y_hat)
        grads["meta.weights"] += np.outer(cache.meta_in, d_meta_logits)
        grads["meta.bias"] += d_meta_logits
        d_meta_in = model.meta.weights @ d_meta_logits

        # Per-branch gradient w.r.t. the meta input slice, plus aux CE terms.
        offset = 0
        for name in model.active_branches:
            bc = cache.branch[name]
            if model.meta_input == "probs":
                d_probs = d_meta_in[offset:offset + 2].copy()
                offset += 2
            else:
                width = branch_feature_dim(name, model.d)
                d_feature[name] = d_meta_in[offset:offset + width].copy()
                offset += width
                d_probs = np.zeros(2)
            if aux_branch_losses:
                loss += cross_entropy(label, bc.probs)
                d_probs[1] += _ce_grad_p1(label, float(bc.probs[1]))
            if np.any(d_probs):
                d_logits = _softmax_vjp(bc.probs, d_probs)
                d_feat = _branch_backward(
                    model.branches[name], bc, d_logits, grads, f"branch_{name}"
                )
                if name in d_feature:
                    d_feature[name] = d_feature[name] + d_feat
                else:
                    d_feature[name] = d_feat

    # Only the cross-attended features have trainable parameters upstream.
    if "mt" in d_feature and model.attn_mt is not None:
        for key, g in pooled_backward(cache.attn["mt"], model.attn_mt, d_feature["mt"]).items():
            grads[f"attn_mt.{key}"] += g
    if "tm" in d_feature and model.attn_tm is not None:
        for key, g in pooled_backward(cache.attn["tm"], model.attn_tm, d_feature["tm"]).items():
            grads[f"attn_tm.{key}"] += g
    return loss, grads


def batch_loss_and_grads(records, labels, model: CmaModel,
                         aux_branch_losses: bool = False) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and mean gradients over a mini-batch."""
    if len(records) == 0 or len(records) != len(labels):
        raise DimensionError(
            f"batch: got {len(records)} records and {len(labels)} labels"
        )
    total = 0.0
    acc: dict[str, np.ndarray] | None = None
    for rec, y in zip(records, labels):
        loss, grads = _loss_and_grads(rec, y, model, aux_branch_losses)
        total += loss
        if acc is None:
            acc = grads
        else:
            for k in acc:
                acc[k] += grads[k]
    n = float(len(records))
    for k in acc:
        acc[k] /= n
    return total / n, acc


# ---------------------------------------------------------------------------
# Parameter traversal (fixed order shared by the optimizer and checkpoints).
# ---------------------------------------------------------------------------


def named_params(model: CmaModel) -> list[tuple[str, np.ndarray]]:
    """All trainable arrays in a fixed, documented order."""
    out: list[tuple[str, np.ndarray]] = []
    for tag, attn in (("attn_mt", model.attn_mt), ("attn_tm", model.attn_tm)):
        if attn is not None:
            out.append((f"{tag}.w_q", attn.w_q))
            out.append((f"{tag}.w_k", attn.w_k))
            out.append((f"{tag}.w_v", attn.w_v))
    for name in model.active_branches:
        head = model.branches[name]
        if head.hidden_weights is not None:
            out.append((f"branch_{name}.hidden_weights", head.hidden_weights))
            out.append((f"branch_{name}.hidden_bias", head.hidden_bias))
        out.append((f"branch_{name}.weights", head.weights))
        out.append((f"branch_{name}.bias", head.bias))
    if model.meta is not None:
        out.append(("meta.weights", model.meta.weights))
        out.append(("meta.bias", model.meta.bias))
    return out


def param_count(model: CmaModel) -> int:
    return sum(p.size for _, p in named_params(model))


def get_flat_params(model: CmaModel) -> np.ndarray:
    """Concatenate every parameter into one float64 vector."""
    return np.concatenate([p.ravel() for _, p in named_params(model)])


def set_flat_params(model: CmaModel, flat: np.ndarray) -> None:
    """Write a flat vector back into the model's arrays, in place."""
    flat = np.asarray(flat, dtype=np.float64)
    offset = 0
    for name, p in named_params(model):
        n = p.size
        if offset + n > flat.size:
            raise DimensionError("set_flat_params: vector too short")
        p[...] = flat[offset:offset + n].reshape(p.shape)
        offset += n
    if offset != flat.size:
        raise DimensionError(
            f"set_flat_params: vector has {flat.size} entries, model needs {offset}"
        )


def flat_grads(model: CmaModel, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name, _ in named_params(model)])


# ---------------------------------------------------------------------------
# Checkpoint serialization (CMAM container).
# ---------------------------------------------------------------------------


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def save_model(model: CmaModel, path: str) -> None:
    """Write a versioned checkpoint; tensors as float32 LE with shape headers."""
    params = named_params(model)
    hidden = 0
    for name in model.active_branches:
        hw = model.branches[name].hidden_weights
        if hw is not None:
            hidden = hw.shape[1]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", _CHECKPOINT_VERSION))
        _write_str(fh, model.variant)
        _write_str(fh, model.meta_input)
        fh.write(struct.pack("<III", model.d, hidden, len(params)))
        for name, p in params:
            mat = p if p.ndim == 2 else p.reshape(1, -1)
            _write_str(fh, name)
            fh.write(struct.pack("<II", mat.shape[0], mat.shape[1]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int, context: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"{self.what}: file ends at byte {len(self.data)} while reading "
                f"{context} (needed {n} bytes at offset {self.pos})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, context: str) -> int:
        return struct.unpack("<I", self.take(4, context))[0]

    def text(self, context: str) -> str:
        n = self.u32(f"{context} length")
        return self.take(n, context).decode("utf-8")


def load_model(path: str) -> CmaModel:
    """Read a CMAM checkpoint, widening tensors to float64."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, f"checkpoint {path!r}")
    magic = r.take(4, "magic")
    if magic != _CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path!r}: expected magic {_CHECKPOINT_MAGIC!r}, found {magic!r}")
    version = r.u32("version")
    if version != _CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path!r}: unsupported checkpoint version {version}")
    variant = r.text("variant")
    meta_input = r.text("meta_input")
    d = r.u32("dimension")
    hidden = r.u32("hidden width")
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        name = r.text(f"tensor {i} name")
        rows = r.u32(f"tensor {name!r} rows")
        cols = r.u32(f"tensor {name!r} cols")
        raw = r.take(4 * rows * cols, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)
    if r.pos != len(data):
        raise StoreFormatError(f"{path!r}: {len(data) - r.pos} trailing bytes after tensors")
    model = _empty_model(d, variant, hidden_dim=hidden, meta_input=meta_input)
    for name, p in named_params(model):
        if name not in tensors:
            raise StoreFormatError(f"{path!r}: checkpoint is missing tensor {name!r}")
        mat = tensors.pop(name)
        want = p.shape if p.ndim == 2 else (1, p.shape[0])
        if mat.shape != want:
            raise DimensionError(
                f"{path!r}: tensor {name!r} has shape {mat.shape}, expected {want}"
            )
        p[...] = mat.reshape(p.shape)
    if tensors:
        raise StoreFormatError(f"{path!r}: unexpected tensors {sorted(tensors)}")
    return model


def _empty_model(d: int, variant: str, hidden_dim: int = 0,
                 meta_input: str = "probs") -> CmaModel:
    """Zero-initialized model with the right structure for a variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    active = VARIANT_BRANCHES[variant]
    branches = {}
    for name in active:
        in_dim = branch_feature_dim(name, d)
        if hidden_dim > 0:
            branches[name] = BranchHead(
                weights=np.zeros((hidden_dim, 2)),
                bias=np.zeros(2),
                hidden_weights=np.zeros((in_dim, hidden_dim)),
                hidden_bias=np.zeros(hidden_dim),
            )
        else:
            branches[name] = BranchHead(weights=np.zeros((in_dim, 2)), bias=np.zeros(2))
    attn_mt = attn_tm = None
    if "mt" in active:
        attn_mt = CrossAttentionParams(
            np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)), IMAGE_TO_TEXT
        )
        attn_tm = CrossAttentionParams(
            np.zeros((d, d)), np.zeros((d, d)), np.zeros((d, d)), TEXT_TO_IMAGE
        )
    meta = None
    if variant != "-meta":
        if meta_input == "probs":
            width = 2 * len(active)
        else:
            width = sum(branch_feature_dim(b, d) for b in active)
        meta = MetaHead(weights=np.zeros((width, 2)), bias=np.zeros(2), z=len(active))
    return CmaModel(
        d=d,
        variant=variant,
        branches=branches,
        meta=meta,
        attn_mt=attn_mt,
        attn_tm=attn_tm,
        meta_input=meta_input,
    )
