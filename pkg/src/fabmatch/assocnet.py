"""Embedding distances, contrastive losses, auxiliary classification, max
fusion, and the four joint architectures built from them.

Architectures:
  crossmodal  three branches (depth, color, touch), three-way contrastive loss
  auxiliary   crossmodal plus one cluster-classification head per branch
  multiinput  auxiliary with the touch embedding fused from three presses
  snn2        two branches with a pairwise contrastive loss; branches of the
              same modality share one encoder (a Siamese pair)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataplane import Modality, Observation
from .numcore import Encoder, EncoderGrads, EncoderSpec, encoder_backward_batch, encoder_forward_batch, encoder_init
from .seeding import TAG_INIT, rng_from

CROSS_MODAL = "crossmodal"
AUXILIARY = "auxiliary"
MULTI_INPUT = "multiinput"
SNN2 = "snn2"
ARCHITECTURES = (CROSS_MODAL, AUXILIARY, MULTI_INPUT, SNN2)

MULTI_PRESS_COUNT = 3


def pair_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Euclidean distance between two embeddings."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    return float(np.linalg.norm(e1 - e2))


def d3_distance(e1: np.ndarray, e2: np.ndarray, e3: np.ndarray) -> float:
    """Sum of the three pairwise Euclidean distances."""
    return pair_distance(e1, e2) + pair_distance(e2, e3) + pair_distance(e3, e1)


def contrastive_loss3(d3: float, y: int, m: float) -> tuple[float, float]:
    """Margin contrastive loss on the three-way distance and its derivative.

    y = 0 (same fabric): 0.5 * d3^2, derivative d3.
    y = 1 (different):   0.5 * max(0, m - d3)^2, derivative -max(0, m - d3).
    """
    if m <= 0:
        raise ValueError("margin must be positive")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    if d3 < 0:
        raise ValueError("distance must be non-negative")
    if y == 0:
        return 0.5 * d3 * d3, d3
    hinge = max(0.0, m - d3)
    return 0.5 * hinge * hinge, -hinge


def contrastive_loss2(d: float, y: int, m: float) -> tuple[float, float]:
    """Pairwise form of the contrastive loss; identical formula on d."""
    return contrastive_loss3(d, y, m)


@dataclass
class ClassifierHead:
    """Affine map from an embedding to cluster logits."""

    weight: np.ndarray  # (n_classes, embedding_dim)
    bias: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.weight.copy(), self.bias.copy())

    def parameter_arrays(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def set_parameter_arrays(self, arrays: list[np.ndarray]) -> None:
        weight, bias = arrays
        if weight.shape != self.weight.shape or bias.shape != self.bias.shape:
            raise ValueError("head parameter shape mismatch")
        self.weight = weight
        self.bias = bias


def head_init(embedding_dim: int, n_classes: int, seed: int) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 1.0 / np.sqrt(embedding_dim), size=(n_classes, embedding_dim))
    return ClassifierHead(weight, np.zeros(n_classes))


def _softmax_ce_batch(head: ClassifierHead, emb: np.ndarray, labels: np.ndarray):
    """Stabilized softmax cross-entropy over a batch.

    Returns per-sample losses and gradients (summed over batch for the head,
    per-sample for the embeddings).
    """
    logits = kernels.affine_forward(emb, head.weight, head.bias)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    log_z = np.log(exp.sum(axis=1))
    idx = np.arange(len(labels))
    losses = log_z - shifted[idx, labels]
    probs = exp / exp.sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[idx, labels] -= 1.0
    d_emb = d_logits @ head.weight
    d_weight = d_logits.T @ emb
    d_bias = d_logits.sum(axis=0)
    return losses, logits, d_emb, [d_weight, d_bias]


def classify_cluster(head: ClassifierHead, e: np.ndarray, label: int):
    """Cross-entropy cluster classification of one embedding.

    Returns (loss, logits, gradients) where gradients is a dict with
    d_weight, d_bias and d_embedding.
    """
    if not 0 <= label < head.n_classes:
        raise ValueError(f"label {label} outside [0, {head.n_classes})")
    e = np.asarray(e, dtype=np.float64)
    losses, logits, d_emb, (d_w, d_b) = _softmax_ce_batch(
        head, np.ascontiguousarray(e[None, :]), np.array([label])
    )
    return float(losses[0]), logits[0], {"d_weight": d_w, "d_bias": d_b, "d_embedding": d_emb[0]}


def fuse_max(embeddings: list[np.ndarray]) -> np.ndarray:
    """Component-wise maximum over two or more embeddings."""
    if len(embeddings) < 2:
        raise ValueError("fusion needs at least two embeddings")
    stack = np.stack([np.asarray(e, dtype=np.float64) for e in embeddings])
    if any(e.shape != stack[0].shape for e in stack):
        raise ValueError("embedding lengths differ")
    return stack.max(axis=0)


@dataclass
class TripletGroup:
    """One training example across branches.

    x3 is a single touch observation, or a tuple of three for multiinput.
    label is 0 when every branch observation comes from the same fabric.
    """

    x1: Observation | None
    x2: Observation | None
    x3: Observation | tuple[Observation, ...] | None
    label: int
    cluster_labels: tuple[int, ...] = ()

    def branch_payloads(self) -> list:
        return [p for p in (self.x1, self.x2, self.x3) if p is not None]


class JointModel:
    """Per-branch encoders plus optional per-branch classifier heads."""

    def __init__(self, architecture: str, branch_modalities: tuple[Modality, ...],
                 encoders: list[Encoder], heads: list[ClassifierHead] | None,
                 margin: float = 2.0, aux_weight: float = 1.0):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        expected_branches = 2 if architecture == SNN2 else 3
        if len(branch_modalities) != expected_branches or len(encoders) != expected_branches:
            raise ValueError(f"{architecture} needs {expected_branches} branches")
        dims = {enc.output_dim for enc in encoders}
        if len(dims) != 1:
            raise ValueError("branch embedding dims differ")
        if heads is not None:
            for head in heads:
                if head.weight.shape[1] != encoders[0].output_dim:
                    raise ValueError("head input dim != embedding dim")
        if margin <= 0:
            raise ValueError("margin must be positive")
        self.architecture = architecture
        self.branch_modalities = tuple(branch_modalities)
        self.encoders = encoders
        self.heads = heads
        self.margin = float(margin)
        self.aux_weight = float(aux_weight)

    @property
    def embedding_dim(self) -> int:
        return self.encoders[0].output_dim

    @property
    def n_branches(self) -> int:
        return len(self.encoders)

    @property
    def uses_heads(self) -> bool:
        return self.heads is not None

    def unique_encoders(self) -> list[Encoder]:
        """Distinct encoder objects in first-appearance order (snn2 branches
        of one modality share a single encoder)."""
        seen: list[Encoder] = []
        for enc in self.encoders:
            if not any(enc is s for s in seen):
                seen.append(enc)
        return seen

    def encoder_slot(self, branch: int) -> int:
        uniq = self.unique_encoders()
        for i, enc in enumerate(uniq):
            if self.encoders[branch] is enc:
                return i
        raise RuntimeError("unreachable")

    def branch_for(self, modality: Modality) -> int:
        for i, mod in enumerate(self.branch_modalities):
            if mod == modality:
                return i
        raise ValueError(f"model has no branch for modality {modality.value!r}")

    def parameter_arrays(self) -> list[np.ndarray]:
        arrays = []
        for enc in self.unique_encoders():
            arrays.extend(enc.parameter_arrays())
        for head in self.heads or []:
            arrays.extend(head.parameter_arrays())
        return arrays


def build_model(architecture: str, feature_dim: int, embedding_dim: int = 64,
                hidden_dims: tuple[int, ...] = (64,), n_clusters: int = 8, seed: int = 0,
                touch_modality: Modality = Modality.TOUCH_FOLD,
                snn_modalities: tuple[Modality, Modality] = (Modality.DEPTH, Modality.DEPTH),
                margin: float = 2.0, aux_weight: float = 1.0) -> JointModel:
    """Construct and initialize a model of the given architecture."""
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}")
    spec = EncoderSpec((feature_dim, *hidden_dims, embedding_dim))

    def enc_seed(branch: int) -> int:
        return int(rng_from(seed, TAG_INIT, branch).integers(0, 2**63))

    if architecture == SNN2:
        modalities = tuple(snn_modalities)
        first = encoder_init(spec, enc_seed(0))
        if modalities[0] == modalities[1]:
            encoders = [first, first]  # shared Siamese weights
        else:
            encoders = [first, encoder_init(spec, enc_seed(1))]
        return JointModel(SNN2, modalities, encoders, None, margin, aux_weight)

    modalities = (Modality.DEPTH, Modality.COLOR, touch_modality)
    encoders = [encoder_init(spec, enc_seed(b)) for b in range(3)]
    heads = None
    if architecture in (AUXILIARY, MULTI_INPUT):
        heads = [
            head_init(embedding_dim, n_clusters, int(rng_from(seed, TAG_INIT, 100 + b).integers(0, 2**63)))
            for b in range(3)
        ]
    return JointModel(architecture, modalities, encoders, heads, margin, aux_weight)


@dataclass
class BatchResult:
    """Everything the trainer needs from one batch."""

    mean_loss: float
    sample_losses: np.ndarray
    distances: np.ndarray
    embeddings: list[np.ndarray]  # per branch, (B, E); touch branch is fused for multiinput
    encoder_grads: list[EncoderGrads]  # per unique encoder, summed over batch
    head_grads: list[list[np.ndarray]] | None  # per head, summed over batch


def _pair_terms(e_a: np.ndarray, e_b: np.ndarray):
    """Distances and safe unit difference rows for one embedding pair."""
    diff = e_a - e_b
    dist = np.linalg.norm(diff, axis=1)
    unit = np.zeros_like(diff)
    nz = dist > 0
    unit[nz] = diff[nz] / dist[nz, None]
    return dist, unit


def forward_backward_batch(model: JointModel, branch_inputs: list, labels: np.ndarray,
                           cluster_labels: np.ndarray | None = None) -> BatchResult:
    """Forward and backward over a batch.

    branch_inputs holds one (B, F) array per branch; the touch branch of a
    multiinput model instead holds a (P, B, F) array of P presses. labels is
    the (B,) same/different vector; cluster_labels is (n_branches, B) and
    required when the model has heads.
    """
    labels = np.asarray(labels)
    bsz = len(labels)
    if model.uses_heads and cluster_labels is None:
        raise ValueError(f"{model.architecture} model needs cluster labels")

    uniq = model.unique_encoders()
    slot_of = [model.encoder_slot(b) for b in range(model.n_branches)]

    embeddings: list[np.ndarray] = []
    caches: list = []
    press_data = None
    for b in range(model.n_branches):
        enc = model.encoders[b]
        x = branch_inputs[b]
        if model.architecture == MULTI_INPUT and b == 2:
            presses = np.asarray(x, dtype=np.float64)
            if presses.ndim != 3 or presses.shape[0] != MULTI_PRESS_COUNT:
                raise ValueError(
                    f"multiinput touch branch needs ({MULTI_PRESS_COUNT}, B, F) presses, got {presses.shape}"
                )
            outs, press_caches = [], []
            for p in range(MULTI_PRESS_COUNT):
                e_p, cache_p = encoder_forward_batch(enc, presses[p])
                outs.append(e_p)
                press_caches.append(cache_p)
            stacked = np.stack(outs)  # (P, B, E)
            argmax = stacked.argmax(axis=0)  # ties -> lowest press index
            embeddings.append(stacked.max(axis=0))
            caches.append(None)
            press_data = (press_caches, argmax)
        else:
            x = np.asarray(x, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != bsz:
                raise ValueError(f"branch {b}: input shape {x.shape} does not match batch {bsz}")
            e_b, cache = encoder_forward_batch(enc, x)
            embeddings.append(e_b)
            caches.append(cache)

    # contrastive part
    pos = labels == 0
    if model.n_branches == 2:
        dist, unit01 = _pair_terms(embeddings[0], embeddings[1])
        distances = dist
        g = np.where(pos, dist, -np.maximum(0.0, model.margin - dist))
        emb_grads = [g[:, None] * unit01, -g[:, None] * unit01]
    else:
        d01, u01 = _pair_terms(embeddings[0], embeddings[1])
        d12, u12 = _pair_terms(embeddings[1], embeddings[2])
        d20, u20 = _pair_terms(embeddings[2], embeddings[0])
        distances = d01 + d12 + d20
        g = np.where(pos, distances, -np.maximum(0.0, model.margin - distances))
        gcol = g[:, None]
        emb_grads = [
            gcol * (u01 - u20),
            gcol * (u12 - u01),
            gcol * (u20 - u12),
        ]
    hinge = np.maximum(0.0, model.margin - distances)
    sample_losses = np.where(pos, 0.5 * distances**2, 0.5 * hinge**2)

    # auxiliary heads
    head_grads = None
    if model.uses_heads:
        head_grads = []
        for b, head in enumerate(model.heads):
            losses_b, _, d_emb, hg = _softmax_ce_batch(
                head, np.ascontiguousarray(embeddings[b]), np.asarray(cluster_labels[b])
            )
            sample_losses = sample_losses + model.aux_weight * losses_b
            emb_grads[b] = emb_grads[b] + model.aux_weight * d_emb
            head_grads.append([model.aux_weight * hg[0], model.aux_weight * hg[1]])

    # backprop through the branches into per-unique-encoder grads
    enc_grads: list[EncoderGrads | None] = [None] * len(uniq)

    def accumulate(slot: int, grads: EncoderGrads) -> None:
        if enc_grads[slot] is None:
            enc_grads[slot] = grads
        else:
            enc_grads[slot].add_(grads)

    for b in range(model.n_branches):
        if model.architecture == MULTI_INPUT and b == 2:
            press_caches, argmax = press_data
            for p in range(MULTI_PRESS_COUNT):
                routed = np.where(argmax == p, emb_grads[2], 0.0)
                accumulate(slot_of[b], encoder_backward_batch(model.encoders[b], press_caches[p], routed))
        else:
            accumulate(slot_of[b], encoder_backward_batch(model.encoders[b], caches[b], emb_grads[b]))

    return BatchResult(
        mean_loss=float(sample_losses.mean()),
        sample_losses=sample_losses,
        distances=distances,
        embeddings=embeddings,
        encoder_grads=enc_grads,  # type: ignore[arg-type]
        head_grads=head_grads,
    )


@dataclass
class ForwardResult:
    embeddings: list[np.ndarray]
    distance: float
    loss: float
    encoder_grads: list[EncoderGrads]
    head_grads: list[list[np.ndarray]] | None


def _group_inputs(model: JointModel, group: TripletGroup) -> list:
    payloads = group.branch_payloads()
    if len(payloads) != model.n_branches:
        raise ValueError(
            f"group has {len(payloads)} branch payloads, {model.architecture} expects {model.n_branches}"
        )
    inputs = []
    for b, payload in enumerate(payloads):
        if model.architecture == MULTI_INPUT and b == 2:
            if not isinstance(payload, tuple) or len(payload) != MULTI_PRESS_COUNT:
                raise ValueError(f"multiinput needs a tuple of {MULTI_PRESS_COUNT} touch observations")
            inputs.append(np.stack([obs.features for obs in payload])[:, None, :])
        else:
            if isinstance(payload, tuple):
                raise ValueError(f"{model.architecture} takes single observations per branch")
            inputs.append(payload.features[None, :])
    return inputs


def model_forward(model: JointModel, group: TripletGroup) -> ForwardResult:
    """Loss, distance, embeddings and full gradients for one group."""
    inputs = _group_inputs(model, group)
    cluster_labels = None
    if model.uses_heads:
        if len(group.cluster_labels) != model.n_branches:
            raise ValueError("group is missing per-branch cluster labels")
        cluster_labels = np.array([[c] for c in group.cluster_labels])
    res = forward_backward_batch(model, inputs, np.array([group.label]), cluster_labels)
    return ForwardResult(
        embeddings=[e[0] for e in res.embeddings],
        distance=float(res.distances[0]),
        loss=float(res.sample_losses[0]),
        encoder_grads=res.encoder_grads,
        head_grads=res.head_grads,
    )
