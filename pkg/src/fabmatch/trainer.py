"""Batch construction, the training loop, and checkpoint persistence."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .assocnet import (
    MULTI_INPUT,
    MULTI_PRESS_COUNT,
    SNN2,
    ClassifierHead,
    JointModel,
    TripletGroup,
    forward_backward_batch,
)
from .dataplane import Dataset, Modality, Observation
from .errors import BadMagicError, FileFormatError, FormatVersionError, TrainingDivergedError, TruncatedFileError
from .numcore import Encoder, EncoderSpec, adam_init, adam_step
from .seeding import TAG_BATCH, rng_from

CHECKPOINT_MAGIC = b"GFAB"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    iterations: int = 2000
    margin: float = 2.0
    negative_ratio: float = 0.5
    aux_weight: float = 1.0
    master_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if not 0.0 < self.negative_ratio < 1.0:
            raise ValueError("negative_ratio must be in (0, 1)")


def _pick_observation(dataset: Dataset, fabric_id: int, modality: Modality,
                      rng: np.random.Generator, count: int = 1) -> list[Observation]:
    pool = dataset.observations_of(fabric_id, modality)
    if not pool:
        raise ValueError(f"fabric {fabric_id} has no {modality.value} observations")
    if count == 1:
        return [pool[int(rng.integers(len(pool)))]]
    replace = len(pool) < count
    idx = rng.choice(len(pool), size=count, replace=replace)
    return [pool[int(i)] for i in idx]


def sample_group(dataset: Dataset, model: JointModel, rng: np.random.Generator, *,
                 label: int | None = None, negative_ratio: float = 0.5) -> TripletGroup:
    """Draw one training group.

    label None draws same/different with probability negative_ratio of a
    different-fabric group; the trainer passes explicit labels to hit exact
    per-batch counts. Positives use one fabric with independent uniform
    instances per branch; negatives draw each branch's fabric independently,
    resampling until the branches are not all the same fabric.
    """
    fabric_ids = dataset.fabric_ids()
    if not fabric_ids:
        raise ValueError("dataset has no fabrics")
    if label is None:
        label = 1 if rng.random() < negative_ratio else 0
    n_branch = model.n_branches
    if label == 0:
        fid = fabric_ids[int(rng.integers(len(fabric_ids)))]
        branch_fabrics = [fid] * n_branch
    else:
        while True:
            branch_fabrics = [fabric_ids[int(rng.integers(len(fabric_ids)))] for _ in range(n_branch)]
            if len(set(branch_fabrics)) > 1:
                break

    payloads: list = []
    for b, modality in enumerate(model.branch_modalities):
        if model.architecture == MULTI_INPUT and b == 2:
            picks = _pick_observation(dataset, branch_fabrics[b], modality, rng, MULTI_PRESS_COUNT)
            payloads.append(tuple(picks))
        else:
            payloads.append(_pick_observation(dataset, branch_fabrics[b], modality, rng)[0])

    cluster_labels = ()
    if model.uses_heads:
        labels = []
        for fid in branch_fabrics:
            cid = dataset.fabric(fid).cluster_id
            if cid is None:
                raise ValueError(f"fabric {fid} has no cluster label; required by {model.architecture}")
            labels.append(cid)
        cluster_labels = tuple(labels)

    if n_branch == 2:
        return TripletGroup(payloads[0], payloads[1], None, label, cluster_labels)
    return TripletGroup(payloads[0], payloads[1], payloads[2], label, cluster_labels)


def make_batch(dataset: Dataset, model: JointModel, rng: np.random.Generator,
               config: TrainConfig) -> list[TripletGroup]:
    """One training batch with exactly round(batch_size * negative_ratio)
    different-fabric groups."""
    n_neg = int(round(config.batch_size * config.negative_ratio))
    groups = [sample_group(dataset, model, rng, label=0)
              for _ in range(config.batch_size - n_neg)]
    groups += [sample_group(dataset, model, rng, label=1) for _ in range(n_neg)]
    return groups


def _assemble_batch(model: JointModel, groups: list[TripletGroup]):
    branch_inputs = []
    payload_lists = [g.branch_payloads() for g in groups]
    for b in range(model.n_branches):
        if model.architecture == MULTI_INPUT and b == 2:
            presses = np.stack([
                np.stack([obs.features for obs in payloads[b]]) for payloads in payload_lists
            ])  # (B, P, F)
            branch_inputs.append(np.ascontiguousarray(presses.transpose(1, 0, 2)))
        else:
            branch_inputs.append(np.stack([payloads[b].features for payloads in payload_lists]))
    labels = np.array([g.label for g in groups])
    cluster_labels = None
    if model.uses_heads:
        cluster_labels = np.array([[g.cluster_labels[b] for g in groups] for b in range(model.n_branches)])
    return branch_inputs, labels, cluster_labels


def train(model: JointModel, dataset: Dataset, config: TrainConfig) -> tuple[JointModel, list[float]]:
    """Run the training loop in place on the model; returns the loss history."""
    for modality in set(model.branch_modalities):
        if not any(dataset.observations_of(fid, modality) for fid in dataset.fabric_ids()):
            raise ValueError(f"dataset has no {modality.value} observations")
    uniq = model.unique_encoders()
    enc_states = [adam_init(enc.parameter_arrays(), config.learning_rate) for enc in uniq]
    head_states = None
    if model.uses_heads:
        head_states = [adam_init(h.parameter_arrays(), config.learning_rate) for h in model.heads]

    rng = rng_from(config.master_seed, TAG_BATCH)
    history: list[float] = []
    for it in range(config.iterations):
        groups = make_batch(dataset, model, rng, config)
        branch_inputs, labels, cluster_labels = _assemble_batch(model, groups)
        result = forward_backward_batch(model, branch_inputs, labels, cluster_labels)
        if not np.isfinite(result.mean_loss):
            raise TrainingDivergedError(f"non-finite loss {result.mean_loss} at iteration {it}")
        scale = 1.0 / config.batch_size
        for slot, enc in enumerate(uniq):
            grads = [g * scale for g in result.encoder_grads[slot].parameter_arrays()]
            new_params, _ = adam_step(enc.parameter_arrays(), grads, enc_states[slot])
            enc.set_parameter_arrays(new_params)
        if model.uses_heads:
            for b, head in enumerate(model.heads):
                grads = [g * scale for g in result.head_grads[b]]
                new_params, _ = adam_step(head.parameter_arrays(), grads, head_states[b])
                head.set_parameter_arrays(new_params)
        history.append(result.mean_loss)
    return model, history


def write_loss_csv(history: list[float], path, config_echo: dict | None = None) -> None:
    lines = []
    for key in sorted(config_echo or {}):
        lines.append(f"# {key} = {config_echo[key]}")
    lines.append("iteration,loss")
    for i, loss in enumerate(history):
        lines.append(f"{i},{loss!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(model: JointModel, path, *, backbone_seed: int | None = None,
                    config_echo: dict | None = None) -> None:
    """Write the model as magic + version + JSON header + float32 LE weights."""
    uniq = model.unique_encoders()
    header = {
        "architecture": model.architecture,
        "branch_modalities": [m.value for m in model.branch_modalities],
        "branch_slots": [model.encoder_slot(b) for b in range(model.n_branches)],
        "margin": model.margin,
        "aux_weight": model.aux_weight,
        "embedding_dim": model.embedding_dim,
        "encoders": [{"layer_dims": list(enc.spec.layer_dims)} for enc in uniq],
        "heads": {"n_classes": model.heads[0].n_classes} if model.uses_heads else None,
        "backbone_seed": backbone_seed,
        "config": config_echo,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(blob)), blob]
    for enc in uniq:
        for arr in enc.parameter_arrays():
            parts.append(_f32_bytes(arr))
    for head in model.heads or []:
        for arr in head.parameter_arrays():
            parts.append(_f32_bytes(arr))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def f32_array(self, shape: tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(4 * n)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def load_checkpoint(path) -> tuple[JointModel, dict]:
    """Read a checkpoint; returns (model, header metadata)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != CHECKPOINT_VERSION:
        raise FormatVersionError(f"checkpoint version {version}, supported {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack("<I", r.take(4))
    try:
        header = json.loads(r.take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"bad checkpoint header: {exc}") from None

    encoders = []
    for enc_meta in header["encoders"]:
        spec = EncoderSpec(tuple(enc_meta["layer_dims"]))
        weights, biases = [], []
        for i in range(spec.n_layers):
            weights.append(r.f32_array((spec.layer_dims[i + 1], spec.layer_dims[i])))
            biases.append(r.f32_array((spec.layer_dims[i + 1],)))
        encoders.append(Encoder(spec, weights, biases))
    heads = None
    if header["heads"] is not None:
        k = header["heads"]["n_classes"]
        emb = header["embedding_dim"]
        n_heads = 3 if header["architecture"] != SNN2 else 2
        heads = []
        for _ in range(n_heads):
            weight = r.f32_array((k, emb))
            bias = r.f32_array((k,))
            heads.append(ClassifierHead(weight, bias))
    if r.pos != len(data):
        raise FileFormatError(f"{len(data) - r.pos} trailing bytes after weights")

    branch_encoders = [encoders[slot] for slot in header["branch_slots"]]
    model = JointModel(
        header["architecture"],
        tuple(Modality.from_name(m) for m in header["branch_modalities"]),
        branch_encoders,
        heads,
        margin=header["margin"],
        aux_weight=header["aux_weight"],
    )
    return model, header
