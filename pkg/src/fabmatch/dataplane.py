"""Synthetic fabric world and dataset utilities.

Each fabric is a point in a four-dimensional physical-parameter space
(thickness, stiffness, stretchiness, density). Observations in each sensing
modality are produced by a fixed seeded nonlinear map of the normalized
parameters the modality can expose, plus a large per-instance nuisance
component along a fixed modality direction and small isotropic noise.

The nuisance is deliberately dominant in raw feature space: an untrained
matcher sees instances of the same fabric as far apart as instances of
different fabrics, while a trained encoder can project the single nuisance
direction away and recover the shared parameters. Because the nuisance is
zero-mean and added after the nonlinear map, averaging many instances
recovers the parameter-driven component exactly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .seeding import TAG_FABRICS, TAG_KMEANS, TAG_NOISE, TAG_NUISANCE, TAG_SPLIT, TAG_WORLD_MAP, rng_from


class Modality(Enum):
    DEPTH = "depth"
    COLOR = "color"
    TOUCH_FLAT = "touchflat"
    TOUCH_FOLD = "touchfold"

    @classmethod
    def from_name(cls, name: str) -> "Modality":
        for m in cls:
            if m.value == name.lower():
                return m
        raise ValueError(f"unknown modality {name!r}; expected one of "
                         f"{[m.value for m in cls]}")


MODALITY_CODE = {m: i for i, m in enumerate(Modality)}

# Which physical parameters each modality's signal depends on, as indices
# into (thickness, stiffness, stretch, density). A flat press feels surface
# texture and weight but nothing about bending; a press on a fold also
# reveals thickness and stiffness. Drapes (depth and color) are shaped by
# everything except stretchiness.
MODALITY_MASKS = {
    Modality.DEPTH: (1.0, 1.0, 0.0, 1.0),
    Modality.COLOR: (1.0, 1.0, 0.0, 1.0),
    Modality.TOUCH_FLAT: (0.0, 0.0, 1.0, 1.0),
    Modality.TOUCH_FOLD: (1.0, 1.0, 1.0, 1.0),
}

# Per-instance nuisance: amplitude per dimension of the modality's fixed
# nuisance subspace. Color gets the largest (hue variation on top of drape
# variation). The subspace rank is chosen so same-fabric raw distances
# concentrate away from zero: an untrained matcher then ranks candidates at
# chance level, while the subspace stays small enough for an encoder to
# project away.
NUISANCE_RANK = {
    Modality.DEPTH: 64,
    Modality.COLOR: 64,
    Modality.TOUCH_FLAT: 8,
    Modality.TOUCH_FOLD: 8,
}
NUISANCE_SCALE = {
    Modality.DEPTH: 1.3,
    Modality.COLOR: 1.7,
    Modality.TOUCH_FLAT: 4.0,
    Modality.TOUCH_FOLD: 4.5,
}

# Signal amplitude of the parameter-driven feature component. A press on a
# fold transmits the mechanical parameters far more strongly than a drape
# silhouette does, which is what makes joint training with touch data pay off
# for the visual branches.
LATENT_GAIN = {
    Modality.DEPTH: 0.24,
    Modality.COLOR: 0.28,
    Modality.TOUCH_FLAT: 0.35,
    Modality.TOUCH_FOLD: 0.45,
}

# Attribute sampling ranges (invented; the source data gives none).
THICKNESS_RANGE_MM = (0.1, 5.0)
STIFFNESS_RANGE = (0.0, 6.0)
STRETCH_WEIGHTS = (0.5, 0.35, 0.15)
DENSITY_RANGE_GSM = (30.0, 600.0)

DEFAULT_INSTANCE_COUNTS = {
    Modality.DEPTH: 10,
    Modality.COLOR: 10,
    Modality.TOUCH_FLAT: 10,
    Modality.TOUCH_FOLD: 15,
}


@dataclass
class FabricRecord:
    """One material's physical parameters and (optional) cluster label."""

    id: int
    thickness_mm: float
    stiffness_score: float
    stretch_level: int
    density_gsm: float
    cluster_id: int | None = None

    def __post_init__(self):
        if self.thickness_mm <= 0:
            raise ValueError(f"fabric {self.id}: thickness must be positive")
        if not 0.0 <= self.stiffness_score <= 6.0:
            raise ValueError(f"fabric {self.id}: stiffness {self.stiffness_score} outside [0, 6]")
        if self.stretch_level not in (0, 1, 2):
            raise ValueError(f"fabric {self.id}: stretch level must be 0, 1 or 2")
        if self.density_gsm <= 0:
            raise ValueError(f"fabric {self.id}: density must be positive")


@dataclass
class Observation:
    """One modality instance of one fabric, as a feature vector."""

    fabric_id: int
    modality: Modality
    instance_index: int
    features: np.ndarray


@dataclass
class Dataset:
    fabrics: list[FabricRecord]
    observations: list[Observation]
    feature_dim: int
    train_ids: list[int] = field(default_factory=list)
    test_ids: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index: dict[tuple[int, Modality], list[Observation]] = {}
        for obs in self.observations:
            self._index.setdefault((obs.fabric_id, obs.modality), []).append(obs)
        self._fabric_by_id = {f.id: f for f in self.fabrics}

    def fabric(self, fabric_id: int) -> FabricRecord:
        return self._fabric_by_id[fabric_id]

    def observations_of(self, fabric_id: int, modality: Modality) -> list[Observation]:
        return self._index.get((fabric_id, modality), [])

    def fabric_ids(self) -> list[int]:
        return [f.id for f in self.fabrics]

    def subset(self, fabric_ids) -> "Dataset":
        """View containing only the given fabrics (arrays are shared)."""
        keep = set(fabric_ids)
        return Dataset(
            [f for f in self.fabrics if f.id in keep],
            [o for o in self.observations if o.fabric_id in keep],
            self.feature_dim,
            [i for i in self.train_ids if i in keep],
            [i for i in self.test_ids if i in keep],
            dict(self.meta),
        )

    def drop_instances(self, keep_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Split observations per (fabric, modality) into kept/held-out parts.

        Keeps round(count * keep_fraction) instances of each group, chosen by a
        seeded shuffle. Returns (kept, held_out) datasets over the same fabrics.
        """
        if not 0.0 < keep_fraction < 1.0:
            raise ValueError("keep_fraction must be in (0, 1)")
        rng = rng_from(seed, TAG_SPLIT, 1)
        kept, held = [], []
        for key in sorted(self._index, key=lambda k: (k[0], MODALITY_CODE[k[1]])):
            group = self._index[key]
            n_keep = int(round(len(group) * keep_fraction))
            order = rng.permutation(len(group))
            for rank, idx in enumerate(order):
                (kept if rank < n_keep else held).append(group[idx])
        kept.sort(key=lambda o: (o.fabric_id, MODALITY_CODE[o.modality], o.instance_index))
        held.sort(key=lambda o: (o.fabric_id, MODALITY_CODE[o.modality], o.instance_index))
        mk = lambda obs: Dataset(list(self.fabrics), obs, self.feature_dim,
                                 list(self.train_ids), list(self.test_ids), dict(self.meta))
        return mk(kept), mk(held)


def generate_fabrics(n: int, seed: int) -> list[FabricRecord]:
    """Draw n fabrics with ids 0..n-1 from the documented attribute ranges."""
    if n < 1:
        raise ValueError("need at least one fabric")
    rng = rng_from(seed, TAG_FABRICS)
    lo_t, hi_t = np.log(THICKNESS_RANGE_MM[0]), np.log(THICKNESS_RANGE_MM[1])
    lo_d, hi_d = np.log(DENSITY_RANGE_GSM[0]), np.log(DENSITY_RANGE_GSM[1])
    records = []
    for i in range(n):
        thickness = float(np.exp(rng.uniform(lo_t, hi_t)))
        stiffness = float(rng.uniform(*STIFFNESS_RANGE))
        stretch = int(rng.choice(3, p=STRETCH_WEIGHTS))
        density = float(np.exp(rng.uniform(lo_d, hi_d)))
        records.append(FabricRecord(i, thickness, stiffness, stretch, density))
    return records


def normalized_latents(fabric: FabricRecord) -> np.ndarray:
    """Map raw attributes into [-1, 1]^4 using the sampling-range constants."""
    lo_t, hi_t = np.log(THICKNESS_RANGE_MM[0]), np.log(THICKNESS_RANGE_MM[1])
    lo_d, hi_d = np.log(DENSITY_RANGE_GSM[0]), np.log(DENSITY_RANGE_GSM[1])
    return np.array([
        (2.0 * (np.log(fabric.thickness_mm) - lo_t) / (hi_t - lo_t)) - 1.0,
        (fabric.stiffness_score - 3.0) / 3.0,
        float(fabric.stretch_level) - 1.0,
        (2.0 * (np.log(fabric.density_gsm) - lo_d) / (hi_d - lo_d)) - 1.0,
    ])


class SynthWorld:
    """Fixed seeded observation maps from latent parameters to features."""

    LATENT_DIM = 4
    MAP_WIDTH = 32

    def __init__(self, seed: int, feature_dim: int = 256, noise_std: float = 0.05):
        if feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        self.seed = int(seed)
        self.feature_dim = int(feature_dim)
        self.noise_std = float(noise_std)
        self._maps = {}
        for mod in Modality:
            rank = min(NUISANCE_RANK[mod], self.feature_dim)
            rng = rng_from(self.seed, TAG_WORLD_MAP, MODALITY_CODE[mod])
            hidden_w = rng.normal(0.0, 1.0, size=(self.MAP_WIDTH, self.LATENT_DIM))
            hidden_b = rng.normal(0.0, 0.3, size=self.MAP_WIDTH)
            out_w = rng.normal(0.0, 1.0, size=(self.feature_dim, self.MAP_WIDTH))
            raw = rng.normal(0.0, 1.0, size=(self.feature_dim, rank))
            directions, _ = np.linalg.qr(raw)  # orthonormal nuisance subspace
            self._maps[mod] = (hidden_w, hidden_b, out_w, directions.T)

    def clean_features(self, fabric: FabricRecord, modality: Modality) -> np.ndarray:
        """Noiseless, nuisance-free feature vector for a fabric."""
        hidden_w, hidden_b, out_w, _ = self._maps[modality]
        masked = normalized_latents(fabric) * np.asarray(MODALITY_MASKS[modality])
        hidden = np.tanh(hidden_w @ masked + hidden_b)
        return (out_w @ hidden) * (LATENT_GAIN[modality] / np.sqrt(self.MAP_WIDTH))

    def nuisance_offset(self, fabric: FabricRecord, modality: Modality, instance_seed: int) -> np.ndarray:
        """Zero-mean per-instance feature offset inside the nuisance subspace."""
        directions = self._maps[modality][3]
        rng = rng_from(self.seed, TAG_NUISANCE, fabric.id, MODALITY_CODE[modality], instance_seed)
        coords = rng.normal(0.0, 1.0, size=directions.shape[0]) * NUISANCE_SCALE[modality]
        return coords @ directions

    def masked_latents(self, fabric: FabricRecord, modality: Modality) -> np.ndarray:
        return normalized_latents(fabric) * np.asarray(MODALITY_MASKS[modality])


def synth_observe(world: SynthWorld, fabric: FabricRecord, modality: Modality,
                  instance_seed: int) -> Observation:
    """One deterministic observation of a fabric in a modality."""
    if modality not in world._maps:
        raise ValueError(f"unknown modality {modality!r}")
    features = world.clean_features(fabric, modality)
    features = features + world.nuisance_offset(fabric, modality, instance_seed)
    if world.noise_std > 0:
        noise_rng = rng_from(world.seed, TAG_NOISE, fabric.id, MODALITY_CODE[modality], instance_seed)
        features = features + noise_rng.normal(0.0, world.noise_std, size=world.feature_dim)
    return Observation(fabric.id, modality, instance_seed, features)


def build_dataset(world: SynthWorld, fabrics: list[FabricRecord],
                  counts: dict[Modality, int] | None = None) -> Dataset:
    """Synthesize the full observation set (default counts: 10/10/10/15)."""
    counts = dict(DEFAULT_INSTANCE_COUNTS if counts is None else counts)
    observations = []
    for fabric in fabrics:
        for mod in Modality:
            for k in range(counts.get(mod, 0)):
                observations.append(synth_observe(world, fabric, mod, k))
    return Dataset(fabrics, observations, world.feature_dim,
                   meta={"world_seed": world.seed, "noise_std": world.noise_std,
                         "counts": {m.value: counts.get(m, 0) for m in Modality}})


def normalize_attributes(fabrics: list[FabricRecord]) -> np.ndarray:
    """Per-column z-scores (sample std) of the n x 4 attribute matrix.

    Stretch level is treated as ordinal 0/1/2. A zero-variance column is set
    to all zeros and flagged with a warning.
    """
    if len(fabrics) < 2:
        raise ValueError("need at least two fabrics to normalize")
    raw = np.array([
        [f.thickness_mm, f.stiffness_score, float(f.stretch_level), f.density_gsm]
        for f in fabrics
    ])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0, ddof=1)
    out = np.zeros_like(raw)
    for j in range(raw.shape[1]):
        if std[j] == 0.0:
            warnings.warn(f"attribute column {j} has zero variance; set to zeros")
        else:
            out[:, j] = (raw[:, j] - mean[j]) / std[j]
    return out


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total == 0.0:
            centroids[i] = points[rng.integers(n)]
            continue
        probs = closest / total
        centroids[i] = points[rng.choice(n, p=probs)]
        closest = np.minimum(closest, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    assign = np.full(points.shape[0], -1)
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members) > 0:
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster from the point farthest from its centroid
                dist_own = d2[np.arange(len(points)), assign]
                centroids[j] = points[np.argmax(dist_own)]
    d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(len(points)), assign].sum())
    return assign, centroids, wcss


def kmeans_cluster(matrix: np.ndarray, k: int, seed: int,
                   n_restarts: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; best of n_restarts by WCSS."""
    points = np.asarray(matrix, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if k < 1 or k > points.shape[0]:
        raise ValueError(f"k={k} must be in [1, n={points.shape[0]}]")
    rng = rng_from(seed, TAG_KMEANS)
    best = None
    for _ in range(n_restarts):
        init = _kmeans_pp_init(points, k, rng)
        assign, centroids, wcss = _lloyd(points, init)
        if best is None or wcss < best[2]:
            best = (assign, centroids, wcss)
    return best[0], best[1]


def split_dataset(fabrics: list[FabricRecord], n_test: int, seed: int) -> tuple[list[int], list[int]]:
    """Stratified split: per-cluster test counts by largest-remainder rounding."""
    n = len(fabrics)
    if not 0 <= n_test < n:
        raise ValueError(f"n_test={n_test} must be in [0, {n})")
    if any(f.cluster_id is None for f in fabrics):
        raise ValueError("all fabrics must have a cluster_id before splitting")
    clusters: dict[int, list[int]] = {}
    for f in fabrics:
        clusters.setdefault(f.cluster_id, []).append(f.id)
    quotas = {c: n_test * len(ids) / n for c, ids in clusters.items()}
    alloc = {c: int(np.floor(q)) for c, q in quotas.items()}
    remaining = n_test - sum(alloc.values())
    by_remainder = sorted(clusters, key=lambda c: (-(quotas[c] - alloc[c]), c))
    for c in by_remainder[:remaining]:
        alloc[c] += 1
    rng = rng_from(seed, TAG_SPLIT)
    test_ids: list[int] = []
    for c in sorted(clusters):
        ids = sorted(clusters[c])
        take = alloc[c]
        if take > 0:
            picked = rng.choice(len(ids), size=take, replace=False)
            test_ids.extend(ids[int(i)] for i in picked)
    test_set = set(test_ids)
    train_ids = [f.id for f in fabrics if f.id not in test_set]
    return sorted(train_ids), sorted(test_ids)
