"""Retrieval evaluation: pick-1-from-N ranking, top-k precision over modality
pairs, the normalized match-probability model, confusion matrices, and report
export.

All trial randomness is derived from (seed, fabric, query index, repetition),
so results do not depend on evaluation order and parallel runs reproduce
serial ones exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assocnet import MULTI_INPUT, JointModel, fuse_max
from .dataplane import Dataset, Modality, Observation, normalized_latents
from .numcore import encoder_forward_batch
from .seeding import TAG_EVAL, rng_from


@dataclass
class EvalConfig:
    n_candidates: int = 10
    n_distractor_fabrics: int = 9
    repetitions: int = 10
    prob_coefficient: float = 8.5e-2
    top_ks: tuple[int, ...] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates != self.n_distractor_fabrics + 1:
            raise ValueError("n_candidates must equal n_distractor_fabrics + 1")
        if self.prob_coefficient <= 0:
            raise ValueError("prob_coefficient must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


@dataclass
class CellStats:
    top1: float
    top3: float
    n_trials: int


@dataclass
class PrecisionReport:
    cells: dict[tuple[str, str], CellStats] = field(default_factory=dict)


@dataclass
class ConfusionMatrix:
    values: np.ndarray
    fabric_ids: list[int]


class ModelEmbedder:
    """Embeds observations through the branch matching their modality.

    For a multiinput model, touch-modality queries are fused from the anchor
    press plus two further presses of the same fabric; candidates always use
    single images.
    """

    def __init__(self, model: JointModel):
        self.model = model
        self._cache: dict[tuple[int, str, int], np.ndarray] = {}

    def embed(self, obs: Observation) -> np.ndarray:
        key = (obs.fabric_id, obs.modality.value, obs.instance_index)
        hit = self._cache.get(key)
        if hit is None:
            branch = self.model.branch_for(obs.modality)
            emb, _ = encoder_forward_batch(self.model.encoders[branch], obs.features[None, :])
            hit = emb[0]
            self._cache[key] = hit
        return hit

    def embed_query(self, dataset: Dataset, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        if self.model.architecture == MULTI_INPUT and obs.modality == self.model.branch_modalities[2]:
            pool = [o for o in dataset.observations_of(obs.fabric_id, obs.modality)
                    if o.instance_index != obs.instance_index]
            extra = min(2, len(pool))
            picks = [obs]
            if extra:
                idx = rng.choice(len(pool), size=extra, replace=False)
                picks += [pool[int(i)] for i in idx]
            if len(picks) == 1:
                return self.embed(obs)
            return fuse_max([self.embed(o) for o in picks])
        return self.embed(obs)


class LatentEmbedder:
    """Oracle embedder: every observation maps to its fabric's true
    normalized physical parameters."""

    def __init__(self, dataset: Dataset):
        self._latents = {f.id: normalized_latents(f) for f in dataset.fabrics}

    def embed(self, obs: Observation) -> np.ndarray:
        return self._latents[obs.fabric_id]

    def embed_query(self, dataset: Dataset, obs: Observation, rng: np.random.Generator) -> np.ndarray:
        return self.embed(obs)


def pick_one_of_n(query_e: np.ndarray, candidate_es: list[np.ndarray]) -> np.ndarray:
    """Candidate indices sorted by ascending distance; ties keep index order."""
    if len(candidate_es) == 0:
        raise ValueError("no candidates")
    query_e = np.asarray(query_e, dtype=np.float64)
    stack = np.stack([np.asarray(e, dtype=np.float64) for e in candidate_es])
    if stack.shape[1] != query_e.shape[0]:
        raise ValueError(f"candidate dim {stack.shape[1]} != query dim {query_e.shape[0]}")
    distances = np.linalg.norm(stack - query_e[None, :], axis=1)
    return np.argsort(distances, kind="stable")


def match_probability(e_target: np.ndarray, candidate_es, c: float) -> np.ndarray:
    """p_i proportional to exp(-c * d_i^2), normalized to sum to one."""
    if c <= 0:
        raise ValueError("coefficient must be positive")
    stack = np.asarray(candidate_es, dtype=np.float64)
    if stack.size == 0:
        raise ValueError("empty candidate list")
    d2 = np.sum((stack - np.asarray(e_target, dtype=np.float64)[None, :]) ** 2, axis=1)
    logits = -c * d2
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def _fabric_cell_trials(embedder, dataset: Dataset, fabric_id: int, others: list[int],
                        query_mod: Modality, cand_mod: Modality, config: EvalConfig):
    """Top-1/top-3 hit counts over all (query instance, repetition) trials of one fabric."""
    queries = dataset.observations_of(fabric_id, query_mod)
    if not queries:
        raise ValueError(f"fabric {fabric_id} has no {query_mod.value} observations")
    top1 = top3 = trials = 0
    for qi, qobs in enumerate(queries):
        for rep in range(config.repetitions):
            rng = rng_from(config.seed, TAG_EVAL, fabric_id, qi, rep)
            picked = rng.choice(len(others), size=config.n_distractor_fabrics, replace=False)
            cand_fabrics = [fabric_id] + [others[int(i)] for i in picked]
            order = rng.permutation(config.n_candidates)
            cand_fabrics = [cand_fabrics[int(i)] for i in order]
            truth_idx = cand_fabrics.index(fabric_id)
            cand_embs = []
            for cf in cand_fabrics:
                pool = dataset.observations_of(cf, cand_mod)
                if cf == fabric_id and query_mod == cand_mod:
                    # never offer the query image itself as its own candidate
                    reduced = [o for o in pool if o.instance_index != qobs.instance_index]
                    pool = reduced or pool
                if not pool:
                    raise ValueError(f"fabric {cf} has no {cand_mod.value} observations")
                cand_embs.append(embedder.embed(pool[int(rng.integers(len(pool)))]))
            q_e = embedder.embed_query(dataset, qobs, rng)
            ranking = pick_one_of_n(q_e, cand_embs)
            trials += 1
            if ranking[0] == truth_idx:
                top1 += 1
            if truth_idx in ranking[:3]:
                top3 += 1
    return top1, top3, trials


def topk_precision(embedder, dataset: Dataset, query_mod: Modality, cand_mod: Modality,
                   config: EvalConfig) -> CellStats:
    """Average pick-1-from-N precision over every fabric in the dataset."""
    fabric_ids = dataset.fabric_ids()
    if len(fabric_ids) < config.n_candidates:
        raise ValueError(
            f"need at least {config.n_candidates} fabrics for {config.n_distractor_fabrics} distractors, "
            f"got {len(fabric_ids)}"
        )
    top1 = top3 = trials = 0
    for fid in fabric_ids:
        others = [i for i in fabric_ids if i != fid]
        t1, t3, n = _fabric_cell_trials(embedder, dataset, fid, others, query_mod, cand_mod, config)
        top1 += t1
        top3 += t3
        trials += n
    return CellStats(top1 / trials, top3 / trials, trials)


def default_pairs(modalities: list[Modality]) -> list[tuple[Modality, Modality]]:
    """All ordered cross pairs plus the same-modality cells."""
    uniq = list(dict.fromkeys(modalities))
    pairs = [(q, c) for q in uniq for c in uniq if q != c]
    pairs += [(m, m) for m in uniq]
    return pairs


def precision_grid(embedder, dataset: Dataset, pairs, config: EvalConfig,
                   workers: int = 1) -> PrecisionReport:
    """Evaluate multiple (query, candidate) modality pairs, optionally in parallel."""
    report = PrecisionReport()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pair: pool.submit(topk_precision, embedder, dataset, pair[0], pair[1], config)
                for pair in pairs
            }
            for pair, fut in futures.items():
                report.cells[(pair[0].value, pair[1].value)] = fut.result()
    else:
        for q, c in pairs:
            report.cells[(q.value, c.value)] = topk_precision(embedder, dataset, q, c, config)
    return report


def confusion_matrix(embedder, dataset: Dataset, query_mod: Modality, cand_mod: Modality,
                     c: float, fabric_ids: list[int] | None = None) -> ConfusionMatrix:
    """Mean match probability from each fabric's queries to every fabric's candidates.

    The candidate set holds every candidate-modality observation of every
    fabric; per-fabric probabilities are summed over that fabric's images and
    averaged over the query fabric's images. Rows and columns are ordered by
    (cluster id, stiffness, id) so similar fabrics sit next to each other.
    """
    if fabric_ids is None:
        fabric_ids = dataset.fabric_ids()
    fabrics = [dataset.fabric(fid) for fid in fabric_ids]
    fabrics.sort(key=lambda f: (f.cluster_id if f.cluster_id is not None else -1, f.stiffness_score, f.id))
    ordered = [f.id for f in fabrics]
    pos = {fid: i for i, fid in enumerate(ordered)}

    cand_embs, cand_owner, cand_inst = [], [], []
    for fid in ordered:
        pool = dataset.observations_of(fid, cand_mod)
        if not pool:
            raise ValueError(f"fabric {fid} has no {cand_mod.value} observations")
        for obs in pool:
            cand_embs.append(embedder.embed(obs))
            cand_owner.append(pos[fid])
            cand_inst.append(obs.instance_index)
    cand_embs = np.stack(cand_embs)
    cand_owner = np.array(cand_owner)
    cand_inst = np.array(cand_inst)

    n = len(ordered)
    values = np.zeros((n, n))
    for fid in ordered:
        queries = dataset.observations_of(fid, query_mod)
        if not queries:
            raise ValueError(f"fabric {fid} has no {query_mod.value} observations")
        row = np.zeros(n)
        for qobs in queries:
            keep = slice(None)
            if query_mod == cand_mod:
                mask = ~((cand_owner == pos[fid]) & (cand_inst == qobs.instance_index))
                if mask.any():
                    keep = mask
            p = match_probability(embedder.embed(qobs), cand_embs[keep], c)
            row += np.bincount(cand_owner[keep], weights=p, minlength=n)
        values[pos[fid]] = row / len(queries)
    return ConfusionMatrix(values, ordered)


def cluster_confusion(matrix: ConfusionMatrix, dataset: Dataset, k: int) -> np.ndarray:
    """k x k matrix of mean entries between cluster member pairs."""
    cluster_of = np.array([dataset.fabric(fid).cluster_id for fid in matrix.fabric_ids])
    out = np.zeros((k, k))
    for a in range(k):
        ia = cluster_of == a
        for b in range(k):
            ib = cluster_of == b
            if ia.any() and ib.any():
                out[a, b] = matrix.values[np.ix_(ia, ib)].mean()
    return out


def _echo_lines(config_echo: dict | None) -> list[str]:
    return [f"# {key} = {config_echo[key]}" for key in sorted(config_echo or {})]


def export_precision_csv(report: PrecisionReport, path, config_echo: dict | None = None) -> None:
    """Cells as rows at six decimal places; naming is query2candidate."""
    lines = _echo_lines(config_echo)
    lines.append("query,candidate,top1,top3,trials")
    for (q, c), cell in report.cells.items():
        lines.append(f"{q},{c},{cell.top1:.6f},{cell.top3:.6f},{cell.n_trials}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_confusion_csv(matrix: ConfusionMatrix, path, config_echo: dict | None = None) -> None:
    lines = _echo_lines(config_echo)
    lines.append("fabric_id," + ",".join(str(fid) for fid in matrix.fabric_ids))
    for fid, row in zip(matrix.fabric_ids, matrix.values):
        lines.append(f"{fid}," + ",".join(f"{v:.9f}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_confusion_heatmap(values: np.ndarray, path) -> None:
    """8-bit grayscale PNM, each row scaled to its own maximum."""
    from .ingest import PixelImage, serialize_pnm

    values = np.asarray(values, dtype=np.float64)
    row_max = values.max(axis=1, keepdims=True)
    row_max[row_max == 0.0] = 1.0
    pixels = np.rint(255.0 * values / row_max).astype(np.uint16)[:, :, None]
    img = PixelImage(values.shape[1], values.shape[0], 1, 255, pixels)
    with open(path, "wb") as fh:
        fh.write(serialize_pnm(img))
