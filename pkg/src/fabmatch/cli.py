"""Command-line entry point: gen, ingest, train, eval and confuse subcommands
driven by a flat key = value config file.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numeric failure during training.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import assocnet, datafile, evalsuite, ingest, trainer
from .dataplane import (
    Modality,
    SynthWorld,
    build_dataset,
    generate_fabrics,
    kmeans_cluster,
    normalize_attributes,
    split_dataset,
)
from .errors import ConfigError, FileFormatError, TrainingDivergedError
from .seeding import TAG_AUGMENT, rng_from

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# key -> (type tag, default). The resolved config is echoed into every output.
CONFIG_SCHEMA = {
    "world.seed": ("int", 0),
    "world.n_fabrics": ("int", 118),
    "world.noise_std": ("float", 0.05),
    "split.n_test": ("int", 18),
    "cluster.k": ("int", 8),
    "train.learning_rate": ("float", 0.001),
    "train.batch_size": ("int", 32),
    "train.iterations": ("int", 2000),
    "train.margin": ("float", 2.0),
    "train.negative_ratio": ("float", 0.5),
    "train.aux_weight": ("float", 1.0),
    "train.master_seed": ("int", 0),
    "eval.n_candidates": ("int", 10),
    "eval.repetitions": ("int", 10),
    "eval.coefficient": ("float", 8.5e-2),
    "eval.seed": ("int", 0),
    "eval.split": ("str", "test"),
    "eval.workers": ("int", 1),
    "model.arch": ("str", "crossmodal"),
    "model.embedding_dim": ("int", 64),
    "model.touch": ("str", "touchfold"),
    "model.snn_pair": ("str", "depth,depth"),
    "ingest.augment": ("bool", False),
    "ingest.variants": ("int", 2),
    "ingest.backbone_seed": ("int", 0),
    "paths.dataset": ("str", "dataset.gfds"),
    "paths.checkpoint": ("str", "model.gfab"),
    "paths.loss_csv": ("str", "loss.csv"),
    "paths.report_dir": ("str", "reports"),
}


class RunConfig:
    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def as_echo(self) -> dict:
        out = {}
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, bool):
                out[key] = "true" if v else "false"
            else:
                out[key] = str(v)
        return out


def _parse_value(key: str, raw: str):
    kind, _ = CONFIG_SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r} (expected {kind})") from None


def parse_config_text(text: str) -> RunConfig:
    values = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(values)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig({key: default for key, (_, default) in CONFIG_SCHEMA.items()})
    return parse_config_text(Path(path).read_text())


def _model_from_config(config: RunConfig, feature_dim: int) -> assocnet.JointModel:
    arch = config["model.arch"]
    if arch not in assocnet.ARCHITECTURES:
        raise ConfigError(f"model.arch {arch!r} not one of {assocnet.ARCHITECTURES}")
    try:
        touch = Modality.from_name(config["model.touch"])
        snn_pair = tuple(Modality.from_name(p) for p in config["model.snn_pair"].split(","))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if len(snn_pair) != 2:
        raise ConfigError("model.snn_pair must name two modalities, e.g. 'depth,touchfold'")
    return assocnet.build_model(
        arch,
        feature_dim,
        embedding_dim=config["model.embedding_dim"],
        n_clusters=config["cluster.k"],
        seed=config["train.master_seed"],
        touch_modality=touch,
        snn_modalities=snn_pair,  # type: ignore[arg-type]
        margin=config["train.margin"],
        aux_weight=config["train.aux_weight"],
    )


def _train_config(config: RunConfig) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(
            learning_rate=config["train.learning_rate"],
            batch_size=config["train.batch_size"],
            iterations=config["train.iterations"],
            margin=config["train.margin"],
            negative_ratio=config["train.negative_ratio"],
            aux_weight=config["train.aux_weight"],
            master_seed=config["train.master_seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _eval_config(config: RunConfig) -> evalsuite.EvalConfig:
    try:
        return evalsuite.EvalConfig(
            n_candidates=config["eval.n_candidates"],
            n_distractor_fabrics=config["eval.n_candidates"] - 1,
            repetitions=config["eval.repetitions"],
            prob_coefficient=config["eval.coefficient"],
            seed=config["eval.seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _eval_subset(config: RunConfig, dataset):
    which = config["eval.split"]
    if which not in ("train", "test"):
        raise ConfigError(f"eval.split must be 'train' or 'test', got {which!r}")
    ids = dataset.train_ids if which == "train" else dataset.test_ids
    if not ids:
        raise ConfigError(f"dataset carries no {which} split")
    return dataset.subset(ids)


def cmd_gen(config: RunConfig) -> int:
    n = config["world.n_fabrics"]
    k = config["cluster.k"]
    n_test = config["split.n_test"]
    if n < 1:
        raise ConfigError("world.n_fabrics must be >= 1")
    if k > n:
        raise ConfigError(f"cluster.k = {k} exceeds world.n_fabrics = {n}; need k <= n")
    if not 0 <= n_test < n:
        raise ConfigError(f"split.n_test = {n_test} must be in [0, {n})")
    seed = config["world.seed"]
    fabrics = generate_fabrics(n, seed)
    attrs = normalize_attributes(fabrics)
    assignments, _ = kmeans_cluster(attrs, k, seed)
    for fabric, cid in zip(fabrics, assignments):
        fabric.cluster_id = int(cid)
    train_ids, test_ids = split_dataset(fabrics, n_test, seed)
    world = SynthWorld(seed, noise_std=config["world.noise_std"])
    dataset = build_dataset(world, fabrics)
    dataset.train_ids = train_ids
    dataset.test_ids = test_ids
    out = Path(config["paths.dataset"])
    datafile.save_dataset(dataset, out, config.as_echo())
    print(f"wrote {out} ({len(fabrics)} fabrics, {len(dataset.observations)} observations, "
          f"train {len(train_ids)} / test {len(test_ids)})")
    return EXIT_OK


def _ingest_tree(root: Path):
    """Yield (fabric_id, modality, source name, PixelImage) for every instance."""
    fabric_dirs = sorted((p for p in root.iterdir() if p.is_dir() and p.name.isdigit()),
                         key=lambda p: int(p.name))
    if not fabric_dirs:
        raise ConfigError(f"no fabric directories under {root}")
    for fdir in fabric_dirs:
        fid = int(fdir.name)
        for mdir in sorted(p for p in fdir.iterdir() if p.is_dir()):
            try:
                modality = Modality.from_name(mdir.name)
            except ValueError:
                print(f"skipping {mdir}: not a modality directory", file=sys.stderr)
                continue
            for entry in sorted(mdir.iterdir()):
                if entry.is_dir():
                    frames = []
                    for frame_path in sorted(entry.glob("*.pnm")):
                        img = _parse_image(frame_path)
                        if img is not None:
                            frames.append(img)
                    if frames:
                        yield fid, modality, entry.name, frames[ingest.select_press_frame(frames)]
                elif entry.suffix == ".pnm":
                    img = _parse_image(entry)
                    if img is not None:
                        yield fid, modality, entry.name, img


def _parse_image(path: Path):
    try:
        return ingest.parse_pnm(path.read_bytes())
    except (FileFormatError, OSError) as exc:
        print(f"skipping {path}: {exc}", file=sys.stderr)
        return None


def cmd_ingest(root_dir: str, config: RunConfig) -> int:
    from .dataplane import Dataset, FabricRecord, Observation

    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigError(f"ingest root {root} is not a directory")
    backbones = {}

    def backbone_for(channels: int) -> ingest.FrozenBackbone:
        if channels not in backbones:
            backbones[channels] = ingest.FrozenBackbone(config["ingest.backbone_seed"], channels)
        return backbones[channels]

    observations = []
    counters: dict[tuple[int, Modality], int] = {}
    seen_fabrics: list[int] = []
    for fid, modality, name, img in _ingest_tree(root):
        if fid not in seen_fabrics:
            seen_fabrics.append(fid)
        variants = [img]
        if config["ingest.augment"] and img.channels == 3 and modality == Modality.COLOR:
            rng = rng_from(config["ingest.backbone_seed"], TAG_AUGMENT, fid, len(observations))
            for _ in range(config["ingest.variants"]):
                gamma = float(rng.uniform(0.5, 2.0))
                perm = tuple(int(i) for i in rng.permutation(3))
                variants.append(ingest.permute_channels(ingest.gamma_correct(img, gamma), perm))
        for variant in variants:
            idx = counters.get((fid, modality), 0)
            counters[(fid, modality)] = idx + 1
            features = ingest.featurize(variant, backbone_for(variant.channels))
            observations.append(Observation(fid, modality, idx, features))

    if not observations:
        raise ConfigError(f"no observations found under {root}")
    present = {obs.modality for obs in observations}
    for fid in seen_fabrics:
        for modality in present:
            if not any(o.fabric_id == fid and o.modality == modality for o in observations):
                raise ConfigError(f"fabric {fid} has zero {modality.value} observations")

    fabrics = [_fabric_from_attrs(fid, root) for fid in sorted(seen_fabrics)]
    if (root / "attributes.csv").exists() and len(fabrics) >= 2:
        k = min(config["cluster.k"], len(fabrics))
        attrs = normalize_attributes(fabrics)
        assignments, _ = kmeans_cluster(attrs, k, config["world.seed"])
        for fabric, cid in zip(fabrics, assignments):
            fabric.cluster_id = int(cid)
    else:
        # no physical labels: a single cluster keeps the pipeline runnable
        for fabric in fabrics:
            fabric.cluster_id = 0
    n_test = min(config["split.n_test"], len(fabrics) - 1)
    train_ids, test_ids = split_dataset(fabrics, max(n_test, 0), config["world.seed"])

    feature_dim = len(observations[0].features)
    dataset = Dataset(fabrics, observations, feature_dim, train_ids, test_ids,
                      {"source": "ingest", "backbone_seed": config["ingest.backbone_seed"]})
    out = Path(config["paths.dataset"])
    datafile.save_dataset(dataset, out, config.as_echo())
    print(f"wrote {out} ({len(fabrics)} fabrics, {len(observations)} observations)")
    return EXIT_OK


def _fabric_from_attrs(fid: int, root: Path):
    from .dataplane import FabricRecord

    attr_file = root / "attributes.csv"
    if attr_file.exists():
        for line in attr_file.read_text().splitlines()[1:]:
            parts = [p.strip() for p in line.split(",")]
            if parts and parts[0] and int(parts[0]) == fid:
                return FabricRecord(fid, float(parts[1]), float(parts[2]),
                                    int(parts[3]), float(parts[4]))
    # placeholder attributes: ingested data carries no physical labels
    return FabricRecord(fid, 1.0, 0.0, 0, 100.0)


def cmd_train(config: RunConfig) -> int:
    dataset = datafile.load_dataset(config["paths.dataset"])
    model = _model_from_config(config, dataset.feature_dim)
    tconf = _train_config(config)
    train_set = dataset.subset(dataset.train_ids) if dataset.train_ids else dataset
    try:
        model, history = trainer.train(model, train_set, tconf)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    trainer.save_checkpoint(model, config["paths.checkpoint"],
                            backbone_seed=dataset.meta.get("backbone_seed"),
                            config_echo=config.as_echo())
    trainer.write_loss_csv(history, config["paths.loss_csv"], config.as_echo())
    final = history[-1] if history else float("nan")
    print(f"trained {model.architecture} for {tconf.iterations} iterations; "
          f"final mean batch loss {final}")
    return EXIT_OK


def _load_model_and_dataset(config: RunConfig):
    dataset = datafile.load_dataset(config["paths.dataset"])
    model, _ = trainer.load_checkpoint(config["paths.checkpoint"])
    if model.encoders[0].input_dim != dataset.feature_dim:
        raise ConfigError(
            f"checkpoint expects feature dim {model.encoders[0].input_dim}, "
            f"dataset has {dataset.feature_dim}"
        )
    return model, dataset


def cmd_eval(config: RunConfig, workers: int | None = None) -> int:
    model, dataset = _load_model_and_dataset(config)
    subset = _eval_subset(config, dataset)
    econf = _eval_config(config)
    embedder = evalsuite.ModelEmbedder(model)
    pairs = evalsuite.default_pairs(list(model.branch_modalities))
    report = evalsuite.precision_grid(embedder, subset, pairs, econf,
                                      workers=workers or config["eval.workers"])
    report_dir = Path(config["paths.report_dir"])
    report_dir.mkdir(parents=True, exist_ok=True)
    out = report_dir / "precision.csv"
    echo = config.as_echo()
    echo["note"] = "rows are query2candidate: query modality retrieves candidate images"
    evalsuite.export_precision_csv(report, out, echo)
    for (q, c), cell in report.cells.items():
        print(f"{q}2{c}: top1 {cell.top1:.4f} top3 {cell.top3:.4f} ({cell.n_trials} trials)")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_confuse(config: RunConfig) -> int:
    model, dataset = _load_model_and_dataset(config)
    subset = _eval_subset(config, dataset)
    econf = _eval_config(config)
    embedder = evalsuite.ModelEmbedder(model)
    query_mod = model.branch_modalities[-1]
    cand_mod = model.branch_modalities[0]
    matrix = evalsuite.confusion_matrix(embedder, subset, query_mod, cand_mod,
                                        econf.prob_coefficient)
    report_dir = Path(config["paths.report_dir"])
    report_dir.mkdir(parents=True, exist_ok=True)
    echo = config.as_echo()
    evalsuite.export_confusion_csv(matrix, report_dir / "confusion.csv", echo)
    evalsuite.export_confusion_heatmap(matrix.values, report_dir / "confusion.pnm")
    k = config["cluster.k"]
    cluster_values = evalsuite.cluster_confusion(matrix, subset, k)
    lines = [f"# {key} = {val}" for key, val in sorted(echo.items())]
    lines.append("cluster," + ",".join(str(i) for i in range(k)))
    for i, row in enumerate(cluster_values):
        lines.append(f"{i}," + ",".join(f"{v:.9f}" for v in row))
    (report_dir / "confusion_clusters.csv").write_text("\n".join(lines) + "\n")
    evalsuite.export_confusion_heatmap(cluster_values, report_dir / "confusion_clusters.pnm")
    print(f"wrote confusion matrices for {query_mod.value}2{cand_mod.value} under {report_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabmatch",
                                     description="cross-modal fabric matching experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen", "generate a synthetic dataset file"),
        ("train", "train a model on a dataset file"),
        ("eval", "compute the precision grid for a checkpoint"),
        ("confuse", "compute confusion matrices for a checkpoint"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", default=None, help="key = value config file")
        if name == "eval":
            p.add_argument("--workers", type=int, default=None,
                           help="parallel evaluation workers")
    p = sub.add_parser("ingest", help="build a dataset file from a PNM directory tree")
    p.add_argument("root", help="directory laid out as <fabric_id>/<modality>/<instance>.pnm")
    p.add_argument("-c", "--config", default=None, help="key = value config file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "gen":
            return cmd_gen(config)
        if args.command == "ingest":
            return cmd_ingest(args.root, config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, workers=args.workers)
        if args.command == "confuse":
            return cmd_confuse(config)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileFormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
