"""Command line interface.

Subcommands: generate-data, segment, build-supergraph, train, evaluate,
diagnose, spectrum. Run definitions live in a config file; flags are for
paths and per-invocation overrides only. Exit codes: 0 success, 1 usage
or config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio, diagnostics, mending, training
from .config import RunConfig, config_echo, describe_keys, load_config
from .errors import ConfigError, ContractError, DataError, NumericError
from .segmentation import FeatureExtractor, Frame, make_filter_bank, node_features, region_adjacency, segment_centroids, slic
from .supergraph import SuperGraph, TimestepGraph, assemble, laplacian
from .tensor import Tensor


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with code 1, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="stgraph", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the synthetic dataset",
                       epilog=describe_keys(["data"]))
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override [data] root")

    p = sub.add_parser("segment", help="segment one frame and dump its graph",
                       epilog=describe_keys(["data", "graph", "paths"]))
    p.add_argument("--config", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--frame", type=int, default=0)

    p = sub.add_parser("build-supergraph", help="dump one sample's block adjacency and features",
                       epilog=describe_keys(["data", "graph", "paths"]))
    p.add_argument("--config", required=True)
    p.add_argument("--sample", required=True)

    p = sub.add_parser("train", help="train and write the best checkpoint plus history CSV",
                       epilog=describe_keys(["data", "graph", "encoder", "gnn", "mending", "loss", "training", "paths"]))
    p.add_argument("--config", required=True)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split",
                       epilog=describe_keys(["data", "graph", "encoder", "gnn", "mending", "loss", "paths"]))
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("diagnose", help="spectral/sparsity reports before and after mending",
                       epilog=describe_keys(["data", "graph", "encoder", "gnn", "mending", "loss", "paths"]))
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--spectra", nargs="*", default=[], help="sample ids whose spectra to dump")
    p.add_argument("--include-padded", action="store_true",
                   help="keep padded isolated nodes in spectral reports")

    p = sub.add_parser("spectrum", help="dump Laplacian eigenvalues for one sample",
                       epilog=describe_keys(["data", "graph", "encoder", "gnn", "mending", "loss", "paths"]))
    p.add_argument("--config", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--checkpoint", help="also dump the mended spectrum")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        handler = {
            "generate-data": _cmd_generate_data,
            "segment": _cmd_segment,
            "build-supergraph": _cmd_build_supergraph,
            "train": _cmd_train,
            "evaluate": _cmd_evaluate,
            "diagnose": _cmd_diagnose,
            "spectrum": _cmd_spectrum,
        }[args.command]
        handler(args)
        return 0
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


# ---------------------------------------------------------------------------
# Pipeline helpers shared by several commands


def _feature_extractor(cfg: RunConfig) -> FeatureExtractor:
    g = cfg.graph
    if g.features == "mean-color":
        return FeatureExtractor(kind="mean-color", pool=g.feature_pool)
    if g.features == "mean-color+filter-bank":
        bank = make_filter_bank(count=g.filter_count, seed=g.filter_seed)
        return FeatureExtractor(kind=g.features, filters=bank, pool=g.feature_pool)
    _, tensors = dataio.load_checkpoint(g.filter_file)
    if "filters" not in tensors:
        raise DataError(f"{g.filter_file}: filter weight file lacks a 'filters' tensor")
    return FeatureExtractor(kind="external-file", filters=tensors["filters"], pool=g.feature_pool)


def frame_graph(frame: Frame, cfg: RunConfig, fx: FeatureExtractor) -> TimestepGraph:
    seg = slic(frame, cfg.graph.superpixels, compactness=cfg.graph.compactness,
               max_iters=cfg.graph.slic_iters)
    return TimestepGraph(
        adjacency=region_adjacency(seg),
        features=node_features(frame, seg, fx),
        positions=segment_centroids(seg),
    )


def sample_supergraph(manifest, entry, cfg: RunConfig, fx: FeatureExtractor, root) -> SuperGraph:
    frames = dataio.load_sequence(manifest, entry, root)
    graphs = [frame_graph(f, cfg, fx) for f in frames]
    return assemble(graphs, cfg.graph.superpixels)


def build_split_samples(cfg: RunConfig, manifest, split: str, fx: FeatureExtractor,
                        mending_cfg: training.MendingConfig) -> list[training.Sample]:
    root = Path(cfg.data.root)
    entries = manifest.split_entries(split)
    if not entries:
        raise DataError(f"manifest has no samples in split {split!r}")
    ids = [e.sample_id for e in entries]
    graphs = [sample_supergraph(manifest, e, cfg, fx, root) for e in entries]
    labels = [manifest.label_index(e.label) for e in entries]
    return training.prepare_samples(ids, graphs, labels, mending_cfg)


def _mending_config(cfg: RunConfig) -> training.MendingConfig:
    return training.MendingConfig(
        strategy=cfg.mending.strategy,
        temporal_only=cfg.mending.temporal_only,
        fixed_neighbors=cfg.mending.fixed_neighbors,
        random_edges_per_node=cfg.mending.random_edges_per_node,
        seed=cfg.training.seed,
    )


def build_model(cfg: RunConfig, feature_dim: int, class_count: int) -> training.SupergraphClassifier:
    total = cfg.graph.superpixels * cfg.data.timesteps
    return training.build_classifier(
        total_nodes=total, feature_dim=feature_dim, class_count=class_count,
        mending=_mending_config(cfg), gnn_kind=cfg.gnn.kind,
        gnn_hidden=cfg.gnn.hidden, gnn_heads=cfg.gnn.heads, gnn_out=cfg.gnn.out_dim,
        encoder_heads=cfg.encoder.heads, encoder_layers=cfg.encoder.layers,
        encoder_ffn_multiplier=cfg.encoder.ffn_multiplier,
        leaky_slope=cfg.gnn.leaky_slope, weighted_logits=cfg.gnn.weighted_logits,
        seed=cfg.training.seed)


def _loss_config(cfg: RunConfig, class_count: int) -> training.LossConfig:
    return training.LossConfig(class_count=class_count, penalty=cfg.loss.penalty,
                               norm=cfg.loss.norm, penalty_target=cfg.loss.penalty_target)


def _load_manifest(cfg: RunConfig):
    return dataio.read_manifest(Path(cfg.data.root) / "manifest.txt")


def _restore_model(cfg: RunConfig, checkpoint_path, feature_dim: int, class_count: int):
    model = build_model(cfg, feature_dim, class_count)
    _, tensors = dataio.load_checkpoint(checkpoint_path)
    try:
        model.load_state_arrays(tensors)
    except ContractError as exc:
        raise DataError(f"{checkpoint_path}: {exc}") from exc
    return model


# ---------------------------------------------------------------------------
# Commands


def _cmd_generate_data(args) -> None:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else Path(cfg.data.root)
    spec = dataio.SyntheticSpec(
        samples_per_class=cfg.data.samples_per_class,
        image_size=(cfg.data.image_width, cfg.data.image_height),
        timesteps=cfg.data.timesteps, noise=cfg.data.noise, seed=cfg.data.seed)
    manifest = dataio.generate_synthetic(spec, out)
    print(f"wrote {len(manifest.entries)} samples to {out}")


def _find_entry(manifest, sample_id):
    for e in manifest.entries:
        if e.sample_id == sample_id:
            return e
    raise DataError(f"sample {sample_id!r} not found in manifest")


def _write_matrix_csv(path, matrix: np.ndarray) -> None:
    lines = [",".join(diagnostics.format_float(v) for v in row) for row in np.atleast_2d(matrix)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_matrix_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            rows.append([float(v) for v in line.split(",")])
    return np.asarray(rows, dtype=np.float64)


def _cmd_segment(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    entry = _find_entry(manifest, args.sample)
    if not 0 <= args.frame < manifest.timesteps:
        raise ConfigError(f"frame index {args.frame} out of range for T={manifest.timesteps}")
    frames = dataio.load_sequence(manifest, entry, Path(cfg.data.root))
    fx = _feature_extractor(cfg)
    frame = frames[args.frame]
    seg = slic(frame, cfg.graph.superpixels, compactness=cfg.graph.compactness,
               max_iters=cfg.graph.slic_iters)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.sample}_t{args.frame}"
    np.savetxt(out / f"{stem}_labels.csv", seg.labels, fmt="%d", delimiter=",")
    _write_matrix_csv(out / f"{stem}_adjacency.csv", region_adjacency(seg))
    _write_matrix_csv(out / f"{stem}_features.csv", node_features(frame, seg, fx))
    print(f"segmented {stem}: {seg.segment_count} segments")


def _supergraph_meta_lines(sg: SuperGraph) -> list[str]:
    return [
        f"timesteps {sg.timesteps}",
        f"nodes_per_step {sg.nodes_per_step}",
        f"feature_dim {sg.feature_dim}",
        "padded " + ("".join("1" if p else "0" for p in sg.padded)),
    ]


def dump_supergraph(sg: SuperGraph, out_dir, stem: str) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(out_dir / f"{stem}_block_adjacency.csv", sg.block_adjacency)
    _write_matrix_csv(out_dir / f"{stem}_features.csv", sg.features)
    with open(out_dir / f"{stem}_meta.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(_supergraph_meta_lines(sg)) + "\n")


def load_supergraph_dump(out_dir, stem: str) -> SuperGraph:
    out_dir = Path(out_dir)
    meta = {}
    for line in (out_dir / f"{stem}_meta.txt").read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition(" ")
        meta[key] = value
    padded = np.array([c == "1" for c in meta["padded"]], dtype=bool)
    return SuperGraph(
        timesteps=int(meta["timesteps"]), nodes_per_step=int(meta["nodes_per_step"]),
        block_adjacency=_read_matrix_csv(out_dir / f"{stem}_block_adjacency.csv"),
        features=_read_matrix_csv(out_dir / f"{stem}_features.csv"),
        padded=padded)


def _cmd_build_supergraph(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    entry = _find_entry(manifest, args.sample)
    sg = sample_supergraph(manifest, entry, cfg, _feature_extractor(cfg), Path(cfg.data.root))
    dump_supergraph(sg, cfg.paths.out_dir, args.sample)
    print(f"supergraph {args.sample}: {sg.total_nodes} nodes, "
          f"{int(np.count_nonzero(sg.block_adjacency)) // 2} edges")


def _cmd_train(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    fx = _feature_extractor(cfg)
    mcfg = _mending_config(cfg)
    train_s = build_split_samples(cfg, manifest, "train", fx, mcfg)
    val_s = build_split_samples(cfg, manifest, "val", fx, mcfg)
    test_s = build_split_samples(cfg, manifest, "test", fx, mcfg)
    class_count = len(manifest.classes)
    model = build_model(cfg, train_s[0].supergraph.feature_dim, class_count)
    tcfg = training.TrainConfig(learning_rate=cfg.training.learning_rate,
                                max_epochs=cfg.training.max_epochs,
                                patience=cfg.training.patience, seed=cfg.training.seed)
    result = training.train(train_s, val_s, model, tcfg, _loss_config(cfg, class_count))
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.write_history_csv(out / "history.csv", result.history)
    dataio.save_checkpoint(out / "checkpoint.stbam", config_echo(cfg), result.best_state)
    test_metrics = training.evaluate(model, test_s, class_count)
    print(f"best epoch {result.best_epoch}: validation accuracy {result.best_val_accuracy:.4f}")
    print(f"test accuracy {test_metrics.accuracy:.4f}")


def _cmd_evaluate(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    fx = _feature_extractor(cfg)
    samples = build_split_samples(cfg, manifest, args.split, fx, _mending_config(cfg))
    class_count = len(manifest.classes)
    model = _restore_model(cfg, args.checkpoint, samples[0].supergraph.feature_dim, class_count)
    m = training.evaluate(model, samples, class_count)
    print(f"split {args.split}: accuracy {m.accuracy:.4f}")
    for cls, f1 in zip(manifest.classes, m.per_class_f1):
        print(f"f1[{cls}] {f1:.4f}")
    print(f"macro f1 {m.macro_f1:.4f}")
    print(f"weighted f1 {m.weighted_f1:.4f}")
    print("confusion " + ";".join(",".join(str(v) for v in row) for row in m.confusion))


def _cmd_diagnose(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    fx = _feature_extractor(cfg)
    samples = build_split_samples(cfg, manifest, args.split, fx, _mending_config(cfg))
    class_count = len(manifest.classes)
    model = _restore_model(cfg, args.checkpoint, samples[0].supergraph.feature_dim, class_count)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids, reports = [], []
    wanted = set(args.spectra)
    for sample in samples:
        mended = model.mend(sample)
        report = diagnostics.build_report(
            sample.supergraph.block_adjacency, mended.adjacency,
            sample.supergraph.features, padded=sample.supergraph.padded,
            include_padded=args.include_padded)
        ids.append(sample.sample_id)
        reports.append(report)
        if sample.sample_id in wanted:
            diagnostics.write_spectrum_csv(out / f"{sample.sample_id}_spectrum_before.csv",
                                           report.original.eigenvalues)
            diagnostics.write_spectrum_csv(out / f"{sample.sample_id}_spectrum_after.csv",
                                           report.mended.eigenvalues)
    diagnostics.write_report_csv(out / "diagnostics.csv", ids, reports)
    diagnostics.write_report_jsonl(out / "diagnostics.jsonl", ids, reports)
    print(f"diagnosed {len(reports)} samples; mean delta_rho "
          f"{float(np.mean([r.delta_rho for r in reports])):.4f}")


def _cmd_spectrum(args) -> None:
    cfg = load_config(args.config)
    manifest = _load_manifest(cfg)
    entry = _find_entry(manifest, args.sample)
    fx = _feature_extractor(cfg)
    sg = sample_supergraph(manifest, entry, cfg, fx, Path(cfg.data.root))
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eigs = diagnostics.spectrum(laplacian(sg.block_adjacency))
    diagnostics.write_spectrum_csv(out / f"{args.sample}_spectrum_before.csv", eigs)
    written = [f"{args.sample}_spectrum_before.csv"]
    if args.checkpoint:
        class_count = len(manifest.classes)
        model = _restore_model(cfg, args.checkpoint, sg.feature_dim, class_count)
        label = manifest.label_index(entry.label)
        sample = training.prepare_samples([entry.sample_id], [sg], [label], _mending_config(cfg))[0]
        mended = model.mend(sample)
        eigs_after = diagnostics.spectrum(laplacian(mended.adjacency))
        diagnostics.write_spectrum_csv(out / f"{args.sample}_spectrum_after.csv", eigs_after)
        written.append(f"{args.sample}_spectrum_after.csv")
    print("wrote " + ", ".join(written))


if __name__ == "__main__":
    sys.exit(main())
