"""Batch command-line interface.

Subcommands: synth, train, predict, evaluate, noise-scan, embed. Every
command exits 0 on success and non-zero with a diagnostic naming the failing
stage; report-style commands write figures next to their delimited outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import classify, figures, metrics
from .config import ConfigError, PipelineConfig, load_config
from .core import LABEL_ORDER, RhythmClass, segment_episode
from .data import (
    DEFAULT_CLASS_MIX,
    DatasetError,
    atomic_write_text,
    load_dataset,
    save_dataset,
    save_truth,
    synth_corpus,
)
from .embedding import EmbeddedPoint, PointSource, tsne
from .noisegate import detect_noise


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _parse_overrides(pairs: list[str] | None) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in pairs or []:
        if "=" not in item:
            raise StageError("arguments", f"--override expects label=threshold, got {item!r}")
        name, _, raw = item.partition("=")
        if name not in {lab.value for lab in LABEL_ORDER}:
            raise StageError("arguments", f"unknown label in --override: {name!r}")
        try:
            out[name] = float(raw)
        except ValueError:
            raise StageError("arguments", f"bad threshold in --override {item!r}") from None
    return out


def _parse_class_mix(text: str | None) -> dict[RhythmClass, float]:
    if not text:
        return dict(DEFAULT_CLASS_MIX)
    by_name = {lab.value: lab for lab in LABEL_ORDER}
    mix: dict[RhythmClass, float] = {}
    for item in text.split(","):
        name, _, raw = item.partition("=")
        name = name.strip()
        if name not in by_name:
            raise StageError("arguments", f"unknown class in --class-mix: {name!r}")
        mix[by_name[name]] = float(raw)
    return mix


def _parse_sets(pairs: list[str] | None) -> list[tuple[str, object]]:
    out = []
    for item in pairs or []:
        if "=" not in item:
            raise StageError("arguments", f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((key, value))
    return out


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    try:
        cfg = load_config(path=args.config, sets=_parse_sets(getattr(args, "set", None)))
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if getattr(args, "workers", None) is not None:
            cfg.workers = args.workers
        if getattr(args, "no_noise_gate", False):
            cfg.noise_gate.enabled = False
        if getattr(args, "override", None):
            cfg.overrides.update(_parse_overrides(args.override))
        return cfg
    except ConfigError as exc:
        raise StageError("configuration", str(exc)) from exc


def _load_episodes(path: str, stage: str):
    try:
        return load_dataset(path)
    except (OSError, DatasetError) as exc:
        raise StageError(stage, f"{path}: {exc}") from exc


def _truth_pairs(episodes, window_s: float):
    """(sub_ref, label) pairs derived from a labeled dataset."""
    pairs = []
    for ep in episodes:
        subs = classify._segment_and_label(ep, window_s)
        for sub in subs:
            for lab in sub.inherited_labels:
                pairs.append((sub.ref, lab))
    return pairs


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args: argparse.Namespace) -> int:
    mix = _parse_class_mix(args.class_mix)
    train, test, truths = synth_corpus(args.n_train, args.n_test, args.seed, class_mix=mix)
    os.makedirs(args.out_dir, exist_ok=True)
    save_dataset(train, os.path.join(args.out_dir, "train.jsonl"), variant="train")
    save_dataset(test, os.path.join(args.out_dir, "test.jsonl"), variant="test")
    save_truth([truths[ep.id] for ep in train], os.path.join(args.out_dir, "train.truth.jsonl"))
    save_truth([truths[ep.id] for ep in test], os.path.join(args.out_dir, "test.truth.jsonl"))
    print(f"wrote {len(train)} train / {len(test)} test episodes to {args.out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    episodes = _load_episodes(args.input, "load-dataset")
    try:
        model = classify.fit(episodes, cfg)
    except classify.DegenerateClusteringError as exc:
        base = os.path.splitext(args.output)[0]
        diag_txt = base + ".kdistance.tsv"
        atomic_write_text(
            diag_txt, "\n".join(repr(float(v)) for v in exc.k_distances) + "\n"
        )
        figures.save_kdistance_plot(exc.k_distances, base + ".kdistance.png")
        raise StageError(
            "clustering", f"{exc} (diagnostic written to {diag_txt})"
        ) from exc
    except classify.TrainingError as exc:
        raise StageError("training", str(exc)) from exc
    classify.save_model(model, args.output)
    n_clusters = len(model.cluster_stats)
    print(
        f"model written to {args.output}: {len(model.train_vectors)} rows, "
        f"{n_clusters} clusters, outlier fraction {model.outlier_fraction:.3f}, "
        f"histogram half-range {model.bounds_s:.1f}s"
    )
    return 0


def _format_float(x: float) -> str:
    return repr(float(x))


def cmd_predict(args: argparse.Namespace) -> int:
    try:
        model = classify.load_model(args.model)
    except (OSError, classify.ModelFormatError) as exc:
        raise StageError("load-model", f"{args.model}: {exc}") from exc
    if getattr(args, "workers", None) is not None:
        model.config["workers"] = args.workers
    episodes = _load_episodes(args.input, "load-dataset")
    overrides = _parse_overrides(args.override) or None
    lines = ["episode_id\tsub_index\tlabel\tcluster_id\tp_value\tnn_distance"]
    for pred in classify.predict_dataset(model, episodes, overrides=overrides):
        lines.append(
            "\t".join(
                [
                    pred.sub_ref[0],
                    str(pred.sub_ref[1]),
                    pred.label,
                    str(pred.cluster_id),
                    _format_float(pred.p_value),
                    _format_float(pred.nn_distance),
                ]
            )
        )
    atomic_write_text(args.output, "\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} sub-episode predictions to {args.output}")
    return 0


def load_predictions(path: str) -> dict[tuple[str, int], str]:
    preds: dict[tuple[str, int], str] = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("episode_id\t"):
            raise DatasetError(f"{path}: not a predictions file")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                continue
            preds[(parts[0], int(parts[1]))] = parts[2]
    return preds


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    truth_eps = _load_episodes(args.truth, "load-truth")
    truth = _truth_pairs(truth_eps, cfg.window_s)
    if not truth:
        raise StageError("truth", "no labeled sub-episodes in the truth dataset")

    reports: dict[str, metrics.ClassReport] = {}
    for item in args.predictions:
        name, _, path = item.partition("=")
        if not path:
            name, path = os.path.splitext(os.path.basename(item))[0], item
        try:
            preds = load_predictions(path)
        except (OSError, DatasetError) as exc:
            raise StageError("load-predictions", str(exc)) from exc
        try:
            reports[name] = metrics.score(preds, truth)
        except metrics.ScoringError as exc:
            raise StageError("scoring", f"{path}: {exc}") from exc

    os.makedirs(args.output, exist_ok=True)
    table = metrics.format_comparison(reports)
    atomic_write_text(os.path.join(args.output, "report.txt"), table + "\n")
    atomic_write_text(os.path.join(args.output, "report.json"), metrics.report_to_json(reports) + "\n")
    for name, rep in reports.items():
        figures.save_confusion_heatmap(
            rep, os.path.join(args.output, f"confusion_{name}.png"), title=f"confusion: {name}"
        )
    figures.save_f1_bars(reports, os.path.join(args.output, "f1_by_class.png"))
    print(table)
    print(f"report written to {args.output}")
    return 0


def cmd_noise_scan(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    episodes = _load_episodes(args.input, "load-dataset")
    gate_params, emd_params = classify._gate_params(cfg)

    lines = ["episode_id\tsub_index\tstart_s\tend_s"]
    detected: set[tuple[str, int]] = set()
    for ep in episodes:
        for sub in segment_episode(ep, cfg.window_s):
            segs = detect_noise(sub, gate_params, emd_params)
            if segs:
                detected.add(sub.ref)
            for seg in segs:
                lines.append(
                    f"{ep.id}\t{sub.index}\t{_format_float(seg.start_s)}\t{_format_float(seg.end_s)}"
                )
    os.makedirs(args.output, exist_ok=True)
    atomic_write_text(os.path.join(args.output, "segments.tsv"), "\n".join(lines) + "\n")

    labeled = [ep for ep in episodes if ep.labels]
    if labeled:
        truth = _truth_pairs(labeled, cfg.window_s)
        ratios = metrics.noise_gate_audit(detected, truth)
        atomic_write_text(
            os.path.join(args.output, "audit.json"),
            json.dumps({"detected_ratio_by_label": ratios}, indent=2) + "\n",
        )
        figures.save_audit_bars(ratios, os.path.join(args.output, "audit.png"))
    print(f"{len(detected)} sub-episodes flagged; outputs in {args.output}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    if bool(args.model) == bool(args.input):
        raise StageError("arguments", "embed needs exactly one of --model or --input")
    os.makedirs(args.output, exist_ok=True)
    points: list[EmbeddedPoint] = []
    if args.model:
        try:
            model = classify.load_model(args.model)
        except (OSError, classify.ModelFormatError) as exc:
            raise StageError("load-model", f"{args.model}: {exc}") from exc
        for i, ref in enumerate(model.train_refs):
            points.append(
                EmbeddedPoint(
                    sub_ref=ref,
                    xy=(float(model.train_xy[i, 0]), float(model.train_xy[i, 1])),
                    source=PointSource.TRAIN,
                    label=model.row_label(i).value,
                )
            )
        figures.save_cluster_scatter(
            model.train_xy, model.train_cluster,
            os.path.join(args.output, "clusters.png"),
        )
    else:
        cfg = _build_config(args)
        episodes = _load_episodes(args.input, "load-dataset")
        subs, labels = [], []
        for ep in episodes:
            got = classify._segment_and_label(ep, cfg.window_s) if ep.labels else segment_episode(ep, cfg.window_s)
            for sub in got:
                subs.append(sub)
                labels.append(sub.inherited_labels[0].value if sub.inherited_labels else None)
        feats = classify._extract_features(subs, cfg, apply_gate=False)
        from .embedding import histogram, histogram_bounds

        all_drr = np.concatenate([np.abs(f.points).ravel() for f in feats if len(f.points)] or [np.zeros(1)])
        bounds = cfg.histogram.bounds_s or histogram_bounds(all_drr, cfg.histogram.bounds_percentile)
        vectors = np.asarray(
            [histogram(f.points, cfg.histogram.grid, bounds).counts.astype(float) for f in feats]
        )
        t = cfg.tsne
        try:
            res = tsne(vectors, perplexity=t.perplexity, n_iter=t.n_iter, seed=cfg.seed,
                       early_exaggeration=t.early_exaggeration,
                       exaggeration_iters=t.exaggeration_iters,
                       learning_rate=t.learning_rate, trace_every=t.trace_every)
        except ValueError as exc:
            raise StageError("embedding", str(exc)) from exc
        for sub, lab, xy in zip(subs, labels, res.coords):
            points.append(EmbeddedPoint(sub_ref=sub.ref, xy=(float(xy[0]), float(xy[1])),
                                        source=PointSource.TEST, label=lab))

    lines = ["episode_id\tsub_index\tx\ty\tsource\tlabel"]
    for p in points:
        lines.append(
            "\t".join([p.sub_ref[0], str(p.sub_ref[1]), _format_float(p.xy[0]),
                       _format_float(p.xy[1]), p.source.value, p.label or ""])
        )
    atomic_write_text(os.path.join(args.output, "embedding.tsv"), "\n".join(lines) + "\n")
    figures.save_embedding_scatter(points, os.path.join(args.output, "embedding.png"))
    print(f"wrote {len(points)} embedded points to {args.output}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser, *, seed: bool = True) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config value (dotted path); repeatable")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--workers", type=int, default=None, help="parallel workers")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secgkit", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-mix", help="e.g. Normal=0.49,Pause=0.10,...")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model on a labeled dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="model file to write")
    p.add_argument("--no-noise-gate", action="store_true")
    p.add_argument("--override", action="append", metavar="LABEL=THRESHOLD",
                   help="per-label p-value override; persisted in the model")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="predictions TSV to write")
    p.add_argument("--override", action="append", metavar="LABEL=THRESHOLD")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score prediction files against a labeled dataset")
    p.add_argument("--predictions", action="append", required=True,
                   metavar="[NAME=]PATH", help="repeatable for side-by-side variants")
    p.add_argument("--truth", required=True, help="dataset with reference labels")
    p.add_argument("--output", required=True, help="report directory")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise-scan", help="run only the noise gate over a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_noise_scan)

    p = sub.add_parser("embed", help="export the 2D embedding as TSV + scatter")
    p.add_argument("--model", help="dump a trained model's stored embedding")
    p.add_argument("--input", help="or embed a dataset from scratch")
    p.add_argument("--output", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"secgkit {args.command}: [{exc.stage}] {exc}", file=sys.stderr)
        return 2
    except (DatasetError, ConfigError, ValueError) as exc:
        print(f"secgkit {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
