"""Cluster labeling by binomial-tail significance, model fit/persist/predict.

A cluster is named after the label whose count inside the cluster is least
likely under the label's overall dataset proportion: the upper-tail binomial
probability Pr(X >= k) with k the in-cluster label count, n the cluster size
and p the dataset proportion. Prediction projects an unseen sub-episode into
histogram space and inherits the cluster (and label) of its nearest training
row; nearest neighbors in the outlier group yield "Unclassified".

The nearest-neighbor search runs in the 25-dimensional histogram space, not
the t-SNE plane: the embedding is transductive and cannot place unseen
points, while the histogram space is where train and test live on equal
terms.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from . import qrs as qrs_mod
from .cluster import ClusterAssignment, dbscan, k_distance
from .config import PipelineConfig
from .core import (
    LABEL_ORDER,
    UNCLASSIFIED,
    Episode,
    RhythmClass,
    SubEpisode,
    assign_segmented_labels,
    label_rows,
    propagate_global_labels,
    segment_episode,
)
from .embedding import histogram, histogram_bounds, lorenz_points, rr_series, tsne
from .noisegate import EmdParams, NoiseGateParams, detect_noise, is_noisy

#: cluster id reported for sub-episodes the noise gate labeled directly
GATED_NOISE_CLUSTER = -2

_LABEL_INDEX = {lab: i for i, lab in enumerate(LABEL_ORDER)}


class TrainingError(ValueError):
    pass


class DegenerateClusteringError(TrainingError):
    """Clustering produced no clusters; carries the k-distance diagnostic."""

    def __init__(self, message: str, k_distances: np.ndarray):
        super().__init__(message)
        self.k_distances = k_distances


class ModelFormatError(ValueError):
    pass


def binom_tail(k: int, n: int, p: float) -> float:
    """Upper-tail binomial probability Pr(X >= k) for X ~ Binomial(n, p).

    Evaluated through the regularized incomplete beta function, which stays
    accurate where direct summation would underflow.
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"need 0 <= p <= 1, got p={p}")
    if k == 0:
        return 1.0
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    return float(betainc(k, n - k + 1, p))


@dataclass(frozen=True)
class LabelStat:
    k_cl: int
    p_l: float
    p_value: float


@dataclass(frozen=True)
class ClusterLabelStats:
    cluster_id: int
    n_c: int
    label: RhythmClass
    p_value: float
    per_label: dict[RhythmClass, LabelStat]


def label_clusters(
    assignment: ClusterAssignment, row_labels: list[RhythmClass]
) -> dict[int, ClusterLabelStats]:
    """Name every cluster by its most significant label.

    row_labels must align with assignment.labels (one training row each).
    The outlier group (-1) is never labeled. Ties in the minimal p-value are
    broken by the fixed label order.
    """
    labels_arr = assignment.labels
    if len(labels_arr) != len(row_labels):
        raise ValueError("assignment and row labels differ in length")
    d = len(row_labels)
    d_l = {lab: 0 for lab in LABEL_ORDER}
    for lab in row_labels:
        d_l[lab] += 1
    present = [lab for lab in LABEL_ORDER if d_l[lab] > 0]
    if not present:
        raise ValueError("no labeled rows")

    cluster_ids = sorted(int(c) for c in set(labels_arr.tolist()) if c >= 0)
    if not cluster_ids:
        raise ValueError("no clusters to label (all rows are outliers)")

    out: dict[int, ClusterLabelStats] = {}
    for cid in cluster_ids:
        member_idx = np.flatnonzero(labels_arr == cid)
        n_c = int(member_idx.size)
        stats: dict[RhythmClass, LabelStat] = {}
        best_label = None
        best_p = np.inf
        for lab in present:
            k_cl = int(sum(1 for i in member_idx if row_labels[i] == lab))
            p_l = d_l[lab] / d
            p_value = binom_tail(k_cl, n_c, p_l)
            stats[lab] = LabelStat(k_cl=k_cl, p_l=p_l, p_value=p_value)
            if p_value < best_p:
                best_p = p_value
                best_label = lab
        out[cid] = ClusterLabelStats(
            cluster_id=cid, n_c=n_c, label=best_label, p_value=best_p, per_label=stats
        )
    return out


# ---------------------------------------------------------------------------
# the persisted model


@dataclass
class RhythmModel:
    format_version: int
    config: dict  # full pipeline configuration as a plain dict
    bounds_s: float
    train_vectors: np.ndarray  # (R, grid*grid) float64
    train_xy: np.ndarray  # (R, 2) t-SNE coordinates
    train_cluster: np.ndarray  # (R,) cluster id, -1 outlier
    train_label_idx: np.ndarray  # (R,) index into LABEL_ORDER
    train_refs: list[tuple[str, int]]
    cluster_stats: dict[int, ClusterLabelStats]
    outlier_fraction: float
    label_proportions: dict[str, float]
    kl_trace: list[tuple[int, float]] = field(default_factory=list)

    FORMAT_VERSION = 1

    @property
    def noise_gate_enabled(self) -> bool:
        return bool(self.config["noise_gate"]["enabled"])

    def row_label(self, row: int) -> RhythmClass:
        return LABEL_ORDER[int(self.train_label_idx[row])]


@dataclass(frozen=True)
class Prediction:
    sub_ref: tuple[str, int]
    label: str  # RhythmClass value or "Unclassified"
    cluster_id: int
    p_value: float
    nn_distance: float


# ---------------------------------------------------------------------------
# feature extraction shared by fit and predict


def _gate_params(cfg: PipelineConfig) -> tuple[NoiseGateParams, EmdParams]:
    g = cfg.noise_gate
    return (
        NoiseGateParams(
            quantile=g.quantile,
            window_s=g.window_s,
            nzc_min=g.nzc_min,
            gate_min_s=g.gate_min_s,
            hf_imf_count=g.hf_imf_count,
        ),
        EmdParams(
            ensemble=g.ensemble,
            noise_std_frac=g.noise_std_frac,
            max_sift=g.max_sift,
            seed=cfg.seed,
        ),
    )


def _qrs_params(cfg: PipelineConfig) -> qrs_mod.QrsParams:
    q = cfg.qrs
    return qrs_mod.QrsParams(
        kde_bandwidth_s=q.kde_bandwidth_s,
        min_support=q.min_support,
        refractory_s=q.refractory_s,
        matched_threshold=q.matched_threshold,
        maxima_mad_factor=q.maxima_mad_factor,
    )


@dataclass
class SubFeatures:
    sub: SubEpisode
    gated_noisy: bool
    points: np.ndarray  # Lorenz points (m, 2)


def _extract_features(
    subs: list[SubEpisode], cfg: PipelineConfig, apply_gate: bool
) -> list[SubFeatures]:
    gate_params, emd_params = _gate_params(cfg)
    qrs_params = _qrs_params(cfg)

    def one(sub: SubEpisode) -> SubFeatures:
        noisy = False
        if apply_gate:
            noisy = is_noisy(detect_noise(sub, gate_params, emd_params))
        peaks = qrs_mod.consensus_peaks(sub, qrs_params)
        points = lorenz_points(rr_series(peaks))
        return SubFeatures(sub=sub, gated_noisy=noisy, points=points)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, subs))
    return [one(s) for s in subs]


def _segment_and_label(episode: Episode, window_s: float) -> list[SubEpisode]:
    subs = segment_episode(episode, window_s)
    if episode.has_global_labels_only():
        return propagate_global_labels(episode, subs)
    return assign_segmented_labels(episode, subs)


# ---------------------------------------------------------------------------
# fit


def fit(train_episodes: list[Episode], cfg: PipelineConfig | None = None) -> RhythmModel:
    """Run the training pipeline end to end and assemble the model.

    Stages: segmentation and label inheritance, optional noise-gate removal,
    consensus R-peaks, interval-difference histograms, t-SNE, DBSCAN,
    binomial cluster labeling.
    """
    cfg = cfg or PipelineConfig()
    if not train_episodes:
        raise TrainingError("no training episodes")

    labeled_subs: list[SubEpisode] = []
    for ep in train_episodes:
        labeled_subs.extend(_segment_and_label(ep, cfg.window_s))
    if not labeled_subs:
        raise TrainingError("segmentation left no labeled sub-episodes")

    feats = _extract_features(labeled_subs, cfg, apply_gate=cfg.noise_gate.enabled)
    kept = [f for f in feats if not f.gated_noisy]
    if len(kept) < cfg.min_corpus_size:
        raise TrainingError(
            f"{len(kept)} sub-episodes after noise removal is below the "
            f"minimum corpus size {cfg.min_corpus_size}"
        )

    if cfg.histogram.bounds_s is not None:
        bounds = float(cfg.histogram.bounds_s)
    else:
        all_drr = np.concatenate(
            [np.abs(f.points).ravel() for f in kept if len(f.points)] or [np.zeros(1)]
        )
        bounds = histogram_bounds(all_drr, cfg.histogram.bounds_percentile)

    grid = cfg.histogram.grid
    rows_vec: list[np.ndarray] = []
    rows_label: list[RhythmClass] = []
    rows_ref: list[tuple[str, int]] = []
    for f in kept:
        hist = histogram(f.points, grid=grid, bounds_s=bounds)
        vec = hist.counts.astype(np.float64)
        for _, lab in label_rows([f.sub]):
            rows_vec.append(vec)
            rows_label.append(lab)
            rows_ref.append(f.sub.ref)
    vectors = np.asarray(rows_vec)

    t = cfg.tsne
    result = tsne(
        vectors,
        perplexity=t.perplexity,
        n_iter=t.n_iter,
        seed=cfg.seed,
        early_exaggeration=t.early_exaggeration,
        exaggeration_iters=t.exaggeration_iters,
        learning_rate=t.learning_rate,
        trace_every=t.trace_every,
    )

    assignment = dbscan(result.coords, eps=cfg.dbscan.eps, min_pts=cfg.dbscan.min_pts)
    if assignment.n_clusters == 0:
        diag = k_distance(result.coords, k=4)
        raise DegenerateClusteringError(
            "DBSCAN marked every training row an outlier; inspect the attached "
            "k-distance curve and adjust dbscan.eps / dbscan.min_pts",
            k_distances=diag,
        )

    stats = label_clusters(assignment, rows_label)

    d = len(rows_label)
    proportions = {
        lab.value: sum(1 for r in rows_label if r == lab) / d for lab in LABEL_ORDER
    }
    return RhythmModel(
        format_version=RhythmModel.FORMAT_VERSION,
        config=cfg.to_dict(),
        bounds_s=bounds,
        train_vectors=vectors,
        train_xy=result.coords,
        train_cluster=assignment.labels,
        train_label_idx=np.asarray([_LABEL_INDEX[l] for l in rows_label], dtype=np.int16),
        train_refs=rows_ref,
        cluster_stats=stats,
        outlier_fraction=assignment.outlier_fraction,
        label_proportions=proportions,
        kl_trace=result.kl_trace,
    )


# ---------------------------------------------------------------------------
# predict


def _resolve_overrides(
    stats: ClusterLabelStats, overrides: dict[str, float]
) -> tuple[str, float] | None:
    """Smallest-threshold override whose p-value clears its bar, if any."""
    fired = []
    for name, thr in overrides.items():
        lab = RhythmClass(name)
        stat = stats.per_label.get(lab)
        if stat is not None and stat.p_value < thr:
            fired.append((thr, _LABEL_INDEX[lab], lab, stat.p_value))
    if not fired:
        return None
    fired.sort()
    _, _, lab, p = fired[0]
    return lab.value, p


def predict(
    model: RhythmModel,
    episode: Episode,
    overrides: dict[str, float] | None = None,
) -> list[Prediction]:
    """Label each sub-episode of an unseen episode via 1-NN in histogram space.

    When the model was trained with the noise gate enabled, the gate runs
    here too and flagged sub-episodes are labeled Noise directly. overrides
    maps label name -> p-value threshold (see predict_with_overrides).
    """
    from .config import config_from_dict

    cfg = config_from_dict(model.config)
    subs = segment_episode(episode, cfg.window_s)
    feats = _extract_features(subs, cfg, apply_gate=model.noise_gate_enabled)
    return _predict_features(model, cfg, feats, overrides)


def _predict_features(
    model: RhythmModel,
    cfg: PipelineConfig,
    feats: list[SubFeatures],
    overrides: dict[str, float] | None,
) -> list[Prediction]:
    if overrides is None:
        overrides = dict(cfg.overrides)

    grid = cfg.histogram.grid
    out: list[Prediction] = []
    for f in feats:
        if f.gated_noisy:
            out.append(
                Prediction(
                    sub_ref=f.sub.ref,
                    label=RhythmClass.NOISE.value,
                    cluster_id=GATED_NOISE_CLUSTER,
                    p_value=float("nan"),
                    nn_distance=float("nan"),
                )
            )
            continue
        vec = histogram(f.points, grid=grid, bounds_s=model.bounds_s).counts.astype(np.float64)
        diffs = model.train_vectors - vec
        dists = np.sqrt((diffs * diffs).sum(axis=1))
        nn = int(np.argmin(dists))
        cid = int(model.train_cluster[nn])
        if cid < 0:
            out.append(
                Prediction(
                    sub_ref=f.sub.ref,
                    label=UNCLASSIFIED,
                    cluster_id=-1,
                    p_value=float("nan"),
                    nn_distance=float(dists[nn]),
                )
            )
            continue
        stats = model.cluster_stats[cid]
        label, p_value = stats.label.value, stats.p_value
        hit = _resolve_overrides(stats, overrides) if overrides else None
        if hit is not None:
            label, p_value = hit
        out.append(
            Prediction(
                sub_ref=f.sub.ref,
                label=label,
                cluster_id=cid,
                p_value=p_value,
                nn_distance=float(dists[nn]),
            )
        )
    return out


def predict_with_overrides(
    model: RhythmModel, episode: Episode, overrides: dict[str, float]
) -> list[Prediction]:
    """predict() with per-label p-value override thresholds forced on."""
    return predict(model, episode, overrides=overrides)


def predict_dataset(
    model: RhythmModel,
    episodes: list[Episode],
    overrides: dict[str, float] | None = None,
) -> list[Prediction]:
    """predict() over many episodes with one shared feature-extraction pool."""
    from .config import config_from_dict

    cfg = config_from_dict(model.config)
    all_subs: list[SubEpisode] = []
    for ep in episodes:
        all_subs.extend(segment_episode(ep, cfg.window_s))
    feats = _extract_features(all_subs, cfg, apply_gate=model.noise_gate_enabled)
    return _predict_features(model, cfg, feats, overrides)


# ---------------------------------------------------------------------------
# model container format

_MAGIC = b"SECGKITMODEL\x00"


def save_model(model: RhythmModel, path: str) -> None:
    """Serialize to a self-describing binary container with stable bytes."""
    arrays = [
        ("train_vectors", model.train_vectors.astype(np.float64)),
        ("train_xy", model.train_xy.astype(np.float64)),
        ("train_cluster", model.train_cluster.astype(np.int64)),
        ("train_label_idx", model.train_label_idx.astype(np.int16)),
    ]
    header = {
        "format_version": model.format_version,
        "config": model.config,
        "bounds_s": model.bounds_s,
        "outlier_fraction": model.outlier_fraction,
        "label_proportions": model.label_proportions,
        "label_order": [lab.value for lab in LABEL_ORDER],
        "train_refs": [[pid, idx] for pid, idx in model.train_refs],
        "kl_trace": [[it, kl] for it, kl in model.kl_trace],
        "cluster_stats": {
            str(cid): {
                "n_c": st.n_c,
                "label": st.label.value,
                "p_value": st.p_value,
                "per_label": {
                    lab.value: {"k_cl": s.k_cl, "p_l": s.p_l, "p_value": s.p_value}
                    for lab, s in st.per_label.items()
                },
            }
            for cid, st in sorted(model.cluster_stats.items())
        },
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    from .data import atomic_write_bytes

    payload = bytearray()
    payload += _MAGIC
    payload += struct.pack("<I", len(blob))
    payload += blob
    for _, arr in arrays:
        payload += np.ascontiguousarray(arr).tobytes()
    atomic_write_bytes(path, bytes(payload))


def load_model(path: str) -> RhythmModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(_MAGIC):
        raise ModelFormatError(f"{path} is not a model file")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    version = header.get("format_version")
    if version != RhythmModel.FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {version} not supported "
            f"(expected {RhythmModel.FORMAT_VERSION})"
        )
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arrays[spec["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=off
        ).reshape(shape).copy()
        off += nbytes

    by_name = {lab.value: lab for lab in LABEL_ORDER}
    stats: dict[int, ClusterLabelStats] = {}
    for cid_str, st in header["cluster_stats"].items():
        per = {
            by_name[name]: LabelStat(
                k_cl=int(v["k_cl"]), p_l=float(v["p_l"]), p_value=float(v["p_value"])
            )
            for name, v in st["per_label"].items()
        }
        stats[int(cid_str)] = ClusterLabelStats(
            cluster_id=int(cid_str),
            n_c=int(st["n_c"]),
            label=by_name[st["label"]],
            p_value=float(st["p_value"]),
            per_label=per,
        )

    return RhythmModel(
        format_version=version,
        config=header["config"],
        bounds_s=float(header["bounds_s"]),
        train_vectors=arrays["train_vectors"],
        train_xy=arrays["train_xy"],
        train_cluster=arrays["train_cluster"],
        train_label_idx=arrays["train_label_idx"],
        train_refs=[(pid, int(idx)) for pid, idx in header["train_refs"]],
        cluster_stats=stats,
        outlier_fraction=float(header["outlier_fraction"]),
        label_proportions=header["label_proportions"],
        kl_trace=[(int(it), float(kl)) for it, kl in header["kl_trace"]],
    )
