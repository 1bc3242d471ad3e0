"""secgkit: semi-supervised labeling of single-lead sECG episodes.

Pipeline: 10 s segmentation, ensemble-EMD noise gating, four-detector R-peak
consensus, interval-difference (Lorenz) histograms, exact t-SNE, DBSCAN, and
binomial-significance cluster labeling with 1-NN prediction.
"""

from .classify import (
    RhythmModel,
    binom_tail,
    fit,
    label_clusters,
    load_model,
    predict,
    predict_dataset,
    predict_with_overrides,
    save_model,
)
from .cluster import dbscan, k_distance
from .config import PipelineConfig, load_config
from .core import (
    Episode,
    LabelSpan,
    RhythmClass,
    SubEpisode,
    assign_segmented_labels,
    propagate_global_labels,
    segment_episode,
)
from .data import SynthSpec, load_dataset, save_dataset, synth_corpus, synth_episode
from .embedding import histogram, lorenz_points, rr_series, tsne
from .emd import ImfStack, ceemdan, emd_decompose
from .metrics import ClassReport, noise_gate_audit, score
from .noisegate import NoiseGateParams, detect_noise, jaccard
from .qrs import RPeaks, consensus_peaks, fuse_kde

__version__ = "0.1.0"

__all__ = [
    "ClassReport",
    "Episode",
    "ImfStack",
    "LabelSpan",
    "NoiseGateParams",
    "PipelineConfig",
    "RPeaks",
    "RhythmClass",
    "RhythmModel",
    "SubEpisode",
    "SynthSpec",
    "assign_segmented_labels",
    "binom_tail",
    "ceemdan",
    "consensus_peaks",
    "dbscan",
    "detect_noise",
    "emd_decompose",
    "fit",
    "fuse_kde",
    "histogram",
    "jaccard",
    "k_distance",
    "label_clusters",
    "load_config",
    "load_dataset",
    "load_model",
    "lorenz_points",
    "noise_gate_audit",
    "predict",
    "predict_dataset",
    "predict_with_overrides",
    "propagate_global_labels",
    "rr_series",
    "save_dataset",
    "save_model",
    "score",
    "segment_episode",
    "synth_corpus",
    "synth_episode",
    "tsne",
]
