"""Evaluation protocols: one class versus the rest for image datasets, and
frame-level scoring of tiled video frames."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from alps.config import VARIANTS
from alps.data import extract_patches, patch_grid, to_model_input
from alps.errors import ProtocolError
from alps.metrics import auroc, eer
from alps.models import Networks
from alps.scoring import ScoreSet, score_images, write_scores_csv


@dataclass
class FrameScore:
    frame_id: str
    patch_scores: np.ndarray
    frame_score: float
    label: int


@dataclass
class EvalReport:
    auroc: dict[str, float]
    eer: dict[str, float]
    chosen_variant: str
    labels: np.ndarray
    scores: dict[str, np.ndarray]
    sample_ids: list = field(default_factory=list)
    protocol: str = "class-vs-rest"
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    @property
    def n_inliers(self) -> int:
        return int((self.labels == 0).sum())

    @property
    def n_outliers(self) -> int:
        return int((self.labels == 1).sum())

    def summary(self) -> str:
        lines = [f"protocol: {self.protocol}",
                 f"samples: {self.n_samples} ({self.n_inliers} normal, {self.n_outliers} anomalous)"]
        lines += [f"{k}: {v}" for k, v in self.notes.items()]
        lines.append(f"{'variant':<10} {'AUROC':>8} {'EER':>8}")
        for v in VARIANTS:
            mark = "  <- chosen on validation" if v == self.chosen_variant else ""
            lines.append(f"{v:<10} {self.auroc[v]:8.4f} {self.eer[v]:8.4f}{mark}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "auroc", "eer", "chosen"])
            for v in VARIANTS:
                w.writerow([v, repr(self.auroc[v]), repr(self.eer[v]), int(v == self.chosen_variant)])
        write_scores_csv(out / "scores.csv", self.scores, self.labels, self.sample_ids)
        (out / "summary.txt").write_text(self.summary())


def build_report(scores: dict[str, np.ndarray], labels, chosen_variant: str, protocol: str,
                 sample_ids=None, notes=None) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    return EvalReport(auroc={v: auroc(scores[v], labels) for v in VARIANTS},
                      eer={v: eer(scores[v], labels) for v in VARIANTS},
                      chosen_variant=chosen_variant, labels=labels, scores=scores,
                      sample_ids=list(sample_ids or []), protocol=protocol, notes=dict(notes or {}))


def run_class_vs_rest(networks: Networks, images: np.ndarray, class_labels: np.ndarray, inlier_class: int,
                      chosen_variant: str = "mean") -> EvalReport:
    """Score the whole test split; every class other than ``inlier_class`` counts as an anomaly."""
    class_labels = np.asarray(class_labels)
    if not (class_labels == inlier_class).any():
        raise ProtocolError(f"inlier class {inlier_class} is absent from the test split")
    x = to_model_input(images, networks.config.resolution)
    labels = (class_labels != inlier_class).astype(np.int64)
    scores = score_images(networks, x, labels)
    return build_report({v: scores.variant(v) for v in VARIANTS}, labels, chosen_variant, "class-vs-rest",
                        notes={"inlier_class": str(inlier_class)})


def mean_auroc(reports: list[EvalReport], variant: str | None = None) -> float:
    """Unweighted mean over per-class reports, each at its chosen variant unless one is given."""
    return float(np.mean([r.auroc[variant or r.chosen_variant] for r in reports]))


def aggregate(patch_scores: np.ndarray, how: str) -> np.ndarray:
    """Reduce the last axis of ``patch_scores`` (one row per frame)."""
    if how == "max":
        return np.max(patch_scores, axis=-1)
    if how == "mean":
        return np.mean(patch_scores, axis=-1)
    raise ValueError(f"aggregation must be 'max' or 'mean', got {how!r}")


def score_frames(networks: Networks, frames: np.ndarray, patch_size: int = 30) -> ScoreSet:
    """Patch-level scores for every frame, flattened frame-major, row-major within a frame."""
    patches = np.concatenate([extract_patches(f, patch_size) for f in frames])
    return score_images(networks, to_model_input(patches, networks.config.resolution))


def run_frame_protocol(networks: Networks, frames: np.ndarray, frame_labels, patch_size: int = 30,
                       aggregation: str = "max", chosen_variant: str = "mean",
                       frame_ids=None) -> tuple[EvalReport, list[FrameScore]]:
    """Frame-level AUROC/EER.  Each frame is tiled into ``patch_size`` squares and, per score
    variant, its patch scores are reduced to one frame score by ``aggregation``."""
    frames = np.asarray(frames)
    rows, cols = patch_grid(frames.shape[1:], patch_size)
    per_frame = rows * cols
    patch_scores = score_frames(networks, frames, patch_size)
    grids = {v: patch_scores.variant(v).reshape(len(frames), per_frame) for v in VARIANTS}
    frame_scores = {v: aggregate(grids[v], aggregation) for v in VARIANTS}
    ids = [str(i) for i in frame_ids] if frame_ids is not None else [str(i) for i in range(len(frames))]
    report = build_report(frame_scores, frame_labels, chosen_variant, "frames", ids,
                          notes={"patches_per_frame": str(per_frame), "aggregation": aggregation})
    details = [FrameScore(ids[i], grids[chosen_variant][i], float(frame_scores[chosen_variant][i]),
                          int(report.labels[i])) for i in range(len(frames))]
    return report, details
