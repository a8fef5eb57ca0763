"""Reconstruction-error anomaly scores.

Each sample gets three raw scores: the plain reconstruction MSE, the MSE with
the distorter's perturbation added to the latent code, and their average.
Averaging happens on raw values; min-max scaling is applied per evaluated
split afterwards and never changes rankings.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from alps import tensor as T
from alps.config import VARIANTS
from alps.metrics import auroc
from alps.models import Networks


@dataclass(frozen=True)
class ScoreTriple:
    plain: float
    perturbed: float
    mean: float


@dataclass
class ScoreSet:
    plain: np.ndarray
    perturbed: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.plain = np.asarray(self.plain, dtype=np.float64)
        self.perturbed = np.asarray(self.perturbed, dtype=np.float64)
        if self.plain.shape != self.perturbed.shape:
            raise ValueError("plain and perturbed scores are not aligned")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.plain.shape:
                raise ValueError("labels are not aligned with scores")

    @property
    def mean(self) -> np.ndarray:
        return (self.plain + self.perturbed) / 2

    def variant(self, name: str) -> np.ndarray:
        if name not in VARIANTS:
            raise ValueError(f"unknown score variant {name!r}")
        return getattr(self, name)

    def triple(self, i: int) -> ScoreTriple:
        return ScoreTriple(float(self.plain[i]), float(self.perturbed[i]), float(self.mean[i]))

    def __len__(self) -> int:
        return self.plain.size

    def aurocs(self) -> dict[str, float]:
        return {v: auroc(self.variant(v), self.labels) for v in VARIANTS}


def _per_sample_mse(rec: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = rec - x
    return np.mean(diff * diff, axis=(1, 2, 3))


def score_images(networks: Networks, images: np.ndarray, labels=None, batch_size: int = 256) -> ScoreSet:
    """Score an (N, 1, R, R) array.  Runs without recording a graph and never touches parameters."""
    images = np.asarray(images, dtype=np.float32)
    plain, perturbed = [], []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            xb = images[start:start + batch_size]
            x = T.Tensor(xb)
            plain.append(_per_sample_mse(networks.reconstruct(x, perturbed=False).data, xb))
            perturbed.append(_per_sample_mse(networks.reconstruct(x, perturbed=True).data, xb))
    if not plain:
        return ScoreSet(np.zeros(0), np.zeros(0), labels)
    return ScoreSet(np.concatenate(plain), np.concatenate(perturbed), labels)


def score_sample(networks: Networks, x: np.ndarray) -> ScoreTriple:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1:
        raise ValueError("score_sample takes a single image")
    return score_images(networks, x).triple(0)


def minmax_scale(scores) -> np.ndarray:
    """Map scores affinely onto [0, 1]; a constant list maps to all zeros."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot scale an empty score list")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def select_best_variant(scores: ScoreSet) -> str:
    """Variant with the highest AUROC on a labelled split; ties go to plain, then perturbed."""
    if scores.labels is None:
        raise ValueError("variant selection needs labelled scores")
    values = scores.aurocs()
    best = VARIANTS[0]
    for v in VARIANTS[1:]:
        if values[v] > values[best]:
            best = v
    return best


def write_scores_csv(path: str | os.PathLike, scores: ScoreSet | Mapping[str, np.ndarray], labels=None,
                     sample_ids=None) -> None:
    """CSV with raw and split-scaled scores; accepts a ScoreSet or a variant -> scores mapping."""
    if isinstance(scores, ScoreSet):
        labels = scores.labels if labels is None else labels
        scores = {v: scores.variant(v) for v in VARIANTS}
    n = len(scores[VARIANTS[0]])
    ids = list(sample_ids) if sample_ids else list(range(n))
    scaled = {v: minmax_scale(scores[v]) if n else [] for v in VARIANTS}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "plain", "perturbed", "mean",
                    "scaled_plain", "scaled_perturbed", "scaled_mean"])
        for i, sid in enumerate(ids):
            label = "" if labels is None else int(labels[i])
            w.writerow([sid, label, *(repr(float(scores[v][i])) for v in VARIANTS),
                        *(repr(float(scaled[v][i])) for v in VARIANTS)])
