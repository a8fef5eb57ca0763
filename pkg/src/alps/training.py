"""Adversarial training of the autoencoder against the latent distorter.

Both networks see the same batch and share one loss expression,
:func:`reconstruction_loss`.  The autoencoder descends on it every batch; the
distorter ascends on it, but only during epochs whose index is a multiple of
``n_distorter_every`` so that it cannot dominate.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from alps import tensor as T
from alps.checkpoint import save_checkpoint
from alps.config import VARIANTS, TrainingConfig
from alps.errors import ConfigError, DivergenceError
from alps.models import Networks
from alps.nn import make_optimizer, zero_grads
from alps.scoring import ScoreSet, score_images, select_best_variant

log = logging.getLogger(__name__)

CSV_COLUMNS = ["epoch", "train_loss", "val_auroc_plain", "val_auroc_perturbed", "val_auroc_mean", "is_best"]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: dict[str, float]
    is_best: bool
    checkpoint: str | None = None


@dataclass
class TrainResult:
    networks: Networks
    config: TrainingConfig
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    chosen_variant: str = "mean"
    validation: ScoreSet | None = None

    def meta(self) -> dict[str, str]:
        return {"chosen_variant": self.chosen_variant,
                "best_epoch": "none" if self.best_epoch is None else str(self.best_epoch)}


def reconstruction_loss(networks: Networks, x: T.Tensor, perturbed: bool = True) -> T.Tensor:
    """MSE between ``x`` and its reconstruction from the (optionally perturbed) latent code."""
    return T.mse_loss(networks.reconstruct(x, perturbed=perturbed), x)


def _set_trainable(networks: Networks, autoencoder: bool, distorter: bool) -> None:
    networks.encoder.requires_grad_(autoencoder)
    networks.decoder.requires_grad_(autoencoder)
    networks.distorter.requires_grad_(distorter)


def _weighted_update(networks: Networks, x: T.Tensor, params: dict, optimizer, weight: float,
                     direction: str, perturbed: bool) -> float:
    zero_grads(params)
    loss = reconstruction_loss(networks, x, perturbed)
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite reconstruction loss ({value}) during {direction} step")
    T.backward(T.mul(loss, weight))
    optimizer.step(direction)
    return value


def ae_step(batch: T.Tensor, networks: Networks, optimizer, weight: float = 1.0, perturbed: bool = True) -> float:
    """One descent step of encoder + decoder with the distorter frozen.  Returns the unweighted MSE."""
    _set_trainable(networks, autoencoder=True, distorter=False)
    try:
        return _weighted_update(networks, batch, networks.autoencoder_parameters(), optimizer, weight,
                                "descent", perturbed)
    finally:
        _set_trainable(networks, True, True)


def distorter_step(batch: T.Tensor, networks: Networks, optimizer, weight: float = 0.5) -> float:
    """One ascent step of the distorter with encoder + decoder frozen.  Returns the unweighted MSE."""
    _set_trainable(networks, autoencoder=False, distorter=True)
    try:
        return _weighted_update(networks, batch, networks.distorter_parameters(), optimizer, weight,
                                "ascent", True)
    finally:
        _set_trainable(networks, True, True)


def _snapshot(networks: Networks) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in networks.named_parameters().items()}


def _restore(networks: Networks, state: dict[str, np.ndarray]) -> None:
    for k, p in networks.named_parameters().items():
        p.data = state[k].copy()


def distorter_active(epoch: int, every: int) -> bool:
    return epoch % every == 0


def train(config: TrainingConfig, train_images: np.ndarray, val_images: np.ndarray | None = None,
          val_labels: np.ndarray | None = None, out_dir: str | os.PathLike | None = None,
          extra_meta: dict[str, str] | None = None) -> TrainResult:
    """Train on inlier images (N, 1, R, R) and keep the epoch with the best validation AUROC.

    Without a labelled validation split the last epoch is kept.  With
    ``out_dir`` the best checkpoint is (re)written to ``best.ckpt`` whenever it
    improves and the epoch log goes to ``epochs.csv``.
    """
    config.validate()
    train_images = np.asarray(train_images, dtype=np.float32)
    if len(train_images) == 0:
        raise ConfigError("training set is empty")
    has_val = val_images is not None and val_labels is not None and len(np.unique(val_labels)) == 2
    networks = Networks.build(config.model_config(), config.seed)
    opt_ae = make_optimizer(config.optimizer, networks.autoencoder_parameters(), config.lr_ae)
    opt_dist = make_optimizer(config.optimizer, networks.distorter_parameters(), config.lr_distorter)
    order_rng = np.random.default_rng([config.seed, 3])
    out = Path(out_dir) if out_dir is not None else None
    ckpt_path = out / "best.ckpt" if out is not None else None

    result = TrainResult(networks, config, chosen_variant=config.selection_variant)
    best_state = _snapshot(networks)
    best_metric = -math.inf
    n = len(train_images)
    for epoch in range(config.epochs):
        update_distorter = distorter_active(epoch, config.n_distorter_every)
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = T.Tensor(train_images[idx])
            total += ae_step(x, networks, opt_ae, config.w_ae) * len(idx)
            if update_distorter:
                distorter_step(x, networks, opt_dist, config.w_dist)
        train_loss = total / n

        if has_val:
            val_auroc = score_images(networks, val_images, val_labels).aurocs()
            metric = val_auroc[config.selection_variant]
        else:
            val_auroc = {v: math.nan for v in VARIANTS}
            metric = float(epoch)
        is_best = metric >= best_metric  # ties go to the later, longer-trained epoch
        if is_best:
            best_metric = metric
            best_state = _snapshot(networks)
            result.best_epoch = epoch
        record = EpochRecord(epoch, train_loss, val_auroc, is_best)
        result.records.append(record)
        log.info("epoch %d loss %.6f val_auroc %s%s", epoch, train_loss,
                 " ".join(f"{k}={v:.4f}" for k, v in val_auroc.items()), " *" if is_best else "")
        if is_best and ckpt_path is not None:
            ckpt_path.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt_path, networks, config, {**(extra_meta or {}), **result.meta()})
            record.checkpoint = str(ckpt_path)

    _restore(networks, best_state)
    if has_val:
        result.validation = score_images(networks, val_images, val_labels)
        result.chosen_variant = select_best_variant(result.validation)
    if ckpt_path is not None:
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt_path, networks, config, {**(extra_meta or {}), **result.meta()})
        write_epoch_csv(out / "epochs.csv", result.records)
    return result


def write_epoch_csv(path: str | os.PathLike, records: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.epoch, repr(float(r.train_loss)), *(repr(float(r.val_auroc[v])) for v in VARIANTS),
                        int(r.is_best)])
