"""Epoch loop shared by the ``train`` and ``compare`` commands."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .burst import BurstConfig
from .data import Dataset, SampleBatch
from .loss_opt import Adam, AdamConfig, WeightedBceConfig
from .metrics import ActivityCounter, EpochRecord, accuracy, f1_score
from .model import ArchitectureConfig, ModelGraph
from .tensor import make_rng

log = logging.getLogger(__name__)

EVAL_CHUNK = 200


class NumericalFailure(RuntimeError):
    def __init__(self, epoch: int, msg: str):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=AdamConfig)
    burst: BurstConfig = field(default_factory=BurstConfig)
    pos_weight: float | None = None  # None: taken from the dataset manifest
    eps_log: float = 1e-7
    feedback_init: str = "symmetric"
    eval_splits: tuple[str, ...] = ("train", "test")


def evaluate(model: ModelGraph, batch: SampleBatch, epoch: int, split: str) -> EpochRecord:
    preds, counter = [], ActivityCounter()
    for start in range(0, len(batch), EVAL_CHUNK):
        chunk = batch.take(slice(start, start + EVAL_CHUNK))
        preds.append(model.predict_mask(chunk))
        counter.add(model.activity)
    pred = np.concatenate(preds)
    return EpochRecord(epoch, split, f1_score(pred, batch.mask), accuracy(pred, batch.mask), counter.rate)


def train_variant(
    dataset: Dataset,
    variant: str,
    seed: int,
    cfg: TrainConfig = TrainConfig(),
    arch: ArchitectureConfig | None = None,
    on_epoch=None,
) -> tuple[ModelGraph, Adam, list[EpochRecord]]:
    """Train one variant; one record per (epoch, split) after each epoch."""
    arch = arch or arch_for(dataset)
    model = ModelGraph(variant, arch, seed, cfg.burst, cfg.feedback_init)
    opt = Adam(cfg.adam)
    wbce = WeightedBceConfig(cfg.pos_weight if cfg.pos_weight is not None else dataset.pos_weight, cfg.eps_log)
    shuffle = make_rng(seed, "shuffle")
    train = dataset.split("train")
    evals = {s: dataset.split(s) for s in cfg.eval_splits}
    records: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            loss = model.learn_step(train.take(order[start : start + cfg.batch_size]), opt, wbce)
            if not math.isfinite(loss):
                raise NumericalFailure(epoch, f"non-finite loss ({loss}) in variant {variant}")
            losses.append(loss)
        model.epoch = epoch + 1
        for split, batch in evals.items():
            records.append(evaluate(model, batch, epoch, split))
        log.info("%s seed=%d epoch=%d loss=%.4f %s", variant, seed, epoch, float(np.mean(losses)) if losses else float("nan"),
                 " ".join(f"{r.split}:f1={r.f1:.3f},E={r.energy_rate:.3f}" for r in records[-len(evals):]))
        if on_epoch is not None:
            on_epoch(epoch, records[-len(evals):])
    return model, opt, records


def arch_for(dataset: Dataset, **overrides) -> ArchitectureConfig:
    sh = dataset.manifest["shapes"]
    return ArchitectureConfig(
        audio_input=tuple(sh["audio"]),
        visual_input=tuple(sh["visual"]),
        mask_bins=sh["mask"][0],
        **overrides,
    )
