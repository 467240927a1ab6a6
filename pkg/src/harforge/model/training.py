"""Training loop, batched prediction, and JSON checkpoints.

Each epoch shuffles the training windows with a seeded generator, steps
AdamW over the batches, then scores the validation set in eval mode. The
learning rate follows the plateau scheduler, the best validation snapshot
is kept, and training stops early after a patience worth of epochs without
a new best. A non-finite loss aborts the run and returns the last good
snapshot with the event recorded in the history.

Checkpoints store every array as a flat list of JSON numbers. Python floats
serialize via their shortest round-tripping representation, so a checkpoint
reloads bit-for-bit equal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import ActivityTaxonomy
from ..dataset import FeatureWindow
from .losses import LossConfig, hierarchical_focal_loss, hierarchical_focal_loss_grads
from .network import ModelParams, model_backward, model_forward
from .optim import (
    OptimState,
    PlateauScheduler,
    TrainConfig,
    TrainingDivergedError,
    adamw_step,
    init_optim_state,
)

CHECKPOINT_KIND = "harforge-checkpoint"


def windows_to_arrays(
    windows: Sequence[FeatureWindow], taxonomy: ActivityTaxonomy
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack windows into (x, labels1, labels2) index arrays."""
    if not windows:
        raise ValueError("no windows to stack")
    l1_index = {name: i for i, name in enumerate(taxonomy.level1_classes)}
    l2_index = {name: i for i, name in enumerate(taxonomy.level2_classes)}
    x = np.stack([w.features for w in windows]).astype(np.float64)
    y1 = np.array([l1_index[w.label_l1] for w in windows], dtype=np.int64)
    y2 = np.array([l2_index[w.label_l2] for w in windows], dtype=np.int64)
    return x, y1, y2


def loss_value(
    params: ModelParams,
    x: np.ndarray,
    y1: np.ndarray,
    y2: np.ndarray,
    loss_config: LossConfig = LossConfig(),
    *,
    train_mode: bool = False,
    dropout_mask: np.ndarray | None = None,
    reduction: str = "mean",
) -> float:
    """Forward-only loss; the finite-difference oracle calls this."""
    logits1, logits2, _ = model_forward(
        x, params, train_mode=train_mode, dropout_mask=dropout_mask
    )
    total, _ = hierarchical_focal_loss(logits1, logits2, y1, y2, loss_config, reduction)
    return total


def loss_and_grads(
    params: ModelParams,
    x: np.ndarray,
    y1: np.ndarray,
    y2: np.ndarray,
    loss_config: LossConfig = LossConfig(),
    *,
    train_mode: bool = True,
    dropout_mask: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    reduction: str = "mean",
):
    """Loss plus analytic gradients for every parameter array."""
    logits1, logits2, cache = model_forward(
        x, params, train_mode=train_mode, dropout_mask=dropout_mask, rng=rng
    )
    total, dlogits1, dlogits2, parts = hierarchical_focal_loss_grads(
        logits1, logits2, y1, y2, loss_config, reduction
    )
    grads = model_backward(dlogits1, dlogits2, cache, params)
    return total, grads, parts


@dataclass
class Predictions:
    probs1: np.ndarray
    probs2: np.ndarray
    pred1: np.ndarray
    pred2: np.ndarray


def predict(params: ModelParams, x: np.ndarray, batch_size: int = 1024) -> Predictions:
    """Class probabilities and argmax predictions for both levels."""
    from .losses import softmax

    probs1_parts = []
    probs2_parts = []
    for lo in range(0, x.shape[0], batch_size):
        logits1, logits2, _ = model_forward(x[lo : lo + batch_size], params)
        probs1_parts.append(softmax(logits1))
        probs2_parts.append(softmax(logits2))
    probs1 = np.concatenate(probs1_parts)
    probs2 = np.concatenate(probs2_parts)
    return Predictions(
        probs1=probs1,
        probs2=probs2,
        pred1=probs1.argmax(axis=1),
        pred2=probs2.argmax(axis=1),
    )


def _accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float((pred == labels).mean())


def train(
    params: ModelParams,
    train_data: tuple[np.ndarray, np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray, np.ndarray],
    train_config: TrainConfig = TrainConfig(),
    loss_config: LossConfig = LossConfig(),
) -> tuple[ModelParams, list[dict]]:
    """Fit the model; returns (best-validation snapshot, epoch history).

    The input ``params`` object is left untouched; optimization happens on
    a copy. History entries carry the epoch index, mean train batch loss,
    validation loss, validation accuracy at both levels, and the learning
    rate used that epoch.
    """
    x_tr, y1_tr, y2_tr = train_data
    x_va, y1_va, y2_va = val_data
    current = params.copy()
    best = current.copy()
    best_val = math.inf
    state: OptimState = init_optim_state(current)
    scheduler = PlateauScheduler.from_config(train_config)
    shuffle_rng = np.random.default_rng(train_config.seed)
    dropout_rng = np.random.default_rng([train_config.seed, 1])
    history: list[dict] = []
    lr = train_config.learning_rate
    epochs_since_best = 0

    for epoch in range(train_config.max_epochs):
        order = shuffle_rng.permutation(x_tr.shape[0])
        batch_losses = []
        try:
            for lo in range(0, len(order), train_config.batch_size):
                idx = order[lo : lo + train_config.batch_size]
                loss, grads, _ = loss_and_grads(
                    current,
                    x_tr[idx],
                    y1_tr[idx],
                    y2_tr[idx],
                    loss_config,
                    rng=dropout_rng,
                )
                if not math.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss {loss!r}")
                adamw_step(current, grads, state, train_config, lr=lr)
                batch_losses.append(loss)
        except TrainingDivergedError as err:
            history.append({"epoch": epoch, "diverged": True, "error": str(err)})
            break

        logits1, logits2, _ = model_forward(x_va, current)
        val_loss, _ = hierarchical_focal_loss(
            logits1, logits2, y1_va, y2_va, loss_config
        )
        pred1 = logits1.argmax(axis=1)
        pred2 = logits2.argmax(axis=1)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)) if batch_losses else 0.0,
                "val_loss": float(val_loss),
                "val_acc_l1": _accuracy(pred1, y1_va),
                "val_acc_l2": _accuracy(pred2, y2_va),
                "lr": lr,
            }
        )
        if val_loss < best_val:
            best_val = float(val_loss)
            best = current.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= train_config.early_stopping_patience:
                break
        lr = scheduler.step(float(val_loss))

    return best, history


def save_checkpoint(
    params: ModelParams,
    path,
    *,
    seed: int | None = None,
    taxonomy_hash: str | None = None,
    config: dict | None = None,
) -> None:
    """Write a bit-exact JSON snapshot of the model."""
    payload = {
        "kind": CHECKPOINT_KIND,
        "version": 1,
        "seed": seed,
        "taxonomy_hash": taxonomy_hash,
        "config": config or {},
        "model": {
            "input_size": params.input_size,
            "hidden_size": params.hidden_size,
            "n_level1": params.n_level1,
            "n_level2": params.n_level2,
            "dropout": params.dropout,
            "pooling": params.pooling,
        },
        "arrays": [
            {
                "name": name,
                "shape": list(params.arrays[name].shape),
                "values": [float(v) for v in params.arrays[name].ravel()],
            }
            for name in sorted(params.arrays)
        ],
    }
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Reload a checkpoint; returns (params, metadata)."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path} is not a model checkpoint")
    meta = payload["model"]
    arrays = {
        entry["name"]: np.array(entry["values"], dtype=np.float64).reshape(
            entry["shape"]
        )
        for entry in payload["arrays"]
    }
    params = ModelParams(
        arrays=arrays,
        input_size=meta["input_size"],
        hidden_size=meta["hidden_size"],
        n_level1=meta["n_level1"],
        n_level2=meta["n_level2"],
        dropout=meta["dropout"],
        pooling=meta["pooling"],
    )
    return params, {
        "seed": payload.get("seed"),
        "taxonomy_hash": payload.get("taxonomy_hash"),
        "config": payload.get("config", {}),
    }
