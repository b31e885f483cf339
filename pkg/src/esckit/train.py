"""Mini-batch SGD training with Nesterov momentum.

The protocol: batches of 64 segments drawn by a fresh shuffle each epoch
(every training segment at most once per epoch, last partial batch kept),
cross-entropy on softmax outputs with optional mixup at batch assembly,
coupled L2 weight decay on weight tensors only, and a step learning-rate
schedule that divides by 10 every 100 epochs. Normalization statistics come
from the training folds alone; the held-out fold never contributes a
gradient, an augmented copy, or a statistic, and this is asserted every
epoch.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as acrnn
from .augment import AugmentConfig, mixup_arrays, sample_lambda
from .data import one_hot
from .features import apply_norm, compute_norm_stats


class LeakageError(RuntimeError):
    """Held-out fold data reached training statistics or gradients."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 300
    lr0: float = 0.01
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 100
    momentum: float = 0.9
    l2_coeff: float = 1e-4
    seed: int = 0
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    seconds: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "train_acc", "val_acc", "seconds"])
            for r in self.rows:
                writer.writerow([r.epoch, repr(r.lr), repr(r.train_loss), repr(r.train_acc),
                                 repr(r.val_acc), repr(r.seconds)])


@dataclass
class OptimizerState:
    velocities: dict

    @classmethod
    def create(cls, params):
        return cls(velocities={name: np.zeros_like(t.data)
                               for name, t in params.tensors.items()})


@dataclass
class TrainResult:
    params: acrnn.ModelParams
    best_state: dict
    final_state: dict
    history: TrainHistory
    norm_stats: object
    steps_per_epoch: int
    contributing_clip_ids: set
    stats_clip_ids: set


def lr_schedule(epoch, config):
    """lr0 divided by the decay factor once per decay interval."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.lr0 / config.lr_decay_factor ** (epoch // config.lr_decay_every)


def init_weights(params, std=0.05, seed=0):
    """Weights ~ N(0, std^2), biases 0, batch-norm state reset, in place."""
    acrnn.randomize_weights(params, std=std, seed=seed)


def sgd_nesterov_step(params, state, lr, momentum=0.9, l2_coeff=1e-4):
    """One lookahead-applied Nesterov update.

    With g' = grad + l2_coeff * w (weight tensors only; biases and batch-norm
    scale/shift are exempt): v <- momentum*v - lr*g'; w <- w + momentum*v - lr*g'.
    """
    weight_set = set(params.weight_names)
    for name, tensor in params.tensors.items():
        if tensor.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        v = state.velocities.get(name)
        if v is None or v.shape != tensor.shape:
            raise ValueError(f"optimizer state for {name!r} missing or wrong shape")
        g = tensor.grad
        if l2_coeff and name in weight_set:
            g = g + l2_coeff * tensor.data
        v[:] = momentum * v - lr * g
        tensor.data = tensor.data + momentum * v - lr * g


def _zero_grads(params):
    for tensor in params.tensors.values():
        tensor.grad = None


def epoch_batches(n, batch_size, rng):
    """Batch index arrays for one epoch: a fresh shuffle cut into batch_size
    chunks, so every index appears exactly once; the last chunk may be short."""
    order = rng.permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def train(dataset, config, model_config, held_out_fold, out_dir=None):
    """Train on every fold except ``held_out_fold``; returns TrainResult.

    Augmented segments of training folds are used when the augment config
    enables them; the held-out fold contributes only raw segments, and only to
    the per-epoch validation metric (clip-level accuracy under the segment
    probability averaging rule). Best-validation and final parameter states
    are both kept, and written as ckpt_best / ckpt_final when out_dir is set.
    Training accuracy is measured against the pre-mixup labels.
    """
    from .evaluate import predict_clip  # local import; evaluate builds on train

    use_aug = config.augmentation.copies_per_clip > 0
    train_ds = dataset.subset(exclude_folds={held_out_fold}, include_augmented=use_aug)
    if not len(train_ds):
        raise ValueError(f"no training segments outside fold {held_out_fold}")
    val_clips = dataset.clips(fold=held_out_fold, include_augmented=False)
    held_out_ids = dataset.clip_ids(fold=held_out_fold)

    stats_clip_ids = {s.clip_id for s in train_ds.segments}
    if stats_clip_ids & held_out_ids:
        raise LeakageError(f"fold {held_out_fold} clips present in training segments")
    stats = compute_norm_stats(train_ds.segments)

    segments = train_ds.segments
    labels = np.array([s.label for s in segments], dtype=np.int64)
    k = dataset.num_classes
    n = len(segments)
    steps_per_epoch = -(-n // config.batch_size)

    params = acrnn.build(model_config, seed=config.seed)
    opt = OptimizerState.create(params)
    rng_shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    rng_dropout = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    rng_mixup = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))

    mixup_on = config.augmentation.mixup_enabled
    alpha = config.augmentation.mixup_alpha
    history = TrainHistory()
    best_acc, best_state = -1.0, None
    contributing = set()

    for epoch in range(config.epochs):
        t0 = time.time()
        lr = lr_schedule(epoch, config)
        loss_sum, correct, seen = 0.0, 0, 0
        epoch_ids = set()
        for idx in epoch_batches(n, config.batch_size, rng_shuffle):
            batch_segments = [segments[i] for i in idx]
            epoch_ids.update(s.clip_id for s in batch_segments)
            xb = np.stack([apply_norm(s, stats).values for s in batch_segments])
            yb = one_hot(labels[idx], k)
            if mixup_on:
                partners = rng_mixup.integers(0, len(idx), size=len(idx))
                for row, j in enumerate(partners):
                    xb[row], yb[row] = mixup_arrays(
                        xb[row], yb[row], xb[j].copy(), yb[j].copy(),
                        sample_lambda(alpha, rng_mixup))
            probs = acrnn.forward(params, xb, mode="train", rng=rng_dropout)
            loss = ad.cross_entropy(probs, ad.Tensor(yb))
            _zero_grads(params)
            loss.backward()
            sgd_nesterov_step(params, opt, lr, config.momentum, config.l2_coeff)
            loss_sum += loss.item() * len(idx)
            correct += int((probs.data.argmax(axis=1) == labels[idx]).sum())
            seen += len(idx)

        if epoch_ids & held_out_ids:
            raise LeakageError(f"fold {held_out_fold} clips {sorted(epoch_ids & held_out_ids)[:3]} "
                               f"contributed gradients in epoch {epoch}")
        contributing |= epoch_ids

        val_correct = 0
        for clip_id, segs in val_clips.items():
            normed = [apply_norm(s, stats) for s in segs]
            pred, _ = predict_clip(params, normed)
            val_correct += int(pred == segs[0].label)
        val_acc = val_correct / len(val_clips) if val_clips else float("nan")

        history.rows.append(HistoryRow(
            epoch=epoch, lr=lr, train_loss=loss_sum / seen, train_acc=correct / seen,
            val_acc=val_acc, seconds=time.time() - t0))
        if val_clips and val_acc > best_acc:
            best_acc = val_acc
            best_state = acrnn.state_arrays(params)

    final_state = acrnn.state_arrays(params)
    if best_state is None:
        best_state = final_state
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        acrnn.save_checkpoint(os.path.join(out_dir, "ckpt_best"), best_state)
        acrnn.save_checkpoint(os.path.join(out_dir, "ckpt_final"), final_state)
        history.to_csv(os.path.join(out_dir, "history.csv"))
    return TrainResult(params=params, best_state=best_state, final_state=final_state,
                       history=history, norm_stats=stats, steps_per_epoch=steps_per_epoch,
                       contributing_clip_ids=contributing, stats_clip_ids=stats_clip_ids)
