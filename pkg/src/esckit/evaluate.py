"""Clip-level inference, k-fold cross-validation, and ablation harnesses."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from . import model as acrnn
from .features import apply_norm
from .train import LeakageError, train

GRID_LABELS = ("base", "attention", "augment", "attention+augment")


@dataclass
class EvalReport:
    fold_accuracies: dict          # fold id -> clip accuracy
    mean_accuracy: float
    confusion: np.ndarray          # (K, K) counts, rows true / columns predicted
    num_classes: int
    class_names: dict

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "accuracy"])
            for fold in sorted(self.fold_accuracies):
                writer.writerow([fold, repr(self.fold_accuracies[fold])])
            writer.writerow(["mean", repr(self.mean_accuracy)])

    def confusion_to_csv(self, path):
        names = [self.class_names.get(i, str(i)) for i in range(self.num_classes)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\predicted"] + names)
            for i, row in enumerate(self.confusion):
                writer.writerow([names[i]] + [int(v) for v in row])


@dataclass
class AblationRow:
    label: str
    mean_accuracy: float
    fold_accuracies: dict


def predict_clip(params, segments):
    """Average the per-segment probability vectors and take the argmax.

    Segments must already be normalized with training-fold statistics. Ties
    break to the lowest class index (numpy argmax convention).
    """
    if not segments:
        raise ValueError("predict_clip needs at least one segment")
    batch = np.stack([s.values for s in segments])
    probs = acrnn.forward(params, batch, mode="infer").data
    avg = probs.mean(axis=0)
    return int(avg.argmax()), avg


def confusion_matrix(predictions, truths, num_classes):
    """(K, K) counts with cell (i, j) = clips of true class i predicted as j."""
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} truths")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, true in zip(predictions, truths):
        if not (0 <= pred < num_classes and 0 <= true < num_classes):
            raise ValueError(f"class index out of range: true {true}, predicted {pred}")
        out[true, pred] += 1
    return out


def fold_split(dataset):
    """fold id -> clip_id set; folds must be disjoint and nonempty."""
    split = {}
    owner = {}
    for s in dataset.segments:
        prior = owner.get(s.clip_id)
        if prior is not None and prior != s.fold:
            raise ValueError(f"clip {s.clip_id!r} appears in folds {prior} and {s.fold}")
        owner[s.clip_id] = s.fold
        split.setdefault(s.fold, set()).add(s.clip_id)
    for fold, ids in split.items():
        if not ids:
            raise ValueError(f"fold {fold} has zero clips")
    return split


def evaluate_fold(dataset, params, stats, fold):
    """Clip accuracy plus (predictions, truths) for one held-out fold."""
    clips = dataset.clips(fold=fold, include_augmented=False)
    if not clips:
        raise ValueError(f"fold {fold} has zero clips")
    predictions, truths = [], []
    for clip_id, segs in clips.items():
        normed = [apply_norm(s, stats) for s in segs]
        pred, _ = predict_clip(params, normed)
        predictions.append(pred)
        truths.append(segs[0].label)
    accuracy = float(np.mean([p == t for p, t in zip(predictions, truths)]))
    return accuracy, predictions, truths


def cross_validate(dataset, train_config, model_config, checkpoint="final", out_dir=None):
    """Train once per fold on the remaining folds and evaluate the held-out one.

    Per-fold runs derive their seed as base seed + fold id. Normalization
    statistics and augmented segments come from the training folds only; the
    harness re-asserts the no-leakage property on every fold. ``checkpoint``
    selects whether the final or best-validation parameters are evaluated.
    """
    split = fold_split(dataset)
    if checkpoint not in ("final", "best"):
        raise ValueError(f"checkpoint must be 'final' or 'best', got {checkpoint!r}")
    k = dataset.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    fold_accuracies = {}
    evaluated = set()
    for fold in sorted(split):
        fold_config = replace(train_config, seed=train_config.seed + fold)
        result = train(dataset, fold_config, model_config, held_out_fold=fold,
                       out_dir=None if out_dir is None else os.path.join(out_dir, f"fold{fold}"))
        test_ids = split[fold]
        if result.stats_clip_ids & test_ids or result.contributing_clip_ids & test_ids:
            raise LeakageError(f"fold {fold}: held-out clips leaked into training")
        state = result.final_state if checkpoint == "final" else result.best_state
        acrnn.load_state(result.params, state)
        accuracy, predictions, truths = evaluate_fold(dataset, result.params,
                                                      result.norm_stats, fold)
        already = evaluated & test_ids
        if already:
            raise LeakageError(f"clips evaluated twice: {sorted(already)[:3]}")
        evaluated |= test_ids
        confusion += confusion_matrix(predictions, truths, k)
        fold_accuracies[fold] = accuracy
    report = EvalReport(fold_accuracies=fold_accuracies,
                        mean_accuracy=float(np.mean(list(fold_accuracies.values()))),
                        confusion=confusion, num_classes=k, class_names=dataset.class_names)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.to_csv(os.path.join(out_dir, "report.csv"))
        report.confusion_to_csv(os.path.join(out_dir, "confusion.csv"))
    return report


def ablate(dataset, train_config, model_config, placements=None, grid=False):
    """Cross-validate a family of model variants under one shared seed.

    ``placements`` runs attention-placement rows (labels as given); ``grid``
    runs the four-row attention x augmentation grid {base, attention, augment,
    attention+augment}, where the attention rows use the configured placement
    and the augment rows enable augmented copies and mixup.
    """
    rows = []

    def run(label, m_config, t_config):
        report = cross_validate(dataset, t_config, m_config)
        rows.append(AblationRow(label=label, mean_accuracy=report.mean_accuracy,
                                fold_accuracies=report.fold_accuracies))

    if placements:
        unknown = set(placements) - set(acrnn.PLACEMENTS)
        if unknown:
            raise ValueError(f"unknown placements {sorted(unknown)}; "
                             f"choose from {acrnn.PLACEMENTS}")
        for placement in placements:
            run(placement, replace(model_config, attention_placement=placement), train_config)

    if grid:
        attention_placement = (model_config.attention_placement
                               if model_config.attention_placement != "none" else "l10")
        aug_on = train_config.augmentation
        aug_off = replace(aug_on, copies_per_clip=0, mixup_enabled=False)
        variants = {
            "base": ("none", aug_off),
            "attention": (attention_placement, aug_off),
            "augment": ("none", aug_on),
            "attention+augment": (attention_placement, aug_on),
        }
        for label in GRID_LABELS:
            placement, aug = variants[label]
            run(label, replace(model_config, attention_placement=placement),
                replace(train_config, augmentation=aug))
    return rows


def ablation_to_csv(rows, path):
    folds = sorted(rows[0].fold_accuracies) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "mean_accuracy"] + [f"fold{f}" for f in folds])
        for row in rows:
            writer.writerow([row.label, repr(row.mean_accuracy)]
                            + [repr(row.fold_accuracies[f]) for f in folds])
