"""Retrieval accuracy and the with/without-TVR ablation report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Catalog
from .dataset import RAW, VALIDATION, DatasetConfig, LabeledDataset, build_dataset
from .errors import LengthMismatch
from .fcn import ArchSpec, ModelParams, TrainConfig, forward, predict_song, train
from .pipeline import PipelineConfig, extract_catalog

# Figures reported for the original system and MIREX entries; reported, not reproduced.
REFERENCE_ROWS = (
    ("With TVR + FCN (proposed)", 0.93),
    ("Without TVR + FCN", 0.67),
    ("With TVR + MLP (baseline)", 0.78),
    ("Mostafa et al.", 0.92),
    ("BS1", 0.86),
    ("WHLX1", 0.47),
    ("TYCX4", 0.93),
    ("ZH1", 0.89),
)

WITH_TVR = "fcn+tvr"
WITHOUT_TVR = "fcn"
MLP_TVR = "mlp+tvr"


def accuracy(predictions: Sequence[Sequence], truths: Sequence[str]) -> float:
    """Fraction of queries whose rank-1 song equals the truth.

    ``predictions`` holds one ranked list per query, either of song ids or
    of ``(song_id, score)`` pairs.
    """
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truths)} truths")
    if not truths:
        raise LengthMismatch("accuracy of zero queries is undefined")
    hits = 0
    for ranked, truth in zip(predictions, truths):
        top = ranked[0]
        top = top[0] if isinstance(top, (tuple, list)) else top
        hits += top == truth
    return hits / len(truths)


@dataclass(frozen=True)
class EvalRow:
    label: str
    query_accuracy: float
    frame_accuracy: float
    n_queries: int
    n_classes: int
    seed: int
    epochs: int


@dataclass
class EvalReport:
    rows: list[EvalRow]
    reference: tuple = REFERENCE_ROWS
    notes: list[str] = field(default_factory=list)

    def row(self, label: str) -> EvalRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def tvr_gain(self) -> float:
        return self.row(WITH_TVR).query_accuracy - self.row(WITHOUT_TVR).query_accuracy

    def check(self) -> bool:
        """With-TVR accuracy is at least the without-TVR accuracy."""
        return self.tvr_gain() >= 0.0

    def to_json(self) -> str:
        return json.dumps({
            "rows": [asdict(r) for r in self.rows],
            "reference_reported_not_reproduced": [
                {"label": label, "accuracy": acc} for label, acc in self.reference],
            "notes": self.notes,
        }, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'configuration':<28} {'query acc':>9} {'frame acc':>9} "
                 f"{'queries':>7} {'classes':>7} {'epochs':>6}"]
        for r in self.rows:
            lines.append(f"{r.label:<28} {r.query_accuracy:>9.4f} {r.frame_accuracy:>9.4f} "
                         f"{r.n_queries:>7d} {r.n_classes:>7d} {r.epochs:>6d}")
        lines.append("")
        lines.append("reference figures (reported, not reproduced)")
        for label, acc in self.reference:
            lines.append(f"  {label:<30} {acc:.2f}")
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def evaluate_model(model: ModelParams, dataset: LabeledDataset) -> tuple[float, float, int]:
    """Query- and frame-level top-1 accuracy on raw validation frames."""
    x, y, groups = dataset.arrays(VALIDATION, RAW)
    if x.shape[0] == 0:
        raise LengthMismatch("no validation frames to evaluate")
    names = dataset.class_names
    groups = np.asarray(groups)
    predictions, truths = [], []
    for qid in dict.fromkeys(groups.tolist()):
        sel = groups == qid
        predictions.append(predict_song(model, x[sel]))
        truths.append(names[int(y[sel][0])])
    probs = np.concatenate([forward(model, x[i:i + 256]) for i in range(0, x.shape[0], 256)])
    frame_acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return accuracy(predictions, truths), frame_acc, len(truths)


@dataclass(frozen=True)
class AblationConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mlp_train: TrainConfig | None = None
    threads: int | None = None


def run_ablation(catalog: Catalog, cfg: AblationConfig = AblationConfig(), contours=None) -> EvalReport:
    """Train FCN without and with TVR augmentation and the MLP with it.

    All three share one query split, fixed by ``cfg.dataset.seed``.
    """
    if contours is None:
        contours = extract_catalog(catalog, cfg.pipeline, cfg.dataset.frame_rate, cfg.threads)
    plain = build_dataset(catalog, contours, replace(cfg.dataset, augment_with_denoised=False))
    augmented = build_dataset(catalog, contours, replace(cfg.dataset, augment_with_denoised=True))
    names = tuple(plain.class_names)
    runs = (
        (WITHOUT_TVR, "fcn", plain, cfg.train),
        (WITH_TVR, "fcn", augmented, cfg.train),
        (MLP_TVR, "mlp", augmented, cfg.mlp_train or cfg.train),
    )
    rows = []
    for label, kind, data, tcfg in runs:
        arch = ArchSpec(kind, data.n_classes, data.frame_len, class_names=names)
        model, history = train(data, arch, tcfg)
        q_acc, f_acc, n_q = evaluate_model(model, data)
        rows.append(EvalRow(label, q_acc, f_acc, n_q, data.n_classes, tcfg.seed, len(history)))
    return EvalReport(rows)
