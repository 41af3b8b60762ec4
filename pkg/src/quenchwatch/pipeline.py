"""Raw shots to a train/test dataset ready for fitting and scoring."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .labeling import DEFAULT_MIN_DROP, label_shot
from .preprocess import DecimationMethod, NormStats, align_shot, apply_norm, fit_norm
from .signal_model import AlignedShot, RawShot, read_shot_file
from .training import DEFAULT_TRAIN_FRACTION, Split, split_corpus


@dataclass
class Dataset:
    split: Split
    stats: NormStats
    raw: dict  # shot_id -> labeled AlignedShot in raw units
    normalized: dict  # shot_id -> labeled, normalized AlignedShot

    def shots(self, which: str, normalized: bool = True) -> list[AlignedShot]:
        ids = self.split.train if which == "train" else self.split.test
        src = self.normalized if normalized else self.raw
        return [src[i] for i in ids]


def prepare_aligned(raw_shots: Sequence[RawShot],
                    method: DecimationMethod = DecimationMethod.WindowMax,
                    min_drop: float = DEFAULT_MIN_DROP) -> list[AlignedShot]:
    return [label_shot(align_shot(s, method), min_drop) for s in raw_shots]


def build_dataset(aligned: Sequence[AlignedShot], train_fraction: float = DEFAULT_TRAIN_FRACTION,
                  seed: int = 7) -> Dataset:
    """Split by seed, fit normalization on the train split only, normalize all."""
    raw = {s.shot_id: s for s in aligned}
    split = split_corpus([s.shot_id for s in aligned], train_fraction, seed)
    stats = fit_norm(raw[i] for i in split.train)
    normalized = {i: apply_norm(s, stats) for i, s in raw.items()}
    return Dataset(split, stats, raw, normalized)


def load_shot_dir(path) -> list[RawShot]:
    files = sorted(p for p in Path(path).glob("shot_*") if p.is_file())
    return [read_shot_file(p) for p in files]
