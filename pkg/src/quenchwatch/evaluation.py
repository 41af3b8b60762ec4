"""Four-way alarm taxonomy and the per-split performance summary."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError
from .nn_core import ModelParams
from .signal_model import SLOW_DT_MS, AlignedShot
from .stream_engine import replay_shot

FALSE_LEAD_MS = 40.0
PREMATURE_LEAD_MS = 20.0
MIN_LEAD_MS = 8.0


class AlarmClass(enum.Enum):
    FalseAlarm = "false"
    PrematureAlarm = "premature"
    MissedAlarm = "missed"
    TrueAlarm = "true"


CLASS_ORDER = (AlarmClass.FalseAlarm, AlarmClass.PrematureAlarm,
               AlarmClass.MissedAlarm, AlarmClass.TrueAlarm)


class Taxonomy(enum.Enum):
    """``default`` counts any lead under 8 ms as missed; ``literal`` only
    alarms later than 8 ms after the disruption (or none at all)."""

    default = "default"
    literal = "literal"


def lead_time_ms(alarm_step: Optional[int], disruption_step: int,
                 dt_ms: float = SLOW_DT_MS) -> Optional[float]:
    if alarm_step is None:
        return None
    return (disruption_step - alarm_step) * dt_ms


def classify_alarm(alarm_step: Optional[int], disruption_step: int, dt_ms: float = SLOW_DT_MS,
                   taxonomy: Taxonomy | str = Taxonomy.default) -> AlarmClass:
    taxonomy = Taxonomy(taxonomy)
    if alarm_step is None:
        return AlarmClass.MissedAlarm
    # integer step difference keeps the boundaries exact
    steps = disruption_step - alarm_step
    lead = steps * dt_ms
    eps = 1e-9 * max(1.0, abs(lead))
    if lead > FALSE_LEAD_MS + eps:
        return AlarmClass.FalseAlarm
    if lead > PREMATURE_LEAD_MS + eps:
        return AlarmClass.PrematureAlarm
    if taxonomy is Taxonomy.default:
        if lead < MIN_LEAD_MS - eps:
            return AlarmClass.MissedAlarm
    elif lead <= -MIN_LEAD_MS + eps:
        return AlarmClass.MissedAlarm
    return AlarmClass.TrueAlarm


@dataclass(frozen=True)
class AlarmRecord:
    shot_id: int
    split: str
    alarm_step: Optional[int]
    disruption_step: int
    alarm_class: AlarmClass
    dt_ms: float = SLOW_DT_MS

    @property
    def lead_ms(self) -> Optional[float]:
        return lead_time_ms(self.alarm_step, self.disruption_step, self.dt_ms)


@dataclass
class SplitSummary:
    name: str
    size: int
    counts: dict
    pointwise_accuracy: float
    mean_true_lead_ms: Optional[float]

    def fraction(self, cls: AlarmClass) -> float:
        return self.counts[cls] / self.size if self.size else 0.0


@dataclass
class EvalReport:
    records: list[AlarmRecord] = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    threshold: float = 0.5
    taxonomy: Taxonomy = Taxonomy.default

    def table(self) -> str:
        names = list(self.splits)
        head = ["", *[f"{n} set" for n in names]]
        rows = [head]
        label = {AlarmClass.FalseAlarm: "False alarm", AlarmClass.PrematureAlarm: "Premature alarm",
                 AlarmClass.MissedAlarm: "Missed alarm", AlarmClass.TrueAlarm: "True alarm"}
        for cls in CLASS_ORDER:
            row = [label[cls]]
            for n in names:
                s = self.splits[n]
                row.append(f"{s.counts[cls]}/{s.size} ({100 * s.fraction(cls):.1f}%)")
            rows.append(row)
        rows.append(["Pointwise accuracy",
                     *[f"{100 * self.splits[n].pointwise_accuracy:.2f}%" for n in names]])
        rows.append(["Mean true lead",
                     *[("-" if self.splits[n].mean_true_lead_ms is None
                        else f"{self.splits[n].mean_true_lead_ms:.1f} ms") for n in names]])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = []
        for k, r in enumerate(rows):
            lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if k == 0:
                lines.append("-+-".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("shot_id,alarm_step,disruption_step,lead_ms,class\n")
            for r in sorted(self.records, key=lambda r: r.shot_id):
                a = "" if r.alarm_step is None else str(r.alarm_step)
                lead = "" if r.lead_ms is None else f"{r.lead_ms:.1f}"
                fh.write(f"{r.shot_id},{a},{r.disruption_step},{lead},{r.alarm_class.value}\n")
        return path


def summarize(name: str, records: Sequence[AlarmRecord], hits: int, steps: int) -> SplitSummary:
    counts = {cls: 0 for cls in CLASS_ORDER}
    for r in records:
        counts[r.alarm_class] += 1
    leads = [r.lead_ms for r in records if r.alarm_class is AlarmClass.TrueAlarm]
    return SplitSummary(name, len(records), counts, hits / steps if steps else 0.0,
                        float(np.mean(leads)) if leads else None)


def evaluate(params: ModelParams, splits: dict[str, Iterable[AlignedShot]],
             threshold: float = 0.5, taxonomy: Taxonomy | str = Taxonomy.default,
             precision: str = "f64") -> EvalReport:
    """Replay every shot of every named split and classify its alarm.

    ``splits`` maps a split name (e.g. ``"train"``, ``"test"``) to labeled
    AlignedShots; raw or normalized values are both accepted.
    """
    taxonomy = Taxonomy(taxonomy)
    report = EvalReport(threshold=threshold, taxonomy=taxonomy)
    for name, shots in splits.items():
        recs, hits, steps = [], 0, 0
        for shot in sorted(shots, key=lambda s: s.shot_id):
            if shot.label is None:
                raise DataError(f"shot {shot.shot_id} is not labeled")
            if shot.disruption_step is None:
                raise DataError(f"shot {shot.shot_id} has no disruption step to score against")
            res = replay_shot(params, shot, threshold, precision)
            hits += int(np.sum((res.y > threshold) == (shot.label == 1)))
            steps += len(res.y)
            cls = classify_alarm(res.alarm_step, shot.disruption_step, shot.dt_ms, taxonomy)
            recs.append(AlarmRecord(shot.shot_id, name, res.alarm_step, shot.disruption_step,
                                    cls, shot.dt_ms))
        report.records.extend(recs)
        report.splits[name] = summarize(name, recs, hits, steps)
    return report
