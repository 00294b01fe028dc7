"""Evaluation over per-mode test series: scatter data and summary statistics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from ..generator import Sample
from ..zernike import ModeIndex
from .network import Regressor


def _mode_label(mode: ModeIndex) -> str:
    return f"{mode.scheme.value}_{mode.j}"


@dataclass
class EvalReport:
    """Per-sample predictions plus aggregate statistics.

    mean_mse averages the squared error over samples x modes (off-target
    truths are zero in a test series). box_stats maps each mode label to
    (min, q1, median, q3, max) of its off-target predictions, i.e. what the
    model predicts for that mode on samples where the mode is inactive.
    """

    mode_labels: list[str]
    rows: list[dict] = field(default_factory=list)
    mean_mse: float = 0.0
    box_stats: dict[str, tuple[float, float, float, float, float]] = field(default_factory=dict)
    per_series_mse: dict[str, float] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        columns = ["series_mode", "sample_index", "true_amp"] + [
            f"pred_{label}" for label in self.mode_labels
        ]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    def write_summary_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")

    def summary(self) -> dict:
        return {
            "mean_mse": self.mean_mse,
            "n_samples": len(self.rows),
            "per_series_mse": self.per_series_mse,
            "box_stats": {
                label: dict(zip(("min", "q1", "median", "q3", "max"), stats))
                for label, stats in self.box_stats.items()
            },
        }


def evaluate(
    model: Regressor,
    series: Mapping[ModeIndex, Sequence[Sample]],
    batch_size: int = 16,
) -> EvalReport:
    """Predict every series sample and assemble the scatter/box report."""
    if not series:
        raise ValidationError("no test series given")
    first = next(iter(series.values()))
    if not first:
        raise ValidationError("empty test series")
    modes = first[0].truth.modes
    labels = [_mode_label(md) for md in modes]
    report = EvalReport(mode_labels=labels)

    sq_sum, n_terms = 0.0, 0
    off_target: dict[str, list[float]] = {label: [] for label in labels}
    for mode, samples in series.items():
        series_label = _mode_label(mode)
        slot = [md.nm for md in modes].index(mode.nm)
        series_sq, series_n = 0.0, 0
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo: lo + batch_size]
            preds = model.forward([s.image for s in chunk])
            for k, (s, pred) in enumerate(zip(chunk, preds)):
                truth = s.truth.as_array()
                row = {
                    "series_mode": series_label,
                    "sample_index": lo + k,
                    "true_amp": repr(float(truth[slot])),
                }
                for label, value in zip(labels, pred):
                    row[f"pred_{label}"] = repr(float(value))
                report.rows.append(row)
                err = (pred.astype(np.float64) - truth) ** 2
                series_sq += float(err.sum())
                series_n += err.size
                for i, label in enumerate(labels):
                    if i != slot:
                        off_target[label].append(float(pred[i]))
        sq_sum += series_sq
        n_terms += series_n
        report.per_series_mse[series_label] = series_sq / series_n if series_n else 0.0
    report.mean_mse = sq_sum / n_terms if n_terms else 0.0
    for label, values in off_target.items():
        if values:
            arr = np.asarray(values)
            report.box_stats[label] = tuple(
                float(v) for v in (arr.min(), *np.percentile(arr, [25, 50, 75]), arr.max())
            )
    return report
