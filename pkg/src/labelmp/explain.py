"""Interpretability export: per-stage probe predictions, label-to-feature
attention, and label-to-label attention for a single sample.

The JSON trace file is the ground truth (floats written to 9 significant
digits); the SVG heatmaps are rendered by a small internal writer so the
package needs no plotting dependency. Head-summed attention follows the
sum-over-heads display convention; per-head matrices are exported too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, make_batch
from .model import LampModel


def _round9(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, (list, tuple)):
        return [_round9(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _round9(v) for k, v in obj.items()}
    return obj


@dataclass
class ExplainRecord:
    sample_id: int
    true_labels: list
    label_names: list
    feature_names: list                 # one per input node of this sample
    probes: list                        # [{"stage": "1.1", "probs": [...]}]
    label_to_feature: dict              # per_head K x L x S, head_sum L x S
    label_to_label: dict                # same over labels, or {"note": ...}

    def to_json(self) -> str:
        payload = {
            "sample_id": self.sample_id,
            "true_labels": sorted(self.true_labels),
            "label_names": self.label_names,
            "feature_names": self.feature_names,
            "probes": self.probes,
            "label_to_feature": self.label_to_feature,
            "label_to_label": self.label_to_label,
        }
        return json.dumps(_round9(payload), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExplainRecord":
        d = json.loads(text)
        return cls(sample_id=d["sample_id"], true_labels=d["true_labels"],
                   label_names=d["label_names"], feature_names=d["feature_names"],
                   probes=d["probes"], label_to_feature=d["label_to_feature"],
                   label_to_label=d["label_to_label"])


def build_explain_record(model: LampModel, dataset: Dataset, sample_index: int,
                         label_names=None, feature_names=None) -> ExplainRecord:
    """Run one sample through the frozen model and collect every probe and
    the first-step attention maps (later steps mix higher-order effects)."""
    if not 0 <= sample_index < len(dataset):
        raise IndexError(f"sample {sample_index} out of range [0, {len(dataset)})")
    sample = dataset.samples[sample_index]
    batch = make_batch(dataset, [sample_index])
    result = model.forward_batch(batch, training=False)

    n_labels = model.config.labels
    if label_names is None:
        label_names = [f"label{i}" for i in range(n_labels)]
    if feature_names is None:
        if dataset.schema.input_kind == "dense_vector":
            feature_names = ["input"]
        else:
            feature_names = [f"f{fid}" for fid in sample.ids]

    probes = [{"stage": stage, "probs": probs.values[0].tolist()}
              for stage, probs in result.probes]

    xy = result.traces["xy"][0][:, 0]  # K x L x S
    label_to_feature = {"per_head": xy.tolist(),
                        "head_sum": xy.sum(axis=0).tolist()}
    yy = result.traces["yy"][0]
    if yy is None:
        label_to_label = {"note": "no edges; stage skipped"}
    else:
        yy = yy[:, 0]  # K x L x L
        label_to_label = {"per_head": yy.tolist(),
                          "head_sum": yy.sum(axis=0).tolist()}

    return ExplainRecord(sample_id=sample_index,
                         true_labels=sorted(sample.labels),
                         label_names=label_names,
                         feature_names=feature_names,
                         probes=probes,
                         label_to_feature=label_to_feature,
                         label_to_label=label_to_label)


def default_label_filter(record: ExplainRecord, top_k: int = 10) -> list:
    """Labels worth plotting: the true positives plus the top predicted."""
    final = np.asarray(record.probes[-1]["probs"])
    top = np.argsort(-final)[:top_k]
    return sorted(set(record.true_labels) | set(int(i) for i in top))


# ---------------------------------------------------------------------------
# SVG heatmaps

_CELL = 22
_MARGIN_LEFT = 90
_MARGIN_TOP = 48
_MARGIN_BOTTOM = 70


def _color(v: float) -> str:
    """Dark blue (0) to yellow (1)."""
    v = min(max(float(v), 0.0), 1.0)
    r = int(250 * v + 15 * (1 - v))
    g = int(220 * v + 30 * (1 - v))
    b = int(60 * v + 90 * (1 - v))
    return f"rgb({r},{g},{b})"


def _esc(text: str) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def svg_heatmap(matrix, row_labels, col_labels, title: str, path,
                note: str | None = None):
    """Write a grid heatmap (values normalized to the matrix max) as a
    standalone SVG file."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = m.shape
    vmax = m.max() if m.size and m.max() > 0 else 1.0
    width = _MARGIN_LEFT + cols * _CELL + 20
    height = _MARGIN_TOP + rows * _CELL + _MARGIN_BOTTOM
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="monospace" font-size="11">',
             f'<text x="{_MARGIN_LEFT}" y="20" font-size="14">{_esc(title)}</text>']
    if note:
        parts.append(f'<text x="{_MARGIN_LEFT}" y="36" fill="#777">{_esc(note)}</text>')
    for i in range(rows):
        y = _MARGIN_TOP + i * _CELL
        parts.append(f'<text x="{_MARGIN_LEFT - 6}" y="{y + 15}" '
                     f'text-anchor="end">{_esc(row_labels[i])}</text>')
        for j in range(cols):
            x = _MARGIN_LEFT + j * _CELL
            parts.append(f'<rect x="{x}" y="{y}" width="{_CELL - 1}" '
                         f'height="{_CELL - 1}" fill="{_color(m[i, j] / vmax)}">'
                         f'<title>{m[i, j]:.6f}</title></rect>')
    base = _MARGIN_TOP + rows * _CELL + 12
    for j in range(cols):
        x = _MARGIN_LEFT + j * _CELL + _CELL // 2
        parts.append(f'<text x="{x}" y="{base}" text-anchor="end" '
                     f'transform="rotate(-55 {x} {base})">{_esc(col_labels[j])}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def write_explain(record: ExplainRecord, out_dir, label_filter=None) -> dict:
    """Write the trace JSON and the three heatmaps; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / f"sample{record.sample_id}_trace.json",
             "probes": out / f"sample{record.sample_id}_probes.svg",
             "label_to_feature": out / f"sample{record.sample_id}_label_to_feature.svg",
             "label_to_label": out / f"sample{record.sample_id}_label_to_label.svg"}
    paths["trace"].write_text(record.to_json())

    stages = [p["stage"] for p in record.probes]
    probe_matrix = np.asarray([p["probs"] for p in record.probes])
    mark = set(record.true_labels)
    label_cols = [f"*{n}" if i in mark else n
                  for i, n in enumerate(record.label_names)]
    svg_heatmap(probe_matrix, stages, label_cols,
                f"stage predictions (sample {record.sample_id})",
                paths["probes"], note="* = true label")

    svg_heatmap(record.label_to_feature["head_sum"], record.label_names,
                record.feature_names,
                f"label-to-feature attention, step 1 (head sum)",
                paths["label_to_feature"])

    if "note" in record.label_to_label:
        svg_heatmap(np.zeros((1, 1)), ["-"], ["-"],
                    "label-to-label attention", paths["label_to_label"],
                    note=record.label_to_label["note"])
    else:
        if label_filter is None:
            label_filter = default_label_filter(record)
        head_sum = np.asarray(record.label_to_label["head_sum"])
        sub = head_sum[np.ix_(label_filter, label_filter)]
        names = [record.label_names[i] for i in label_filter]
        svg_heatmap(sub, names, names,
                    "label-to-label attention, step 1 (head sum)",
                    paths["label_to_label"])
    return paths
