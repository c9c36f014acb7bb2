"""File formats: JSONL datasets, environment/anchor files, CSV tables.

Dataset lines look like::

    {"sample_id": 0, "true_position": [x, y, z], "tx_time_s": 0.0,
     "measurements": [{"anchor_id": 1, "rx_time_s": ..., "first_path_index": 64,
                       "cir_real": [...], "cir_imag": [...]}, ...]}

CIR samples are rounded to 6 decimals on write (well below the noise floor).
``read_samples_jsonl`` is the adapter point for external captures: anything
that maps onto this schema can be replayed through the pipeline.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import CEP_QUANTILES, MetricsReport
from .simulate import Box, Environment, RawCir, Sample
from .tdoa import Anchor
from .training import TrainingHistory


def _round_list(values, digits=6):
    return [round(float(v), digits) for v in values]


def write_samples_jsonl(path, samples: Sequence[Sample]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for idx, sample in enumerate(samples):
            record = {
                "sample_id": idx,
                "true_position": [float(v) for v in sample.true_position],
                "tx_time_s": 0.0,
                "measurements": [
                    {
                        "anchor_id": int(c.anchor_id),
                        "rx_time_s": float(c.rx_time),
                        "first_path_index": int(c.first_path_index),
                        "cir_real": _round_list(c.iq.real),
                        "cir_imag": _round_list(c.iq.imag),
                    }
                    for c in sample.raw_cirs
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_samples_jsonl(path) -> list[Sample]:
    samples = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            cirs = tuple(
                RawCir(
                    iq=np.array(m["cir_real"]) + 1j * np.array(m["cir_imag"]),
                    first_path_index=m["first_path_index"],
                    rx_time=m["rx_time_s"],
                    anchor_id=m["anchor_id"],
                )
                for m in record["measurements"]
            )
            samples.append(
                Sample(
                    true_position=np.array(record["true_position"]),
                    raw_cirs=cirs,
                    detected_anchor_ids=tuple(c.anchor_id for c in cirs),
                )
            )
    return samples


def anchors_to_records(anchors: Sequence[Anchor]) -> list[dict]:
    return [
        {"id": a.id, "x": float(a.position[0]), "y": float(a.position[1]), "z": float(a.position[2])}
        for a in anchors
    ]


def anchors_from_records(records: Sequence[dict]) -> tuple[Anchor, ...]:
    return tuple(Anchor(id=r["id"], position=np.array([r["x"], r["y"], r["z"]])) for r in records)


def write_anchors(path, anchors: Sequence[Anchor]):
    Path(path).write_text(json.dumps(anchors_to_records(anchors), indent=2) + "\n")


def load_anchors(path) -> tuple[Anchor, ...]:
    return anchors_from_records(json.loads(Path(path).read_text()))


def write_environment(path, env: Environment):
    payload = {
        "extent": list(env.extent),
        "anchors": anchors_to_records(env.anchors),
        "obstacles": [
            {"lo": [float(v) for v in b.lo], "hi": [float(v) for v in b.hi]}
            for b in env.obstacles
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_environment(path) -> Environment:
    payload = json.loads(Path(path).read_text())
    return Environment(
        anchors=anchors_from_records(payload["anchors"]),
        obstacles=tuple(
            Box(lo=np.array(b["lo"]), hi=np.array(b["hi"])) for b in payload["obstacles"]
        ),
        extent=tuple(payload["extent"]),
    )


def metrics_to_dict(report: MetricsReport) -> dict:
    return {
        "mae_m": report.mae,
        "cep_m": {str(q): report.cep[q] for q in CEP_QUANTILES},
        "n_samples": report.n_samples,
    }


def write_metrics_json(path, report: MetricsReport, extra: dict | None = None):
    payload = metrics_to_dict(report)
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_history_csv(path, history: TrainingHistory):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in history.records:
            writer.writerow([r.epoch, f"{r.train_loss:.8g}", f"{r.val_loss:.8g}", f"{r.lr:.8g}"])


def write_estimates_csv(path, truths, baselines, estimates=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["true_x", "true_y", "true_z", "tdoa_x", "tdoa_y", "tdoa_z"]
        if estimates is not None:
            header += ["corr_x", "corr_y", "corr_z"]
        writer.writerow(header)
        for i, (t, b) in enumerate(zip(truths, baselines)):
            row = (*t, *b) if estimates is None else (*t, *b, *estimates[i])
            writer.writerow([f"{v:.6f}" for v in row])


SWEEP_COLUMNS = [
    "patching",
    "ordering",
    "encoding",
    "l_patch",
    "d_model",
    "total_ops",
    "mae",
    "cep50",
    "cep75",
    "cep90",
    "cep95",
    "cep99",
    "status",
]


def append_sweep_row(path, row: dict):
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        if new:
            writer.writeheader()
        writer.writerow({k: row.get(k, "") for k in SWEEP_COLUMNS})


def read_sweep_rows(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))
