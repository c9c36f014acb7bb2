"""Raw CIR conversion: amplitude, trimming, normalization, input tensor.

Every raw CIR becomes a 150-sample amplitude window (50 samples before the
detected first path, 100 after), min-max normalized to [0, 1]. The per-anchor
windows are stacked into an ordered matrix with one row per CIR.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError
from .simulate import Environment, RawCir, Sample

WINDOW_BEFORE = 50
WINDOW_LENGTH = 150

ORDERINGS = ("fixed", "time_based")


@dataclass(frozen=True)
class ProcessedCir:
    amplitude: np.ndarray  # (150,) in [0, 1]
    anchor_id: int
    anchor_position: np.ndarray
    rx_time: float


def iq_to_amplitude(raw) -> np.ndarray:
    """Elementwise magnitude of a complex IQ array (or a RawCir's buffer)."""
    iq = raw.iq if isinstance(raw, RawCir) else np.asarray(raw)
    return np.abs(iq).astype(float)


def trim_window(amplitude: np.ndarray, first_path_index: int) -> np.ndarray:
    """150-sample window around the first path; out-of-range slots are zero."""
    amplitude = np.asarray(amplitude, dtype=float)
    out = np.zeros(WINDOW_LENGTH)
    start = first_path_index - WINDOW_BEFORE
    src_lo = max(start, 0)
    src_hi = min(start + WINDOW_LENGTH, len(amplitude))
    if src_hi > src_lo:
        out[src_lo - start : src_hi - start] = amplitude[src_lo:src_hi]
    return out


def normalize_minmax(window: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant window carries no shape and maps to zeros."""
    window = np.asarray(window, dtype=float)
    lo = window.min()
    hi = window.max()
    if hi == lo:
        return np.zeros_like(window)
    return (window - lo) / (hi - lo)


def process_cir(raw: RawCir, anchor_position) -> ProcessedCir:
    amp = normalize_minmax(trim_window(iq_to_amplitude(raw), raw.first_path_index))
    return ProcessedCir(
        amplitude=amp,
        anchor_id=raw.anchor_id,
        anchor_position=np.asarray(anchor_position, dtype=float),
        rx_time=raw.rx_time,
    )


@dataclass(frozen=True)
class InputTensor:
    """Ordered CIR matrix with per-row anchor metadata.

    Fixed ordering always has ``n_total`` rows, one per environment anchor in
    ascending id order; rows of non-detecting anchors are all-zero with
    ``present`` False and NaN ``rx_times``. Time-based ordering keeps only the
    detecting anchors sorted by reception time (ties by id), unless built with
    ``pad_missing`` in which case the absent anchors follow as zero rows.
    """

    values: np.ndarray  # (n_rows, 150)
    present: np.ndarray  # (n_rows,) bool
    anchor_ids: np.ndarray  # (n_rows,) int
    anchor_positions: np.ndarray  # (n_rows, 3)
    rx_times: np.ndarray  # (n_rows,) float, NaN for absent rows
    ordering: str
    n_total: int
    padded: bool

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def permuted(self, order: Sequence[int]) -> "InputTensor":
        order = np.asarray(order, dtype=int)
        return replace(
            self,
            values=self.values[order],
            present=self.present[order],
            anchor_ids=self.anchor_ids[order],
            anchor_positions=self.anchor_positions[order],
            rx_times=self.rx_times[order],
        )


def build_input_tensor(
    sample: Sample,
    env: Environment,
    ordering: str = "fixed",
    pad_missing: bool = False,
) -> InputTensor:
    """Process a sample's CIRs and order them into the input matrix."""
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}; use one of {ORDERINGS}")
    if len(sample.raw_cirs) == 0:
        raise InsufficientDataError("sample has no CIRs")
    anchors = sorted(env.anchors, key=lambda a: a.id)
    by_id = {a.id: a for a in anchors}
    processed = {}
    for raw in sample.raw_cirs:
        if raw.anchor_id not in by_id:
            raise ValueError(f"sample references unknown anchor id {raw.anchor_id}")
        processed[raw.anchor_id] = process_cir(raw, by_id[raw.anchor_id].position)

    def absent_row(anchor):
        return (
            np.zeros(WINDOW_LENGTH),
            False,
            anchor.id,
            anchor.position,
            np.nan,
        )

    def present_row(pc: ProcessedCir):
        return (pc.amplitude, True, pc.anchor_id, pc.anchor_position, pc.rx_time)

    if ordering == "fixed":
        rows = [
            present_row(processed[a.id]) if a.id in processed else absent_row(a)
            for a in anchors
        ]
        padded = True
    else:
        received = sorted(processed.values(), key=lambda pc: (pc.rx_time, pc.anchor_id))
        rows = [present_row(pc) for pc in received]
        if pad_missing:
            rows.extend(absent_row(a) for a in anchors if a.id not in processed)
            padded = True
        else:
            padded = False

    values, present, ids, positions, times = zip(*rows)
    return InputTensor(
        values=np.array(values),
        present=np.array(present, dtype=bool),
        anchor_ids=np.array(ids, dtype=int),
        anchor_positions=np.array(positions),
        rx_times=np.array(times, dtype=float),
        ordering=ordering,
        n_total=env.n_anchors,
        padded=padded,
    )
