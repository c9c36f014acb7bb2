"""Positional encodings for CIR tokens.

Three kinds:

* ``learned``: a trainable table indexed by sequence position.
* ``spatial``: sinusoidal features of the source anchor's normalized 3D
  coordinates over log-spaced frequency bands (6F values, zero right-padded
  to d_model), plus a small learned table for the within-CIR patch index
  when one CIR spans several tokens, plus a dedicated learned CLS row.
* ``spatial_time``: spatial plus a sinusoidal encoding of each CIR's
  reception delay relative to the earliest anchor.

Spatial kinds only make sense for per-CIR tokens: a multi-CIR token mixes
samples from every anchor, so it has no single source coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, IncompatibleEncodingError, OutOfBoundsError
from .patching import TokenSequence

ENCODING_KINDS = ("learned", "spatial", "spatial_time")


def max_bands(d_model: int) -> int:
    """Largest F with 6F <= d_model (at least one band)."""
    return max(1, d_model // 6)


@dataclass(frozen=True)
class EncodingConfig:
    kind: str = "spatial"
    d_model: int = 64
    f_bands: Optional[int] = None  # None -> max_bands(d_model)
    omega_min: float = 1.0
    omega_max: float = 1000.0
    max_seq_len: int = 512
    delta_t_max_s: float = 200e-9
    clamp_positions: bool = False

    def __post_init__(self):
        if self.kind not in ENCODING_KINDS:
            raise ConfigError(f"unknown encoding kind {self.kind!r}; use one of {ENCODING_KINDS}")
        if not 0 < self.omega_min < self.omega_max:
            raise ConfigError("need 0 < omega_min < omega_max")
        if self.f_bands is not None and self.f_bands != max_bands(self.d_model):
            raise ConfigError(
                f"f_bands must be the largest F with 6F <= d_model: expected "
                f"{max_bands(self.d_model)} for d_model={self.d_model}, got {self.f_bands}"
            )
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be positive")
        if self.delta_t_max_s <= 0:
            raise ConfigError("delta_t_max_s must be positive")

    @property
    def n_bands(self) -> int:
        return self.f_bands if self.f_bands is not None else max_bands(self.d_model)


def frequency_bands(f_bands: int, omega_min: float, omega_max: float) -> np.ndarray:
    """Geometric progression from omega_min to omega_max, F values."""
    if not 0 < omega_min < omega_max:
        raise ConfigError("need 0 < omega_min < omega_max")
    if f_bands < 1:
        raise ConfigError("need at least one frequency band")
    if f_bands == 1:
        return np.array([omega_min])
    exponents = np.arange(f_bands) / (f_bands - 1)
    return omega_min * (omega_max / omega_min) ** exponents


def _sincos_interleaved(value: float, bands: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(bands))
    out[0::2] = np.sin(value * bands)
    out[1::2] = np.cos(value * bands)
    return out


def spatial_pe(anchor_position, extent, cfg: EncodingConfig) -> np.ndarray:
    """Sinusoidal encoding of a normalized 3D coordinate, padded to d_model."""
    pos = np.asarray(anchor_position, dtype=float)
    extent = np.asarray(extent, dtype=float)
    if np.any(extent <= 0):
        raise ConfigError("environment extent must be strictly positive")
    normalized = pos / extent
    if np.any(normalized < 0) or np.any(normalized > 1):
        if cfg.clamp_positions:
            normalized = np.clip(normalized, 0.0, 1.0)
        else:
            raise OutOfBoundsError(
                f"anchor position {pos.tolist()} outside extent {extent.tolist()}"
            )
    bands = frequency_bands(cfg.n_bands, cfg.omega_min, cfg.omega_max)
    encoded = np.concatenate([_sincos_interleaved(v, bands) for v in normalized])
    out = np.zeros(cfg.d_model)
    out[: len(encoded)] = encoded
    return out


def time_diff_pe(delta_t: float, cfg: EncodingConfig) -> np.ndarray:
    """Sinusoidal encoding of a reception delay, clamped to delta_t_max_s."""
    normalized = min(max(float(delta_t), 0.0), cfg.delta_t_max_s) / cfg.delta_t_max_s
    bands = frequency_bands(cfg.n_bands, cfg.omega_min, cfg.omega_max)
    encoded = _sincos_interleaved(normalized, bands)
    out = np.zeros(cfg.d_model)
    out[: len(encoded)] = encoded
    return out


def learned_pe(seq_index: int, table: np.ndarray) -> np.ndarray:
    """Row lookup in a trainable positional table."""
    table = np.asarray(table)
    if not 0 <= seq_index < table.shape[0]:
        raise IndexError(
            f"sequence index {seq_index} outside learned table of {table.shape[0]} rows"
        )
    return table[seq_index]


@dataclass
class EncodingTables:
    """Trainable rows consumed by :func:`apply_encodings`.

    ``seq`` backs the learned kind; ``cls_row`` and ``within_cir`` back the
    spatial kinds (``within_cir`` only when a CIR spans more than one token).
    """

    seq: Optional[np.ndarray] = None
    cls_row: Optional[np.ndarray] = None
    within_cir: Optional[np.ndarray] = None


def token_time_deltas(tokens: TokenSequence, cfg: EncodingConfig) -> np.ndarray:
    """Per-token delay since the earliest reception; absent rows clamp to max."""
    times = tokens.rx_times
    finite = np.isfinite(times)
    deltas = np.full(tokens.n_tokens, cfg.delta_t_max_s)
    if finite.any():
        deltas[finite] = times[finite] - times[finite].min()
    return deltas


def constant_encoding_rows(tokens: TokenSequence, cfg: EncodingConfig, extent) -> np.ndarray:
    """The non-trainable (sin/cos) encoding addend for each non-CLS token."""
    body = ~tokens.is_cls
    if np.isnan(tokens.anchor_positions[body]).any():
        raise IncompatibleEncodingError(
            "spatial encodings need per-CIR tokens; multi-CIR tokens have no "
            "single source anchor"
        )
    rows = np.stack(
        [spatial_pe(p, extent, cfg) for p in tokens.anchor_positions[body]]
    )
    if cfg.kind == "spatial_time":
        deltas = token_time_deltas(tokens, cfg)[body]
        rows = rows + np.stack([time_diff_pe(dt, cfg) for dt in deltas])
    return rows


def apply_encodings(
    tokens: TokenSequence,
    cfg: EncodingConfig,
    extent=None,
    tables: EncodingTables = EncodingTables(),
) -> TokenSequence:
    """Add positional information to embedded tokens.

    Learned: every token gets its sequence-position row (CLS is position 0).
    Spatial kinds: CLS gets a dedicated learned row; each body token gets the
    sinusoidal encoding of its source anchor (plus the time-difference term
    for ``spatial_time``), plus the within-CIR row for its patch index when
    one CIR spans several tokens. Zero-padded absent rows are encoded like
    present ones: the anchor position is known even without a packet.
    """
    out = tokens.tokens.copy()
    if cfg.kind == "learned":
        if tables.seq is None:
            raise ValueError("learned encoding needs the seq table")
        for s in range(tokens.n_tokens):
            out[s] += learned_pe(s, tables.seq)
        return tokens.with_tokens(out)

    if extent is None:
        raise ValueError("spatial encodings need the environment extent")
    if tables.cls_row is None:
        raise ValueError("spatial encodings need the learned CLS row")
    body = ~tokens.is_cls
    out[body] += constant_encoding_rows(tokens, cfg, extent)
    out[tokens.is_cls] += tables.cls_row
    if tables.within_cir is not None:
        out[body] += tables.within_cir[tokens.patch_j[body]]
    return tokens.with_tokens(out)
