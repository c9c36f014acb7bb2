"""Patch extraction and linear token embedding.

Two ways to cut the (N, 150) input matrix into patches: multi-CIR patches
take the same column block of every row (height N, width L_patch), per-CIR
patches take L_patch consecutive samples from a single row. Patches map
through one shared linear layer to d_model-dimensional tokens, with a learned
CLS token prepended.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cir import WINDOW_LENGTH, InputTensor
from .errors import ConfigError, IncompatibleOrderingError

PATCH_STRATEGIES = ("multi_cir", "per_cir")


@dataclass(frozen=True)
class PatchConfig:
    strategy: str = "per_cir"
    l_patch: int = 150

    def __post_init__(self):
        if self.strategy not in PATCH_STRATEGIES:
            raise ConfigError(
                f"unknown patching strategy {self.strategy!r}; use one of {PATCH_STRATEGIES}"
            )
        _check_divides(self.l_patch)

    @property
    def k_per_cir(self) -> int:
        return WINDOW_LENGTH // self.l_patch


def _check_divides(l_patch: int):
    if l_patch < 1 or WINDOW_LENGTH % l_patch != 0:
        raise ConfigError(f"l_patch must divide {WINDOW_LENGTH}, got {l_patch}")


@dataclass(frozen=True)
class PatchSet:
    """Flattened patches plus per-patch provenance.

    ``row_index`` is -1 where a patch spans all rows (multi-CIR);
    ``anchor_positions`` and ``rx_times`` are NaN where a patch is not tied
    to a single anchor or the source row is a zero-padded absent anchor.
    """

    values: np.ndarray  # (n_patches, patch_size)
    row_index: np.ndarray  # (n_patches,)
    patch_j: np.ndarray  # (n_patches,) column-block index within a CIR
    anchor_positions: np.ndarray  # (n_patches, 3)
    rx_times: np.ndarray  # (n_patches,)
    strategy: str
    k_per_cir: int
    n_rows: int

    @property
    def n_patches(self) -> int:
        return self.values.shape[0]


def patch_multi_cir(m: InputTensor, l_patch: int) -> PatchSet:
    """K = 150/l_patch patches, each the same column block of every row."""
    _check_divides(l_patch)
    if not m.padded:
        raise IncompatibleOrderingError(
            "multi-CIR patching needs a zero-padded tensor with one row per "
            "environment anchor; rebuild with fixed ordering or pad_missing"
        )
    k = WINDOW_LENGTH // l_patch
    values = np.stack(
        [m.values[:, j * l_patch : (j + 1) * l_patch].reshape(-1) for j in range(k)]
    )
    nan3 = np.full((k, 3), np.nan)
    return PatchSet(
        values=values,
        row_index=np.full(k, -1, dtype=int),
        patch_j=np.arange(k, dtype=int),
        anchor_positions=nan3,
        rx_times=np.full(k, np.nan),
        strategy="multi_cir",
        k_per_cir=k,
        n_rows=m.n_rows,
    )


def patch_per_cir(m: InputTensor, l_patch: int) -> PatchSet:
    """N*K single-anchor patches in row-major order.

    Patch k comes from row i = k // K, column block j = k % K.
    """
    _check_divides(l_patch)
    k = WINDOW_LENGTH // l_patch
    n = m.n_rows
    values = m.values.reshape(n * k, l_patch)
    rows = np.repeat(np.arange(n, dtype=int), k)
    return PatchSet(
        values=values,
        row_index=rows,
        patch_j=np.tile(np.arange(k, dtype=int), n),
        anchor_positions=m.anchor_positions[rows],
        rx_times=m.rx_times[rows],
        strategy="per_cir",
        k_per_cir=k,
        n_rows=n,
    )


@dataclass(frozen=True)
class TokenSequence:
    """Embedded tokens with per-token provenance; index 0 is the CLS token."""

    tokens: np.ndarray  # (n_tokens, d_model)
    is_cls: np.ndarray  # (n_tokens,) bool
    row_index: np.ndarray  # (n_tokens,), -1 where not tied to one row
    patch_j: np.ndarray  # (n_tokens,), -1 for CLS
    anchor_positions: np.ndarray  # (n_tokens, 3), NaN where untied
    rx_times: np.ndarray  # (n_tokens,), NaN where untied/absent

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_model(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: np.ndarray) -> "TokenSequence":
        return replace(self, tokens=tokens)


def embed_patches(
    patches: PatchSet,
    weights: np.ndarray,
    bias: np.ndarray,
    cls_vector: np.ndarray,
) -> TokenSequence:
    """Linear map patch -> token, CLS prepended: token_k = patch_k @ W + b."""
    weights = np.asarray(weights, dtype=float)
    bias = np.asarray(bias, dtype=float)
    cls_vector = np.asarray(cls_vector, dtype=float)
    patch_size = patches.values.shape[1]
    if weights.shape[0] != patch_size:
        raise ValueError(
            f"embedding expects input size {weights.shape[0]}, patches have {patch_size}"
        )
    d_model = weights.shape[1]
    if bias.shape != (d_model,) or cls_vector.shape != (d_model,):
        raise ValueError("bias and CLS vector must both have d_model entries")
    body = patches.values @ weights + bias
    tokens = np.vstack([cls_vector[None, :], body])
    return TokenSequence(
        tokens=tokens,
        is_cls=np.concatenate([[True], np.zeros(patches.n_patches, dtype=bool)]),
        row_index=np.concatenate([[-1], patches.row_index]),
        patch_j=np.concatenate([[-1], patches.patch_j]),
        anchor_positions=np.vstack([np.full((1, 3), np.nan), patches.anchor_positions]),
        rx_times=np.concatenate([[np.nan], patches.rx_times]),
    )
