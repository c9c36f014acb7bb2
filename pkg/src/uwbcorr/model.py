"""Encoder-only transformer that corrects TDoA position estimates.

Pipeline per sample: raw CIRs -> ordered input tensor -> patches -> linear
token embedding (+ CLS) -> positional encodings -> post-norm encoder blocks
(multi-head self-attention and a position-wise feed-forward, each with
residual + layer norm) -> the CLS output concatenated with the normalized
baseline estimate feeds an MLP head (256, 128, 64, 3). With
``residual_output`` the head predicts a correction added to the baseline, so
a zero-initialized final layer reproduces the baseline exactly.

Everything runs in float64 on a small tape-based autodiff engine; the same
graph code serves training, evaluation and the single-sequence helpers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .cir import InputTensor, build_input_tensor
from .encodings import EncodingConfig, constant_encoding_rows
from .errors import ConfigError, IncompatibleEncodingError
from .patching import PatchConfig, PatchSet, TokenSequence, patch_multi_cir, patch_per_cir
from .simulate import Environment, Sample
from .tdoa import SolverOptions, baseline_position

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    patch: PatchConfig = PatchConfig()
    encoding: EncodingConfig = EncodingConfig()
    ordering: str = "fixed"
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 8
    d_ff: int = 256
    dropout_p: float = 0.15
    head_widths: tuple[int, ...] = (256, 128, 64, 3)
    residual_output: bool = True
    n_total: int = 15
    extent: tuple[float, float, float] = (30.0, 10.0, 3.0)

    def __post_init__(self):
        if self.ordering not in ("fixed", "time_based"):
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.head_widths[-1] != 3:
            raise ConfigError("regression head must end in 3 outputs")
        if self.encoding.d_model != self.d_model:
            raise ConfigError(
                f"encoding d_model={self.encoding.d_model} != model d_model={self.d_model}"
            )
        if self.patch.strategy == "multi_cir" and self.encoding.kind != "learned":
            raise IncompatibleEncodingError(
                "spatial encodings need per-CIR patches; multi-CIR tokens mix "
                "samples from every anchor"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")

    @property
    def max_tokens(self) -> int:
        k = self.patch.k_per_cir
        body = k if self.patch.strategy == "multi_cir" else self.n_total * k
        return body + 1


def make_model_config(
    patching: str,
    ordering: str,
    encoding: str,
    l_patch: int,
    d_model: int,
    env: Optional[Environment] = None,
    **overrides,
) -> ModelConfig:
    """Convenience builder that wires the nested configs consistently."""
    n_total = env.n_anchors if env is not None else overrides.pop("n_total", 15)
    extent = env.extent if env is not None else overrides.pop("extent", (30.0, 10.0, 3.0))
    patch = PatchConfig(strategy=patching, l_patch=l_patch)
    body = patch.k_per_cir if patching == "multi_cir" else n_total * patch.k_per_cir
    enc = EncodingConfig(
        kind=encoding,
        d_model=d_model,
        max_seq_len=body + 1,
        **overrides.pop("encoding_overrides", {}),
    )
    return ModelConfig(
        patch=patch,
        encoding=enc,
        ordering=ordering,
        d_model=d_model,
        n_total=n_total,
        extent=tuple(float(v) for v in extent),
        **overrides,
    )


def init_parameters(
    cfg: ModelConfig, seed: int = 0, zero_final_layer: bool = True
) -> dict[str, np.ndarray]:
    """Fresh parameter arrays: fan-in normal for linear maps, N(0, 0.02^2)
    for embeddings/encoding tables, identity layer norms.

    The final head layer starts at zero by default so a residual-output model
    reproduces the baseline estimate before any training.
    """
    rng = np.random.default_rng(seed)
    d = cfg.d_model

    def linear(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))

    if cfg.patch.strategy == "multi_cir":
        patch_size = cfg.n_total * cfg.patch.l_patch
    else:
        patch_size = cfg.patch.l_patch

    params: dict[str, np.ndarray] = {}
    params["embed.w"] = linear(patch_size, d)
    params["embed.b"] = np.zeros(d)
    params["cls"] = rng.normal(0.0, 0.02, size=d)
    if cfg.encoding.kind == "learned":
        params["pe.seq"] = rng.normal(0.0, 0.02, size=(cfg.encoding.max_seq_len, d))
    else:
        params["pe.cls"] = rng.normal(0.0, 0.02, size=d)
        if cfg.patch.k_per_cir > 1:
            params["pe.within"] = rng.normal(0.0, 0.02, size=(cfg.patch.k_per_cir, d))
    for i in range(cfg.n_layers):
        pre = f"enc{i}."
        for name in ("wq", "wk", "wv", "wo"):
            params[pre + f"attn.{name}"] = linear(d, d)
            params[pre + f"attn.b{name[1]}"] = np.zeros(d)
        params[pre + "ln1.g"] = np.ones(d)
        params[pre + "ln1.b"] = np.zeros(d)
        params[pre + "ff.w1"] = linear(d, cfg.d_ff)
        params[pre + "ff.b1"] = np.zeros(cfg.d_ff)
        params[pre + "ff.w2"] = linear(cfg.d_ff, d)
        params[pre + "ff.b2"] = np.zeros(d)
        params[pre + "ln2.g"] = np.ones(d)
        params[pre + "ln2.b"] = np.zeros(d)
    widths = (d + 3,) + tuple(cfg.head_widths)
    for j in range(len(cfg.head_widths)):
        last = j == len(cfg.head_widths) - 1
        if last and zero_final_layer:
            params[f"head{j}.w"] = np.zeros((widths[j], widths[j + 1]))
        else:
            params[f"head{j}.w"] = linear(widths[j], widths[j + 1])
        params[f"head{j}.b"] = np.zeros(widths[j + 1])
    return params


@dataclass
class PreparedExample:
    """Constant per-sample inputs for the differentiable forward pass."""

    patches: np.ndarray  # (n_patches, patch_size)
    pe_const: Optional[np.ndarray]  # (n_patches, d_model) sin/cos addend, spatial kinds
    within_idx: Optional[np.ndarray]  # (n_patches,) rows into pe.within
    p_tdoa: np.ndarray  # (3,)
    p_tdoa_norm: np.ndarray  # (3,)
    target: Optional[np.ndarray]  # (3,) true position, None at inference
    n_tokens: int


def prepare_from_tensor(
    tensor: InputTensor,
    cfg: ModelConfig,
    p_tdoa: np.ndarray,
    target=None,
) -> PreparedExample:
    if cfg.patch.strategy == "multi_cir":
        patches = patch_multi_cir(tensor, cfg.patch.l_patch)
    else:
        patches = patch_per_cir(tensor, cfg.patch.l_patch)
    tokens_meta = _patchset_token_meta(patches, cfg.d_model)
    if cfg.encoding.kind == "learned":
        pe_const = None
        within_idx = None
        if patches.n_patches + 1 > cfg.encoding.max_seq_len:
            raise ConfigError(
                f"{patches.n_patches + 1} tokens exceed max_seq_len="
                f"{cfg.encoding.max_seq_len}"
            )
    else:
        pe_const = constant_encoding_rows(tokens_meta, cfg.encoding, cfg.extent)
        within_idx = patches.patch_j if cfg.patch.k_per_cir > 1 else None
    p_tdoa = np.asarray(p_tdoa, dtype=float)
    return PreparedExample(
        patches=patches.values,
        pe_const=pe_const,
        within_idx=within_idx,
        p_tdoa=p_tdoa,
        p_tdoa_norm=p_tdoa / np.asarray(cfg.extent),
        target=None if target is None else np.asarray(target, dtype=float),
        n_tokens=patches.n_patches + 1,
    )


def prepare_example(
    sample: Sample,
    env: Environment,
    cfg: ModelConfig,
    p_tdoa: np.ndarray,
    target=None,
) -> PreparedExample:
    tensor = build_input_tensor(
        sample, env, cfg.ordering, pad_missing=(cfg.patch.strategy == "multi_cir")
    )
    return prepare_from_tensor(tensor, cfg, p_tdoa, target)


def _patchset_token_meta(patches: PatchSet, d_model: int) -> TokenSequence:
    # Zero-token sequence carrying only provenance; used to reuse the
    # encoding-row construction for the graph path.
    n = patches.n_patches
    return TokenSequence(
        tokens=np.zeros((n + 1, d_model)),
        is_cls=np.concatenate([[True], np.zeros(n, dtype=bool)]),
        row_index=np.concatenate([[-1], patches.row_index]),
        patch_j=np.concatenate([[-1], patches.patch_j]),
        anchor_positions=np.vstack([np.full((1, 3), np.nan), patches.anchor_positions]),
        rx_times=np.concatenate([[np.nan], patches.rx_times]),
    )


def _dropout(x: ad.Tensor, p: float, train: bool, rng) -> ad.Tensor:
    if not train or p <= 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return ad.mul(x, ad.Tensor(mask))


def _affine(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, w), b)


def _ln_affine(x: ad.Tensor, g: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.mul(ad.layer_norm(x), g), b)


def _multi_head_attention(x: ad.Tensor, prm, pre: str, cfg: ModelConfig) -> ad.Tensor:
    b, n, d = x.data.shape
    heads = cfg.n_heads
    hw = d // heads

    def project(name):
        t = _affine(x, prm[pre + f"attn.w{name}"], prm[pre + f"attn.b{name}"])
        return ad.transpose(ad.reshape(t, (b, n, heads, hw)), (0, 2, 1, 3))

    q, k, v = project("q"), project("k"), project("v")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hw))
    ctx = ad.matmul(ad.softmax(scores), v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return _affine(ctx, prm[pre + "attn.wo"], prm[pre + "attn.bo"])


def _encoder_stack(x: ad.Tensor, prm, cfg: ModelConfig, train: bool, rng) -> ad.Tensor:
    for i in range(cfg.n_layers):
        pre = f"enc{i}."
        att = _dropout(_multi_head_attention(x, prm, pre, cfg), cfg.dropout_p, train, rng)
        x = _ln_affine(ad.add(x, att), prm[pre + "ln1.g"], prm[pre + "ln1.b"])
        h = ad.relu(_affine(x, prm[pre + "ff.w1"], prm[pre + "ff.b1"]))
        h = _affine(h, prm[pre + "ff.w2"], prm[pre + "ff.b2"])
        h = _dropout(h, cfg.dropout_p, train, rng)
        x = _ln_affine(ad.add(x, h), prm[pre + "ln2.g"], prm[pre + "ln2.b"])
    return x


class CorrectionModel:
    """Parameter store plus the differentiable forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], history=None):
        self.config = config
        self.params = {k: ad.Tensor(np.array(v, dtype=float), requires_grad=True) for k, v in params.items()}
        self.history = history

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, zero_final_layer: bool = True):
        return cls(config, init_parameters(config, seed, zero_final_layer))

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, t in self.params.items():
            t.data = arrays[k].copy()

    def forward_prepared(
        self, examples: Sequence[PreparedExample], train: bool = False, rng=None
    ) -> ad.Tensor:
        """Batched predictions (B, 3); all examples must share a token count."""
        if not examples:
            raise ValueError("empty batch")
        if train and rng is None:
            rng = np.random.default_rng()
        n_tokens = examples[0].n_tokens
        if any(e.n_tokens != n_tokens for e in examples):
            raise ValueError("examples in one batch must have equal token counts")
        cfg = self.config
        prm = self.params
        batch = len(examples)

        patches = ad.Tensor(np.stack([e.patches for e in examples]))
        embedded = _affine(patches, prm["embed.w"], prm["embed.b"])
        cls_tok = ad.add(
            ad.reshape(prm["cls"], (1, 1, cfg.d_model)),
            ad.Tensor(np.zeros((batch, 1, cfg.d_model))),
        )
        if cfg.encoding.kind == "learned":
            x = ad.concat([cls_tok, embedded], axis=1)
            x = ad.add(x, ad.gather(prm["pe.seq"], np.arange(n_tokens)))
        else:
            body = ad.add(embedded, ad.Tensor(np.stack([e.pe_const for e in examples])))
            if examples[0].within_idx is not None:
                body = ad.add(body, ad.gather(prm["pe.within"], examples[0].within_idx))
            cls_tok = ad.add(cls_tok, ad.reshape(prm["pe.cls"], (1, 1, cfg.d_model)))
            x = ad.concat([cls_tok, body], axis=1)

        x = _encoder_stack(x, prm, cfg, train, rng)
        cls_out = ad.select(x, 1, 0)
        h = ad.concat([cls_out, ad.Tensor(np.stack([e.p_tdoa_norm for e in examples]))], axis=1)
        for j in range(len(cfg.head_widths)):
            h = _affine(h, prm[f"head{j}.w"], prm[f"head{j}.b"])
            if j < len(cfg.head_widths) - 1:
                h = ad.relu(h)
        if cfg.residual_output:
            h = ad.add(h, ad.Tensor(np.stack([e.p_tdoa for e in examples])))
        return h

    def predict_prepared(self, examples: Sequence[PreparedExample]) -> np.ndarray:
        return self.forward_prepared(examples, train=False).data

    def predict(self, sample: Sample, env: Environment, p_tdoa) -> np.ndarray:
        example = prepare_example(sample, env, self.config, p_tdoa)
        return self.predict_prepared([example])[0]


def attention(q, k, v) -> np.ndarray:
    """Scaled dot-product attention softmax(Q K^T / sqrt(h)) V.

    Operates on the last two axes; every softmax row sums to one, so each
    output row is a convex combination of the rows of V.
    """
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    head_width = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(head_width)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    return weights @ v


def encoder_forward(
    tokens: TokenSequence, model: CorrectionModel, train_mode: bool = False, rng=None
) -> TokenSequence:
    """Run the encoder blocks on one token sequence; shape is preserved."""
    if tokens.d_model != model.config.d_model:
        raise ValueError(
            f"token width {tokens.d_model} != model d_model {model.config.d_model}"
        )
    if train_mode and rng is None:
        rng = np.random.default_rng()
    x = ad.Tensor(tokens.tokens[None, :, :])
    out = _encoder_stack(x, model.params, model.config, train_mode, rng).data[0]
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite activations in encoder")
    return tokens.with_tokens(out)


def regression_head(cls_out, p_tdoa, model: CorrectionModel) -> np.ndarray:
    """MLP over [CLS output, baseline normalized by the extent] -> position."""
    cls_out = np.asarray(cls_out, dtype=float)
    p_tdoa = np.asarray(p_tdoa, dtype=float)
    if not (np.isfinite(cls_out).all() and np.isfinite(p_tdoa).all()):
        raise ValueError("non-finite input to regression head")
    cfg = model.config
    h = ad.Tensor(np.concatenate([cls_out, p_tdoa / np.asarray(cfg.extent)])[None, :])
    for j in range(len(cfg.head_widths)):
        h = _affine(h, model.params[f"head{j}.w"], model.params[f"head{j}.b"])
        if j < len(cfg.head_widths) - 1:
            h = ad.relu(h)
    out = h.data[0]
    return p_tdoa + out if cfg.residual_output else out


def forward(
    sample: Sample,
    env: Environment,
    model: CorrectionModel,
    p_tdoa=None,
    solver: SolverOptions = SolverOptions(),
) -> np.ndarray:
    """Corrected position for one sample; computes the baseline if not given."""
    if p_tdoa is None:
        p_tdoa = baseline_position(sample, env.anchors, options=solver).position
    return model.predict(sample, env, p_tdoa)


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "patch": {"strategy": cfg.patch.strategy, "l_patch": cfg.patch.l_patch},
        "encoding": {
            "kind": cfg.encoding.kind,
            "d_model": cfg.encoding.d_model,
            "f_bands": cfg.encoding.f_bands,
            "omega_min": cfg.encoding.omega_min,
            "omega_max": cfg.encoding.omega_max,
            "max_seq_len": cfg.encoding.max_seq_len,
            "delta_t_max_s": cfg.encoding.delta_t_max_s,
            "clamp_positions": cfg.encoding.clamp_positions,
        },
        "ordering": cfg.ordering,
        "d_model": cfg.d_model,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "d_ff": cfg.d_ff,
        "dropout_p": cfg.dropout_p,
        "head_widths": list(cfg.head_widths),
        "residual_output": cfg.residual_output,
        "n_total": cfg.n_total,
        "extent": list(cfg.extent),
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        patch=PatchConfig(**d["patch"]),
        encoding=EncodingConfig(**d["encoding"]),
        ordering=d["ordering"],
        d_model=d["d_model"],
        n_layers=d["n_layers"],
        n_heads=d["n_heads"],
        d_ff=d["d_ff"],
        dropout_p=d["dropout_p"],
        head_widths=tuple(d["head_widths"]),
        residual_output=d["residual_output"],
        n_total=d["n_total"],
        extent=tuple(d["extent"]),
    )


def save_checkpoint(model: CorrectionModel, path):
    meta = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": config_to_dict(model.config),
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.parameter_arrays())


def load_checkpoint(path) -> CorrectionModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise ConfigError(
                f"checkpoint schema {meta.get('schema_version')} not supported"
            )
        params = {k: data[k] for k in data.files if k != "__meta__"}
    return CorrectionModel(config_from_dict(meta["config"]), params)
