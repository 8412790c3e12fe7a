"""Decoder-only transformer language model with tied input/output embeddings.

Pre-layer-norm GPT-2 style blocks (multi-head causal self-attention followed
by a 4x GELU MLP, residual connections), learned position embeddings, and a
tied output path: hidden states go through a projection matrix into the
embedding space and logits are produced against the transpose of the token
embedding matrix plus a bias. No separate output vocabulary matrix exists.

Multilingual variants: `embedding` adds a language embedding to every input
position, `control_codes` prefixes samples with a language token, and
`double_heads` trains a language-classification head next to the LM head.

Parameter accounting (d = d_model, with d_x = d_model enforced):
  embeddings: |V|*d_x + N_ctx*d_x (+ N_lang*d_x for `embedding` mode)
  per block:  12*d^2 + 13*d   (qkv & out projections with bias, two layer
                               norms, 4x MLP with bias)
  final norm: 2*d (absent in the degenerate 0-block model)
  output:     d*d_x projection + |V| bias (+ d*N_lang for `double_heads`)
The block term is the quadratic part of the usual near-linear-in-depth
scaling; the constant 12 comes from the attention and MLP shapes above.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .vocab import SubtokenVocabulary, lang_prefix_text, SEP_TEXT
from . import lexnorm

LANG_NONE = "none"
LANG_EMBEDDING = "embedding"
LANG_CONTROL_CODES = "control_codes"
LANG_DOUBLE_HEADS = "double_heads"
LANG_MODES = (LANG_NONE, LANG_EMBEDDING, LANG_CONTROL_CODES, LANG_DOUBLE_HEADS)

CHECKPOINT_MAGIC = "gptc-ckpt v1"


class ModelError(Exception):
    pass


class ContextOverflowError(ModelError):
    """Requested positions exceed the configured context length."""


class CapabilityError(ModelError):
    """Operation requires a language mode the model was not built with."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 128
    d_x: int = 128
    n_heads: int = 4
    n_ctx: int = 128
    vocab_size: int = 2000
    dropout_keep: float = 0.9
    lang_mode: str = LANG_NONE
    n_langs: int = 0
    lambda_classify: float = 0.5

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_x != self.d_model:
            raise ModelError(
                "d_x must equal d_model: the block stack reads embeddings directly"
            )
        if self.n_ctx < 2:
            raise ModelError(f"n_ctx must be >= 2, got {self.n_ctx}")
        if self.lang_mode not in LANG_MODES:
            raise ModelError(f"unknown lang_mode {self.lang_mode!r}")
        if self.lang_mode in (LANG_EMBEDDING, LANG_DOUBLE_HEADS) and self.n_langs < 2:
            raise ModelError(f"lang_mode {self.lang_mode} requires n_langs >= 2")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ModelError("dropout_keep must be in (0, 1]")


def count_params(config: ModelConfig, tied_output: bool = True) -> int:
    """Exact trainable-parameter count for this architecture.

    With `tied_output=False` the projection matrix is replaced by a full
    |V| x d_model output matrix (the untied control), so tying saves
    |V|*d_x - d_model*d_x parameters.
    """
    d = config.d_model
    total = config.vocab_size * config.d_x + config.n_ctx * config.d_x
    if config.lang_mode == LANG_EMBEDDING:
        total += config.n_langs * config.d_x
    total += config.n_layers * (12 * d * d + 13 * d)
    if config.n_layers > 0:
        total += 2 * d
    if tied_output:
        total += d * config.d_x
    else:
        total += config.vocab_size * d
    total += config.vocab_size
    if config.lang_mode == LANG_DOUBLE_HEADS:
        total += d * config.n_langs
    return total


@dataclass
class KVCache:
    """Per-layer attention keys/values for already-processed positions."""

    keys: list[torch.Tensor]
    values: list[torch.Tensor]
    length: int

    @staticmethod
    def empty(n_layers: int) -> "KVCache":
        return KVCache(keys=[None] * n_layers, values=[None] * n_layers, length=0)

    @property
    def n_layers(self) -> int:
        return len(self.keys)

    def select(self, indices: Sequence[int]) -> "KVCache":
        """New cache with batch rows reordered/duplicated per `indices`."""
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        return KVCache(
            keys=[k.index_select(0, idx) for k in self.keys],
            values=[v.index_select(0, idx) for v in self.values],
            length=self.length,
        )


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.d_model
        self.ln1 = nn.LayerNorm(d)
        self.attn_qkv = nn.Linear(d, 3 * d)
        self.attn_out = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.mlp_in = nn.Linear(d, 4 * d)
        self.mlp_out = nn.Linear(4 * d, d)
        self.n_heads = config.n_heads
        self.drop = nn.Dropout(1.0 - config.dropout_keep)

    def forward(
        self,
        h: torch.Tensor,
        past_k: torch.Tensor | None,
        past_v: torch.Tensor | None,
        offset: int,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        bsz, t, d = h.shape
        head_dim = d // self.n_heads

        x = self.ln1(h)
        qkv = self.attn_qkv(x)
        q, k, v = qkv.split(d, dim=2)

        def heads(m: torch.Tensor) -> torch.Tensor:
            return m.view(bsz, -1, self.n_heads, head_dim).transpose(1, 2)

        q, k, v = heads(q), heads(k), heads(v)
        if past_k is not None:
            k = torch.cat([past_k, k], dim=2)
            v = torch.cat([past_v, v], dim=2)

        scores = q @ k.transpose(2, 3) / math.sqrt(head_dim)
        # Query i (global position offset+i) may attend keys at global j <= offset+i.
        total = k.shape[2]
        q_pos = torch.arange(offset, offset + t, device=h.device).unsqueeze(1)
        k_pos = torch.arange(total, device=h.device).unsqueeze(0)
        scores = scores.masked_fill(k_pos > q_pos, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        context = (attn @ v).transpose(1, 2).reshape(bsz, t, d)
        h = h + self.drop(self.attn_out(context))

        m = self.mlp_out(nn.functional.gelu(self.mlp_in(self.ln2(h))))
        h = h + self.drop(m)
        return h, k, v


class TransformerLM(nn.Module):
    """The full parameter set plus forward pass; see module docstring."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.token_embedding = nn.Parameter(torch.empty(config.vocab_size, config.d_x))
        self.position_embedding = nn.Parameter(torch.empty(config.n_ctx, config.d_x))
        if config.lang_mode == LANG_EMBEDDING:
            self.language_embedding = nn.Parameter(torch.empty(config.n_langs, config.d_x))
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        if config.n_layers > 0:
            self.final_norm = nn.LayerNorm(config.d_model)
        self.output_projection = nn.Parameter(torch.empty(config.d_model, config.d_x))
        self.output_bias = nn.Parameter(torch.empty(config.vocab_size))
        if config.lang_mode == LANG_DOUBLE_HEADS:
            self.classify_head = nn.Linear(config.d_model, config.n_langs, bias=False)
        self.embed_drop = nn.Dropout(1.0 - config.dropout_keep)

    def hidden_states(
        self,
        ids: torch.Tensor,
        lang: torch.Tensor | None = None,
        cache: KVCache | None = None,
    ) -> tuple[torch.Tensor, KVCache]:
        """Block-stack output (post final norm) and the updated KV cache."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        bsz, t = ids.shape
        offset = cache.length if cache is not None else 0
        if offset + t > self.config.n_ctx:
            raise ContextOverflowError(
                f"{offset + t} positions exceed context length {self.config.n_ctx}"
            )
        positions = torch.arange(offset, offset + t, device=ids.device)
        h = self.token_embedding[ids] + self.position_embedding[positions]
        if self.config.lang_mode == LANG_EMBEDDING:
            if lang is None:
                raise ModelError("lang index required in embedding mode")
            lang = torch.as_tensor(lang, device=ids.device).reshape(-1)
            if lang.numel() == 1:
                lang = lang.expand(bsz)
            h = h + self.language_embedding[lang].unsqueeze(1)
        h = self.embed_drop(h)

        new_cache = KVCache.empty(len(self.blocks))
        for i, block in enumerate(self.blocks):
            past_k = cache.keys[i] if cache is not None and cache.length > 0 else None
            past_v = cache.values[i] if cache is not None and cache.length > 0 else None
            h, k, v = block(h, past_k, past_v, offset)
            new_cache.keys[i] = k.detach()
            new_cache.values[i] = v.detach()
        new_cache.length = offset + t
        if self.config.n_layers > 0:
            h = self.final_norm(h)
        return h, new_cache

    def forward(
        self,
        ids: torch.Tensor | Sequence[int],
        lang: torch.Tensor | int | None = None,
        cache: KVCache | None = None,
    ) -> tuple[torch.Tensor, KVCache]:
        """Logits of shape (batch, time, |V|) plus the updated cache.

        Logits reuse the token embedding matrix: h -> A -> W_e^T + b.
        """
        ids = torch.as_tensor(ids, dtype=torch.long)
        squeeze = ids.dim() == 1
        h, new_cache = self.hidden_states(ids, lang=_as_lang(lang), cache=cache)
        w_pred = h @ self.output_projection
        logits = w_pred @ self.token_embedding.T + self.output_bias
        if squeeze:
            logits = logits.squeeze(0)
        return logits, new_cache

    def classify_logits(
        self, ids: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Language-classification logits from the final-position hidden state."""
        if self.config.lang_mode != LANG_DOUBLE_HEADS:
            raise CapabilityError("classification head requires lang_mode=double_heads")
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        h, _ = self.hidden_states(ids)
        if lengths is None:
            final = h[:, -1]
        else:
            idx = (lengths - 1).clamp(min=0)
            final = h[torch.arange(h.shape[0]), idx]
        return self.classify_head(final)


def _as_lang(lang) -> torch.Tensor | None:
    if lang is None:
        return None
    return torch.as_tensor(lang, dtype=torch.long)


def init_model(config: ModelConfig, seed: int) -> TransformerLM:
    """Deterministic initialization: weights ~ N(0, 0.02), layer-norm gain 1
    bias 0, output bias 0, projection ~ U(-0.05, 0.05)."""
    model = TransformerLM(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if name == "output_projection":
                param.uniform_(-0.05, 0.05, generator=gen)
            elif name == "output_bias":
                param.zero_()
            elif _is_layernorm_weight(model, name):
                if name.endswith(".weight"):
                    param.fill_(1.0)
                else:
                    param.zero_()
            elif name.endswith(".bias"):
                param.zero_()
            else:
                param.normal_(0.0, 0.02, generator=gen)
    return model


def _is_layernorm_weight(model: nn.Module, name: str) -> bool:
    module_path = name.rsplit(".", 1)[0]
    try:
        module = model.get_submodule(module_path)
    except AttributeError:
        return False
    return isinstance(module, nn.LayerNorm)


def brute_force_param_count(model: TransformerLM) -> int:
    return sum(p.numel() for p in model.parameters())


def batch_tensors(
    batch: Sequence[tuple[Sequence[int], int | None]],
    pad_id: int = 0,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    """Right-pad a batch of (ids, lang) pairs into (ids, lengths, langs)."""
    if not batch:
        raise ModelError("empty batch")
    max_len = max(len(ids) for ids, _ in batch)
    ids_tensor = torch.full((len(batch), max_len), pad_id, dtype=torch.long)
    lengths = torch.zeros(len(batch), dtype=torch.long)
    langs: list[int] = []
    have_lang = True
    for row, (ids, lang) in enumerate(batch):
        ids_tensor[row, : len(ids)] = torch.as_tensor(list(ids), dtype=torch.long)
        lengths[row] = len(ids)
        if lang is None:
            have_lang = False
        else:
            langs.append(lang)
    lang_tensor = torch.as_tensor(langs, dtype=torch.long) if have_lang else None
    return ids_tensor, lengths, lang_tensor


def compute_loss(
    model: TransformerLM,
    batch: Sequence[tuple[Sequence[int], int | None]],
) -> torch.Tensor:
    """Mean next-token cross-entropy with shift-by-one targets; double-heads
    adds lambda-weighted language-classification cross-entropy."""
    if not batch:
        raise ModelError("empty batch")
    config = model.config
    if config.lang_mode in (LANG_EMBEDDING, LANG_DOUBLE_HEADS):
        if any(lang is None for _, lang in batch):
            raise ModelError(f"lang labels required in {config.lang_mode} mode")
    ids, lengths, langs = batch_tensors(batch)
    emb_lang = langs if config.lang_mode == LANG_EMBEDDING else None
    h, _ = model.hidden_states(ids, lang=emb_lang)
    w_pred = h @ model.output_projection
    logits = w_pred @ model.token_embedding.T + model.output_bias

    pred = logits[:, :-1]
    targets = ids[:, 1:]
    t = pred.shape[1]
    valid = torch.arange(t).unsqueeze(0) < (lengths - 1).unsqueeze(1)
    log_probs = torch.log_softmax(pred, dim=-1)
    token_nll = -log_probs.gather(2, targets.unsqueeze(2)).squeeze(2)
    lm_loss = token_nll[valid].mean()

    if config.lang_mode == LANG_DOUBLE_HEADS:
        idx = (lengths - 1).clamp(min=0)
        final = h[torch.arange(h.shape[0]), idx]
        cls_logits = model.classify_head(final)
        cls_loss = nn.functional.cross_entropy(cls_logits, langs)
        return lm_loss + config.lambda_classify * cls_loss
    return lm_loss


def loss_and_grads(
    model: TransformerLM,
    batch: Sequence[tuple[Sequence[int], int | None]],
) -> tuple[float, dict[str, torch.Tensor]]:
    """Scalar loss plus a gradient tensor for every parameter."""
    model.zero_grad(set_to_none=True)
    loss = compute_loss(model, batch)
    loss.backward()
    grads = {
        name: param.grad.detach().clone()
        for name, param in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return float(loss.detach()), grads


def classify_language(
    model: TransformerLM, ids: Sequence[int]
) -> tuple[int, np.ndarray]:
    """Argmax language plus softmax probabilities (double-heads models only)."""
    model.eval()
    with torch.no_grad():
        logits = model.classify_logits(torch.as_tensor(list(ids), dtype=torch.long))
        probs = torch.softmax(logits[0], dim=-1)
    return int(torch.argmax(probs)), probs.numpy()


def prepend_control_code(
    ids: Sequence[int],
    language: str,
    vocabulary: SubtokenVocabulary,
    lang_mode: str = LANG_CONTROL_CODES,
) -> list[int]:
    """Insert `<LANG:lang> <SEP>` after `<BOF>`; identity unless in
    control-codes mode. Re-application is rejected."""
    ids = list(ids)
    if lang_mode != LANG_CONTROL_CODES:
        return ids
    try:
        lang_id = vocabulary.special_id(lang_prefix_text(language))
    except Exception as exc:
        raise ModelError(f"language {language!r} has no registered control code") from exc
    sep_id = vocabulary.special_id(SEP_TEXT)
    bof_id = vocabulary.special_id(lexnorm.BOF_TEXT)
    if not ids or ids[0] != bof_id:
        raise ModelError("sequence must start with <BOF>")
    if len(ids) > 1 and ids[1] == lang_id:
        raise ModelError("control code already present")
    return [bof_id, lang_id, sep_id] + ids[1:]


def distill_init(teacher: TransformerLM, student_layers: int, seed: int = 0) -> TransformerLM:
    """Student initialized from teacher: embeddings, projection, bias and
    norms copied; student block i takes teacher block floor(i*n_t/n_s)."""
    t_config = teacher.config
    if student_layers >= t_config.n_layers:
        raise ModelError(
            f"student must be shallower than teacher ({student_layers} >= {t_config.n_layers})"
        )
    if student_layers < 1:
        raise ModelError("student needs at least one block")
    s_config = ModelConfig(
        n_layers=student_layers,
        d_model=t_config.d_model,
        d_x=t_config.d_x,
        n_heads=t_config.n_heads,
        n_ctx=t_config.n_ctx,
        vocab_size=t_config.vocab_size,
        dropout_keep=t_config.dropout_keep,
        lang_mode=t_config.lang_mode,
        n_langs=t_config.n_langs,
        lambda_classify=t_config.lambda_classify,
    )
    student = init_model(s_config, seed)
    with torch.no_grad():
        state = dict(teacher.state_dict())
        for i in range(student_layers):
            src = (i * t_config.n_layers) // student_layers
            for name, value in state.items():
                prefix = f"blocks.{src}."
                if name.startswith(prefix):
                    student.state_dict()[f"blocks.{i}." + name[len(prefix):]].copy_(value)
        for name, value in state.items():
            if not name.startswith("blocks."):
                student.state_dict()[name].copy_(value)
    return student


def selected_teacher_blocks(n_teacher: int, n_student: int) -> list[int]:
    return [(i * n_teacher) // n_student for i in range(n_student)]


def save_checkpoint(model: TransformerLM, path: str | Path) -> None:
    """Versioned container: magic line, config JSON, tensor manifest JSON,
    then raw row-major little-endian float32 data in manifest order."""
    state = model.state_dict()
    manifest = [[name, list(tensor.shape)] for name, tensor in state.items()]
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(asdict(model.config)) + "\n").encode("utf-8"))
        fh.write((json.dumps(manifest) + "\n").encode("utf-8"))
        for name, tensor in state.items():
            fh.write(tensor.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> TransformerLM:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"not a {CHECKPOINT_MAGIC} file: {path}")
        config = ModelConfig(**json.loads(fh.readline().decode("utf-8")))
        manifest = json.loads(fh.readline().decode("utf-8"))
        model = TransformerLM(config)
        state = model.state_dict()
        for name, shape in manifest:
            if name not in state:
                raise ModelError(f"unknown tensor {name!r} in checkpoint")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise ModelError(f"truncated checkpoint at tensor {name!r}")
            array = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            with torch.no_grad():
                state[name].copy_(torch.from_numpy(array))
    model.eval()
    return model
