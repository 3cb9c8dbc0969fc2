"""Bidirectional transformer encoder trained on masked positions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .codec import VOCAB_SIZE

CHECKPOINT_FORMAT = "eca-lab-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Non-finite values; ``where`` names the layer or parameter."""

    def __init__(self, where, detail="non-finite values"):
        self.where = where
        super().__init__(f"{detail} in {where}")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 512
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by {self.num_heads} heads")
        if min(self.num_layers, self.num_heads, self.d_model, self.d_ff, self.max_seq_len) < 1:
            raise ValueError("model dimensions must be positive")


# Reference point of the original experiments; far too slow for a desk run.
PAPER_MODEL = ModelConfig(num_layers=4, num_heads=8, d_model=512, d_ff=2048)
DESK_MODEL = ModelConfig()


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, L) int64
    targets: torch.Tensor  # (B, M) int64, values in {0, 1}
    mask_positions: torch.Tensor  # (M,) or (B, M) int64

    @classmethod
    def from_arrays(cls, tokens, targets, mask_positions):
        return cls(
            torch.as_tensor(tokens, dtype=torch.long),
            torch.as_tensor(targets, dtype=torch.long),
            torch.as_tensor(mask_positions, dtype=torch.long),
        )

    def __len__(self):
        return self.tokens.shape[0]


class SelfAttention(nn.Module):
    # keys carry no bias: it would shift every score in a row equally and
    # receive an identically zero gradient
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.num_heads = cfg.num_heads
        self.query = nn.Linear(cfg.d_model, cfg.d_model)
        self.key = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.value = nn.Linear(cfg.d_model, cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.dropout = cfg.dropout

    def _heads(self, t):
        b, n, d = t.shape
        return t.view(b, n, self.num_heads, d // self.num_heads).transpose(1, 2)

    def forward(self, x, return_weights=False, queries=None):
        """``queries`` restricts the output rows to those positions."""
        b, n, d = x.shape
        xq = x if queries is None else _take(x, queries)
        q, k, v = self._heads(self.query(xq)), self._heads(self.key(x)), self._heads(self.value(x))
        p = self.dropout if self.training else 0.0
        if return_weights:
            scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
            weights = scores.softmax(dim=-1)
            out = F.dropout(weights, p, self.training) @ v
        else:
            weights = None
            out = F.scaled_dot_product_attention(q, k, v, dropout_p=p)
        out = out.transpose(1, 2).reshape(b, q.shape[2], d)
        return self.proj(out), weights


class Block(nn.Module):
    """Pre-norm residual block: attention then a GELU feed-forward."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(nn.Linear(cfg.d_model, cfg.d_ff), nn.GELU(), nn.Linear(cfg.d_ff, cfg.d_model))
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, return_weights=False, queries=None):
        a, weights = self.attn(self.ln1(x), return_weights, queries)
        if queries is not None:
            x = _take(x, queries)
        x = x + self.drop(a)
        x = x + self.drop(self.ff(self.ln2(x)))
        return x, weights


class EncoderModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos_emb = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.num_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size)

    def forward(self, tokens, return_attention=False, check_finite=False, positions=None):
        """Logits ``(B, L, vocab)``; with ``return_attention`` also per-layer weights.

        With ``positions`` (``(M,)`` or ``(B, M)``) only the logits at those
        positions are returned, ``(B, M, vocab)``; the last block then skips
        every other query row, which is all the loss needs.
        """
        if tokens.dim() == 1:
            tokens = tokens[None]
        n = tokens.shape[1]
        if n > self.config.max_seq_len:
            raise ShapeError(f"sequence length {n} exceeds max_seq_len {self.config.max_seq_len}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise ShapeError(f"token ids must lie in [0, {self.config.vocab_size})")
        x = self.tok_emb(tokens) + self.pos_emb(torch.arange(n, device=tokens.device))
        attn = []
        last = len(self.blocks) - 1
        for i, block in enumerate(self.blocks):
            x, w = block(x, return_attention, positions if i == last else None)
            if check_finite and not torch.isfinite(x).all():
                raise NumericError(f"layer {i}")
            attn.append(w)
        logits = self.head(self.ln_f(x))
        if check_finite and not torch.isfinite(logits).all():
            raise NumericError("output head")
        return (logits, attn) if return_attention else logits


def _take(x, positions):
    if positions.dim() == 1:
        return x[:, positions]
    return x.gather(1, positions[..., None].expand(-1, -1, x.shape[-1]))


def init_params(config: ModelConfig, seed: int, dtype=torch.float32, zero_head=True) -> EncoderModel:
    """Deterministic initialization.

    Linear weights are drawn from a normal with std ``fan_in ** -0.5``
    truncated at two standard deviations; embeddings use std 0.02; biases 0;
    layer-norm gains 1. The output head starts at zero (``zero_head``), so an
    untrained model gives equal logits everywhere and argmax decodes every
    masked position as ZERO: chance level on balanced bits rather than a
    scatter of SEP/MASK guesses.
    """
    gen = torch.Generator().manual_seed(int(seed))
    model = EncoderModel(config).to(dtype)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                std = module.in_features ** -0.5
                nn.init.trunc_normal_(module.weight, 0.0, std, -2 * std, 2 * std, generator=gen)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.trunc_normal_(module.weight, 0.0, 0.02, -0.04, 0.04, generator=gen)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        if zero_head:
            nn.init.zeros_(model.head.weight)
    model.eval()
    return model


def forward(model: EncoderModel, tokens) -> torch.Tensor:
    return model(torch.as_tensor(tokens, dtype=torch.long))


def gather_masked(logits, mask_positions):
    """Logits at the masked positions, ``(B, M, vocab)``."""
    return _take(logits, mask_positions)


def loss(logits, batch: Batch, gathered=False) -> torch.Tensor:
    """Mean cross-entropy over masked positions against 0/1 targets.

    ``gathered`` means ``logits`` already holds only the masked positions.
    """
    if batch.mask_positions.numel() == 0 or batch.targets.numel() == 0:
        raise DegenerateBatchError("batch has no masked positions")
    picked = logits if gathered else gather_masked(logits, batch.mask_positions)
    if picked.shape[:2] != batch.targets.shape:
        raise ShapeError(f"{picked.shape[:2]} masked logits vs {tuple(batch.targets.shape)} targets")
    return F.cross_entropy(picked.reshape(-1, picked.shape[-1]), batch.targets.reshape(-1))


def _check_grads(model):
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(name, "non-finite gradient")


def grad(model: EncoderModel, batch: Batch) -> dict[str, torch.Tensor]:
    """Gradient of :func:`loss` for every parameter, in evaluation mode."""
    was_training = model.training
    model.eval()
    model.zero_grad(set_to_none=True)
    try:
        value = loss(model(batch.tokens, check_finite=True), batch)
        if not torch.isfinite(value):
            raise NumericError("loss")
        value.backward()
        _check_grads(model)
        return {
            name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in model.named_parameters()
        }
    finally:
        model.zero_grad(set_to_none=True)
        model.train(was_training)


def make_optimizer(model, lr=3e-4, betas=(0.9, 0.999), warmup_steps=0, total_steps=None, min_lr_ratio=0.0):
    """Adam plus an optional linear warmup / cosine decay schedule.

    With ``warmup_steps=0`` and ``total_steps=None`` the learning rate is constant.
    """
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=betas)

    def factor(step):
        f = 1.0
        if warmup_steps and step < warmup_steps:
            f = (step + 1) / warmup_steps
        elif total_steps:
            progress = min(1.0, (step - warmup_steps) / max(1, total_steps - warmup_steps))
            f = min_lr_ratio + (1 - min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * progress))
        return f

    sched = torch.optim.lr_scheduler.LambdaLR(opt, factor)
    return opt, sched


def train_step(optimizer, model: EncoderModel, batch: Batch, scheduler=None) -> float:
    """One Adam update on ``batch``; returns the pre-update loss."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    value = loss(model(batch.tokens, positions=batch.mask_positions), batch, gathered=True)
    if not torch.isfinite(value):
        model(batch.tokens, check_finite=True)
        raise NumericError("loss")
    value.backward()
    _check_grads(model)
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    model.eval()
    return float(value.detach())


def save_checkpoint(model: EncoderModel, path, extra: Optional[dict] = None):
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "config": asdict(model.config),
            "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
            "shapes": {k: list(v.shape) for k, v in state.items()},
            "state_dict": state,
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> tuple[EncoderModel, ModelConfig, dict]:
    """Rebuild a model; raises :class:`CheckpointError` on any mismatch."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an eca-lab checkpoint")
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {blob.get('format_version')}, expected {CHECKPOINT_VERSION}")
    config = ModelConfig(**blob["config"])
    if expected is not None and expected != config:
        diffs = [f"{k}: {v} != {getattr(expected, k)}" for k, v in asdict(config).items() if getattr(expected, k) != v]
        raise CheckpointError("checkpoint config differs from the expected one (" + ", ".join(diffs) + ")")
    model = EncoderModel(config).to(getattr(torch, blob.get("dtype", "float32")))
    own = model.state_dict()
    state = blob["state_dict"]
    missing = set(own) ^ set(state)
    if missing:
        raise CheckpointError(f"parameter names differ: {sorted(missing)}")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(own[name].shape) or list(tensor.shape) != blob["shapes"][name]:
            raise CheckpointError(
                f"shape mismatch for {name}: stored {tuple(tensor.shape)}, config implies {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)
    model.eval()
    return model, config, blob.get("extra", {})
