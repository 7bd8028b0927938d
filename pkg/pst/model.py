"""
Periodic Set Transformer.

Rows of a PDD (plus the composition embedding of each row's species) form a
weighted multiset. Attention uses the row weights inside the softmax and the
final embedding is the weighted sum of the rows, so splitting a row into
copies that share its weight leaves the output unchanged.

All tensors are float64. Batches are padded with weight-0 rows.
"""
import hashlib
import math
from typing import Dict, Optional, Tuple

import structlog
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from shared.errors import AllZeroWeights, InputError, NonFiniteActivation, ShapeMismatch
from shared.types import EncodingMode, PstConfig


logger = structlog.get_logger()

DTYPE = torch.float64


def weighted_softmax(z: Tensor, w: Tensor) -> Tensor:
    """
    Softmax over the last axis with multiplicative weights.

    ``out_i = w_i exp(z_i) / sum_j w_j exp(z_j)``, shifted by the largest
    ``z`` among positive-weight entries. Entries with zero weight are exactly 0.

    Raises:
        AllZeroWeights: If some slice has no positive weight.
    """
    if (w < 0).any():
        raise InputError("softmax weights must be non-negative")
    positive = w > 0
    if (~positive.expand_as(z)).all(dim=-1).any():
        raise AllZeroWeights("every softmax weight is zero")
    masked = z.masked_fill(~positive, float("-inf"))
    shift = masked.amax(dim=-1, keepdim=True).detach()
    scaled = torch.exp(masked - shift) * w
    return scaled / scaled.sum(dim=-1, keepdim=True)


def weighted_pool(x: Tensor, w: Tensor) -> Tensor:
    """Sum of rows weighted by w: (B, r, d), (B, r) -> (B, d)."""
    return (w.unsqueeze(-1) * x).sum(dim=-2)


def _uniform_over_real(w: Tensor) -> Tensor:
    real = (w > 0).to(w.dtype)
    return real / real.sum(dim=-1, keepdim=True)


def _dropout(x: Tensor, p: float, generator: Optional[torch.Generator]) -> Tensor:
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class EncoderLayer(nn.Module):
    """
    Pre-norm encoder: ``X + SLP(MHA(LayerNorm(X)))`` with weighted attention.
    """

    def __init__(self, d_model: int, heads: int, attention_dropout: float = 0.0):
        super().__init__()
        if d_model % heads:
            raise ShapeMismatch(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.attention_dropout = attention_dropout
        self.norm = nn.LayerNorm(d_model, dtype=DTYPE)
        self.query = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.key = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.value = nn.Linear(d_model, d_model, bias=False, dtype=DTYPE)
        self.slp = nn.Linear(d_model, d_model, dtype=DTYPE)

    def _split(self, x: Tensor) -> Tensor:
        batch, rows, _ = x.shape
        return x.view(batch, rows, self.heads, self.head_dim).transpose(1, 2)

    def attention(
        self, x: Tensor, w: Tensor, generator: Optional[torch.Generator] = None
    ) -> Tensor:
        """
        Concatenated weighted attention heads over LayerNorm(x).

        Args:
            x: (B, r, d) row embeddings.
            w: (B, r) key-side weights.
            generator: Dropout stream, used only in training mode.
        """
        if x.dim() != 3 or x.shape[-1] != self.d_model or w.shape != x.shape[:2]:
            raise ShapeMismatch(
                f"encoder expects (B, r, {self.d_model}) rows and (B, r) weights, "
                f"got {tuple(x.shape)} and {tuple(w.shape)}"
            )
        h = self.norm(x)
        q, k, v = self._split(self.query(h)), self._split(self.key(h)), self._split(self.value(h))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = weighted_softmax(scores, w[:, None, None, :])
        if self.training and self.attention_dropout > 0:
            attn = _dropout(attn, self.attention_dropout, generator)
        batch, rows, _ = x.shape
        return (attn @ v).transpose(1, 2).reshape(batch, rows, self.d_model)

    def forward(self, x: Tensor, w: Tensor, generator: Optional[torch.Generator] = None) -> Tensor:
        return x + F.gelu(self.slp(self.attention(x, w, generator)))


class PeriodicSetTransformer(nn.Module):
    """
    Regression model over collapsed PDDs.

    The initial row embedding is ``R W_s + T W_c`` (``full``), ``R W_s``
    (``structure``) or ``T W_c`` (``composition``), where R holds normalized
    PDD rows and T species embeddings. After the encoder stack rows are pooled
    by weight and mapped to a scalar.
    """

    def __init__(self, config: PstConfig):
        super().__init__()
        self.config = config
        self.structure_embed = nn.Linear(config.k, config.d_model, bias=False, dtype=DTYPE)
        self.composition_embed = nn.Linear(
            config.species_dim, config.d_model, bias=False, dtype=DTYPE
        )
        self.encoders = nn.ModuleList([
            EncoderLayer(config.d_model, config.heads, config.attention_dropout)
            for _ in range(config.encoders)
        ])
        self.head = nn.Linear(config.d_model, 1, dtype=DTYPE)
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        """Uniform init in +-1/sqrt(fan_in) from a seeded generator; LayerNorm gains 1, biases 0."""
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    module.weight.uniform_(-bound, bound, generator=generator)
                    if module.bias is not None:
                        module.bias.uniform_(-bound, bound, generator=generator)
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.fill_(0.0)

    def embed(self, rows: Tensor, species: Tensor) -> Tensor:
        mode = self.config.encoding
        if mode == EncodingMode.STRUCTURE:
            return self.structure_embed(rows)
        if mode == EncodingMode.COMPOSITION:
            return self.composition_embed(species)
        return self.structure_embed(rows) + self.composition_embed(species)

    def _check(self, rows: Tensor, weights: Tensor, species: Tensor) -> None:
        cfg = self.config
        if rows.dim() != 3 or rows.shape[-1] != cfg.k:
            raise ShapeMismatch(f"rows must be (B, r, {cfg.k}), got {tuple(rows.shape)}")
        if weights.shape != rows.shape[:2]:
            raise ShapeMismatch(f"weights must be {tuple(rows.shape[:2])}, got {tuple(weights.shape)}")
        if species.shape != (*rows.shape[:2], cfg.species_dim):
            raise ShapeMismatch(
                f"species must be {(*rows.shape[:2], cfg.species_dim)}, got {tuple(species.shape)}"
            )

    def forward(
        self,
        rows: Tensor,
        weights: Tensor,
        species: Tensor,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[Tensor, Tensor]:
        """
        Predict one scalar per structure.

        Args:
            rows: (B, r, k) normalized PDD rows.
            weights: (B, r) row weights; padding rows carry 0.
            species: (B, r, species_dim) species embeddings.
            generator: Dropout stream for training mode.

        Returns:
            (predictions (B,), pooled embeddings (B, d)).

        Raises:
            ShapeMismatch: If a tensor disagrees with the configuration.
            NonFiniteActivation: If an encoder produces NaN or inf.
        """
        self._check(rows, weights, species)
        cfg = self.config
        attn_w = weights if cfg.weighted_attention else _uniform_over_real(weights)
        pool_w = weights if cfg.weighted_pooling else _uniform_over_real(weights)

        x = self.embed(rows, species)
        for index, layer in enumerate(self.encoders):
            x = layer(x, attn_w, generator)
            if not torch.isfinite(x).all():
                raise NonFiniteActivation(index)

        pooled = weighted_pool(x, pool_w)
        if self.training and cfg.dropout > 0:
            pooled = _dropout(pooled, cfg.dropout, generator)
        return self.head(pooled).squeeze(-1), pooled


def backward(
    model: PeriodicSetTransformer,
    rows: Tensor,
    weights: Tensor,
    species: Tensor,
    loss_grad: float = 1.0,
    generator: Optional[torch.Generator] = None,
) -> Dict[str, Tensor]:
    """
    Gradients of ``loss_grad * sum(predictions)`` with respect to every parameter.

    Parameters the forward pass does not touch (the composition embedding in
    ``structure`` mode) get zero gradients.
    """
    predictions, _ = model(rows, weights, species, generator)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(
        predictions,
        params,
        grad_outputs=torch.full_like(predictions, float(loss_grad)),
        allow_unused=True,
    )
    return {
        name: torch.zeros_like(param) if grad is None else grad
        for name, param, grad in zip(names, params, grads)
    }


def checksum(model: nn.Module) -> str:
    """sha256 over parameter names and their float64 bytes."""
    digest = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
