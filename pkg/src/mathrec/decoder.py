"""Autoregressive GRU decoder with coverage attention and count conditioning.

Decoding walks the feature map with additive attention whose energy mixes
the projected features, a fixed 2D sinusoidal positional encoding, the
coverage map (running sum of all past attention weights, discouraging
both re-attending and missed regions), and the current hidden state. The
symbol classifier combines the attended context, the fused count vector,
the hidden state, and the previous symbol embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeatureMap


def positional_encoding_2d(height: int, width: int, dim: int = 512) -> torch.Tensor:
    """Fixed (dim, H, W) encoding; the first dim/2 channels hold interleaved
    sin/cos of the x coordinate at geometric frequencies, the last dim/2 the
    same for y."""
    if dim % 4 != 0:
        raise ValueError("encoding dimension must be divisible by 4")
    quarter = dim // 4
    freq = torch.exp(torch.arange(quarter, dtype=torch.float32)
                     * (-math.log(10000.0) * 4.0 / dim))
    xs = torch.arange(width, dtype=torch.float32)
    ys = torch.arange(height, dtype=torch.float32)
    x_angles = xs[None, :] * freq[:, None]          # (quarter, W)
    y_angles = ys[None, :] * freq[:, None]          # (quarter, H)

    enc = torch.zeros(dim, height, width)
    enc[0 : dim // 2 : 2] = torch.sin(x_angles)[:, None, :].expand(quarter, height, width)
    enc[1 : dim // 2 : 2] = torch.cos(x_angles)[:, None, :].expand(quarter, height, width)
    enc[dim // 2 :: 2] = torch.sin(y_angles)[:, :, None].expand(quarter, height, width)
    enc[dim // 2 + 1 :: 2] = torch.cos(y_angles)[:, :, None].expand(quarter, height, width)
    return enc


def masked_softmax(energies: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Softmax over the flattened spatial extent; masked cells get exactly 0."""
    b, h, w = energies.shape
    flat = energies.reshape(b, h * w)
    if mask is not None:
        flat = flat.masked_fill(mask.reshape(b, h * w) <= 0, float("-inf"))
    return torch.softmax(flat, dim=1).reshape(b, h, w)


@dataclass
class DecoderState:
    hidden: torch.Tensor     # (B, hidden_size)
    coverage: torch.Tensor   # (B, 1, H, W), sum of all past attention weights
    step: int = 0


@dataclass
class DecodeResult:
    ids: tuple               # starts with sos; ends with eos unless truncated
    alphas: list             # one (H, W) attention map per generated token
    truncated: bool


class AttentionDecoder(nn.Module):
    def __init__(self, feature_channels: int, num_classes: int,
                 hidden_size: int = 256, attn_size: int = 512,
                 embed_size: int = 256, context_size: int = 256,
                 coverage_kernel: int = 11, use_positional_encoding: bool = True):
        super().__init__()
        self.num_classes = num_classes
        self.hidden_size = hidden_size
        self.attn_size = attn_size
        self.use_positional_encoding = use_positional_encoding

        self.feature_proj = nn.Conv2d(feature_channels, attn_size, 1)
        self.coverage_proj = nn.Conv2d(1, attn_size, coverage_kernel,
                                       padding=coverage_kernel // 2, bias=False)
        self.hidden_proj = nn.Linear(hidden_size, attn_size, bias=False)
        self.energy = nn.Linear(attn_size, 1)

        self.embedding = nn.Embedding(num_classes, embed_size)
        self.gru = nn.GRUCell(embed_size, hidden_size)
        self.init_proj = nn.Linear(feature_channels, hidden_size)

        self.context_proj = nn.Linear(feature_channels, context_size)
        self.combine_context = nn.Linear(context_size, context_size, bias=False)
        self.combine_counts = nn.Linear(num_classes, context_size, bias=False)
        self.combine_hidden = nn.Linear(hidden_size, context_size, bias=False)
        self.combine_embed = nn.Linear(embed_size, context_size, bias=False)
        self.out = nn.Linear(context_size, num_classes)

    # ------------------------------------------------------------ pieces

    def transform_features(self, features: FeatureMap) -> torch.Tensor:
        """1x1-projected feature map plus the fixed positional encoding."""
        t = self.feature_proj(features.values)
        if self.use_positional_encoding:
            _, _, h, w = t.shape
            pe = positional_encoding_2d(h, w, self.attn_size)
            t = t + pe.to(dtype=t.dtype, device=t.device)
        return t

    def init_state(self, features: FeatureMap) -> DecoderState:
        b, _, h, w = features.values.shape
        denom = features.mask.sum(dim=(2, 3)).clamp(min=1.0)
        mean_feat = (features.values * features.mask).sum(dim=(2, 3)) / denom
        hidden = torch.tanh(self.init_proj(mean_feat))
        coverage = torch.zeros(b, 1, h, w, dtype=features.values.dtype,
                               device=features.values.device)
        return DecoderState(hidden=hidden, coverage=coverage, step=0)

    def attention_step(self, t_feat, state: DecoderState, mask=None) -> torch.Tensor:
        mix = (t_feat
               + self.coverage_proj(state.coverage)
               + self.hidden_proj(state.hidden)[:, :, None, None])
        energies = self.energy(torch.tanh(mix).permute(0, 2, 3, 1)).squeeze(-1)
        return masked_softmax(energies, mask)

    def context_sum(self, alpha, feature_values) -> torch.Tensor:
        """Attention-weighted spatial sum of the raw features."""
        return (alpha.unsqueeze(1) * feature_values).sum(dim=(2, 3))

    def context_vector(self, alpha, feature_values) -> torch.Tensor:
        return self.context_proj(self.context_sum(alpha, feature_values))

    def classify(self, context, counts, hidden, embedded) -> torch.Tensor:
        return self.out(self.combine_context(context)
                        + self.combine_counts(counts)
                        + self.combine_hidden(hidden)
                        + self.combine_embed(embedded))

    # ------------------------------------------------------------ stepping

    def decode_step(self, state: DecoderState, y_prev, t_feat, features: FeatureMap,
                    counts, return_logits: bool = False):
        """One step of teacher-forced or free-running decoding.

        Returns (probabilities, new state, attention weights); coverage in
        the new state is the old coverage plus the returned weights.
        """
        y_prev = torch.as_tensor(y_prev, device=t_feat.device)
        if y_prev.dim() == 0:
            y_prev = y_prev[None]
        if ((y_prev < 0) | (y_prev >= self.num_classes)).any():
            raise ValueError(f"class id out of range [0, {self.num_classes})")
        embedded = self.embedding(y_prev)
        hidden = self.gru(embedded, state.hidden)
        stepped = DecoderState(hidden=hidden, coverage=state.coverage, step=state.step)
        alpha = self.attention_step(t_feat, stepped, features.mask)
        context = self.context_vector(alpha, features.values)
        logits = self.classify(context, counts, hidden, embedded)
        new_state = DecoderState(hidden=hidden,
                                 coverage=state.coverage + alpha.unsqueeze(1),
                                 step=state.step + 1)
        output = logits if return_logits else torch.softmax(logits, dim=1)
        return output, new_state, alpha

    def teacher_forced(self, features: FeatureMap, counts, targets,
                       return_logits: bool = False):
        """Rows of per-step predictions, step t consuming target token t.

        `targets` is (B, L) framed with sos/eos; the result has L-1 rows.
        """
        t_feat = self.transform_features(features)
        state = self.init_state(features)
        rows = []
        for t in range(targets.shape[1] - 1):
            out, state, _ = self.decode_step(state, targets[:, t], t_feat, features,
                                             counts, return_logits=return_logits)
            rows.append(out)
        return torch.stack(rows, dim=1)

    @torch.no_grad()
    def greedy_decode(self, features: FeatureMap, counts, max_len: int = 200,
                      sos_id: int = 0, eos_id: int = 1):
        """Argmax decoding from sos until eos or the length cap.

        Returns one DecodeResult per batch row; a result that hit the cap
        without producing eos has `truncated=True` and exactly `max_len`
        ids. Attention maps are collected per generated token.
        """
        if max_len < 2:
            raise ValueError("max_len must be at least 2")
        t_feat = self.transform_features(features)
        state = self.init_state(features)
        b = features.values.shape[0]
        device = features.values.device
        y = torch.full((b,), sos_id, dtype=torch.int64, device=device)
        sequences = [[sos_id] for _ in range(b)]
        alphas = [[] for _ in range(b)]
        finished = [False] * b
        for _ in range(max_len - 1):
            probs, state, alpha = self.decode_step(state, y, t_feat, features, counts)
            y = probs.argmax(dim=1)
            for i in range(b):
                if not finished[i]:
                    sequences[i].append(int(y[i]))
                    alphas[i].append(alpha[i].detach().cpu().numpy())
                    if int(y[i]) == eos_id:
                        finished[i] = True
            if all(finished):
                break
        return [
            DecodeResult(ids=tuple(seq), alphas=a, truncated=not done)
            for seq, a, done in zip(sequences, alphas, finished)
        ]
