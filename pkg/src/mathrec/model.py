"""Full recognizer: dense backbone + counting head + attention decoder.

Construction is driven by ModelConfig so ablations are structural where
they should be (no counting head at all for the plain encoder-decoder
baseline) and behavioral where they should be (the decoder always owns a
count projection; feeding it zeros disables count conditioning without
changing the parameter set between those rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .counting import MultiScaleCounting, sum_pool
from .decoder import AttentionDecoder
from .encoder import DenseEncoder, EncoderConfig, FeatureMap


@dataclass
class ModelConfig:
    vocab_size: int = 111
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    use_positional_encoding: bool = True
    use_counting_module: bool = True
    counting_channels: int = 512
    counting_kernels: tuple = (3, 5)
    counting_reduction: int = 16
    hidden_size: int = 256
    attn_size: int = 512
    embed_size: int = 256
    context_size: int = 256
    coverage_kernel: int = 11
    max_len: int = 200

    @classmethod
    def full_scale(cls, vocab_size: int = 111, **overrides) -> "ModelConfig":
        return cls(vocab_size=vocab_size, encoder=EncoderConfig.full_scale(), **overrides)

    @classmethod
    def desk(cls, vocab_size: int, **overrides) -> "ModelConfig":
        overrides.setdefault("counting_channels", 256)
        return cls(vocab_size=vocab_size, encoder=EncoderConfig.desk(), **overrides)


class CountingRecognizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = DenseEncoder(config.encoder)
        if config.use_counting_module:
            self.counting = MultiScaleCounting(
                in_channels=config.encoder.out_channels,
                num_classes=config.vocab_size,
                kernel_sizes=config.counting_kernels,
                inter_channels=config.counting_channels,
                reduction=config.counting_reduction,
            )
        else:
            self.counting = None
        self.decoder = AttentionDecoder(
            feature_channels=config.encoder.out_channels,
            num_classes=config.vocab_size,
            hidden_size=config.hidden_size,
            attn_size=config.attn_size,
            embed_size=config.embed_size,
            context_size=config.context_size,
            coverage_kernel=config.coverage_kernel,
            use_positional_encoding=config.use_positional_encoding,
        )

    def encode(self, images: torch.Tensor, mask: torch.Tensor | None = None) -> FeatureMap:
        return self.encoder(images, mask)

    def predict_counts(self, features: FeatureMap):
        """Fused count vector and per-branch maps; zeros without a head."""
        if self.counting is None:
            b = features.values.shape[0]
            zeros = torch.zeros(b, self.config.vocab_size,
                                dtype=features.values.dtype, device=features.values.device)
            return zeros, []
        return self.counting(features.values, features.mask)

    def branch_vectors(self, maps):
        return [sum_pool(m) for m in maps]

    def teacher_rows(self, features: FeatureMap, decoder_counts, targets,
                     return_logits: bool = False):
        return self.decoder.teacher_forced(features, decoder_counts, targets,
                                           return_logits=return_logits)

    def greedy(self, features: FeatureMap, decoder_counts, max_len: int | None = None):
        return self.decoder.greedy_decode(features, decoder_counts,
                                          max_len=max_len or self.config.max_len)
