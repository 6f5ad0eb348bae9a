"""Analytic parameter and FLOP accounting from layer shapes.

FLOPs are counted as multiply-accumulate operations of convolution,
linear, and matmul layers (one MAC = one FLOP); elementwise work is
ignored as it is orders of magnitude smaller. The decoder is unrolled to
a fixed reference output length since its cost is per generated token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .encoder import count_parameters
from .model import CountingRecognizer, ModelConfig

REFERENCE_DECODE_LEN = 100


@dataclass
class ComplexityReport:
    params: int
    flops: float
    input_size: tuple
    decode_len: int
    breakdown: dict = field(default_factory=dict)

    def formatted(self) -> str:
        lines = [
            f"parameters: {self.params / 1e6:.2f}M",
            f"flops @ input {self.input_size}, {self.decode_len} decode steps: "
            f"{self.flops / 1e9:.2f}G",
        ]
        for part, value in self.breakdown.items():
            lines.append(f"  {part}: {value / 1e9:.3f}G")
        return "\n".join(lines)


def _ceil_half(v: int) -> int:
    return math.ceil(v / 2)


def encoder_flops(config, h: int, w: int):
    """MACs of the dense backbone; returns (flops, feature h, feature w)."""
    enc = config.encoder
    flops = 0.0
    h, w = _ceil_half(h), _ceil_half(w)               # stem conv, stride 2
    flops += 49 * 1 * enc.stem_channels * h * w
    h, w = _ceil_half(h), _ceil_half(w)               # stem pool
    channels = enc.stem_channels
    inter = enc.bottleneck * enc.growth
    for b in range(enc.num_blocks):
        for _ in range(enc.layers_per_block):
            flops += channels * inter * h * w         # 1x1 bottleneck
            flops += inter * enc.growth * 9 * h * w   # 3x3 growth conv
            channels += enc.growth
        if b < enc.num_blocks - 1:
            out = int(channels * enc.compression)
            flops += channels * out * h * w           # transition 1x1
            channels = out
            h, w = _ceil_half(h), _ceil_half(w)
    if channels != enc.out_channels:
        flops += channels * enc.out_channels * h * w  # projection 1x1
    return flops, h, w


def counting_flops(config, h: int, w: int) -> float:
    if not config.use_counting_module:
        return 0.0
    cells = h * w
    inter = config.counting_channels
    hidden = max(inter // config.counting_reduction, 1)
    flops = 0.0
    for k in config.counting_kernels:
        flops += k * k * config.encoder.out_channels * inter * cells  # k x k conv
        flops += inter * hidden + hidden * inter                      # attention gate
        flops += inter * config.vocab_size * cells                    # 1x1 head
    return flops


def decoder_flops(config, h: int, w: int, decode_len: int) -> float:
    cells = h * w
    c_in = config.encoder.out_channels
    a = config.attn_size
    hid = config.hidden_size
    emb = config.embed_size
    ctx = config.context_size
    c_cls = config.vocab_size
    flops = c_in * a * cells          # feature projection (once per image)
    flops += c_in * hid               # hidden-state init from mean feature
    per_step = 0.0
    per_step += config.coverage_kernel**2 * 1 * a * cells  # coverage features
    per_step += hid * a                                    # hidden projection
    per_step += a * cells                                  # energy reduction
    per_step += 3 * (emb * hid + hid * hid)                # GRU cell matmuls
    per_step += c_in * cells                               # attention-weighted sum
    per_step += c_in * ctx                                 # context projection
    per_step += ctx * ctx * 3 + c_cls * ctx                # classifier mixes
    per_step += ctx * c_cls                                # output projection
    return flops + per_step * decode_len


def complexity_report(config: ModelConfig, input_size=(1, 1, 120, 800),
                      decode_len: int = REFERENCE_DECODE_LEN) -> ComplexityReport:
    _, _, h, w = input_size
    enc_flops, fh, fw = encoder_flops(config, h, w)
    cnt_flops = counting_flops(config, fh, fw)
    dec_flops = decoder_flops(config, fh, fw, decode_len)
    params = count_parameters(CountingRecognizer(config))
    return ComplexityReport(
        params=params,
        flops=enc_flops + cnt_flops + dec_flops,
        input_size=tuple(input_size),
        decode_len=decode_len,
        breakdown={"encoder": enc_flops, "counting": cnt_flops, "decoder": dec_flops},
    )
