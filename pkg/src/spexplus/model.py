"""The full extraction network.

A multi-scale speech encoder (applied twin-wise to the mixture and the
reference with one shared parameter set), a speaker encoder that pools the
reference coefficients into a fixed-size embedding plus classification
logits, a dilated-TCN speaker extractor conditioned on that embedding, and
a transposed-convolution decoder per scale.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    BatchNorm1d,
    ConvLayer,
    ConvTransposeLayer,
    GlobalLayerNorm,
    Linear,
    Module,
    ModuleList,
    PReLULayer,
)
from .tensor import (
    Tensor,
    add,
    concat_channels,
    max_pool1d,
    mean_time,
    no_grad,
    pad_time,
    relu,
    repeat_time,
    slice_time,
)


@dataclass
class SpexPlusConfig:
    """Architecture hyperparameters.

    L1/L2/L3 are the short/middle/long encoder filter lengths in samples,
    all applied at a common stride of L1/2.  N is the number of encoder
    filters per scale, O the bottleneck width, P the TCN conv width, B the
    TCN blocks per stack, R the number of stacks, D the speaker embedding
    size, N_R the ResNet block count in the speaker encoder, and N_s the
    number of speaker classes for the classification head.
    """

    sample_rate: int = 8000
    L1: int = 20
    L2: int = 80
    L3: int = 160
    N: int = 256
    B: int = 8
    R: int = 4
    O: int = 256
    P: int = 512
    D: int = 256
    N_R: int = 3
    N_s: int = 101
    decnn_kernel: int = 3
    tcn_bias: bool = True
    stem_norm: str = "gln"  # "gln" or "bn" ahead of the speaker encoder
    tied: bool = True

    def __post_init__(self):
        if not (self.L1 < self.L2 < self.L3):
            raise ValueError("filter lengths must satisfy L1 < L2 < L3")
        if self.L1 % 2:
            raise ValueError("L1 must be even (stride is L1/2)")
        for name in ("N", "B", "R", "O", "P", "D", "N_R", "N_s", "sample_rate"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.stem_norm not in ("gln", "bn"):
            raise ValueError("stem_norm must be 'gln' or 'bn'")

    @property
    def stride(self):
        return self.L1 // 2

    def frames(self, n_samples):
        """Encoder frame count K, identical across the three scales."""
        return (n_samples - self.L1) // self.stride + 1

    def min_reference_frames(self):
        return 3 ** self.N_R

    @classmethod
    def tiny(cls, **overrides):
        """Desk-scale preset used by the test suite."""
        base = dict(N=32, B=4, R=2, O=32, P=64, D=32, N_R=2, N_s=8)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def paper(cls, **overrides):
        """Full-size preset (~11.1M parameters at N_s=101)."""
        return cls(**overrides)


class MultiScaleEncoder(Module):
    """Three parallel 1-D convolutions (L1/L2/L3) at stride L1/2, ReLU after.

    The L2/L3 inputs are right-padded with L2-L1 and L3-L1 zeros so every
    scale produces the same frame count.
    """

    def __init__(self, cfg, *, rng, dtype):
        super().__init__()
        self.convs = ModuleList([
            ConvLayer(1, cfg.N, length, stride=cfg.stride, bias=False,
                      padding=(0, length - cfg.L1), rng=rng, dtype=dtype)
            for length in (cfg.L1, cfg.L2, cfg.L3)
        ])

    def forward(self, wave):
        return tuple(relu(conv.forward(wave)) for conv in self.convs)


class ResNetBlock(Module):
    """Two 1x1 convs with BN+PReLU, skip connection, then max-pool k=3 s=3."""

    def __init__(self, in_channels, out_channels, *, rng, dtype):
        super().__init__()
        self.conv1 = ConvLayer(in_channels, out_channels, 1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm1d(out_channels, dtype=dtype)
        self.prelu1 = PReLULayer(dtype=dtype)
        self.conv2 = ConvLayer(out_channels, out_channels, 1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm1d(out_channels, dtype=dtype)
        self.prelu2 = PReLULayer(dtype=dtype)
        if in_channels != out_channels:
            self.proj = ConvLayer(in_channels, out_channels, 1, bias=False,
                                  rng=rng, dtype=dtype)
        else:
            self.proj = None

    def forward(self, x):
        h = self.bn1.forward(self.conv1.forward(x))
        h = self.prelu1.forward(h)
        h = self.bn2.forward(self.conv2.forward(h))
        skip = x if self.proj is None else self.proj.forward(x)
        out = self.prelu2.forward(add(h, skip))
        return max_pool1d(out, 3, 3)


class SpeakerEncoder(Module):
    """Pools reference coefficients into an utterance-level embedding.

    Concatenated scales -> norm -> 1x1 conv to O channels -> N_R ResNet
    blocks (each one third of the time axis) -> 1x1 conv to D -> mean over
    time.  The channel width doubles after the first block, which is where
    the bulk of the full-size parameter budget sits.
    """

    def __init__(self, cfg, *, rng, dtype):
        super().__init__()
        stem_channels = 3 * cfg.N
        if cfg.stem_norm == "gln":
            self.norm = GlobalLayerNorm(stem_channels, dtype=dtype)
        else:
            self.norm = BatchNorm1d(stem_channels, dtype=dtype)
        self.stem = ConvLayer(stem_channels, cfg.O, 1, rng=rng, dtype=dtype)
        blocks = []
        width = cfg.O
        for i in range(cfg.N_R):
            out_width = cfg.O if i == 0 else 2 * cfg.O
            blocks.append(ResNetBlock(width, out_width, rng=rng, dtype=dtype))
            width = out_width
        self.blocks = ModuleList(blocks)
        self.head = ConvLayer(width, cfg.D, 1, rng=rng, dtype=dtype)

    def forward(self, coeffs):
        h = self.stem.forward(self.norm.forward(concat_channels(list(coeffs))))
        for block in self.blocks:
            h = block.forward(h)
        return mean_time(self.head.forward(h))


class TCNBlock(Module):
    """Residual block: 1x1 conv, PReLU, gLN, dilated depthwise conv, PReLU,
    gLN, 1x1 conv back to the bottleneck width, plus skip connection."""

    def __init__(self, in_channels, res_channels, conv_channels, *, kernel,
                 dilation, rng, dtype, bias=True):
        super().__init__()
        span = dilation * (kernel - 1)
        self.conv_in = ConvLayer(in_channels, conv_channels, 1, bias=bias,
                                 rng=rng, dtype=dtype)
        self.prelu1 = PReLULayer(dtype=dtype)
        self.norm1 = GlobalLayerNorm(conv_channels, dtype=dtype)
        self.dconv = ConvLayer(conv_channels, conv_channels, kernel,
                               dilation=dilation, groups=conv_channels,
                               padding=(span // 2, span - span // 2),
                               bias=bias, rng=rng, dtype=dtype)
        self.prelu2 = PReLULayer(dtype=dtype)
        self.norm2 = GlobalLayerNorm(conv_channels, dtype=dtype)
        self.conv_out = ConvLayer(conv_channels, res_channels, 1, bias=bias,
                                  rng=rng, dtype=dtype)

    def forward(self, x, residual):
        h = self.norm1.forward(self.prelu1.forward(self.conv_in.forward(x)))
        h = self.norm2.forward(self.prelu2.forward(self.dconv.forward(h)))
        return add(self.conv_out.forward(h), residual)


class Extractor(Module):
    """R stacks of B TCN blocks with dilations 1,2,4,...,2^(B-1) per stack.

    The first block of every stack sees the speaker embedding repeated over
    all frames and concatenated on the channel axis; the other blocks do
    not.  Three parallel 1x1 convs + ReLU emit the non-negative masks.
    """

    def __init__(self, cfg, *, rng, dtype):
        super().__init__()
        self.norm = GlobalLayerNorm(3 * cfg.N, dtype=dtype)
        self.bottleneck = ConvLayer(3 * cfg.N, cfg.O, 1, bias=cfg.tcn_bias,
                                    rng=rng, dtype=dtype)
        stacks = []
        for _ in range(cfg.R):
            blocks = []
            for b in range(cfg.B):
                in_ch = cfg.O + cfg.D if b == 0 else cfg.O
                blocks.append(TCNBlock(in_ch, cfg.O, cfg.P, kernel=cfg.decnn_kernel,
                                       dilation=2 ** b, rng=rng, dtype=dtype,
                                       bias=cfg.tcn_bias))
            stacks.append(ModuleList(blocks))
        self.stacks = ModuleList(stacks)
        self.mask_convs = ModuleList([
            ConvLayer(cfg.O, cfg.N, 1, bias=cfg.tcn_bias, rng=rng, dtype=dtype)
            for _ in range(3)
        ])

    def dilations(self):
        return [[block.dconv.dilation for block in stack] for stack in self.stacks]

    def forward(self, coeffs, embedding):
        h = self.bottleneck.forward(self.norm.forward(concat_channels(list(coeffs))))
        frames = h.data.shape[1]
        for stack in self.stacks:
            for b, block in enumerate(stack):
                if b == 0:
                    conditioned = concat_channels([h, repeat_time(embedding, frames)])
                    h = block.forward(conditioned, h)
                else:
                    h = block.forward(h, h)
        return tuple(relu(conv.forward(h)) for conv in self.mask_convs)


class MultiScaleDecoder(Module):
    """Transposed convolutions back to the waveform, one per scale."""

    def __init__(self, cfg, *, rng, dtype):
        super().__init__()
        self.deconvs = ModuleList([
            ConvTransposeLayer(cfg.N, length, stride=cfg.stride, rng=rng, dtype=dtype)
            for length in (cfg.L1, cfg.L2, cfg.L3)
        ])

    def forward(self, modulated, scale, target_len):
        y = self.deconvs[scale].forward(modulated)
        T = y.data.shape[1]
        if T > target_len:
            return slice_time(y, 0, target_len)
        if T < target_len:
            return pad_time(y, 0, target_len - T)
        return y


class ForwardOutput:
    """Waveform estimates at the three scales plus speaker logits."""

    __slots__ = ("s1", "s2", "s3", "logits", "embedding")

    def __init__(self, s1, s2, s3, logits, embedding):
        self.s1 = s1
        self.s2 = s2
        self.s3 = s3
        self.logits = logits
        self.embedding = embedding


class SpexPlusModel(Module):
    def __init__(self, config, *, seed=0, dtype=np.float32):
        super().__init__()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng([seed, 0x5058])
        self.encoder = MultiScaleEncoder(config, rng=rng, dtype=dtype)
        if not config.tied:
            # Untied ablation: an independent twin, starting from the same
            # initialization so any later difference is due to training.
            clone_rng = np.random.default_rng(0)
            self.encoder_ref = MultiScaleEncoder(config, rng=clone_rng, dtype=dtype)
            ref_params = dict(self.encoder_ref.named_parameters())
            for name, p in self.encoder.named_parameters():
                ref_params[name].data[...] = p.data
        else:
            self.encoder_ref = None
        self.speaker_encoder = SpeakerEncoder(config, rng=rng, dtype=dtype)
        self.extractor = Extractor(config, rng=rng, dtype=dtype)
        self.decoder = MultiScaleDecoder(config, rng=rng, dtype=dtype)
        self.classifier = Linear(config.D, config.N_s, bias=False, rng=rng, dtype=dtype)

    def _as_wave_tensor(self, wave, what):
        if isinstance(wave, Tensor):
            data = wave.data
        else:
            data = np.asarray(wave)
        if data.ndim != 1:
            raise ValueError(f"{what} must be a 1-D waveform, got shape {data.shape}")
        if data.shape[0] < self.config.L3:
            raise ValueError(
                f"{what} has {data.shape[0]} samples but the longest encoder "
                f"filter needs at least {self.config.L3}")
        return Tensor(data.reshape(1, -1).astype(self.dtype, copy=False))

    def encode_mixture(self, wave):
        return self.encoder.forward(self._as_wave_tensor(wave, "mixture"))

    def encode_reference(self, wave):
        x = self._as_wave_tensor(wave, "reference")
        frames = self.config.frames(x.data.shape[1])
        need = self.config.min_reference_frames()
        if frames < need:
            raise ValueError(
                f"reference yields {frames} frames but {need} are needed for "
                f"{self.config.N_R} pooling stages ({need * self.config.stride + self.config.L1 - self.config.stride} samples)")
        encoder = self.encoder if self.config.tied else self.encoder_ref
        return encoder.forward(x)

    def speaker_encode(self, coeffs):
        """Embedding v and classifier logits from reference coefficients."""
        v = self.speaker_encoder.forward(coeffs)
        return v, self.classifier.forward(v)

    def forward(self, mixture, reference):
        mix_coeffs = self.encode_mixture(mixture)
        ref_coeffs = self.encode_reference(reference)
        v, logits = self.speaker_encode(ref_coeffs)
        masks = self.extractor.forward(mix_coeffs, v)
        target_len = np.asarray(mixture).shape[-1]
        outs = []
        for i in range(3):
            modulated = masks[i] * mix_coeffs[i]
            outs.append(self.decoder.forward(modulated, i, target_len))
        return ForwardOutput(outs[0], outs[1], outs[2], logits, v)

    def infer(self, mixture, reference):
        """Extracted waveform (the short-scale estimate) as a numpy array."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = self.forward(mixture, reference)
        finally:
            self.train(was_training)
        return out.s1.data[0].copy()


def config_to_dict(cfg):
    return asdict(cfg)


def config_from_dict(d):
    return SpexPlusConfig(**d)
