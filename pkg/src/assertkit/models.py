"""Squeeze-excitation and residual network variants for spoofing detection.

Every model takes a batch of feature matrices shaped N x T x D (frames x
coefficients) and treats each as a one-channel D x T image. Fixed-size
models (SENet34/50, Dilated ResNet, Attentive-Filtering Network) expect
T equal to the segment length; Mean-Std ResNet accepts zero-padded
variable-length batches together with their valid lengths.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .nn import BatchNorm2d, Conv2d, Linear, Module, Tensor
from .nn import functional as F
from .nn.functional import conv_output_size

KINDS = ("senet34", "senet50", "meanstd_resnet", "dilated_resnet", "afn")
FIXED_SIZE_KINDS = ("senet34", "senet50", "dilated_resnet", "afn")

_TABLE1 = {
    "senet34": dict(unit_type="basic", units=(3, 4, 6, 3), channels=(16, 32, 64, 128), dilations=(1, 1, 1, 1)),
    "senet50": dict(unit_type="bottleneck", units=(3, 4, 6, 3), channels=(16, 32, 64, 128), dilations=(1, 1, 1, 1)),
    "meanstd_resnet": dict(unit_type="basic", units=(3, 4, 6, 3), channels=(16, 32, 64, 128), dilations=(1, 1, 1, 1)),
    "dilated_resnet": dict(unit_type="basic", units=(5, 5, 5, 5), channels=(8, 16, 32, 64), dilations=(2, 4, 4, 8)),
    "afn": dict(unit_type="basic", units=(5, 5, 5, 5), channels=(8, 16, 32, 64), dilations=(2, 4, 4, 8)),
}


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    n_classes: int = 2
    input_dim: int = 257
    segment_frames: int | None = 400
    unit_type: str = "basic"
    units: tuple = (3, 4, 6, 3)
    channels: tuple = (16, 32, 64, 128)
    dilations: tuple = (1, 1, 1, 1)
    se_reduction: int = 16
    expansion: int = 2
    attention_channels: int = 8
    attention_down_dilations: tuple = (1, 2, 4, 8)
    attention_up_dilations: tuple = (1, 1, 1, 1)
    mask_mode: str = "multiply"
    seed: int = 0

    @classmethod
    def default(cls, kind: str, **overrides) -> "ModelConfig":
        """Table 1 settings for ``kind``, with keyword overrides."""
        if kind not in _TABLE1:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        base = dict(_TABLE1[kind])
        if kind == "meanstd_resnet":
            base["segment_frames"] = None
        base.update(overrides)
        return cls(kind=kind, **base).validated()

    def validated(self) -> "ModelConfig":
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.unit_type not in ("basic", "bottleneck"):
            raise ValueError(f"unit_type must be basic or bottleneck, got {self.unit_type!r}")
        if not (len(self.units) == len(self.channels) == len(self.dilations) == 4):
            raise ValueError("units, channels and dilations need one entry per block (4)")
        if min(self.units) < 1 or min(self.channels) < 1 or min(self.dilations) < 1:
            raise ValueError("unit counts, channels and dilations must be positive")
        if self.n_classes < 2 or self.input_dim < 1:
            raise ValueError("n_classes must be >= 2 and input_dim >= 1")
        if self.mask_mode not in ("multiply", "residual"):
            raise ValueError(f"mask_mode must be multiply or residual, got {self.mask_mode!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("units", "channels", "dilations", "attention_down_dilations", "attention_up_dilations"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validated()


def _time_mask(valid_len: np.ndarray, width: int, dtype) -> np.ndarray:
    return (np.arange(width)[None, :] < valid_len[:, None]).astype(dtype)[:, None, None, :]


def _apply_mask(x: Tensor, mask) -> Tensor:
    return x if mask is None else x * mask


class SEBlock(Module):
    """Channel gating: GAP -> FC(C, ceil(C/r)) -> ReLU -> FC -> sigmoid -> rescale."""

    def __init__(self, channels: int, reduction: int = 16, rng=None, dtype=np.float32):
        hidden = max(math.ceil(channels / reduction), 1)
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)

    def excitation(self, x: Tensor) -> Tensor:
        squeeze = F.global_avg_pool(x)
        return F.sigmoid(self.fc2(F.relu(self.fc1(squeeze))))

    def forward(self, x: Tensor) -> Tensor:
        s = self.excitation(x)
        return x * s.reshape(s.shape[0], s.shape[1], 1, 1)


class BasicUnit(Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1, dilation: int = 1,
                 se_reduction: int | None = None, rng=None, dtype=np.float32):
        self.stride = stride
        self.conv1 = Conv2d(c_in, c_out, 3, stride, dilation=dilation, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c_out, dtype=dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, dilation=dilation, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(c_out, dtype=dtype)
        self.se = SEBlock(c_out, se_reduction, rng=rng, dtype=dtype) if se_reduction else None
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, padding=0, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(c_out, dtype=dtype)
        else:
            self.proj = None
        self.out_channels = c_out

    def forward(self, x: Tensor, mask=None) -> Tensor:
        x = _apply_mask(x, mask)
        out_mask = None if mask is None else mask[..., ::self.stride]
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(_apply_mask(h, out_mask)))
        if self.se is not None:
            h = self.se(h)
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return F.relu(h + shortcut)


class BottleneckUnit(Module):
    def __init__(self, c_in: int, planes: int, stride: int = 1, dilation: int = 1, expansion: int = 2,
                 se_reduction: int | None = None, rng=None, dtype=np.float32):
        c_out = planes * expansion
        self.stride = stride
        self.conv1 = Conv2d(c_in, planes, 1, 1, padding=0, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm2d(planes, dtype=dtype)
        self.conv2 = Conv2d(planes, planes, 3, stride, dilation=dilation, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm2d(planes, dtype=dtype)
        self.conv3 = Conv2d(planes, c_out, 1, 1, padding=0, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm2d(c_out, dtype=dtype)
        self.se = SEBlock(c_out, se_reduction, rng=rng, dtype=dtype) if se_reduction else None
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, stride, padding=0, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm2d(c_out, dtype=dtype)
        else:
            self.proj = None
        self.out_channels = c_out

    def forward(self, x: Tensor, mask=None) -> Tensor:
        x = _apply_mask(x, mask)
        out_mask = None if mask is None else mask[..., ::self.stride]
        h = F.relu(self.bn1(self.conv1(x)))
        h = F.relu(self.bn2(self.conv2(_apply_mask(h, mask))))
        h = self.bn3(self.conv3(_apply_mask(h, out_mask)))
        if self.se is not None:
            h = self.se(h)
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return F.relu(h + shortcut)


class ConvBNReLU(Module):
    def __init__(self, c_in: int, c_out: int, dilation: int = 1, rng=None, dtype=np.float32):
        self.conv = Conv2d(c_in, c_out, 3, 1, dilation=dilation, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(c_out, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


class ResNetBackbone(Module):
    """3x3 stem followed by four residual blocks; blocks 2-4 open with stride 2."""

    def __init__(self, cfg: ModelConfig, se_reduction: int | None, rng, dtype):
        self.stem = ConvBNReLU(1, cfg.channels[0], rng=rng, dtype=dtype)
        units = []
        self.layout = []
        c_in = cfg.channels[0]
        for b, (n_units, ch, dil) in enumerate(zip(cfg.units, cfg.channels, cfg.dilations)):
            for u in range(n_units):
                stride = 2 if (b > 0 and u == 0) else 1
                if cfg.unit_type == "basic":
                    unit = BasicUnit(c_in, ch, stride, dil, se_reduction, rng=rng, dtype=dtype)
                else:
                    unit = BottleneckUnit(c_in, ch, stride, dil, cfg.expansion, se_reduction, rng=rng, dtype=dtype)
                units.append(unit)
                c_in = unit.out_channels
            self.layout.append({"unit_type": cfg.unit_type, "units": n_units, "channels": ch, "dilation": dil})
        self.units = units
        self.out_channels = c_in

    def forward(self, x: Tensor, mask=None) -> Tensor:
        h = self.stem(x)
        for unit in self.units:
            h = unit(h, mask)
            if mask is not None and unit.stride != 1:
                mask = mask[..., ::unit.stride]
        return h


class _SpoofNet(Module):
    config: ModelConfig

    def _prepare(self, x) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"expected a batch shaped N x T x D, got {data.shape}")
        if data.shape[2] != self.config.input_dim:
            raise ValueError(f"feature dimension {data.shape[2]} does not match model input_dim {self.config.input_dim}")
        seg = self.config.segment_frames
        if self.config.kind in FIXED_SIZE_KINDS and seg is not None and data.shape[1] != seg:
            raise ValueError(f"{self.config.kind} accepts fixed-size input of {seg} frames, got {data.shape[1]}")
        return Tensor(np.ascontiguousarray(data.transpose(0, 2, 1)[:, None], dtype=self.dtype))

    @property
    def dtype(self):
        return self.parameters()[0].data.dtype

    def describe(self) -> list[dict]:
        """Per-block layout (unit type, unit count, channels, dilation)."""
        return list(self.layout)


class SENet(_SpoofNet):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.config = cfg
        self.backbone = ResNetBackbone(cfg, cfg.se_reduction, rng, dtype)
        self.layout = self.backbone.layout
        self.fc = Linear(self.backbone.out_channels, cfg.n_classes, rng=rng, dtype=dtype)

    def forward(self, x, valid_len=None) -> Tensor:
        h = self.backbone(self._prepare(x))
        return self.fc(F.global_avg_pool(h))


class MeanStdResNet(_SpoofNet):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.config = cfg
        self.backbone = ResNetBackbone(cfg, None, rng, dtype)
        self.layout = self.backbone.layout
        freq = cfg.input_dim
        for _ in range(len(cfg.units) - 1):
            freq = conv_output_size(freq, 3, 2, 1)
        self.pooled_freq = freq
        self.fc = Linear(2 * self.backbone.out_channels * freq, cfg.n_classes, rng=rng, dtype=dtype)

    def forward(self, x, valid_len=None) -> Tensor:
        xt = self._prepare(x)
        n, _, _, t = xt.shape
        valid_len = np.full(n, t) if valid_len is None else np.asarray(valid_len, dtype=np.int64)
        if valid_len.shape != (n,) or (valid_len < 1).any() or (valid_len > t).any():
            raise ValueError("valid_len must give 1..T frames for every batch row")
        mask = _time_mask(valid_len, t, xt.dtype)
        h = self.backbone(xt, mask)
        frames_len = valid_len
        for _ in range(len(self.config.units) - 1):
            frames_len = (frames_len - 1) // 2 + 1
        n, c, f, t_out = h.shape
        frames = h.transpose(0, 3, 1, 2).reshape(n, t_out, c * f)
        return self.fc(F.mean_std_pool(frames, frames_len))


class DilatedResNet(_SpoofNet):
    """Four blocks of residual units, each closed by max-pooling and a dilated
    convolution into the next block's width."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.config = cfg
        ch = cfg.channels
        self.stem = ConvBNReLU(1, ch[0], rng=rng, dtype=dtype)
        blocks, transitions = [], []
        self.layout = []
        for b in range(4):
            units = [BasicUnit(ch[b], ch[b], 1, 1, None, rng=rng, dtype=dtype) for _ in range(cfg.units[b])]
            blocks.extend(units)
            nxt = ch[b + 1] if b < 3 else ch[b]
            transitions.append(ConvBNReLU(ch[b], nxt, dilation=cfg.dilations[b], rng=rng, dtype=dtype))
            self.layout.append({"unit_type": "basic", "units": cfg.units[b], "channels": ch[b],
                                "dilation": cfg.dilations[b]})
        self.units = blocks
        self.transitions = transitions
        self.fc = Linear(ch[3], cfg.n_classes, rng=rng, dtype=dtype)

    def features(self, xt: Tensor) -> Tensor:
        h = self.stem(xt)
        i = 0
        for b in range(4):
            for _ in range(self.config.units[b]):
                h = self.units[i](h)
                i += 1
            h = self.transitions[b](F.max_pool2d(h, 2))
        return F.global_avg_pool(h)

    def forward(self, x, valid_len=None) -> Tensor:
        return self.fc(self.features(self._prepare(x)))


class AttentionMask(Module):
    """Encoder-decoder producing a sigmoid mask with the input's exact H x W.

    Down unit: 2x2 max-pool then dilated 3x3 conv. Up unit: 3x3 conv then
    bilinear resize to the matching encoder resolution, where the encoder
    output at that resolution is added back (skip connection).
    """

    def __init__(self, channels: int = 8, down_dilations=(1, 2, 4, 8), up_dilations=(1, 1, 1, 1),
                 rng=None, dtype=np.float32):
        self.down = [ConvBNReLU(1 if i == 0 else channels, channels, d, rng=rng, dtype=dtype)
                     for i, d in enumerate(down_dilations)]
        self.up = [ConvBNReLU(channels, channels, d, rng=rng, dtype=dtype) for d in up_dilations]
        self.out = Conv2d(channels, 1, 3, 1, bias=True, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        sizes = [x.shape[2:]]
        h = x
        for unit in self.down:
            h = unit(F.max_pool2d(h, 2))
            skips.append(h)
            sizes.append(h.shape[2:])
        # decoder walks back up: deepest -> input resolution
        for level, unit in enumerate(self.up):
            target = len(self.down) - 1 - level
            h = F.bilinear_resize(unit(h), sizes[target])
            if target > 0:
                h = h + skips[target - 1]
        return F.sigmoid(self.out(h))


class AttentiveFilteringNetwork(_SpoofNet):
    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        self.config = cfg
        self.attention = AttentionMask(cfg.attention_channels, cfg.attention_down_dilations,
                                       cfg.attention_up_dilations, rng=rng, dtype=dtype)
        self.classifier = DilatedResNet(cfg, rng, dtype)
        self.layout = self.classifier.layout

    def mask(self, x) -> Tensor:
        return self.attention(self._prepare(x))

    def forward(self, x, valid_len=None) -> Tensor:
        xt = self._prepare(x)
        s = self.attention(xt)
        masked = xt * s if self.config.mask_mode == "multiply" else xt * s + xt
        return self.classifier.fc(self.classifier.features(masked))


_BUILDERS = {
    "senet34": SENet,
    "senet50": SENet,
    "meanstd_resnet": MeanStdResNet,
    "dilated_resnet": DilatedResNet,
    "afn": AttentiveFilteringNetwork,
}


def build_model(cfg: ModelConfig, dtype=np.float32) -> _SpoofNet:
    """Instantiate the architecture described by ``cfg`` (He-normal convs, seeded)."""
    cfg = cfg.validated()
    rng = np.random.default_rng(cfg.seed)
    return _BUILDERS[cfg.kind](cfg, rng, dtype)


def tiny_config(kind: str, **overrides) -> ModelConfig:
    """Scaled-down variant used for fast experiments and gradient checks."""
    small = dict(units=(1, 1, 1, 1), channels=(8, 8, 16, 16))
    if kind in ("dilated_resnet", "afn"):
        small = dict(units=(1, 1, 1, 1), channels=(4, 4, 8, 8))
    small.update(overrides)
    return ModelConfig.default(kind, **small)


__all__ = [
    "AttentionMask", "AttentiveFilteringNetwork", "BasicUnit", "BottleneckUnit", "DilatedResNet",
    "FIXED_SIZE_KINDS", "KINDS", "MeanStdResNet", "ModelConfig", "SEBlock", "SENet", "build_model",
    "tiny_config",
]
