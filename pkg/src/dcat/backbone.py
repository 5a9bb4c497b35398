"""Two-network, two-scale feature extraction.

Each toy backbone is a stack of [conv3x3 -> ReLU -> 2x avg-pool] stages;
network B appends a residual unit (x + conv3x3(x), bias-free) after each
pool so the two networks stay architecturally heterogeneous. Taps are taken
after the last two stages, giving 28x28 and 14x14 maps at input size 224.

Real extractor features computed elsewhere can be brought in through a
keyed DTEN1 container with records a1, a2, b1, b2.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from . import tenfile
from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

FEATURE_KEYS = ("a1", "a2", "b1", "b2")


@dataclass
class BackboneConfig:
    network_id: str = "A"
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    input_size: int = 224
    use_residual: bool = False
    in_channels: int = 3

    def __post_init__(self):
        if self.network_id not in ("A", "B"):
            raise ConfigError(f"network_id must be 'A' or 'B', got {self.network_id!r}")
        if not self.stage_channels or any(c <= 0 for c in self.stage_channels):
            raise ConfigError(f"stage_channels must be strictly positive, got {self.stage_channels}")
        n = len(self.stage_channels)
        if self.input_size % (1 << n) or self.input_size < (1 << n):
            raise ConfigError(
                f"input size {self.input_size} is not divisible by the stride schedule 2^{n}"
            )
        if self.input_size == 224 and self.tap_sizes() != (28, 14):
            raise ConfigError("stride schedule cannot reach the 28/14 tap sizes at input 224")

    def tap_sizes(self):
        n = len(self.stage_channels)
        return self.input_size >> (n - 1), self.input_size >> n


@dataclass
class FeatureMapSet:
    """Per-network, per-scale feature maps; scale 1 is twice the scale-2 size."""

    x_a_1: Tensor
    x_a_2: Tensor
    x_b_1: Tensor
    x_b_2: Tensor

    def __post_init__(self):
        s = {k: t.shape[-2:] for k, t in zip(FEATURE_KEYS, self.maps())}
        if s["a1"] != s["b1"]:
            raise DimensionError(f"scale-1 maps differ: a1 {s['a1']} vs b1 {s['b1']}")
        if s["a2"] != s["b2"]:
            raise DimensionError(f"scale-2 maps differ: a2 {s['a2']} vs b2 {s['b2']}")
        if tuple(2 * d for d in s["a2"]) != s["a1"]:
            raise DimensionError(f"scale-1 size {s['a1']} is not twice scale-2 size {s['a2']}")

    def maps(self):
        return (self.x_a_1, self.x_a_2, self.x_b_1, self.x_b_2)

    def channels(self):
        return tuple(t.shape[-3] for t in self.maps())


class Backbone:
    """Toy convolutional extractor with taps after the last two stages."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stages = []
        c_in = cfg.in_channels
        for c_out in cfg.stage_channels:
            stage = {
                "w": T.he_uniform(rng, (c_out, c_in, 3, 3), fan_in=c_in * 9),
                "b": Tensor(np.zeros((c_out, 1, 1), dtype=np.float32), requires_grad=True),
            }
            if cfg.use_residual:
                stage["w_res"] = T.he_uniform(rng, (c_out, c_out, 3, 3), fan_in=c_out * 9)
            self.stages.append(stage)
            c_in = c_out

    def parameters(self):
        out = {}
        for i, stage in enumerate(self.stages):
            for name, t in stage.items():
                out[f"stage{i}.{name}"] = t
        return out

    def forward(self, x: Tensor):
        """Run all stages; returns the (scale-1, scale-2) tap tensors."""
        size = self.cfg.input_size
        if x.shape[-3:] != (self.cfg.in_channels, size, size):
            raise DimensionError(
                f"backbone {self.cfg.network_id} expects (..., {self.cfg.in_channels}, {size}, {size}), got {x.shape}"
            )
        taps = []
        for stage in self.stages:
            x = T.avg_pool2x(T.relu(T.conv2d(x, stage["w"], padding=1) + stage["b"]))
            if "w_res" in stage:
                x = x + T.conv2d(x, stage["w_res"], padding=1)
            taps.append(x)
        return taps[-2], taps[-1]


def build_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> Backbone:
    return Backbone(cfg, rng)


def extract_multiscale(net_a: Backbone, net_b: Backbone, x: Tensor) -> FeatureMapSet:
    a1, a2 = net_a.forward(x)
    b1, b2 = net_b.forward(x)
    return FeatureMapSet(a1, a2, b1, b2)


def export_feature_maps(path, fs: FeatureMapSet) -> None:
    tenfile.write_container(path, {k: t.data for k, t in zip(FEATURE_KEYS, fs.maps())})


def import_feature_maps(path) -> FeatureMapSet:
    """Load an a1/a2/b1/b2 container and validate the scale invariants."""
    records = tenfile.read_container(path)
    missing = [k for k in FEATURE_KEYS if k not in records]
    if missing:
        raise FormatError(f"feature container is missing record(s) {missing}")
    for key in FEATURE_KEYS:
        if records[key].ndim != 3:
            raise FormatError(f"record {key!r} must be (C, H, W), got shape {records[key].shape}")
    try:
        return FeatureMapSet(*(Tensor(records[k]) for k in FEATURE_KEYS))
    except DimensionError as exc:
        raise FormatError(f"feature container violates scale invariants: {exc}") from exc
