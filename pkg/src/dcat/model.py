"""The full classifier: twin backbones -> cross-attention fusion -> CBAM
refinement -> pooled softmax head, with one dropout layer between pooling
and the classifier (the layer MC inference re-samples)."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import backbone as BB
from . import cbam as CB
from . import fusion as FU
from . import tenfile
from .errors import ConfigError, FormatError
from .tensor import Tensor
from .util import make_rng

INIT_STREAM = 0  # rng stream tag for weight initialization


@dataclass
class ModelConfig:
    n_classes: int
    common_width: int = 64
    reduction: int = 8
    dropout_rate: float = 0.5
    fusion_mode: str = "cross"
    backbone_a: BB.BackboneConfig = field(default_factory=lambda: BB.BackboneConfig(network_id="A"))
    backbone_b: BB.BackboneConfig = field(
        default_factory=lambda: BB.BackboneConfig(network_id="B", use_residual=True)
    )

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.fusion_mode not in ("cross", "self"):
            raise ConfigError(f"fusion_mode must be 'cross' or 'self', got {self.fusion_mode!r}")
        if self.backbone_a.input_size != self.backbone_b.input_size:
            raise ConfigError("the two backbones must share an input size")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("n_classes", "common_width", "reduction", "dropout_rate", "fusion_mode")}
        for key, cfg in (("backbone_a", self.backbone_a), ("backbone_b", self.backbone_b)):
            d[key] = {
                "network_id": cfg.network_id,
                "stage_channels": list(cfg.stage_channels),
                "input_size": cfg.input_size,
                "use_residual": cfg.use_residual,
                "in_channels": cfg.in_channels,
            }
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        kwargs["backbone_a"] = BB.BackboneConfig(**d["backbone_a"])
        kwargs["backbone_b"] = BB.BackboneConfig(**d["backbone_b"])
        return cls(**kwargs)


class DcatModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = make_rng(seed, INIT_STREAM)
        self.backbone_a = BB.build_backbone(cfg.backbone_a, rng)
        self.backbone_b = BB.build_backbone(cfg.backbone_b, rng)
        tap_a = (cfg.backbone_a.stage_channels[-2], cfg.backbone_a.stage_channels[-1])
        tap_b = (cfg.backbone_b.stage_channels[-2], cfg.backbone_b.stage_channels[-1])
        self.fusion_params = FU.init_params(rng, cfg.common_width, tap_a, tap_b)
        self.cbam_params = CB.init_params(rng, 2 * cfg.common_width, cfg.n_classes, cfg.reduction)

    @property
    def fused_channels(self) -> int:
        return 2 * self.cfg.common_width

    def parameters(self) -> dict:
        out = {}
        for prefix, net in (("backbone_a", self.backbone_a), ("backbone_b", self.backbone_b)):
            for name, t in net.parameters().items():
                out[f"{prefix}.{name}"] = t
        out.update(FU.parameters(self.fusion_params))
        out.update(CB.parameters(self.cbam_params))
        return out

    def zero_grads(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def forward_trunk(self, x) -> Tensor:
        """Deterministic part: backbones -> fusion -> refinement -> pooled
        feature vectors (..., 2C)."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        fs = BB.extract_multiscale(self.backbone_a, self.backbone_b, x)
        fused = FU.multiscale_fuse(fs, self.fusion_params, mode=self.cfg.fusion_mode)
        refined = CB.refine(fused, self.cbam_params)
        return CB.pool_features(refined)

    def forward_head(self, features: Tensor, dropout_active: bool = False, rng=None) -> Tensor:
        """Stochastic part: dropout (when active) -> linear -> softmax."""
        rate = self.cfg.dropout_rate if dropout_active else 0.0
        if rate > 0.0 and rng is None:
            raise ConfigError("dropout_active requires an rng")
        return CB.head_probs(features, self.cbam_params, dropout_rate=rate, rng=rng)

    def forward(self, x, dropout_active: bool = False, rng=None) -> Tensor:
        """Class probabilities for (3, H, W) or a (B, 3, H, W) batch."""
        return self.forward_head(self.forward_trunk(x), dropout_active=dropout_active, rng=rng)

    # -- checkpointing ------------------------------------------------------

    def state_records(self) -> dict:
        records = {"__config__": tenfile.json_to_record(self.cfg.to_dict())}
        for name, t in self.parameters().items():
            records[f"param.{name}"] = t.data
        return records

    def save(self, path, extra_records: dict | None = None) -> None:
        records = self.state_records()
        if extra_records:
            records.update(extra_records)
        tenfile.write_container(path, records)

    @classmethod
    def load(cls, path):
        """Rebuild a model from a checkpoint; returns (model, leftover records)."""
        records = tenfile.read_container(path)
        if "__config__" not in records:
            raise FormatError("checkpoint is missing the __config__ record")
        cfg = ModelConfig.from_dict(tenfile.json_from_record(records.pop("__config__")))
        model = cls(cfg, seed=0)
        params = model.parameters()
        extra = {}
        for key, arr in records.items():
            if key.startswith("param."):
                name = key[len("param.") :]
                if name not in params:
                    raise FormatError(f"checkpoint parameter {name!r} not in this architecture")
                if params[name].shape != arr.shape:
                    raise FormatError(
                        f"checkpoint parameter {name!r} has shape {arr.shape}, expected {params[name].shape}"
                    )
                params[name].data = arr.astype(np.float32)
            else:
                extra[key] = arr
        missing = [n for n in params if f"param.{n}" not in records]
        if missing:
            raise FormatError(f"checkpoint is missing parameter(s) {missing[:3]}")
        return model, extra


def config_fingerprint(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
