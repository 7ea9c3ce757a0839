"""STAN, Deep-rPPG, the rSTAN composite, early-fusion baselines and the 1D-CNN.

Both video branches share one I3D-style encoder layout (:class:`BackboneConfig`):
unit/pool/inception layers whose final max-pool keeps temporal stride 1, so
the attention stage sits at (T/4, H', W'). STAN puts STA on that stage and
classifies; Deep-rPPG taps it as ``x_r``, averages over space and decodes time
back to T with two stride-2 transposed convolutions.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional as F
from .attention import STA, VFE, enrich, sta_forward, vfe_forward
from .errors import ConfigError, DimensionError
from .layers import BatchNorm, Conv3d, ConvTranspose3d, InceptionBlock, Linear, Module, Pool3d, Unit3D
from .tensor import Tensor, as_tensor, concat, mean, mul, reshape


@dataclass
class BackboneConfig:
    """Declarative encoder layout.

    ``layers`` entries are dicts with ``stage``, ``name``, ``type`` and
    type-specific keys: ``unit`` (out, kernel, stride, padding), ``pool``
    (kind, kernel, stride, padding) or ``inception`` (widths, 6 ints).
    ``decoder`` lists ``[out_channels, k_t, s_t, p_t]`` per temporal deconv.
    """

    preset: str
    in_channels: int
    layers: list
    decoder: list
    frame_size: tuple = (28, 28)
    clip_length: int = 64
    sta_embed: int | None = None
    sta_residual: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        d["frame_size"] = tuple(d.get("frame_size", (28, 28)))
        return cls(**d)

    def temporal_factor(self) -> int:
        f = 1
        for spec in self.layers:
            if spec["type"] in ("unit", "pool"):
                f *= F._triple(spec.get("stride", 1))[0]
        return f

    def last_max_pool(self) -> dict | None:
        pools = [s for s in self.layers if s["type"] == "pool" and s["kind"] == "max"]
        return pools[-1] if pools else None


def toy_preset(in_channels: int = 1, frame_size=(28, 28), clip_length: int = 64) -> BackboneConfig:
    """Three stages, widths (8, 16, 32), one inception block per stage."""
    layers = [
        dict(stage="stage1", name="stem", type="unit", out=8, kernel=3, stride=2, padding=1),
        dict(stage="stage1", name="pool1", type="pool", kind="max", kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        dict(stage="stage1", name="inc1", type="inception", widths=(2, 2, 2, 2, 2, 2)),
        dict(stage="stage2", name="pool2", type="pool", kind="max", kernel=3, stride=2, padding=1),
        dict(stage="stage2", name="inc2", type="inception", widths=(4, 4, 4, 4, 4, 4)),
        # last max-pool: temporal stride 1 keeps the temporal resolution
        dict(stage="stage3", name="pool3", type="pool", kind="max", kernel=3, stride=1, padding=1),
        dict(stage="stage3", name="inc3", type="inception", widths=(8, 8, 8, 8, 8, 8)),
    ]
    return BackboneConfig("toy", in_channels, layers, [[16, 4, 2, 1], [8, 4, 2, 1]],
                          tuple(frame_size), clip_length)


_I3D_INCEPTION = {
    "inc3b": (64, 96, 128, 16, 32, 32),
    "inc3c": (128, 128, 192, 32, 96, 64),
    "inc4b": (192, 96, 208, 16, 48, 64),
    "inc4c": (160, 112, 224, 24, 64, 64),
    "inc4d": (128, 128, 256, 24, 64, 64),
    "inc4e": (112, 144, 288, 32, 64, 64),
    "inc4f": (256, 160, 320, 32, 128, 128),
    "inc5b": (256, 160, 320, 32, 128, 128),
    "inc5c": (384, 192, 384, 48, 128, 128),
}


def paper_preset(in_channels: int = 3, frame_size=(224, 224), clip_length: int = 64) -> BackboneConfig:
    """Full I3D widths; the last max-pool has temporal stride 1 so a 64-frame
    224x224 clip reaches the attention stage at (16, 7, 7)."""
    inc = lambda stage, name: dict(stage=stage, name=name, type="inception", widths=_I3D_INCEPTION[name])  # noqa: E731
    layers = [
        dict(stage="stage1", name="conv1", type="unit", out=64, kernel=7, stride=2, padding=3),
        dict(stage="stage1", name="pool1", type="pool", kind="max", kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        dict(stage="stage2", name="conv2", type="unit", out=64, kernel=1, stride=1, padding=0),
        dict(stage="stage2", name="conv3", type="unit", out=192, kernel=3, stride=1, padding=1),
        dict(stage="stage2", name="pool2", type="pool", kind="max", kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        inc("stage3", "inc3b"),
        inc("stage3", "inc3c"),
        dict(stage="stage3", name="pool3", type="pool", kind="max", kernel=3, stride=2, padding=1),
        inc("stage4", "inc4b"),
        inc("stage4", "inc4c"),
        inc("stage4", "inc4d"),
        inc("stage4", "inc4e"),
        inc("stage4", "inc4f"),
        dict(stage="stage4", name="pool4", type="pool", kind="max", kernel=3, stride=(1, 2, 2), padding=1),
        inc("stage5", "inc5b"),
        inc("stage5", "inc5c"),
    ]
    return BackboneConfig("paper", in_channels, layers, [[512, 4, 2, 1], [256, 4, 2, 1]],
                          tuple(frame_size), clip_length)


PRESETS = {"toy": toy_preset, "paper": paper_preset}


def get_preset(name: str, **kw) -> BackboneConfig:
    try:
        return PRESETS[name](**kw)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, sum(ord(c) * 31**i for i, c in enumerate(tag)) % (2**32)])


class _Stage(Module):
    def __init__(self):
        self.order: list[str] = []

    def add(self, name: str, layer: Module) -> None:
        setattr(self, name, layer)
        self.order.append(name)

    def forward(self, x):
        for name in self.order:
            x = getattr(self, name)(x)
        return x


class Encoder(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stage_names: list[str] = []
        c = cfg.in_channels
        for spec in cfg.layers:
            st = spec["stage"]
            if st not in self.stage_names:
                self.stage_names.append(st)
                setattr(self, st, _Stage())
            if spec["type"] == "unit":
                layer = Unit3D(c, spec["out"], spec["kernel"], spec.get("stride", 1), spec.get("padding", 0), rng=rng)
                c = spec["out"]
            elif spec["type"] == "pool":
                layer = Pool3d(spec["kind"], spec["kernel"], spec.get("stride"), spec.get("padding", 0))
            elif spec["type"] == "inception":
                layer = InceptionBlock(c, spec["widths"], rng=rng)
                c = layer.cout
            else:
                raise ConfigError(f"unknown layer type {spec['type']!r}")
            getattr(self, st).add(spec["name"], layer)
        self.out_channels = c

    def forward(self, x):
        for st in self.stage_names:
            x = getattr(self, st)(x)
        return x

    def layer_shapes(self, shape) -> list[tuple[str, tuple]]:
        """Shape inference, no compute: [(stage.layer, (C, T, H, W)), ...]."""
        shape = tuple(shape)
        out = []
        for st in self.stage_names:
            stage = getattr(self, st)
            for name in stage.order:
                shape = getattr(stage, name).out_shape(shape)
                if min(shape) < 1:
                    raise ConfigError(f"{st}.{name} produces non-positive shape {shape}")
                out.append((f"{st}.{name}", shape))
        return out

    def out_shape(self, shape) -> tuple:
        return self.layer_shapes(shape)[-1][1]


def check_video(video, cfg: BackboneConfig) -> Tensor:
    """Promote to (N, C, T, H, W) and validate T against the temporal stride."""
    v = as_tensor(video)
    if v.ndim == 4:
        v = reshape(v, (1,) + v.shape)
    if v.ndim != 5:
        raise DimensionError(f"video must be (C,T,H,W) or (N,C,T,H,W), got {tuple(v.shape)}")
    if v.shape[1] != cfg.in_channels:
        raise ConfigError(f"video has {v.shape[1]} channels, preset expects {cfg.in_channels}")
    fac = cfg.temporal_factor()
    if v.shape[2] % fac:
        raise ConfigError(f"frame count {v.shape[2]} not divisible by the backbone's temporal factor {fac}")
    return v


class STAN(Module):
    """Encoder -> STA -> global average pool -> linear."""

    def __init__(self, cfg: BackboneConfig, num_classes: int = 2, seed: int = 0, attention: bool = True):
        self.cfg = cfg
        self.encoder = Encoder(cfg, _rng(seed, "stan.encoder"))
        c = self.encoder.out_channels
        self.sta = None
        if attention:
            self.sta = STA(c, cfg.sta_embed, cfg.sta_residual, rng=_rng(seed, "stan.sta"))
            if cfg.sta_residual:
                # residual block starts as the identity, so training begins from the attention-free network
                self.sta.h.weight.data[...] = 0.0
                self.sta.h.bias.data[...] = 0.0
        self.head = Linear(c, num_classes, rng=_rng(seed, "stan.head"))

    def features(self, video):
        x_v = self.encoder(check_video(video, self.cfg))
        return sta_forward(x_v, self.sta) if self.sta is not None else x_v

    def classify(self, fmap):
        return self.head(F.global_avg_pool(fmap))

    def forward(self, video):
        z_v = self.features(video)
        return self.classify(z_v), z_v


class DeepRPPG(Module):
    """Encoder -> spatial average (temporal stride 1) -> 2 temporal deconvs -> 1x1x1 projection."""

    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        last = cfg.last_max_pool()
        if last is None or F._triple(last.get("stride", 1))[0] != 1:
            raise ConfigError("Deep-rPPG needs the last max-pool to have temporal stride 1")
        if len(cfg.decoder) != 2:
            raise ConfigError(f"Deep-rPPG uses exactly two temporal deconvolutions, got {len(cfg.decoder)}")
        self.cfg = cfg
        rng = _rng(seed, "rppg.encoder")
        self.encoder = Encoder(cfg, rng)
        c = self.encoder.out_channels
        rng = _rng(seed, "rppg.decoder")
        self.deconv = []
        self.dbn = []
        for cout, k, s, p in cfg.decoder:
            self.deconv.append(ConvTranspose3d(c, cout, (k, 1, 1), (s, 1, 1), (p, 0, 0), bias=False, rng=rng))
            self.dbn.append(BatchNorm(cout))
            c = cout
        self.proj = Conv3d(c, 1, 1, rng=rng)

    def decode(self, x_r, length: int):
        y = mean(x_r, axis=(-2, -1), keepdims=True)
        for dc, bn in zip(self.deconv, self.dbn):
            y = F.relu(bn(dc(y)))
        y = self.proj(y)
        if y.shape[2] != length:
            raise ConfigError(f"decoder reaches length {y.shape[2]}, input has {length} frames")
        return reshape(y, (y.shape[0], length))

    def decoded_length(self, t_enc: int) -> int:
        for _, k, s, p in self.cfg.decoder:
            t_enc = F.deconv_out_len(t_enc, k, s, p)
        return t_enc

    def forward(self, video):
        v = check_video(video, self.cfg)
        t_enc = self.encoder.out_shape(v.shape[1:])[1]
        if self.decoded_length(t_enc) != v.shape[2]:
            raise ConfigError(f"decoder reaches length {self.decoded_length(t_enc)}, input has {v.shape[2]} frames")
        x_r = self.encoder(v)
        return self.decode(x_r, v.shape[2]), x_r


@dataclass
class RstanOutput:
    logits: Tensor
    rppg_pred: Tensor
    f_e: Tensor
    z_v: Tensor = None
    x_r: Tensor = None
    m: Tensor = None


class RSTAN(Module):
    """STAN + Deep-rPPG joined by VFE (``fusion="vfe"``) or an early-fusion baseline.

    ``fusion="early-flatten"`` concatenates the flattened z_v and x_r before
    a linear head; ``"early-concat"`` concatenates them on channels, then
    pools and classifies.
    """

    FUSIONS = ("vfe", "early-flatten", "early-concat")

    def __init__(self, cfg: BackboneConfig, num_classes: int = 2, seed: int = 0, fusion: str = "vfe"):
        if fusion not in self.FUSIONS:
            raise ConfigError(f"unknown fusion {fusion!r}")
        self.cfg = cfg
        self.fusion = fusion
        self.stan = STAN(cfg, num_classes, seed)
        self.rppg = DeepRPPG(cfg, seed)
        c = self.stan.encoder.out_channels
        if fusion == "vfe":
            self.vfe = VFE(c, rng=_rng(seed, "vfe"))
        elif fusion == "early-flatten":
            c_, t, h, w = self.stan.encoder.out_shape((cfg.in_channels, cfg.clip_length) + tuple(cfg.frame_size))
            self.fusion_head = Linear(2 * c_ * t * h * w, num_classes, rng=_rng(seed, "fusion.head"))
        else:
            self.fusion_head = Linear(2 * c, num_classes, rng=_rng(seed, "fusion.head"))

    def forward(self, video) -> RstanOutput:
        v = check_video(video, self.cfg)
        z_v = self.stan.features(v)
        rppg_pred, x_r = self.rppg(v)
        if x_r.shape != z_v.shape:
            raise DimensionError(f"branch shapes differ: x_r {x_r.shape} vs z_v {z_v.shape}")
        m = None
        if self.fusion == "vfe":
            f, m = vfe_forward(x_r, z_v, self.vfe, return_map=True)
            f_e = enrich(f, z_v)
            logits = self.stan.classify(f_e)
        elif self.fusion == "early-flatten":
            n = z_v.shape[0]
            f_e = concat([reshape(z_v, (n, -1)), reshape(x_r, (n, -1))], axis=1)
            logits = self.fusion_head(f_e)
        else:
            f_e = concat([z_v, x_r], axis=1)
            logits = self.fusion_head(F.global_avg_pool(f_e))
        return RstanOutput(logits, rppg_pred, f_e, z_v, x_r, m)


class CNN1D(Module):
    """Seven conv1d (BN-ReLU) layers, three stride-2 max-pools, Fc 128 -> classes.

    Runs on (N, T) signals; T must be divisible by 8.
    """

    def __init__(self, num_classes: int = 2, channels: int = 64, hidden: int = 128, length: int = 64,
                 dropout: float = 0.5, seed: int = 0):
        if length % 8:
            raise ConfigError(f"1D-CNN input length must be divisible by 8, got {length}")
        rng = _rng(seed, "cnn1d")
        self.length = length
        self.p = dropout
        self.conv1 = Unit3D(1, channels, (5, 1, 1), padding=(2, 0, 0), rng=rng)
        for i in range(2, 8):
            setattr(self, f"conv{i}", Unit3D(channels, channels, (3, 1, 1), padding=(1, 0, 0), rng=rng))
        self.pool = Pool3d("max", (2, 1, 1), (2, 1, 1))
        self.flat_dim = channels * length // 8
        self.fc1 = Linear(self.flat_dim, hidden, rng=rng)
        self.fc2 = Linear(hidden, num_classes, rng=rng)
        self._drop_rng = _rng(seed, "cnn1d.dropout")

    def forward(self, signal):
        x = as_tensor(signal)
        if x.ndim == 1:
            x = reshape(x, (1, -1))
        n, t = x.shape
        if t % 8:
            raise ConfigError(f"1D-CNN input length must be divisible by 8, got {t}")
        if t != self.length:
            raise DimensionError(f"model built for length {self.length}, got {t}")
        x = reshape(x, (n, 1, t, 1, 1))
        x = self.pool(self.conv1(x))
        x = self.pool(self.conv3(self.conv2(x)))
        x = self.pool(self.conv5(self.conv4(x)))
        x = self.conv7(self.conv6(x))
        x = reshape(x, (n, -1))
        x = F.dropout(x, self.p, self.training, self._drop_rng)
        x = F.relu(self.fc1(x))
        x = F.dropout(x, self.p, self.training, self._drop_rng)
        return self.fc2(x)


# functional entry points ----------------------------------------------------

def stan_forward(video, model: STAN):
    return model(video)


def deep_rppg_forward(video, model: DeepRPPG):
    return model(video)


def rstan_forward(video, model: RSTAN) -> RstanOutput:
    return model(video)


def cnn1d_forward(signal, model: CNN1D):
    return model(signal)
