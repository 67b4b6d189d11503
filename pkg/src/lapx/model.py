"""The full multi-stage hourglass network and its configuration.

An input image passes a two-step stem down to quarter resolution, then a
stack of hourglass stages.  Each stage encodes through residual blocks and
max-pooling, runs neck blocks at the lowest resolution (optionally with
channel + all-pairs attention), decodes back up through skip connections,
gates the top output with channel + spatial attention, and emits per-stage
heatmaps through a 1x1 head.  Stages are wired Newell-style: the next
stage's input is the previous input plus 1x1-remapped features and heatmaps.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .engine import Tensor, ShapeError, add, maxpool2x2, scope, upsample_nearest2x
from .nn import Module, Conv2d, ConvBnRelu, DwSeparable, ResidualBlock
from .attention import EcaCbam, EcaNonLocal

__all__ = [
    "ConfigError", "ModelConfig", "PRESETS", "preset_config",
    "HourglassNet", "build_model", "model_forward",
    "config_to_json", "config_from_json", "load_config_file",
]


class ConfigError(ValueError):
    """A model configuration violates a named constraint."""


@dataclasses.dataclass
class ModelConfig:
    num_stages: int = 3
    channels: int = 208
    num_keypoints: int = 16
    input_hw: tuple = (256, 256)
    num_pool_levels: int = 4
    blocks_per_level: int = 1
    # per-level encoder depth override; None means blocks_per_level at every
    # level.  This is the knob the named presets use to hit their budgets.
    enc_blocks: tuple | None = None
    # None resolves to {1, 3} clipped to the stage count; an explicit set is
    # validated strictly
    nonlocal_stages: set | None = None
    use_eca_cbam: bool = True
    use_stem_eca_cbam: bool = True
    use_soft_gate: bool = True
    heatmap_sigma: float = 2.0

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        if self.enc_blocks is not None:
            self.enc_blocks = tuple(int(v) for v in self.enc_blocks)
        if self.nonlocal_stages is not None:
            self.nonlocal_stages = set(int(s) for s in self.nonlocal_stages)
        self.validate()

    def validate(self):
        if self.num_stages < 1:
            raise ConfigError(f"num_stages must be >= 1, got {self.num_stages}")
        if self.num_keypoints < 1:
            raise ConfigError(f"num_keypoints must be >= 1, got {self.num_keypoints}")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(
                f"channels must be even and >= 2 (the stem uses channels/2), got {self.channels}")
        if len(self.input_hw) != 2:
            raise ConfigError(f"input_hw must be (H, W), got {self.input_hw!r}")
        h, w = self.input_hw
        if h % 4 or w % 4 or h < 4 or w < 4:
            raise ConfigError(
                f"input extents must be positive multiples of 4 (heatmaps are input/4), got {h}x{w}")
        if self.num_pool_levels < 1:
            raise ConfigError(f"num_pool_levels must be >= 1, got {self.num_pool_levels}")
        div = 4 * (2 ** self.num_pool_levels)
        if (h // 4) % (2 ** self.num_pool_levels) or (w // 4) % (2 ** self.num_pool_levels):
            raise ConfigError(
                f"input extents must be divisible by {div} so {self.num_pool_levels} "
                f"pool levels bottom out on a whole pixel grid, got {h}x{w}")
        if self.blocks_per_level < 1:
            raise ConfigError(
                f"blocks_per_level must be >= 1, got {self.blocks_per_level}")
        if self.enc_blocks is not None:
            if len(self.enc_blocks) != self.num_pool_levels:
                raise ConfigError(
                    f"enc_blocks needs one entry per pool level "
                    f"({self.num_pool_levels}), got {len(self.enc_blocks)}")
            if any(b < 1 for b in self.enc_blocks):
                raise ConfigError("enc_blocks entries must be >= 1")
        if self.nonlocal_stages is not None:
            bad = [s for s in self.nonlocal_stages
                   if s < 1 or s > self.num_stages]
            if bad:
                raise ConfigError(
                    f"nonlocal_stages must lie in 1..{self.num_stages}, got {sorted(bad)}")
        if self.effective_nonlocal_stages() and self.channels % 8:
            raise ConfigError(
                f"channels must be divisible by 8 when non-local stages are "
                f"enabled (projections use channels/8), got {self.channels}")
        if not (self.heatmap_sigma > 0):
            raise ConfigError(
                f"heatmap_sigma must be positive, got {self.heatmap_sigma}")

    def effective_nonlocal_stages(self) -> set:
        if self.nonlocal_stages is None:
            return {s for s in (1, 3) if s <= self.num_stages}
        return set(self.nonlocal_stages)

    def level_blocks(self) -> tuple:
        if self.enc_blocks is not None:
            return self.enc_blocks
        return (self.blocks_per_level,) * self.num_pool_levels

    @property
    def heatmap_hw(self) -> tuple:
        return (self.input_hw[0] // 4, self.input_hw[1] // 4)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["input_hw"] = list(self.input_hw)
        d["enc_blocks"] = list(self.enc_blocks) if self.enc_blocks is not None else None
        d["nonlocal_stages"] = (sorted(self.nonlocal_stages)
                                if self.nonlocal_stages is not None else None)
        return d


def _preset(num_stages, channels, enc_blocks, full=False):
    # The named presets mirror the stage-count ablation grid: plain
    # multi-stage models without the attention additions.  full=True is the
    # flagship configuration with every addition enabled.
    return ModelConfig(
        num_stages=num_stages,
        channels=channels,
        enc_blocks=enc_blocks,
        nonlocal_stages=None if full else set(),
        use_eca_cbam=full,
        use_stem_eca_cbam=full,
        use_soft_gate=full,
    )


def preset_config(name: str) -> ModelConfig:
    try:
        maker = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return maker()


PRESETS = {
    "lapx-2s256": lambda: _preset(2, 256, (3, 3, 3, 2)),
    "lapx-3s208": lambda: _preset(3, 208, (3, 3, 2, 2)),
    "lapx-4s190": lambda: _preset(4, 190, (2, 2, 2, 2)),
    "lapx-5s160": lambda: _preset(5, 160, (3, 2, 2, 2)),
    # flagship: 3 stages with channel/spatial attention, soft gates, and
    # all-pairs attention in stages 1 and 3
    "lapx": lambda: _preset(3, 208, (3, 3, 2, 2), full=True),
}


class Stem(Module):
    """(N,3,H,W) -> (N,C,H/4,W/4): a strided 3x3 conv to C/2 followed by a
    strided depthwise-separable block to C."""

    def __init__(self, rng, channels):
        super().__init__()
        self.conv = ConvBnRelu(rng, 3, channels // 2, 3, stride=2, pad=1)
        self.block = DwSeparable(rng, channels // 2, channels, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.block(self.conv(x))


class HourglassStage(Module):
    def __init__(self, rng, cfg: ModelConfig, stage_index: int):
        super().__init__()
        c = cfg.channels
        self.levels = cfg.num_pool_levels
        self.is_last = stage_index == cfg.num_stages
        per_level = cfg.level_blocks()

        for lvl in range(self.levels):
            for j in range(per_level[lvl]):
                setattr(self, f"enc{lvl}_b{j}",
                        ResidualBlock(rng, c, cfg.use_soft_gate))
        self.enc_counts = per_level
        self.neck = ResidualBlock(rng, c, cfg.use_soft_gate)
        self.neck_att = (EcaNonLocal(rng, c)
                         if stage_index in cfg.effective_nonlocal_stages() else None)
        for lvl in range(self.levels):
            setattr(self, f"skip{lvl}", ResidualBlock(rng, c, cfg.use_soft_gate))
        self.top_att = EcaCbam(rng) if cfg.use_eca_cbam else None
        self.head = Conv2d(rng, c, cfg.num_keypoints, 1, bias=True)
        if not self.is_last:
            self.remap_feat = Conv2d(rng, c, c, 1, bias=False)
            self.remap_heat = Conv2d(rng, cfg.num_keypoints, c, 1, bias=False)

    def forward(self, x: Tensor):
        taps = []
        for lvl in range(self.levels):
            for j in range(self.enc_counts[lvl]):
                x = getattr(self, f"enc{lvl}_b{j}")(x)
            taps.append(x)
            x, _ = maxpool2x2(x)
        x = self.neck(x)
        if self.neck_att is not None:
            x = self.neck_att(x)
        for lvl in reversed(range(self.levels)):
            x = add(getattr(self, f"skip{lvl}")(taps[lvl]), upsample_nearest2x(x))
        if self.top_att is not None:
            x = self.top_att(x)
        return x, self.head(x)


class HourglassNet(Module):
    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stem = Stem(rng, cfg.channels)
        self.stem_att = EcaCbam(rng) if cfg.use_stem_eca_cbam else None
        for i in range(1, cfg.num_stages + 1):
            setattr(self, f"stage{i}", HourglassStage(rng, cfg, i))
        self._label = "net"

    def stage(self, i: int) -> HourglassStage:
        if not 1 <= i <= self.cfg.num_stages:
            raise ShapeError(
                f"stage index {i} out of range 1..{self.cfg.num_stages}")
        return getattr(self, f"stage{i}")

    def forward(self, images: Tensor) -> list:
        n = images.data.shape[0] if images.data.ndim == 4 else 0
        expect = (n, 3) + self.cfg.input_hw
        if images.data.ndim != 4 or images.data.shape != expect:
            raise ShapeError(
                f"expected images shaped {('N', 3) + self.cfg.input_hw}, "
                f"got {images.data.shape}")
        f = self.stem(images)
        if self.stem_att is not None:
            f = self.stem_att(f)
        heatmaps = []
        for i in range(1, self.cfg.num_stages + 1):
            st = self.stage(i)
            feats, hm = st(f)
            heatmaps.append(hm)
            if not st.is_last:
                # run the remaps inside the owning stage's scope so their
                # traced cost lands on the same layer rows as their params
                with scope(f"stage{i}"):
                    f = add(add(f, st.remap_feat(feats)), st.remap_heat(hm))
        return heatmaps


def build_model(cfg: ModelConfig, seed: int) -> HourglassNet:
    """Deterministic construction: same config and seed, same weights."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    return HourglassNet(rng, cfg)


def model_forward(model: HourglassNet, images: Tensor) -> list:
    return model(images)


# ---------------------------------------------------------------------------
# config file round trip (JSON syntax, field names as in ModelConfig)
# ---------------------------------------------------------------------------

def config_to_json(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def config_from_json(text: str) -> ModelConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    kwargs = dict(raw)
    if kwargs.get("nonlocal_stages") is not None:
        kwargs["nonlocal_stages"] = set(kwargs["nonlocal_stages"])
    if kwargs.get("input_hw") is not None:
        kwargs["input_hw"] = tuple(kwargs["input_hw"])
    if kwargs.get("enc_blocks") is not None:
        kwargs["enc_blocks"] = tuple(kwargs["enc_blocks"])
    try:
        return ModelConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad config value: {e}") from None


def load_config_file(path: str) -> ModelConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(fh.read())
