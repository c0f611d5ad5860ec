"""Declarative decoder configuration and the built-in presets.

A decoder is an ordered list of blocks ``[mid, up_0, ..., up_k, head]``.
``mid`` opens with a standard ``conv_in`` from the latent channels; each
``up_i`` upsamples first (conv to ``r_t * r_s**2 * C_out`` channels, then the
decoupled shuffle) and then runs its residual blocks; ``head`` is
GroupNorm -> SiLU -> conv to ``3 * r_t * r_s**2`` channels followed by the
same shuffle. Temporal upsampling by ``r_t`` drops the leading ``r_t - 1``
frames, so a ``T_l``-frame latent decodes to ``d_t * (T_l - 1) + 1`` frames.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .errors import ConfigError

CONV_KINDS = ("standard", "dwsep")


@dataclass
class BlockConfig:
    name: str
    out_channels: int
    num_resblocks: int = 0
    upsample: tuple[int, int] = (1, 1)  # (r_t, r_s)
    conv_kind: str = "standard"
    kernel_size: int = 3

    def __post_init__(self):
        self.upsample = tuple(int(r) for r in self.upsample)

    @property
    def upsamples(self) -> bool:
        r_t, r_s = self.upsample
        return r_t * r_s * r_s > 1


@dataclass
class DecoderConfig:
    latent_channels: int
    blocks: list[BlockConfig]
    norm_groups: int = 32
    causal: bool = True
    temporal_padding: str = "replicate"
    standard_kernel: int = 3
    dwsep_kernel: int = 5

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockConfig) else BlockConfig(**b) for b in self.blocks]
        self.validate()

    # -- derived quantities

    @property
    def block_names(self) -> list[str]:
        return [b.name for b in self.blocks]

    @property
    def factors(self) -> tuple[int, int, int]:
        d_t = d_s = 1
        for b in self.blocks:
            d_t *= b.upsample[0]
            d_s *= b.upsample[1]
        return d_t, d_s, d_s

    @property
    def channel_schedule(self) -> list[int]:
        return [b.out_channels for b in self.blocks[:-1]]

    def block(self, name: str) -> BlockConfig:
        for b in self.blocks:
            if b.name == name:
                return b
        raise ConfigError(f"unknown block {name!r}; blocks are {self.block_names}")

    def latent_shape(self, frames: int, height: int, width: int, batch: int = 1) -> tuple[int, ...]:
        """Latent extents for a ``frames x height x width`` video (frames = T + 1)."""
        d_t, d_h, d_w = self.factors
        if (frames - 1) % d_t or height % d_h or width % d_w:
            raise ConfigError(f"video {(frames, height, width)} incompatible with factors {(d_t, d_h, d_w)}")
        return batch, self.latent_channels, (frames - 1) // d_t + 1, height // d_h, width // d_w

    def video_shape(self, latent_shape) -> tuple[int, ...]:
        N, _, T, H, W = latent_shape
        d_t, d_h, d_w = self.factors
        return N, 3, d_t * (T - 1) + 1, d_h * H, d_w * W

    # -- validation / mutation

    def validate(self) -> None:
        names = self.block_names
        if len(names) < 2 or names[0] != "mid" or names[-1] != "head":
            raise ConfigError(f"blocks must run mid, up_0..up_k, head; got {names}")
        for i, name in enumerate(names[1:-1]):
            if name != f"up_{i}":
                raise ConfigError(f"expected block up_{i}, got {name!r}")
        if self.latent_channels < 1:
            raise ConfigError("latent_channels must be positive")
        if self.temporal_padding not in ("replicate", "zero"):
            raise ConfigError(f"unknown temporal padding {self.temporal_padding!r}")
        for b in self.blocks:
            if b.conv_kind not in CONV_KINDS:
                raise ConfigError(f"{b.name}: conv_kind must be one of {CONV_KINDS}")
            if b.kernel_size < 1 or b.kernel_size % 2 == 0:
                raise ConfigError(f"{b.name}: kernel_size must be odd")
            if min(b.upsample) < 1:
                raise ConfigError(f"{b.name}: upsample factors must be >= 1")
            if b.num_resblocks < 0:
                raise ConfigError(f"{b.name}: num_resblocks must be >= 0")
            if b.name != "head" and b.out_channels % self.norm_groups:
                raise ConfigError(f"{b.name}: {b.out_channels} channels not divisible by {self.norm_groups} groups")
        head = self.blocks[-1]
        if head.out_channels != 3 or head.num_resblocks:
            raise ConfigError("head must output 3 channels and hold no resblocks")
        if head.conv_kind != "standard":
            raise ConfigError("head conv must be standard")
        if self.blocks[0].upsample != (1, 1):
            raise ConfigError("mid block cannot upsample")

    def with_kinds(self, dwsep_blocks) -> "DecoderConfig":
        """Copy with ``dwsep`` on the named blocks and ``standard`` elsewhere (head excluded)."""
        dwsep_blocks = set(dwsep_blocks)
        unknown = dwsep_blocks - set(self.block_names[:-1])
        if unknown:
            raise ConfigError(f"unknown blocks {sorted(unknown)}")
        blocks = []
        for b in self.blocks:
            if b.name == "head":
                blocks.append(replace(b))
            elif b.name in dwsep_blocks:
                blocks.append(replace(b, conv_kind="dwsep", kernel_size=self.dwsep_kernel))
            else:
                blocks.append(replace(b, conv_kind="standard", kernel_size=self.standard_kernel))
        return replace(self, blocks=blocks)

    def scaled(self, divisor: int, norm_groups: int | None = None) -> "DecoderConfig":
        """Same graph with every block width divided by ``divisor`` (for cheap shape checks)."""
        blocks = [replace(b, out_channels=b.out_channels if b.name == "head" else max(1, b.out_channels // divisor))
                  for b in self.blocks]
        groups = norm_groups if norm_groups is not None else max(1, self.norm_groups // divisor)
        return replace(self, blocks=blocks, norm_groups=groups)

    # -- serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        for b in d["blocks"]:
            b["upsample"] = list(b["upsample"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        try:
            d = dict(d)
            d["blocks"] = [BlockConfig(**b) for b in d["blocks"]]
            return cls(**d)
        except (TypeError, KeyError) as e:
            raise ConfigError(f"malformed decoder config: {e}") from e


def save_config(cfg: DecoderConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def load_config(path_or_name) -> DecoderConfig:
    """Load a JSON config file, or a preset by name (see :data:`PRESETS`)."""
    if str(path_or_name) in PRESETS:
        return PRESETS[str(path_or_name)]()
    try:
        d = json.loads(Path(path_or_name).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path_or_name}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path_or_name} is not valid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object")
    return DecoderConfig.from_dict(d)


def apply_overrides(cfg: DecoderConfig, overrides: list[str]) -> DecoderConfig:
    """Apply ``key=value`` overrides, dotted paths into the config dict, JSON values.

    ``blocks.<name>.<field>`` addresses a block by name, e.g.
    ``blocks.up_1.conv_kind="dwsep"`` or ``norm_groups=8``.
    """
    d = cfg.to_dict()
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        node = d
        for part in parts[:-1]:
            if isinstance(node, list):
                match = [b for b in node if b.get("name") == part]
                if not match:
                    raise ConfigError(f"override {key!r}: no block named {part!r}")
                node = match[0]
            elif isinstance(node, dict) and part in node:
                node = node[part]
            else:
                raise ConfigError(f"override {key!r}: unknown key {part!r}")
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key {parts[-1]!r}")
        node[parts[-1]] = value
    return DecoderConfig.from_dict(d)


# ---------------------------------------------------------------- presets


def _build(latent_channels, widths, ups, head_up, nmid=2, nup=3, groups=32, dwsep=("mid", "up_0")):
    blocks = [BlockConfig("mid", widths[0], nmid)]
    for i, (w, r) in enumerate(zip(widths[1:], ups)):
        blocks.append(BlockConfig(f"up_{i}", w, nup, r))
    blocks.append(BlockConfig("head", 3, 0, head_up))
    return DecoderConfig(latent_channels, blocks, norm_groups=groups).with_kinds(dwsep)


def ltx_config() -> DecoderConfig:
    """(8, 32, 32) compression, 128 latent channels."""
    return _build(128, [256, 256, 256, 128, 128], [(2, 2), (2, 2), (2, 2), (1, 2)], (1, 2))


def dc_config() -> DecoderConfig:
    """(4, 32, 32) compression, 128 latent channels."""
    return _build(128, [256, 256, 256, 128, 128], [(2, 2), (2, 2), (1, 2), (1, 2)], (1, 2))


def hunyuan_config() -> DecoderConfig:
    """(4, 8, 8) compression, 16 latent channels."""
    return _build(16, [256, 256, 256, 128, 128], [(2, 2), (2, 2), (1, 2), (1, 1)], (1, 1))


def toy_student_config() -> DecoderConfig:
    """Minutes-scale student for the distillation experiments, (4, 8, 8)."""
    return _build(16, [64, 64, 32, 16], [(2, 2), (2, 2), (1, 2)], (1, 1), nmid=1, nup=1, groups=8)


def toy_teacher_config() -> DecoderConfig:
    """All-standard decoder with the student's block structure."""
    return _build(16, [64, 64, 32, 16], [(2, 2), (2, 2), (1, 2)], (1, 1), nmid=1, nup=1, groups=8, dwsep=())


PRESETS = {
    "ltx": ltx_config,
    "dc": dc_config,
    "hunyuan": hunyuan_config,
    "toy-student": toy_student_config,
    "toy-teacher": toy_teacher_config,
}
