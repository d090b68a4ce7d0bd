from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Defaults are the desk-scale network (64×64 input, 8×8 patches, 32-dim
    tokens, two transformer layers). The full-scale setting would be
    224×224 input, 16×16 patches and ViT-Base widths.
    """

    image_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    patch_size: int = 8
    embed_dim: int = 32
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0
    cnn_channels: tuple[int, ...] = (8, 16, 32)
    num_queries: int = 4
    dec_dim: int = 32
    iterations: int = 3
    threshold: float = 0.5
    num_classes: int = 2

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.cnn_channels = tuple(int(v) for v in self.cnn_channels)
        h, w = self.image_size
        p = self.patch_size
        checks = [
            (len(self.image_size) == 2 and h > 0 and w > 0, "image_size must be two positive ints"),
            (p > 0 and h % p == 0 and w % p == 0, f"image size {h}x{w} not divisible by patch {p}"),
            (self.embed_dim % max(self.num_heads, 1) == 0 and self.num_heads > 0,
             f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"),
            (self.num_layers >= 0, "num_layers must be >= 0"),
            (self.mlp_ratio > 0, "mlp_ratio must be positive"),
            (len(self.cnn_channels) >= 1 and min(self.cnn_channels) > 0, "cnn_channels must be positive"),
            (h % (2 ** len(self.cnn_channels)) == 0 and w % (2 ** len(self.cnn_channels)) == 0,
             f"image size {h}x{w} not divisible by total CNN stride {2 ** len(self.cnn_channels)}"),
            (self.num_queries >= 1, "num_queries must be >= 1"),
            (self.dec_dim >= 1, "dec_dim must be >= 1"),
            (self.iterations >= 1, "iterations must be >= 1"),
            (0.0 < self.threshold < 1.0, "threshold must lie in (0, 1)"),
            (self.num_classes >= 2, "num_classes must be >= 2"),
            (self.in_channels >= 1, "in_channels must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def grid(self) -> tuple[int, int]:
        """Transformer token grid (H/P, W/P)."""
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["cnn_channels"] = list(self.cnn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model keys: {', '.join(unknown)}")
        return cls(**d)


DESK_SCALE = ModelConfig()
