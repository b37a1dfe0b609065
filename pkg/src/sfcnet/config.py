"""Network configuration: one dataclass, two built-in profiles, and a
plain ``key = value`` text format so experiments are reproducible from a
single file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError, InputError

DEFAULT_SEED = 7

PROFILE_NAMES = ("micro", "paper")


@dataclass
class NetworkConfig:
    # sampling geometry
    n_input_points: int = 1024
    n_regions: int = 256  # centers picked by FPS
    n_skeleton: int = 64  # curve-sampled structure points
    radius: float = 0.2  # ball query radius in normalized units
    group_size: int = 32  # max members per ball query group
    morton_depth: int = 10
    use_normals: bool = False

    # layer widths; the embedding feature width is embed_mlp[-1] + 3
    embed_mlp: tuple = (64, 128, 189)
    fusion_g: tuple = (192, 192)  # 1x1 conv stack; last entry must equal feature_dim
    channel_ratio: int = 4  # channel-attention bottleneck divisor
    spatial_mlp: tuple = (195,)
    lift_mlp: tuple = (256, 512, 1024)  # last entry is the global feature width
    head_mlp: tuple = (512,)  # hidden widths of the classification head
    seg_mlp: tuple = (256, 128)  # hidden widths of the per-point segmentation head
    dropout: float = 0.4

    # tasks
    n_classes: int = 40
    n_part_classes: int = 50

    # ablation toggles (all on = full pipeline)
    use_zs: bool = True  # curve-guided skeleton sampling
    use_cs: bool = True  # correlation fusion
    use_am: bool = True  # channel-spatial attention

    # optimizer
    lr: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 20
    weight_decay: float = 1e-4
    batch_size: int = 24
    epochs: int = 200

    # batchnorm behavior (normalizes over the points of one cloud)
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    @property
    def feature_dim(self):
        return self.embed_mlp[-1] + 3

    @property
    def fused_dim(self):
        return self.feature_dim + 3

    @property
    def global_dim(self):
        return self.lift_mlp[-1]

    def validate(self):
        problems = []
        if not self.n_skeleton <= self.n_regions <= self.n_input_points:
            problems.append(
                f"need n_skeleton <= n_regions <= n_input_points, got "
                f"{self.n_skeleton} / {self.n_regions} / {self.n_input_points}"
            )
        for name in ("n_input_points", "n_regions", "n_skeleton", "group_size",
                     "n_classes", "n_part_classes", "channel_ratio", "batch_size",
                     "epochs", "lr_decay_every"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.radius <= 0:
            problems.append("radius must be positive")
        if not 1 <= self.morton_depth <= 20:
            problems.append("morton_depth must be in [1, 20]")
        if self.lr <= 0:
            problems.append("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            problems.append("lr_decay must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            problems.append("dropout must be in [0, 1)")
        for name in ("embed_mlp", "fusion_g", "spatial_mlp", "lift_mlp"):
            widths = getattr(self, name)
            if not widths or any(w < 1 for w in widths):
                problems.append(f"{name} must be a non-empty tuple of positive widths")
        if self.fusion_g and self.fusion_g[-1] != self.feature_dim:
            problems.append(
                f"fusion_g must end at the feature width {self.feature_dim}, "
                f"got {self.fusion_g[-1]}"
            )
        if problems:
            raise ConfigError("; ".join(problems))
        return self


def micro_profile() -> NetworkConfig:
    """Tiny profile: full pipeline in milliseconds, used for gradient checks."""
    return NetworkConfig(
        n_input_points=16,
        n_regions=8,
        n_skeleton=4,
        radius=0.45,
        group_size=8,
        embed_mlp=(8, 13),
        fusion_g=(16, 16),
        channel_ratio=4,
        spatial_mlp=(19,),
        lift_mlp=(24, 32),
        head_mlp=(16,),
        seg_mlp=(16,),
        dropout=0.0,
        n_classes=2,
        n_part_classes=2,
        batch_size=8,
        epochs=200,
    )


def paper_profile() -> NetworkConfig:
    """Full-scale profile with the published hyperparameters."""
    return NetworkConfig()


def profile(name: str) -> NetworkConfig:
    if name == "micro":
        return micro_profile()
    if name == "paper":
        return paper_profile()
    raise InputError(f"unknown profile {name!r}; choose from {PROFILE_NAMES}")


# ---------------------------------------------------------------------------
# text format: "key = value" per line, '#' comments.
# ints/floats/bools as literals, tuples as comma-separated ints.


def _parse_value(key, text, kind):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(p.strip()) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {text!r} as {kind.__name__}") from None
    raise ConfigError(f"config key {key}: unsupported type {kind}")


def read_config(path, base: NetworkConfig | None = None) -> NetworkConfig:
    """Load a config file; keys not present fall back to ``base`` (default profile)."""
    cfg = base if base is not None else NetworkConfig()
    kinds = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    overrides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            overrides[key] = _parse_value(key, value, kinds[key])
    return replace(cfg, **overrides).validate()


def write_config(cfg: NetworkConfig, path):
    with open(path, "w") as f:
        for fld in fields(cfg):
            value = getattr(cfg, fld.name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            f.write(f"{fld.name} = {value}\n")
