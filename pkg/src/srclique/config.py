"""Model/training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


FEN_KINDS = ("clique", "residual", "dense")
UP_KINDS = ("clique", "clique_nojoint", "deconv", "subpixel")


@dataclass
class ModelConfig:
    # pyramid levels; magnification is 2**J
    J: int = 1
    n_blocks: int = 15
    layers: int = 4
    growth: int = 32
    # per-level clique up-sampling widths; cu_c[0] = 0 means n_blocks*layers*growth
    cu_c: list[int] = field(default_factory=lambda: [0])
    cu_p: list[int] = field(default_factory=lambda: [480])
    n_ll: list[int] = field(default_factory=lambda: [2])
    n_hl: list[int] = field(default_factory=lambda: [3])
    n_lh: list[int] = field(default_factory=lambda: [3])
    n_hh: list[int] = field(default_factory=lambda: [4])
    mode: int = 4
    ll_scale: float = 4.0
    fen_kind: str = "clique"
    up_kind: str = "clique"
    init: str = "kaiming"
    # training
    batch: int = 16
    patch: int = 32
    base_lr: float = 1e-5
    lr_period: int = 200
    epochs: int = 500
    max_steps: int = 0
    seed: int = 0
    val_fraction: float = 0.1
    checkpoint_every: int = 0
    deterministic: bool = True
    # parameter precision; float32 roughly halves training time
    dtype: str = "float64"
    # per-channel training means (0..1 units) used by modes 3 and 4; empty = not yet computed
    means: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    @property
    def magnification(self) -> int:
        return 2**self.J

    @property
    def fen_channels(self) -> int:
        return self.n_blocks * self.layers * self.growth

    def level_c(self, j: int) -> int:
        """Input channels of the level-j (1-based) up-sampler."""
        c = self.cu_c[j - 1]
        if c:
            return c
        return self.fen_channels if j == 1 else self.cu_p[j - 2]

    def counts(self, j: int):
        from .irn import BandCounts

        return BandCounts(self.n_ll[j - 1], self.n_hl[j - 1], self.n_lh[j - 1], self.n_hh[j - 1])

    def validate(self) -> None:
        if self.J < 1:
            raise ConfigError(f"J must be >= 1, got {self.J}")
        for name in ("n_blocks", "layers", "growth", "batch", "patch", "lr_period"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("cu_c", "cu_p", "n_ll", "n_hl", "n_lh", "n_hh"):
            values = getattr(self, name)
            if len(values) == 1 and self.J > 1:
                values = values * self.J
                setattr(self, name, values)
            if len(values) != self.J:
                raise ConfigError(f"{name} needs {self.J} per-level values, got {len(values)}")
        for j, (c, p) in enumerate(zip(self.cu_c, self.cu_p), start=1):
            if c < 0 or p < 1:
                raise ConfigError(f"level {j}: need c >= 0 and p >= 1, got c={c}, p={p}")
        for name in ("n_ll", "n_hl", "n_lh", "n_hh"):
            if min(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.mode not in (1, 2, 3, 4):
            raise ConfigError(f"mode must be 1..4, got {self.mode}")
        if not self.ll_scale > 0:
            raise ConfigError("ll_scale must be positive")
        if self.fen_kind not in FEN_KINDS:
            raise ConfigError(f"fen_kind must be one of {FEN_KINDS}, got {self.fen_kind!r}")
        if self.up_kind not in UP_KINDS:
            raise ConfigError(f"up_kind must be one of {UP_KINDS}, got {self.up_kind!r}")
        if self.init not in ("kaiming", "zeros"):
            raise ConfigError(f"init must be kaiming or zeros, got {self.init!r}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.means and len(self.means) != 3:
            raise ConfigError(f"means needs 3 values, got {len(self.means)}")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def table1_x2() -> ModelConfig:
    return ModelConfig(J=1, n_blocks=15, layers=4, growth=32, cu_c=[1920], cu_p=[480])


def table1_x4() -> ModelConfig:
    return ModelConfig(
        J=2, n_blocks=15, layers=4, growth=32,
        cu_c=[2400, 600], cu_p=[600, 300],
        n_ll=[2, 2], n_hl=[3, 3], n_lh=[3, 3], n_hh=[4, 4],
    )


def tiny(**overrides) -> ModelConfig:
    """Desk-scale model: n_B=2, l=3, g=8, p=16, one residual block per band."""
    base = dict(
        J=1, n_blocks=2, layers=3, growth=8, cu_c=[0], cu_p=[16],
        n_ll=[1], n_hl=[1], n_lh=[1], n_hh=[1],
        batch=8, patch=32, base_lr=1e-3, epochs=10**6, max_steps=2000,
    )
    base.update(overrides)
    return ModelConfig(**base)


def gradcheck_tiny(**overrides) -> ModelConfig:
    base = dict(
        J=1, n_blocks=2, layers=2, growth=2, cu_c=[0], cu_p=[4],
        n_ll=[1], n_hl=[1], n_lh=[1], n_hh=[1],
    )
    base.update(overrides)
    return ModelConfig(**base)


def ablation_toy(**overrides) -> ModelConfig:
    """Small enough that the six-cell ablation matrix runs in minutes."""
    base = dict(
        J=1, n_blocks=2, layers=2, growth=8, cu_c=[0], cu_p=[16],
        n_ll=[1], n_hl=[1], n_lh=[1], n_hh=[1],
        batch=8, patch=16, base_lr=1e-3, epochs=10**6, max_steps=150, dtype="float32",
    )
    base.update(overrides)
    return ModelConfig(**base)


PRESETS = {
    "table1_x2": table1_x2,
    "table1_x4": table1_x4,
    "tiny": tiny,
    "gradcheck_tiny": gradcheck_tiny,
    "ablation_toy": ablation_toy,
}

_FIELDS = {f.name: f for f in fields(ModelConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "list[int]":
            return [int(v) for v in raw.split(",") if v.strip()]
        if kind == "list[float]":
            return [float(v) for v in raw.split(",") if v.strip()]
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_assignments(lines, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            values[key] = raw
            continue
        try:
            values[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, overrides=()) -> ModelConfig:
    """Read a config file, then apply ``key=value`` overrides in order.

    A ``preset = name`` line selects the starting values (default: tiny).
    """
    values: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--set"))
    preset = values.pop("preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    try:
        return PRESETS[preset](**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for f in fields(ModelConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, list):
            value = ",".join(repr(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
