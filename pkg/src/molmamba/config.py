"""Training configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from molmamba.errors import ValidationError


@dataclass
class TrainConfig:
    # objective
    tau: float = 0.5
    alpha: float = 10.0
    lambda_d: float = 0.1
    lambda_s: float = 0.1
    lambda_f: float = 20.0
    lambda_mask: float = 0.1
    # optimization
    lr: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    stage1_epochs: int = -1  # -1: half of ``epochs``
    patience: int = 10
    seed: int = 0
    split: str = "8:1:1"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    # architecture
    width: int = 64
    expand: int = 2
    state_size: int = 16
    conv_kernel: int = 4
    gnn_f_layers: int = 6
    gnn_a_layers: int = 6
    mamba_layers: int = 2
    mt_layers: int = 2
    attn_heads: int = 4
    n_rbf: int = 16
    rbf_cutoff: float = 8.0
    frag_table: int = 256
    rank_table: int = 64
    pe_width: int = 8
    # ablation switches
    use_sort: bool = True
    use_pe: bool = True
    use_gssm: bool = True
    # data
    vocab_size: int = 64
    max_pattern_atoms: int = 8
    descriptor_seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def inner(self) -> int:
        return self.expand * self.width

    @property
    def stage1(self) -> int:
        return self.epochs // 2 if self.stage1_epochs < 0 else self.stage1_epochs

    def split_parts(self) -> tuple[int, int, int]:
        try:
            parts = tuple(int(p) for p in self.split.split(":"))
        except ValueError as exc:
            raise ValidationError(f"split {self.split!r} must look like 8:1:1") from exc
        if len(parts) != 3 or sum(parts) != 10 or min(parts) < 0:
            raise ValidationError(f"split {self.split!r} must be three non-negative parts summing to 10")
        return parts

    def validate(self) -> None:
        for name in ("lambda_d", "lambda_s", "lambda_f", "lambda_mask"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("lr must be >= 0, batch_size >= 1 and epochs >= 0")
        if self.stage1 > self.epochs:
            raise ValidationError("stage1_epochs cannot exceed epochs")
        self.split_parts()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)


def load_config(path: str | Path | None, **overrides) -> TrainConfig:
    """Read a flat config file; keys must be :class:`TrainConfig` field names."""
    values: dict = {}
    if path is not None:
        try:
            values = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"config {path}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(values)


def config_from_dict(values: dict) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ValidationError(f"unknown config keys {unknown}")
    typed = {}
    for key, value in values.items():
        kind = fields[key].type
        if isinstance(value, dict):
            raise ValidationError(f"config key {key!r} must be a scalar (the format is flat)")
        try:
            if kind == "bool":
                if not isinstance(value, bool):
                    raise TypeError("expected true/false")
                typed[key] = value
            elif kind == "int":
                if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                    raise TypeError("expected an integer")
                typed[key] = int(value)
            elif kind == "float":
                typed[key] = float(value)
            else:
                typed[key] = str(value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config key {key!r}: {exc}") from exc
    return TrainConfig(**typed)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
