"""Run configuration: a flat key=value file with command-line overrides.

Precedence is defaults < file < flags. Unknown keys are rejected. The fully
resolved configuration (task defaults like k filled in) is persisted into
every run directory so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .layers import AblationSwitches
from .model import IbtConfig


@dataclass
class RunConfig:
    # task + data
    task: str = "classification"        # classification | part_segmentation
    dataset: str = "synthetic"          # synthetic | directory
    data_dir: str = ""
    families: str = "sphere,cube,cylinder,torus"
    train_per_class: int = 8
    test_per_class: int = 4
    num_points: int = 1024
    noise: float = 0.02
    normalize: bool = True
    # model
    embed_dim: int = 128
    edge_dim: int = 0                   # 0 = embed_dim
    num_ibt_layers: int = 3
    k: int = 0                          # 0 = task default (40 cls / 80 seg)
    num_classes: int = 0                # 0 = inferred from the dataset
    num_parts: int = 0
    num_categories: int = 0
    category_embed_dim: int = 64
    global_dim: int = 1024
    head_dims: str = "512,256"
    seg_dims: str = "512,256,128"
    dropout: float = 0.5
    locality_stream: str = "gate_only"
    afp_on_fused_edges: bool = True
    include_embed_in_seg: bool = False
    use_position_encoding: bool = True
    use_pooling: bool = True
    use_transformer: bool = True
    use_max_pool: bool = True
    use_attention_pool: bool = True
    use_channel_gate_w: bool = True
    use_position_embedding: bool = True
    # training
    epochs: int = 100
    batch_size: int = 8
    lr: float = 0.1                     # full-scale default; desk presets use 0.01
    momentum: float = 0.9
    early_stop_acc: float = 0.0
    seed: int = 0
    # output
    out_dir: str = "runs"
    run_name: str = ""                  # empty = timestamped

    def validate(self) -> None:
        if self.task not in ("classification", "part_segmentation"):
            raise ConfigError(f"unknown task '{self.task}'")
        if self.dataset not in ("synthetic", "directory"):
            raise ConfigError(f"unknown dataset kind '{self.dataset}'")
        if self.dataset == "directory" and not self.data_dir:
            raise ConfigError("dataset=directory needs data_dir")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def resolved(self) -> "RunConfig":
        """Fill task-dependent defaults (k, class counts for synthetic data)."""
        cfg = replace(self)
        if cfg.k == 0:
            cfg.k = 40 if cfg.task == "classification" else 80
        if cfg.edge_dim == 0:
            cfg.edge_dim = cfg.embed_dim
        if cfg.dataset == "synthetic":
            n_classes = len(cfg.family_list())
            if cfg.num_classes == 0:
                cfg.num_classes = n_classes
            if cfg.task == "part_segmentation":
                from .data import part_ranges_for
                ranges = part_ranges_for(cfg.family_list())
                if cfg.num_categories == 0:
                    cfg.num_categories = n_classes
                if cfg.num_parts == 0:
                    cfg.num_parts = max(r.stop for r in ranges.values())
        cfg.validate()
        return cfg

    def family_list(self) -> list[str]:
        return [f.strip() for f in self.families.split(",") if f.strip()]

    def switches(self) -> AblationSwitches:
        return AblationSwitches(
            use_position_encoding=self.use_position_encoding,
            use_pooling=self.use_pooling,
            use_transformer=self.use_transformer,
            use_max_pool=self.use_max_pool,
            use_attention_pool=self.use_attention_pool,
            use_channel_gate_w=self.use_channel_gate_w,
            use_position_embedding=self.use_position_embedding)

    def model_config(self) -> IbtConfig:
        return IbtConfig(
            embed_dim=self.embed_dim,
            edge_dim=self.edge_dim or None,
            num_ibt_layers=self.num_ibt_layers,
            k=self.k,
            num_classes=self.num_classes,
            num_parts=self.num_parts,
            num_categories=self.num_categories,
            category_embed_dim=self.category_embed_dim,
            global_dim=self.global_dim,
            head_dims=_int_tuple(self.head_dims, "head_dims"),
            seg_dims=_int_tuple(self.seg_dims, "seg_dims"),
            dropout=self.dropout,
            switches=self.switches(),
            locality_stream=self.locality_stream,
            afp_on_fused_edges=self.afp_on_fused_edges,
            include_embed_in_seg=self.include_embed_in_seg)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}"
                 for f in fields(RunConfig)]
        return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _int_tuple(text: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got '{text}'")


def coerce(key: str, raw: str) -> object:
    """Convert a raw string to the declared type of the RunConfig field."""
    spec = {f.name: f.type for f in fields(RunConfig)}
    if key not in spec:
        raise ConfigError(f"unknown config key '{key}'")
    kind = spec[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected true/false, got '{raw}'")
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected integer, got '{raw}'")
    if kind == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected number, got '{raw}'")
    return raw


def parse_config_text(text: str) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key = value, got '{stripped}'")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = coerce(key.strip(), raw)
    return values


def load_config(path: str | Path | None, overrides: dict[str, object] | None = None) -> RunConfig:
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_config_text(p.read_text()))
    if overrides:
        for key in overrides:
            if key not in {f.name for f in fields(RunConfig)}:
                raise ConfigError(f"unknown config key '{key}'")
        values.update(overrides)
    return RunConfig(**values)
