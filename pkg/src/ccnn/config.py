"""Run configuration: presets, flat key=value config files, echoing.

Precedence, lowest to highest: dataclass defaults, config file, preset,
explicit CLI flags.  The merged result is echoed to the output
directory so a run is reproducible from its artifacts alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, asdict

from .errors import UsageError

# task presets carry the searched hyperparameters for the in-scope
# tasks; desk variants are small-scale equivalents tuned for CPU runs
PRESETS: dict[str, dict] = {
    "smnist": dict(task="smnist", blocks=4, channels=110, kg_hidden=32,
                   dim=1, omega0=2976.49, dropout=0.1, lr=0.01,
                   weight_decay=1e-6, batch_size=100, epochs=210),
    "pmnist": dict(task="pmnist", blocks=4, channels=110, kg_hidden=32,
                   dim=1, omega0=2985.63, dropout=0.2, lr=0.02,
                   weight_decay=0.0, batch_size=100, epochs=210),
    "smnist-desk": dict(task="smnist-desk", blocks=2, channels=16,
                        kg_hidden=32, dim=1, omega0=25.0, dropout=0.1,
                        lr=0.02, weight_decay=1e-6, batch_size=20,
                        epochs=10, warmup_epochs=1),
    "pmnist-desk": dict(task="pmnist-desk", blocks=2, channels=16,
                        kg_hidden=32, dim=1, omega0=25.0, dropout=0.1,
                        lr=0.02, weight_decay=1e-6, batch_size=20,
                        epochs=10, warmup_epochs=1),
    "digits2d-desk": dict(task="digits2d-desk", blocks=2, channels=16,
                          kg_hidden=32, dim=2, omega0=20.0, dropout=0.1,
                          lr=0.02, weight_decay=1e-6, batch_size=20,
                          epochs=10, warmup_epochs=1),
    "synth-longrange": dict(task="synth-longrange", blocks=2, channels=16,
                            kg_hidden=32, dim=1, omega0=25.0, dropout=0.1,
                            lr=0.02, weight_decay=0.0, batch_size=20,
                            epochs=30, warmup_epochs=2),
    "longrange-local": dict(task="synth-longrange", blocks=2, channels=16,
                            kg_hidden=32, dim=1, omega0=25.0, dropout=0.1,
                            lr=0.02, weight_decay=0.0, batch_size=20,
                            epochs=30, warmup_epochs=2, kernel_points=3),
    # model-size presets (geometry only)
    "ccnn-4-110": dict(blocks=4, channels=110, kg_hidden=32),
    "ccnn-6-380": dict(blocks=6, channels=380, kg_hidden=64),
    "ccnn-2-16": dict(blocks=2, channels=16, kg_hidden=32),
}


@dataclass
class RunConfig:
    # dataset / io
    task: str = "smnist-desk"
    data_dir: str = "data"
    out_dir: str = "runs/run"
    precision: int = 32
    # model
    blocks: int = 2
    channels: int = 16
    dim: int = 1
    kg_hidden: int = 32
    kg_mode: str = "gabor"
    omega0: float = 25.0
    kernel_points: int = 0          # 0 means "as big as the input"
    # training
    lr: float = 0.02
    weight_decay: float = 1e-6
    batch_size: int = 50
    epochs: int = 10
    warmup_epochs: int = 10
    dropout: float = 0.1
    seed: int = 0
    perm_seed: int = 42

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise UsageError(f"precision must be 32 or 64, got {self.precision}")
        if self.dim not in (1, 2):
            raise UsageError(f"dim must be 1 or 2, got {self.dim}")


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise UsageError(f"unknown config key {name!r}")
    kind = _FIELDS[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' starts a comment; keys match RunConfig."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(
                    f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = _coerce(key, val)
    return out


def merge_config(file_values: dict | None = None, preset: str | None = None,
                 flag_values: dict | None = None) -> RunConfig:
    merged = {}
    if file_values:
        merged.update(file_values)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(
                f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    if flag_values:
        merged.update({k: v for k, v in flag_values.items() if v is not None})
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)


def echo_config(cfg: RunConfig, path) -> None:
    """Write every effective field as a flat key = value file."""
    with open(path, "w") as fh:
        fh.write("# effective configuration (every field, no hidden defaults)\n")
        for name, value in asdict(cfg).items():
            fh.write(f"{name} = {value}\n")


def load_echo(path) -> RunConfig:
    return merge_config(file_values=parse_config_file(path))
