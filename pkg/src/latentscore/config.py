"""Run configuration: INI file + flag overrides -> typed dataclasses.

Every key has a default; unknown sections or keys are rejected so a
config file can never silently misspell a knob. The effective (post-
override) configuration hashes to a single hex id that is recorded in
every output an operator might want to reproduce.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .codec import CodecSpec
from .errors import ConfigError
from .model import ModelConfig, arch_fingerprint
from .refiner import FlowConfig
from .trainer import TrainConfig

__all__ = ["RunConfig", "DEFAULTS", "PRESETS", "load_config", "config_hash"]


DEFAULTS: dict[str, dict] = {
    "model": {
        "dim": 32,
        "bottleneck_dim": 16,
        "heads": 4,
        "semantic_layers": 2,
        "residual_layers": 1,
        "history_layers": 1,
        "denoiser_layers": 4,
        "vocab": 64,
        "patch_len": 4,
        "channels": 8,
        "video_dim": 12,
        "fsq_step": 0.25,
        "fsq_levels": 4,
        "null_len": 4,
        "dtype": "float64",
    },
    "codec": {
        "frame_size": 8,
        "channels": 8,
        "seed": 1234,
    },
    "flow": {
        "euler_steps": 20,
        "cfg_scale": 2.0,
        "cond_drop_prob": 0.1,
    },
    "train": {
        "stage": 1,
        "steps": 500,
        "batch_size": 4,
        "peak_lr": 3e-3,
        "warmup_frac": 0.10,
        "weight_decay": 0.01,
        "seed": 0,
        "eval_every": 50,
        "clip_norm": 1.0,
    },
    "data": {
        "text_len": 4,
        "frames": 8,
        "video_len": 4,
    },
}

# Published full-scale settings, kept as named presets for reference; they
# are far beyond what this harness is meant to run.
PRESETS: dict[str, dict[str, dict]] = {
    "desk": {},
    "full-pretrain": {
        "model": {
            "dim": 1024,
            "heads": 16,
            "semantic_layers": 24,
            "residual_layers": 8,
            "denoiser_layers": 8,
            "bottleneck_dim": 256,
        },
        "train": {"steps": 120_000, "batch_size": 8, "peak_lr": 1e-3, "stage": 1},
    },
    "full-finetune": {
        "model": {
            "dim": 1024,
            "heads": 16,
            "semantic_layers": 24,
            "residual_layers": 8,
            "denoiser_layers": 8,
            "bottleneck_dim": 256,
        },
        "train": {"batch_size": 8, "peak_lr": 1e-4, "stage": 2},
    },
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    codec: CodecSpec
    flow: FlowConfig
    train: TrainConfig
    dtype: str = "float64"
    text_len: int = 4
    frames: int = 8
    video_len: int = 4
    raw: tuple = ()  # canonical (section, key, value) triples

    def config_hash(self) -> str:
        return config_hash(dict_from_raw(self.raw))

    def arch_hash(self) -> str:
        return arch_fingerprint(self.model, self.codec)


def dict_from_raw(raw) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for section, key, value in raw:
        out.setdefault(section, {})[key] = value
    return out


def config_hash(sections: dict[str, dict]) -> str:
    lines = [
        f"{section}.{key}={sections[section][key]!r}"
        for section in sorted(sections)
        for key in sorted(sections[section])
    ]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def _coerce(section: str, key: str, value, template) -> object:
    if isinstance(template, bool):  # not used today, kept for safety
        return str(value).lower() in ("1", "true", "yes")
    try:
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {value!r}: {exc}") from exc
    return str(value)


def load_config(
    path=None,
    preset: str = "desk",
    overrides: dict[tuple[str, str], object] | None = None,
) -> RunConfig:
    """Layering order: defaults < preset < file < explicit overrides."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    for s, kv in PRESETS[preset].items():
        sections[s].update(kv)

    if path is not None:
        parser = configparser.ConfigParser()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in sections:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                sections[section][key] = _coerce(section, key, value, DEFAULTS[section][key])

    for (section, key), value in (overrides or {}).items():
        if section not in sections or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config override {section}.{key}")
        sections[section][key] = _coerce(section, key, value, DEFAULTS[section][key])

    if sections["model"]["dtype"] not in ("float32", "float64"):
        raise ConfigError(f"model.dtype must be float32 or float64, got {sections['model']['dtype']}")
    if sections["model"]["channels"] != sections["codec"]["channels"]:
        raise ConfigError(
            f"model.channels ({sections['model']['channels']}) must match "
            f"codec.channels ({sections['codec']['channels']})"
        )

    model_kwargs = {k: v for k, v in sections["model"].items() if k != "dtype"}
    model = ModelConfig(**model_kwargs)
    codec = CodecSpec(**sections["codec"])
    flow = FlowConfig(**sections["flow"])
    train = TrainConfig(**sections["train"])
    raw = tuple(
        (section, key, sections[section][key])
        for section in sorted(sections)
        for key in sorted(sections[section])
    )
    return RunConfig(
        model=model,
        codec=codec,
        flow=flow,
        train=train,
        dtype=sections["model"]["dtype"],
        text_len=sections["data"]["text_len"],
        frames=sections["data"]["frames"],
        video_len=sections["data"]["video_len"],
        raw=raw,
    )
