"""Run configuration: one INI-style key/value file for every subcommand.

Unknown sections or keys are rejected outright so that typos never pass
silently; each command writes the resolved values it ran with into its
output directory as `config_snapshot.txt`.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError

CONFIG_VERSION = 1

_REQUIRED = object()

# section -> key -> (type tag, default); _REQUIRED means the command that
# consumes the key fails when it is absent.
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "version": ("int", _REQUIRED),
        "workers": ("int", 1),
    },
    "synth": {
        "out": ("str", _REQUIRED),
        "seed": ("int", 0),
        "preset": ("str", "desk"),
        "size": ("int", 64),
        "train_frames": ("int", 200),
        "val_frames": ("int", 20),
        "test_target_frames": ("int", 10),
        "test_speckle_frames": ("int", 10),
        "sequence_frames": ("int", 4),
    },
    "train": {
        "data": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "epochs": ("int", 20),
        "batch_size": ("int", 10),
        "lr_initial": ("float", 2e-4),
        "lr_decay_start_epoch": ("int", 10),
        "lambda1": ("float", 10.0),
        "lambda2": ("float", 5.0),
        "lambda3": ("float", 5.0),
        "validation_fraction": ("float", 0.10),
        "seed": ("int", 0),
        "checkpoint_every": ("int", 10),
        "base_channels": ("int", 8),
        "n_modules": ("int", 2),
        "disc_base_channels": ("int", 8),
    },
    "translate": {
        "weights": ("str", _REQUIRED),
        "input": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
    },
    "eval": {
        "frames": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "truth": ("str", ""),
        "rois": ("str", ""),
        "reference": ("str", ""),
        "roi_size_mm": ("float", 4.0),
    },
    "track": {
        "frames": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "reference": ("str", ""),
        "mask": ("str", ""),
        "kernel_axial": ("int", 32),
        "kernel_lateral": ("int", 8),
        "search_axial": ("int", 8),
        "search_lateral": ("int", 4),
        "spacing_axial": ("int", 0),  # 0: 25% of kernel
        "spacing_lateral": ("int", 0),
        "subsample_fit": ("bool", True),
    },
    "ablate": {
        "data": ("str", _REQUIRED),
        "out": ("str", _REQUIRED),
        "epochs": ("int", 4),
        "batch_size": ("int", 10),
        "lr_initial": ("float", 2e-4),
        "lr_decay_start_epoch": ("int", 2),
        "validation_fraction": ("float", 0.10),
        "seed": ("int", 0),
        "checkpoint_every": ("int", 100),
        "base_channels": ("int", 8),
        "n_modules": ("int", 2),
        "disc_base_channels": ("int", 8),
        "roi_size_mm": ("float", 4.0),
    },
    "report": {
        "run": ("str", _REQUIRED),
        "plots": ("bool", False),
    },
}

_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": lambda s: {"true": True, "1": True, "yes": True,
                       "false": False, "0": False, "no": False}[s.strip().lower()],
}


class RunConfig:
    """Typed view over a parsed configuration file."""

    def __init__(self, values: dict[str, dict[str, object]], path: Path):
        self.values = values
        self.path = path

    def get(self, section: str, key: str):
        value = self.values[section][key]
        if value is _REQUIRED:
            raise ConfigError(f"{self.path}: missing required key [{section}] {key}")
        return value

    def section(self, name: str) -> dict[str, object]:
        return {k: self.get(name, k) for k in self.values[name]}

    def snapshot(self, sections, out_path) -> None:
        lines = [f"config_file = {self.path}"]
        for section in ("run", *sections):
            for key, raw in self.values[section].items():
                value = "<unset>" if raw is _REQUIRED else raw
                lines.append(f"{section}.{key} = {value}")
        Path(out_path).write_text("\n".join(lines) + "\n")


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None

    values: dict[str, dict[str, object]] = {
        section: dict.fromkeys(keys, _REQUIRED) for section, keys in SCHEMA.items()
    }
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if default is not _REQUIRED:
                values[section][key] = default

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            type_tag = SCHEMA[section][key][0]
            try:
                values[section][key] = _PARSERS[type_tag](raw)
            except (ValueError, KeyError):
                raise ConfigError(
                    f"{path}: [{section}] {key} = {raw!r} is not a valid {type_tag}"
                ) from None

    version = values["run"]["version"]
    if version is _REQUIRED:
        raise ConfigError(f"{path}: [run] version is required")
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version}")
    return RunConfig(values, path)
