"""Run configuration: file + flag merging, and reproducibility manifests.

Config files are flat ``key = value`` lines under ``[section]`` headers
(standard INI syntax).  Command-line flags override file values, which
override the built-in defaults; defaults follow the reference
hyper-parameters (lr 1e-4, alpha 0.8, beta 0.2, margin 0.2, population
100, 1500 trials, p 0.3, occlusion window 60).
"""

from __future__ import annotations

import configparser
import hashlib
from pathlib import Path

DEFAULTS: dict[str, dict] = {
    "data": {
        "n": 200,
        "seed": 0,
        "setting": "biased",
        "max_elems": 8,
        "train_frac": 0.8,
        "val_frac": 0.1,
    },
    "model": {
        "input_size": 256,
        "norm": "group",
        "input_mode": "both",
    },
    "train": {
        "epochs": 10,
        "batch_size": 8,
        "lr": 1e-4,
        "beta1": 0.5,
        "beta2": 0.99,
        "weight_decay": 0.005,
        "lr_halve_every": 5,
        "alpha": 0.8,
        "beta": 0.2,
        "margin_mode": "hard",
        "margin": 0.2,
        "sim_mode": "deviance",
        "eps": 1e-8,
    },
    "ga": {
        "population_size": 100,
        "n_trials": 1500,
        "p": 0.3,
        "mutation_sigma": 0.05,
        "mutation_rate": 0.2,
        "elitism": 0.5,
    },
    "eval": {
        "window": 60,
        "stride": 10,
    },
}


class RunConfig:
    """Layered settings: defaults <- config file <- explicit overrides."""

    def __init__(self):
        self.values = {s: dict(kv) for s, kv in DEFAULTS.items()}

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser()
            read = parser.read(path)
            if not read:
                raise FileNotFoundError(f"config file not found: {path}")
            for section in parser.sections():
                if section not in cfg.values:
                    raise ValueError(f"unknown config section [{section}]")
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        return cfg

    def set(self, section: str, key: str, value) -> None:
        if section not in self.values or key not in self.values[section]:
            raise ValueError(f"unknown config setting {section}.{key}")
        default = DEFAULTS[section][key]
        kind = type(default)
        if isinstance(value, str) and not isinstance(default, str):
            value = kind(value)
        self.values[section][key] = kind(value)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def canonical(self) -> str:
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                lines.append(f"{section}.{key}={self.values[section][key]!r}")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


def write_manifest(directory, command: str, seed: int, config: RunConfig, outputs: list[str]) -> None:
    """Plain-text reproducibility record next to a command's outputs."""
    import numpy

    from . import __version__

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command = {command}",
        f"seed = {seed}",
        f"config_hash = {config.digest()}",
        f"designfit_version = {__version__}",
        f"numpy_version = {numpy.__version__}",
        f"outputs = {' '.join(outputs)}",
    ]
    (directory / "run.manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
