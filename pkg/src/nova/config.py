"""Run configuration: a plain-text key=value file plus command-line
overrides, merged over desk-scale defaults.

Lines look like ``train.lambda = 0.02``; '#' starts a comment. Unknown keys
are rejected. Every effective value is echoed to a resolved-config file in
the output directory, and that file re-parses to the identical
configuration (round-trip closure).

Desk-scale defaults (tiny encoder, 20 epochs, batch 64) keep runs
CPU-feasible; the full-scale recipe (base encoder, 100 epochs, batch 256,
peak learning rate 1e-4) is reachable by overriding the same keys.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .model import ViTConfig
from .multicrop import AugmentConfig
from .sigreg import CFGridSpec, SigregConfig
from .synthdata import DEFAULT_CLASSES, PATTERNS, SyntheticSpec
from .trainer import ModelSpec, TrainConfig


class ConfigError(ValueError):
    pass


# key -> (default, type); bool values parse from {true,false,1,0}
DEFAULTS = {
    "data": {
        "manifest": ("", str),
        "classes": ("blob,grating,ring,wedge", str),
        "samples_per_class": (128, int),
        "image_size": (256, int),
        "noise_sigma": (8.0, float),
        "co_occur_prob": (0.2, float),
        "eval_fraction": (0.1, float),
        "seed": (0, int),
    },
    "model": {
        "vit": ("tiny", str),
        "patch_size": (32, int),
        "predictor_hidden": (256, int),
        "embed_dim": (64, int),
        "text_dim": (128, int),
        "text_seed": (0, int),
    },
    "train": {
        "objective": ("nova", str),
        "epochs": (20, int),
        "batch_size": (64, int),
        "lr_max": (2e-3, float),
        "lr_min": (2e-4, float),
        "warmup_epochs": (1, int),
        "clip_norm": (1.0, float),
        "lambda": (0.02, float),
        "weight_decay": (0.05, float),
        "beta1": (0.9, float),
        "beta2": (0.999, float),
        "eps": (1e-8, float),
        "seed": (0, int),
        "eval_every": (1, int),
        "temperature": (0.0, float),  # 0 = per-objective default
        "bias": (-10.0, float),
    },
    "sigreg": {
        "m": (64, int),
        "mode": ("closed_form", str),
        "grid_points": (257, int),
        "grid_tmax": (8.0, float),
        "resample_each_step": (True, bool),
        "seed": (-1, int),  # -1 = follow train.seed
    },
    "eval": {
        "split": ("eval", str),
        "batch_size": (64, int),
    },
}

_OBJECTIVE_TEMPERATURE = {"nova": 1.0, "infonce": 0.07, "siglip": 10.0}


def _parse_value(section: str, key: str, raw: str):
    _, kind = DEFAULTS[section][key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc


class RunConfig:
    """Resolved configuration: nested dict with typed values."""

    def __init__(self, values: dict):
        self.values = values

    def get(self, section: str, key: str):
        return self.values[section][key]

    def lines(self) -> list:
        out = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                value = self.values[section][key]
                if isinstance(value, bool):
                    text = "true" if value else "false"
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value)
                out.append(f"{section}.{key} = {text}")
        return out

    def write_resolved(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    def config_hash(self) -> int:
        digest = hashlib.blake2b("\n".join(self.lines()).encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    # -- typed views ---------------------------------------------------------

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        try:
            return TrainConfig(
                epochs=t["epochs"],
                batch_size=t["batch_size"],
                lr_max=t["lr_max"],
                lr_min=t["lr_min"],
                warmup_epochs=t["warmup_epochs"],
                clip_norm=t["clip_norm"],
                lam=t["lambda"],
                seed=t["seed"],
                objective=t["objective"],
                weight_decay=t["weight_decay"],
                beta1=t["beta1"],
                beta2=t["beta2"],
                eps=t["eps"],
                eval_every=t["eval_every"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_spec(self) -> ModelSpec:
        m = self.values["model"]
        t = self.values["train"]
        temperature = t["temperature"]
        if temperature == 0.0:
            temperature = _OBJECTIVE_TEMPERATURE[t["objective"]]
        try:
            vit = ViTConfig.preset(m["vit"], patch_size=m["patch_size"])
            return ModelSpec(
                vit=vit,
                predictor_hidden=m["predictor_hidden"],
                out_dim=m["embed_dim"],
                text_dim=m["text_dim"],
                text_seed=m["text_seed"],
                temperature=temperature,
                bias=t["bias"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(seed=self.values["train"]["seed"])

    def sigreg_config(self) -> SigregConfig:
        s = self.values["sigreg"]
        seed = s["seed"] if s["seed"] >= 0 else self.values["train"]["seed"]
        grid = None
        if s["mode"] == "grid":
            grid = CFGridSpec.gauss_legendre(n_points=s["grid_points"], t_max=s["grid_tmax"])
        try:
            return SigregConfig(
                m=s["m"], mode=s["mode"], grid=grid,
                resample_each_step=s["resample_each_step"], seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.values["data"]
        names = [c.strip() for c in d["classes"].split(",") if c.strip()]
        unknown = [n for n in names if n not in PATTERNS]
        if unknown:
            raise ConfigError(
                f"data.classes must name patterns from {sorted(PATTERNS)}, got {unknown}"
            )
        try:
            return SyntheticSpec(
                classes=tuple((n, n) for n in names),
                samples_per_class=d["samples_per_class"],
                image_size=d["image_size"],
                noise_sigma=d["noise_sigma"],
                co_occur_prob=d["co_occur_prob"],
                seed=d["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _apply(values: dict, dotted: str, raw: str) -> None:
    key = dotted.strip()
    if key.count(".") != 1:
        raise ConfigError(f"keys must look like section.key, got {key!r}")
    section, name = key.split(".")
    if section not in DEFAULTS or name not in DEFAULTS[section]:
        raise ConfigError(f"unknown configuration key {key!r}")
    values[section][name] = _parse_value(section, name, raw)


def load_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Merge defaults <- config file <- --set overrides <- --seed."""
    values = {sec: {k: default for k, (default, _) in keys.items()} for sec, keys in DEFAULTS.items()}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            dotted, raw = line.split("=", 1)
            _apply(values, dotted, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        _apply(values, dotted, raw)
    if seed is not None:
        values["train"]["seed"] = int(seed)
    return RunConfig(values)
