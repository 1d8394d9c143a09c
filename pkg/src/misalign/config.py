"""Run configuration: flat-sectioned key=value files with a strict schema.

The format is INI-style text: ``[section]`` headers over ``key = value``
lines. Unknown sections or keys are rejected outright so configs stay
diff-friendly and hash-stable; the config hash is the SHA-256 of the
canonicalized (sorted) section/key/value listing.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .core import ValidationError

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

DATA_KINDS = ("synthetic", "world", "idx")
METHODS = ("erm", "wt", "wrm-arl", "wrm-lff", "wrm-groupdro", "reg", "wr")
ESTIMATORS = ("exact", "search", "discriminator")
ATTACKS = ("fgsm", "salt_pepper", "single_pixel", "resample")

# section -> key -> (type tag, default); None default means "must be resolved
# elsewhere" (e.g. the learning rate depends on the architecture).
SCHEMA = {
    "data": {
        "kind": ("choice", None, DATA_KINDS),
        "n": ("int", 2000),
        "p": ("int", 40),
        "rho": ("float", 0.9),
        "per_coordinate_rho": ("bool", False),
        "aligned_size": ("int", 2),
        "misaligned_size": ("int", 2),
        "worlds": ("int", 1),
        "world_file": ("str", ""),
        "images": ("str", ""),
        "labels": ("str", ""),
        "val_fraction": ("float", 0.0),
    },
    "model": {
        "arch": ("choice", "logistic", ("logistic", "mlp")),
        "hidden": ("int", 8),
    },
    "train": {
        "method": ("choice", "erm", METHODS),
        "epochs": ("int", 300),
        "learning_rate": ("float", None),
        "batch_size": ("int", 32),
        "reg_balance": ("float", 1.0),
        "early_stop_patience": ("int", 0),
        "side_target": ("choice", "annotation", ("label", "annotation")),
        "side_arch": ("choice", "mlp", ("logistic", "mlp")),
        "side_hidden": ("int", 8),
    },
    "attack": {
        "kind": ("choice", "fgsm", ATTACKS),
        "epsilon": ("float", 0.25),
        "rate": ("float", 0.1),
        "steps": ("int", 20),
        "draws": ("int", 8),
        "mask": ("str", "all"),
        "lo": ("str", ""),
        "hi": ("str", ""),
    },
    "bounds": {
        "delta": ("float", 0.1),
        "estimator": ("choice", "search", ESTIMATORS),
        "class_size": ("int", 1),
        "trials": ("int", 20),
        "target_kind": ("choice", "test", ("test", "attack")),
        "discriminator_arch": ("choice", "mlp", ("logistic", "mlp")),
        "discriminator_hidden": ("int", 32),
        "discriminator_epochs": ("int", 300),
        "discriminator_lr": ("float", 1.0),
        "discriminator_restarts": ("int", 4),
        "discriminator_batch": ("int", 64),
    },
    "output": {
        "directory": ("str", "out"),
        "emit_svg": ("bool", True),
    },
    "seeds": {
        "list": ("str", "0"),
    },
}


def _coerce(section: str, key: str, raw: str):
    tag = SCHEMA[section][key]
    kind = tag[0]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if kind == "choice":
            if raw not in tag[2]:
                raise ValueError(raw)
            return raw
        return raw
    except ValueError:
        raise ValidationError(
            f"bad value for {section}.{key}: {raw!r} (expected {kind}"
            + (f" in {tag[2]}" if kind == "choice" else "")
            + ")"
        ) from None


@dataclass
class RunConfig:
    """Typed view of a parsed config plus its raw key/value listing."""

    values: dict
    raw_items: tuple = field(default_factory=tuple)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seeds(self) -> list[int]:
        raw = self.get("seeds", "list")
        try:
            seeds = [int(s.strip()) for s in raw.split(",") if s.strip() != ""]
        except ValueError:
            raise ValidationError(f"seeds.list must be comma-separated integers, got {raw!r}")
        if not seeds:
            raise ValidationError("seeds.list must name at least one seed")
        return seeds

    @property
    def config_hash(self) -> str:
        """SHA-256 over the canonicalized experiment settings.

        The output directory is excluded: it locates the results and must
        not change their identity (reruns into different directories are
        byte-identical, manifests included).
        """
        canon = "\n".join(
            f"{s}.{k}={v}"
            for s, k, v in sorted(self.raw_items)
            if (s, k) != ("output", "directory")
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def learning_rate(self) -> float:
        lr = self.get("train", "learning_rate")
        if lr is not None:
            return lr
        return 0.1 if self.get("model", "arch") == "logistic" else 0.05

    def mask_indices(self, p: int):
        raw = self.get("attack", "mask")
        if raw == "all":
            return None
        try:
            idx = tuple(sorted(int(s.strip()) for s in raw.split(",") if s.strip() != ""))
        except ValueError:
            raise ValidationError(f"attack.mask must be 'all' or comma-separated indices, got {raw!r}")
        if not idx or idx[0] < 0 or idx[-1] >= p:
            raise ValidationError(f"attack.mask indices out of range for p={p}")
        return idx

    def box(self):
        lo_raw = self.get("attack", "lo")
        hi_raw = self.get("attack", "hi")
        if lo_raw == "" and hi_raw == "":
            return None, None
        if lo_raw == "" or hi_raw == "":
            raise ValidationError("attack.lo and attack.hi must be given together")
        try:
            return float(lo_raw), float(hi_raw)
        except ValueError:
            raise ValidationError("attack.lo / attack.hi must be numbers") from None


def parse_config(path, out_dir: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse and validate a config file; optional CLI overrides applied last."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ValidationError(f"malformed config: {exc}") from None
    values = {}
    raw_items = []
    for section in parser.sections():
        if section not in SCHEMA:
            raise ValidationError(f"unknown config section [{section}]")
    for section, keys in SCHEMA.items():
        values[section] = {}
        present = parser[section] if parser.has_section(section) else {}
        for key in present:
            if key not in keys:
                raise ValidationError(f"unknown config key {section}.{key}")
        for key, tag in keys.items():
            if key in present:
                raw = parser.get(section, key)
                values[section][key] = _coerce(section, key, raw)
                raw_items.append((section, key, raw))
            else:
                values[section][key] = tag[1]
    if values["data"]["kind"] is None:
        raise ValidationError("data.kind is required")
    if out_dir is not None:
        values["output"]["directory"] = str(out_dir)
        raw_items = [item for item in raw_items if (item[0], item[1]) != ("output", "directory")]
        raw_items.append(("output", "directory", str(out_dir)))
    if seed is not None:
        values["seeds"]["list"] = str(int(seed))
        raw_items = [item for item in raw_items if item[0] != "seeds"]
        raw_items.append(("seeds", "list", str(int(seed))))
    cfg = RunConfig(values=values, raw_items=tuple(raw_items))
    _validate_cross(cfg)
    return cfg


def _validate_cross(cfg: RunConfig) -> None:
    kind = cfg.get("data", "kind")
    if kind == "synthetic":
        p = cfg.get("data", "p")
        if p < 4 or p % 4 != 0:
            raise ValidationError("data.p must be a positive multiple of 4")
    if kind == "idx":
        if not cfg.get("data", "images") or not cfg.get("data", "labels"):
            raise ValidationError("idx data needs data.images and data.labels")
    if not 0.0 <= cfg.get("data", "val_fraction") < 1.0:
        raise ValidationError("data.val_fraction must lie in [0, 1)")
    if not 0.0 < cfg.get("bounds", "delta") <= 1.0:
        raise ValidationError("bounds.delta must lie in (0, 1]")
    if cfg.get("data", "worlds") < 1:
        raise ValidationError("data.worlds must be >= 1")
