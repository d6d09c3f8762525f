"""Flat key=value run configuration with a content digest.

Files are UTF-8 ``key = value`` lines with '#' comments. Unknown keys are
rejected. The digest covers every key except ``out`` (so moving a run's
output directory does not change its identity) and is independent of key
order in the file.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields, replace

from .errors import FormatError, InvalidConfigError


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"
    provider: str = "reference"
    service_addr: str = ""
    # Desk-scale profile: an embedding dimension commensurate with the toy
    # generator's 16 latent degrees of freedom, so short training runs have
    # headroom to visibly reduce the loss. The provider itself defaults to
    # 64 dims when constructed directly.
    dim: int = 8
    provider_seed: int = 0
    gen_seed: int = 0
    resolution: int = 32
    iters: int = 500
    batch: int = 8
    lr_geo: float = 0.004
    lr_tex: float = 0.0005
    optimizer: str = "sgd"
    clip_loss: bool = True
    img_loss: bool = True
    bg_aug: bool = True
    checkpoint_every: int = 100
    k1: int = 3
    k2: int = 6
    captions_per_object: int = 20
    objects: int = 8
    views: int = 8
    classes: str = "car,chair,table,lamp"
    elev_min: float = -math.pi / 6.0
    elev_max: float = math.pi / 3.0
    bg_decay: float = 2.0
    bg_gauss_mean: float = 0.5
    bg_gauss_sigma: float = 0.15
    bg_cells: str = "2,4,8"
    r: int = 100
    pool_size: int = 200
    eval_samples: int = 32
    eval_repeats: int = 3

    def class_list(self) -> tuple[str, ...]:
        return tuple(c.strip() for c in self.classes.split(",") if c.strip())

    def checker_cells(self) -> tuple[int, ...]:
        return tuple(int(c) for c in self.bg_cells.split(",") if c.strip())

    def _canonical_items(self):
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name == "out":
                continue
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            yield f.name, text

    def digest(self) -> str:
        md = hashlib.sha256()
        for name, text in self._canonical_items():
            md.update(f"{name}={text}\n".encode("utf-8"))
        return md.hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for f in sorted(fields(self), key=lambda f: f.name):
                value = getattr(self, f.name)
                if isinstance(value, bool):
                    value = "true" if value else "false"
                fh.write(f"{f.name} = {value}\n")

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply non-None overrides (CLI flags beat file values)."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **clean) if clean else self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise InvalidConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def load_config(path) -> RunConfig:
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError("expected 'key = value'", path=path, line=lineno)
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise InvalidConfigError(f"unknown config key {key!r} "
                                         f"({path}, line {lineno})")
            overrides[key] = _parse_value(key, value.strip())
    return RunConfig(**overrides)
