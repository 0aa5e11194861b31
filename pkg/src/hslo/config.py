"""INI run configuration with a closed schema and ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import IntensityScheme
from .errors import ConfigError, HsloError
from .moea import BackbonePreset, MoeaConfig
from .optim import MnsloConfig
from .thermal import DEFAULT_TOL, DomainSpec


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


SCHEMA: dict[str, dict[str, type]] = {
    "domain": {
        "side_length_m": float, "conductivity": float, "sink_temperature_K": float,
        "sink_width_m": float, "sink_edge": str, "sink_center_fraction": float,
        "fine_resolution": int, "cell_partition": int,
    },
    "scheme": {"kind": str, "n_sources": int, "intensity": float},
    "mnslo": {
        "population_size": int, "group_count": int, "archive_capacity": int,
        "epsilon": float, "max_sweeps": int, "evaluator": str, "cache_capacity": int,
        "tol": float,
    },
    "moea": {
        "population": int, "generations": int, "pc": float, "pm": float, "m_max": int,
        "channels": _int_list, "stage_starts": _int_list, "stem_resolution": int,
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict] = field(default_factory=lambda: {s: {} for s in SCHEMA})

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        cfg = cls()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            try:
                with open(path) as fh:
                    parser.read_file(fh)
            except (OSError, configparser.Error) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        for item in overrides:
            lhs, sep, raw = item.partition("=")
            section, dot, key = lhs.partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not section.key=value")
            cfg.set(section.strip(), key.strip(), raw.strip())
        return cfg

    def set(self, section: str, key: str, raw) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        conv = SCHEMA[section].get(key)
        if conv is None:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            self.values[section][key] = conv(raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc

    def _build(self, factory, section, **extra):
        try:
            return factory(**self.values[section], **extra)
        except (HsloError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc

    def domain(self) -> DomainSpec:
        return self._build(DomainSpec, "domain")

    def scheme(self) -> IntensityScheme:
        v = dict(self.values["scheme"])
        if v.get("kind") == "case2":
            extra = set(v) - {"kind"}
            if extra:
                raise ConfigError(f"[scheme] case2 takes no {sorted(extra)}")
            return IntensityScheme.case2()
        try:
            return IntensityScheme(**v)
        except HsloError as exc:
            raise ConfigError(f"[scheme]: {exc}") from exc

    def mnslo(self, seed: int) -> MnsloConfig:
        v = {k: val for k, val in self.values["mnslo"].items()
             if k not in ("evaluator", "cache_capacity", "tol")}
        try:
            return MnsloConfig(seed=seed, **v)
        except HsloError as exc:
            raise ConfigError(f"[mnslo]: {exc}") from exc

    def mnslo_extra(self) -> tuple[str, int, float]:
        v = self.values["mnslo"]
        return v.get("evaluator", "exact"), v.get("cache_capacity", 0), v.get("tol", DEFAULT_TOL)

    def moea(self, seed: int) -> tuple[MoeaConfig, BackbonePreset]:
        v = dict(self.values["moea"])
        preset_kw = {k: v.pop(k) for k in ("channels", "stage_starts", "stem_resolution") if k in v}
        try:
            return MoeaConfig(seed=seed, **v), BackbonePreset(**preset_kw)
        except HsloError as exc:
            raise ConfigError(f"[moea]: {exc}") from exc


STREAMS = ("dataset", "mnslo", "moea", "benchmark")


def derive_seed(root: int, stream: str) -> int:
    """Child seed for one consumer, split deterministically from the root seed."""
    children = np.random.SeedSequence(root).spawn(len(STREAMS))
    return int(children[STREAMS.index(stream)].generate_state(1, dtype=np.uint32)[0])


def write_config(path, cfg: RunConfig) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, vals in cfg.values.items():
        if vals:
            parser[section] = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                               for k, v in vals.items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)
