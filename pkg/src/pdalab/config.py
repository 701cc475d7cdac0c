"""Run configuration: strict YAML schema, resolution, and serialization.

Every key is validated against an explicit whitelist; unknown keys are
rejected.  Serialization always writes the fully resolved form (no
hidden defaults), so the effective configuration stored next to a
run's outputs replays the run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .data import SyntheticSpec
from .nets import ArchSpec
from .rngstreams import substream_seed
from .trainer import NAMED_VARIANTS, Schedule, VariantFlags, resolve_variant


class ConfigError(ValueError):
    """The configuration is malformed or fails validation."""


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")


def _get(d: dict, key: str, kind, default, where: str):
    if key not in d or d[key] is None:
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) and kind in (int, float):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got a boolean")
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, "
                          f"got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class SyntheticDataConfig:
    """SyntheticSpec fields; a null seed derives from the experiment seed."""

    dim: int = 2
    num_source_classes: int = 5
    shared_classes: tuple[int, ...] = (0, 1, 2)
    samples_per_class: int = 100
    cluster_means: tuple[tuple[float, ...], ...] | None = None
    cluster_std: float = 0.35
    target_rotation: float = 0.3
    target_shift: tuple[float, ...] = (0.5, 0.5)
    seed: int | None = None

    def to_spec(self, experiment_seed: int) -> SyntheticSpec:
        seed = self.seed if self.seed is not None \
            else substream_seed(experiment_seed, "datagen")
        try:
            return SyntheticSpec(dim=self.dim,
                                 num_source_classes=self.num_source_classes,
                                 shared_classes=self.shared_classes,
                                 samples_per_class=self.samples_per_class,
                                 cluster_means=self.cluster_means,
                                 cluster_std=self.cluster_std,
                                 target_rotation=self.target_rotation,
                                 target_shift=self.target_shift,
                                 seed=seed)
        except ValueError as exc:
            raise ConfigError(f"data.synthetic: {exc}") from None

    def to_dict(self) -> dict:
        return {"dim": self.dim, "num_source_classes": self.num_source_classes,
                "shared_classes": list(self.shared_classes),
                "samples_per_class": self.samples_per_class,
                "cluster_means": None if self.cluster_means is None
                else [list(m) for m in self.cluster_means],
                "cluster_std": self.cluster_std,
                "target_rotation": self.target_rotation,
                "target_shift": list(self.target_shift),
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "SyntheticDataConfig":
        where = "data.synthetic"
        _check_keys(d, {"dim", "num_source_classes", "shared_classes",
                        "samples_per_class", "cluster_means", "cluster_std",
                        "target_rotation", "target_shift", "seed"}, where)
        means = d.get("cluster_means")
        if means is not None:
            means = tuple(tuple(float(v) for v in m) for m in means)
        return SyntheticDataConfig(
            dim=_get(d, "dim", int, 2, where),
            num_source_classes=_get(d, "num_source_classes", int, 5, where),
            shared_classes=tuple(_get(d, "shared_classes", list, [0, 1, 2], where)),
            samples_per_class=_get(d, "samples_per_class", int, 100, where),
            cluster_means=means,
            cluster_std=_get(d, "cluster_std", float, 0.35, where),
            target_rotation=_get(d, "target_rotation", float, 0.3, where),
            target_shift=tuple(_get(d, "target_shift", list, [0.5, 0.5], where)),
            seed=_get(d, "seed", int, None, where))


@dataclass(frozen=True)
class CsvDataConfig:
    source: str
    target: str
    metadata: str

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target,
                "metadata": self.metadata}

    @staticmethod
    def from_dict(d: dict) -> "CsvDataConfig":
        where = "data.csv"
        _check_keys(d, {"source", "target", "metadata"}, where)
        for key in ("source", "target", "metadata"):
            if not isinstance(d.get(key), str):
                raise ConfigError(f"{where}.{key}: a path string is required")
        return CsvDataConfig(d["source"], d["target"], d["metadata"])


@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple[int, ...] = (16, 16)
    disc_hidden: tuple[int, ...] = ()

    def to_arch(self, in_dim: int, num_classes: int) -> ArchSpec:
        try:
            return ArchSpec(in_dim=in_dim, num_classes=num_classes,
                            hidden=self.hidden, disc_hidden=self.disc_hidden)
        except ValueError as exc:
            raise ConfigError(f"arch: {exc}") from None

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "disc_hidden": list(self.disc_hidden)}

    @staticmethod
    def from_dict(d: dict) -> "ArchConfig":
        _check_keys(d, {"hidden", "disc_hidden"}, "arch")
        return ArchConfig(hidden=tuple(_get(d, "hidden", list, [16, 16], "arch")),
                          disc_hidden=tuple(_get(d, "disc_hidden", list, [], "arch")))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str | None = None
    variant: str | VariantFlags = "san_pp"
    data: SyntheticDataConfig | CsvDataConfig = field(default_factory=SyntheticDataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    schedule: Schedule = field(default_factory=Schedule)

    def flags(self) -> VariantFlags:
        try:
            return resolve_variant(self.variant)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"variant: {exc}") from None

    def to_dict(self) -> dict:
        variant = self.variant if isinstance(self.variant, str) \
            else self.variant.to_dict()
        data = {"synthetic": self.data.to_dict()} \
            if isinstance(self.data, SyntheticDataConfig) \
            else {"csv": self.data.to_dict()}
        return {"seed": self.seed, "out_dir": self.out_dir, "variant": variant,
                "data": data, "arch": self.arch.to_dict(),
                "schedule": self.schedule.to_dict()}

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        raw = _require_mapping(raw, "config")
        _check_keys(raw, {"seed", "out_dir", "variant", "data", "arch", "schedule"},
                    "config")
        seed = _get(raw, "seed", int, 0, "config")
        out_dir = _get(raw, "out_dir", str, None, "config")

        variant: str | VariantFlags = raw.get("variant", "san_pp")
        if variant is None:
            variant = "san_pp"
        if isinstance(variant, dict):
            _check_keys(variant, {"instance_sel", "class_sel", "self_training",
                                  "entropy_min", "shared_trunk", "adversary"},
                        "variant")
            try:
                variant = VariantFlags(**variant)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"variant: {exc}") from None
        elif isinstance(variant, str):
            if variant not in NAMED_VARIANTS:
                raise ConfigError(f"variant: unknown name {variant!r}; "
                                  f"known: {sorted(NAMED_VARIANTS)}")
        else:
            raise ConfigError("variant: expected a preset name or a flag mapping")

        data_section = _require_mapping(raw.get("data"), "config.data")
        _check_keys(data_section, {"synthetic", "csv"}, "config.data")
        if "csv" in data_section and "synthetic" in data_section:
            raise ConfigError("config.data: specify either synthetic or csv, not both")
        if "csv" in data_section:
            data = CsvDataConfig.from_dict(_require_mapping(data_section["csv"],
                                                            "data.csv"))
        else:
            data = SyntheticDataConfig.from_dict(
                _require_mapping(data_section.get("synthetic"), "data.synthetic"))

        arch = ArchConfig.from_dict(_require_mapping(raw.get("arch"), "arch"))

        sched_d = _require_mapping(raw.get("schedule"), "schedule")
        _check_keys(sched_d, {"eta0", "alpha", "beta", "momentum", "total_epochs",
                              "warmup_epochs", "batch_size", "log_interval"},
                    "schedule")
        defaults = Schedule()
        try:
            schedule = Schedule(
                eta0=_get(sched_d, "eta0", float, defaults.eta0, "schedule"),
                alpha=_get(sched_d, "alpha", float, defaults.alpha, "schedule"),
                beta=_get(sched_d, "beta", float, defaults.beta, "schedule"),
                momentum=_get(sched_d, "momentum", float, defaults.momentum, "schedule"),
                total_epochs=_get(sched_d, "total_epochs", int,
                                  defaults.total_epochs, "schedule"),
                warmup_epochs=_get(sched_d, "warmup_epochs", int,
                                   defaults.warmup_epochs, "schedule"),
                batch_size=_get(sched_d, "batch_size", int,
                                defaults.batch_size, "schedule"),
                log_interval=_get(sched_d, "log_interval", int,
                                  defaults.log_interval, "schedule"))
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None

        return RunConfig(seed=seed, out_dir=out_dir, variant=variant, data=data,
                         arch=arch, schedule=schedule)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return RunConfig.from_dict(raw if raw is not None else {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(cfg))
