"""Experiment configuration and run manifests.

Configs are strict JSON: a schema_version field is required and unknown
keys anywhere in the tree are errors, so a typo cannot silently fall back
to a default.  The config hash (sha256 of the canonical JSON) and the
experiment seed are embedded in every artifact a run writes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .ae import AEConfig
from .cloud import DEFAULT_FAMILIES
from .defenses import AugmentationSpec
from .errors import ConfigError
from .sht import GridSpec, SmoothingConfig
from .triggers import TriggerSpec
from .victims import PoisonPlan, VictimSpec

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    classes: tuple[str, ...] = DEFAULT_FAMILIES
    per_class_train: int = 100
    per_class_test: int = 25
    n_points: int = 256


@dataclass(frozen=True)
class AnalysisConfig:
    gft_k: int = 10
    eval_clouds: int = 20
    t_sweep: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    n_l_sweep: tuple[int, ...] = (4, 16, 64, 100)
    band_triggers: tuple[str, ...] = ("iba", "ball", "jitter")


@dataclass
class ExperimentConfig:
    seed: int = 7
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    ae: AEConfig = field(default_factory=AEConfig)
    trigger: TriggerSpec = field(default_factory=lambda: TriggerSpec("iba"))
    poison: dict = field(default_factory=lambda: {"rate": 0.05, "target_label": 0})
    victim: VictimSpec = field(default_factory=VictimSpec)
    augmentations: tuple[AugmentationSpec, ...] = ()
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def poison_plan(self) -> PoisonPlan:
        return PoisonPlan(
            rate=float(self.poison["rate"]),
            target_label=int(self.poison["target_label"]),
            trigger=self.trigger,
            seed=self.seed,
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "ae": asdict(self.ae),
            "trigger": self.trigger.to_dict(),
            "poison": dict(self.poison),
            "victim": asdict(self.victim),
            "augmentations": [a.to_dict() for a in self.augmentations],
            "smoothing": {
                "n_max": self.smoothing.n_max,
                "grid_theta": self.smoothing.grid.n_theta,
                "grid_phi": self.smoothing.grid.n_phi,
                "seed": self.smoothing.seed,
                "mode": self.smoothing.mode,
                "collision": self.smoothing.collision,
                "ridge": self.smoothing.ridge,
                "spline_scale": self.smoothing.spline_scale,
            },
            "analysis": asdict(self.analysis),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("ascii")).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"expected schema_version {SCHEMA_VERSION}, got {version!r}",
                field="schema_version",
            )
        cfg = cls()
        known = {
            "seed", "dataset", "ae", "trigger", "poison", "victim",
            "augmentations", "smoothing", "analysis",
        }
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}")
        try:
            if "seed" in raw:
                cfg.seed = int(raw["seed"])
            if "dataset" in raw:
                cfg.dataset = _build(DatasetConfig, raw["dataset"], "dataset",
                                     tuples=("classes",))
            if "ae" in raw:
                cfg.ae = _build(AEConfig, raw["ae"], "ae", tuples=("enc_widths",))
            if "trigger" in raw:
                cfg.trigger = _build_trigger(raw["trigger"], "trigger")
            if "poison" in raw:
                cfg.poison = _check_keys(
                    raw["poison"], {"rate", "target_label"}, "poison"
                )
            if "victim" in raw:
                cfg.victim = _build(
                    VictimSpec, raw["victim"], "victim",
                    tuples=("trunk_widths", "edge_widths"),
                )
            if "augmentations" in raw:
                cfg.augmentations = tuple(
                    _build(AugmentationSpec, a, f"augmentations[{i}]")
                    for i, a in enumerate(raw["augmentations"])
                )
            if "smoothing" in raw:
                cfg.smoothing = _build_smoothing(raw["smoothing"], "smoothing")
            if "analysis" in raw:
                cfg.analysis = _build(
                    AnalysisConfig, raw["analysis"], "analysis",
                    tuples=("t_sweep", "n_l_sweep", "band_triggers"),
                )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc))
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _check_keys(raw: dict, allowed: set, where: str) -> dict:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", field=where)
    return dict(raw)


def _build(cls, raw: dict, where: str, tuples: tuple[str, ...] = ()):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", field=where)
    fields = {f for f in cls.__dataclass_fields__}
    _check_keys(raw, fields, where)
    raw = dict(raw)
    for key in tuples:
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=where)


def _build_trigger(raw: dict, where: str) -> TriggerSpec:
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", field=where)
    _check_keys(raw, set(TriggerSpec.__dataclass_fields__), where)
    try:
        return TriggerSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=where)


def _build_smoothing(raw: dict, where: str) -> SmoothingConfig:
    allowed = {"n_max", "grid_theta", "grid_phi", "seed", "mode", "collision",
               "ridge", "spline_scale"}
    raw = _check_keys(raw, allowed, where)
    grid = GridSpec(
        n_theta=int(raw.pop("grid_theta", 181)),
        n_phi=int(raw.pop("grid_phi", 360)),
    )
    try:
        return SmoothingConfig(grid=grid, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=where)


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(path) -> str:
    """Hash a file, or a directory's files (sorted relative paths)."""
    path = Path(path)
    if path.is_file():
        return file_sha256(path)
    h = hashlib.sha256()
    for sub in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(sub.relative_to(path)).encode())
        h.update(bytes.fromhex(file_sha256(sub)))
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    seed: int
    hashes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def record(self, name: str, path) -> None:
        self.hashes[name] = tree_sha256(path)

    def time(self, name: str, seconds: float) -> None:
        self.timings[name] = round(seconds, 3)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(
                {
                    "config": self.config,
                    "config_hash": self.config_hash,
                    "seed": self.seed,
                    "hashes": self.hashes,
                    "timings": self.timings,
                },
                fh,
                indent=1,
                sort_keys=True,
            )
            fh.write("\n")
