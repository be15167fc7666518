"""Hardware models and parameter presets.

Preset files live in ``maqkd/presets`` as YAML documents.  A preset may name a
parent through ``extends``; nested sections are merged key by key.  All
quantities are SI: seconds, hertz, counts per second, kilometres for fibre
lengths, bare numbers for probabilities.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from maqkd.fock import DensityMatrix, DetectorModel, diagonal_state

PRESET_PACKAGE = "maqkd.presets"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = "", source: str = ""):
        self.field = field
        self.source = source
        where = ""
        if source:
            where += f"{source}: "
        if field:
            where += f"{field}: "
        super().__init__(where + message)


class Scheme(str, Enum):
    NLA = "NLA"
    QUASI_EPR = "QuasiEPR"
    NO_MEMORY = "NoMemory"


def _require(cond: bool, message: str, name: str) -> None:
    if not cond:
        raise ConfigError(message, name)


def _probability(value: float, name: str, upper_open: bool = False) -> None:
    ok = 0.0 <= value < 1.0 if upper_open else 0.0 <= value <= 1.0
    _require(ok, f"must lie in [0, 1{')' if upper_open else ']'}, got {value}", name)


@dataclass(frozen=True)
class SourceModel:
    """Triggered single-photon source: emits with probability ``efficiency``,
    then one photon with probability ``p1`` or two with ``p2``."""

    efficiency: float = 1.0
    p1: float = 1.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ("efficiency", "p1", "p2"):
            _probability(getattr(self, name), f"source.{name}")
        _require(abs(self.p1 + self.p2 - 1.0) <= 1e-12, "p1 + p2 must equal 1", "source.p2")

    @classmethod
    def with_p2(cls, efficiency: float, p2: float) -> SourceModel:
        return cls(efficiency=efficiency, p1=1.0 - p2, p2=p2)

    @property
    def max_photons(self) -> int:
        return 2 if self.p2 > 0 and self.efficiency > 0 else 1


@dataclass(frozen=True)
class MemoryModel:
    write_efficiency: float = 1.0
    read_efficiency: float = 1.0
    coherence_time: float = math.inf
    interaction_time: float = 0.0
    init_time: float = 0.0
    spectral_modes: int = 1
    max_rep_rate: float = math.inf
    # bandwidth mismatch between source and memory, folded into writing
    coupling_efficiency: float = 1.0

    def __post_init__(self):
        for name in ("write_efficiency", "read_efficiency", "coupling_efficiency"):
            _probability(getattr(self, name), f"memory.{name}")
        for name in ("coherence_time", "interaction_time", "init_time", "max_rep_rate"):
            _require(getattr(self, name) >= 0, "must be non-negative", f"memory.{name}")
        _require(self.coherence_time > 0, "must be positive", "memory.coherence_time")
        _require(
            int(self.spectral_modes) == self.spectral_modes and self.spectral_modes >= 1,
            "must be an integer >= 1",
            "memory.spectral_modes",
        )

    @classmethod
    def from_product(cls, efficiency: float, **kwargs) -> MemoryModel:
        """Split a tabulated ``eta_w * eta_r0`` product symmetrically."""
        root = math.sqrt(efficiency)
        return cls(write_efficiency=root, read_efficiency=root, **kwargs)

    @property
    def efficiency(self) -> float:
        return self.write_efficiency * self.read_efficiency


@dataclass(frozen=True)
class ChannelModel:
    attenuation_length: float = 17.3
    length: float = 0.0

    def __post_init__(self):
        _require(self.attenuation_length > 0, "must be positive", "channel.attenuation_length")
        _require(self.length >= 0, "must be non-negative", "channel.length")


@dataclass(frozen=True)
class ConverterModel:
    efficiency: float = 1.0
    added_noise: float = 0.0

    def __post_init__(self):
        _require(0.0 <= self.efficiency <= 1.0, "must lie in [0, 1]", "converter.efficiency")
        _probability(self.added_noise, "converter.added_noise", upper_open=True)


@dataclass(frozen=True)
class DetectorSpec:
    """Detector as tabulated: efficiency, dark counts per second, dead time."""

    efficiency: float = 1.0
    dark_count_rate: float = 0.0
    dead_time: float = 1e-9

    def __post_init__(self):
        _probability(self.efficiency, "detector.efficiency")
        _require(self.dark_count_rate >= 0, "must be non-negative", "detector.dark_count_rate")
        _require(self.dead_time >= 0, "must be non-negative", "detector.dead_time")


@dataclass(frozen=True)
class SystemConfig:
    scheme: Scheme = Scheme.QUASI_EPR
    nla_reflectivity: float = 0.2
    source: SourceModel = field(default_factory=SourceModel)
    memory: MemoryModel = field(default_factory=MemoryModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    converter: ConverterModel = field(default_factory=ConverterModel)
    side_detector: DetectorSpec = field(default_factory=DetectorSpec)
    middle_detector: DetectorSpec = field(default_factory=DetectorSpec)
    repetition_rate: float = 1e9
    pulse_duration: float | None = None
    error_correction_inefficiency: float = 1.16
    mode_mismatch: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        _probability(self.nla_reflectivity, "nla_reflectivity")
        _probability(self.mode_mismatch, "mode_mismatch")
        _require(self.repetition_rate > 0, "must be positive", "repetition_rate")
        if self.pulse_duration is None:
            object.__setattr__(self, "pulse_duration", self.period)
        _require(self.pulse_duration > 0, "must be positive", "pulse_duration")
        _require(
            self.pulse_duration <= self.period * (1 + 1e-12),
            "pulse duration cannot exceed the repetition period",
            "pulse_duration",
        )
        _require(
            self.repetition_rate <= self.memory.max_rep_rate * (1 + 1e-12),
            f"exceeds memory.max_rep_rate {self.memory.max_rep_rate}",
            "repetition_rate",
        )
        _require(self.error_correction_inefficiency >= 1, "must be >= 1", "error_correction_inefficiency")

    @property
    def period(self) -> float:
        return 1.0 / self.repetition_rate

    def side_detector_model(self) -> DetectorModel:
        return DetectorModel(
            self.side_detector.efficiency,
            dark_count_prob(self.side_detector, self.pulse_duration, self.converter, at_side=True),
            self.side_detector.dead_time,
        )

    def middle_detector_model(self) -> DetectorModel:
        return DetectorModel(
            self.middle_detector.efficiency,
            dark_count_prob(self.middle_detector, self.pulse_duration, self.converter, at_side=False),
            self.middle_detector.dead_time,
        )

    def with_overrides(self, **overrides) -> SystemConfig:
        """Copy with dotted overrides, e.g. ``with_overrides(**{"memory.coherence_time": 1e-6})``."""
        doc = config_to_dict(self)
        if "repetition_rate" in overrides and "pulse_duration" not in overrides:
            doc["pulse_duration"] = None  # re-derive tau_p = T
        return config_from_dict(_merge(doc, _undot(overrides)))

    def with_side_dark_prob(self, dark_prob: float) -> SystemConfig:
        """Set the per-pulse side-detector dark-count probability (converter noise excluded)."""
        spec = dataclasses.replace(self.side_detector, dark_count_rate=dark_prob / self.pulse_duration)
        return dataclasses.replace(self, side_detector=spec)


def sps_emit(src: SourceModel, cutoff: int = 2) -> DensityMatrix:
    if cutoff < 2:
        raise ValueError("cutoff must be at least 2")
    eta = src.efficiency
    weights = {(0,): 1.0 - eta, (1,): eta * src.p1, (2,): eta * src.p2}
    return diagonal_state(weights, 1, cutoff)


def arm_transmissivity(ch: ChannelModel, length: float | None = None) -> float:
    """Transmissivity of one arm: each user sits half the total length from the middle."""
    L = ch.length if length is None else length
    return math.exp(-L / (2.0 * ch.attenuation_length))


def memory_read_efficiency(mem: MemoryModel, t: float) -> float:
    if t < 0:
        raise ValueError("storage time must be non-negative")
    if math.isinf(mem.coherence_time):
        return mem.read_efficiency
    return mem.read_efficiency * math.exp(-t / mem.coherence_time)


def dark_count_prob(det: DetectorSpec, pulse_duration: float, conv: ConverterModel | None = None, at_side: bool = False) -> float:
    d = det.dark_count_rate * pulse_duration
    if at_side and conv is not None:
        d += conv.added_noise
    return d


# --- configuration documents -------------------------------------------------

_SECTIONS = {
    "source": SourceModel,
    "memory": MemoryModel,
    "channel": ChannelModel,
    "converter": ConverterModel,
    "side_detector": DetectorSpec,
    "middle_detector": DetectorSpec,
}
_META_KEYS = {"extends", "abstract", "description"}


def _undot(flat: dict) -> dict:
    out: dict = {}
    for key, value in flat.items():
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _as_number(value, name: str, source: str):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(f"expected a number, got {value!r}", name, source)
    return value


def config_from_dict(doc: dict, source: str = "") -> SystemConfig:
    """Build a :class:`SystemConfig`; unknown keys are errors."""
    top = {f.name for f in dataclasses.fields(SystemConfig)}
    kwargs = {}
    for key, value in doc.items():
        if key in _META_KEYS:
            continue
        if key not in top:
            raise ConfigError("unknown key", key, source)
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            if not isinstance(value, dict):
                raise ConfigError("expected a mapping", key, source)
            allowed = {f.name for f in dataclasses.fields(cls)}
            if cls is MemoryModel:
                allowed.add("efficiency")
            section = {}
            for sub, subval in value.items():
                if sub not in allowed:
                    raise ConfigError("unknown key", f"{key}.{sub}", source)
                section[sub] = _as_number(subval, f"{key}.{sub}", source)
            if cls is SourceModel and "p2" in section and "p1" not in section:
                section["p1"] = 1.0 - section["p2"]
            if cls is MemoryModel and "efficiency" in section:
                # tables quote only eta_w * eta_r0; split it symmetrically
                if "write_efficiency" in section or "read_efficiency" in section:
                    raise ConfigError("give efficiency or write/read efficiencies, not both", f"{key}.efficiency", source)
                product = section.pop("efficiency")
                if not 0.0 <= product <= 1.0:
                    raise ConfigError(f"must lie in [0, 1], got {product}", f"{key}.efficiency", source)
                section["write_efficiency"] = section["read_efficiency"] = math.sqrt(product)
            if cls is MemoryModel and "spectral_modes" in section:
                section["spectral_modes"] = int(section["spectral_modes"])
            try:
                kwargs[key] = cls(**section)
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], exc.field or key, source) from None
        elif key in ("scheme", "name"):
            kwargs[key] = value
        elif key == "pulse_duration" and value is None:
            kwargs[key] = None
        else:
            kwargs[key] = _as_number(value, key, source)
    try:
        return SystemConfig(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field, source) from None
    except ValueError as exc:
        raise ConfigError(str(exc), "scheme" if "Scheme" in str(exc) else "", source) from None


def config_to_dict(cfg: SystemConfig) -> dict:
    doc = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            doc[f.name] = dataclasses.asdict(value)
        elif isinstance(value, Scheme):
            doc[f.name] = value.value
        else:
            doc[f.name] = value
    return doc


def _read_yaml(path: Path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML ({exc})", source=str(path)) from None
    if not isinstance(doc, dict):
        raise ConfigError("expected a mapping at top level", source=str(path))
    return doc


def preset_dir() -> Path:
    return Path(str(resources.files(PRESET_PACKAGE)))


def _preset_index(directory: Path) -> dict[str, Path]:
    index = {}
    for path in sorted(directory.glob("*.yaml")):
        doc = _read_yaml(path)
        index[str(doc.get("name", path.stem))] = path
    return index


def _resolve(path: Path, index: dict[str, Path], seen=()) -> dict:
    doc = _read_yaml(path)
    parent = doc.get("extends")
    if parent is None:
        return doc
    if parent in seen:
        raise ConfigError(f"cyclic extends through {parent!r}", "extends", str(path))
    if parent not in index:
        raise ConfigError(f"unknown parent preset {parent!r}", "extends", str(path))
    base = _resolve(index[parent], index, seen + (parent,))
    base.pop("name", None)
    return _merge(base, doc)


def list_presets(directory: Path | None = None) -> list[str]:
    """Loadable preset names (abstract bases such as ``common`` are excluded)."""
    directory = directory or preset_dir()
    out = []
    for name, path in _preset_index(directory).items():
        if not _read_yaml(path).get("abstract", False):
            out.append(name)
    return out


def load_preset(name: str, directory: Path | None = None) -> SystemConfig:
    directory = directory or preset_dir()
    index = _preset_index(directory)
    if name not in index:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(sorted(index))}", "preset")
    doc = _resolve(index[name], index)
    doc.pop("abstract", None)
    doc.setdefault("name", name)
    return config_from_dict(doc, source=str(index[name]))


def load_config(path) -> SystemConfig:
    """Load a standalone config file; ``extends`` may name a shipped preset."""
    path = Path(path)
    doc = _read_yaml(path)
    parent = doc.get("extends")
    if parent is not None:
        index = _preset_index(preset_dir())
        if parent not in index:
            raise ConfigError(f"unknown parent preset {parent!r}", "extends", str(path))
        base = _resolve(index[parent], index)
        base.pop("name", None)
        base.pop("abstract", None)
        doc = _merge(base, doc)
    doc.setdefault("name", path.stem)
    return config_from_dict(doc, source=str(path))


def validate_presets(directory: Path | None = None) -> list[ConfigError]:
    """Load every preset and collect the errors instead of raising."""
    directory = directory or preset_dir()
    errors = []
    try:
        names = list_presets(directory)
    except ConfigError as exc:
        return [exc]
    for name in names:
        try:
            load_preset(name, directory)
        except ConfigError as exc:
            errors.append(exc)
    return errors


def source_photon_budget(cfg: SystemConfig) -> int:
    """Photons one side can hold at once: two sources plus the user's photon."""
    return 2 * cfg.source.max_photons + 1


def transmissivity(length: float, attenuation_length: float) -> float:
    return float(np.exp(-length / attenuation_length))
