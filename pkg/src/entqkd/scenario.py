"""Scenario configuration and the plain-text preset format.

A preset is a ``key = value`` file, one entry per line, ``#`` starts a
comment. Numeric keys carry their unit in the name (``_db``, ``_hz``,
``_ns``, ``_s``). Unknown keys are rejected so typos do not pass silently.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .keyrate import LinkBudget, Placement, SourceDetectorParams

SCENARIO_DIR_ENV = "ENTQKD_SCENARIO_DIR"
PACKAGE_SCENARIO_DIR = Path(__file__).with_name("scenarios")
PRESETS = ("at-alice", "asymmetric", "middle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    placement: Placement
    alice_arm_db: float
    bob_arm_db: float
    local_pair_rate_hz: float
    local_singles_rate_hz: float
    v_sys: float
    coincidence_window_ns: float
    alice_dark_rate_hz: float
    bob_dark_rate_hz: float
    link_visibility: float = 1.0
    error_correction_factor: float | None = None
    jitter_ns: float = 0.15
    dead_time_ns: float = 50.0
    alice_fading_sigma: float = 0.0
    alice_fading_correlation_s: float = 0.1
    bob_fading_sigma: float = 0.0
    bob_fading_correlation_s: float = 0.1
    clock_offset_ns: float = 0.0
    clock_drift_ns_per_s: float = 0.0
    clock_drift_noise_ns_per_sqrt_s: float = 0.0
    duration_s: float = 60.0
    seed: int = 0
    reference_v_tot: float | None = None
    reference_qber: float | None = None
    reference_secure_rate_bits_per_s: float | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "placement", Placement(self.placement))
        except ValueError:
            raise ConfigError(f"unknown placement {self.placement!r}") from None
        self.validate()

    # -- validation -------------------------------------------------------

    def validate(self):
        for name in ("alice_arm_db", "bob_arm_db"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0")
        for name in ("local_pair_rate_hz", "local_singles_rate_hz", "coincidence_window_ns"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.local_pair_rate_hz > self.local_singles_rate_hz:
            raise ConfigError("local pair rate cannot exceed the local singles rate")
        for name in ("alice_dark_rate_hz", "bob_dark_rate_hz", "jitter_ns", "dead_time_ns",
                     "alice_fading_sigma", "bob_fading_sigma", "clock_drift_noise_ns_per_sqrt_s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("alice_fading_correlation_s", "bob_fading_correlation_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("v_sys", "link_visibility"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.error_correction_factor is not None and self.error_correction_factor < 1:
            raise ConfigError("error_correction_factor must be >= 1")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be > 0")
        if self.placement is Placement.MIDDLE and (self.alice_arm_db == 0 or self.bob_arm_db == 0):
            raise ConfigError("middle placement sends both photons over a link; a zero-loss arm means local analysis")

    # -- views used by the other modules ----------------------------------

    def link_budget(self):
        return LinkBudget(self.placement, self.alice_arm_db, self.bob_arm_db)

    def source_detector_params(self):
        return SourceDetectorParams(
            local_pair_rate_hz=self.local_pair_rate_hz,
            local_singles_rate_hz=self.local_singles_rate_hz,
            dark_rate_alice_hz=self.alice_dark_rate_hz,
            dark_rate_bob_hz=self.bob_dark_rate_hz,
            coincidence_window_ns=self.coincidence_window_ns,
            v_sys=self.v_sys,
            error_correction_factor=self.error_correction_factor,
        )

    @property
    def total_db(self):
        return self.alice_arm_db + self.bob_arm_db

    @property
    def source_pair_rate_hz(self):
        """Pair emission rate implied by the local singles and pair rates."""
        return self.local_singles_rate_hz**2 / self.local_pair_rate_hz

    @property
    def local_efficiency(self):
        """Per-arm coupling times detection efficiency (heralding efficiency)."""
        return self.local_pair_rate_hz / self.local_singles_rate_hz

    def replace(self, **changes):
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    # -- text format -------------------------------------------------------

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, Placement):
                v = v.value
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, source="<string>"):
        types = {f.name: f.type for f in fields(cls)}
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            if key in raw:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            raw[key] = _parse_value(key, value, types[key], source, lineno)
        missing = [f.name for f in fields(cls)
                   if f.name not in raw and f.default is dataclasses.MISSING]
        if missing:
            raise ConfigError(f"{source}: missing keys {', '.join(missing)}")
        return cls(**raw)

    @classmethod
    def parse_field(cls, key, value):
        """Parse one ``key = value`` entry the way :meth:`from_text` does."""
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        return _parse_value(key, value, types[key], "<override>", 0)

    def save(self, path):
        Path(path).write_text(self.to_text())


def _parse_value(key, value, typ, source, lineno):
    typ = str(typ)
    try:
        if key in ("name",):
            return value
        if key == "placement":
            return Placement(value)
        if key == "seed":
            return int(value)
        if "None" in typ:
            return None if value.lower() in ("auto", "none", "") else float(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None


def load_config(path):
    path = Path(path)
    return ScenarioConfig.from_text(path.read_text(), source=str(path))


def scenario_dirs():
    dirs = []
    env = os.environ.get(SCENARIO_DIR_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(PACKAGE_SCENARIO_DIR)
    return dirs


def load_preset(name):
    """Load a preset by name, looking in ``$ENTQKD_SCENARIO_DIR`` first."""
    for d in scenario_dirs():
        path = d / f"{name}.cfg"
        if path.is_file():
            return load_config(path)
    raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(available_presets())}")


def available_presets():
    names = set()
    for d in scenario_dirs():
        if d.is_dir():
            names.update(p.stem for p in d.glob("*.cfg"))
    return sorted(names)
