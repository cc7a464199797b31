"""Configuration dataclasses and the ``key = value`` text format.

Nested dataclasses flatten to dotted keys (``terrain.kind = rough``). Files
are read with :mod:`configparser` under an implicit section so comments and
blank lines behave as usual.
"""
import configparser
import dataclasses
from dataclasses import dataclass, field

from .errors import ConfigError
from .sim.terrain import KINDS, Terrain

PROFILES = ("paper", "small")
COMMAND_MODES = ("random", "straight", "stand")


@dataclass(frozen=True)
class GaitConfig:
    period: float = 0.4
    duty: float = 0.6
    swing_height: float = 0.07


@dataclass(frozen=True)
class CommandConfig:
    mode: str = "random"          # random | straight | stand
    speed: float = 0.25           # straight-line forward speed (m/s)
    speed_spread: float = 0.3     # per-trajectory relative spread of that speed
    mean_forward: float = 0.15
    std_forward: float = 0.12
    std_lateral: float = 0.06
    std_yaw_rate: float = 0.3
    tau: float = 2.0
    settle_time: float = 0.5


@dataclass(frozen=True)
class NoiseParams:
    joint_pos: float = 2e-3
    joint_vel: float = 0.2
    imu_theta: float = 0.01
    imu_omega: float = 0.03
    imu_acc: float = 0.2
    imu_alpha: float = 1.0
    mocap: float = 1e-3

    @classmethod
    def zero(cls):
        return cls(**{f.name: 0.0 for f in dataclasses.fields(cls)})


@dataclass(frozen=True)
class CameraConfig:
    height: int = 224
    width: int = 224
    fov_deg: float = 70.0
    pitch_deg: float = 45.0
    max_range: float = 4.0
    rate: float = 60.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.005
    duration: float = 60.0
    seed: int = 0
    nominal_height: float = 0.29
    gait: GaitConfig = field(default_factory=GaitConfig)
    terrain: Terrain = field(default_factory=Terrain)
    command: CommandConfig = field(default_factory=CommandConfig)
    noise: NoiseParams = field(default_factory=NoiseParams)
    camera: CameraConfig = field(default_factory=CameraConfig)
    render_depth: bool = True

    @property
    def n_frames(self):
        return int(round(self.duration / self.dt))

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if not self.duration > 0:
            raise ConfigError("duration", "must be positive")
        if not 0.0 < self.gait.duty < 1.0:
            raise ConfigError("gait.duty", "must lie in (0, 1)")
        if not self.gait.period > 2 * self.dt:
            raise ConfigError("gait.period", "must exceed two time steps")
        if self.terrain.kind not in KINDS:
            raise ConfigError("terrain.kind", f"unknown terrain {self.terrain.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.terrain.slip_rate <= 1.0:
            raise ConfigError("terrain.slip_rate", "must lie in [0, 1]")
        if self.command.mode not in COMMAND_MODES:
            raise ConfigError("command.mode", f"must be one of {COMMAND_MODES}")
        if self.camera.rate <= 0:
            raise ConfigError("camera.rate", "must be positive")
        for name in ("height", "width"):
            if getattr(self.camera, name) <= 0:
                raise ConfigError(f"camera.{name}", "must be positive")
        for f in dataclasses.fields(self.noise):
            if getattr(self.noise, f.name) < 0:
                raise ConfigError(f"noise.{f.name}", "must be nonnegative")
        return self


# -- key = value serialization ---------------------------------------------

def to_kv(obj, prefix=""):
    """Flatten a (nested) dataclass into ``[(dotted_key, value)]``."""
    items = []
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(val):
            items.extend(to_kv(val, key + "."))
        else:
            items.append((key, val))
    return items


def format_kv(items):
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse(raw, current, key):
    try:
        if isinstance(current, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(current).__name__}") from None
    return raw.strip()


def apply_kv(obj, mapping, prefix=""):
    """Return a copy of dataclass ``obj`` with dotted-key overrides applied."""
    changes = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(val):
            sub = {k: v for k, v in mapping.items() if k.startswith(key + ".")}
            if sub:
                changes[f.name] = apply_kv(val, sub, key + ".")
        elif key in mapping:
            changes[f.name] = _parse(mapping[key], val, key)
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        fields = ",".join(prefix + name for name in changes) or prefix.rstrip(".")
        raise ConfigError(fields, str(exc)) from None


def known_keys(obj, prefix=""):
    return {k for k, _ in to_kv(obj, prefix)}


def read_kv(path):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_string("[config]\n" + fh.read())
    return dict(parser["config"])


def write_kv(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(items))
