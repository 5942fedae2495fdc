"""Run configuration: an INI file with every training and codec knob exposed."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .trainer import PAPER_LR_MAP, TrainSchedule, desk_schedule

MODES = ("pretrain", "train-vd", "train-vdsws", "compress", "evaluate", "sweep", "report",
         "pipeline")
METHODS = ("sws", "vd-baseline")

# prior strength relative to 10k examples matches the 60k-example original
DESK_KL_SCALE = 10000 / 60000
# a further halving of the KL weight buys back accuracy at this data size
DESK_TAU1 = DESK_KL_SCALE / 2


class ConfigError(ValueError):
    pass


@dataclass
class CompressionOptions:
    method: str = "sws"
    offset_bits: int = 5
    threshold: float = 0.95
    k_baseline: int = 64

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if not 1 <= self.offset_bits <= 32:
            raise ConfigError("offset_bits must lie in [1, 32]")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.k_baseline < 1:
            raise ConfigError("k_baseline must be >= 1")


@dataclass
class DataOptions:
    dir: str = "data/mnist"
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"
    train_limit: int | None = 10000
    test_limit: int | None = None

    def path(self, name):
        p = Path(getattr(self, name))
        return p if p.is_absolute() else Path(self.dir) / p

    def validate(self):
        for name in ("train_limit", "test_limit"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class RunConfig:
    schedule: TrainSchedule = field(default_factory=desk_schedule)
    compression: CompressionOptions = field(default_factory=CompressionOptions)
    data: DataOptions = field(default_factory=DataOptions)
    sweep_tau2: tuple = (1e-3, 3.3333333333333335e-3, 1e-2)
    layers: tuple = (784, 300, 100, 10)
    mode: str | None = None

    def validate(self):
        if self.mode is not None and self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        try:
            self.schedule.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.compression.validate()
        self.data.validate()
        if len(self.layers) < 2 or any(n < 1 for n in self.layers):
            raise ConfigError("layers needs at least two positive widths")
        if not self.sweep_tau2 or any(t < 0 for t in self.sweep_tau2):
            raise ConfigError("sweep_tau2 must be a nonempty list of nonnegative values")
        return self


def preset(name):
    """``desk`` (default CPU-scale run) or ``paper`` (full-length run)."""
    if name == "desk":
        sched = desk_schedule(tau1=DESK_TAU1, tau2_phase2=2e-2 * DESK_KL_SCALE)
        return RunConfig(schedule=sched)
    if name == "paper":
        return RunConfig(schedule=TrainSchedule(),
                         data=DataOptions(train_limit=None),
                         sweep_tau2=(5e-3, 1e-2, 2e-2, 5e-2))
    raise ConfigError(f"unknown preset {name!r}")


_OBJECTIVE_KEYS = ("gamma_alpha", "gamma_beta")
_SCHEDULE_KEYS = [f.name for f in fields(TrainSchedule)
                  if f.name not in ("lr_map", "seed") + _OBJECTIVE_KEYS]


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    s = cfg.schedule
    cp["run"] = {"seed": _fmt(s.seed), "layers": ", ".join(map(str, cfg.layers))}
    if cfg.mode:
        cp["run"]["mode"] = cfg.mode
    cp["schedule"] = {k: _fmt(getattr(s, k)) for k in _SCHEDULE_KEYS}
    cp["learning_rates"] = {k: _fmt(s.lr_map[k]) for k in PAPER_LR_MAP}
    cp["objective"] = {k: _fmt(getattr(s, k)) for k in _OBJECTIVE_KEYS}
    c = cfg.compression
    cp["compression"] = {k: _fmt(getattr(c, k)) for k in
                         ("method", "offset_bits", "threshold", "k_baseline")}
    cp["data"] = {f.name: _fmt(getattr(cfg.data, f.name)) for f in fields(DataOptions)}
    cp["sweep"] = {"tau2_values": ", ".join(_fmt(t) for t in cfg.sweep_tau2)}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def _coerce(raw, like, key):
    raw = raw.strip()
    try:
        if raw.lower() == "none":
            return None
        if isinstance(like, bool):
            return {"true": True, "false": False}[raw.lower()]
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw
    except (ValueError, KeyError):
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def from_ini(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (the desk preset by default) and validate."""
    cfg = base or preset("desk")
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    known = {"run", "schedule", "learning_rates", "objective", "compression", "data", "sweep"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    def apply(section, obj, keys, ints=()):
        if section not in cp:
            return
        # option names arrive lowercased; match fields case-insensitively
        by_lower = {k.lower(): k for k in keys}
        for raw_key, v in cp[section].items():
            k = by_lower.get(raw_key)
            if k is None:
                raise ConfigError(f"unknown key {section}.{raw_key}")
            like = 0 if k in ints else getattr(obj, k)
            setattr(obj, k, _coerce(v, like, f"{section}.{k}"))

    s = cfg.schedule
    if "run" in cp:
        for k, v in cp["run"].items():
            if k == "seed":
                s.seed = _coerce(v, 0, "run.seed")
            elif k == "layers":
                try:
                    cfg.layers = tuple(int(n) for n in v.split(","))
                except ValueError:
                    raise ConfigError(f"run.layers: cannot parse {v!r}") from None
            elif k == "mode":
                cfg.mode = v.strip()
            else:
                raise ConfigError(f"unknown key run.{k}")
    apply("schedule", s, _SCHEDULE_KEYS)
    if "learning_rates" in cp:
        for k, v in cp["learning_rates"].items():
            if k not in PAPER_LR_MAP:
                raise ConfigError(f"unknown parameter group {k!r}")
            s.lr_map[k] = _coerce(v, 0.0, f"learning_rates.{k}")
    apply("objective", s, _OBJECTIVE_KEYS)
    apply("compression", cfg.compression, ("method", "offset_bits", "threshold", "k_baseline"))
    apply("data", cfg.data, [f.name for f in fields(DataOptions)],
          ints=("train_limit", "test_limit"))
    if "sweep" in cp:
        for k, v in cp["sweep"].items():
            if k != "tau2_values":
                raise ConfigError(f"unknown key sweep.{k}")
            try:
                cfg.sweep_tau2 = tuple(float(t) for t in v.split(",") if t.strip())
            except ValueError:
                raise ConfigError(f"sweep.tau2_values: cannot parse {v!r}") from None
    return cfg.validate()


def load_config(path, base=None):
    return from_ini(Path(path).read_text(), base)
