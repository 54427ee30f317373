"""Pipeline configuration: presets, INI parsing, validation, stage seeds.

Grammar
-------
The config file is UTF-8 INI text as read by :mod:`configparser`. Every
key is optional; missing keys take the value of the selected preset.

``[pipeline]``
    ``seed`` (int), ``out_dir`` (path), ``preset`` (``desk`` | ``paper``)
``[motiondata]``
    ``size``, ``frames``, ``train_normal``, ``train_anomalous``,
    ``test_normal``, ``test_anomalous``, ``intervals`` (ints);
    ``anomaly_kinds`` (comma list); ``block``, ``radius`` (ints)
``[tan]``
    ``encoder_widths`` (three comma-separated ints), ``bottleneck``,
    ``steps``, ``batch_size`` (ints); ``learning_rate`` (float);
    ``milestones`` (comma list of ints, may be empty)
``[mil]``
    ``segments``, ``bags_per_side``, ``steps`` (ints); ``lambda1``,
    ``dropout``, ``learning_rate`` (floats); ``mode`` (``attention`` |
    ``max``); ``attention_norm`` (``softmax`` | ``sigmoid``);
    ``regressor_widths``, ``attention_widths``, ``milestones`` (comma
    lists); ``fuse_dir`` (optional directory of extra clip features)
``[eval]``
    ``compare_modes`` (comma list of modes), ``plot`` (file name)

Unknown sections or keys are rejected so typos surface early.
"""

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, replace

from .mil import MilConfig
from .motiondata.synth import ANOMALY_KINDS, DatasetConfig
from .nncore import TrainSchedule
from .tan import TanConfig

PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    """Raised with every problem found, one per entry of ``errors``."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class DataSettings:
    size: int = 64
    frames: int = 128
    train_normal: int = 20
    train_anomalous: int = 20
    test_normal: int = 10
    test_anomalous: int = 10
    intervals: int = 1
    anomaly_kinds: tuple = ANOMALY_KINDS
    block: int = 8
    radius: int = 4

    def dataset(self, split, seed):
        normal, anomalous = (
            (self.train_normal, self.train_anomalous) if split == "train"
            else (self.test_normal, self.test_anomalous)
        )
        return DatasetConfig(
            n_normal=normal, n_anomalous=anomalous, frames=self.frames, size=self.size,
            anomaly_kinds=self.anomaly_kinds, intervals=self.intervals, seed=seed,
            id_prefix=split,
        )


@dataclass(frozen=True)
class EvalSettings:
    compare_modes: tuple = ("max", "attention")
    plot: str = "roc.svg"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "run"
    preset: str = "desk"
    data: DataSettings = field(default_factory=DataSettings)
    tan: TanConfig = field(default_factory=TanConfig)
    mil: MilConfig = field(default_factory=MilConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    fuse_dir: str = ""

    def snapshot(self):
        """JSON-ready dict of every setting."""
        out = asdict(self)
        for key in ("data", "tan", "mil", "eval"):
            out[key] = _listify(out[key])
        return out


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


def preset(name="desk"):
    """Default :class:`PipelineConfig` for a named preset."""
    if name == "desk":
        return PipelineConfig(
            preset="desk",
            data=DataSettings(),
            tan=TanConfig(
                size=64,
                encoder_widths=(16, 32, 64),
                schedule=TrainSchedule(0.002, 2000, (1000, 1600), batch_size=8),
            ),
            mil=MilConfig(schedule=TrainSchedule(0.001, 1000, (400, 800))),
        )
    if name == "paper":
        return PipelineConfig(
            preset="paper",
            data=DataSettings(size=112),
            tan=TanConfig(
                size=112,
                encoder_widths=(64, 128, 256),
                schedule=TrainSchedule(0.005, 50000, (25000, 40000), batch_size=50),
            ),
            mil=MilConfig(schedule=TrainSchedule(0.001, 10000, (4000, 8000))),
        )
    raise ConfigError([f"unknown preset {name!r}; choose one of {PRESETS}"])


# -- parsing ----------------------------------------------------------------

_KEYS = {
    "pipeline": {"seed": int, "out_dir": str, "preset": str},
    "motiondata": {
        "size": int, "frames": int, "train_normal": int, "train_anomalous": int,
        "test_normal": int, "test_anomalous": int, "intervals": int,
        "anomaly_kinds": "strs", "block": int, "radius": int,
    },
    "tan": {
        "encoder_widths": "ints", "bottleneck": int, "steps": int, "batch_size": int,
        "learning_rate": float, "milestones": "ints",
    },
    "mil": {
        "segments": int, "bags_per_side": int, "steps": int, "lambda1": float,
        "dropout": float, "learning_rate": float, "mode": str, "attention_norm": str,
        "regressor_widths": "ints", "attention_widths": "ints", "milestones": "ints",
        "fuse_dir": str,
    },
    "eval": {"compare_modes": "strs", "plot": str},
}


def _convert(kind, text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if kind == "ints":
        return tuple(int(t) for t in items)
    if kind == "strs":
        return tuple(items)
    return kind(text.strip())


def parse_config_text(text):
    """Parse INI text into ``{section: {key: typed value}}``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"config syntax: {exc}"]) from exc
    raw, errors = {}, []
    for section in parser.sections():
        if section not in _KEYS:
            errors.append(f"unknown section [{section}]")
            continue
        raw[section] = {}
        for key, value in parser.items(section):
            kind = _KEYS[section].get(key)
            if kind is None:
                errors.append(f"unknown key {section}.{key}")
                continue
            try:
                raw[section][key] = _convert(kind, value)
            except ValueError:
                errors.append(f"{section}.{key}: cannot parse {value!r}")
    if errors:
        raise ConfigError(errors)
    return raw


def load_config(path=None, overrides=None):
    """Read ``path`` (optional), apply ``overrides`` and validate."""
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            raw = parse_config_text(f.read())
    for section, values in (overrides or {}).items():
        raw.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return validate_config(raw)


# -- validation -------------------------------------------------------------

def _schedule(base, values, prefix, errors):
    lr = values.get("learning_rate", base.learning_rate)
    steps = values.get("steps", base.total_steps)
    if "milestones" in values:
        milestones = values["milestones"]
    elif "steps" in values:
        # keep the preset's milestones at the same fractions of training
        scaled = (m * steps // base.total_steps for m in base.milestones)
        milestones = tuple(sorted({m for m in scaled if 0 < m < steps}))
    else:
        milestones = base.milestones
    batch = values.get("batch_size", base.batch_size)
    try:
        return TrainSchedule(lr, steps, milestones, batch_size=batch)
    except ValueError as exc:
        errors.append(f"{prefix}: {exc}")
        return base


def validate_config(raw=None):
    """Fill defaults from the preset and check every setting.

    Returns a :class:`PipelineConfig`; raises :class:`ConfigError` listing
    every problem.
    """
    raw = raw or {}
    errors = []
    pipe = raw.get("pipeline", {})
    name = pipe.get("preset", "desk")
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose one of {PRESETS}"])
    base = preset(name)

    d = raw.get("motiondata", {})
    data = replace(base.data, **d)
    size_ok = data.size >= 16 and data.size % 8 == 0
    if not size_ok:
        errors.append(f"motiondata.size must be a multiple of 8 and >= 16, got {data.size}")
    if min(data.train_normal, data.train_anomalous, data.test_normal, data.test_anomalous) < 1:
        errors.append("motiondata needs at least one normal and one anomalous video per split")
    if data.block < 1 or data.radius < 0:
        errors.append("motiondata.block must be >= 1 and radius >= 0")
    for split in ("train", "test"):
        try:
            data.dataset(split, 0).validate()
        except ValueError as exc:
            errors.append(f"motiondata: {exc}")
            break

    t = raw.get("tan", {})
    tan_sched = _schedule(base.tan.schedule, t, "tan", errors)
    tan = base.tan
    try:
        tan = replace(
            base.tan,
            size=data.size if size_ok else base.tan.size,
            encoder_widths=t.get("encoder_widths", base.tan.encoder_widths),
            bottleneck=t.get("bottleneck", base.tan.bottleneck),
            schedule=tan_sched,
        )
    except ValueError as exc:
        errors.append(f"tan: {exc}")
    if min(tan.encoder_widths + (tan.bottleneck,)) < 1:
        errors.append("tan widths must be positive")

    m = dict(raw.get("mil", {}))
    fuse_dir = m.pop("fuse_dir", "")
    mil_sched = _schedule(base.mil.schedule, m, "mil", errors)
    for key in ("learning_rate", "steps", "milestones", "batch_size"):
        m.pop(key, None)
    mil = base.mil
    try:
        mil = replace(base.mil, schedule=mil_sched, **m)
    except ValueError as exc:
        errors.extend(f"mil: {e}" for e in str(exc).split("; "))

    e = raw.get("eval", {})
    ev = replace(base.eval, **e)
    bad = [x for x in ev.compare_modes if x not in ("max", "attention")]
    if bad or not ev.compare_modes:
        errors.append(f"eval.compare_modes must list max and/or attention, got {ev.compare_modes}")
    if not ev.plot or "/" in ev.plot:
        errors.append(f"eval.plot must be a bare file name, got {ev.plot!r}")

    if errors:
        raise ConfigError(errors)
    return PipelineConfig(
        seed=pipe.get("seed", base.seed),
        out_dir=pipe.get("out_dir", base.out_dir),
        preset=name,
        data=data,
        tan=tan,
        mil=mil,
        eval=ev,
        fuse_dir=fuse_dir,
    )


def stage_seed(seed, stage):
    """Seed for ``stage``: first 4 bytes of SHA-256 of ``"<seed>:<stage>"``."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
