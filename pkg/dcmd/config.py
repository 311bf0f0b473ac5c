"""Run configuration: dataclasses, JSON documents, presets and CLI overrides.

A run config is a JSON document nested by section::

    {"window": {...}, "denoiser": {...}, "autoencoder": {...},
     "train": {...}, "scoring": {...}, "data": {...}, "output_dir": "runs/x"}

Keys in ``train`` mirror the training hyperparameter names (``lambda``,
``T``, ``beta1``, ``betaT`` included). Unknown keys are rejected.
"""

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from data.poses import COCO_EDGES, N_COORDS, N_JOINTS
from dcmd.errors import ConfigError

SCHEDULES = ("cosine-beta", "cosine-alpha-bar")
VARIANCES = ("beta", "posterior")
TRACK_FORMATS = ("native-json", "trajectory-csv")
SAMPLE_REDUCE = ("min", "mean")
ACTOR_REDUCE = ("max", "mean")
WINDOW_REDUCE = ("mean", "max")
NORMALIZE = ("none", "per-clip-minmax")
ATTRIBUTION = ("role", "window")
REC_UNIT = ("mean", "sum")


def _key(name: str):
    return {"key": name}


@dataclass
class WindowConfig:
    history: int = 3
    future: int = 4
    stride: int = 1
    test_stride: int = 1
    joints: int = N_JOINTS
    coords: int = N_COORDS

    @property
    def length(self) -> int:
        return self.history + self.future


@dataclass
class DenoiserConfig:
    layers: int = 6
    heads: int = 8
    hidden: int = 512
    # Derived from the window / autoencoder when left unset.
    cond_dim: int | None = None
    seq_len: int | None = None
    in_dim: int | None = None
    dropout: float = 0.0
    # None means sqrt(2 * hidden).
    attention_scale: float | None = None
    skip_connections: bool = True


@dataclass
class AutoencoderConfig:
    hidden_channels: tuple[int, ...] = (512, 256)
    embedding_dim: int = 256
    temporal_kernel: int = 3
    joints: int | None = None
    coords: int | None = None
    history: int | None = None
    edges: tuple[tuple[int, int], ...] | None = None


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay_every: int = 36
    lr_decay_factor: float = 0.5
    batch_size: int = 1024
    epochs: int = 100
    lam: float = field(default=0.01, metadata=_key("lambda"))
    seed: int = 0
    steps: int = field(default=10, metadata=_key("T"))
    beta1: float = 1e-4
    beta_t: float = field(default=2e-2, metadata=_key("betaT"))
    schedule: str = "cosine-beta"
    variance: str = "beta"
    minimax: bool = True
    smooth_l1_beta: float = 1.0
    use_dct: bool = True
    use_conditioned_embedding: bool = True
    device: str = "cpu"


@dataclass
class ScoringOptions:
    n_samples: int = 5
    sample_reduce: str = "min"
    branch_weight: float = 0.5
    actor_reduce: str = "max"
    window_reduce: str = "mean"
    normalize: str = "per-clip-minmax"
    attribution: str = "role"
    rec_unit: str = "mean"
    mask_completion: bool = True
    batch_size: int = 512


@dataclass
class DataPaths:
    train: str | None = None
    test: str | None = None
    labels: str | None = None
    format: str = "native-json"


SECTIONS = {
    "window": WindowConfig,
    "denoiser": DenoiserConfig,
    "autoencoder": AutoencoderConfig,
    "train": TrainConfig,
    "scoring": ScoringOptions,
    "data": DataPaths,
}


@dataclass
class RunConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringOptions = field(default_factory=ScoringOptions)
    data: DataPaths = field(default_factory=DataPaths)
    output_dir: str = "runs/dcmd"

    # -- documents ---------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("run config must be a JSON object")
        kwargs = {}
        for name, value in doc.items():
            if name == "output_dir":
                kwargs[name] = str(value)
            elif name in SECTIONS:
                kwargs[name] = section_from_dict(SECTIONS[name], value, name)
            else:
                raise ConfigError(f"unknown config key '{name}'")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        doc = {name: section_to_dict(getattr(self, name)) for name in SECTIONS}
        doc["output_dir"] = self.output_dir
        return doc

    # -- derived fields ----------------------------------------------------

    def resolved(self) -> "RunConfig":
        """Copy with every derived field filled in; raises ConfigError on conflicts."""
        w = self.window
        ae = replace(
            self.autoencoder,
            joints=_derive(self.autoencoder.joints, w.joints, "autoencoder.joints"),
            coords=_derive(self.autoencoder.coords, w.coords, "autoencoder.coords"),
            history=_derive(self.autoencoder.history, w.history, "autoencoder.history"),
            edges=self.autoencoder.edges if self.autoencoder.edges is not None else _default_edges(w.joints),
        )
        den = replace(
            self.denoiser,
            seq_len=_derive(self.denoiser.seq_len, w.length, "denoiser.seq_len"),
            in_dim=_derive(self.denoiser.in_dim, w.joints * w.coords, "denoiser.in_dim"),
            cond_dim=_derive(self.denoiser.cond_dim, ae.embedding_dim, "denoiser.cond_dim"),
        )
        cfg = replace(self, autoencoder=ae, denoiser=den)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        w, d, a, t, s = self.window, self.denoiser, self.autoencoder, self.train, self.scoring
        _positive("window", w, "history", "future", "stride", "test_stride", "joints", "coords")
        _positive("denoiser", d, "layers", "heads", "hidden")
        if d.hidden % d.heads:
            raise ConfigError(f"denoiser.hidden ({d.hidden}) must be divisible by denoiser.heads ({d.heads})")
        if not 0.0 <= d.dropout < 1.0:
            raise ConfigError("denoiser.dropout must be in [0, 1)")
        if d.attention_scale is not None and d.attention_scale <= 0:
            raise ConfigError("denoiser.attention_scale must be positive")
        if not a.hidden_channels or any(int(c) <= 0 for c in a.hidden_channels):
            raise ConfigError("autoencoder.hidden_channels must be a non-empty list of positive ints")
        _positive("autoencoder", a, "embedding_dim", "temporal_kernel")
        if a.temporal_kernel % 2 == 0:
            raise ConfigError("autoencoder.temporal_kernel must be odd")
        n_joints = a.joints or w.joints
        for i, j in a.edges or ():
            if not (0 <= i < n_joints and 0 <= j < n_joints):
                raise ConfigError(f"autoencoder.edges: edge ({i}, {j}) out of range for {n_joints} joints")
        _positive("train", t, "lr", "lr_decay_every", "batch_size", "epochs", "steps", "smooth_l1_beta")
        if not 0.0 < t.lr_decay_factor <= 1.0:
            raise ConfigError("train.lr_decay_factor must be in (0, 1]")
        if t.lam < 0:
            raise ConfigError("train.lambda must be >= 0")
        if not 0.0 < t.beta1 <= t.beta_t < 1.0:
            raise ConfigError(f"train.beta1/betaT must satisfy 0 < beta1 <= betaT < 1, got {t.beta1}, {t.beta_t}")
        _choice("train.schedule", t.schedule, SCHEDULES)
        _choice("train.variance", t.variance, VARIANCES)
        _positive("scoring", s, "n_samples", "batch_size")
        if not 0.0 <= s.branch_weight <= 1.0:
            raise ConfigError("scoring.branch_weight must be in [0, 1]")
        _choice("scoring.sample_reduce", s.sample_reduce, SAMPLE_REDUCE)
        _choice("scoring.actor_reduce", s.actor_reduce, ACTOR_REDUCE)
        _choice("scoring.window_reduce", s.window_reduce, WINDOW_REDUCE)
        _choice("scoring.normalize", s.normalize, NORMALIZE)
        _choice("scoring.attribution", s.attribution, ATTRIBUTION)
        _choice("scoring.rec_unit", s.rec_unit, REC_UNIT)
        _choice("data.format", self.data.format, TRACK_FORMATS)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def json_key(f) -> str:
    return f.metadata.get("key", f.name)


def section_from_dict(cls, doc, section: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section '{section}' must be a JSON object")
    by_key = {json_key(f): f for f in fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        f = by_key.get(key)
        if f is None:
            raise ConfigError(f"unknown config key '{section}.{key}'")
        kwargs[f.name] = _normalise(f.name, value)
    return cls(**kwargs)


def section_to_dict(obj) -> dict:
    doc = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        doc[json_key(f)] = value
    return doc


def _normalise(name: str, value):
    if name == "hidden_channels" and value is not None:
        return tuple(int(v) for v in value)
    if name == "edges" and value is not None:
        return tuple((int(i), int(j)) for i, j in value)
    return value


def _derive(current, expected, key: str):
    if current is None:
        return expected
    if current != expected:
        raise ConfigError(f"{key}={current} conflicts with the window/joint layout (expected {expected})")
    return current


def _default_edges(n_joints: int):
    return COCO_EDGES if n_joints == N_JOINTS else ()


def _positive(section: str, obj, *names) -> None:
    for name in names:
        value = getattr(obj, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            f = next(f for f in fields(obj) if f.name == name)
            raise ConfigError(f"{section}.{json_key(f)} must be a positive number, got {value!r}")


def _choice(key: str, value, options) -> None:
    if value not in options:
        raise ConfigError(f"{key} must be one of {', '.join(options)}, got {value!r}")


# ---------------------------------------------------------------------------
# Files, presets, overrides
# ---------------------------------------------------------------------------

PRESETS: dict[str, dict] = {
    "full": {},
    "desk": {
        "denoiser": {"layers": 2, "heads": 4, "hidden": 64},
        "autoencoder": {"hidden_channels": [64, 32], "embedding_dim": 64},
        "train": {"batch_size": 64, "lr": 1e-3, "epochs": 30, "lr_decay_every": 10},
        "scoring": {"batch_size": 256},
    },
}


def merge_documents(base: dict, override: dict) -> dict:
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def preset_config(name: str = "full", doc: dict | None = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})")
    return RunConfig.from_dict(merge_documents(PRESETS[name], doc or {}))


def load_run_config(path, preset: str = "full") -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
    return preset_config(preset, doc)


def parse_value(text: str):
    """Flag values are JSON where they parse as JSON, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Apply ``{"train.lr": 1e-3, ...}`` on top of ``cfg`` (values already parsed)."""
    doc = cfg.to_dict()
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            if section != "output_dir":
                raise ConfigError(f"unknown config key '{dotted}'")
            doc["output_dir"] = value
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key '{dotted}'")
        doc[section][key] = value
    return RunConfig.from_dict(doc)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
