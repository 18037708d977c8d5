"""Run configuration: dataclasses plus a flat ``key = value`` file format.

Config files are plain text, one assignment per line, ``#`` comments and
blank lines ignored. Keys are exactly the dataclass field names; unknown
keys are an error so typos never pass silently.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


ABLATION_FLAGS = (
    "no_graph",    # bypass the marker-correlation graph layer
    "no_lc",       # drop the correlation-alignment loss term
    "no_dcc",      # drop the confidence-overlap loss term
    "no_disent",   # drop the disentanglement loss term
    "no_cmg",      # skip gradient modulation entirely
    "no_guide",    # ignore the batch histology vote; always modulate molecular grads
    "no_rescale",  # keep the projection but skip the norm-restoring rescale
)


@dataclass
class GenConfig:
    """Synthetic patch-bag generator settings."""

    n_cases: int = 300
    n_patches: int = 32
    feat_dim: int = 16
    signal_strength: float = 5.0
    evidence_fraction: float = 0.25
    p_idh_mut: float = 0.5
    p_codel_given_mut: float = 0.4
    p_cdkn: float = 0.4
    nmp_given_idhwt: float = 0.9
    nmp_given_idhmut: float = 0.03
    seed: int = 0


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 6
    lr: float = 0.003
    weight_decay: float = 1e-4
    # loss term weights
    w_glioma: float = 1.0
    w_molecular: float = 1.0
    w_histology: float = 1.0
    w_disent: float = 1.0
    w_lc: float = 1.0
    w_dcc: float = 1.0
    # confidence-overlap curriculum: top-M halves every `dcc_decay_every` epochs
    dcc_top_m: int = 8
    dcc_decay: float = 0.5
    dcc_decay_every: int = 10
    dcc_temperature: float = 1.0
    graph_alpha: float = 0.5
    val_fraction: float = 0.3
    seed: int = 0
    ablations: tuple = ()


def _parse_lines(text: str, path) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(name: str, ftype, raw: str, path):
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            items = tuple(s.strip() for s in raw.split(",") if s.strip())
            return items
        return raw
    except ValueError:
        raise ConfigError(f"{path}: field {name!r}: cannot parse {raw!r} as {ftype.__name__}") from None


def _load(cls, path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = _parse_lines(text, path)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        ftype = fields[name].type
        if isinstance(ftype, str):  # from __future__ annotations
            ftype = {"int": int, "float": float, "tuple": tuple, "str": str}[ftype]
        kwargs[name] = _coerce(name, ftype, value, path)
    cfg = cls(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg) -> None:
    if isinstance(cfg, GenConfig):
        if cfg.n_cases < 1 or cfg.n_patches < 1 or cfg.feat_dim < 1:
            raise ConfigError("n_cases, n_patches and feat_dim must all be >= 1")
        for name in ("evidence_fraction", "p_idh_mut", "p_codel_given_mut",
                     "p_cdkn", "nmp_given_idhwt", "nmp_given_idhmut"):
            v = getattr(cfg, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    elif isinstance(cfg, TrainConfig):
        if cfg.epochs < 1 or cfg.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 < cfg.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if cfg.dcc_top_m < 1 or cfg.dcc_decay_every < 1:
            raise ConfigError("dcc_top_m and dcc_decay_every must be >= 1")
        if not 0.0 <= cfg.graph_alpha <= 1.0:
            raise ConfigError("graph_alpha must lie in [0, 1]")
        bad = sorted(set(cfg.ablations) - set(ABLATION_FLAGS))
        if bad:
            raise ConfigError(
                f"unknown ablation flags: {', '.join(bad)} (known: {', '.join(ABLATION_FLAGS)})"
            )


def load_gen_config(path) -> GenConfig:
    return _load(GenConfig, path)


def load_train_config(path) -> TrainConfig:
    return _load(TrainConfig, path)


def format_config(cfg) -> str:
    """Render a config back into the flat key=value file format."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
