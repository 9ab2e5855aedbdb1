"""Run configuration: typed defaults, flat ``key = value`` files, presets.

Config file format: one ``key = value`` per line, ``#`` starts a comment,
blank lines are ignored.  Keys are the field names of :class:`RunConfig`;
unknown keys and badly typed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .decode import BinSpec, DecoderSpecs
from .geometry import COMPOSE_ORDERS, CORNER_MODES
from .loss import VIOLATION_MODES, LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_seed: int = 0
    n_scenes: int = 500
    data_path: str = ""  # empty: generate n_scenes in memory from data_seed
    # graph construction
    prune: bool = True
    k_clusters: int = 3
    prune_scope: str = "target"
    d_pe: int = 16
    sigmoid_rescale: bool = False
    learn_wg: bool = True
    # network
    d_model: int = 64
    t_iter: int = 2
    # decoders
    theta_bins: int = 12
    depth_bins: int = 8
    depth_lo: float = 0.3
    depth_hi: float = 6.3
    logsize_bins: int = 6
    logsize_lo: float = math.log(0.1)
    logsize_hi: float = math.log(3.0)
    # fusion
    fusion: bool = True
    fuse_alpha: float = 0.6
    fuse_beta: float = 0.4
    fusion_first_term: str = "independent"
    compose_order: str = "relative_first"
    corner_mode: str = "literal"
    # losses
    relative_losses: bool = True
    lambda1: float = 0.75
    lambda2: float = 0.6
    lambda3: float = 0.8
    lambda_reg: float = 1.0
    violation_mode: str = "overlap"
    holistic_weighting: str = "relatedness"
    holistic_source: str = "ground_truth"
    # optimization
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    # evaluation
    iou_threshold: float = 0.15
    scale_mode: str = "axis"

    def __post_init__(self):
        validate(self)

    @property
    def decoder_specs(self) -> DecoderSpecs:
        return DecoderSpecs(
            BinSpec(self.theta_bins, -math.pi, math.pi),
            BinSpec(self.depth_bins, self.depth_lo, self.depth_hi),
            BinSpec(self.logsize_bins, self.logsize_lo, self.logsize_hi),
        )

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda_reg)

    def to_text(self) -> str:
        return "".join(f"{k} = {_render(v)}\n" for k, v in asdict(self).items())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def with_overrides(self, pairs: dict) -> "RunConfig":
        return replace(self, **coerce(pairs))


CHOICES = {
    "prune_scope": ("target", "global"),
    "fusion_first_term": ("independent", "composed"),
    "compose_order": COMPOSE_ORDERS,
    "corner_mode": CORNER_MODES,
    "violation_mode": VIOLATION_MODES,
    "holistic_weighting": ("relatedness", "mean"),
    "holistic_source": ("ground_truth", "predicted"),
    "scale_mode": ("axis", "volume"),
}

POSITIVE_INTS = ("n_scenes", "k_clusters", "d_model", "t_iter", "theta_bins", "depth_bins", "logsize_bins", "epochs", "batch_size")
NON_NEGATIVE = ("lambda1", "lambda2", "lambda3", "lambda_reg")


def validate(cfg: RunConfig) -> None:
    for name, allowed in CHOICES.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name} must be one of {allowed}, got {getattr(cfg, name)!r}")
    for name in POSITIVE_INTS:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    for name in NON_NEGATIVE:
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    if cfg.d_model % 2 or cfg.d_pe % 2 or cfg.d_pe < 2:
        raise ConfigError("d_model and d_pe must be even (d_pe >= 2)")
    if not (0 <= cfg.fuse_alpha <= 1 and 0 <= cfg.fuse_beta <= 1) or abs(cfg.fuse_alpha + cfg.fuse_beta - 1) > 1e-12:
        raise ConfigError(f"fuse_alpha + fuse_beta must be 1, got {cfg.fuse_alpha} + {cfg.fuse_beta}")
    if not (0 < cfg.depth_lo < cfg.depth_hi) or not cfg.logsize_lo < cfg.logsize_hi:
        raise ConfigError("bin ranges must be increasing (depth_lo > 0)")
    if not cfg.lr > 0 or not 0 < cfg.iou_threshold <= 1:
        raise ConfigError("lr must be > 0 and iou_threshold in (0, 1]")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(name, raw):
    typ = _TYPES[name]
    raw = raw.strip() if isinstance(raw, str) else raw
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name} ({typ}): {raw!r}") from None


def coerce(pairs: dict) -> dict:
    unknown = sorted(set(pairs) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return {k: _parse_value(k, v) for k, v in pairs.items()}


def parse_pairs(lines) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: dict | None = None, base: RunConfig | None = None) -> RunConfig:
    """Defaults, then file values, then ``overrides`` (e.g. command-line flags)."""
    pairs = {}
    if path is not None:
        try:
            pairs.update(parse_pairs(Path(path).read_text().splitlines()))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    pairs.update(overrides or {})
    try:
        return (base or RunConfig()).with_overrides(pairs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# Graph / loss switches of the ablation configurations.
ABLATIONS = {
    "C0": {"prune": False, "relative_losses": False, "fusion": False},
    "C1": {"prune": True, "relative_losses": False, "fusion": False},
    "C2": {"prune": False, "relative_losses": True, "fusion": True},
    "Full": {"prune": True, "relative_losses": True, "fusion": True},
}


def ablation_config(base: RunConfig, name: str) -> RunConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return replace(base, **ABLATIONS[name])
