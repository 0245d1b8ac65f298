"""Domain types, engine configuration, and validation.

Everything here is immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Item fields a queue score may combine. "ctr_cvr" is prior_ctr * prior_cvr,
# "ctr_cvr_price" additionally multiplies by price.
SCORE_TERMS = ("ctr", "cvr", "ctr_cvr", "price", "ctr_cvr_price")


class ConfigError(ValueError):
    """A configuration or domain-type invariant was violated."""


@dataclass(frozen=True)
class Item:
    """One candidate: identity, unit-norm embedding, price, prior scores."""

    id: int
    embedding: np.ndarray
    price: float
    prior_ctr: float
    prior_cvr: float
    category: int

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        object.__setattr__(self, "embedding", emb)
        emb.flags.writeable = False
        norm = float(np.linalg.norm(emb))
        if abs(norm - 1.0) > 1e-6:
            raise ConfigError(f"item {self.id}: embedding norm {norm:.8f} not unit")
        if not 0.0 <= self.prior_ctr <= 1.0:
            raise ConfigError(f"item {self.id}: prior_ctr outside [0,1]")
        if not 0.0 <= self.prior_cvr <= 1.0:
            raise ConfigError(f"item {self.id}: prior_cvr outside [0,1]")
        if self.price < 0:
            raise ConfigError(f"item {self.id}: negative price")


@dataclass(frozen=True)
class UserContext:
    """Raw user feature vector."""

    user_features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.user_features, dtype=np.float64)
        object.__setattr__(self, "user_features", feats)
        feats.flags.writeable = False


@dataclass(frozen=True)
class ObjectiveWeights:
    """Trade-off weights for click / conversion / GMV list values."""

    alpha: float = 5.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("objective weights must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ConfigError("objective weights sum to zero")


@dataclass(frozen=True)
class QueueSpec:
    """An objective queue: a weighted score over item fields plus a priority rank."""

    name: str
    coeffs: dict[str, float]
    priority: int

    def __post_init__(self):
        for key in self.coeffs:
            if key not in SCORE_TERMS:
                raise ConfigError(f"queue {self.name}: unknown score term {key!r}")
        if not any(c != 0.0 for c in self.coeffs.values()):
            raise ConfigError(f"queue {self.name}: all coefficients zero")


DEFAULT_QUEUE_SPECS = (
    QueueSpec("combined", {"ctr": 5.0, "ctr_cvr": 1.0, "ctr_cvr_price": 1.0}, priority=0),
    QueueSpec("pay", {"ctr_cvr": 1.0}, priority=1),
    QueueSpec("gmv", {"ctr_cvr_price": 1.0}, priority=2),
)


@dataclass(frozen=True)
class EngineConfig:
    """Shapes, generation knobs, and mode switches shared by all modules."""

    l_s: int = 30
    l_o: int = 10
    d_emb: int = 8
    d_user: int = 8
    d_position: int = 4
    d_score: int = 2
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    max_count: int = 10  # number of ordered-regression thresholds per position
    lambda_mmr: float = 0.8
    window_w: int = 5
    queue_specs: tuple[QueueSpec, ...] = DEFAULT_QUEUE_SPECS
    partition_strategy: str = "dfs"
    loss_mode: str = "ordered_regression"
    head_mode: str = "monotone"  # monotone | literal
    template_pattern: tuple[int, ...] = ()
    seed: int = 0

    @property
    def d_input(self) -> int:
        return self.d_emb + self.d_position + self.d_user + self.d_score

    def to_dict(self) -> dict:
        return {
            "l_s": self.l_s,
            "l_o": self.l_o,
            "d_emb": self.d_emb,
            "d_user": self.d_user,
            "d_position": self.d_position,
            "d_score": self.d_score,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "max_count": self.max_count,
            "lambda_mmr": self.lambda_mmr,
            "window_w": self.window_w,
            "queue_specs": [
                {"name": q.name, "coeffs": dict(sorted(q.coeffs.items())), "priority": q.priority}
                for q in self.queue_specs
            ],
            "partition_strategy": self.partition_strategy,
            "loss_mode": self.loss_mode,
            "head_mode": self.head_mode,
            "template_pattern": list(self.template_pattern),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        d["queue_specs"] = tuple(
            QueueSpec(q["name"], dict(q["coeffs"]), q["priority"]) for q in d["queue_specs"]
        )
        d["template_pattern"] = tuple(d.get("template_pattern", ()))
        return cls(**d)


def config_hash(config: EngineConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def validate_config(config: EngineConfig) -> None:
    """Raise ConfigError naming the first violated invariant."""
    if config.l_o > config.l_s:
        raise ConfigError("l_o exceeds l_s")
    if config.max_count > config.l_o:
        raise ConfigError("max_count exceeds l_o")
    if config.window_w < 1:
        raise ConfigError("window_w must be >= 1")
    if not 0.0 <= config.lambda_mmr <= 1.0:
        raise ConfigError("lambda_mmr outside [0,1]")
    if config.d_model % config.n_heads != 0:
        raise ConfigError("d_model not divisible by n_heads")
    for dim_name in ("l_s", "l_o", "d_emb", "d_user", "d_position", "d_model",
                     "n_layers", "n_heads", "max_count"):
        if getattr(config, dim_name) < 1:
            raise ConfigError(f"{dim_name} must be positive")
    if config.d_score != 2:
        raise ConfigError("d_score must be 2 (prior_ctr, prior_cvr)")
    if not config.queue_specs:
        raise ConfigError("empty queue_specs")
    priorities = [q.priority for q in config.queue_specs]
    if len(set(priorities)) != len(priorities):
        raise ConfigError("duplicate queue priorities")
    q = len(config.queue_specs)
    if q * config.l_o < config.l_o:
        raise ConfigError("queues cannot cover l_o picks")
    if config.partition_strategy not in ("dfs", "bfs"):
        raise ConfigError(f"unknown partition_strategy {config.partition_strategy!r}")
    if config.loss_mode not in ("ordered_regression", "pointwise"):
        raise ConfigError(f"unknown loss_mode {config.loss_mode!r}")
    if config.head_mode not in ("monotone", "literal"):
        raise ConfigError(f"unknown head_mode {config.head_mode!r}")
    if config.template_pattern:
        if len(config.template_pattern) != config.l_o:
            raise ConfigError("template_pattern length must equal l_o")
        if any(not 0 <= t < q for t in config.template_pattern):
            raise ConfigError("template_pattern indexes a missing queue")


@dataclass(frozen=True)
class SubList:
    """An ordered prefix of chosen items with their source-queue indices."""

    items: tuple[Item, ...]
    source_queues: tuple[int, ...]

    def __post_init__(self):
        if len(self.items) != len(self.source_queues):
            raise ConfigError("items and source_queues lengths differ")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate item ids in sub-list")

    def __len__(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------------------
# Plain-text key/value configuration files.
#
#   l_s = 30
#   queue.click = ctr:1.0
#   sim.sessions = 20000
#   train.lr = 0.001
# ---------------------------------------------------------------------------

_INT_KEYS = {"l_s", "l_o", "d_emb", "d_user", "d_position", "d_score", "d_model",
             "n_layers", "n_heads", "max_count", "window_w", "seed"}
_FLOAT_KEYS = {"lambda_mmr"}
_STR_KEYS = {"partition_strategy", "loss_mode", "head_mode"}


def parse_config_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def _parse_queue_value(name: str, value: str, priority: int) -> QueueSpec:
    coeffs: dict[str, float] = {}
    for part in value.split(","):
        term, _, coef = part.strip().partition(":")
        if not coef:
            raise ConfigError(f"queue.{name}: expected 'term:coefficient' pairs")
        coeffs[term.strip()] = float(coef)
    return QueueSpec(name, coeffs, priority)


def engine_config_from_raw(raw: dict[str, str]) -> EngineConfig:
    kwargs: dict = {}
    queue_specs = []
    for key, value in raw.items():
        if (key.startswith(("sim.", "train.", "bench.", "eval."))
                or key in ("alpha", "beta", "gamma")):
            continue
        if key.startswith("queue."):
            queue_specs.append(_parse_queue_value(key[6:], value, len(queue_specs)))
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in _STR_KEYS:
            kwargs[key] = value.lower()
        elif key == "template_pattern":
            kwargs["template_pattern"] = tuple(int(t) for t in value.split(",")) if value else ()
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if queue_specs:
        kwargs["queue_specs"] = tuple(queue_specs)
    config = EngineConfig(**kwargs)
    validate_config(config)
    return config


def weights_from_raw(raw: dict[str, str]) -> ObjectiveWeights:
    return ObjectiveWeights(
        alpha=float(raw.get("alpha", 5.0)),
        beta=float(raw.get("beta", 1.0)),
        gamma=float(raw.get("gamma", 1.0)),
    )


def load_config_file(path: str | Path) -> tuple[EngineConfig, ObjectiveWeights, dict[str, str]]:
    """Parse a key/value config file; returns (engine config, weights, raw map)."""
    raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return engine_config_from_raw(raw), weights_from_raw(raw), raw
