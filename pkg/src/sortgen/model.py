"""The slate value network.

A pre-norm causal transformer over the concatenated (item, position, user,
prior-score) feature blocks, with two head MLPs emitting per-position
threshold logits for the click and pay objectives. Each sigmoid output
p[i, j] reads "probability that the cumulative action count within the first
j positions is at least i"; entries with i > j are forced to zero since a
length-j prefix cannot contain more than j actions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sortgen import nn
from sortgen.core import ConfigError, EngineConfig, Item, UserContext, config_hash
from sortgen.nn import Var

HEAD_HIDDEN = 32

CKPT_FORMAT = "sortgen-ckpt-v1"


@dataclass(frozen=True)
class SurvivalMatrix:
    """values[j-1, i-1] = P(cumulative count in the length-j prefix >= i)."""

    values: np.ndarray  # [l, max_count]
    objective: str  # "click" | "pay"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass
class ModelOutput:
    """Batched forward results; probs are zero-masked where i > j."""

    click: Var  # [n, l, max_count]
    pay: Var
    click_logits: Var
    pay_logits: Var
    valid: np.ndarray  # [l, max_count] bool, True where i <= j

    def survival(self, k: int) -> tuple[SurvivalMatrix, SurvivalMatrix]:
        return (
            SurvivalMatrix(self.click.value[k], "click"),
            SurvivalMatrix(self.pay.value[k], "pay"),
        )


# ------------------------------ parameters ---------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: EngineConfig, seed: int | None = None) -> dict[str, Var]:
    """Fresh parameters: 1/sqrt(fan_in) uniform weights, zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d, dm, lmax = config.d_input, config.d_model, config.max_count
    p: dict[str, np.ndarray] = {}

    p["pos.table"] = rng.normal(0.0, 0.02, size=(config.l_o, config.d_position))
    p["proj.W"] = _uniform(rng, (d, dm), d)
    p["proj.b"] = np.zeros(dm)
    for i in range(config.n_layers):
        pre = f"layer{i}"
        p[f"{pre}.ln1.g"] = np.ones(dm)
        p[f"{pre}.ln1.b"] = np.zeros(dm)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            p[f"{pre}.attn.{name}"] = _uniform(rng, (dm, dm), dm)
        for name in ("bq", "bk", "bv", "bo"):
            p[f"{pre}.attn.{name}"] = np.zeros(dm)
        p[f"{pre}.ln2.g"] = np.ones(dm)
        p[f"{pre}.ln2.b"] = np.zeros(dm)
        p[f"{pre}.ffn.W1"] = _uniform(rng, (dm, 4 * dm), dm)
        p[f"{pre}.ffn.b1"] = np.zeros(4 * dm)
        p[f"{pre}.ffn.W2"] = _uniform(rng, (4 * dm, dm), 4 * dm)
        p[f"{pre}.ffn.b2"] = np.zeros(dm)
    p["final_ln.g"] = np.ones(dm)
    p["final_ln.b"] = np.zeros(dm)

    out_width = 1 if config.head_mode == "monotone" else lmax
    for head in ("head_click", "head_pay"):
        p[f"{head}.W1"] = _uniform(rng, (dm, HEAD_HIDDEN), dm)
        p[f"{head}.b1"] = np.zeros(HEAD_HIDDEN)
        p[f"{head}.W2"] = _uniform(rng, (HEAD_HIDDEN, out_width), HEAD_HIDDEN)
        p[f"{head}.b2"] = np.zeros(out_width)
        if config.head_mode == "monotone":
            p[f"{head}.thresholds"] = np.zeros(lmax)

    return {name: Var(arr) for name, arr in p.items()}


def expected_param_count(config: EngineConfig) -> int:
    """Closed-form parameter count for the configured shape."""
    d, dm, lmax = config.d_input, config.d_model, config.max_count
    n = config.l_o * config.d_position          # position table
    n += d * dm + dm                            # input projection
    per_layer = 2 * dm                          # ln1
    per_layer += 4 * dm * dm + 4 * dm           # attention
    per_layer += 2 * dm                         # ln2
    per_layer += dm * 4 * dm + 4 * dm + 4 * dm * dm + dm  # ffn
    n += config.n_layers * per_layer
    n += 2 * dm                                 # final ln
    out_width = 1 if config.head_mode == "monotone" else lmax
    per_head = dm * HEAD_HIDDEN + HEAD_HIDDEN + HEAD_HIDDEN * out_width + out_width
    if config.head_mode == "monotone":
        per_head += lmax
    n += 2 * per_head
    return n


# ------------------------------- forward -----------------------------------


def assemble_input(config: EngineConfig, params: dict, e_item: np.ndarray,
                   user: np.ndarray, e_score: np.ndarray) -> Var:
    """Concatenate item, position, user, and prior-score blocks to [n, l, d].

    e_item: [n, l, d_emb]; user: [n, d_user]; e_score: [n, l, 2].
    """
    n, l = e_item.shape[0], e_item.shape[1]
    if l == 0:
        raise ConfigError("empty sub-list")
    if l > config.l_o:
        raise ConfigError(f"sequence length {l} exceeds position table size {config.l_o}")
    if e_item.shape[2] != config.d_emb or user.shape[1] != config.d_user:
        raise ConfigError("feature width mismatch")
    pos = nn.tile_to(
        nn.reshape(nn.slice_axis0(params["pos.table"], 0, l), (1, l, config.d_position)),
        (n, l, config.d_position),
    )
    user_block = nn.tile_to(
        nn.reshape(Var(user), (n, 1, config.d_user)), (n, l, config.d_user)
    )
    return nn.concat([Var(e_item), pos, user_block, Var(e_score)], axis=-1)


def _mhsa(x: Var, params: dict, prefix: str, n_heads: int) -> Var:
    n, l, dm = x.shape
    dh = dm // n_heads

    def split(v: Var) -> Var:
        return nn.transpose(nn.reshape(v, (n, l, n_heads, dh)), (0, 2, 1, 3))

    q = split(nn.linear(x, params[f"{prefix}.Wq"], params[f"{prefix}.bq"]))
    k = split(nn.linear(x, params[f"{prefix}.Wk"], params[f"{prefix}.bk"]))
    v = split(nn.linear(x, params[f"{prefix}.Wv"], params[f"{prefix}.bv"]))
    scores = nn.mul(nn.matmul(q, nn.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    causal = np.tril(np.ones((l, l), dtype=bool))[None, None, :, :]
    att = nn.masked_softmax(scores, causal)
    out = nn.transpose(nn.matmul(att, v), (0, 2, 1, 3))
    out = nn.reshape(out, (n, l, dm))
    return nn.linear(out, params[f"{prefix}.Wo"], params[f"{prefix}.bo"])


def _ffn(x: Var, params: dict, prefix: str) -> Var:
    h = nn.relu(nn.linear(x, params[f"{prefix}.W1"], params[f"{prefix}.b1"]))
    return nn.linear(h, params[f"{prefix}.W2"], params[f"{prefix}.b2"])


def _head_logits(x: Var, params: dict, head: str, config: EngineConfig) -> Var:
    h = nn.relu(nn.linear(x, params[f"{head}.W1"], params[f"{head}.b1"]))
    out = nn.linear(h, params[f"{head}.W2"], params[f"{head}.b2"])
    if config.head_mode == "literal":
        return out  # [n, l, max_count], independent logits per threshold
    # Monotone ordinal link: shared score minus strictly increasing cutpoints.
    t = params[f"{head}.thresholds"]  # [max_count]
    first = nn.slice_axis0(t, 0, 1)
    rest = t if config.max_count == 1 else nn.slice_axis0(t, 1, config.max_count)
    if config.max_count > 1:
        softplus = nn.log(nn.add(1.0, nn.exp(rest)))
        steps = nn.concat([first, softplus], axis=0)
    else:
        steps = first
    lower = np.tril(np.ones((config.max_count, config.max_count)))
    cutpoints = nn.matmul(Var(lower), nn.reshape(steps, (config.max_count, 1)))
    return nn.add(out, nn.neg(nn.reshape(cutpoints, (config.max_count,))))


def valid_mask(l: int, max_count: int) -> np.ndarray:
    """True where threshold index i (1-based) <= prefix length j (1-based)."""
    return np.arange(1, max_count + 1)[None, :] <= np.arange(1, l + 1)[:, None]


def forward(config: EngineConfig, params: dict, e_item: np.ndarray,
            user: np.ndarray, e_score: np.ndarray) -> ModelOutput:
    """Full forward pass for a batch of (sub-)lists of common length l."""
    x = assemble_input(config, params, e_item, user, e_score)
    x = nn.linear(x, params["proj.W"], params["proj.b"])
    for i in range(config.n_layers):
        pre = f"layer{i}"
        x = nn.add(x, _mhsa(nn.layer_norm(x, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"]),
                            params, f"{pre}.attn", config.n_heads))
        x = nn.add(x, _ffn(nn.layer_norm(x, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"]),
                           params, f"{pre}.ffn"))
    x = nn.layer_norm(x, params["final_ln.g"], params["final_ln.b"])

    l = e_item.shape[1]
    mask = valid_mask(l, config.max_count)
    click_logits = _head_logits(x, params, "head_click", config)
    pay_logits = _head_logits(x, params, "head_pay", config)
    click = nn.mul(nn.sigmoid(click_logits), mask.astype(np.float64))
    pay = nn.mul(nn.sigmoid(pay_logits), mask.astype(np.float64))
    for out in (click, pay):
        if not np.isfinite(out.value).all():
            raise FloatingPointError("non-finite activations in forward pass")
    return ModelOutput(click, pay, click_logits, pay_logits, mask)


def item_features(items) -> tuple[np.ndarray, np.ndarray]:
    """Stack embeddings and (prior_ctr, prior_cvr) for a sequence of items."""
    emb = np.stack([it.embedding for it in items])
    score = np.array([[it.prior_ctr, it.prior_cvr] for it in items])
    return emb, score


def forward_items(config: EngineConfig, params: dict, items, user: UserContext) -> ModelOutput:
    """Convenience single-sequence forward (batch of one)."""
    emb, score = item_features(items)
    return forward(config, params, emb[None], user.user_features[None], score[None])


# ------------------------------ checkpoints --------------------------------


def save_checkpoint(path: str | Path, params: dict, config: EngineConfig) -> None:
    doc = {
        "format_version": CKPT_FORMAT,
        "config_hash": config_hash(config),
        "config": config.to_dict(),
        "params": {
            name: {"shape": list(p.value.shape), "data": [repr(float(v)) for v in p.value.ravel()]}
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, Var], EngineConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CKPT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    config = EngineConfig.from_dict(doc["config"])
    if config_hash(config) != doc["config_hash"]:
        raise ConfigError("checkpoint config hash mismatch")
    params = {}
    for name, entry in doc["params"].items():
        arr = np.array([float(v) for v in entry["data"]], dtype=np.float64)
        params[name] = Var(arr.reshape(entry["shape"]))
    return params, config
