"""Minimal HTTP rerank service: POST /rerank, GET /healthz.

Stateless per request; model parameters are loaded once and shared
read-only across the threaded handler pool.
"""

from __future__ import annotations

import json
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from sortgen import generation
from sortgen.core import ConfigError, EngineConfig, Item, ObjectiveWeights, UserContext
from sortgen.model import load_checkpoint


class RequestError(ValueError):
    """Malformed rerank request; message carries the offending field path."""


def parse_rerank_request(doc: dict, config: EngineConfig
                         ) -> tuple[UserContext, list[Item], ObjectiveWeights | None, float | None]:
    if not isinstance(doc, dict):
        raise RequestError("request: expected a key/value document")
    if "user" not in doc:
        raise RequestError("user: missing")
    try:
        user = UserContext(np.array([float(v) for v in doc["user"]]))
    except (TypeError, ValueError) as exc:
        raise RequestError(f"user: {exc}") from exc
    if user.user_features.shape[0] != config.d_user:
        raise RequestError(f"user: expected {config.d_user} features")
    if "candidates" not in doc or not isinstance(doc["candidates"], list):
        raise RequestError("candidates: missing or not a list")
    if len(doc["candidates"]) < config.l_o:
        raise RequestError("candidates: insufficient candidates")
    items = []
    for i, cand in enumerate(doc["candidates"]):
        try:
            items.append(Item(
                id=int(cand["id"]),
                embedding=np.array([float(v) for v in cand["emb"]]),
                price=float(cand["price"]),
                prior_ctr=float(cand["ctr"]),
                prior_cvr=float(cand["cvr"]),
                category=int(cand.get("cat", 0)),
            ))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise RequestError(f"candidates[{i}]: {exc}") from exc
        if items[-1].embedding.shape[0] != config.d_emb:
            raise RequestError(f"candidates[{i}].emb: expected {config.d_emb} components")
    weights = None
    if "weights" in doc:
        w = doc["weights"]
        try:
            weights = ObjectiveWeights(float(w["alpha"]), float(w["beta"]), float(w["gamma"]))
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise RequestError(f"weights: {exc}") from exc
    lam = None
    if "lambda" in doc:
        lam = float(doc["lambda"])
        if not 0.0 <= lam <= 1.0:
            raise RequestError("lambda: outside [0,1]")
    return user, items, weights, lam


def rerank(config: EngineConfig, params: dict, user: UserContext, items: list[Item],
           weights: ObjectiveWeights, lam: float | None = None) -> dict:
    start = time.perf_counter_ns()
    vm = generation.ValueModel(config, params)
    queues = generation.build_queues(items, config.queue_specs,
                                     config.partition_strategy, config.l_o)
    trace = generation.generate(items, user, queues, vm, weights, lam=lam)
    chosen = trace.result
    final_value = float(vm.combined_values([list(chosen.items)], user, weights)[0])
    latency = time.perf_counter_ns() - start
    return {
        "item_ids": [it.id for it in chosen.items],
        "source_queues": list(chosen.source_queues),
        "combined_value": final_value,
        "latency_ns": latency,
    }


class _State:
    def __init__(self):
        self.ready = False
        self.config: EngineConfig | None = None
        self.params: dict | None = None
        self.ckpt_hash = ""
        self.weights = ObjectiveWeights()


class RerankHandler(BaseHTTPRequestHandler):
    state: _State

    def log_message(self, fmt, *args):  # keep the test output quiet
        pass

    def _reply(self, code: int, doc: dict) -> None:
        body = json.dumps(doc, sort_keys=True).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/healthz":
            self._reply(404, {"error": "unknown route"})
            return
        if not self.state.ready:
            self._reply(503, {"status": "loading"})
            return
        self._reply(200, {"status": "ok", "checkpoint_hash": self.state.ckpt_hash})

    def do_POST(self):
        if self.path != "/rerank":
            self._reply(404, {"error": "unknown route"})
            return
        if not self.state.ready:
            self._reply(503, {"error": "checkpoint not loaded"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
            doc = json.loads(self.rfile.read(length))
            user, items, weights, lam = parse_rerank_request(doc, self.state.config)
        except RequestError as exc:
            self._reply(400, {"error": str(exc)})
            return
        except json.JSONDecodeError as exc:
            self._reply(400, {"error": f"body: invalid document: {exc}"})
            return
        weights = weights or self.state.weights
        self._reply(200, rerank(self.state.config, self.state.params, user, items,
                                weights, lam))


def make_server(ckpt_path: str, port: int,
                weights: ObjectiveWeights | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) the rerank server; checkpoint loads eagerly."""
    import hashlib
    from pathlib import Path

    state = _State()
    handler = type("BoundHandler", (RerankHandler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    params, config = load_checkpoint(ckpt_path)
    state.config = config
    state.params = params
    state.ckpt_hash = hashlib.sha256(Path(ckpt_path).read_bytes()).hexdigest()
    if weights is not None:
        state.weights = weights
    state.ready = True
    return server
