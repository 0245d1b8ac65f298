import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sortgen.core import (
    ConfigError,
    EngineConfig,
    Item,
    ObjectiveWeights,
    QueueSpec,
    SubList,
    engine_config_from_raw,
    load_config_file,
    parse_config_text,
    validate_config,
)


def test_default_config_valid():
    validate_config(EngineConfig())


def test_paper_style_shape_accepted():
    # 10-position lists drawn from 3 queues over a 30-item pool.
    cfg = EngineConfig(l_s=30, l_o=10, max_count=10)
    assert len(cfg.queue_specs) == 3
    validate_config(cfg)


def test_l_o_exceeds_l_s():
    with pytest.raises(ConfigError, match="l_o exceeds l_s"):
        validate_config(EngineConfig(l_s=5, l_o=10, max_count=5))


def test_head_split_arithmetic():
    with pytest.raises(ConfigError, match="not divisible"):
        validate_config(EngineConfig(d_model=10, n_heads=3))


def test_max_count_capped_at_l_o():
    with pytest.raises(ConfigError, match="max_count"):
        validate_config(EngineConfig(l_o=10, max_count=11))


def test_empty_queue_specs():
    with pytest.raises(ConfigError, match="queue_specs"):
        validate_config(EngineConfig(queue_specs=()))


def test_duplicate_queue_priorities():
    specs = (QueueSpec("a", {"ctr": 1.0}, 0), QueueSpec("b", {"cvr": 1.0}, 0))
    with pytest.raises(ConfigError, match="duplicate"):
        validate_config(EngineConfig(queue_specs=specs))


def test_item_requires_unit_norm():
    with pytest.raises(ConfigError, match="norm"):
        Item(id=0, embedding=np.ones(8), price=1.0, prior_ctr=0.5,
             prior_cvr=0.5, category=0)


def test_item_rejects_bad_priors():
    emb = np.zeros(8)
    emb[0] = 1.0
    with pytest.raises(ConfigError):
        Item(id=0, embedding=emb, price=1.0, prior_ctr=1.5, prior_cvr=0.5, category=0)
    with pytest.raises(ConfigError):
        Item(id=0, embedding=emb, price=-1.0, prior_ctr=0.5, prior_cvr=0.5, category=0)


def test_weights_must_not_all_be_zero():
    with pytest.raises(ConfigError):
        ObjectiveWeights(0.0, 0.0, 0.0)


def test_sublist_rejects_duplicates():
    emb = np.zeros(8)
    emb[0] = 1.0
    it = Item(id=1, embedding=emb, price=1.0, prior_ctr=0.1, prior_cvr=0.1, category=0)
    with pytest.raises(ConfigError, match="duplicate"):
        SubList((it, it), (0, 0))


def test_config_file_round_trip(tmp_path):
    text = """
# engine shape
l_s = 20
l_o = 8
max_count = 8
d_model = 16
n_heads = 2
queue.click = ctr:1.0
queue.mixed = ctr:0.5,ctr_cvr:0.5
partition_strategy = bfs
lambda_mmr = 0.5
alpha = 2.0
beta = 1.0
gamma = 0.5
"""
    path = tmp_path / "engine.cfg"
    path.write_text(text)
    engine, weights, raw = load_config_file(path)
    assert engine.l_s == 20 and engine.l_o == 8
    assert engine.partition_strategy == "bfs"
    assert engine.queue_specs[1].coeffs == {"ctr": 0.5, "ctr_cvr": 0.5}
    assert weights.alpha == 2.0 and weights.gamma == 0.5


def test_config_file_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key"):
        engine_config_from_raw(parse_config_text("bogus = 1"))


def test_config_dict_round_trip():
    cfg = EngineConfig(l_s=15, l_o=6, max_count=6, partition_strategy="bfs")
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=30, deadline=None)
@given(
    l_o=st.integers(2, 8),
    extra=st.integers(0, 10),
    n_heads=st.sampled_from([1, 2, 4]),
    strategy=st.sampled_from(["dfs", "bfs"]),
)
def test_random_valid_configs_are_consumable(l_o, extra, n_heads, strategy):
    """Any config passing validation round-trips and builds a model."""
    from sortgen import model as sortmodel

    cfg = EngineConfig(l_s=l_o + extra, l_o=l_o, max_count=l_o, d_model=8 * n_heads,
                       n_heads=n_heads, n_layers=1, partition_strategy=strategy)
    validate_config(cfg)
    params = sortmodel.init_params(cfg, seed=0)
    assert "pos.table" in params
    assert EngineConfig.from_dict(cfg.to_dict()) == cfg
