import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pbat.embedding import (INIT_STD, init_tables, lookup_entity, lookup_relation,
                            personalized_pattern, table_shapes)


@pytest.fixture(scope="module")
def tables():
    return init_tables(table_shapes(5, 20, 4, 8, 6), seed=3)


def test_shapes():
    s = table_shapes(5, 20, 4, 8, 6)
    assert s["item_mean"] == (22, 6) and s["user_mean"] == (5, 6)
    assert s["behavior_rawcov"] == (5, 6) and s["position_mean"] == (8, 6)
    assert s["relation_mean"] == (4, 4, 6)  # |B|=4 gives 16 relation entries


def test_init_deterministic_and_seed_sensitive():
    s = table_shapes(5, 20, 4, 8, 6)
    a, b, c = init_tables(s, 1), init_tables(s, 1), init_tables(s, 2)
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not torch.equal(a["item_mean"], c["item_mean"])


def test_init_std_within_one_percent():
    t = init_tables({"item_mean": (1000, 1000)}, seed=0)["item_mean"]
    assert t.numel() == 10**6
    assert float(t.std()) == pytest.approx(INIT_STD, rel=0.01)
    assert abs(float(t.mean())) < 3 * INIT_STD / 1000


def test_init_rejects_empty_shape():
    with pytest.raises(ValueError):
        init_tables({"item_mean": (0, 4)}, 0)


def test_lookup_entity(tables):
    g = lookup_entity(tables, "item", 0)
    assert torch.equal(g.mean, tables["item_mean"][0])
    assert (g.var > 0).all()
    pad = lookup_entity(tables, "item", 20)  # padding row exists
    assert torch.equal(pad.mean, tables["item_mean"][20])
    for kind, n in (("item", 22), ("user", 5), ("behavior", 5), ("position", 8)):
        with pytest.raises(IndexError):
            lookup_entity(tables, kind, n)
        with pytest.raises(IndexError):
            lookup_entity(tables, kind, -1)
    with pytest.raises(ValueError):
        lookup_entity(tables, "relation", 0)


def test_zero_rawcov_maps_to_unit_variance():
    t = {"item_mean": torch.zeros(3, 2), "item_rawcov": torch.zeros(3, 2)}
    assert lookup_entity(t, "item", 1).var.tolist() == [1.0, 1.0]


def test_relation_directed_and_pure(tables):
    a, b = lookup_relation(tables, 0, 1), lookup_relation(tables, 1, 0)
    assert not torch.equal(a.mean, b.mean)
    assert torch.equal(lookup_relation(tables, 0, 1).mean, a.mean)
    with pytest.raises(IndexError):
        lookup_relation(tables, 4, 0)


def test_pattern_fixed_point():
    t = {"user_mean": torch.tensor([[0.3, -0.2]], dtype=torch.float64),
         "user_rawcov": torch.tensor([[0.1, 0.5]], dtype=torch.float64)}
    t["behavior_mean"], t["behavior_rawcov"] = t["user_mean"].clone(), t["user_rawcov"].clone()
    p = personalized_pattern(t, 0, 0, torch.eye(2, dtype=torch.float64))
    assert torch.allclose(p.mean, t["user_mean"][0])
    assert torch.allclose(p.var, lookup_entity(t, "user", 0).var)


def test_pattern_large_behavior_variance_gives_user_mean():
    t = {"user_mean": torch.tensor([[1.0]], dtype=torch.float64), "user_rawcov": torch.zeros(1, 1, dtype=torch.float64),
         "behavior_mean": torch.tensor([[9.0]], dtype=torch.float64),
         "behavior_rawcov": torch.tensor([[1e7]], dtype=torch.float64)}
    p = personalized_pattern(t, 0, 0, torch.eye(1, dtype=torch.float64))
    assert p.mean.item() == pytest.approx(1.0, abs=1e-5)


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 10**6))
def test_pattern_envelope(u, b, seed):
    t = init_tables(table_shapes(5, 4, 4, 4, 6), seed=seed % 50)
    for k in ("user_rawcov", "behavior_rawcov"):
        t[k] = t[k] * 50  # spread variances well apart
    align = torch.eye(6, dtype=torch.float64)
    p = personalized_pattern(t, u, b, align)
    uv, bv = lookup_entity(t, "user", u).var, lookup_entity(t, "behavior", b).var
    assert (p.var >= torch.minimum(uv, bv) * (1 - 1e-12)).all()
    assert (p.var <= torch.maximum(uv, bv) * (1 + 1e-12)).all()
