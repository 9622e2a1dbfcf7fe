import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from pbat.config import ModelConfig
from pbat.data import Vocab, make_masked_batch, split_interactions
from pbat.model import init_params
from pbat.synth import SynthConfig, synth_generate

settings.register_profile("pbat", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pbat")


def tiny_config(**kw) -> ModelConfig:
    base = dict(num_users=8, num_items=20, num_behaviors=3, D=8, L=8, heads=2, N_blocks=2,
                D_ff=16, dropout=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def tiny_split(cfg: ModelConfig, seed: int = 0):
    inter = synth_generate(SynthConfig(num_users=cfg.num_users, num_items=cfg.num_items,
                                       num_behaviors=cfg.num_behaviors, L=cfg.L, seed=seed))
    return split_interactions(inter, cfg.L, Vocab(cfg.num_users, cfg.num_items, cfg.num_behaviors))


@pytest.fixture
def tiny():
    """(config, params, split, batch) on the gradient-check configuration."""
    cfg = tiny_config()
    split = tiny_split(cfg)
    params = init_params(cfg)
    batch = make_masked_batch(split.train[:4], split.vocab, 0.3, 0)
    return cfg, params, split, batch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gaussians(rng, n, d, lo=0.1, hi=5.0):
    mu = torch.from_numpy(rng.uniform(-3, 3, size=(n, d)))
    var = torch.from_numpy(rng.uniform(lo, hi, size=(n, d)))
    return mu, var


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
