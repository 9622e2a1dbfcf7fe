import math

import numpy as np
import pytest
import torch

from pbat.data import Vocab, fixed_mask_batch, make_masked_batch
from pbat.encoder import encode
from pbat.model import init_params, param_shapes
from pbat.training import (AdamState, adam_step, backward, cloze_loss, fit, grad_check, item_scores,
                           refine_state, score_item, train_epoch)

from conftest import tiny_config, tiny_split


def test_init_layout(tiny):
    cfg, params, _, _ = tiny
    shapes = param_shapes(cfg)
    assert set(params.names()) == set(shapes)
    assert all(tuple(params[k].shape) == s for k, s in shapes.items())
    assert torch.equal(params["pattern_align"], torch.eye(cfg.D, dtype=torch.float64))
    assert torch.equal(params["blocks.1.head0.ip_align"], torch.eye(cfg.d_head, dtype=torch.float64))
    assert (params["blocks.0.ln1_mu_g"] == 1).all() and (params["blocks.0.ffl_sig_b2"] == 0).all()
    assert params["blocks.0.ffl_mu_w1"].shape == (cfg.num_behaviors + 1, cfg.D, cfg.D_ff)


def test_score_item_maximal_for_identical_item(tiny):
    cfg, params, split, batch = tiny
    p = params.clone()
    state = encode(p, *(torch.from_numpy(a) for a in (batch.items, batch.behaviors, batch.users, batch.valid_len)))
    hat_mu, hat_var = refine_state(p, state.mean[0, 0], state.var[0, 0], int(batch.users[0]), 2)
    # plant an item whose Gaussian equals the refined state (rawcov = elu^-1(var))
    p.tensors["item_mean"][3] = hat_mu
    p.tensors["item_rawcov"][3] = torch.where(hat_var >= 1, hat_var - 1, torch.log(hat_var))
    s = score_item(p, state, 0, 0, int(batch.users[0]), 2, 3)
    assert s == pytest.approx(0.0, abs=1e-12)
    others = item_scores(p, hat_mu[None], hat_var[None], torch.arange(cfg.num_items)[None])[0]
    assert int(others.argmax()) == 3


def test_score_monotone_in_mean_distance(tiny):
    _, params, _, _ = tiny
    p = params.clone()
    hat_mu = torch.zeros(1, 8, dtype=torch.float64)
    hat_var = torch.ones(1, 8, dtype=torch.float64)
    p.tensors["item_rawcov"][:2] = 0.0
    p.tensors["item_mean"][0] = 0.5
    p.tensors["item_mean"][1] = 1.0
    s = item_scores(p, hat_mu, hat_var, torch.tensor([[0, 1]]))[0]
    assert s[0] > s[1]


def test_loss_zero_scores_is_two_ln2(monkeypatch, tiny):
    _, params, _, batch = tiny
    import pbat.training as tr
    monkeypatch.setattr(tr, "item_scores", lambda p, m, v, ids: torch.zeros(len(m), dtype=torch.float64) + 0 * m.sum())
    loss = cloze_loss(params, batch)
    assert float(loss) == pytest.approx(batch.num_masked * 2 * math.log(2), rel=1e-12)


def test_loss_saturation_limit(monkeypatch, tiny):
    _, params, _, batch = tiny
    import pbat.training as tr
    calls = iter([40.0, -40.0])
    monkeypatch.setattr(tr, "item_scores", lambda p, m, v, ids: torch.full((len(m),), next(calls), dtype=torch.float64))
    assert float(cloze_loss(params, batch)) < 1e-15


def test_loss_nonnegative_finite(tiny):
    _, params, split, _ = tiny
    for seed in range(3):
        batch = make_masked_batch(split.train, split.vocab, 0.4, seed)
        loss = float(cloze_loss(params, batch))
        assert math.isfinite(loss) and loss >= 0


def test_no_masked_positions(tiny):
    cfg, params, split, _ = tiny
    rows = split.train[:3]
    batch = fixed_mask_batch(rows, np.zeros((3, cfg.L), dtype=bool), split.vocab)
    loss, grads = backward(params, batch)
    assert float(loss) == 0.0
    assert all((g == 0).all() for g in grads.values())


def test_dead_path_gradients_exactly_zero(tiny):
    cfg, params, split, batch = tiny
    _, grads = backward(params, batch)
    used = set(np.unique(batch.behaviors).tolist())
    for b in range(cfg.num_behaviors + 1):
        if b not in used:
            assert (grads["blocks.0.ffl_mu_w1"][b] == 0).all()
    users = set(batch.users.tolist())
    for u in range(cfg.num_users):
        if u not in users:
            assert (grads["user_mean"][u] == 0).all()
    # the [mask] row is used, never-seen items outside targets/negatives/inputs are not
    touched = set(batch.items.ravel()) | set(batch.targets.ravel()) | set(batch.negatives.ravel())
    for v in range(cfg.num_items):
        if v not in touched:
            assert (grads["item_mean"][v] == 0).all()


def test_nonfinite_gradient_names_group(monkeypatch, tiny):
    _, params, _, batch = tiny
    p = params.clone()
    p.tensors["blocks.0.ln1_mu_g"][0] = float("nan")
    with pytest.raises(FloatingPointError):
        backward(p, batch)


def test_grad_check_passes_tiny_config(tiny):
    _, params, _, batch = tiny
    rep = grad_check(params, batch, 1e-4, coords_per_group=3)
    assert rep.ok, rep.summary()


def test_grad_check_flags_corrupted_group(tiny):
    _, params, _, batch = tiny
    _, grads = backward(params, batch)
    grads = dict(grads)
    grads["user_mean"] = grads["user_mean"] + 1.0
    rep = grad_check(params, batch, 1e-4, coords_per_group=2, grads=grads)
    assert rep.failures == ["user_mean"]
    assert "FAIL" in rep.summary()


# --- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_is_noop(tiny):
    _, params, _, _ = tiny
    p = params.clone()
    before = p.clone()
    adam_step(p, {k: torch.zeros_like(v) for k, v in p.tensors.items()}, AdamState(lr=0.1))
    assert all(torch.equal(p[k], before[k]) for k in p.names())


def test_adam_first_step_magnitude_is_lr():
    from pbat.model import ModelParams
    p = ModelParams(tiny_config(), {"w": torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)})
    adam_step(p, {"w": torch.tensor([0.5, -3.0, 1e-3], dtype=torch.float64)}, AdamState(lr=0.01))
    assert (p["w"] - torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)).tolist() == pytest.approx(
        [-0.01, 0.01, -0.01], rel=1e-4)


def test_adam_second_step_closed_form():
    from pbat.model import ModelParams
    p = ModelParams(tiny_config(), {"w": torch.zeros(1, dtype=torch.float64)})
    st = AdamState(lr=1.0)
    adam_step(p, {"w": torch.tensor([1.0], dtype=torch.float64)}, st)
    adam_step(p, {"w": torch.tensor([2.0], dtype=torch.float64)}, st)
    m = (0.9 * 0.1 * 1 + 0.1 * 2) / (1 - 0.9 ** 2)
    v = (0.999 * 0.001 * 1 + 0.001 * 4) / (1 - 0.999 ** 2)
    first = 1.0 / (1.0 + 1e-8)
    assert float(p["w"]) == pytest.approx(-first - m / (math.sqrt(v) + 1e-8), rel=1e-12)


def test_adam_shape_mismatch():
    from pbat.model import ModelParams
    p = ModelParams(tiny_config(), {"w": torch.zeros(2)})
    with pytest.raises(ValueError):
        adam_step(p, {"w": torch.zeros(3)}, AdamState(lr=0.1))


# --- loop -------------------------------------------------------------------

def test_lr_zero_leaves_params(tiny):
    _, params, split, _ = tiny
    p = params.clone()
    rep = train_epoch(split, p, AdamState(lr=0.0), 0, batch_size=4, rho=0.3, seed=0)
    assert math.isfinite(rep.loss) and rep.masked > 0
    assert all(torch.equal(p[k], params[k]) for k in p.names())


def test_training_deterministic():
    cfg = tiny_config(dropout=0.2)
    split = tiny_split(cfg)
    runs = []
    for _ in range(2):
        p = init_params(cfg)
        reps = fit(split, p, 3, batch_size=4, rho=0.3, lr=0.01, seed=5)
        runs.append(([r.loss for r in reps], p))
    assert runs[0][0] == runs[1][0]
    assert all(torch.equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1].names())


def test_fit_logs_json_lines(tiny):
    import io
    import json
    _, params, split, _ = tiny
    buf = io.StringIO()
    fit(split, params.clone(), 2, batch_size=4, rho=0.3, lr=0.01, seed=0, log=buf)
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["epoch"] for r in recs] == [0, 1]
    assert set(recs[0]) == {"epoch", "loss", "masked", "secs"}


def test_empty_training_set(tiny):
    _, params, split, _ = tiny
    from dataclasses import replace
    with pytest.raises(ValueError):
        train_epoch(replace(split, train=[]), params, AdamState(lr=0.1), 0, batch_size=2, rho=0.2, seed=0)
