import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cplcalib.camera_model import CameraParams, PixelObservation
from cplcalib.cpl import (
    N_PARAMS,
    PARAM_INDEX,
    PARAM_NAMES,
    AdaptiveWeights,
    CorrespondenceSet,
    LossReport,
    baseline_loss,
    cpl_loss,
    cpl_loss_grad,
    decomposed_loss,
    decomposed_terms,
    decomposed_terms_and_grad,
    finite_difference_jacobian,
    grad_world_point,
    hybrid_vectors,
    relative_error,
    set_jacobian,
    update_adaptive_weights,
    world_point_jacobian,
)
from cplcalib.errors import ShapeMismatch, ZeroDisparity

from conftest import cvgl_params
from oracles import cpl_naive, decomposed_naive


def random_pair(rng, n=50):
    from cplcalib import datagen

    ranges = datagen.PRESETS["cvgl"]
    gt = np.concatenate([datagen.sample_config(ranges, rng).to_array(), rng.uniform(-100, 100, 3)])
    pred = np.concatenate([datagen.sample_config(ranges, rng).to_array(), rng.uniform(-100, 100, 3)])
    obs = CorrespondenceSet(rng.uniform(0, 112, n), rng.uniform(0, 112, n))
    return gt, pred, obs


def test_names_are_total_and_stable():
    assert len(PARAM_NAMES) == N_PARAMS == 13
    assert PARAM_NAMES[:10] == ("fx", "fy", "u0", "v0", "b", "d", "theta_p", "tx", "ty", "tz")
    assert all(PARAM_NAMES[PARAM_INDEX[k]] == k for k in PARAM_NAMES)


def test_tx_shift_costs_a_third_of_the_shift():
    gt = np.array([50.0, 50.0, 56.0, 56.0, -60.0, 4.0, 0.0, -20.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    pred = gt.copy()
    pred[PARAM_INDEX["tx"]] += 0.75
    obs = CorrespondenceSet([30.0], [70.0])
    assert cpl_loss(gt, pred, obs) == pytest.approx(0.25, abs=1e-15)


def test_cpl_matches_naive_loop():
    rng = np.random.default_rng(11)
    for _ in range(20):
        gt, pred, obs = random_pair(rng)
        ref = cpl_naive(gt, pred, obs.u, obs.v)
        assert abs(cpl_loss(gt, pred, obs) - ref) <= 1e-12 * max(1.0, ref)


def test_decomposition_matches_explicit_hybrids():
    rng = np.random.default_rng(12)
    gt, pred, obs = random_pair(rng)
    terms = decomposed_terms(gt, pred, obs)
    ref = decomposed_naive(gt, pred, obs.u, obs.v)
    assert np.allclose(terms, ref, rtol=1e-12, atol=1e-12)
    h = hybrid_vectors(gt, pred)
    for k in range(13):
        assert np.array_equal(np.delete(h[k], k), np.delete(gt, k)) and h[k, k] == pred[k]


def test_identical_vectors_give_zero_terms():
    rng = np.random.default_rng(13)
    gt, _, obs = random_pair(rng)
    rep = decomposed_loss(gt, gt, obs)
    assert rep.total == 0.0 and not np.any(rep.per_param)


@pytest.mark.parametrize("name", PARAM_NAMES)
def test_single_component_change_gives_one_term(name):
    rng = np.random.default_rng(14)
    gt, pred, obs = random_pair(rng)
    one = gt.copy()
    one[PARAM_INDEX[name]] = pred[PARAM_INDEX[name]]
    rep = decomposed_loss(gt, one, obs)
    nonzero = np.flatnonzero(rep.per_param)
    if name in ("u0", "v0"):  # CVGL fixes the principal point, so gt == pred here
        one[PARAM_INDEX[name]] += 3.0
        rep = decomposed_loss(gt, one, obs)
        nonzero = np.flatnonzero(rep.per_param)
    assert nonzero.tolist() == [PARAM_INDEX[name]]
    assert rep.total == pytest.approx(rep.per_param[PARAM_INDEX[name]] / 13, rel=1e-15)


def test_uniform_and_adaptive_totals():
    rng = np.random.default_rng(15)
    gt, pred, obs = random_pair(rng)
    rep = decomposed_loss(gt, pred, obs)
    assert abs(rep.total - np.mean(rep.per_param)) <= 1e-12 * max(1.0, rep.total)
    w = AdaptiveWeights().update(rep).alpha
    rep_a = decomposed_loss(gt, pred, obs, w)
    assert rep_a.mode == "cpl_adaptive"
    assert abs(rep_a.total - sum(a * t for a, t in zip(w, rep_a.per_param))) <= 1e-12 * max(1.0, rep_a.total)
    assert set(rep_a.as_record()) == {"total"} | {f"L_{k}" for k in PARAM_NAMES} | {f"alpha_{k}" for k in PARAM_NAMES}


def test_baseline_loss_is_plain_mae():
    a, b = np.arange(13.0), np.arange(13.0)[::-1]
    rep = baseline_loss(a, b)
    assert rep.total == np.mean(np.abs(a - b))


def test_shape_checks():
    obs = CorrespondenceSet([1.0], [1.0])
    with pytest.raises(ShapeMismatch):
        cpl_loss(np.zeros(10), np.zeros(13), obs)
    with pytest.raises(ShapeMismatch):
        CorrespondenceSet([1.0, 2.0], [1.0])


@given(cvgl_params(), cvgl_params(), st.integers(0, 2**32 - 1))
def test_cpl_symmetric_and_zero_on_diagonal(p, q, seed):
    rng = np.random.default_rng(seed)
    obs = CorrespondenceSet(rng.uniform(0, 112, 5), rng.uniform(0, 112, 5))
    a = np.concatenate([p, rng.normal(size=3)])
    b = np.concatenate([q, rng.normal(size=3)])
    assert cpl_loss(a, a, obs) == 0.0
    ab, ba = cpl_loss(a, b, obs), cpl_loss(b, a, obs)
    assert abs(ab - ba) <= 1e-12 * max(1.0, ab)


@pytest.mark.parametrize("name", [k for k in PARAM_NAMES if k not in ("u0", "v0")])
def test_argmin_at_ground_truth(name):
    rng = np.random.default_rng(16)
    gt, _, obs = random_pair(rng, n=12)
    k = PARAM_INDEX[name]
    span = 0.5 * max(1.0, abs(gt[k]))
    offsets = np.linspace(-span, span, 41)
    offsets[20] = 0.0
    grid = gt[k] + offsets
    grid = grid[np.abs(grid) > 1e-3] if name in ("d", "fx", "fy") else grid
    losses = []
    for g in grid:
        pred = gt.copy()
        pred[k] = g
        losses.append(cpl_loss(gt, pred, obs))
    losses = np.array(losses)
    at = grid == gt[k]
    assert np.all(losses[at] == 0.0)
    assert np.all(losses[~at] > 0.0)


# -- adaptive weights -------------------------------------------------------


def test_equal_losses_give_unit_weights():
    s = update_adaptive_weights(AdaptiveWeights(), np.full(13, 4.0))
    assert np.allclose(s.alpha, 1.0, rtol=0, atol=1e-15)


def test_weights_order_inverse_to_ema():
    ema = np.linspace(1.0, 2.0, 13)
    ema[3] = 20.0
    s = update_adaptive_weights(AdaptiveWeights(ema=ema), ema)
    assert np.argmin(s.alpha) == 3
    assert np.array_equal(np.argsort(s.alpha), np.argsort(-s.ema))
    inv = 1.0 / (s.ema + s.eps)
    assert np.allclose(s.alpha, 13 * inv / inv.sum(), rtol=1e-15)


def test_weights_converge_under_constant_losses():
    losses = np.geomspace(1e-3, 1e3, 13)
    s = AdaptiveWeights()
    prev = None
    for _ in range(4000):
        s = s.update(losses)
        if prev is not None:
            step = np.max(np.abs(s.alpha - prev))
        prev = s.alpha
    assert step < 1e-9
    assert np.allclose(s.ema, losses, rtol=1e-12)


@given(st.lists(st.lists(st.floats(0, 1e6), min_size=13, max_size=13), min_size=1, max_size=20), st.floats(0.01, 0.999))
def test_weights_sum_to_thirteen(seq, decay):
    s = AdaptiveWeights(decay=decay)
    for losses in seq:
        s = s.update(np.array(losses))
        assert abs(s.alpha.sum() - 13.0) <= 1e-12
        assert np.all(s.alpha > 0)


@given(st.lists(st.floats(1e-6, 1e6), min_size=13, max_size=13), st.lists(st.booleans(), min_size=13, max_size=13))
def test_pinned_terms_do_not_absorb_weight(losses, mask):
    losses = np.array(losses)
    active = np.array(mask)
    losses[~active] = 0.0
    s = AdaptiveWeights(active=active)
    for _ in range(5):
        s = s.update(losses)
    assert abs(s.alpha.sum() - 13.0) <= 1e-12 and np.all(s.alpha > 0)
    if active.any() and not active.all():
        assert np.all(s.alpha[~active] == 1.0)
        inv = 1.0 / (s.ema[active] + s.eps)
        assert np.allclose(s.alpha[active], inv / inv.sum() * active.sum(), rtol=1e-12)


def test_decay_validation():
    with pytest.raises(ValueError):
        AdaptiveWeights(decay=1.0)
    with pytest.raises(ValueError):
        update_adaptive_weights(AdaptiveWeights(), np.ones(13), decay=0.0)


# -- gradients ---------------------------------------------------------------


def test_jacobian_structural_entries():
    rng = np.random.default_rng(17)
    from cplcalib import datagen

    for _ in range(20):
        p = datagen.sample_config(datagen.PRESETS["cvgl"], rng)
        J = grad_world_point(PixelObservation(*rng.uniform(0, 112, 2)), p)
        assert J.shape == (3, 10)
        assert J[1, PARAM_INDEX["ty"]] == 1.0
        assert J[0, PARAM_INDEX["tz"]] == 0.0 and J[2, PARAM_INDEX["tx"]] == 0.0


def test_jacobian_matches_finite_differences_on_100_points():
    rng = np.random.default_rng(1)
    from cplcalib import datagen

    worst = 0.0
    for _ in range(100):
        p = datagen.sample_config(datagen.PRESETS["cvgl"], rng).to_array()
        u, v = rng.uniform(0, 112, 2)
        worst = max(worst, relative_error(world_point_jacobian(p, u, v), finite_difference_jacobian(p, u, v)).max())
    assert worst < 1e-5


def test_per_point_disparity_zeroes_d_column():
    p = np.array([50.0, 50.0, 56.0, 56.0, -60.0, 4.0, 0.1, -20.0, 1.0, 0.0])
    J = world_point_jacobian(p, 10.0, 20.0, disparity=2.5)
    assert not np.any(J[:, 5])
    F = finite_difference_jacobian(p, 10.0, 20.0, disparity=2.5)
    assert relative_error(J, F).max() < 1e-5
    with pytest.raises(ZeroDisparity):
        world_point_jacobian(p, 1.0, 1.0, disparity=1e-12)


def test_set_jacobian_handles_mixed_overrides():
    p = np.array([50.0, 50.0, 56.0, 56.0, -60.0, 4.0, 0.1, -20.0, 1.0, 0.0])
    obs = CorrespondenceSet([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [np.nan, 3.0, np.nan])
    J = set_jacobian(p, obs)
    for i, o in enumerate(obs.observations):
        assert np.array_equal(J[i], grad_world_point(o, CameraParams.from_array(p)))


def _fd(f, x, k, rel=1e-6):
    h = rel * max(1.0, abs(x[k]))
    a, b = x.copy(), x.copy()
    a[k] += h
    b[k] -= h
    return (f(a) - f(b)) / (2 * h)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(18)
    gt, pred, obs = random_pair(rng, n=6)
    pred = gt + 0.05 * (pred - gt)  # stay on one side of the disparity pole
    g = cpl_loss_grad(gt, pred, obs)
    terms, diag = decomposed_terms_and_grad(gt, pred, obs)
    assert np.array_equal(terms, decomposed_terms(gt, pred, obs))
    for k in range(13):
        fd = _fd(lambda x: cpl_loss(gt, x, obs), pred, k)
        assert abs(fd - g[k]) <= 1e-5 * max(1.0, abs(fd))
        fdk = _fd(lambda x: decomposed_terms(gt, x, obs)[k], pred, k)
        assert abs(fdk - diag[k]) <= 1e-5 * max(1.0, abs(fdk))
        # other terms do not move with component k
        for j in range(13):
            if j != k:
                assert _fd(lambda x: decomposed_terms(gt, x, obs)[j], pred, k) == 0.0


def test_decomposed_grad_with_per_point_disparity_uses_loop_path():
    rng = np.random.default_rng(19)
    gt, pred, obs = random_pair(rng, n=5)
    pred = gt + 0.05 * (pred - gt)
    obs_d = CorrespondenceSet(obs.u, obs.v, np.full(obs.n, gt[5]))
    t1, g1 = decomposed_terms_and_grad(gt, pred, obs_d)
    assert g1[5] == 0.0 and t1[5] == 0.0
    t2, g2 = decomposed_terms_and_grad(gt, pred, obs)
    keep = [k for k in range(13) if k != 5]
    assert np.allclose(t1[keep], t2[keep], rtol=1e-12, atol=1e-12)


def test_loss_report_fields():
    r = LossReport(1.0, np.zeros(13), "cpl_uniform")
    assert "alpha_fx" not in r.as_record()
