"""Loss terms against closed forms, brute-force oracles, and invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import center_oracle, cross_entropy_oracle, focal_oracle, kl_oracle, supcon_oracle
from sermix import checks
from sermix.errors import DegenerateBatch, DomainError, InvalidClass
from sermix.losses import (
    PROB_FLOOR,
    LossConfig,
    combined_loss,
    center_loss,
    context_broadcast,
    context_broadcast_vjp,
    focal_loss,
    kl_div,
    supcon_loss,
    update_centers,
)


def _simplex(rng, c):
    v = rng.uniform(0.05, 1.0, size=c)
    return v / v.sum()


# --- KL divergence ---

def test_kl_example_value():
    y = np.array([0.5, 0.5])
    y_hat = np.array([0.25, 0.75])
    val, _ = kl_div(y, y_hat)
    expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    assert val == pytest.approx(expected, rel=1e-12)
    assert val == pytest.approx(0.1438410362, abs=1e-9)


def test_kl_identical_distributions_zero():
    y = np.array([0.2, 0.3, 0.5])
    val, _ = kl_div(y, y.copy())
    assert val == 0.0


def test_kl_zero_log_zero_is_zero():
    val, grad = kl_div(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert val == 0.0
    assert grad[0] == 0.0


def test_kl_domain_error_on_zero_prediction_with_mass():
    with pytest.raises(DomainError):
        kl_div(np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    with pytest.raises(DomainError):
        kl_div(np.array([0.5, 0.5]), np.array([0.5, 0.5, 0.0]))


def test_kl_tiny_prediction_clipped_not_overflowed():
    y = np.array([1.0, 0.0])
    y_hat = np.array([1e-20, 1.0])
    val, grad = kl_div(y, y_hat)
    assert math.isfinite(val)
    assert val == pytest.approx(-math.log(PROB_FLOOR), rel=1e-12)
    assert grad[0] == 0.0  # clipped coordinate carries no gradient


def test_kl_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        y = _simplex(rng, 5)
        y_hat = _simplex(rng, 5)
        val, _ = kl_div(y, y_hat)
        assert val == pytest.approx(kl_oracle(y, y_hat), rel=1e-12, abs=1e-14)


def test_kl_gradcheck():
    assert checks.check_kl(c=5, seed=1).ok


@settings(max_examples=80, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_kl_nonnegative_property(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 7))
    y = _simplex(rng, c)
    y_hat = _simplex(rng, c)
    val, _ = kl_div(y, y_hat)
    assert val >= -1e-14


# --- focal loss ---

def test_focal_gamma_zero_is_log_two():
    y = np.array([1.0, 0.0])
    y_hat = np.array([0.5, 0.5])
    val, _ = focal_loss(y, y_hat, gamma=0.0)
    assert val == pytest.approx(math.log(2.0), rel=1e-12)


def test_focal_gamma_two_example():
    y = np.array([1.0, 0.0])
    y_hat = np.array([0.5, 0.5])
    val, _ = focal_loss(y, y_hat, gamma=2.0)
    assert val == pytest.approx(0.25 * math.log(2.0), rel=1e-12)
    assert val == pytest.approx(0.1732867951, abs=1e-9)


def test_focal_gamma_zero_equals_cross_entropy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        y = _simplex(rng, 4)
        y_hat = _simplex(rng, 4)
        val, _ = focal_loss(y, y_hat, gamma=0.0)
        assert val == pytest.approx(cross_entropy_oracle(y, y_hat), rel=1e-12)


def test_focal_never_exceeds_cross_entropy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = _simplex(rng, 4)
        y_hat = _simplex(rng, 4)
        foc, _ = focal_loss(y, y_hat, gamma=2.0)
        assert foc <= cross_entropy_oracle(y, y_hat) + 1e-14


def test_focal_matches_oracle():
    rng = np.random.default_rng(4)
    for gamma in (0.0, 0.5, 2.0, 5.0):
        y = _simplex(rng, 5)
        y_hat = _simplex(rng, 5)
        val, _ = focal_loss(y, y_hat, gamma)
        assert val == pytest.approx(focal_oracle(y, y_hat, gamma), rel=1e-12)


def test_focal_gradchecks():
    assert checks.check_focal(c=5, seed=5, gamma=2.0).ok
    assert checks.check_focal(c=5, seed=5, gamma=0.0).ok
    assert checks.check_focal(c=5, seed=5, gamma=3.5).ok


# --- center loss ---

def test_center_example_three_four_five():
    f = np.array([[3.0, 4.0]])
    centers = np.zeros((2, 2))
    val, grad = center_loss(f, np.array([0]), centers)
    assert val == 25.0
    assert np.array_equal(grad, [[6.0, 8.0]])


def test_center_matches_oracle():
    rng = np.random.default_rng(6)
    f = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 0, 2])
    centers = rng.normal(size=(3, 3))
    val, grad = center_loss(f, labels, centers)
    assert val == pytest.approx(center_oracle(f, labels, centers), rel=1e-12)
    assert np.allclose(grad, (2.0 / 5) * (f - centers[labels]), atol=1e-15)


def test_center_translation_invariance():
    rng = np.random.default_rng(7)
    f = rng.normal(size=(4, 3))
    labels = np.array([0, 1, 0, 1])
    centers = rng.normal(size=(2, 3))
    shift = rng.normal(size=3)
    v0, _ = center_loss(f, labels, centers)
    v1, _ = center_loss(f + shift, labels, centers + shift)
    assert v1 == pytest.approx(v0, rel=1e-12)


def test_center_rejects_bad_labels():
    with pytest.raises(InvalidClass):
        center_loss(np.zeros((2, 3)), np.array([0, 5]), np.zeros((2, 3)))


def test_center_gradcheck():
    assert checks.check_center(b=4, p_dim=6, seed=8).ok


def test_update_centers_zero_lr_is_noop():
    rng = np.random.default_rng(9)
    centers = rng.normal(size=(3, 4))
    out = update_centers(centers, rng.normal(size=(5, 4)), np.array([0, 1, 2, 0, 1]), 0.0)
    assert np.array_equal(out, centers)


def test_update_centers_full_step_hits_class_mean():
    f = np.array([[1.0, 3.0], [3.0, 5.0], [10.0, 10.0]])
    centers = np.zeros((2, 2))
    out = update_centers(centers, f, np.array([0, 0, 1]), 1.0)
    assert np.array_equal(out[0], [2.0, 4.0])
    assert np.array_equal(out[1], [10.0, 10.0])


def test_update_centers_fixed_point():
    rng = np.random.default_rng(10)
    f = rng.normal(size=(6, 3))
    labels = np.array([0, 0, 0, 1, 1, 1])
    centers = np.stack([f[:3].mean(axis=0), f[3:].mean(axis=0)])
    out = update_centers(centers, f, labels, 0.7)
    assert np.max(np.abs(out - centers)) <= 1e-9


def test_update_centers_leaves_absent_classes_and_input_untouched():
    centers = np.arange(8.0).reshape(4, 2)
    before = centers.copy()
    out = update_centers(centers, np.ones((2, 2)), np.array([1, 1]), 0.5)
    assert np.array_equal(centers, before)  # input not mutated
    assert np.array_equal(out[0], before[0])
    assert np.array_equal(out[2], before[2])
    assert np.array_equal(out[3], before[3])
    assert not np.array_equal(out[1], before[1])


# --- context broadcast ---

def test_context_broadcast_example():
    x = np.array([[2.0], [4.0]])
    assert np.array_equal(context_broadcast(x), [[2.5], [3.5]])


def test_context_broadcast_preserves_mean():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(6, 4))
    assert np.allclose(context_broadcast(x).mean(axis=0), x.mean(axis=0), atol=1e-14)


def test_context_broadcast_self_adjoint():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(5, 3))
    y = rng.normal(size=(5, 3))
    lhs = float(np.sum(context_broadcast(x) * y))
    rhs = float(np.sum(x * context_broadcast_vjp(y)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_context_broadcast_gradcheck():
    assert checks.check_context_broadcast(t=5, d=4, seed=13).ok


# --- supervised contrastive loss ---

def test_supcon_identical_pair_is_zero():
    z = np.array([[0.6, 0.8]])
    val, grads = supcon_loss([z, z.copy()], np.array([0, 0]), tau=1.0)
    assert val == pytest.approx(0.0, abs=1e-12)
    assert len(grads) == 2


def test_supcon_all_distinct_labels_exactly_zero():
    # single-frame utterances with pairwise distinct classes leave every
    # anchor without a positive, so the grand total is exactly zero
    rng = np.random.default_rng(14)
    frames = [rng.normal(size=(1, 4)) for _ in range(4)]
    val, grads = supcon_loss(frames, np.array([0, 1, 2, 3]), tau=0.07)
    assert val == 0.0
    for g in grads:
        assert np.array_equal(g, np.zeros_like(g))


def test_supcon_matches_brute_force_oracle():
    rng = np.random.default_rng(15)
    frames = [rng.normal(size=(2, 8)) for _ in range(4)]
    labels = np.array([0, 1, 0, 1])
    for normalize in (True, False):
        val, _ = supcon_loss(frames, labels, tau=0.07, normalize=normalize)
        ref = supcon_oracle(frames, labels, 0.07, normalize=normalize)
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_supcon_anchor_without_positive_contributes_zero():
    rng = np.random.default_rng(16)
    frames = [rng.normal(size=(1, 4)) for _ in range(3)]
    labels = np.array([0, 0, 1])  # third anchor has no positive
    val, _ = supcon_loss(frames, labels, tau=0.5)
    assert val == pytest.approx(supcon_oracle(frames, labels, 0.5), rel=1e-10)


def test_supcon_accepts_stacked_array():
    rng = np.random.default_rng(17)
    stacked = rng.normal(size=(3, 2, 5))
    labels = np.array([0, 1, 0])
    v_list, _ = supcon_loss([stacked[0], stacked[1], stacked[2]], labels, tau=0.07)
    v_arr, _ = supcon_loss(stacked, labels, tau=0.07)
    assert v_arr == v_list


def test_supcon_permutation_invariant():
    rng = np.random.default_rng(18)
    frames = [rng.normal(size=(2, 6)) for _ in range(4)]
    labels = np.array([0, 1, 1, 2])
    v0, _ = supcon_loss(frames, labels, tau=0.07)
    order = [2, 0, 3, 1]
    v1, _ = supcon_loss([frames[i] for i in order], labels[order], tau=0.07)
    assert v1 == pytest.approx(v0, rel=1e-12)


def test_supcon_invariant_to_prenorm_scaling():
    rng = np.random.default_rng(19)
    frames = [rng.normal(size=(2, 6)) for _ in range(3)]
    labels = np.array([0, 1, 0])
    v0, _ = supcon_loss(frames, labels, tau=0.07, normalize=True)
    scaled = [frames[0] * 3.0, frames[1], frames[2] * 0.25]
    v1, _ = supcon_loss(scaled, labels, tau=0.07, normalize=True)
    assert v1 == pytest.approx(v0, rel=1e-12)


def test_supcon_degenerate_batch():
    with pytest.raises(DegenerateBatch):
        supcon_loss([np.ones((1, 3))], np.array([0]), tau=0.07)


def test_supcon_gradchecks():
    assert checks.check_supcon(b=3, t=2, p_dim=4, seed=20, normalize=True).ok
    assert checks.check_supcon(b=3, t=2, p_dim=4, seed=20, normalize=False).ok


# --- combined loss ---

def test_combined_missing_terms_are_exact_zero():
    rep = combined_loss({"kl": (0.5, {})}, (1.0, 1.0, 0.1, 0.1))
    assert rep.focal == 0.0
    assert rep.center == 0.0
    assert rep.supcon == 0.0
    assert rep.total == 0.5


def test_combined_total_is_weighted_sum():
    parts = {
        "kl": (0.5, {}),
        "focal": (0.25, {}),
        "center": (4.0, {}),
        "supcon": (2.0, {}),
    }
    lambdas = (1.0, 2.0, 0.1, 0.25)
    rep = combined_loss(parts, lambdas)
    expected = 1.0 * 0.5 + 2.0 * 0.25 + 0.1 * 4.0 + 0.25 * 2.0
    assert rep.total == pytest.approx(expected, rel=1e-12)
    assert (rep.kl, rep.focal, rep.center, rep.supcon) == (0.5, 0.25, 4.0, 2.0)


def test_combined_merges_shared_gradients_linearly():
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 2.0])
    parts = {"kl": (0.1, {"probs": g1}), "focal": (0.2, {"probs": g2})}
    rep = combined_loss(parts, (2.0, 3.0, 0.0, 0.0))
    assert np.array_equal(rep.input_grads["probs"], 2.0 * g1 + 3.0 * g2)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        LossConfig(tau=0.0)
    with pytest.raises(ValueError):
        LossConfig(lambdas=(0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        LossConfig(lambdas=(1.0, -0.5, 0.0, 0.0))
    with pytest.raises(ValueError):
        LossConfig(proj_dim=0)
