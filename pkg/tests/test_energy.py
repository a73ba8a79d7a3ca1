from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import loopid.energy as energy_mod
from loopid.errors import CalibrationError, ConfigurationError, ScoringError
from loopid.energy import (
    CalibrationTarget,
    EnergyConfig,
    calibrate_threshold,
    combined_loss_and_grad,
    confidence_verdicts,
    energy_margin_loss,
    energy_score,
    fine_tune_energy,
    margins_from_percentiles,
    separation_score,
    softmax_confidence,
    total_loss,
    write_calibration_report,
)
from loopid.model import TrainConfig, forward, init_model

finite_logits = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=8
)


def test_energy_uniform_two_logits():
    assert math.isclose(energy_score(np.array([0.0, 0.0]), 1.0), -math.log(2.0), rel_tol=1e-12)


def test_energy_one_zero():
    # Direct evaluation: -log(e + 1)
    expected = -math.log(math.e + 1.0)
    assert math.isclose(energy_score(np.array([1.0, 0.0]), 1.0), expected, rel_tol=1e-12)
    assert math.isclose(expected, -1.3132616875182228, rel_tol=1e-15)


def test_energy_huge_logit_no_overflow():
    # Extended-precision oracle: for [1000, 0] the exact value is
    # -(1000 + log1p(e^-1000)), which rounds to -1000.0 in float64.
    v = energy_score(np.array([1000.0, 0.0]), 1.0)
    assert np.isfinite(v)
    assert v == -1000.0


def test_energy_magnitude_1e6_finite():
    v = energy_score(np.array([1e6, -1e6, 0.0]), 1.0)
    assert np.isfinite(v)


def test_energy_batch_rows_match_vector_calls():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(10, 5))
    batch = energy_score(logits, 1.7)
    for i in range(10):
        assert math.isclose(batch[i], energy_score(logits[i], 1.7), rel_tol=1e-12)


def test_energy_rejects_bad_input():
    with pytest.raises(ScoringError):
        energy_score(np.array([1.0, np.nan]), 1.0)
    with pytest.raises(ScoringError):
        energy_score(np.array([1.0, 2.0]), 0.0)
    with pytest.raises(ScoringError):
        energy_score(np.array([]), 1.0)


@given(finite_logits, st.floats(min_value=-30, max_value=30, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_energy_shift_equivariance(logits, c):
    arr = np.asarray(logits)
    assert math.isclose(
        energy_score(arr + c, 1.0), energy_score(arr, 1.0) - c, abs_tol=1e-10
    )


@given(finite_logits)
@settings(max_examples=100, deadline=None)
def test_energy_is_negative_logsumexp(logits):
    arr = np.asarray(logits)
    m = arr.max()
    lse = m + math.log(np.exp(arr - m).sum())
    assert math.isclose(energy_score(arr, 1.0), -lse, abs_tol=1e-10)


def test_softmax_confidence_examples():
    assert math.isclose(softmax_confidence(np.array([0.0, 0.0])), 0.5, rel_tol=1e-12)
    # Direct sigmoid evaluation for two logits: 1 / (1 + e^-10).
    expected = 1.0 / (1.0 + math.exp(-10.0))
    assert math.isclose(softmax_confidence(np.array([10.0, 0.0])), expected, rel_tol=1e-12)
    assert math.isclose(expected, 0.9999546021312976, rel_tol=1e-15)
    assert softmax_confidence(np.array([3.7])) == 1.0


def test_margin_loss_scalar_arithmetic():
    # Hinge directions follow the published loss: knowns are pushed below
    # margin_known, unknowns above margin_unknown.
    # Known at -15 with margin -5 -> satisfied (0); unknown at -15 with
    # margin -8 -> max(0, -8 - (-15))^2 = 49.
    assert energy_margin_loss(np.array([-15.0]), np.array([-15.0]), -5.0, -8.0) == 49.0
    # Known at -3 with margin -5 -> max(0, -3 - (-5))^2 = 4.
    assert energy_margin_loss(np.array([-3.0]), np.array([]), -5.0, -1.0) == 4.0
    # All margins satisfied -> exactly zero.
    assert energy_margin_loss(np.array([-10.0, -7.0]), np.array([-1.0, 0.5]), -5.0, -2.0) == 0.0


def test_margin_loss_means_per_side():
    known = np.array([-3.0, -5.0])   # hinges: 2, 0 -> squared 4, 0 -> mean 2
    unknown = np.array([-4.0, -1.0])  # margin -2: hinges 2, 0 -> mean 2
    assert energy_margin_loss(known, unknown, -5.0, -2.0) == 4.0
    with pytest.raises(ConfigurationError):
        energy_margin_loss(np.array([]), np.array([]), 0.0, 0.0)


def test_total_loss():
    assert total_loss(2.0, 49.0, 0.01) == 2.49
    assert total_loss(1.23, 99.0, 0.0) == 1.23
    assert total_loss(0.0, 0.0, 5.0) == 0.0
    with pytest.raises(ConfigurationError):
        total_loss(1.0, 1.0, -0.1)


def test_energy_config_margin_ordering():
    with pytest.raises(ConfigurationError):
        EnergyConfig(margin_known=-1.0, margin_unknown=-5.0).validate()
    EnergyConfig(margin_known=-5.0, margin_unknown=-1.0).validate()


def test_margins_from_percentiles():
    cfg = EnergyConfig()
    energies = np.linspace(-10.0, 0.0, 101)
    m_known, m_unknown = margins_from_percentiles(energies, cfg)
    assert math.isclose(m_known, np.percentile(energies, 80.0))
    assert math.isclose(m_unknown, np.percentile(energies, 95.0))
    assert m_known < m_unknown


def test_combined_loss_gradient_near_margin_kinks():
    # Check just inside and outside the hinge boundary, not at the kink.
    rng = np.random.default_rng(1)
    cfg = EnergyConfig(temperature=1.2, energy_weight=0.3)
    for offset in (-0.05, 0.05):
        logits = rng.normal(size=(4, 3))
        known_mask = np.array([True, True, False, False])
        labels = np.array([0, 2])
        energies = np.atleast_1d(energy_score(logits, cfg.temperature))
        m_known = float(energies[:2].mean()) + offset
        m_unknown = float(energies[2:].mean()) - offset
        _, dlogits = combined_loss_and_grad(logits, known_mask, labels, cfg, m_known, m_unknown)
        eps = 1e-6
        flat = logits.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp, _ = combined_loss_and_grad(logits, known_mask, labels, cfg, m_known, m_unknown)
            flat[i] = old - eps
            lm, _ = combined_loss_and_grad(logits, known_mask, labels, cfg, m_known, m_unknown)
            flat[i] = old
            fd = (lp - lm) / (2 * eps)
            an = dlogits.reshape(-1)[i]
            assert abs(fd - an) / max(1e-8, abs(fd), abs(an)) < 1e-4


def test_calibrate_separable_case():
    tau = calibrate_threshold(np.full(50, 10.0), np.full(50, 0.0))
    assert 0.0 < tau < 10.0


def test_calibrate_identical_distributions_errors():
    scores = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(CalibrationError):
        calibrate_threshold(scores, scores.copy())


def test_calibrate_matches_bruteforce_scan():
    rng = np.random.default_rng(5)
    known = rng.normal(3.0, 1.0, 300)
    unknown = rng.normal(0.0, 1.2, 200)
    tau = calibrate_threshold(known, unknown)
    # Exhaustive scan over all candidate midpoints.
    pooled = np.unique(np.concatenate([known, unknown]))
    candidates = np.concatenate([[pooled[0] - 1.0], (pooled[:-1] + pooled[1:]) / 2.0])
    best_j, best_tau = -np.inf, None
    for t in candidates:
        j = (known > t).mean() - (unknown > t).mean()
        if j > best_j:
            best_j, best_tau = j, t
    assert math.isclose(tau, best_tau, rel_tol=1e-12)
    assert math.isclose(separation_score(known, unknown), best_j, rel_tol=1e-12)


def test_calibrate_accuracy_floor_monotone():
    rng = np.random.default_rng(6)
    known = rng.normal(3.0, 1.0, 400)
    unknown = rng.normal(0.0, 1.5, 300)
    taus = []
    for floor in (0.6, 0.7, 0.8, 0.9, 0.97):
        taus.append(
            calibrate_threshold(known, unknown, CalibrationTarget("accuracy_floor", floor))
        )
    assert all(a <= b + 1e-12 for a, b in zip(taus, taus[1:]))


def test_calibrate_unattainable_floor_reports_frontier():
    known = np.array([1.0, 2.0])
    unknown = np.array([1.0, 2.0])
    with pytest.raises(CalibrationError) as err:
        calibrate_threshold(known, unknown, CalibrationTarget("accuracy_floor", 0.99))
    assert "best_precision" in err.value.frontier


@given(
    st.lists(st.floats(min_value=-20, max_value=20, allow_nan=False), min_size=1, max_size=30),
    st.floats(min_value=-25, max_value=25, allow_nan=False),
)
@settings(max_examples=100, deadline=None)
def test_verdict_consistency(scores, tau):
    logits = np.array([[s, 0.0] for s in scores])
    verdicts = confidence_verdicts(logits, np.arange(len(scores)), 1.0, tau)
    for v in verdicts:
        assert v.confident == (v.neg_energy > tau)
        assert math.isclose(v.neg_energy, -v.energy, rel_tol=1e-15)


@pytest.fixture(scope="module")
def tuned_small(small_groups_mod):
    groups = small_groups_mod
    cats = groups.group1_train.category_ids
    model = init_model(groups.group1_train.features.shape[1], 16, 6, cats, seed=1)
    from loopid.loop import as_labeled

    train = as_labeled(groups.group1_train, cats)
    val = as_labeled(groups.group1_val, cats)
    from loopid.model import train_supervised

    cfg = TrainConfig(epochs=12, batch_size=32, lr_feature=0.05, lr_classifier=0.5,
                      lr_memory=0.01, seed=2)
    sup = train_supervised(model, train, cfg, val=val)
    return groups, train, val, sup.model


@pytest.fixture(scope="module")
def small_groups_mod():
    from loopid import datagen

    manifest = datagen.generate_longtail_dataset(datagen.small_gen_config(seed=31))
    split = datagen.split_by_events(manifest, seed=32)
    return datagen.make_period_groups(manifest, split)


def test_fine_tune_increases_energy_gap(tuned_small):
    groups, train, val, model = tuned_small
    cfg = EnergyConfig(
        temperature=1.0,
        fine_tune=TrainConfig(epochs=6, batch_size=48, lr_feature=5e-3,
                              lr_classifier=5e-2, lr_memory=5e-3, seed=3),
    )

    def gap(m):
        _, lk = forward(m, train.features)
        _, lu = forward(m, groups.unknown_train.features)
        return float(np.mean(energy_score(lu, 1.0)) - np.mean(energy_score(lk, 1.0)))

    before = gap(model)
    result = fine_tune_energy(model, train, groups.unknown_train.features, cfg,
                              known_val=val.features, unknown_val=groups.unknown_val.features)
    after = gap(result.model)
    assert after > before


def test_fine_tune_zero_epochs_is_noop(tuned_small):
    groups, train, _, model = tuned_small
    cfg = EnergyConfig(fine_tune=TrainConfig(epochs=0, batch_size=48))
    result = fine_tune_energy(model, train, groups.unknown_train.features, cfg)
    for name, param in model.params().items():
        assert np.array_equal(param, getattr(result.model, name))


def test_fine_tune_requires_unknown_pool(tuned_small):
    _, train, _, model = tuned_small
    cfg = EnergyConfig()
    with pytest.raises(ConfigurationError):
        fine_tune_energy(model, train, np.zeros((0, train.features.shape[1])), cfg)


def test_fine_tune_batch_composition(tuned_small, monkeypatch):
    # Ratio 1:2 with batch 96 must put 32 known + 64 unknown in each batch.
    groups, train, val, model = tuned_small
    seen = []
    original = energy_mod.combined_loss_and_grad

    def recording(logits, known_mask, labels, cfg, mk, mu):
        seen.append((int(known_mask.sum()), int((~known_mask).sum())))
        return original(logits, known_mask, labels, cfg, mk, mu)

    monkeypatch.setattr(energy_mod, "combined_loss_and_grad", recording)
    cfg = EnergyConfig(
        known_unknown_ratio=(1, 2),
        fine_tune=TrainConfig(epochs=1, batch_size=96, lr_feature=1e-4,
                              lr_classifier=1e-3, lr_memory=1e-4, seed=3),
    )
    fine_tune_energy(model, train, groups.unknown_train.features, cfg)
    assert seen, "no batches recorded"
    for n_known, n_unknown in seen[:-1]:
        assert (n_known, n_unknown) == (32, 64)
    assert seen[-1][1] == 64  # unknown side cycles, so it is always full


def test_calibration_report_schema(tmp_path, tuned_small):
    groups, train, val, model = tuned_small
    _, lk = forward(model, val.features)
    _, lu = forward(model, groups.unknown_val.features)
    known_scores = -np.atleast_1d(energy_score(lk, 1.0))
    unknown_scores = -np.atleast_1d(energy_score(lu, 1.0))
    cfg = EnergyConfig()
    report = write_calibration_report(
        tmp_path / "calibration.json", 3.0, cfg, -5.0, -2.0, known_scores, unknown_scores
    )
    assert report["schema_version"] == 1
    assert len(report["histogram"]["known"]) == 64
    assert len(report["histogram"]["unknown"]) == 64
    assert sum(report["histogram"]["known"]) == len(known_scores)
