import datetime as dt
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import (cohen_kappa_score,
                             matthews_corrcoef as sk_mcc,
                             precision_recall_fscore_support)

from spcagan.detect import (ClassificationReport, DetectorConfig,
                            build, classification_report, cohen_kappa,
                            confusion_matrix, evaluate, fit, load_detector,
                            macro_prf, matthews_corrcoef, predict,
                            save_detector)
from spcagan.errors import InputError, SpecificationError
from spcagan.features import FeatureMatrix

F_DIM = 8


def make_fm(values, labels):
    values = np.asarray(values, dtype=np.float64)
    names = tuple(f"f{i}" for i in range(values.shape[1]))
    index = tuple((f"u{i}", dt.date(2023, 1, 2)) for i in range(len(values)))
    return FeatureMatrix(values=values, feature_names=names,
                         labels=np.asarray(labels), user_day_index=index)


@pytest.fixture(scope="module")
def blobs():
    # three well-separated gaussian blobs in 8-D
    rng = np.random.default_rng(7)
    centers = np.zeros((3, F_DIM))
    centers[0, 0], centers[1, 1], centers[2, 2] = 6.0, 6.0, 6.0
    X = np.vstack([rng.normal(centers[c], 1.0, size=(40, F_DIM))
                   for c in range(3)])
    y = np.repeat([0, 1, 2], 40)
    return make_fm(X, y)


def small_cfg(kind, **kw):
    base = dict(kind=kind, n_classes=3, feature_dim=F_DIM, hidden=(16,),
                dropout_rate=0.3, mc_samples=8, epochs=5, lr=0.02,
                batch_size=32, seed=4)
    base.update(kw)
    return DetectorConfig(**base)


# ------------------------------------------------------------------ config

def test_config_defaults():
    cfg = DetectorConfig(kind="MLP", n_classes=2, feature_dim=5)
    assert cfg.mc_samples == 30
    assert cfg.dropout_rate == 0.3
    assert cfg.kl_weight == 1.0


@pytest.mark.parametrize("bad", [
    dict(kind="SVM"),
    dict(n_classes=1),
    dict(mc_samples=0),
    dict(dropout_rate=1.0),
    dict(dropout_rate=-0.1),
    dict(lr=0.0),
    dict(epochs=-1),
])
def test_config_validation(bad):
    base = dict(kind="MLP", n_classes=2, feature_dim=5)
    base.update(bad)
    with pytest.raises(SpecificationError):
        DetectorConfig(**base)


def test_cnn_needs_four_features():
    with pytest.raises(SpecificationError, match="4"):
        build(DetectorConfig(kind="CNN1D", n_classes=2, feature_dim=3))
    with pytest.raises(SpecificationError, match="4"):
        build(DetectorConfig(kind="HYBRID", n_classes=2, feature_dim=3))


def test_build_deterministic():
    cfg = small_cfg("BNN")
    a, b = build(cfg), build(cfg)
    for pa, pb in zip(a.net.parameters(), b.net.parameters()):
        assert torch.equal(pa, pb)


def test_hybrid_parameter_count():
    # mlp stack: 8*8+8;  conv1: 32*3+32;  conv2: 64*32*3+64
    # head over 8 + 64*(8//4) = 136 inputs: (136*2+2) means + same logvars
    cfg = DetectorConfig(kind="HYBRID", n_classes=2, feature_dim=8,
                         hidden=(8,))
    model = build(cfg)
    expected = (8 * 8 + 8) + (32 * 3 + 32) + (64 * 32 * 3 + 64) \
        + 2 * (136 * 2 + 2)
    assert sum(p.numel() for p in model.net.parameters()) == expected


# ---------------------------------------------------------------- training

def test_fit_rejects_single_class(blobs):
    fm = make_fm(blobs.values[:40], blobs.labels[:40])
    with pytest.raises(InputError):
        fit(build(small_cfg("MLP")), fm)


def test_fit_rejects_label_out_of_range(blobs):
    fm = make_fm(blobs.values[:80], blobs.labels[:80])
    with pytest.raises(InputError):
        fit(build(small_cfg("MLP", n_classes=2)), blobs)
    fit(build(small_cfg("MLP", n_classes=2, epochs=1)), fm)  # in-range ok


def test_fit_rejects_width_mismatch(blobs):
    with pytest.raises(InputError):
        fit(build(small_cfg("MLP", feature_dim=5)), blobs)


def test_mlp_loss_decreases(blobs):
    model = fit(build(small_cfg("MLP", epochs=30)), blobs)
    hist = [h["loss"] for h in model.loss_history]
    assert len(hist) == 30
    assert hist[-1] < hist[0]
    assert all(math.isfinite(v) for v in hist)


def test_bnn_kl_positive_every_epoch(blobs):
    model = fit(build(small_cfg("BNN", epochs=6)), blobs)
    for h in model.loss_history:
        assert h["kl"] > 0.0
        assert math.isfinite(h["kl"])


def test_zero_epochs_is_noop(blobs):
    cfg = small_cfg("MLP", epochs=0)
    trained = fit(build(cfg), blobs)
    fresh = build(cfg)
    p1 = predict(trained, blobs.values)
    p2 = predict(fresh, blobs.values)
    assert np.array_equal(p1.class_probs, p2.class_probs)
    assert trained.loss_history == []


def test_fit_deterministic(blobs):
    cfg = small_cfg("HYBRID", epochs=3)
    a = fit(build(cfg), blobs)
    b = fit(build(cfg), blobs)
    for pa, pb in zip(a.net.parameters(), b.net.parameters()):
        assert torch.equal(pa, pb)
    assert a.loss_history == b.loss_history


@pytest.mark.parametrize("kind", ["MLP", "CNN1D", "BNN", "ENSEMBLE",
                                  "HYBRID"])
def test_all_kinds_learn_blobs(blobs, kind):
    epochs = 25 if kind in ("BNN", "HYBRID") else 15
    model = fit(build(small_cfg(kind, epochs=epochs, mc_samples=10)), blobs)
    pred = predict(model, blobs.values, seed=1)
    acc = float(np.mean(pred.predicted == blobs.labels))
    assert acc > 0.9


# ---------------------------------------------------------------- predict

def test_probs_rows_sum_to_one(blobs):
    model = fit(build(small_cfg("BNN", epochs=2)), blobs)
    pred = predict(model, blobs.values, seed=0)
    assert np.all(np.abs(pred.class_probs.sum(axis=1) - 1.0) < 1e-6)
    assert np.all(pred.class_probs >= 0)
    assert np.all(pred.uncertainty >= 0)


@pytest.mark.parametrize("kind", ["MLP", "CNN1D", "ENSEMBLE"])
def test_deterministic_kinds_zero_uncertainty(blobs, kind):
    model = fit(build(small_cfg(kind, epochs=2)), blobs)
    pred = predict(model, blobs.values)
    assert np.all(pred.uncertainty == 0.0)


def test_hybrid_no_dropout_zero_uncertainty(blobs):
    # posterior means at prediction, so dropout is the only noise source
    model = fit(build(small_cfg("HYBRID", dropout_rate=0.0, epochs=2,
                                mc_samples=5)), blobs)
    p1 = predict(model, blobs.values, seed=0)
    p2 = predict(model, blobs.values, seed=99)
    assert np.all(p1.uncertainty == 0.0)
    assert np.array_equal(p1.class_probs, p2.class_probs)


def test_bnn_has_uncertainty(blobs):
    model = fit(build(small_cfg("BNN", epochs=2, mc_samples=10)), blobs)
    pred = predict(model, blobs.values, seed=0)
    assert pred.uncertainty.max() > 0.0


def test_single_mc_sample_zero_uncertainty(blobs):
    model = fit(build(small_cfg("BNN", epochs=2, mc_samples=1)), blobs)
    pred = predict(model, blobs.values, seed=0)
    assert np.all(pred.uncertainty == 0.0)


def test_predict_seed_determinism(blobs):
    model = fit(build(small_cfg("HYBRID", epochs=2)), blobs)
    a = predict(model, blobs.values, seed=5)
    b = predict(model, blobs.values, seed=5)
    c = predict(model, blobs.values, seed=6)
    assert np.array_equal(a.class_probs, b.class_probs)
    assert not np.array_equal(a.class_probs, c.class_probs)


def test_duplicated_rows_identical(blobs):
    model = fit(build(small_cfg("BNN", epochs=2, mc_samples=5)), blobs)
    row = blobs.values[0]
    pred = predict(model, np.vstack([row, row, row]), seed=3)
    assert np.array_equal(pred.class_probs[0], pred.class_probs[1])
    assert np.array_equal(pred.class_probs[0], pred.class_probs[2])
    # hybrid's dropout mask is shared across rows for the same reason
    hmodel = fit(build(small_cfg("HYBRID", epochs=2, mc_samples=5)), blobs)
    hpred = predict(hmodel, np.vstack([row, row]), seed=3)
    assert np.array_equal(hpred.class_probs[0], hpred.class_probs[1])


def test_ensemble_is_exact_mean_of_members(blobs):
    model = fit(build(small_cfg("ENSEMBLE", epochs=3)), blobs)
    pred = predict(model, blobs.values)
    pm = predict(model.members[0], blobs.values)
    pc = predict(model.members[1], blobs.values)
    assert np.array_equal(pred.class_probs,
                          (pm.class_probs + pc.class_probs) / 2.0)


def test_predicted_is_argmax_lower_tie(blobs):
    model = fit(build(small_cfg("MLP", epochs=2)), blobs)
    pred = predict(model, blobs.values)
    assert np.array_equal(pred.predicted, pred.class_probs.argmax(axis=1))
    # np.argmax takes the first maximum, i.e. the lower class index
    tie = np.array([[0.4, 0.4, 0.2]])
    assert tie.argmax(axis=1)[0] == 0


def test_predict_shape_errors(blobs):
    model = build(small_cfg("MLP"))
    with pytest.raises(InputError):
        predict(model, np.zeros((3, F_DIM + 1)))
    with pytest.raises(InputError):
        predict(model, np.zeros(F_DIM))


# ---------------------------------------------------------------- metrics

def test_binary_counts_hand_case():
    # TP=45 FN=5 FP=10 TN=40 with class 1 as positive
    y_true = np.array([1] * 50 + [0] * 50)
    y_pred = np.array([1] * 45 + [0] * 5 + [1] * 10 + [0] * 40)
    rep = classification_report(y_true, y_pred, 2)
    assert rep.confusion == ((40, 10), (5, 45))
    # hand algebra: p_o = .85, p_e = .5
    assert abs(rep.kappa - 0.7) < 1e-12
    mcc_hand = (45 * 40 - 10 * 5) / math.sqrt(55 * 50 * 50 * 45)
    assert abs(rep.mcc - mcc_hand) < 1e-12
    p_hand = (40 / 45 + 45 / 55) / 2
    r_hand = (40 / 50 + 45 / 50) / 2
    assert abs(rep.precision - p_hand) < 1e-12
    assert abs(rep.recall - r_hand) < 1e-12
    # cross-check the same case against sklearn
    assert abs(rep.kappa - cohen_kappa_score(y_true, y_pred)) < 1e-12
    assert abs(rep.mcc - sk_mcc(y_true, y_pred)) < 1e-12


def test_perfect_diagonal_gives_one():
    y = np.array([0, 1, 2, 0, 1, 2])
    rep = classification_report(y, y, 3)
    assert rep.precision == rep.recall == rep.f1 == 1.0
    assert abs(rep.kappa - 1.0) < 1e-12
    assert abs(rep.mcc - 1.0) < 1e-12


def test_constant_agreement_is_zero_not_one():
    # both sides always class 0: p_e = 1, no chance-corrected signal
    y = np.zeros(10, dtype=int)
    rep = classification_report(y, y, 2)
    assert rep.kappa == 0.0
    assert rep.mcc == 0.0


def test_constant_prediction_kappa_zero():
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.zeros(4, dtype=int)
    rep = classification_report(y_true, y_pred, 2)
    assert rep.kappa == 0.0
    assert rep.mcc == 0.0


def test_mcc_swap_symmetry():
    rng = np.random.default_rng(3)
    y1 = rng.integers(0, 4, size=200)
    y2 = rng.integers(0, 4, size=200)
    a = classification_report(y1, y2, 4).mcc
    b = classification_report(y2, y1, 4).mcc
    assert abs(a - b) < 1e-12


def test_zero_support_class_excluded():
    # class 2 never appears in truth; macro averages over classes 0 and 1
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 2, 1, 1])
    rep = classification_report(y_true, y_pred, 3)
    p, r, f = macro_prf(np.array(rep.confusion))
    assert r == (0.5 + 1.0) / 2
    assert rep.recall == r


def test_confusion_row_sums_are_support():
    rng = np.random.default_rng(11)
    y_true = rng.integers(0, 3, size=60)
    y_pred = rng.integers(0, 3, size=60)
    cm = confusion_matrix(y_true, y_pred, 3)
    assert np.array_equal(cm.sum(axis=1), np.bincount(y_true, minlength=3))
    assert np.array_equal(cm.sum(axis=0), np.bincount(y_pred, minlength=3))


def test_macro_prf_matches_sklearn():
    rng = np.random.default_rng(21)
    y_true = rng.integers(0, 3, size=150)
    y_pred = rng.integers(0, 3, size=150)
    rep = classification_report(y_true, y_pred, 3)
    p, r, f, _ = precision_recall_fscore_support(
        y_true, y_pred, average="macro", zero_division=0)
    assert abs(rep.precision - p) < 1e-12
    assert abs(rep.recall - r) < 1e-12
    assert abs(rep.f1 - f) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=60),
       st.integers(0, 2 ** 31 - 1))
def test_metric_ranges_fuzz(y_true, seed):
    y_true = np.array(y_true)
    y_pred = np.random.default_rng(seed).integers(0, 4, size=len(y_true))
    rep = classification_report(y_true, y_pred, 4)
    assert rep.kappa <= 1.0 + 1e-12
    assert -1.0 - 1e-12 <= rep.mcc <= 1.0 + 1e-12
    for v in (rep.precision, rep.recall, rep.f1):
        assert 0.0 <= v <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_kappa_mcc_match_sklearn_fuzz(seed):
    rng = np.random.default_rng(seed)
    y_true = rng.integers(0, 3, size=50)
    y_pred = rng.integers(0, 3, size=50)
    if np.unique(y_true).size < 2 or np.unique(y_pred).size < 2:
        return
    rep = classification_report(y_true, y_pred, 3)
    assert abs(rep.kappa - cohen_kappa_score(y_true, y_pred)) < 1e-10
    assert abs(rep.mcc - sk_mcc(y_true, y_pred)) < 1e-10


def test_evaluate_from_prediction(blobs):
    model = fit(build(small_cfg("MLP", epochs=15)), blobs)
    pred = predict(model, blobs.values)
    rep = evaluate(pred, blobs.labels)
    assert isinstance(rep, ClassificationReport)
    assert np.array(rep.confusion).sum() == len(blobs.labels)


def test_evaluate_empty_errors():
    with pytest.raises(InputError):
        classification_report(np.array([]), np.array([]), 2)


def test_evaluate_length_mismatch():
    with pytest.raises(InputError):
        classification_report(np.array([0, 1]), np.array([0]), 2)


# ------------------------------------------------------------- persistence

@pytest.mark.parametrize("kind", ["MLP", "BNN", "ENSEMBLE", "HYBRID"])
def test_checkpoint_round_trip(tmp_path, blobs, kind):
    model = fit(build(small_cfg(kind, epochs=2)), blobs)
    path = tmp_path / "det.npz"
    save_detector(model, path)
    loaded = load_detector(path)
    assert loaded.config == model.config
    a = predict(model, blobs.values, seed=9)
    b = predict(loaded, blobs.values, seed=9)
    assert np.array_equal(a.class_probs, b.class_probs)
