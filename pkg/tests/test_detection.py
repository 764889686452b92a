"""Detection layer: scoring, thresholding, point adjustment, metrics."""

import numpy as np
import pytest

from tsinr.detection import (
    anomaly_score,
    default_gamma,
    evaluate,
    f1_score,
    labels_at,
    point_adjust,
    prf1,
    read_scores_csv,
    render_report,
    roc_auc,
    segments,
    soften_labels,
    threshold_by_proportion,
    vus_roc,
    write_scores_csv,
)
from tsinr.errors import DataError

import oracles


# ---------------------------------------------------------------- scoring

def test_score_zero_when_recon_exact():
    x = np.random.default_rng(0).normal(size=(3, 40))
    assert np.array_equal(anomaly_score(x, x.copy()), np.zeros(40))


def test_score_hand_case_two_channels():
    x = np.zeros((2, 5))
    recon = np.zeros((2, 5))
    recon[0, 2] = -1.0
    recon[1, 2] = 1.0
    scores = anomaly_score(x, recon)
    assert scores[2] == 1.0
    assert np.all(scores[[0, 1, 3, 4]] == 0.0)


def test_score_quadratic_homogeneity():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 30))
    recon = rng.normal(size=(4, 30))
    base = anomaly_score(x, recon)
    scaled = anomaly_score(2.0 * x, 2.0 * recon)
    # factor 4 is a power of two so the float scaling is exact
    assert np.array_equal(scaled, 4.0 * base)


def test_score_shape_mismatch():
    with pytest.raises(DataError):
        anomaly_score(np.zeros((2, 5)), np.zeros((2, 6)))


# ----------------------------------------------------------- thresholding

def test_threshold_one_in_ten():
    scores = np.arange(1.0, 11.0)
    delta = threshold_by_proportion(scores, 10.0)
    assert delta == 10.0
    assert labels_at(scores, delta).sum() == 1


def test_threshold_gamma_100_labels_everything():
    scores = np.random.default_rng(2).normal(size=57) ** 2
    delta = threshold_by_proportion(scores, 100.0)
    assert labels_at(scores, delta).sum() == 57


def test_threshold_matches_sort_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        if rng.random() < 0.5:
            scores = rng.normal(size=n) ** 2
        else:
            scores = rng.integers(0, 5, size=n).astype(np.float64)
        gamma = float(rng.uniform(0.1, 100.0))
        assert threshold_by_proportion(scores, gamma) == oracles.quantile_threshold(scores, gamma)


def test_threshold_fraction_within_one_sample_absent_ties():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(5, 200))
        scores = rng.permutation(n).astype(np.float64)  # distinct by construction
        gamma = float(rng.uniform(0.5, 99.5))
        delta = threshold_by_proportion(scores, gamma)
        frac = labels_at(scores, delta).mean()
        assert abs(frac - gamma / 100.0) <= 1.0 / n + 1e-12


def test_threshold_ties_all_included():
    scores = np.array([1.0, 2.0, 3.0, 3.0, 0.5])
    delta = threshold_by_proportion(scores, 40.0)  # n_target = 2
    assert delta == 3.0
    assert labels_at(scores, delta).sum() == 2
    scores = np.array([1.0, 3.0, 3.0, 3.0, 0.5])
    delta = threshold_by_proportion(scores, 40.0)
    assert labels_at(scores, delta).sum() == 3  # ties may exceed the target


def test_threshold_tiny_gamma_labels_nothing():
    scores = np.array([5.0, 1.0, 2.0])
    delta = threshold_by_proportion(scores, 1.0)  # floor(0.01 * 3) = 0
    assert delta > 5.0
    assert labels_at(scores, delta).sum() == 0


def test_threshold_rejects_bad_inputs():
    with pytest.raises(DataError):
        threshold_by_proportion(np.array([]), 1.0)
    with pytest.raises(DataError):
        threshold_by_proportion(np.array([1.0]), 0.0)
    with pytest.raises(DataError):
        threshold_by_proportion(np.array([1.0]), 100.5)


def test_threshold_labels_invariant_under_monotone_transform():
    rng = np.random.default_rng(5)
    scores = rng.integers(0, 8, size=80).astype(np.float64)
    gamma = 15.0
    base = labels_at(scores, threshold_by_proportion(scores, gamma))
    for transform in (np.exp, lambda s: s**3 + 2.0, lambda s: np.arctan(s)):
        warped = transform(scores)
        labels = labels_at(warped, threshold_by_proportion(warped, gamma))
        assert np.array_equal(labels, base)


# --------------------------------------------------------- point adjustment

def test_point_adjust_spec_examples():
    pred = np.zeros(10, dtype=np.int8)
    assert np.array_equal(point_adjust(pred, np.zeros(10)), pred)

    truth = np.zeros(10, dtype=np.int8)
    truth[3:7] = 1  # true segment [3..6]
    pred = np.zeros(10, dtype=np.int8)
    pred[4] = 1
    adjusted = point_adjust(pred, truth)
    assert np.array_equal(adjusted[3:7], np.ones(4))
    assert adjusted.sum() == 4

    assert np.array_equal(point_adjust(np.zeros(10), truth), np.zeros(10))


def test_point_adjust_matches_bruteforce():
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(1, 80))
        pred = (rng.random(n) < 0.2).astype(np.int8)
        truth = (rng.random(n) < 0.25).astype(np.int8)
        assert np.array_equal(point_adjust(pred, truth),
                              oracles.point_adjust_bruteforce(pred, truth))


def test_point_adjust_never_unsets_or_strays():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        pred = (rng.random(n) < 0.3).astype(np.int8)
        truth = (rng.random(n) < 0.3).astype(np.int8)
        adjusted = point_adjust(pred, truth)
        assert np.all(adjusted >= pred)                 # never unsets
        assert np.all((adjusted & ~pred) <= truth)      # new marks only inside truth


def test_point_adjust_length_mismatch():
    with pytest.raises(DataError):
        point_adjust(np.zeros(3), np.zeros(4))


# ------------------------------------------------------------------ prf1

def test_prf1_perfect_prediction():
    truth = np.array([0, 1, 1, 0, 1])
    m = prf1(truth, truth)
    assert (m.precision, m.recall, m.f1) == (100.0, 100.0, 100.0)


@pytest.mark.parametrize("p,r,f1", [(83.09, 80.46, 81.76), (99.21, 89.37, 94.04)])
def test_f1_published_pairs(p, r, f1):
    assert abs(f1_score(p, r) - f1) <= 0.01


def test_prf1_hand_counts():
    # tp=2, predicted positives 4, true positives 8
    pred = np.zeros(20, dtype=int)
    truth = np.zeros(20, dtype=int)
    pred[[0, 1, 2, 3]] = 1
    truth[[2, 3, 10, 11, 12, 13, 14, 15]] = 1
    m = prf1(pred, truth)
    assert m.precision == 50.0
    assert m.recall == 25.0
    assert abs(m.f1 - 100.0 / 3.0) < 1e-12


def test_prf1_matches_oracle_randomized():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(1, 50))
        pred = (rng.random(n) < 0.4).astype(int)
        truth = (rng.random(n) < 0.4).astype(int)
        if truth.sum() == 0:
            continue
        m = prf1(pred, truth)
        p, r, f1 = oracles.prf1_hand(pred, truth)
        assert (m.precision, m.recall, m.f1) == (p, r, f1)


def test_prf1_empty_truth_warns_recall_zero():
    with pytest.warns(UserWarning):
        m = prf1(np.array([1, 0, 1]), np.array([0, 0, 0]))
    assert m.recall == 0.0
    assert m.f1 == 0.0


def test_prf1_zero_denominators():
    truth = np.array([1, 0])
    m = prf1(np.array([0, 0]), truth)
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


# --------------------------------------------------------------- roc_auc

def test_auc_perfect_separation():
    scores = np.array([0.1, 0.2, 0.9, 0.8])
    truth = np.array([0, 0, 1, 1])
    assert roc_auc(scores, truth) == 1.0


def test_auc_all_ties_is_half():
    assert roc_auc(np.full(10, 3.0), np.r_[np.ones(4), np.zeros(6)]) == 0.5


def test_auc_matches_bruteforce():
    rng = np.random.default_rng(9)
    for _ in range(200):
        n = int(rng.integers(2, 31))
        truth = (rng.random(n) < 0.4).astype(int)
        if truth.sum() in (0, n):
            continue
        if rng.random() < 0.5:
            scores = rng.normal(size=n)
        else:
            scores = rng.integers(0, 4, size=n).astype(np.float64)
        assert abs(roc_auc(scores, truth) - oracles.auc_bruteforce(scores, truth)) < 1e-12


def test_auc_single_class_raises():
    with pytest.raises(DataError):
        roc_auc(np.array([1.0, 2.0]), np.array([1, 1]))
    with pytest.raises(DataError):
        roc_auc(np.array([1.0, 2.0]), np.array([0, 0]))


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(10)
    scores = rng.integers(0, 6, size=50).astype(np.float64)
    truth = (rng.random(50) < 0.3).astype(int)
    truth[0], truth[1] = 0, 1
    base = roc_auc(scores, truth)
    assert roc_auc(np.exp(scores), truth) == base
    assert roc_auc(scores**3, truth) == base


# ------------------------------------------------------------------- vus

def test_soften_hand_case():
    truth = np.array([0, 0, 0, 1, 1, 0, 0, 0])
    soft = soften_labels(truth, 2)
    expected = np.array([0.0, 1 / 3, 2 / 3, 1.0, 1.0, 2 / 3, 1 / 3, 0.0])
    assert np.allclose(soft, expected, atol=1e-15)


def test_soften_zero_buffer_is_identity():
    truth = np.array([0, 1, 0, 1, 1, 0])
    assert np.array_equal(soften_labels(truth, 0), truth.astype(float))


def test_soften_overlap_takes_max():
    truth = np.array([1, 0, 0, 1])
    soft = soften_labels(truth, 3)
    # index 1: ramp from left segment gives 3/4, from right segment 1/2
    assert soft[1] == 0.75
    assert soft[2] == 0.75
    assert np.array_equal(soft, oracles.soft_labels_bruteforce(truth, 3))


def test_soften_matches_bruteforce_randomized():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        truth = (rng.random(n) < 0.25).astype(int)
        ell = int(rng.integers(0, 6))
        assert np.array_equal(soften_labels(truth, ell),
                              oracles.soft_labels_bruteforce(truth, ell))


def test_vus_zero_buffer_equals_auc_exactly():
    rng = np.random.default_rng(12)
    scores = rng.normal(size=40)
    truth = (rng.random(40) < 0.3).astype(int)
    truth[0], truth[1] = 1, 0
    assert vus_roc(scores, truth, max_buffer=0) == roc_auc(scores, truth)


def test_vus_perfect_hard_case():
    scores = np.array([0.0, 0.1, 5.0, 4.0])
    truth = np.array([0, 0, 1, 1])
    assert vus_roc(scores, truth, max_buffer=0) == 1.0


def test_vus_small_instance_against_double_loop():
    scores = np.array([0.3, 0.9, 0.2, 0.8, 0.1, 0.5])
    truth = np.array([0, 1, 0, 1, 0, 0])
    assert abs(vus_roc(scores, truth, 2) - oracles.vus_bruteforce(scores, truth, 2)) < 1e-12


def test_vus_matches_bruteforce_randomized():
    rng = np.random.default_rng(13)
    for _ in range(200):
        n = int(rng.integers(2, 31))
        truth = (rng.random(n) < 0.35).astype(int)
        if truth.sum() in (0, n):
            continue
        if rng.random() < 0.5:
            scores = rng.normal(size=n)
        else:
            scores = rng.integers(0, 4, size=n).astype(np.float64)
        ell = int(rng.integers(0, 5))
        assert abs(vus_roc(scores, truth, ell) - oracles.vus_bruteforce(scores, truth, ell)) < 1e-12


def test_vus_rejects_negative_buffer():
    with pytest.raises(DataError):
        vus_roc(np.array([1.0, 2.0]), np.array([0, 1]), -1)


# ------------------------------------------------------- defaults, report

def test_default_gamma_by_dataset_family():
    assert default_gamma("machine-1-1_smd") == 0.5
    assert default_gamma("UCR_135") == 0.1
    assert default_gamma("skab-valve1") == 10.0
    assert default_gamma("swat") == 1.0
    assert default_gamma(None) == 1.0


def test_segments_finds_runs():
    assert segments(np.array([1, 1, 0, 0, 1, 0, 1])) == [(0, 2), (4, 5), (6, 7)]
    assert segments(np.zeros(5)) == []


def test_evaluate_attaches_all_metrics():
    rng = np.random.default_rng(14)
    scores = rng.random(300)
    truth = np.zeros(300, dtype=int)
    truth[40:60] = 1
    scores[40:60] += 2.0
    report = evaluate(scores, truth, gamma=8.0)
    assert report.raw is not None and report.adjusted is not None
    assert report.auc is not None and report.vus is not None
    assert report.auc > 0.95
    assert report.adjusted.f1 >= report.raw.f1
    assert report.headline is report.adjusted
    frac = report.labels.mean()
    assert abs(frac - 0.08) <= 1.0 / 300 + 1e-12


def test_evaluate_single_class_truth_warns_not_raises():
    scores = np.random.default_rng(15).random(50)
    with pytest.warns(UserWarning):
        report = evaluate(scores, np.zeros(50, dtype=int), gamma=10.0)
    assert report.auc is None and report.vus is None
    assert report.raw is not None  # prf1 still defined (recall 0)


def test_render_report_keys_and_determinism():
    rng = np.random.default_rng(16)
    scores = rng.random(100)
    truth = (rng.random(100) < 0.1).astype(int)
    truth[3] = 1
    truth[50] = 0
    report = evaluate(scores, truth, gamma=5.0)
    text = render_report(report)
    for key in ("points:", "gamma:", "delta:", "flagged:", "point_adjust: on",
                "precision_raw:", "recall_raw:", "f1_raw:", "precision_adjusted:",
                "recall_adjusted:", "f1_adjusted:", "auc:", "vus:", "vus_buffer:"):
        assert key in text
    again = render_report(evaluate(scores, truth, gamma=5.0))
    assert text == again


def test_render_report_without_truth():
    scores = np.random.default_rng(17).random(40)
    report = evaluate(scores, None, gamma=10.0)
    text = render_report(report)
    assert "precision_raw" not in text
    assert "delta:" in text


def test_scores_csv_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    scores = rng.random(30)
    labels = (rng.random(30) < 0.2).astype(np.int8)
    truth = (rng.random(30) < 0.2).astype(np.int8)
    path = tmp_path / "scores.csv"
    write_scores_csv(path, scores, labels, truth)
    header = path.read_text().splitlines()[0]
    assert header == "t,score,label,truth"
    s2, l2, t2 = read_scores_csv(path)
    assert s2.tobytes() == scores.tobytes()  # repr round-trips float64 exactly
    assert np.array_equal(l2, labels)
    assert np.array_equal(t2, truth)


def test_scores_csv_truth_optional(tmp_path):
    path = tmp_path / "scores.csv"
    write_scores_csv(path, np.array([1.5, 2.5]), np.array([0, 1]))
    s2, l2, t2 = read_scores_csv(path)
    assert t2 is None
    assert s2.tolist() == [1.5, 2.5]


def test_scores_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,score\n0,1.0\n")
    with pytest.raises(DataError):
        read_scores_csv(path)
