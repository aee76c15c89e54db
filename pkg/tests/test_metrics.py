"""Retrieval metric table against hand cases and a brute-force oracle."""

import json

import numpy as np
import pytest

from oracle_metrics import brute_metrics, brute_rankings, random_instance
from shapegraph.errors import DimensionError, NumericError
from shapegraph.metrics import (
    METRIC_ORDER,
    RetrievalRun,
    compute_metrics,
    distance_histograms,
    margin_statistic,
    metrics_to_json,
    rank_gallery,
    render_metric_table,
    write_histogram_csv,
)


def _angles(theta):
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


# ---------------------------------------------------------------- ranking


def test_gallery_of_one():
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"],
                       np.array([[0.3, 0.4]]), ["a"])
    assert rank_gallery(run).tolist() == [[0]]


def test_exact_match_ranks_first():
    gal = _angles([0.9, 0.4, 1.7])
    run = RetrievalRun(gal[1:2], ["a"], gal, ["b", "a", "b"])
    assert rank_gallery(run)[0, 0] == 1


def test_ties_break_to_lower_index():
    gal = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0], [0.0, 1.0]])
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, ["a"] * 4)
    # rows 0..2 all have cosine 1 with the query
    assert rank_gallery(run).tolist() == [[0, 1, 2, 3]]


def test_ranking_matches_naive_sort_oracle():
    rng = np.random.default_rng(40)
    for _ in range(100):
        inst = random_instance(rng)
        want = brute_rankings(*inst)
        np.testing.assert_array_equal(rank_gallery(RetrievalRun(*inst)), np.array(want))


def test_rankings_are_gallery_permutations():
    rng = np.random.default_rng(41)
    run = RetrievalRun(*random_instance(rng))
    for row in rank_gallery(run):
        assert sorted(row.tolist()) == list(range(run.gallery.shape[0]))


# ---------------------------------------------------------------- hand cases


def test_average_precision_hand_case():
    # gallery of 4 ranked 0..3 by construction, relevant at ranks 1 and 3
    gal = _angles([0.1, 0.2, 0.3, 0.4])
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, ["a", "b", "a", "b"])
    table = compute_metrics(run)
    assert table["mAP"] == pytest.approx(100.0 * (1.0 + 2.0 / 3.0) / 2.0, abs=1e-9)
    assert table["mAP"] == pytest.approx(83.33, abs=0.005)
    assert table["NN"] == 100.0
    assert table["FT"] == 50.0     # one of two relevant inside the first tier
    assert table["ST"] == 100.0    # both inside the second tier
    assert table["MRR"] == 100.0


def test_perfect_ranking_small_gallery():
    gal = _angles([0.1, 0.2, 0.3, 0.4])
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, ["a"] * 4)
    table = compute_metrics(run)
    for name in ("NN", "FT", "ST", "nDCG", "MRR", "mAP"):
        assert table[name] == pytest.approx(100.0, abs=1e-9)
    # cut-off clips to the gallery: precision and recall both 1 at the cut
    assert table["E"] == pytest.approx(0.0, abs=1e-9)


def test_perfect_ranking_large_gallery_e_value():
    g = 40
    gal = _angles(np.linspace(0.05, 1.2, g))
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, ["a"] * g)
    table = compute_metrics(run)
    # 32 hits at the cut: precision 1, recall 32/40; E from the definition
    p, r = 1.0, 32.0 / 40.0
    want = (1.0 - 2.0 / (1.0 / p + 1.0 / r)) * 100.0
    assert table["E"] == pytest.approx(want, abs=1e-9)
    assert table["mAP"] == pytest.approx(100.0, abs=1e-9)


def test_no_hit_inside_cut_scores_worst_e():
    g = 40
    gal = _angles(np.linspace(0.05, 1.2, g))
    labels = ["b"] * (g - 1) + ["a"]   # single relevant item ranked last
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, labels)
    table = compute_metrics(run)
    assert table["E"] == 100.0
    assert table["NN"] == 0.0
    assert table["MRR"] == pytest.approx(100.0 / g, abs=1e-9)
    assert table["mAP"] == pytest.approx(100.0 / g, abs=1e-9)


def test_second_tier_window_clips_to_gallery():
    # three of four items relevant: 2R = 6 exceeds the gallery, window is 4
    gal = _angles([0.1, 0.2, 0.3, 0.4])
    run = RetrievalRun(np.array([[1.0, 0.0]]), ["a"], gal, ["a", "b", "a", "a"])
    table = compute_metrics(run)
    assert table["FT"] == pytest.approx(100.0 * 2.0 / 3.0, abs=1e-9)
    assert table["ST"] == pytest.approx(100.0, abs=1e-9)


# ---------------------------------------------------------------- oracle


def test_metrics_equal_brute_force_on_200_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        q, ql, g, gl = random_instance(rng)
        run = RetrievalRun(q, ql, g, gl)
        got = compute_metrics(run)
        want = brute_metrics(q, ql, g, gl)
        assert set(got) == set(want)
        for name in got:
            assert got[name] == want[name], name


def test_metric_bounds():
    rng = np.random.default_rng(8)
    for _ in range(50):
        table = compute_metrics(RetrievalRun(*random_instance(rng)))
        for name, value in table.items():
            assert 0.0 <= value <= 100.0, name


def test_order_preserving_gallery_permutation_invariance():
    rng = np.random.default_rng(9)
    for _ in range(20):
        q, ql, g, gl = random_instance(rng)
        base = compute_metrics(RetrievalRun(q, ql, g, gl))
        perm = rng.permutation(g.shape[0])
        shuffled = compute_metrics(
            RetrievalRun(q, ql, g[perm], [gl[i] for i in perm]))
        for name in base:
            assert base[name] == pytest.approx(shuffled[name], abs=1e-9), name


# ---------------------------------------------------------------- validation


def test_query_class_absent_rejected():
    with pytest.raises(DimensionError):
        RetrievalRun(np.eye(2), ["a", "c"], np.eye(2), ["a", "b"])


def test_width_mismatch_rejected():
    with pytest.raises(DimensionError):
        RetrievalRun(np.ones((1, 3)), ["a"], np.ones((1, 2)), ["a"])


def test_label_count_mismatch_rejected():
    with pytest.raises(DimensionError):
        RetrievalRun(np.ones((2, 2)), ["a"], np.ones((1, 2)), ["a"])


def test_zero_norm_rows_rejected():
    run = RetrievalRun(np.array([[0.0, 0.0]]), ["a"], np.eye(2), ["a", "a"])
    with pytest.raises(NumericError):
        rank_gallery(run)


# ---------------------------------------------------------------- histograms


def _cluster_run():
    gal = np.vstack([_angles([0.0, 0.05, 0.1]), _angles([2.0, 2.05, 2.1])])
    labels = ["a"] * 3 + ["b"] * 3
    return RetrievalRun(gal[:1], ["a"], gal, labels)


def test_single_class_gallery_has_empty_cross_histogram():
    run = RetrievalRun(np.eye(2)[:1], ["a"], _angles([0.1, 0.5, 0.9]), ["a"] * 3)
    hist = distance_histograms(run)
    assert hist["inter"].sum() == 0
    assert hist["intra"].sum() == 3  # all three pairs


def test_histogram_mass_equals_pair_count():
    run = _cluster_run()
    hist = distance_histograms(run, bins=17)
    g = run.gallery.shape[0]
    assert hist["intra"].sum() + hist["inter"].sum() == g * (g - 1) // 2
    assert len(hist["edges"]) == 18
    assert hist["edges"][0] == 0.0 and hist["edges"][-1] == 2.0


def test_identical_embeddings_fill_first_bin():
    gal = np.tile(np.array([[0.6, 0.8]]), (4, 1))
    run = RetrievalRun(gal[:1], ["a"], gal, ["a", "a", "b", "b"])
    hist = distance_histograms(run, bins=10)
    assert hist["intra"][0] == 2 and hist["intra"][1:].sum() == 0
    assert hist["inter"][0] == 4 and hist["inter"][1:].sum() == 0


def test_histogram_needs_a_bin():
    with pytest.raises(DimensionError):
        distance_histograms(_cluster_run(), bins=0)


def test_margin_zero_for_identical_embeddings():
    gal = np.tile(np.array([[0.6, 0.8]]), (4, 1))
    run = RetrievalRun(gal[:1], ["a"], gal, ["a", "a", "b", "b"])
    assert margin_statistic(run) == pytest.approx(0.0, abs=1e-12)


def test_margin_positive_for_separated_clusters():
    assert margin_statistic(_cluster_run()) > 0.5


# ---------------------------------------------------------------- export


def test_metric_table_column_order():
    table = {name: float(i) for i, name in enumerate(METRIC_ORDER)}
    text = render_metric_table(table, title="demo")
    lines = text.splitlines()
    assert lines[0] == "demo"
    assert lines[1].split() == ["NN", "FT", "ST", "nDCG", "E", "MRR", "mAP"]
    assert [float(x) for x in lines[2].split()] == [float(i) for i in range(7)]


def test_metrics_json_round_trip():
    table = {name: float(i) for i, name in enumerate(METRIC_ORDER)}
    back = json.loads(metrics_to_json(table))
    assert back == table
    assert list(back) == list(METRIC_ORDER)


def test_histogram_csv_layout(tmp_path):
    hist = distance_histograms(_cluster_run(), bins=5)
    path = tmp_path / "hist.csv"
    write_histogram_csv(path, hist)
    rows = path.read_text(encoding="utf-8").strip().splitlines()
    assert rows[0] == "bin_start,bin_end,same_class,cross_class"
    assert len(rows) == 6
    total = sum(int(r.split(",")[2]) + int(r.split(",")[3]) for r in rows[1:])
    assert total == 15
