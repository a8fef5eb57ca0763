import csv

import numpy as np
import pytest

from alps.config import TrainingConfig
from alps.data import blob_corpus, extract_patches, gen_video, to_model_input
from alps.errors import ProtocolError, UndefinedMetricError
from alps.evaluation import EvalReport, aggregate, build_report, mean_auroc, run_class_vs_rest, run_frame_protocol
from alps.training import train
from conftest import TINY


def test_absent_inlier_class(tiny_networks):
    data = blob_corpus(0, 5, 5)
    with pytest.raises(ProtocolError):
        run_class_vs_rest(tiny_networks, data.images, data.labels, inlier_class=7)


def test_inlier_only_test_set_is_undefined(tiny_networks):
    data = blob_corpus(0, 5, 0)
    with pytest.raises(UndefinedMetricError):
        run_class_vs_rest(tiny_networks, data.images, data.labels, inlier_class=0)


def test_class_vs_rest_report(tiny_networks, tmp_path):
    data = blob_corpus(1, 12, 8)
    report = run_class_vs_rest(tiny_networks, data.images, data.labels, 0, chosen_variant="perturbed")
    assert (report.n_samples, report.n_inliers, report.n_outliers) == (20, 12, 8)
    assert all(0 <= v <= 1 for d in (report.auroc, report.eer) for v in d.values())
    assert "<- chosen" in [l for l in report.summary().splitlines() if l.startswith("perturbed")][0]
    report.write(tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [r["variant"] for r in rows] == ["plain", "perturbed", "mean"]
    assert float(rows[0]["auroc"]) == report.auroc["plain"]
    assert (tmp_path / "scores.csv").read_text().count("\n") == 21
    assert (tmp_path / "summary.txt").read_text() == report.summary()


def fake_report(value, chosen="mean"):
    return EvalReport(auroc={"plain": 0.0, "perturbed": 0.0, "mean": 0.0, chosen: value}, eer={},
                      chosen_variant=chosen, labels=np.array([0, 1]), scores={})


def test_mean_auroc_is_unweighted():
    reports = [fake_report(0.9), fake_report(0.5, "plain"), fake_report(0.7)]
    assert mean_auroc(reports) == pytest.approx(0.7)
    assert mean_auroc(reports, "plain") == pytest.approx(0.5 / 3)


def test_aggregation():
    s = np.array([[0.1, 0.9, 0.2], [0.3, 0.3, 0.3]])
    np.testing.assert_array_equal(aggregate(s, "max"), [0.9, 0.3])
    np.testing.assert_allclose(aggregate(s, "mean"), [0.4, 0.3])
    with pytest.raises(ValueError):
        aggregate(s, "median")


def test_equal_patch_scores_give_that_score():
    s = np.full((4, 96), 0.25)
    assert (aggregate(s, "max") == 0.25).all() and (aggregate(s, "mean") == 0.25).all()


def test_build_report_checks_both_classes():
    with pytest.raises(UndefinedMetricError):
        build_report({v: np.zeros(3) for v in ("plain", "perturbed", "mean")}, [1, 1, 1], "mean", "x")


@pytest.fixture(scope="module")
def video_model():
    train_video = gen_video(3, 4, 0)
    patches = np.concatenate([extract_patches(f) for f in train_video.frames])
    x = to_model_input(patches, 16)
    result = train(TrainingConfig(epochs=3, batch_size=32, **TINY), x)
    return result.networks


def test_frame_protocol_max_beats_mean(video_model):
    # a single odd patch is diluted by the 95 normal ones under mean aggregation
    test = gen_video(4, 10, 10)
    by_max, details = run_frame_protocol(video_model, test.frames, test.labels, aggregation="max",
                                         frame_ids=test.names)
    by_mean, _ = run_frame_protocol(video_model, test.frames, test.labels, aggregation="mean")
    assert by_max.auroc["mean"] >= by_mean.auroc["mean"]
    assert by_max.auroc["mean"] > 0.9
    assert by_max.notes["patches_per_frame"] == "96"
    assert len(details) == 20 and details[0].frame_id == "frame_0000.pgm"
    assert details[0].patch_scores.shape == (96,)
    assert details[0].frame_score == details[0].patch_scores.max()
