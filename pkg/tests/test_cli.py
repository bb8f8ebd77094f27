import csv

import numpy as np
import pytest

from msnn.cli import main, parse_results_csv, results_to_csv, evaluate_streams
from msnn.estimators import ClipPreprocessor, LateFusionClassifier, StreamClassifier, check_clips
from msnn.data import load_manifest
from msnn.errors import EmptyDatasetError, InvalidArgumentError

SCALE = ["--desk", "--input-size", "16", "--clip-length", "4"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--classes", "3", "--clips-per-class", "6", "--seed", "5", "--out", str(root / "data"),
                 "--frame-size", "64"]) == 0
    manifest = root / "data" / "manifest.csv"
    cache = root / "cache"
    assert main(["preprocess", "--manifest", str(manifest), "--cache", str(cache)] + SCALE) == 0
    for stream in ("rgb", "skeleton"):
        assert main(["train", "--manifest", str(manifest), "--stream", stream, "--epochs", "2", "--seed", "1",
                     "--out", str(root / "ck" / stream), "--cache", str(cache)] + SCALE) == 0
    return root, manifest, cache


def test_train_writes_artifacts(workspace):
    root, _, _ = workspace
    for stream in ("rgb", "skeleton"):
        names = {p.name for p in (root / "ck" / stream).iterdir()}
        assert {"history.csv", "last.ckpt", "last.ckpt.json", "pipeline.json"} <= names
        with (root / "ck" / stream / "history.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == 2


def test_evaluate_csv_round_trips(workspace, capsys):
    root, manifest, cache = workspace
    out = root / "eval.csv"
    assert main(["evaluate", "--manifest", str(manifest), "--streams", "rgb,skeleton", "--ckpt-dir",
                 str(root / "ck"), "--top-n", "1,2,3", "--csv", str(out), "--cache", str(cache)]) == 0
    text = capsys.readouterr().out
    assert "fused" in text and "rgb" in text
    results = evaluate_streams(manifest, ["rgb", "skeleton"], root / "ck", [1, 2, 3], cache=cache)
    assert parse_results_csv(out.read_text()) == results
    assert list(results) == ["rgb", "skeleton", "fused"]
    assert all(acc[3] == 1.0 and acc[1] <= acc[2] <= acc[3] for acc in results.values())


def test_results_csv_preserves_floats():
    results = {"rgb": {1: 1 / 3, 5: 0.1 + 0.2}, "fused": {1: 2 / 3, 5: 1.0}}
    assert parse_results_csv(results_to_csv(results)) == results


def test_exit_codes(workspace, tmp_path):
    root, manifest, cache = workspace
    assert main(["evaluate", "--manifest", str(manifest), "--streams", "rgb", "--ckpt-dir", str(root / "ck"),
                 "--top-n", "1,5", "--cache", str(cache)]) == 2  # N exceeds the 3 classes
    assert main(["evaluate", "--manifest", str(manifest), "--streams", "face", "--ckpt-dir", str(root / "ck")]) == 3
    assert main(["train", "--manifest", str(tmp_path / "none.csv"), "--stream", "rgb", "--out", str(tmp_path)]) == 3
    assert main(["train", "--manifest", str(manifest), "--stream", "hand", "--out", str(tmp_path)]) == 2
    assert main(["evaluate", "--manifest", str(manifest), "--streams", "rgb", "--ckpt-dir", "x",
                 "--top-n", "one"]) == 2
    assert main(["ablate", "--manifest", str(manifest), "--ckpt-dir", str(root / "ck")]) == 3


def test_divergence_exit_code(workspace, tmp_path, monkeypatch):
    import msnn.training as training
    root, manifest, cache = workspace

    def explode(*args, **kwargs):
        raise training.DivergenceError("non-finite gradient for parameter 'head.weight'")

    monkeypatch.setattr(training, "adam_step", explode)
    assert main(["train", "--manifest", str(manifest), "--stream", "skeleton", "--epochs", "1",
                 "--out", str(tmp_path / "d"), "--cache", str(cache)] + SCALE) == 4


def test_ablate_table(workspace, tmp_path, capsys):
    root, manifest, cache = workspace
    out = tmp_path / "ablate.csv"
    assert main(["ablate", "--manifest", str(manifest), "--ckpt-dir", str(root / "abl"), "--seeds", "0",
                 "--train", "--epochs", "1", "--csv", str(out), "--cache", str(cache)] + SCALE) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["name"] for r in rows] == ["Baseline1", "Baseline2"] + [f"Ours{i}" for i in range(1, 7)]
    assert list(rows[0]) == ["name", "seed", "flow", "local", "skeleton", "top1", "top5", "top10"]
    assert main(["ablate", "--manifest", str(manifest), "--ckpt-dir", str(root / "abl"), "--seeds", "0",
                 "--csv", str(tmp_path / "again.csv"), "--cache", str(cache)]) == 0
    assert (tmp_path / "again.csv").read_text() == out.read_text()


# -- estimator wrappers ---------------------------------------------------------------

def test_estimators_fit_and_predict(workspace):
    root, manifest, cache = workspace
    dataset = load_manifest(manifest)
    prep = ClipPreprocessor(input_size=16, clip_length=4, cache_dir=cache).fit()
    train = prep.transform(dataset.split("train"))
    test = prep.transform(dataset.split("test"))
    params = dict(epochs=2, input_size=16, clip_length=4, model_overrides={"stem_kernel": (3, 3, 3)})
    clf = StreamClassifier("skeleton", **params).fit(train)
    proba = clf.predict_proba(test)
    assert proba.shape == (len(test), 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert 0.0 <= clf.score(test, [c.label for c in test]) <= 1.0
    assert clf.get_params()["stream"] == "skeleton"
    fusion = LateFusionClassifier([StreamClassifier("rgb", **params), StreamClassifier("skeleton", **params)])
    fusion.fit(train)
    fused = fusion.predict_proba(test)
    parts = [s.probabilities for s in fusion.stream_scores(test)]
    np.testing.assert_allclose(fused, (parts[0] + parts[1]) / 2, atol=1e-15)
    np.testing.assert_array_equal(parts[1], proba)  # same seed and data, same skeleton network
    assert fusion.predict(test).shape == (len(test),)


def test_clip_validation():
    with pytest.raises(EmptyDatasetError):
        check_clips([])
    with pytest.raises(InvalidArgumentError):
        check_clips([1, 2])
    with pytest.raises(InvalidArgumentError):
        LateFusionClassifier([]).fit([1])
    with pytest.raises(InvalidArgumentError):
        StreamClassifier("depth").fit([1])
