import math

import numpy as np
import pytest

import mgh


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("mgh")
    corpus = root / "corpus"
    counts = mgh.generate_corpus(corpus, seed=2, identities=6, frames=8, channels=8, height=8, width=2)
    result = mgh.train(
        corpus,
        root / "run",
        seed=1,
        partitions=[1, 2],
        thresholds=[1, 3, 5],
        K=3,
        L=1,
        P=2,
        K_tr=2,
        epochs=2,
        iters_per_epoch=2,
    )
    return corpus, result, counts


def test_cosine_distance():
    q = np.array([[1.0, 0.0]])
    g = np.array([[2.0, 0.0], [0.0, 1.0], [-3.0, 0.0]])
    np.testing.assert_allclose(mgh.pairwise_cosine_distance(q, g), [[0.0, 1.0, 2.0]], atol=1e-12)
    with pytest.raises(mgh.ShapeError):
        mgh.pairwise_cosine_distance(q, np.ones((2, 3)))


def test_hyperedge_count():
    rng = np.random.default_rng(0)
    edges = mgh.build_hyperedges(rng.normal(size=(8, 4)), parts=1, neighbors=3, thresholds=[1, 3, 5])
    assert len(edges) == 24
    for e in edges:
        assert e["members"][0] == e["anchor"]
        assert 1 <= e["level"] <= 3


def test_gradcheck():
    checks = mgh.gradcheck(seed=3)
    assert len(checks) > 20
    assert all(err < 1e-4 for _, err in checks)


def test_train_and_evaluate(trained, tmp_path):
    corpus, result, counts = trained
    assert counts["tracklets"] == 24
    assert result["steps"] == 4
    report = mgh.evaluate(result["checkpoint"], corpus, ranking_csv=tmp_path / "rank.csv")
    assert 0.0 <= report["mAP"] <= 1.0
    assert report["top1"] <= report["top5"] <= report["top20"]
    assert (tmp_path / "rank.csv").read_text().startswith("query_id,rank,gallery_id,distance,relevant")

    ids, desc = mgh.descriptors(result["checkpoint"], corpus)
    assert desc.shape == (24, 16)
    assert np.all(np.isfinite(desc))
    assert len(ids) == 24


def test_inspect_graph(trained):
    corpus, result, _ = trained
    doc = mgh.inspect_graph(result["checkpoint"], corpus, 12)
    assert doc["tracklet_id"] == 12
    for g in doc["granularities"]:
        assert math.isclose(sum(g["alpha"]), 1.0, abs_tol=1e-9)
    with pytest.raises(mgh.CorpusError):
        mgh.inspect_graph(result["checkpoint"], corpus, 9999)


def test_errors(tmp_path):
    with pytest.raises(mgh.MGHError, match="colour"):
        mgh.generate_corpus(tmp_path / "c", colour="blue")
    code, out, _ = mgh.run_cli(["--help"])
    assert code == 0
    assert "gen-data" in out
