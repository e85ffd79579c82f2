import numpy as np
import pytest

from topicmine.encoder import EmbeddingSet
from topicmine.errors import ConfigError, InputError, NumericalError
from topicmine.projection import (
    Projection2D,
    TsneSettings,
    conditional_affinities,
    emit_points,
    fuse_vectors,
    fusion_matrix,
    joint_affinities,
    low_dim_affinities,
    render_svg,
    silhouette,
    tsne,
    write_points_csv,
)


def embedding_set(vectors, doc_ids=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    ids = doc_ids or [f"d{i}" for i in range(vectors.shape[0])]
    return EmbeddingSet(
        dim=vectors.shape[1],
        doc_ids=ids,
        doc_vectors=vectors,
        token_vectors=None,
        source="file",
    )


def two_clouds(n_per=50, dim=20, gap=10.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, size=(n_per, dim))
    b = rng.normal(0.0, 1.0, size=(n_per, dim))
    b[:, 0] += gap
    labels = np.array([0] * n_per + [1] * n_per)
    return np.vstack([a, b]), labels


class TestFusion:
    def test_normalize_and_concatenate(self):
        es = embedding_set([[3.0, 4.0]])
        theta = np.array([[1.0, 0.0]])
        fused = fuse_vectors(es, theta, lam=1.0)
        np.testing.assert_allclose(fused[0].vector, [0.6, 0.8, 1.0, 0.0], atol=1e-12)

    def test_lambda_zero_zeroes_topic_block(self):
        es = embedding_set([[1.0, 0.0], [0.0, 2.0]])
        theta = np.array([[0.3, 0.7], [0.9, 0.1]])
        fused = fuse_vectors(es, theta, lam=0.0)
        for f in fused:
            assert np.array_equal(f.vector[2:], [0.0, 0.0])

    def test_output_dimension(self):
        es = embedding_set(np.ones((4, 5)))
        theta = np.full((4, 3), 1 / 3)
        fused = fuse_vectors(es, theta, lam=2.0)
        assert fusion_matrix(fused).shape == (4, 8)

    def test_topic_block_sums_to_lambda(self):
        rng = np.random.default_rng(0)
        es = embedding_set(rng.normal(size=(6, 4)))
        theta = rng.dirichlet(np.ones(3), size=6)
        lam = 2.5
        for f in fuse_vectors(es, theta, lam=lam):
            assert f.vector[4:].sum() == pytest.approx(lam, abs=1e-9)
            assert np.linalg.norm(f.vector[:4]) == pytest.approx(1.0, abs=1e-12)

    def test_zero_embedding_flagged(self):
        es = embedding_set([[0.0, 0.0], [1.0, 0.0]])
        theta = np.full((2, 2), 0.5)
        fused = fuse_vectors(es, theta)
        assert fused[0].zero_embedding and not fused[1].zero_embedding
        assert np.array_equal(fused[0].vector[:2], [0.0, 0.0])

    def test_alignment_error_reports_counts(self):
        es = embedding_set(np.ones((3, 2)))
        with pytest.raises(InputError, match="3 embeddings vs 2"):
            fuse_vectors(es, np.ones((2, 2)))

    def test_negative_lambda_rejected(self):
        es = embedding_set(np.ones((2, 2)))
        with pytest.raises(ConfigError):
            fuse_vectors(es, np.full((2, 2), 0.5), lam=-1.0)


class TestAffinities:
    def test_conditional_rows_normalized(self):
        X, _ = two_clouds(20, dim=5)
        p_cond, unconverged = conditional_affinities(X, perplexity=8)
        assert unconverged == 0
        np.testing.assert_allclose(p_cond.sum(axis=1), 1.0, atol=1e-6)

    def test_entropy_matches_target(self):
        X, _ = two_clouds(20, dim=5, seed=3)
        perp = 7.0
        p_cond, unconverged = conditional_affinities(X, perplexity=perp)
        assert unconverged == 0
        for i in range(p_cond.shape[0]):
            row = p_cond[i][p_cond[i] > 0]
            entropy = -(row * np.log(row)).sum()
            assert abs(entropy - np.log(perp)) <= 1e-5

    def test_joint_sums_to_one(self):
        X, _ = two_clouds(15, dim=4, seed=1)
        P = joint_affinities(conditional_affinities(X, 6)[0])
        assert abs(P.sum() - 1.0) < 1e-9
        assert np.array_equal(P, P.T)

    def test_q_sums_to_one(self):
        rng = np.random.default_rng(0)
        Q, num = low_dim_affinities(rng.normal(size=(30, 2)))
        assert abs(Q.sum() - 1.0) < 1e-9
        assert (np.diag(num) == 0).all()


class TestTsne:
    def test_perplexity_precondition(self):
        X = np.random.default_rng(0).normal(size=(10, 4))
        with pytest.raises(ConfigError, match="perplexity"):
            tsne(X, TsneSettings(perplexity=30.0))

    def test_minimum_points(self):
        X = np.zeros((3, 2))
        with pytest.raises(ConfigError):
            tsne(X, TsneSettings(perplexity=1.0))

    def test_two_clouds_silhouette(self):
        X, labels = two_clouds(50, dim=20, gap=10.0)
        proj = tsne(X, TsneSettings(perplexity=15, iterations=500, seed=3))
        assert silhouette(proj.points, labels) > 0.3

    def test_kl_decreases_across_seeds(self):
        X, _ = two_clouds(50, dim=8, seed=2)
        for seed in range(20):
            proj = tsne(X, TsneSettings(perplexity=15, iterations=500, seed=seed))
            assert proj.kl_history[-1] < proj.kl_history[0]
            assert (proj.kl_history >= 0.0).all()
            assert np.isfinite(proj.points).all()

    def test_deterministic(self):
        X, _ = two_clouds(15, dim=6, seed=4)
        s = TsneSettings(perplexity=6, iterations=150, seed=9)
        p1, p2 = tsne(X, s), tsne(X, s)
        assert np.array_equal(p1.points, p2.points)
        assert np.array_equal(p1.kl_history, p2.kl_history)

    def test_duplicate_points_jittered(self):
        X = np.ones((12, 3))
        X[6:] = 2.0
        proj = tsne(X, TsneSettings(perplexity=3, iterations=60, seed=0))
        assert np.isfinite(proj.points).all()

    def test_dominant_topic_from_theta(self):
        X, _ = two_clouds(10, dim=4, seed=5)
        theta = np.tile([0.2, 0.5, 0.3], (20, 1))
        theta[0] = [0.5, 0.5, 0.0]  # tie -> lowest index
        proj = tsne(X, TsneSettings(perplexity=5, iterations=30, seed=0), theta=theta)
        assert proj.dominant_topic[0] == 0
        assert (proj.dominant_topic[1:] == 1).all()

    def test_history_length(self):
        X, _ = two_clouds(10, dim=4, seed=6)
        proj = tsne(X, TsneSettings(perplexity=5, iterations=100, record_every=10, seed=0))
        assert len(proj.kl_history) == 11  # initial + every 10th


class TestEmit:
    def _projection(self):
        points = np.array([[1.25, -2.5], [0.0, 3.0], [4.5, 0.5]])
        theta = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]])
        return Projection2D(
            points=points,
            kl_history=np.array([1.0, 0.5]),
            dominant_topic=theta.argmax(axis=1),
            settings=TsneSettings(),
            doc_ids=["doc-b", "doc-a", "doc-c"],
        )

    def test_row_count_and_header(self):
        rows = emit_points(self._projection())
        assert len(rows) == 4
        assert rows[0] == "doc_id,x,y,dominant_topic"

    def test_sorted_by_doc_id_and_ties(self):
        rows = emit_points(self._projection())
        assert [r.split(",")[0] for r in rows[1:]] == ["doc-a", "doc-b", "doc-c"]
        assert rows[2].endswith(",0")  # doc-b: tie-free argmax 0
        assert rows[1].endswith(",0")  # doc-a: 0.5/0.5 tie -> index 0

    def test_csv_round_trip(self, tmp_path):
        proj = self._projection()
        path = tmp_path / "points.csv"
        write_points_csv(proj, path)
        by_id = {}
        for line in path.read_text().splitlines()[1:]:
            doc_id, x, y, k = line.split(",")
            by_id[doc_id] = (float(x), float(y))
        for i, doc_id in enumerate(proj.doc_ids):
            assert abs(by_id[doc_id][0] - proj.points[i, 0]) <= 1e-6
            assert abs(by_id[doc_id][1] - proj.points[i, 1]) <= 1e-6

    def test_svg_rendered(self, tmp_path):
        proj = self._projection()
        path = tmp_path / "points.svg"
        render_svg(proj, path)
        text = path.read_text()
        assert text.count("<circle") == 3
        assert text.startswith("<svg")


class TestSilhouette:
    def test_matches_sklearn(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(0)
        points = rng.normal(size=(40, 2))
        labels = rng.integers(0, 3, size=40)
        ours = silhouette(points, labels)
        theirs = sklearn_metrics.silhouette_score(points, labels)
        assert ours == pytest.approx(theirs, abs=1e-9)

    def test_requires_two_clusters(self):
        with pytest.raises(ConfigError):
            silhouette(np.ones((5, 2)), np.zeros(5))
