import numpy as np
import pytest
from sklearn.base import clone

from hrqvae.baselines import (
    AblationName,
    AblationReport,
    AblationSpec,
    RecursiveKMeans,
    ablated_config,
    lloyd,
    recursive_kmeans,
)
from hrqvae.exceptions import ConfigError, DataError
from hrqvae.model import TrainConfig
from hrqvae.quantizer import compose_batch, quantize_hard_batch
from hrqvae.synthdata import HierSpec, gen_hier_mixture


class TestLloyd:
    def test_two_points_two_clusters(self):
        X = np.array([[0.0, 0.0], [2.0, 0.0]])
        centroids, labels, history = lloyd(X, 2, 10, np.random.default_rng(0))
        assert sorted(map(tuple, centroids)) == [(0.0, 0.0), (2.0, 0.0)]
        assert history[-1] == 0.0 and labels[0] != labels[1]

    def test_single_cluster_is_mean(self):
        X = np.random.default_rng(0).standard_normal((30, 3))
        centroids, labels, _ = lloyd(X, 1, 5, np.random.default_rng(0))
        np.testing.assert_allclose(centroids[0], X.mean(axis=0))
        assert not labels.any()

    def test_history_non_increasing(self):
        X = np.random.default_rng(1).standard_normal((400, 4))
        _, _, history = lloyd(X, 8, 50, np.random.default_rng(2))
        assert np.all(np.diff(history) <= 1e-12)

    def test_too_few_points(self):
        with pytest.raises(DataError):
            lloyd(np.zeros((2, 2)), 3, 5, np.random.default_rng(0))

    def test_bad_iters(self):
        with pytest.raises(ConfigError):
            lloyd(np.zeros((4, 2)), 2, 0, np.random.default_rng(0))


class TestRecursiveKMeans:
    def test_worked_example(self):
        X = np.array([[0.0, 0.0], [0.1, 0.0], [2.0, 0.0], [2.1, 0.0]])
        cb = recursive_kmeans(X, 2, 2, seed=0)
        np.testing.assert_allclose(sorted(cb.embeddings[0, :, 0]), [0.05, 2.05])
        np.testing.assert_allclose(sorted(cb.embeddings[1, :, 0]), [-0.05, 0.05], atol=1e-12)
        codes, composed = quantize_hard_batch(X, cb)
        np.testing.assert_allclose(composed, X, atol=1e-12)

    def test_distortion_falls_with_depth(self):
        data = gen_hier_mixture(HierSpec(levels=2, branching=3, dim=5, scales=(4.0, 1.0), n_samples=600, seed=3))
        cb = recursive_kmeans(data.vectors, 3, 4, seed=1)
        codes, _ = quantize_hard_batch(data.vectors, cb)
        errs = [((data.vectors - compose_batch(codes, cb, k)) ** 2).sum(axis=1).mean() for k in range(4)]
        assert np.all(np.diff(errs) <= 1e-9)

    def test_seeded(self):
        X = np.random.default_rng(0).standard_normal((100, 3))
        assert recursive_kmeans(X, 2, 4, seed=5) == recursive_kmeans(X, 2, 4, seed=5)

    def test_history_shape(self):
        X = np.random.default_rng(0).standard_normal((100, 3))
        _, histories = recursive_kmeans(X, 3, 4, seed=0, return_history=True)
        assert len(histories) == 3 and all(len(h) >= 1 for h in histories)

    @pytest.mark.parametrize(
        "X,kwargs,exc",
        [
            (np.zeros(5), {}, DataError),
            (np.zeros((3, 2)), dict(codes_per_level=4), DataError),
            (np.zeros((5, 2)), dict(depth=0), ConfigError),
        ],
    )
    def test_invalid(self, X, kwargs, exc):
        args = dict(depth=2, codes_per_level=2)
        args.update(kwargs)
        with pytest.raises(exc):
            recursive_kmeans(X, **args)

    def test_estimator(self):
        X = np.random.default_rng(0).standard_normal((80, 3))
        est = RecursiveKMeans(depth=2, codes_per_level=4, random_state=0)
        assert clone(est).get_params() == est.get_params()
        codes = est.fit(X).transform(X)
        assert codes.shape == (80, 2)
        assert est.inverse_transform(codes).shape == X.shape
        assert est.codebook_ == recursive_kmeans(X, 2, 4, seed=0)


class TestAblationConfig:
    base = TrainConfig(depth=3, codes=16)

    def test_no_hierarchy_keeps_code_budget(self):
        cfg = ablated_config(AblationSpec("NoHierarchy"), self.base)
        assert (cfg.depth, cfg.codes) == (1, 48)

    def test_other_variants(self):
        assert ablated_config(AblationSpec("NoInitScaling"), self.base).alpha_init == 1.0
        assert ablated_config(AblationSpec("NoDepthDropout"), self.base).p_depth == 0.0
        assert ablated_config(AblationSpec("PostHocKMeans"), self.base).bottleneck == "gaussian"
        assert ablated_config(AblationSpec("Full"), self.base) == self.base

    def test_overrides_apply_last(self):
        cfg = ablated_config(AblationSpec("NoDepthDropout", {"p_depth": 0.1, "seed": 4}), self.base)
        assert (cfg.p_depth, cfg.seed) == (0.1, 4)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            AblationSpec("NoSuchThing")

    def test_names(self):
        assert [a.value for a in AblationName] == [
            "Full", "NoInitScaling", "NoHierarchy", "NoDepthDropout", "PostHocKMeans",
        ]


class TestAblationReport:
    def test_csv_row(self):
        r = AblationReport("Full", 1, 0.5, 0.25, 1.0, [2.0, 1.0], [0.5], [1.0])
        row = r.csv_row()
        assert len(row) == len(AblationReport.CSV_COLUMNS)
        assert row[:3] == ["Full", 1, "0.500000"]
        assert row[5] == "2.000000;1.000000"
