"""Ablation baselines: recursive k-means and the ablated model variants.

``PostHocKMeans`` trains the same model with a continuous Gaussian syntactic
bottleneck and afterwards clusters its frozen encodings level by level, each
level fitting the residual left by the previous ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, DataError
from .model import encode_syntactic, evaluate, fit_sketch_heads, train
from .quantizer import Codebook, compose_batch, quantize_hard_batch

__all__ = [
    "AblationName",
    "AblationSpec",
    "AblationReport",
    "lloyd",
    "recursive_kmeans",
    "RecursiveKMeans",
    "ablated_config",
    "run_ablation",
]


def _sq_dist(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def lloyd(X, n_clusters, iters, rng):
    """k-means++ seeded Lloyd iterations.

    Returns ``(centroids, labels, history)`` where ``history[i]`` is the mean
    squared distance after assignment in iteration ``i``. An empty cluster is
    moved onto the point currently farthest from its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < n_clusters:
        raise DataError(f"need at least {n_clusters} vectors, got {X.shape[0]}")
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    seed = int(rng.integers(2**31))
    centroids, _ = kmeans_plusplus(X, n_clusters, random_state=seed)
    history = []
    labels = None
    for _ in range(iters):
        dist = _sq_dist(X, centroids)
        new_labels = dist.argmin(axis=1)
        point_dist = dist[np.arange(len(X)), new_labels]
        history.append(float(point_dist.mean()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(n_clusters):
            members = labels == k
            if members.any():
                centroids[k] = X[members].mean(axis=0)
            else:
                far = int(point_dist.argmax())
                centroids[k] = X[far]
                labels[far] = k
                point_dist[far] = 0.0
    dist = _sq_dist(X, centroids)
    labels = dist.argmin(axis=1)
    return centroids, labels, history


def recursive_kmeans(vectors, depth, codes_per_level, iters=50, seed=0, return_history=False):
    """Codebook whose level ``d`` clusters the residuals left by levels ``< d``."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("vectors must be a 2-d array")
    if X.shape[0] < codes_per_level:
        raise DataError(f"need at least {codes_per_level} vectors, got {X.shape[0]}")
    if depth < 1 or codes_per_level < 1:
        raise ConfigError("depth and codes_per_level must be >= 1")
    rng = np.random.default_rng(seed)
    residual = X.copy()
    levels, histories = [], []
    for _ in range(depth):
        centroids, labels, history = lloyd(residual, codes_per_level, iters, rng)
        levels.append(centroids)
        histories.append(history)
        residual = residual - centroids[labels]
    codebook = Codebook(np.stack(levels))
    return (codebook, histories) if return_history else codebook


class RecursiveKMeans(TransformerMixin, BaseEstimator):
    """Residual k-means as an estimator; ``transform`` gives greedy code paths."""

    def __init__(self, depth=3, codes_per_level=16, iters=50, random_state=0):
        self.depth = depth
        self.codes_per_level = codes_per_level
        self.iters = iters
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.codebook_, self.distortion_history_ = recursive_kmeans(
            X, self.depth, self.codes_per_level, self.iters, self.random_state, return_history=True
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return quantize_hard_batch(check_array(X, dtype=np.float64), self.codebook_)[0]

    def inverse_transform(self, codes):
        check_is_fitted(self, "codebook_")
        return compose_batch(codes, self.codebook_)


class AblationName(str, enum.Enum):
    FULL = "Full"
    NO_INIT_SCALING = "NoInitScaling"
    NO_HIERARCHY = "NoHierarchy"
    NO_DEPTH_DROPOUT = "NoDepthDropout"
    POST_HOC_KMEANS = "PostHocKMeans"


@dataclass(frozen=True)
class AblationSpec:
    name: AblationName
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "name", AblationName(self.name))


@dataclass
class AblationReport:
    name: str
    seed: int
    distortion: float
    relative_distortion: float
    recon_error: float
    recon_by_depth: list
    code_pred_accuracy: list
    purity: list

    CSV_COLUMNS = (
        "name",
        "seed",
        "distortion",
        "relative_distortion",
        "recon_error",
        "recon_by_depth",
        "code_pred_accuracy",
        "purity",
    )

    def csv_row(self):
        join = lambda xs: ";".join("%.6f" % x for x in xs)  # noqa: E731
        return [
            self.name,
            self.seed,
            "%.6f" % self.distortion,
            "%.6f" % self.relative_distortion,
            "%.6f" % self.recon_error,
            join(self.recon_by_depth),
            join(self.code_pred_accuracy),
            join(self.purity),
        ]


def ablated_config(spec, base):
    """Apply an ablation's forced settings, then its explicit overrides."""
    name = spec.name
    if name is AblationName.NO_HIERARCHY:
        cfg = replace(base, depth=1, codes=base.depth * base.codes)
    elif name is AblationName.NO_INIT_SCALING:
        cfg = replace(base, alpha_init=1.0)
    elif name is AblationName.NO_DEPTH_DROPOUT:
        cfg = replace(base, p_depth=0.0)
    elif name is AblationName.POST_HOC_KMEANS:
        cfg = replace(base, bottleneck="gaussian")
    else:
        cfg = base
    return replace(cfg, **spec.overrides) if spec.overrides else cfg


def run_ablation(spec, train_set, eval_set, base_config, kmeans_iters=50, head_steps=None):
    """Train one ablation variant and evaluate it with oracle sketches on ``eval_set``."""
    cfg = ablated_config(spec, base_config)
    result = train(cfg, train_set)
    params = result.params
    if spec.name is AblationName.POST_HOC_KMEANS:
        z = encode_syntactic(params, train_set.x_syn)
        codebook = recursive_kmeans(z, base_config.depth, base_config.codes, kmeans_iters, cfg.seed)
        params.arrays["codebook"] = np.array(codebook.embeddings)
        params = fit_sketch_heads(params, train_set, head_steps)
    report = evaluate(params, eval_set)
    return AblationReport(
        name=spec.name.value,
        seed=cfg.seed,
        distortion=report["distortion"][-1],
        relative_distortion=report["relative_distortion"][-1],
        recon_error=report["recon_error"][-1],
        recon_by_depth=report["recon_error"],
        code_pred_accuracy=report["code_accuracy"],
        purity=report["purity"],
    ), params
