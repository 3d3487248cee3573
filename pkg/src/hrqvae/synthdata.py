"""Synthetic data with a known hierarchy.

Two generators: a tree-structured Gaussian mixture, and paraphrase-like
triples ``(x_sem, x_syn, y)`` where ``y`` mixes a content vector and a form
vector drawn from such a mixture. ``x_sem`` shares ``y``'s content and
``x_syn`` shares ``y``'s form, mirroring the meaning/form training split.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, UsageError

__all__ = [
    "HierSpec",
    "LabeledVectors",
    "ParaTriple",
    "TripleSet",
    "FormTree",
    "build_form_tree",
    "gen_hier_mixture",
    "gen_paraphrase_analog",
    "cluster_purity",
    "joint_labels",
    "DEFAULT_HIER_SPEC",
    "BALANCED_HIER_SPEC",
]


@dataclass(frozen=True)
class HierSpec:
    levels: int = 3
    branching: int | tuple = 4
    dim: int = 16
    scales: tuple = (8.0, 2.0, 0.5)
    n_samples: int = 2000
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if len(self.scales) != self.levels:
            raise ConfigError(f"need {self.levels} scales, got {len(self.scales)}")
        if any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be positive")
        if any(b <= a for a, b in zip(self.scales[1:], self.scales[:-1])):
            raise ConfigError("scales must be strictly decreasing")
        if any(b < 2 for b in self.branchings):
            raise ConfigError("branching must be >= 2 at every level")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be non-negative")

    @property
    def branchings(self):
        if isinstance(self.branching, int):
            return (self.branching,) * self.levels
        if len(self.branching) != self.levels:
            raise ConfigError(f"need {self.levels} branching factors")
        return tuple(int(b) for b in self.branching)

    @property
    def n_leaves(self):
        return int(np.prod(self.branchings))


DEFAULT_HIER_SPEC = HierSpec()

# Each level halves the scale, so the finest level still carries a visible
# share of the variance once the form passes through a linear map.
BALANCED_HIER_SPEC = HierSpec(scales=(4.0, 2.0, 1.0))


@dataclass
class LabeledVectors:
    vectors: np.ndarray
    labels: list  # one int array per level, coarsest first
    node_means: list = field(default_factory=list)  # per level [n_nodes, dim]


@dataclass
class FormTree:
    """Means of every node, level by level; node ``i`` at level ``l`` has
    parent ``i // branching[l]``."""

    spec: HierSpec
    node_means: list

    def leaf_labels(self, leaf):
        """Ancestor labels ``[n, levels]`` for leaf indices."""
        leaf = np.asarray(leaf, dtype=np.int64)
        out = np.empty((leaf.shape[0], self.spec.levels), dtype=np.int64)
        idx = leaf
        for level in range(self.spec.levels - 1, -1, -1):
            out[:, level] = idx
            idx = idx // self.spec.branchings[level]
        return out

    def sample(self, leaf, rng):
        leaf = np.asarray(leaf, dtype=np.int64)
        means = self.node_means[-1][leaf]
        return means + rng.standard_normal(means.shape) * self.spec.noise_sigma


def build_form_tree(spec, rng):
    means = []
    parent = np.zeros((1, spec.dim))
    for level, (b, scale) in enumerate(zip(spec.branchings, spec.scales)):
        children = np.repeat(parent, b, axis=0)
        children = children + rng.standard_normal(children.shape) * scale
        means.append(children)
        parent = children
    return FormTree(spec, means)


def gen_hier_mixture(spec):
    """Sample ``spec.n_samples`` points from uniformly chosen leaves of a fresh tree."""
    rng = np.random.default_rng(spec.seed)
    tree = build_form_tree(spec, rng)
    leaf = rng.integers(0, spec.n_leaves, size=spec.n_samples)
    vectors = tree.sample(leaf, rng)
    labels = tree.leaf_labels(leaf)
    return LabeledVectors(vectors, [labels[:, l].copy() for l in range(spec.levels)], tree.node_means)


@dataclass(frozen=True)
class ParaTriple:
    x_sem: np.ndarray
    x_syn: np.ndarray
    y: np.ndarray
    content_id: int
    form_path: tuple


@dataclass
class TripleSet:
    """Column-oriented store of paraphrase-analog triples.

    ``form_path`` holds the ancestor labels of ``y``'s form leaf (``[n, levels]``);
    ``sem_form_path`` and ``syn_content_id`` record the off-role factors of
    the two inputs.
    """

    x_sem: np.ndarray
    x_syn: np.ndarray
    y: np.ndarray
    content_id: np.ndarray
    form_path: np.ndarray
    sem_form_path: np.ndarray
    syn_content_id: np.ndarray

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, i):
        return ParaTriple(
            self.x_sem[i], self.x_syn[i], self.y[i], int(self.content_id[i]), tuple(self.form_path[i])
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dim(self):
        return self.y.shape[1]

    def subset(self, index):
        return TripleSet(**{k: v[index] for k, v in self.to_arrays().items()})

    def split(self, n_eval):
        n = len(self)
        if not 0 < n_eval < n:
            raise ConfigError(f"eval split size must lie in (0, {n})")
        return self.subset(slice(0, n - n_eval)), self.subset(slice(n - n_eval, n))

    def to_arrays(self):
        return {
            "x_sem": self.x_sem,
            "x_syn": self.x_syn,
            "y": self.y,
            "content_id": self.content_id,
            "form_path": self.form_path,
            "sem_form_path": self.sem_form_path,
            "syn_content_id": self.syn_content_id,
        }

    @classmethod
    def from_arrays(cls, arrays):
        return cls(**{k: arrays[k] for k in cls.__dataclass_fields__})

    def checksum(self):
        h = hashlib.sha256()
        for name, arr in sorted(self.to_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def gen_paraphrase_analog(
    n_contents,
    form_spec,
    dim_out,
    n_triples,
    seed,
    content_dim=8,
    form_weight=1.0,
    content_weight=1.0,
    noise_sigma=0.02,
    form_content_correlation=0.0,
):
    """Generate ``n_triples`` triples ``y = A c + B f + eps``.

    ``A`` and ``B`` are fixed random maps scaled so that each factor adds
    roughly ``weight**2`` variance per output coordinate. With
    ``form_content_correlation = rho``, a form leaf is the content's preferred
    leaf with probability ``rho`` and uniform otherwise; this applies both to
    ``y`` and to the resampled form of ``x_sem``.
    """
    if n_contents < 2:
        raise ConfigError("n_contents must be >= 2")
    if form_spec.n_leaves < 2:
        raise ConfigError("form hierarchy needs at least 2 leaves")
    if dim_out < 1 or n_triples < 1 or content_dim < 1:
        raise ConfigError("dim_out, n_triples and content_dim must be positive")
    if not 0 <= form_content_correlation <= 1:
        raise ConfigError("form_content_correlation must lie in [0, 1]")
    if form_weight < 0 or content_weight < 0 or noise_sigma < 0:
        raise ConfigError("weights and noise must be non-negative")

    rng = np.random.default_rng(seed)
    tree = build_form_tree(form_spec, rng)
    contents = rng.standard_normal((n_contents, content_dim))
    A = rng.standard_normal((content_dim, dim_out)) * (content_weight / math.sqrt(content_dim))
    B = rng.standard_normal((form_spec.dim, dim_out)) * (
        form_weight / (math.sqrt(form_spec.dim) * form_spec.scales[0])
    )
    preferred = rng.integers(0, form_spec.n_leaves, size=n_contents)

    def draw_leaf(content):
        uniform = rng.integers(0, form_spec.n_leaves, size=content.shape[0])
        tied = rng.random(content.shape[0]) < form_content_correlation
        return np.where(tied, preferred[content], uniform)

    def render(content, form_vec):
        eps = rng.standard_normal((content.shape[0], dim_out)) * noise_sigma
        return contents[content] @ A + form_vec @ B + eps

    content = rng.integers(0, n_contents, size=n_triples)
    leaf = draw_leaf(content)
    y = render(content, tree.sample(leaf, rng))

    sem_leaf = draw_leaf(content)
    x_sem = render(content, tree.sample(sem_leaf, rng))

    # uniform over the other contents
    other = (content + rng.integers(1, n_contents, size=n_triples)) % n_contents
    x_syn = render(other, tree.sample(leaf, rng))

    return TripleSet(
        x_sem=x_sem,
        x_syn=x_syn,
        y=y,
        content_id=content,
        form_path=tree.leaf_labels(leaf),
        sem_form_path=tree.leaf_labels(sem_leaf),
        syn_content_id=other,
    )


def cluster_purity(predicted, truth):
    """Fraction of points that carry the majority true label of their predicted cluster."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.ndim != 1:
        raise UsageError("predicted and truth must be 1-d arrays of equal length")
    if predicted.size == 0:
        raise UsageError("purity of an empty labelling is undefined")
    _, pred_ids = np.unique(predicted, return_inverse=True)
    _, true_ids = np.unique(truth, return_inverse=True)
    table = np.zeros((pred_ids.max() + 1, true_ids.max() + 1), dtype=np.int64)
    np.add.at(table, (pred_ids, true_ids), 1)
    return float(table.max(axis=1).sum() / predicted.size)


def joint_labels(codes):
    """Map each row of an integer matrix to one id, so a path prefix acts as a single label."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        return codes
    _, ids = np.unique(codes, axis=0, return_inverse=True)
    return ids.reshape(-1)
