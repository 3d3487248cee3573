"""Hierarchical refinement quantization.

A vector is decomposed level by level: level ``d`` picks the embedding of
codebook ``d`` closest to the residual left over by levels ``1..d-1``. The
quantized vector is the plain sum of the picked embeddings. Levels are
0-indexed in code (level 0 is the coarsest).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .exceptions import ConfigError, InputError, ShapeError

__all__ = [
    "Codebook",
    "HrqPath",
    "QuantizationTrace",
    "GumbelSchedule",
    "ScheduleMode",
    "DepthMask",
    "init_codebook",
    "level_scores",
    "quantize_hard",
    "quantize_hard_batch",
    "quantize_soft",
    "soft_quantize_tensor",
    "compose",
    "compose_batch",
    "compose_with_dropout",
    "sample_depth_mask",
    "sample_depth_masks",
    "tau_at",
    "HierarchicalQuantizer",
]


@dataclass(frozen=True)
class Codebook:
    """``D x K x dim`` embedding tables, coarsest level first."""

    embeddings: np.ndarray

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 3 or 0 in emb.shape:
            raise ShapeError(f"codebook embeddings must be a non-empty [D, K, dim] array, got {emb.shape}")
        if not np.all(np.isfinite(emb)):
            raise InputError("codebook embeddings must be finite")
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)

    @property
    def depth(self):
        return self.embeddings.shape[0]

    @property
    def codes_per_level(self):
        return self.embeddings.shape[1]

    @property
    def dim(self):
        return self.embeddings.shape[2]

    def level(self, d):
        return self.embeddings[d]

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.embeddings, other.embeddings)

    def __hash__(self):
        return hash(self.embeddings.tobytes())


@dataclass(frozen=True)
class HrqPath:
    codes: tuple

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(int(c) for c in self.codes))

    def __len__(self):
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)

    def __getitem__(self, i):
        return self.codes[i]

    def validate(self, codebook):
        if len(self.codes) != codebook.depth:
            raise ShapeError(f"path has {len(self.codes)} codes, codebook depth is {codebook.depth}")
        for c in self.codes:
            if not 0 <= c < codebook.codes_per_level:
                raise IndexError(f"code {c} outside [0, {codebook.codes_per_level})")
        return self


@dataclass(frozen=True)
class QuantizationTrace:
    path: HrqPath
    residual_norms: np.ndarray  # D + 1 entries, before level 1 then after each level
    scores: np.ndarray  # [D, K]
    composed: np.ndarray


class ScheduleMode(str, enum.Enum):
    PROSE_EXPONENTIAL = "prose_exponential"
    PRINTED_SIGMOID = "printed_sigmoid"


@dataclass(frozen=True)
class GumbelSchedule:
    """Gumbel-softmax temperature as a function of training step.

    ``PROSE_EXPONENTIAL`` halves the temperature every ``half_life_steps``
    down to ``tau_min``. ``PRINTED_SIGMOID`` evaluates
    ``max(tau_init - tau_init / (1 + exp(t / half_life)), tau_min)``, which
    starts at ``tau_init / 2`` and rises toward ``tau_init``; it is kept only
    for comparison.
    """

    tau_init: float = 2.0
    half_life_steps: int = 10000
    tau_min: float = 0.5
    mode: ScheduleMode = ScheduleMode.PROSE_EXPONENTIAL

    def __post_init__(self):
        object.__setattr__(self, "mode", ScheduleMode(self.mode))
        if not self.tau_min > 0:
            raise ConfigError("tau_min must be positive")
        if self.tau_init < self.tau_min:
            raise ConfigError("tau_init must be >= tau_min")
        if self.half_life_steps <= 0:
            raise ConfigError("half_life_steps must be positive")


@dataclass(frozen=True)
class DepthMask:
    gammas: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_gammas(cls, gammas):
        g = np.asarray(gammas, dtype=np.int64)
        if g.ndim != 1 or not np.all((g == 0) | (g == 1)):
            raise ShapeError("gammas must be a 1-d sequence of 0/1 values")
        return cls(g, np.cumprod(g))


# construction -------------------------------------------------------------


def init_codebook(depth, codes_per_level, dim, alpha_init=0.5, seed=0, base_scale=1.0):
    """Gaussian codebook whose level-``d`` scale is ``base_scale * alpha_init**d``.

    Each component has standard deviation ``scale / sqrt(dim)`` so the
    expected embedding norm is on the order of ``scale``.
    """
    for name, value in (("depth", depth), ("codes_per_level", codes_per_level), ("dim", dim)):
        if int(value) != value or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if not 0 < alpha_init <= 1:
        raise ConfigError(f"alpha_init must lie in (0, 1], got {alpha_init!r}")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((depth, codes_per_level, dim)) * (base_scale / math.sqrt(dim))
    decay = alpha_init ** np.arange(depth, dtype=np.float64)
    return Codebook(raw * decay[:, None, None])


# hard quantization --------------------------------------------------------


def _as_vector(z, dim):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dim,):
        raise ShapeError(f"expected a vector of length {dim}, got shape {z.shape}")
    return z


def level_scores(residual, codebook, level):
    """Negative squared distance from ``residual`` to every code of ``level``."""
    residual = _as_vector(residual, codebook.dim)
    if not 0 <= level < codebook.depth:
        raise IndexError(f"level {level} outside [0, {codebook.depth})")
    diff = residual[None, :] - codebook.level(level)
    return -np.einsum("kd,kd->k", diff, diff)


def quantize_hard(z, codebook):
    """Greedy coarse-to-fine decomposition of ``z``; ties go to the lowest code."""
    z = _as_vector(z, codebook.dim)
    if not np.all(np.isfinite(z)):
        raise InputError("input vector must be finite")
    residual = z.copy()
    composed = np.zeros(codebook.dim)
    codes, norms, scores = [], [float(np.linalg.norm(residual))], []
    for d in range(codebook.depth):
        s = level_scores(residual, codebook, d)
        q = int(np.argmax(s))
        chosen = codebook.embeddings[d, q]
        composed = composed + chosen
        residual = residual - chosen
        codes.append(q)
        scores.append(s)
        norms.append(float(np.linalg.norm(residual)))
    return QuantizationTrace(HrqPath(codes), np.array(norms), np.array(scores), composed)


def quantize_hard_batch(Z, codebook, depth=None):
    """Vectorised :func:`quantize_hard` over rows; returns ``(codes[n, D], composed[n, dim])``.

    ``depth`` limits quantization to the first levels.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != codebook.dim:
        raise ShapeError(f"expected [n, {codebook.dim}] inputs, got {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InputError("inputs must be finite")
    depth = codebook.depth if depth is None else depth
    residual = Z.copy()
    composed = np.zeros_like(Z)
    codes = np.empty((Z.shape[0], depth), dtype=np.int64)
    for d in range(depth):
        C = codebook.level(d)
        dist = ((residual[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        q = np.argmin(dist, axis=1)
        codes[:, d] = q
        composed = composed + C[q]
        residual = residual - C[q]
    return codes, composed


# soft quantization --------------------------------------------------------


def _gumbel(rng, shape):
    u = rng.random(shape)
    # guard log(0); tiny uniform values are astronomically rare
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0)
    return -np.log(-np.log(u))


def soft_quantize_tensor(z, levels, tau, rng):
    """Gumbel-softmax quantization of a batch on the autodiff tape.

    ``z`` is a Tensor ``[n, dim]`` and ``levels`` a list of D Tensors
    ``[K, dim]``. Returns ``(soft_codewords, weights, sampled_codes)`` where
    ``soft_codewords`` is a list of D Tensors ``[n, dim]``, ``weights`` a
    list of D Tensors ``[n, K]`` and ``sampled_codes`` an int array ``[n, D]``.
    The residual handed to the next level subtracts the soft codeword.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau!r}")
    n = z.shape[0]
    residual = z
    soft, weights, codes = [], [], []
    for C in levels:
        # -||r - c||^2 expanded so the tape stays two-dimensional
        r_sq = residual.square().sum(axis=1, keepdims=True)
        c_sq = C.square().sum(axis=1, keepdims=True).T
        scores = (residual @ C.T) * 2.0 - r_sq - c_sq
        noise = _gumbel(rng, (n, C.shape[0]))
        noisy = scores + noise
        codes.append(np.argmax(noisy.data, axis=1))
        w = ad.softmax(noisy * (1.0 / tau), axis=1)
        codeword = w @ C
        weights.append(w)
        soft.append(codeword)
        residual = residual - codeword
    return soft, weights, np.stack(codes, axis=1) if codes else np.zeros((n, 0), dtype=np.int64)


def quantize_soft(z, codebook, tau, rng):
    """Single-vector Gumbel-softmax quantization.

    Returns ``(weights[D, K], composed_soft[dim], sampled_path)``.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau!r}")
    z = _as_vector(z, codebook.dim)
    levels = [ad.Tensor(codebook.level(d)) for d in range(codebook.depth)]
    soft, weights, codes = soft_quantize_tensor(ad.Tensor(z[None, :]), levels, tau, rng)
    composed = np.zeros(codebook.dim)
    for s in soft:
        composed = composed + s.data[0]
    W = np.stack([w.data[0] for w in weights])
    return W, composed, HrqPath(codes[0])


# composition --------------------------------------------------------------


def compose(path, codebook):
    """Sum of the selected embeddings, accumulated coarsest level first."""
    path = HrqPath(path) if not isinstance(path, HrqPath) else path
    path.validate(codebook)
    out = np.zeros(codebook.dim)
    for d, q in enumerate(path):
        out = out + codebook.embeddings[d, q]
    return out


def compose_batch(codes, codebook, keep_levels=None):
    """Compose each row of ``codes[n, D']`` using its first ``keep_levels`` codes."""
    codes = np.asarray(codes, dtype=np.int64)
    keep = codes.shape[1] if keep_levels is None else keep_levels
    if keep > codebook.depth or codes.shape[1] < keep:
        raise ShapeError(f"cannot keep {keep} levels of a depth-{codebook.depth} codebook")
    out = np.zeros((codes.shape[0], codebook.dim))
    for d in range(keep):
        out = out + codebook.embeddings[d, codes[:, d]]
    return out


def compose_with_dropout(path, codebook, mask):
    """Compose with level ``d`` kept only while every gate up to ``d`` is open."""
    path = HrqPath(path) if not isinstance(path, HrqPath) else path
    path.validate(codebook)
    if len(mask.cumulative) != codebook.depth:
        raise ShapeError(f"mask has {len(mask.cumulative)} levels, codebook depth is {codebook.depth}")
    out = np.zeros(codebook.dim)
    for d, q in enumerate(path):
        if mask.cumulative[d]:
            out = out + codebook.embeddings[d, q]
    return out


def sample_depth_masks(p_depth, depth, n, rng):
    """``n`` cumulative depth-dropout masks as an int array ``[n, depth]``."""
    if not 0 <= p_depth < 1:
        raise ConfigError(f"p_depth must lie in [0, 1), got {p_depth!r}")
    gammas = (rng.random((n, depth)) >= p_depth).astype(np.int64)
    return np.cumprod(gammas, axis=1)


def sample_depth_mask(p_depth, depth, rng):
    if not 0 <= p_depth < 1:
        raise ConfigError(f"p_depth must lie in [0, 1), got {p_depth!r}")
    return DepthMask.from_gammas((rng.random(depth) >= p_depth).astype(np.int64))


def tau_at(schedule, step):
    if step < 0:
        raise ConfigError("step must be non-negative")
    if schedule.mode is ScheduleMode.PROSE_EXPONENTIAL:
        tau = schedule.tau_init * 2.0 ** (-step / schedule.half_life_steps)
    else:
        x = step / schedule.half_life_steps
        # 1 / (1 + e^x) without overflow for large x
        tail = math.exp(-x) / (1.0 + math.exp(-x)) if x > 0 else 1.0 / (1.0 + math.exp(x))
        tau = schedule.tau_init - schedule.tau_init * tail
    return max(tau, schedule.tau_min)


class HierarchicalQuantizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around a fixed codebook.

    ``fit`` only validates the input width; the codebook comes from
    ``codebook`` or, when ``None``, from :func:`init_codebook` with the
    remaining parameters. ``transform`` returns the code matrix and
    ``inverse_transform`` composes codes back into vectors.
    """

    def __init__(self, codebook=None, depth=3, codes_per_level=16, alpha_init=0.5, random_state=0):
        self.codebook = codebook
        self.depth = depth
        self.codes_per_level = codes_per_level
        self.alpha_init = alpha_init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.codebook is not None:
            if self.codebook.dim != X.shape[1]:
                raise ShapeError(f"codebook dim {self.codebook.dim} != input width {X.shape[1]}")
            self.codebook_ = self.codebook
        else:
            self.codebook_ = init_codebook(
                self.depth, self.codes_per_level, X.shape[1], self.alpha_init, self.random_state
            )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        X = check_array(X, dtype=np.float64)
        return quantize_hard_batch(X, self.codebook_)[0]

    def inverse_transform(self, codes):
        check_is_fitted(self, "codebook_")
        return compose_batch(codes, self.codebook_)

    def score(self, X, y=None):
        """Negative mean squared quantization error."""
        X = check_array(X, dtype=np.float64)
        _, composed = quantize_hard_batch(X, self.codebook_)
        return -float(((X - composed) ** 2).sum(axis=1).mean())
