"""Dual-branch generative model with a hierarchical quantized bottleneck.

The semantic branch encodes ``x_sem`` into a diagonal Gaussian; the syntactic
branch encodes ``x_syn`` and quantizes it through the codebook. The decoder
reconstructs ``y`` from both. Per-level sketch heads learn to predict the
codes from the semantic latent and the running composition so that codes can
be inferred when no exemplar is available.

All parameters live in one flat ``dict[str, ndarray]``; the codebook is the
``"codebook"`` entry with shape ``[D, K, dim]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .exceptions import ConfigError, NumericFault, ShapeError
from .quantizer import (
    Codebook,
    GumbelSchedule,
    HrqPath,
    compose_batch,
    init_codebook,
    quantize_hard_batch,
    sample_depth_masks,
    soft_quantize_tensor,
    tau_at,
)
from .rng import stream
from .synthdata import TripleSet, cluster_purity, joint_labels

__all__ = [
    "TrainConfig",
    "ModelParams",
    "SketchBeamResult",
    "TrainResult",
    "init_params",
    "elbo_loss",
    "train",
    "fit_sketch_heads",
    "encode_semantic",
    "encode_syntactic",
    "decode",
    "head_logits",
    "predict_sketch",
    "generate",
    "generate_truncated",
    "evaluate",
    "HRQVAE",
]

BOTTLENECKS = ("hrq", "gaussian")


@dataclass(frozen=True)
class TrainConfig:
    depth: int = 3
    codes: int = 16
    data_dim: int = 32
    sem_dim: int = 16
    syn_dim: int = 48
    hidden: int = 64
    head_hidden: int = 64
    p_depth: float = 0.3
    alpha_init: float = 0.5
    schedule: GumbelSchedule = field(default_factory=GumbelSchedule)
    batch_size: int = 64
    steps: int = 12000
    lr: float = 0.003
    lr_final_frac: float = 0.1
    kl_weight: float = 1.0
    code_pred_weight: float = 1.0
    seed: int = 0
    # "gaussian" swaps the quantizer for a continuous Gaussian bottleneck
    bottleneck: str = "hrq"

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", GumbelSchedule(**self.schedule))
        for name in ("depth", "codes", "data_dim", "sem_dim", "syn_dim", "hidden", "head_hidden", "batch_size"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not 0 <= self.p_depth < 1:
            raise ConfigError(f"p_depth must lie in [0, 1), got {self.p_depth!r}")
        if not 0 < self.alpha_init <= 1:
            raise ConfigError(f"alpha_init must lie in (0, 1], got {self.alpha_init!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_final_frac <= 1:
            raise ConfigError("lr_final_frac must lie in (0, 1]")
        if self.kl_weight < 0 or self.code_pred_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.bottleneck not in BOTTLENECKS:
            raise ConfigError(f"bottleneck must be one of {BOTTLENECKS}")

    def to_dict(self):
        d = asdict(self)
        d["schedule"]["mode"] = self.schedule.mode.value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    config: TrainConfig
    arrays: dict

    @property
    def codebook(self):
        return Codebook(self.arrays["codebook"])

    @property
    def depth(self):
        return self.config.depth

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def head_count(self):
        return len({k.split(".")[0] for k in self.arrays if k.startswith("head")})


@dataclass
class SketchBeamResult:
    paths: list
    log_probs: list


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    adam: ad.AdamState
    step: int


# parameters ---------------------------------------------------------------


def _mlp_init(arrays, prefix, sizes, rng):
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        arrays[f"{prefix}.W{i}"] = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
        arrays[f"{prefix}.b{i}"] = np.zeros(fan_out)


def init_params(config):
    """Fresh parameters; 2-hidden-layer tanh MLPs throughout."""
    rng = stream(config.seed, "init")
    arrays = {}
    h, hh = config.hidden, config.head_hidden
    _mlp_init(arrays, "sem", [config.data_dim, h, h, 2 * config.sem_dim], rng)
    syn_out = config.syn_dim if config.bottleneck == "hrq" else 2 * config.syn_dim
    _mlp_init(arrays, "syn", [config.data_dim, h, h, syn_out], rng)
    _mlp_init(arrays, "dec", [config.sem_dim + config.syn_dim, h, h, config.data_dim], rng)
    for d in range(config.depth):
        _mlp_init(arrays, f"head{d}", [config.sem_dim + config.syn_dim, hh, hh, config.codes], rng)
    cb_seed = int(rng.integers(2**31))
    arrays["codebook"] = np.array(
        init_codebook(config.depth, config.codes, config.syn_dim, config.alpha_init, cb_seed).embeddings
    )
    return ModelParams(config, arrays)


def _mlp(P, prefix, x):
    """Forward through an MLP whose weights are in ``P`` (Tensors or arrays)."""
    i = 0
    while f"{prefix}.W{i}" in P:
        W, b = P[f"{prefix}.W{i}"], P[f"{prefix}.b{i}"]
        x = ad.linear_forward(x, W, b)
        i += 1
        if f"{prefix}.W{i}" in P:
            x = ad.tanh(x)
    return x


def _mlp_np(arrays, prefix, x):
    i = 0
    while f"{prefix}.W{i}" in arrays:
        x = x @ arrays[f"{prefix}.W{i}"] + arrays[f"{prefix}.b{i}"]
        i += 1
        if f"{prefix}.W{i}" in arrays:
            x = np.tanh(x)
    return x


# loss ---------------------------------------------------------------------


def _check_batch(batch, config):
    x_sem, x_syn, y = (np.asarray(a, dtype=np.float64) for a in batch)
    for name, a in (("x_sem", x_sem), ("x_syn", x_syn), ("y", y)):
        if a.ndim != 2 or a.shape[1] != config.data_dim:
            raise ShapeError(f"{name} must be [n, {config.data_dim}], got {a.shape}")
    if not (x_sem.shape[0] == x_syn.shape[0] == y.shape[0]) or y.shape[0] == 0:
        raise ShapeError("batch arrays must share a non-zero row count")
    return x_sem, x_syn, y


def elbo_loss(batch, params, step, rng, tensors=None):
    """Negative ELBO for a batch of ``(x_sem, x_syn, y)`` arrays.

    Returns ``(total, components)``: ``total`` is a scalar Tensor on a fresh
    tape and ``components`` maps ``recon``, ``kl``, ``code_pred`` and ``tau``
    to floats. ``rng`` supplies the semantic noise, depth masks and Gumbel
    noise, in that order. ``tensors`` lets the caller pass the leaf Tensors
    whose gradients it wants; by default all parameters become leaves.
    """
    cfg = params.config
    x_sem, x_syn, y = _check_batch(batch, cfg)
    n = y.shape[0]
    P = tensors if tensors is not None else {k: ad.Tensor(v, requires_grad=True) for k, v in params.arrays.items()}

    sem_out = _mlp(P, "sem", ad.Tensor(x_sem))
    mu, log_sigma = sem_out[:, : cfg.sem_dim], sem_out[:, cfg.sem_dim :]
    z_sem = ad.gaussian_sample(mu, log_sigma, rng)
    kl = ad.kl_to_standard_normal(mu, log_sigma)
    tau = tau_at(cfg.schedule, step)

    syn_out = _mlp(P, "syn", ad.Tensor(x_syn))
    if cfg.bottleneck == "gaussian":
        s_mu, s_log_sigma = syn_out[:, : cfg.syn_dim], syn_out[:, cfg.syn_dim :]
        z_syn = ad.gaussian_sample(s_mu, s_log_sigma, rng)
        kl = kl + ad.kl_to_standard_normal(s_mu, s_log_sigma)
        code_pred = ad.Tensor(0.0)
    else:
        syn_out = ad.layer_norm(syn_out)
        masks = sample_depth_masks(cfg.p_depth, cfg.depth, n, rng)
        C = P["codebook"]
        levels = [C[d] for d in range(cfg.depth)]
        soft, _, codes = soft_quantize_tensor(syn_out, levels, tau, rng)
        z_syn = None
        for d, codeword in enumerate(soft):
            term = codeword * masks[:, d : d + 1].astype(np.float64)
            z_syn = term if z_syn is None else z_syn + term

        # code targets and head inputs are constants; heads see the hard partial sums
        codebook = params.arrays["codebook"]
        code_pred = None
        partial = np.zeros((n, cfg.syn_dim))
        for d in range(cfg.depth):
            logits = _mlp(P, f"head{d}", ad.concat([z_sem, ad.Tensor(partial)], axis=1))
            ce = ad.cross_entropy(logits, codes[:, d])
            code_pred = ce if code_pred is None else code_pred + ce
            partial = partial + codebook[d, codes[:, d]]

    y_hat = _mlp(P, "dec", ad.concat([z_sem, z_syn], axis=1))
    recon = ad.mse_sum(y_hat, y)
    total = recon + kl * cfg.kl_weight + code_pred * cfg.code_pred_weight
    components = {
        "recon": recon.item(),
        "kl": kl.item(),
        "code_pred": code_pred.item(),
        "tau": tau,
    }
    if not all(math.isfinite(v) for v in components.values()) or not math.isfinite(total.item()):
        raise NumericFault(step)
    return total, components


def _step_rng(seed, step):
    return stream(seed, "train", step)


def train(config, dataset, steps=None, resume=None, callback=None):
    """Adam over the negative ELBO.

    ``dataset`` is a :class:`TripleSet`. ``resume`` continues from a
    :class:`TrainResult`; because every step derives its randomness from
    ``(seed, step)``, resuming reproduces an uninterrupted run exactly.
    Returns a :class:`TrainResult` whose ``history`` has one row per step run.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    if dataset.dim != config.data_dim:
        raise ShapeError(f"dataset width {dataset.dim} != config.data_dim {config.data_dim}")
    steps = config.steps if steps is None else steps
    if resume is not None:
        params, adam, start = resume.params.copy(), _copy_adam(resume.adam), resume.step
    else:
        params, adam, start = init_params(config), ad.AdamState(lr=config.lr), 0
    history = []
    n = len(dataset)
    bs = min(config.batch_size, n)
    for step in range(start, start + steps):
        rng = _step_rng(config.seed, step)
        idx = rng.choice(n, size=bs, replace=False) if bs < n else np.arange(n)
        batch = (dataset.x_sem[idx], dataset.x_syn[idx], dataset.y[idx])
        P = {k: ad.Tensor(v, requires_grad=True) for k, v in params.arrays.items()}
        total, comps = elbo_loss(batch, params, step, rng, tensors=P)
        total.backward()
        grads = {k: t.grad for k, t in P.items() if t.grad is not None}
        adam.lr = _lr_at(config, step)
        ad.adam_step(params.arrays, grads, adam)
        row = {"step": step, **comps, "total": total.item()}
        history.append(row)
        if callback is not None:
            callback(row)
    return TrainResult(params, history, adam, start + steps)


def fit_sketch_heads(params, dataset, steps=None, lr=None):
    """Train only the sketch heads, with everything else frozen.

    Targets are the greedy codes of each syntactic encoding under the current
    codebook, inputs the semantic posterior mean and the hard partial sums.
    Used after the codebook has been replaced by post-hoc clustering.
    """
    cfg = params.config
    steps = cfg.steps if steps is None else steps
    params = params.copy()
    cb = params.codebook
    z_sem_all = encode_semantic(params, dataset.x_sem)
    codes_all, _ = quantize_hard_batch(encode_syntactic(params, dataset.x_syn), cb)
    partials = [compose_batch(codes_all, cb, d) for d in range(cb.depth)]
    heads = {k: v for k, v in params.arrays.items() if k.startswith("head")}
    adam = ad.AdamState(lr=cfg.lr if lr is None else lr)
    n = len(dataset)
    bs = min(cfg.batch_size, n)
    for step in range(steps):
        rng = stream(cfg.seed, "heads", step)
        idx = rng.choice(n, size=bs, replace=False) if bs < n else np.arange(n)
        P = {k: ad.Tensor(v, requires_grad=True) for k, v in heads.items()}
        total = None
        for d in range(cb.depth):
            x = ad.Tensor(np.concatenate([z_sem_all[idx], partials[d][idx]], axis=1))
            ce = ad.cross_entropy(_mlp(P, f"head{d}", x), codes_all[idx, d])
            total = ce if total is None else total + ce
        if not math.isfinite(total.item()):
            raise NumericFault(step)
        total.backward()
        ad.adam_step(heads, {k: t.grad for k, t in P.items() if t.grad is not None}, adam)
    return params


def _lr_at(config, step):
    """Linear decay from ``lr`` to ``lr * lr_final_frac`` over ``config.steps``."""
    progress = min(step / max(config.steps, 1), 1.0)
    return config.lr * (1.0 - (1.0 - config.lr_final_frac) * progress)


def _copy_adam(state):
    return ad.AdamState(
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
        step_count=state.step_count,
        first_moment={k: v.copy() for k, v in state.first_moment.items()},
        second_moment={k: v.copy() for k, v in state.second_moment.items()},
    )


# inference ----------------------------------------------------------------


def encode_semantic(params, x_sem):
    """Posterior mean of the semantic latent."""
    x = np.atleast_2d(np.asarray(x_sem, dtype=np.float64))
    return _mlp_np(params.arrays, "sem", x)[:, : params.config.sem_dim]


def encode_syntactic(params, x_syn):
    """Continuous syntactic encoding (the posterior mean for a Gaussian bottleneck)."""
    x = np.atleast_2d(np.asarray(x_syn, dtype=np.float64))
    out = _mlp_np(params.arrays, "syn", x)[:, : params.config.syn_dim]
    if params.config.bottleneck == "hrq":
        out = out - out.mean(axis=1, keepdims=True)
        out = out / np.sqrt((out**2).mean(axis=1, keepdims=True) + ad.LAYER_NORM_EPS)
    return out


def decode(params, z_sem, z_syn):
    z_sem, z_syn = np.atleast_2d(z_sem), np.atleast_2d(z_syn)
    return _mlp_np(params.arrays, "dec", np.concatenate([z_sem, z_syn], axis=1))


def head_logits(params, level, z_sem, partial):
    z_sem, partial = np.atleast_2d(z_sem), np.atleast_2d(partial)
    return _mlp_np(params.arrays, f"head{level}", np.concatenate([z_sem, partial], axis=1))


def _log_softmax(x):
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def predict_sketch(z_sem, params, beam_width=4):
    """Beam search over code paths under the sketch heads.

    Each hypothesis at level ``d`` is expanded over all K codes, scored by
    head ``d`` given ``z_sem`` and the composition of its prefix. Equal
    scores keep the lexicographically smaller path first.
    """
    if int(beam_width) != beam_width or beam_width < 1:
        raise ConfigError(f"beam_width must be a positive integer, got {beam_width!r}")
    z_sem = np.asarray(z_sem, dtype=np.float64).reshape(-1)
    codebook = params.arrays["codebook"]
    D, K, dim = codebook.shape
    beams = [((), 0.0, np.zeros(dim))]
    for d in range(D):
        partials = np.stack([b[2] for b in beams])
        logp = _log_softmax(head_logits(params, d, np.repeat(z_sem[None, :], len(beams), 0), partials))
        candidates = []
        for (prefix, score, partial), row in zip(beams, logp):
            for q in range(K):
                candidates.append((prefix + (q,), score + float(row[q]), partial + codebook[d, q]))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        beams = candidates[:beam_width]
    return SketchBeamResult([HrqPath(b[0]) for b in beams], [b[1] for b in beams])


def generate(x_sem, params, beam_width=4, oracle_path=None):
    """Decoded outputs for the top ``beam_width`` predicted sketches.

    With ``oracle_path`` the prediction step is skipped and that path is used.
    """
    z_sem = encode_semantic(params, x_sem)[0]
    if oracle_path is not None:
        paths = [HrqPath(oracle_path).validate(params.codebook)]
    else:
        paths = predict_sketch(z_sem, params, beam_width).paths
    codes = np.array([list(p) for p in paths], dtype=np.int64)
    z_syn = compose_batch(codes, params.codebook)
    return list(decode(params, np.repeat(z_sem[None, :], len(paths), 0), z_syn))


def generate_truncated(x_sem, exemplar_path, keep_levels, params):
    """Decode using only the first ``keep_levels`` codes of ``exemplar_path``."""
    if not 0 <= keep_levels <= params.depth:
        raise ConfigError(f"keep_levels must lie in [0, {params.depth}], got {keep_levels!r}")
    path = HrqPath(exemplar_path).validate(params.codebook)
    z_sem = encode_semantic(params, x_sem)
    z_syn = compose_batch(np.array([list(path)]), params.codebook, keep_levels)
    return decode(params, z_sem, z_syn)[0]


# evaluation ---------------------------------------------------------------


def _relative_distortion(z, composed):
    spread = ((z - z.mean(axis=0)) ** 2).sum(axis=1).mean()
    return float(((z - composed) ** 2).sum(axis=1).mean() / max(spread, 1e-300))


def evaluate(params, eval_set, codebook=None):
    """Oracle-sketch diagnostics on a held-out :class:`TripleSet`.

    ``codebook`` overrides the model's own (used for post-hoc clustering).
    Reported per truncation depth ``k = 0..D``: ``distortion[k]`` is the mean
    squared quantization error of the syntactic encoding using ``k`` levels,
    ``relative_distortion[k]`` divides it by the encoding's total variance,
    and ``recon_error[k]`` is the mean squared error of ``y`` decoded from
    the exemplar's truncated path. ``purity[d]`` scores the joint codes
    ``q_1..q_{d+1}`` against the true level-``d`` form labels and
    ``code_accuracy[d]`` is teacher-forced top-1 accuracy of sketch head
    ``d``.
    """
    cb = codebook if codebook is not None else params.codebook
    D = cb.depth
    z = encode_syntactic(params, eval_set.x_syn)
    codes, _ = quantize_hard_batch(z, cb)
    z_sem = encode_semantic(params, eval_set.x_sem)
    distortion, rel, recon = [], [], []
    for k in range(D + 1):
        composed = compose_batch(codes, cb, k)
        distortion.append(float(((z - composed) ** 2).sum(axis=1).mean()))
        rel.append(_relative_distortion(z, composed))
        y_hat = decode(params, z_sem, composed)
        recon.append(float(((y_hat - eval_set.y) ** 2).sum(axis=1).mean()))
    purity, purity_first, accuracy = [], [], []
    levels = eval_set.form_path.shape[1]
    for d in range(D):
        if d < levels:
            purity.append(cluster_purity(joint_labels(codes[:, : d + 1]), eval_set.form_path[:, d]))
            purity_first.append(cluster_purity(codes[:, 0], eval_set.form_path[:, d]))
        partial = compose_batch(codes, cb, d)
        pred = head_logits(params, d, z_sem, partial).argmax(axis=1) if f"head{d}.W0" in params.arrays else None
        accuracy.append(float(np.mean(pred == codes[:, d])) if pred is not None else float("nan"))
    return {
        "distortion": distortion,
        "relative_distortion": rel,
        "recon_error": recon,
        "purity": purity,
        "purity_first_level": purity_first,
        "code_accuracy": accuracy,
        "codes": codes,
    }


class HRQVAE(BaseEstimator):
    """Estimator front end for :func:`train` and the inference helpers.

    ``fit`` takes a :class:`TripleSet` (or an ``(x_sem, x_syn, y)`` tuple).
    ``transform`` maps syntactic inputs to code paths, ``predict`` decodes the
    top-1 predicted sketch for each semantic input.
    """

    def __init__(
        self,
        depth=3,
        codes=16,
        sem_dim=16,
        syn_dim=48,
        hidden=64,
        p_depth=0.3,
        alpha_init=0.5,
        tau_init=2.0,
        half_life_steps=10000,
        tau_min=0.5,
        batch_size=64,
        steps=12000,
        lr=0.003,
        lr_final_frac=0.1,
        kl_weight=1.0,
        code_pred_weight=1.0,
        beam_width=4,
        random_state=0,
    ):
        self.depth = depth
        self.codes = codes
        self.sem_dim = sem_dim
        self.syn_dim = syn_dim
        self.hidden = hidden
        self.p_depth = p_depth
        self.alpha_init = alpha_init
        self.tau_init = tau_init
        self.half_life_steps = half_life_steps
        self.tau_min = tau_min
        self.batch_size = batch_size
        self.steps = steps
        self.lr = lr
        self.lr_final_frac = lr_final_frac
        self.kl_weight = kl_weight
        self.code_pred_weight = code_pred_weight
        self.beam_width = beam_width
        self.random_state = random_state

    def _config(self, data_dim):
        return TrainConfig(
            depth=self.depth,
            codes=self.codes,
            data_dim=data_dim,
            sem_dim=self.sem_dim,
            syn_dim=self.syn_dim,
            hidden=self.hidden,
            head_hidden=self.hidden,
            p_depth=self.p_depth,
            alpha_init=self.alpha_init,
            schedule=GumbelSchedule(self.tau_init, self.half_life_steps, self.tau_min),
            batch_size=self.batch_size,
            steps=self.steps,
            lr=self.lr,
            lr_final_frac=self.lr_final_frac,
            kl_weight=self.kl_weight,
            code_pred_weight=self.code_pred_weight,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        if not isinstance(X, TripleSet):
            x_sem, x_syn, target = (check_array(a, dtype=np.float64) for a in X)
            n = target.shape[0]
            X = TripleSet(
                x_sem, x_syn, target, np.zeros(n, np.int64), np.zeros((n, 1), np.int64),
                np.zeros((n, 1), np.int64), np.zeros(n, np.int64),
            )
        result = train(self._config(X.dim), X)
        self.params_ = result.params
        self.history_ = result.history
        self.n_features_in_ = X.dim
        return self

    def transform(self, X_syn):
        check_is_fitted(self, "params_")
        X_syn = check_array(X_syn, dtype=np.float64)
        return quantize_hard_batch(encode_syntactic(self.params_, X_syn), self.params_.codebook)[0]

    def predict(self, X_sem):
        check_is_fitted(self, "params_")
        X_sem = check_array(X_sem, dtype=np.float64)
        return np.stack([generate(x, self.params_, 1)[0] for x in X_sem])

    def predict_sketch(self, X_sem, beam_width=None):
        check_is_fitted(self, "params_")
        width = self.beam_width if beam_width is None else beam_width
        Z = encode_semantic(self.params_, check_array(X_sem, dtype=np.float64))
        return [predict_sketch(z, self.params_, width) for z in Z]

    def score(self, X, y=None):
        """Negative oracle reconstruction error on a :class:`TripleSet`."""
        check_is_fitted(self, "params_")
        return -evaluate(self.params_, X)["recon_error"][-1]
