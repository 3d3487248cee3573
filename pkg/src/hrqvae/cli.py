"""``hrqvae`` command-line entry point.

Verbs: ``gen-data``, ``train``, ``eval``, ``ablate``, ``quantize`` and
``metrics``. Every setting can come from ``--config FILE``, an ``HRQ_*``
environment variable or a flag named after the key (``hier.scales`` becomes
``--hier-scales``). Exit codes: 0 success, 2 invalid input or configuration,
3 numeric divergence, 4 unreadable or incompatible file format.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import AblationName, AblationReport, AblationSpec, recursive_kmeans, run_ablation
from .config import Field, read_config_file, resolve
from .exceptions import DataError, FormatError, HRQError, NumericFault, UsageError
from .metrics import Corpus, corpus_bleu, ibleu, pairwise_bleu, read_segments, round_half_up, self_bleu
from .model import TrainConfig, evaluate, train
from .quantizer import GumbelSchedule, quantize_hard
from .serialization import (
    load_arrays,
    load_checkpoint,
    load_codebook,
    save_arrays,
    save_checkpoint,
    save_codebook,
)
from .synthdata import HierSpec, TripleSet, gen_hier_mixture, gen_paraphrase_analog

log = logging.getLogger("hrqvae")

HISTORY_COLUMNS = ("step", "recon", "kl", "code_pred", "tau")

DATA_SCHEMA = {
    "seed": Field("int", 0, "root seed"),
    "kind": Field("str", "triples", "'triples' (paraphrase analog) or 'mixture'"),
    "n_samples": Field("int", 6000, "number of triples or vectors"),
    "n_eval": Field("int", 1000, "held-out triples"),
    "n_contents": Field("int", 32, "distinct contents"),
    "dim_out": Field("int", 32, "width of x_sem, x_syn and y"),
    "content_dim": Field("int", 8, "latent content width"),
    "form_weight": Field("float", 1.0, "scale of the form factor"),
    "content_weight": Field("float", 1.0, "scale of the content factor"),
    "noise_sigma": Field("float", 0.02, "output noise"),
    "form_content_correlation": Field("float", 0.5, "probability of a content's preferred form"),
    "hier.levels": Field("int", 3, "form hierarchy depth"),
    "hier.branching": Field("int", 4, "children per node"),
    "hier.dim": Field("int", 16, "form vector width"),
    "hier.scales": Field("floats", (8.0, 2.0, 0.5), "per-level offset scales"),
    "hier.noise_sigma": Field("float", 0.1, "within-leaf noise"),
}

_T = TrainConfig()
TRAIN_SCHEMA = {
    "seed": Field("int", _T.seed, "root seed"),
    "depth": Field("int", _T.depth, "codebook levels D"),
    "codes": Field("int", _T.codes, "codes per level K"),
    "sem_dim": Field("int", _T.sem_dim, "semantic latent width"),
    "syn_dim": Field("int", _T.syn_dim, "codebook embedding width"),
    "hidden": Field("int", _T.hidden, "MLP hidden width"),
    "head_hidden": Field("int", _T.head_hidden, "sketch head hidden width"),
    "p_depth": Field("float", _T.p_depth, "depth dropout probability"),
    "alpha_init": Field("float", _T.alpha_init, "codebook initialisation decay"),
    "tau_init": Field("float", _T.schedule.tau_init, "initial Gumbel temperature"),
    "half_life_steps": Field("int", _T.schedule.half_life_steps, "temperature half-life"),
    "tau_min": Field("float", _T.schedule.tau_min, "temperature floor"),
    "schedule_mode": Field("str", _T.schedule.mode.value, "prose_exponential or printed_sigmoid"),
    "batch_size": Field("int", _T.batch_size, "rows per step"),
    "steps": Field("int", _T.steps, "total training steps"),
    "lr": Field("float", _T.lr, "initial Adam learning rate"),
    "lr_final_frac": Field("float", _T.lr_final_frac, "final learning rate as a fraction of lr"),
    "kl_weight": Field("float", _T.kl_weight, "KL term weight"),
    "code_pred_weight": Field("float", _T.code_pred_weight, "sketch head loss weight"),
    "bottleneck": Field("str", _T.bottleneck, "'hrq' or 'gaussian'"),
}

ABLATE_SCHEMA = {
    **TRAIN_SCHEMA,
    "specs": Field("strs", tuple(n.value for n in AblationName), "ablation names"),
    "seeds": Field("ints", (0, 1, 2), "model seeds"),
    "kmeans_iters": Field("int", 50, "Lloyd iterations for post-hoc clustering"),
}

QUANTIZE_SCHEMA = {
    "seed": Field("int", 0, "k-means seed"),
    "depth": Field("int", 3, "levels when fitting k-means"),
    "codes": Field("int", 16, "codes per level when fitting k-means"),
    "kmeans_iters": Field("int", 50, "Lloyd iterations"),
}

METRIC_SCHEMA = {
    "alpha": Field("floats", (0.8,), "iBLEU weights; several give one column each"),
    "lowercase": Field("bool", True, "lowercase before tokenizing"),
}

EVAL_SCHEMA = dict(METRIC_SCHEMA)


# helpers ------------------------------------------------------------------


def _flag(key):
    return "--" + key.replace(".", "-").replace("_", "-")


def _add_schema_flags(parser, schema):
    group = parser.add_argument_group("settings")
    for key, f in schema.items():
        group.add_argument(_flag(key), dest="cfg:" + key, default=None, metavar=f.kind.upper(), help=f.help)


def _settings(args, schema):
    file_values = read_config_file(args.config) if args.config else None
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    return resolve(schema, file_values, overrides)


def _explicit_settings(args):
    return bool(args.config) or any(v is not None for k, v in vars(args).items() if k.startswith("cfg:"))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text, encoding="utf-8")


def _data_file(data, name):
    p = Path(data)
    path = p / name if p.is_dir() else p
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    return path


def _load_triples(path):
    _, arrays, _ = load_arrays(path, "triples")
    return TripleSet.from_arrays(arrays)


def _train_config(s, data_dim):
    return TrainConfig(
        depth=s["depth"],
        codes=s["codes"],
        data_dim=data_dim,
        sem_dim=s["sem_dim"],
        syn_dim=s["syn_dim"],
        hidden=s["hidden"],
        head_hidden=s["head_hidden"],
        p_depth=s["p_depth"],
        alpha_init=s["alpha_init"],
        schedule=GumbelSchedule(s["tau_init"], s["half_life_steps"], s["tau_min"], s["schedule_mode"]),
        batch_size=s["batch_size"],
        steps=s["steps"],
        lr=s["lr"],
        lr_final_frac=s["lr_final_frac"],
        kl_weight=s["kl_weight"],
        code_pred_weight=s["code_pred_weight"],
        seed=s["seed"],
        bottleneck=s["bottleneck"],
    )


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _bleu_family(outputs, references, inputs, alphas, candidates=None):
    """Rounded BLEU, Self-BLEU, one iBLEU per alpha and optional P-BLEU."""
    if not (len(outputs) == len(inputs) and all(len(r) == len(outputs) for r in references)):
        raise UsageError("outputs, inputs and every reference file need the same number of lines")
    refs = [list(r) for r in zip(*references)]
    bleu = corpus_bleu(Corpus(outputs, refs))
    sb = self_bleu(outputs, inputs)
    out = {"bleu": round_half_up(bleu), "self_bleu": round_half_up(sb)}
    for a in alphas:
        out[f"ibleu@{a:g}"] = round_half_up(ibleu(bleu, sb, a))
    if candidates:
        sets = [list(c) for c in zip(*candidates)]
        out["p_bleu"] = round_half_up(pairwise_bleu(sets))
    return out


def _read_text_files(args, lowercase):
    outputs = read_segments(args.outputs, lowercase)
    inputs = read_segments(args.inputs, lowercase)
    references = [read_segments(p, lowercase) for p in args.references]
    candidates = [read_segments(p, lowercase) for p in args.candidates] if args.candidates else None
    return outputs, references, inputs, candidates


# commands -----------------------------------------------------------------


def cmd_gen_data(args):
    s = _settings(args, DATA_SCHEMA)
    if s["n_samples"] < 1:
        raise DataError("n_samples must be >= 1")
    out = Path(args.out)
    spec = HierSpec(
        levels=s["hier.levels"],
        branching=s["hier.branching"],
        dim=s["hier.dim"],
        scales=s["hier.scales"],
        n_samples=s["n_samples"],
        noise_sigma=s["hier.noise_sigma"],
        seed=s["seed"],
    )
    files = {}
    if s["kind"] == "triples":
        data = gen_paraphrase_analog(
            s["n_contents"],
            spec,
            s["dim_out"],
            s["n_samples"],
            s["seed"],
            content_dim=s["content_dim"],
            form_weight=s["form_weight"],
            content_weight=s["content_weight"],
            noise_sigma=s["noise_sigma"],
            form_content_correlation=s["form_content_correlation"],
        )
        train_set, eval_set = data.split(s["n_eval"])
        out.mkdir(parents=True, exist_ok=True)
        for name, part in (("train.json", train_set), ("eval.json", eval_set)):
            save_arrays(out / name, "triples", part.to_arrays(), {"rows": len(part)})
            files[name] = _sha256(out / name)
    elif s["kind"] == "mixture":
        mix = gen_hier_mixture(spec)
        arrays = {"vectors": mix.vectors}
        arrays.update({f"labels_l{d + 1}": lab for d, lab in enumerate(mix.labels)})
        out.mkdir(parents=True, exist_ok=True)
        save_arrays(out / "vectors.json", "vectors", arrays, {"rows": int(mix.vectors.shape[0])})
        files["vectors.json"] = _sha256(out / "vectors.json")
    else:
        raise DataError(f"kind must be 'triples' or 'mixture', got {s['kind']!r}")
    manifest = {"version": __version__, "seed": s["seed"], "settings": s, "files": files}
    _write(out / "manifest.json", _json_text(manifest))
    print(f"wrote {', '.join(sorted(files))} to {out}")
    return 0


def cmd_train(args):
    train_set = _load_triples(_data_file(args.data, "train.json"))
    if args.resume:
        if _explicit_settings(args):
            raise UsageError("a resumed run takes its settings from the checkpoint")
        resume = load_checkpoint(args.resume)
        config = resume.params.config
    else:
        resume = None
        config = _train_config(_settings(args, TRAIN_SCHEMA), train_set.dim)
    start = resume.step if resume else 0
    stop = config.steps if args.stop_at is None else args.stop_at
    if not start <= stop <= config.steps:
        raise UsageError(f"stop-at must lie in [{start}, {config.steps}]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        result = train(config, train_set, steps=stop - start, resume=resume, callback=rows.append)
    except NumericFault as exc:
        _write(out / "history.csv", _history_csv(rows))
        raise NumericFault(exc.step, f"numeric divergence at step {exc.step}; last finite step {exc.step - 1}") from exc
    save_checkpoint(out / "checkpoint.json", result)
    _write(out / "history.csv", _history_csv(rows))
    print(f"trained steps {start}..{result.step}; checkpoint at {out / 'checkpoint.json'}")
    return 0


def _history_csv(rows):
    return _csv_text(HISTORY_COLUMNS, [[r["step"]] + [repr(float(r[c])) for c in HISTORY_COLUMNS[1:]] for r in rows])


def cmd_eval(args):
    s = _settings(args, EVAL_SCHEMA)
    report = {}
    if args.checkpoint:
        if not args.data:
            raise UsageError("--checkpoint needs --data")
        params = load_checkpoint(args.checkpoint).params
        eval_set = _load_triples(_data_file(args.data, "eval.json"))
        diag = evaluate(params, eval_set)
        diag.pop("codes")
        monotone = all(b <= a for a, b in zip(diag["distortion"], diag["distortion"][1:]))
        if not monotone:
            log.warning("quantization distortion increases with depth: %s", diag["distortion"])
        report.update(diag)
        report["distortion_monotone"] = monotone
        report["depth"] = params.depth
    text_args = (args.outputs, args.references, args.inputs)
    if any(text_args):
        if not all(text_args):
            raise UsageError("text evaluation needs --outputs, --references and --inputs")
        outputs, references, inputs, candidates = _read_text_files(args, s["lowercase"])
        report["metrics"] = _bleu_family(outputs, references, inputs, s["alpha"], candidates)
    if not report:
        raise UsageError("nothing to evaluate: give --checkpoint/--data and/or text files")
    if args.format == "csv":
        text = _eval_csv(report)
    else:
        text = _json_text(report)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _eval_csv(report):
    """One row per truncation depth; BLEU-family columns repeat on every row."""
    metrics = report.get("metrics", {})
    header = list(metrics)
    rows = []
    if "distortion" in report:
        header = ["keep_levels", "distortion", "relative_distortion", "recon_error", "purity", "code_accuracy"] + header
        for k in range(report["depth"] + 1):
            level = k - 1
            purity = report["purity"][level] if 0 <= level < len(report["purity"]) else ""
            acc = report["code_accuracy"][level] if level >= 0 else ""
            rows.append(
                [k, report["distortion"][k], report["relative_distortion"][k], report["recon_error"][k], purity, acc]
                + list(metrics.values())
            )
    else:
        rows.append(list(metrics.values()))
    return _csv_text(header, rows)


def cmd_ablate(args):
    s = _settings(args, ABLATE_SCHEMA)
    train_set = _load_triples(_data_file(args.data, "train.json"))
    eval_set = _load_triples(_data_file(args.data, "eval.json"))
    specs = [AblationSpec(name) for name in _ablation_names(s["specs"])]
    rows = []
    for spec in specs:
        for seed in s["seeds"]:
            cfg = _train_config({**s, "seed": seed}, train_set.dim)
            report, _ = run_ablation(spec, train_set, eval_set, cfg, kmeans_iters=s["kmeans_iters"])
            rows.append(report.csv_row())
            log.info("%s seed %d: distortion %.4f", spec.name.value, seed, report.distortion)
    _write(args.out, _csv_text(AblationReport.CSV_COLUMNS, rows))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _ablation_names(names):
    valid = {n.value for n in AblationName}
    bad = [n for n in names if n not in valid]
    if bad:
        raise DataError(f"unknown ablation(s) {bad}; choose from {sorted(valid)}")
    return names


def cmd_quantize(args):
    s = _settings(args, QUANTIZE_SCHEMA)
    _, arrays, _ = load_arrays(args.vectors)
    if "vectors" not in arrays:
        raise FormatError(f"{args.vectors} has no 'vectors' array")
    X = arrays["vectors"]
    sources = sum(bool(x) for x in (args.codebook, args.checkpoint, args.kmeans))
    if sources != 1:
        raise UsageError("give exactly one of --codebook, --checkpoint or --kmeans")
    if args.codebook:
        codebook = load_codebook(args.codebook)
    elif args.checkpoint:
        codebook = load_checkpoint(args.checkpoint).params.codebook
    else:
        codebook = recursive_kmeans(X, s["depth"], s["codes"], s["kmeans_iters"], s["seed"])
    if args.save_codebook:
        save_codebook(args.save_codebook, codebook)
    traces = [quantize_hard(z, codebook) for z in X]
    out = {
        "codes": np.array([list(t.path) for t in traces], dtype=np.int64).reshape(len(traces), codebook.depth),
        "residual_norms": np.array([t.residual_norms for t in traces]).reshape(len(traces), codebook.depth + 1),
        "scores": np.array([t.scores for t in traces]).reshape(
            len(traces), codebook.depth, codebook.codes_per_level
        ),
        "composed": np.array([t.composed for t in traces]).reshape(len(traces), codebook.dim),
    }
    save_arrays(args.out, "traces", out, {"rows": len(traces)})
    print(f"quantized {len(traces)} vectors to {args.out}")
    return 0


def cmd_metrics(args):
    s = _settings(args, METRIC_SCHEMA)
    outputs, references, inputs, candidates = _read_text_files(args, s["lowercase"])
    scores = _bleu_family(outputs, references, inputs, s["alpha"], candidates)
    text = _csv_text(list(scores), [list(scores.values())]) if args.format == "csv" else _json_text(scores)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hrqvae", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"hrqvae {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, schema, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.set_defaults(func=func)
        _add_schema_flags(p, schema)
        return p

    p = command("gen-data", cmd_gen_data, DATA_SCHEMA, "generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = command("train", cmd_train, TRAIN_SCHEMA, "train a model")
    p.add_argument("--data", required=True, help="dataset directory or train.json")
    p.add_argument("--out", required=True, help="output directory for checkpoint and history")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--stop-at", type=int, help="stop after this global step (default: the configured total)")

    def text_inputs(p, required):
        p.add_argument("--outputs", required=required, help="generated segments, one per line")
        p.add_argument("--references", nargs="+", required=required, help="one or more reference files")
        p.add_argument("--inputs", required=required, help="source segments, one per line")
        p.add_argument("--candidates", nargs="+", help="candidate files for pairwise BLEU")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="report path (default: stdout)")

    p = command("eval", cmd_eval, EVAL_SCHEMA, "evaluate a checkpoint and/or text outputs")
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--data", help="dataset directory or eval.json")
    text_inputs(p, required=False)

    p = command("ablate", cmd_ablate, ABLATE_SCHEMA, "run ablation variants over seeds")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="CSV path")

    p = command("quantize", cmd_quantize, QUANTIZE_SCHEMA, "dump quantization traces for vectors")
    p.add_argument("--vectors", required=True, help="array document with a 'vectors' array")
    p.add_argument("--codebook", help="codebook document")
    p.add_argument("--checkpoint", help="use this checkpoint's codebook")
    p.add_argument("--kmeans", action="store_true", help="fit recursive k-means on the vectors")
    p.add_argument("--save-codebook", help="also write the codebook used")
    p.add_argument("--out", required=True, help="trace document path")

    p = command("metrics", cmd_metrics, METRIC_SCHEMA, "BLEU family scores for text files")
    text_inputs(p, required=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except HRQError as exc:
        print(f"hrqvae {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"hrqvae {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
