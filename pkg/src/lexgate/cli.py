"""Command-line entry point.

Subcommands: gen-data, build-matrix, train, eval, ablate, probe, gradcheck,
sweep-threshold. Human-readable tables go to stdout; machine-readable JSON
artifacts plus a run manifest go to the --out directory. Exit codes: 0
success, 1 runtime/data error, 2 usage error, 3 acceptance failure.

Config precedence: command-line flags > --config JSON file > built-in
defaults.
"""

import argparse
import hashlib
import json
import statistics
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .data import (
    generate_synthetic,
    lexicon_to_tsv,
    load_jsonl,
    make_synthetic_lexicon,
    save_jsonl,
    split_train_test,
)
from .lexicon import LexiconError, load_keyword_dictionary, load_similarity_lexicon
from .matrices import build_pair_matrices, matrix_to_csv
from .model import ModelConfig
from .training import (
    GRADCHECK_TOLERANCE,
    TrainConfig,
    ablation_study,
    evaluate,
    flexibility_probe,
    gradcheck_harness,
    sweep_threshold,
    train,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_ACCEPTANCE = 3

EXPECTED_UNUSED_GROUPS = {
    "baseline": {"g_proj", "gate_w", "gate_b"},
    "M_only": {"g_proj", "gate_w", "gate_b"},
    "Mr_only": {"g_proj", "gate_w", "gate_b"},
    "full_gated": set(),
}


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(args, started, inputs, outputs, extra=None):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "argv": args._argv,
        "seed": getattr(args, "seed", None),
        "config": extra or {},
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "duration_s": round(time.time() - started, 3),
        "versions": {"lexgate": __version__, "checkpoint_format": FORMAT_VERSION},
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def _load_providers(args):
    paths = args.lexicon or []
    if not paths:
        raise LexiconError("at least one --lexicon file is required")
    return [load_similarity_lexicon(p, name=Path(p).stem) for p in paths]


def _load_dict(args):
    if getattr(args, "dict", None):
        return load_keyword_dictionary(args.dict)
    return None


def _load_config_file(args):
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _merge(defaults, file_section, flags):
    merged = dict(defaults)
    merged.update({k: v for k, v in file_section.items() if v is not None})
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _model_config(args, vocab_size=8):
    section = _load_config_file(args).get("model", {})
    flags = {
        "h": getattr(args, "heads", None),
        "d_m": getattr(args, "d_m", None),
        "layers": getattr(args, "layers", None),
        "max_len": getattr(args, "max_len", None),
        "ablation_mode": getattr(args, "mode", None),
        "gate_activation": getattr(args, "gate_activation", None),
        "task_mode": getattr(args, "task_mode", None),
    }
    merged = _merge(ModelConfig(vocab_size=vocab_size).to_dict(), section, flags)
    merged["vocab_size"] = vocab_size
    return ModelConfig.from_dict(merged)


def _train_config(args):
    section = _load_config_file(args).get("train", {})
    flags = {
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "lr", None),
        "seed": getattr(args, "seed", None),
        "threshold": getattr(args, "threshold", None),
        "min_word_count": getattr(args, "min_word_freq", None),
    }
    merged = _merge(TrainConfig().to_dict(), section, flags)
    return TrainConfig(**merged)


def _print_metrics(metrics, title):
    print(title)
    print(
        f"  acc={metrics.accuracy:.4f} precision={metrics.precision:.4f} "
        f"recall={metrics.recall:.4f} f1={metrics.f1:.4f}"
    )
    print(
        f"  tp={metrics.tp} fp={metrics.fp} tn={metrics.tn} fn={metrics.fn} "
        f"n={metrics.count}"
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = []
    if args.lexicon:
        provider = load_similarity_lexicon(args.lexicon[0], name=Path(args.lexicon[0]).stem)
        lexicon_path = Path(args.lexicon[0])
        inputs.append(lexicon_path)
    else:
        provider = make_synthetic_lexicon(args.syn_groups, args.ent_groups, seed=args.seed)
        lexicon_path = out_dir / "lexicon.tsv"
        lexicon_to_tsv(provider, lexicon_path)
    examples = generate_synthetic(args.n, provider, seed=args.seed, task_mode=args.task_mode)
    train_set, test_set = split_train_test(examples, args.train_fraction, seed=args.seed)
    train_path = out_dir / "train.jsonl"
    test_path = out_dir / "test.jsonl"
    probes_path = out_dir / "probes.jsonl"
    plain = lambda ex: type(ex)(ex.s1, ex.s2, ex.label)  # strip probe designation
    save_jsonl(train_path, [plain(ex) for ex in train_set])
    save_jsonl(test_path, [plain(ex) for ex in test_set])
    save_jsonl(probes_path, test_set)
    print(
        f"wrote {len(train_set)} train / {len(test_set)} test examples "
        f"({len(examples)} total) to {out_dir}"
    )
    _write_manifest(
        args,
        started,
        inputs,
        [lexicon_path, train_path, test_path, probes_path],
        {"n": args.n, "train_fraction": args.train_fraction, "task_mode": args.task_mode},
    )
    return EXIT_OK


def cmd_build_matrix(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    pair, bias = build_pair_matrices(args.s1, args.s2, providers, kw_dict)
    matrix = {"sim": bias.sim, "dissim": bias.dissim, "cross": bias.cross_mask}[args.matrix]
    from .matrices import Tokenizer, segmentation_vocabulary, segment

    seg_vocab = segmentation_vocabulary(providers, kw_dict)
    words = [w for s in (args.s1, args.s2) for w, _, _ in segment(s, seg_vocab)]
    tokenizer = Tokenizer.build(set(words) | seg_vocab)
    csv_text = matrix_to_csv(matrix, pair, tokenizer)
    outputs = []
    if args.dump:
        Path(args.dump).write_text(csv_text, encoding="utf-8")
        outputs.append(Path(args.dump))
        print(f"wrote {args.matrix} matrix ({pair.length}x{pair.length}) to {args.dump}")
    else:
        sys.stdout.write(csv_text)
    _write_manifest(args, started, args.lexicon or [], outputs, {"matrix": args.matrix})
    return EXIT_OK


def cmd_train(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    dataset = load_jsonl(args.dataset)
    from .training import build_tokenizer

    train_cfg = _train_config(args)
    tokenizer = build_tokenizer([dataset], providers, kw_dict, train_cfg.min_word_count)
    model_cfg = _model_config(args, vocab_size=tokenizer.vocab_size)
    result = train(train_cfg, model_cfg, dataset, providers, kw_dict, tokenizer=tokenizer)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = save_checkpoint(out_dir, result.params, result.tokenizer)
    trace_path = out_dir / "loss_trace.json"
    trace_path.write_text(json.dumps(result.loss_trace, indent=2), encoding="utf-8")
    print(f"trained {model_cfg.ablation_mode} for {train_cfg.epochs} epochs")
    print("per-epoch loss: " + ", ".join(f"{v:.4f}" for v in result.loss_trace))
    print(f"checkpoint: {manifest_path}")
    _write_manifest(
        args,
        started,
        [args.dataset, *(args.lexicon or []), *( [args.dict] if args.dict else [] )],
        [manifest_path, out_dir / "params.bin", trace_path],
        {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
    )
    return EXIT_OK


def cmd_eval(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    params, tokenizer = load_checkpoint(args.checkpoint)
    dataset = load_jsonl(args.dataset)
    threshold = (
        args.threshold
        if args.threshold is not None
        else TrainConfig().resolve_threshold(params.config.task_mode)
    )
    metrics = evaluate(
        params, tokenizer, dataset, providers, kw_dict, threshold, threads=args.threads
    )
    _print_metrics(metrics, f"eval on {args.dataset} (threshold {threshold})")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.json"
    payload = metrics.to_dict()
    payload["threshold"] = threshold
    payload["config"] = params.config.to_dict()
    metrics_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _write_manifest(
        args, started, [args.dataset, *(args.lexicon or [])], [metrics_path],
        {"threshold": threshold},
    )
    return EXIT_OK


def cmd_ablate(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    train_set = load_jsonl(args.dataset)
    if args.test:
        test_set = load_jsonl(args.test)
    else:
        train_set, test_set = split_train_test(train_set, 0.8, seed=args.seed or 0)
    model_cfg = _model_config(args)
    train_cfg = _train_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablation_study(
        train_cfg, model_cfg, train_set, test_set, providers, kw_dict, seeds=seeds
    )
    print(f"{'mode':<14} {'median ACC':>10} {'median F1':>10}  per-seed ACC")
    for row in rows:
        accs = ", ".join(f"{a:.3f}" for a in row["acc"])
        print(
            f"{row['label']:<14} {row['median_acc']:>10.4f} {row['median_f1']:>10.4f}  [{accs}]"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "ablation.json"
    table_path.write_text(json.dumps(rows, indent=2), encoding="utf-8")
    _write_manifest(
        args, started, [args.dataset, *(args.lexicon or [])], [table_path],
        {"seeds": seeds, "model": model_cfg.to_dict(), "train": train_cfg.to_dict()},
    )
    return EXIT_OK


def cmd_probe(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    params, tokenizer = load_checkpoint(args.checkpoint)
    probes = load_jsonl(args.probes)
    report = flexibility_probe(params, tokenizer, probes, providers, kw_dict)
    print(
        f"probes: {report.n_valid} valid, {report.n_invalid} invalid; "
        f"resolved fraction {report.fraction_resolved:.3f} (bar {args.bar})"
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "probe_report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    _write_manifest(
        args, started, [args.probes, *(args.lexicon or [])], [report_path],
        {"bar": args.bar},
    )
    if report.n_valid == 0 or report.fraction_resolved < args.bar:
        print("probe acceptance bar not met", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_gradcheck(args):
    started = time.time()
    results = {}
    ok = True
    for mode in ("baseline", "M_only", "Mr_only", "full_gated"):
        report = gradcheck_harness(seed=args.seed or 7, epsilon=args.epsilon, mode=mode)
        unused_ok = set(report.unused_groups) == EXPECTED_UNUSED_GROUPS[mode]
        ok = ok and report.passed and unused_ok
        results[mode] = {
            "group_errors": report.group_errors,
            "unused_groups": report.unused_groups,
            "passed": report.passed and unused_ok,
        }
        print(f"mode {mode}: worst rel err {report.worst():.3e}"
              f" unused={sorted(report.unused_groups)}"
              f" -> {'ok' if report.passed and unused_ok else 'FAIL'}")
        for group, err in sorted(report.group_errors.items()):
            print(f"    {group:<12} {err:.3e}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "gradcheck.json"
    report_path.write_text(json.dumps(results, indent=2), encoding="utf-8")
    _write_manifest(args, started, [], [report_path], {"tolerance": GRADCHECK_TOLERANCE})
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def cmd_sweep_threshold(args):
    started = time.time()
    providers = _load_providers(args)
    kw_dict = _load_dict(args)
    params, tokenizer = load_checkpoint(args.checkpoint)
    dataset = load_jsonl(args.dataset)
    sweep = sweep_threshold(params, tokenizer, dataset, providers, kw_dict, steps=args.steps)
    best = max(sweep, key=lambda pair: pair[1].f1)
    print(f"{'threshold':>9} {'acc':>8} {'f1':>8}")
    for threshold, metrics in sweep:
        marker = " *" if threshold == best[0] else ""
        print(f"{threshold:>9.3f} {metrics.accuracy:>8.4f} {metrics.f1:>8.4f}{marker}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "threshold_sweep.json"
    sweep_path.write_text(
        json.dumps(
            [{"threshold": t, **m.to_dict()} for t, m in sweep], indent=2
        ),
        encoding="utf-8",
    )
    _write_manifest(args, started, [args.dataset], [sweep_path], {"steps": args.steps})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sub, lexicon=True):
    sub.add_argument("--seed", type=int, default=None, help="global RNG seed")
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--out", default="out", help="artifact directory")
    sub.add_argument("--threads", type=int, default=1, help="worker parallelism cap")
    if lexicon:
        sub.add_argument(
            "--lexicon",
            action="append",
            default=None,
            help="similarity lexicon TSV; repeat for multiple providers",
        )
        sub.add_argument("--dict", default=None, help="keyword dictionary TSV")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lexgate",
        description="gated lexical-bias cross-encoder: data, training, evaluation, probes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset and lexicon")
    _add_common(p)
    p.add_argument("--n", type=int, default=2500, help="number of sentence pairs")
    p.add_argument("--syn-groups", type=int, default=30)
    p.add_argument("--ent-groups", type=int, default=30)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--task-mode", choices=["classification", "regression"],
                   default="classification")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-matrix", help="build and dump bias matrices for one pair")
    _add_common(p)
    p.add_argument("--s1", required=True)
    p.add_argument("--s2", required=True)
    p.add_argument("--dump", default=None, help="CSV output path")
    p.add_argument("--matrix", choices=["sim", "dissim", "cross"], default="sim")
    p.set_defaults(func=cmd_build_matrix)

    p = sub.add_parser("train", help="train a model on a JSONL dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--min-word-freq", type=int, default=None,
                   help="words rarer than this encode as [UNK]")
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--d-m", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--mode", choices=["baseline", "M_only", "Mr_only", "full_gated"],
                   default=None)
    p.add_argument("--gate-activation", choices=["sigmoid", "identity"], default=None)
    p.add_argument("--task-mode", choices=["classification", "regression"], default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run all four ablation modes and compare")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--test", default=None, help="held-out set; default splits --dataset")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--min-word-freq", type=int, default=None,
                   help="words rarer than this encode as [UNK]")
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--d-m", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--task-mode", choices=["classification", "regression"], default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("probe", help="flexibility-correction directional probe")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probes", required=True, help="JSONL probes with kw1/kw2 fields")
    p.add_argument("--bar", type=float, default=0.8, help="required resolved fraction")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    _add_common(p, lexicon=False)
    p.add_argument("--epsilon", type=float, default=3e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep-threshold", help="metrics across decision thresholds")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=21)
    p.set_defaults(func=cmd_sweep_threshold)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except (OSError, ValueError, LexiconError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
