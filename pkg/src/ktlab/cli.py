"""Command-line surface: ingest -> format -> train/tune -> evaluate -> analyze.

Every command is driven by flags plus an optional JSON config file
(flags win). Exit codes: 0 success, 2 input/validation error, 3
runtime/divergence error. Reports are written atomically and an output
directory is owned by one process at a time via a lock file.

Heavy imports happen inside commands so ``--threads`` can pin the BLAS
thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from contextlib import contextmanager

ENV_OUT_ROOT = "KTLAB_OUT"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


@contextmanager
def _locked_outdir(path: str):
    os.makedirs(path, exist_ok=True)
    lock = os.path.join(path, "ktlab.lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SystemExit(
            f"error: output directory {path!r} is locked by another run "
            f"(remove {lock} if that run is dead)"
        ) from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield path
    finally:
        os.unlink(lock)


def _atomic_write_json(obj, path) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _out_dir(args) -> str:
    if args.out:
        return args.out
    root = os.environ.get(ENV_OUT_ROOT, ".")
    return os.path.join(root, "ktlab-out")


def _template_from(config: dict):
    from .ktlp import PromptTemplate

    t = config.get("template", {})
    return PromptTemplate(**t) if t else PromptTemplate()


def _schema_from(args, config: dict):
    schema = dict(config.get("schema", {}))
    for col in ("student_id", "step", "exercise_id", "kc_id", "kc_name", "correct"):
        v = getattr(args, f"col_{col}", None)
        if v:
            schema[col] = v
    return schema or None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    from .data import dataset_stats, filter_and_truncate, load_interactions, write_interactions_csv

    config = _load_config(args.config)
    ds = load_interactions(args.csv, schema=_schema_from(args, config))
    if not args.no_filter:
        ds = filter_and_truncate(ds, args.min_interactions, args.max_interactions)
    out = _out_dir(args)
    with _locked_outdir(out):
        write_interactions_csv(ds, os.path.join(out, "canonical.csv"))
        _atomic_write_json(dataset_stats(ds).to_dict(), os.path.join(out, "stats.json"))
    print(f"ingested {ds.n_learners} learners, {ds.n_interactions} interactions -> {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from .data import dataset_stats, load_interactions

    ds = load_interactions(args.csv, schema=_schema_from(args, _load_config(args.config)))
    report = dataset_stats(ds).to_dict()
    if args.out:
        with _locked_outdir(args.out):
            _atomic_write_json(report, os.path.join(args.out, "stats.json"))
    print(json.dumps(report, indent=1))
    return EXIT_OK


def cmd_format(args) -> int:
    from .data import load_interactions
    from .ktlp import format_dataset, write_jsonl

    config = _load_config(args.config)
    ds = load_interactions(args.csv)
    examples = format_dataset(ds, args.mode, _template_from(config))
    out = _out_dir(args)
    with _locked_outdir(out):
        path = os.path.join(out, f"ktlp-{args.mode}.jsonl")
        tmp = path + ".tmp"
        write_jsonl(examples, tmp)
        os.replace(tmp, path)
    print(f"wrote {len(examples)} examples -> {path}")
    return EXIT_OK


def _loss_curve_csv(curve, path) -> None:
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, repr(float(v))])


def _train_config_from(config: dict, args):
    from .lm import TrainConfig

    kwargs = dict(config.get("train", {}))
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        kwargs["epochs"] = args.epochs
    return TrainConfig(**kwargs)


def cmd_train_lm(args) -> int:
    from .ktlp import read_jsonl
    from .lm import LmConfig, init_params, save_checkpoint, train_clm
    from .vocab import build_vocab, load_vocab, save_vocab

    config = _load_config(args.config)
    examples = read_jsonl(args.data)
    if args.vocab:
        vocab = load_vocab(args.vocab)
    else:
        vocab = build_vocab(examples)
    model_kwargs = dict(config.get("model", {}))
    model_kwargs["vocab_size"] = vocab.size
    lm_config = LmConfig(**model_kwargs)
    tcfg = _train_config_from(config, args)
    params = init_params(lm_config, seed=tcfg.seed)
    trained, curve = train_clm(params, examples, vocab, tcfg)
    out = _out_dir(args)
    with _locked_outdir(out):
        save_vocab(vocab, os.path.join(out, "vocab.json"))
        save_checkpoint(os.path.join(out, "model.npz"), trained, vocab.content_hash())
        _loss_curve_csv(curve, os.path.join(out, "loss_curve.csv"))
    print(f"trained {trained.n_parameters()} parameters; final loss {curve[-1]:.4f} -> {out}")
    return EXIT_OK


def cmd_finetune_lora(args) -> int:
    from .ktlp import read_jsonl
    from .lm import load_checkpoint, lora_attach, save_checkpoint, train_lora
    from .vocab import load_vocab

    config = _load_config(args.config)
    vocab = load_vocab(args.vocab)
    base, _, _ = load_checkpoint(args.base, expect_vocab_hash=vocab.content_hash())
    examples = read_jsonl(args.data)
    tcfg = _train_config_from(config, args)
    _, adapter = lora_attach(base, rank=args.rank, alpha=args.alpha, seed=tcfg.seed)
    tuned, curve = train_lora(base, adapter, examples, vocab, tcfg)
    out = _out_dir(args)
    with _locked_outdir(out):
        save_checkpoint(os.path.join(out, "adapter.npz"), base, vocab.content_hash(), adapter=tuned)
        _loss_curve_csv(curve, os.path.join(out, "loss_curve.csv"))
    print(f"tuned adapter ({tuned.n_parameters()} parameters); final loss {curve[-1]:.4f} -> {out}")
    return EXIT_OK


def cmd_train_baseline(args) -> int:
    from .baselines import (
        DktConfig,
        fit_bkt_tracer,
        fit_dkt_tracer,
        fit_irt_tracer,
        fit_pfa_tracer,
        save_bkt_json,
        save_irt_json,
        save_pfa_json,
    )
    from .data import load_interactions
    from .lm.checkpoint import save_array_checkpoint

    config = _load_config(args.config)
    ds = load_interactions(args.csv)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    with _locked_outdir(out):
        if args.model == "bkt":
            tracer = fit_bkt_tracer(ds)
            save_bkt_json(tracer, os.path.join(out, "bkt.json"))
        elif args.model == "irt":
            tracer = fit_irt_tracer(ds, lam=config.get("irt_lam", 0.05))
            save_irt_json(tracer, os.path.join(out, "irt.json"))
        elif args.model == "pfa":
            tracer = fit_pfa_tracer(ds, lam=config.get("pfa_lam", 0.1))
            save_pfa_json(tracer, os.path.join(out, "pfa.json"))
        else:
            dkt_kwargs = dict(config.get("dkt", {}))
            dkt_kwargs["seed"] = seed
            tracer = fit_dkt_tracer(ds, DktConfig(**dkt_kwargs))
            save_array_checkpoint(
                os.path.join(out, "dkt.npz"),
                "dkt",
                {"kc_ids": list(tracer.params.kc_ids)},
                tracer.params.tensors,
            )
    print(f"fitted {args.model} on {ds.n_learners} learners -> {out}")
    return EXIT_OK


def _tracer_from_spec(args, config: dict):
    """Rebuild a tracer from trained artifact files."""
    from .baselines import DktParams, DktTracer, load_bkt_json, load_irt_json, load_pfa_json
    from .lm import load_checkpoint, lora_merge
    from .lm.checkpoint import load_array_checkpoint
    from .lm.tracer import LmTracer
    from .vocab import load_vocab

    model = args.model
    if model == "bkt":
        return load_bkt_json(args.params)
    if model == "irt":
        return load_irt_json(args.params)
    if model == "pfa":
        return load_pfa_json(args.params)
    if model == "dkt":
        meta, arrays = load_array_checkpoint(args.params, expect_kind="dkt")
        return DktTracer(DktParams(kc_ids=tuple(meta["config"]["kc_ids"]), tensors=arrays))
    if model == "lm":
        vocab = load_vocab(args.vocab)
        params, adapter, _ = load_checkpoint(args.checkpoint, expect_vocab_hash=vocab.content_hash())
        if adapter is not None:
            params = lora_merge(params, adapter)
        return LmTracer(params, vocab, _template_from(config), args.mode)
    raise SystemExit(f"error: unknown model {model!r}")


def cmd_evaluate(args) -> int:
    from .data import load_interactions, split_holdout
    from .eval import auc, calibration, score_dataset, write_records_csv
    from .errors import UndefinedAucError

    config = _load_config(args.config)
    ds = load_interactions(args.csv)
    tracer = _tracer_from_spec(args, config)
    if args.no_split:
        target = ds.with_provenance(role="test")
    else:
        _, target = split_holdout(ds, args.test_fraction, args.split_seed)
    records = score_dataset(tracer, target)
    out = _out_dir(args)
    with _locked_outdir(out):
        tmp = os.path.join(out, "records.csv.tmp")
        write_records_csv(records, tmp)
        os.replace(tmp, os.path.join(out, "records.csv"))
        try:
            value = auc(records)
        except UndefinedAucError:
            value = None
        report = {
            "model": args.model,
            "n_records": len(records),
            "auc": value,
            "ece": calibration(records).ece if records else None,
        }
        _atomic_write_json(report, os.path.join(out, "evaluate.json"))
    print(json.dumps(report, indent=1))
    return EXIT_OK


def _build_lm_factory(config: dict, representation: str):
    from .factories import LmFactory
    from .lm import TrainConfig

    lm_conf = dict(config.get("lm", {}))
    train_conf = dict(config.get("train", {}))
    epochs_by_size = lm_conf.pop("epochs_by_size", None)
    if epochs_by_size:
        epochs_by_size = tuple((int(k), int(v)) for k, v in epochs_by_size)
    return LmFactory(
        representation=representation,
        template=_template_from(config),
        train_config=TrainConfig(**train_conf) if train_conf else TrainConfig(epochs=15),
        epochs_by_size=epochs_by_size,
        **lm_conf,
    )


def _grid_factories(config: dict, models, representation: str):
    from .factories import BktFactory, DktFactory, IrtFactory, PfaFactory

    factories = {}
    for m in models:
        if m == "lm":
            factories[m] = _build_lm_factory(config, representation)
        elif m == "bkt":
            factories[m] = BktFactory()
        elif m == "irt":
            factories[m] = IrtFactory(lam=config.get("irt_lam", 0.05))
        elif m == "pfa":
            factories[m] = PfaFactory(lam=config.get("pfa_lam", 0.1))
        elif m == "dkt":
            from .baselines import DktConfig

            factories[m] = DktFactory(config=DktConfig(**config.get("dkt", {})))
        else:
            raise SystemExit(f"error: unknown model {m!r} in grid")
    return factories


def cmd_coldstart(args) -> int:
    from .data import load_interactions, split_holdout
    from .eval import ExperimentGrid, run_cold_start, write_aggregate_csv, write_results_csv

    config = _load_config(args.config)
    models = tuple(args.models.split(","))
    sizes = tuple(int(s) for s in args.sizes.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    grid = ExperimentGrid(
        datasets=("dataset",), models=models, sizes=sizes, seeds=seeds, representation=args.mode
    )
    ds = load_interactions(args.csv)
    train, test = split_holdout(ds, args.test_fraction, args.split_seed)
    out = _out_dir(args)
    with _locked_outdir(out):
        table = run_cold_start(
            grid,
            {"dataset": (train, test)},
            _grid_factories(config, models, args.mode),
            cache_dir=os.path.join(out, "cache"),
            log=print,
        )
        tmp = os.path.join(out, "results.csv.tmp")
        write_results_csv(table, tmp)
        os.replace(tmp, os.path.join(out, "results.csv"))
        tmp = os.path.join(out, "aggregate.csv.tmp")
        write_aggregate_csv(table, tmp)
        os.replace(tmp, os.path.join(out, "aggregate.csv"))
    print(f"wrote {len(table.cells)} cells -> {out}")
    return EXIT_OK


def cmd_crossdomain(args) -> int:
    from .data import load_interactions
    from .eval import run_cross_domain

    config = _load_config(args.config)
    source = load_interactions(args.source)
    target = load_interactions(args.target)
    factory = _build_lm_factory(config, args.mode)
    report = run_cross_domain(
        source,
        target,
        factory,
        test_spec=args.test_fraction,
        split_seed=args.split_seed,
        n_students=args.n_students,
        sample_seed=args.seed if args.seed is not None else 0,
    )
    out = _out_dir(args)
    with _locked_outdir(out):
        _atomic_write_json(report, os.path.join(out, "crossdomain.json"))
    print(json.dumps(report, indent=1))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .eval import calibration, read_records_csv, write_calibration_csv

    records = read_records_csv(args.records)
    report = calibration(records, n_bins=args.bins)
    out = _out_dir(args)
    with _locked_outdir(out):
        tmp = os.path.join(out, "calibration.csv.tmp")
        write_calibration_csv(report, tmp)
        os.replace(tmp, os.path.join(out, "calibration.csv"))
    print(f"ece={report.ece:.6f} over {report.n_records} records -> {out}")
    return EXIT_OK


def cmd_trajectory(args) -> int:
    from .data import load_interactions
    from .eval import extract_trajectory, write_trajectory_csv

    config = _load_config(args.config)
    ds = load_interactions(args.csv)
    if args.student not in ds.histories:
        raise SystemExit(f"error: student {args.student!r} not in dataset")
    tracer = _tracer_from_spec(args, config)
    tracked = args.kcs.split(",") if args.kcs else sorted(ds.kc_table)
    matrix = extract_trajectory(tracer, ds.histories[args.student], tracked, dict(ds.kc_table))
    out = _out_dir(args)
    with _locked_outdir(out):
        tmp = os.path.join(out, "trajectory.csv.tmp")
        write_trajectory_csv(matrix, tmp, deltas=args.deltas)
        os.replace(tmp, os.path.join(out, "trajectory.csv"))
    print(f"wrote {matrix.n_steps} steps x {len(matrix.tracked_kcs)} KCs -> {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import write_interactions_csv
    from .eval import default_world, save_world, synth_generate

    world = default_world(n_kcs=args.kcs, seed=args.seed if args.seed is not None else 0)
    ds = synth_generate(
        world, args.students, args.steps, seed=args.seed if args.seed is not None else 0
    )
    out = _out_dir(args)
    with _locked_outdir(out):
        write_interactions_csv(ds, os.path.join(out, "dataset.csv"))
        save_world(world, os.path.join(out, "world.json"))
    print(f"generated {ds.n_learners} students x {args.steps} steps -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file; flags override it")
    common.add_argument("--seed", type=int, default=None, help="global seed override")
    common.add_argument("--out", help="output directory (default: $KTLAB_OUT/ktlab-out)")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread cap")

    parser = argparse.ArgumentParser(
        prog="ktlab",
        description="Knowledge-tracing laboratory: text-formatted histories, a tiny causal LM, classical tracers, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("ingest", help="load a CSV, filter/truncate, write canonical dataset + stats")
    p.add_argument("--csv", required=True)
    p.add_argument("--min-interactions", type=int, default=6)
    p.add_argument("--max-interactions", type=int, default=50)
    p.add_argument("--no-filter", action="store_true")
    for col in ("student_id", "step", "exercise_id", "kc_id", "kc_name", "correct"):
        p.add_argument(f"--col-{col.replace('_', '-')}", dest=f"col_{col}")
    p.set_defaults(func=cmd_ingest)

    p = add_parser("stats", help="print dataset statistics as JSON")
    p.add_argument("--csv", required=True)
    for col in ("student_id", "step", "exercise_id", "kc_id", "kc_name", "correct"):
        p.add_argument(f"--col-{col.replace('_', '-')}", dest=f"col_{col}")
    p.set_defaults(func=cmd_stats)

    p = add_parser("format", help="render a canonical dataset to KTLP JSONL")
    p.add_argument("--csv", required=True)
    p.add_argument("--mode", choices=("description", "id"), default="description")
    p.set_defaults(func=cmd_format)

    p = add_parser("train-lm", help="train the tiny causal LM on KTLP JSONL")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="existing vocab JSON (default: build from data)")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_lm)

    p = add_parser("finetune-lora", help="adapter-tune a frozen checkpoint")
    p.add_argument("--base", required=True, help="base model checkpoint (.npz)")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--alpha", type=float, default=16.0)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_finetune_lora)

    p = add_parser("train-baseline", help="fit a classical tracer")
    p.add_argument("--model", choices=("bkt", "irt", "pfa", "dkt"), required=True)
    p.add_argument("--csv", required=True)
    p.set_defaults(func=cmd_train_baseline)

    p = add_parser("evaluate", help="score a trained model on a held-out split")
    p.add_argument("--model", choices=("bkt", "irt", "pfa", "dkt", "lm"), required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--params", help="fitted parameter file (bkt/irt/pfa/dkt)")
    p.add_argument("--checkpoint", help="LM checkpoint (.npz)")
    p.add_argument("--vocab", help="LM vocab JSON")
    p.add_argument("--mode", choices=("description", "id"), default="description")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--no-split", action="store_true", help="score the whole file")
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("coldstart", help="run the cold-start grid")
    p.add_argument("--csv", required=True)
    p.add_argument("--models", default="lm,bkt")
    p.add_argument("--sizes", default="8,16,32,64")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--mode", choices=("description", "id"), default="description")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_coldstart)

    p = add_parser("crossdomain", help="tune on a source domain, evaluate on a target domain")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mode", choices=("description", "id"), default="description")
    p.add_argument("--n-students", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_crossdomain)

    p = add_parser("calibrate", help="reliability bins + ECE from an evaluation records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_calibrate)

    p = add_parser("trajectory", help="per-KC mastery trajectory for one student")
    p.add_argument("--model", choices=("bkt", "irt", "pfa", "dkt", "lm"), required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--kcs", help="comma-separated KC ids (default: all)")
    p.add_argument("--params")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--mode", choices=("description", "id"), default="description")
    p.add_argument("--deltas", action="store_true", help="write per-step deltas instead of levels")
    p.set_defaults(func=cmd_trajectory)

    p = add_parser("synth", help="generate a synthetic dataset with known dynamics")
    p.add_argument("--students", type=int, default=1000)
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--kcs", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    from .errors import KtlabInputError, KtlabRuntimeError

    try:
        return args.func(args)
    except KtlabInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KtlabRuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return EXIT_INPUT
        raise


if __name__ == "__main__":
    sys.exit(main())
