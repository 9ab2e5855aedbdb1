"""Command-line entry point: ``relgraph3d {gen-data,train,eval,ablate,verify}``.

Every command accepts ``--config FILE``, ``--seed N``, ``--out PATH`` and any
number of ``--set key=value`` overrides (applied after the file).  Exit codes:
0 success, 1 runtime failure, 2 configuration error.

File formats
------------
config
    One ``key = value`` per line, ``#`` comments.  Keys are the
    :class:`~relgraph3d.config.RunConfig` fields; unknown keys are errors.
dataset (``gen-data``)
    JSON lines.  Line 1 is a header ``{"schema": "relgraph3d-synthscene",
    "version": 1, "n_scenes", "master_seed", "generator", "train_ids",
    "test_ids"}``; every following line is one scene.
checkpoint (``train``)
    One JSON document ``{"format": "relgraph3d-params", "version": 1,
    "meta", "params", "adam"}``.  ``params`` and the Adam moments are lists of
    ``{"name", "shape", "values"}`` records with values flattened in C order;
    ``meta`` holds the config text, its hash, the last epoch and the loss
    history.
loss log
    CSV with columns ``epoch, individual, direct, holistic, corner, physical,
    total, n_clamped``; one row per epoch.
metric report (``eval``)
    ``# key: value`` header lines (config hash, seed), tab-separated metric
    lines, then ``summary {json}`` with the full machine-readable record.
scene graphs (``eval --graphs``)
    Per scene a line ``scene <id>`` followed by ``graph <n_nodes> <n_edges>``
    and one ``edge <source> <target> <rbar>`` line per kept edge.
ablation table (``ablate``)
    Tab-separated, one row per configuration, plus ``ablation.json`` with the
    per-configuration summaries.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ABLATIONS, ConfigError, RunConfig, load_config, parse_pairs

log = logging.getLogger("relgraph3d")


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--out", help=out_help)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relgraph3d", description="Relation-graph 3D box estimation on synthetic rooms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    _common(p, "dataset file (default scenes.jsonl)")

    p = sub.add_parser("train", help="train a model")
    _common(p, "checkpoint file (default model.ckpt.json)")
    p.add_argument("--data", help="dataset file (default: config data_path, else generated)")
    p.add_argument("--log", help="loss log CSV (default <out>.loss.csv)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--epochs", type=int, help="epochs to run in this call")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out scenes")
    _common(p, "report file (default: stdout)")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--oracle", action="store_true", help="score ground-truth parameters instead of a model")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--graphs", help="write the predicted scene graphs here")

    p = sub.add_parser("ablate", help="train and compare the C0/C1/C2/Full configurations")
    _common(p, "output directory (default ablation/)")
    p.add_argument("--data", help="dataset file")
    p.add_argument("--only", nargs="+", choices=sorted(ABLATIONS), help="subset of configurations")

    p = sub.add_parser("verify", help="run the oracle suites")
    _common(p, "report file (default: stdout only)")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    return parser


def resolve_config(args, seed_field: str = "seed") -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides.update(parse_pairs([item]))
    if args.seed is not None:
        overrides[seed_field] = args.seed
    return load_config(args.config, overrides)


def load_data(cfg: RunConfig, path=None):
    from .synthscene import GeneratorConfig, generate_dataset, load_dataset

    path = path or cfg.data_path
    if path:
        return load_dataset(path)
    log.info("generating %d scenes (data_seed %d)", cfg.n_scenes, cfg.data_seed)
    return generate_dataset(GeneratorConfig(), cfg.n_scenes, cfg.data_seed)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def cmd_gen_data(args) -> int:
    from .synthscene import CLASS_NAMES, GeneratorConfig, class_histogram, generate_dataset

    cfg = resolve_config(args, "data_seed")
    out = args.out or "scenes.jsonl"
    ds = generate_dataset(GeneratorConfig(), cfg.n_scenes, cfg.data_seed, out)
    n_obj = sum(len(s.objects) for s in ds.scenes)
    print(f"wrote {out}: {len(ds.scenes)} scenes ({len(ds.train_ids)} train / {len(ds.test_ids)} test), {n_obj} objects")
    for name, frac in zip(CLASS_NAMES, class_histogram(ds)):
        print(f"  {name:<12}{frac:.3f}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import train

    cfg = resolve_config(args)
    ds = load_data(cfg, args.data)
    out = args.out or "model.ckpt.json"
    log_path = args.log or f"{out}.loss.csv"
    res = train(cfg, ds, checkpoint=out, log_path=log_path, resume=args.resume, epochs=args.epochs)
    last = res.history[-1] if res.history else None
    msg = f"wrote {out} (epoch {res.last_epoch}, config {cfg.config_hash()})"
    if last is not None:
        msg += f", final total loss {last[6]:.6f}"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    from .pipeline import RelationalDetector, evaluate, report_text

    cfg = resolve_config(args)
    model = None
    if not args.oracle:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        model, _ = RelationalDetector.load(args.checkpoint)
        # the run seed and data settings may still be overridden from the command line
        cfg = load_config(args.config, _explicit(args), base=model.cfg)
    ds = load_data(cfg, args.data)
    summary = evaluate(model, ds.test, cfg, {"predictor": "oracle" if model is None else "model"})
    _emit(report_text(summary), args.out)
    if args.graphs:
        if model is None:
            raise ConfigError("--graphs needs a model checkpoint")
        lines = []
        for p in model.predict(ds.test):
            lines.append(f"scene {p.scene_id}\n" + p.graph.to_text())
        Path(args.graphs).write_text("".join(lines))
    return 0


def _explicit(args) -> dict:
    pairs = {}
    for item in args.set:
        pairs.update(parse_pairs([item]))
    if args.seed is not None:
        pairs["seed"] = args.seed
    return pairs


def cmd_ablate(args) -> int:
    from .pipeline import run_ablation

    cfg = resolve_config(args)
    ds = load_data(cfg, args.data)
    out = Path(args.out or "ablation")
    out.mkdir(parents=True, exist_ok=True)
    names = args.only or list(ABLATIONS)
    checkpoints = {n: out / f"{n}.ckpt.json" for n in names}
    table, summaries = run_ablation(cfg, ds, names, checkpoints, train_missing=True, out_dir=out)
    (out / "ablation.tsv").write_text(table)
    (out / "ablation.json").write_text(json.dumps(summaries, sort_keys=True, indent=1) + "\n")
    sys.stdout.write(table)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    cfg = resolve_config(args)
    results = run_checks(args.level, cfg.seed)
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if n_fail == 0 else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
