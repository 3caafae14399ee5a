"""``zs3`` command line: synth, train-generator, finetune, eval, selftrain, baseline, cv.

Every command writes ``config_echo.ini`` next to its outputs; passing that
file back through ``--config`` reruns the command with identical results.
"""
import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

from zs3.classifier import load_classifier, save_classifier
from zs3.config import config_dict, load_config, write_config_echo
from zs3.embeddings import (ClassCatalog, ClassEmbeddingTable, fixture_catalog, fixture_path,
                            load_embeddings, parse_embedding_file)
from zs3.errors import ConfigError, DataError, FormatError, UnknownClassError
from zs3.gmmn import load_generator, save_generator
from zs3.pipeline import (Zs3Result, evaluate_classifier, finetune_stage, run_baseline, run_zs5,
                          train_zs3_generator, zero_shot_cross_validate, pipeline_streams)
from zs3.report import emit_report, render_text
from zs3.scene_data import (SplitConfig, ZslData, build_world, load_dataset, make_split, save_dataset,
                            synthesize)

SPLIT_FILE = "split.json"
ECHO_FILE = "config_echo.ini"


def load_embedding_table(cfg):
    """The fixture table, or a word2vec-style file whose first class is background."""
    if cfg.run.embeddings == "fixture":
        table = load_embeddings(fixture_path(), fixture_catalog())
    else:
        records = parse_embedding_file(cfg.run.embeddings)
        catalog = ClassCatalog(tuple(records), background=0)
        table = ClassEmbeddingTable(catalog, list(records.values()))
    return table.normalize() if cfg.run.normalize_embeddings else table


def save_data_dir(data, catalog, out):
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "test", "pool"):
        save_dataset(getattr(data, name), out / f"{name}.zs3d")
    split = data.split
    meta = {"k": split.k, "unseen": list(split.unseen), "seed": split.seed,
            "n_classes": split.n_classes, "class_names": list(catalog.names)}
    (out / SPLIT_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_data_dir(path):
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    meta_path = path / SPLIT_FILE
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing split description: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    split = SplitConfig(k=meta["k"], unseen=tuple(meta["unseen"]), seed=meta["seed"],
                        n_classes=meta["n_classes"])
    parts = {}
    for name in ("train", "test", "pool"):
        f = path / f"{name}.zs3d"
        if not f.is_file():
            raise FileNotFoundError(f"missing dataset file: {f}")
        parts[name] = load_dataset(f)
    return ZslData(parts["train"], parts["test"], parts["pool"], split), meta["class_names"]


def _check_names(table, names):
    if list(table.catalog.names) != list(names):
        raise ConfigError("embedding classes do not match the dataset's class list")


def _prepare(args):
    """Config with command-line overrides applied; the echo is written before any work."""
    cfg = load_config(args.config, seed=args.seed)
    if args.embeddings is not None:
        cfg.run.embeddings = str(Path(args.embeddings).resolve())
    if getattr(args, "graph_context", False):
        cfg.pipeline.graph_context = True
    if getattr(args, "p", None) is not None:
        cfg.pipeline.p = args.p
    cfg.validate()
    out = Path(args.out)
    if out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_config_echo(cfg, Path(str(out) + ".config.ini"))
    else:
        out.mkdir(parents=True, exist_ok=True)
        write_config_echo(cfg, out / ECHO_FILE)
    return cfg, out


def _seeds(cfg):
    return {"seed": cfg.run.seed, "split_seed": cfg.split_seed}


def _write_reports(report, prefix, cfg, title):
    emit_report(report, Path(f"{prefix}.txt"), "text", title)
    emit_report(report, Path(f"{prefix}.json"), "json", title, config_dict(cfg), _seeds(cfg))


def _load_all(args, cfg):
    data, names = load_data_dir(args.data)
    table = load_embedding_table(cfg)
    _check_names(table, names)
    return data, table, names


def cmd_synth(args):
    cfg, out = _prepare(args)
    table = load_embedding_table(cfg)
    world = build_world(table, cfg.world, cfg.run.seed)
    split = make_split(table.catalog, cfg.run.k, cfg.split_seed)
    data = synthesize(world, table, split, cfg.run.n_train, cfg.run.n_test, cfg.run.n_pool, cfg.run.seed)
    save_data_dir(data, table.catalog, out)
    print(f"wrote {cfg.run.n_train}/{cfg.run.n_test}/{cfg.run.n_pool} scenes to {out}; unseen = {list(split.unseen)}")
    return 0


def cmd_train_generator(args):
    cfg, out = _prepare(args)
    data, table, _ = _load_all(args, cfg)
    pcfg = cfg.to_pipeline()
    pcfg.validate()
    gen, trace = train_zs3_generator(pcfg, data, table, pipeline_streams(pcfg.seed)["generator"])
    save_generator(gen, out)
    Path(str(out) + ".trace.txt").write_text("".join(f"{v!r}\n" for v in trace), encoding="utf-8")
    print(f"generator ({'graph' if gen.kind else 'mlp'}) saved to {out}; final loss {trace[-1] if trace else float('nan'):.6g}")
    return 0


def cmd_finetune(args):
    cfg, out = _prepare(args)
    data, table, _ = _load_all(args, cfg)
    gen = None if args.generator is None else load_generator(args.generator)
    if gen is None and data.split.unseen and not args.seen_only:
        raise ConfigError("--generator is required unless --seen-only is given")
    clf, _, _, trace = finetune_stage(cfg.to_pipeline(), data, table, gen, args.seen_only)
    save_classifier(clf, out)
    Path(str(out) + ".trace.txt").write_text("".join(f"{v!r}\n" for v in trace), encoding="utf-8")
    print(f"classifier saved to {out}")
    return 0


def cmd_eval(args):
    cfg, out = _prepare(args)
    data, names = load_data_dir(args.data)
    clf = load_classifier(args.classifier)
    if args.mode == "vanilla" and not data.split.unseen:
        raise ConfigError("vanilla evaluation needs unseen classes")
    report = evaluate_classifier(clf, data.test, data.split, names, args.mode)
    _write_reports(report, out / f"report_{args.mode}", cfg, args.title)
    print(render_text(report, args.title), end="")
    return 0


def cmd_selftrain(args):
    cfg, out = _prepare(args)
    data, table, names = _load_all(args, cfg)
    gen = load_generator(args.generator)
    pcfg = cfg.to_pipeline()
    clf, seen_set, synth, trace = finetune_stage(pcfg, data, table, gen)
    report = evaluate_classifier(clf, data.test, data.split, names)
    zs3 = Zs3Result(clf, gen, report, seen_set, synth, [], trace)
    _write_reports(report, out / "zs3", cfg, "ZS3")
    if args.sweep:
        ps = [round(0.1 * i, 1) for i in range(1, 11)]
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "seen_miou", "unseen_miou", "overall_miou", "hiou"])
            for p in ps:
                pcfg.p = p
                _, rep, _ = run_zs5(pcfg, data, table, zs3, names)
                _write_reports(rep, out / f"zs5_p{p:.1f}", cfg, f"ZS5 p={p:.1f}")
                g = rep.groups
                w.writerow([f"{p:.1f}", repr(g["seen"].miou), repr(g["unseen"].miou),
                            repr(g["overall"].miou), repr(rep.hiou)])
        print(f"sweep written to {out / 'sweep.csv'}")
        return 0
    _, rep, sets = run_zs5(pcfg, data, table, zs3, names)
    _write_reports(rep, out / "zs5", cfg, "ZS5")
    n = len(sets[-1]) if sets else 0
    print(render_text([("ZS3", report), (f"ZS5 p={pcfg.p:g}", rep)]), end="")
    print(f"pseudo-labelled pixels: {n}")
    return 0


def cmd_baseline(args):
    cfg, out = _prepare(args)
    data, table, names = _load_all(args, cfg)
    _, report = run_baseline(cfg.to_pipeline(), data, table, names)
    _write_reports(report, out / "baseline", cfg, "Baseline")
    print(render_text(report, "Baseline"), end="")
    return 0


def cmd_cv(args):
    cfg, out = _prepare(args)
    data, table, _ = _load_all(args, cfg)
    grid_path = Path(args.grid)
    if not grid_path.is_file():
        raise FileNotFoundError(f"grid file not found: {grid_path}")
    try:
        grid = json.loads(grid_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{grid_path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(grid, list) or not all(isinstance(p, dict) for p in grid):
        raise ConfigError(f"{grid_path}: expected a JSON list of objects")
    best, rows = zero_shot_cross_validate(cfg.to_pipeline(), data, table, grid)
    with open(out / "cv.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "seen_miou", "unseen_miou", "hiou"])
        for point, hiou, rep in rows:
            w.writerow([json.dumps(point, sort_keys=True), repr(rep.groups["seen"].miou),
                        repr(rep.groups["unseen"].miou), repr(hiou)])
    (out / "best.json").write_text(json.dumps(best, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"best point: {json.dumps(best, sort_keys=True)}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON run configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, help="root seed; overrides the config and ZS3_SEED")
    common.add_argument("--embeddings", help="class embedding file; overrides [run] embeddings")

    parser = argparse.ArgumentParser(prog="zs3", description="Zero-shot semantic segmentation on synthetic scenes")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="render a synthetic world and its datasets")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-generator", parents=[common], help="train the feature generator on seen pixels")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--graph-context", action="store_true", help="use the graph-convolution generator")
    p.set_defaults(func=cmd_train_generator)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune the classifier on real + generated features")
    p.add_argument("--data", required=True)
    p.add_argument("--generator", help="generator checkpoint")
    p.add_argument("--seen-only", action="store_true", help="ablation without generated features")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="evaluate a classifier on the test scenes")
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--mode", choices=("generalized", "vanilla"), default="generalized")
    p.add_argument("--title", default="ZS3")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftrain", parents=[common], help="one round of pseudo-label self-training")
    p.add_argument("--data", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--p", type=float, help="fraction of unseen-predicted pixels kept per scene")
    p.add_argument("--sweep", action="store_true", help="run p = 0.1 ... 1.0 and write sweep.csv")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("baseline", parents=[common], help="embedding-regression baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("cv", parents=[common], help="zero-shot cross-validation over a grid")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="JSON list of override objects")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"zs3: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError, DataError, UnknownClassError, ValueError) as exc:
        print(f"zs3: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
