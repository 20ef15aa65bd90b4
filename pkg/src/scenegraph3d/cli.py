"""``ssg`` command line: gen, pretrain, train, predict, eval, analyze, ablate.

Exit codes: 0 success, 1 validation error (bad flag, config or input
content), 2 I/O error.  Every command writes ``manifest.json`` next to its
outputs holding the command, the resolved config, the seed and git-style
blob hashes of every input file.

Heavy modules are imported inside each command so that ``eval`` only ever
touches the metric code.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("ssg")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")
DATASET_META = "dataset.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers ---------------------------------------------------------------------
def blob_sha1(path) -> str:
    """Hash of a file as git stores it (``blob <size>\\0`` + content)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hashes(paths) -> dict:
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file() and not f.name.endswith("manifest.json")) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = blob_sha1(f)
    return out


def write_manifest(target, command: str, argv, config: dict | None, seed, inputs) -> Path:
    """``<dir>/manifest.json`` for a directory output, ``<file>.manifest.json`` for a single file."""
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "argv": list(argv), "config": config, "seed": seed, "inputs": input_hashes(inputs)}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_ks(text: str) -> tuple:
    try:
        ks = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive integers")
    return ks


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required flag(s) {', '.join(missing)}")


def load_data(directory):
    from .scene import load_scenes

    directory = Path(directory)
    meta = json.loads((directory / DATASET_META).read_text())
    return load_scenes(directory / "train.jsonl"), load_scenes(directory / "val.jsonl"), meta


def train_config(args, **overrides):
    from .trainer import TrainConfig

    values = {}
    if args.config is not None:
        from .trainer import parse_config_text

        values = parse_config_text(Path(args.config).read_text())
    if args.seed is not None:
        values["seed"] = args.seed
    values.update(overrides)
    return TrainConfig.from_dict(values)


# -- commands --------------------------------------------------------------------
def cmd_gen(args, argv):
    from .scene import SyntheticConfig, generate_dataset, save_scenes

    _require(args, "out")
    values = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    cfg = SyntheticConfig.from_dict(values)
    train, val = generate_dataset(cfg)
    out = Path(args.out)
    save_scenes(out / "train.jsonl", train)
    save_scenes(out / "val.jsonl", val)
    meta = {"n_obj": cfg.n_obj, "n_pred": cfg.n_pred, "predicates": [r.name for r in cfg.rules], "synthetic": cfg.to_dict()}
    (out / DATASET_META).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    write_manifest(out, "gen", argv, cfg.to_dict(), cfg.seed, [args.config])
    print(f"wrote {len(train)} train / {len(val)} val scenes to {out}")


def cmd_pretrain(args, argv):
    from .trainer import run_pretraining, save_encoder

    _require(args, "data", "out")
    train, val, meta = load_data(args.data)
    cfg = train_config(args)
    res = run_pretraining(train, val, cfg, n_obj=meta["n_obj"])
    out = Path(args.out)
    save_encoder(out / "encoder.json", res.store, cfg, meta["n_obj"], {"best_epoch": res.best_epoch})
    (out / "history.json").write_text(json.dumps(res.history, indent=1) + "\n")
    write_manifest(out, "pretrain", argv, cfg.to_dict(), cfg.seed, [args.data, args.config])
    print(f"best epoch {res.best_epoch}; encoder written to {out / 'encoder.json'}")


def cmd_train(args, argv):
    from .trainer import load_encoder, run_sg_training, save_model

    _require(args, "data", "out")
    train, val, meta = load_data(args.data)
    cfg = train_config(args)
    enc = None
    if cfg.ofl:
        if args.ckpt is None:
            raise UsageError("train: --ckpt (pretrained encoder) is required unless ofl = false")
        enc, _ = load_encoder(args.ckpt)
    res = run_sg_training(train, val, cfg, enc, n_obj=meta["n_obj"], n_pred=meta["n_pred"])
    out = Path(args.out)
    save_model(out / "model.json", res.store, cfg, res.n_obj, res.n_pred, {"best_epoch": res.best_epoch})
    (out / "history.json").write_text(json.dumps(res.history, indent=1) + "\n")
    write_manifest(out, "train", argv, cfg.to_dict(), cfg.seed, [args.data, args.config, args.ckpt])
    print(f"best epoch {res.best_epoch}; model written to {out / 'model.json'}")


def cmd_predict(args, argv):
    from .evaluation import save_dump
    from .trainer import load_model, predict

    _require(args, "data", "ckpt")
    if args.dump is None and args.out is None:
        raise UsageError("predict: give --dump PATH or --out DIR")
    train, val, _ = load_data(args.data)
    store, cfg, _, n_pred = load_model(args.ckpt)
    scenes = {"train": train, "val": val}[args.split]
    dump_path = Path(args.dump) if args.dump else Path(args.out) / f"{args.split}_dump.jsonl"
    save_dump(dump_path, predict(scenes, store, cfg, n_pred))
    write_manifest(dump_path, "predict", argv, cfg.to_dict(), cfg.seed, [args.data, args.ckpt])
    print(f"wrote {len(scenes)} scene predictions to {dump_path}")


def cmd_eval(args, argv):
    from .evaluation import build_report, load_dump, predicate_frequencies, save_report, triplet_vocabulary

    _require(args, "dump", "report")
    dumps = load_dump(args.dump)
    freqs = vocab = None
    if args.data is not None:
        from .scene import load_scenes

        train = load_scenes(Path(args.data) / "train.jsonl")
        freqs = predicate_frequencies(train, dumps[0].n_pred if dumps else 0)
        vocab = triplet_vocabulary(train)
    rows = build_report(dumps, ks=args.k, graph_constraint=args.graph_constraint, predicate_freqs=freqs, train_triplets=vocab)
    csv_path, _ = save_report(args.report, rows)
    config = {"k": list(args.k) if args.k else None, "graph_constraint": args.graph_constraint}
    write_manifest(csv_path, "eval", argv, config, None, [args.dump, args.data])
    print(f"wrote {len(rows)} metric rows to {csv_path}")


def cmd_analyze(args, argv):
    import numpy as np

    from .evaluation import (
        GenerativeWorld,
        class_separation,
        embedding_diagnostics,
        entropy_error_histogram,
        error_category_table,
        load_dump,
        mixture,
        sharpen,
    )
    from .evaluation.diagnostics import entropy

    _require(args, "out")
    if args.dump is None and args.ckpt is None:
        raise UsageError("analyze: give --dump PATH and/or --ckpt ENCODER with --data DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    summary = {}
    if args.dump is not None:
        dumps = load_dump(args.dump)
        hist = entropy_error_histogram(dumps, n_bins=args.bins)
        with open(out / "entropy_histogram.csv", "w") as fh:
            fh.write("bin,lo,hi,count,error_rate\n")
            for r in hist.rows():
                fh.write(f"{r['bin']},{r['lo']!r},{r['hi']!r},{r['count']},{'' if np.isnan(r['error_rate']) else repr(r['error_rate'])}\n")
        summary["entropy_retained"] = hist.retained
        summary["error_table"] = error_category_table(dumps)

    world = GenerativeWorld.random(seed)
    pi, pj = world.posterior(0), world.posterior(1)
    sweep = [float(entropy(mixture(world.table, sharpen(pi, g), sharpen(pj, g)))) for g in (1, 2, 4, 8)]
    summary["factorization"] = {"seed": seed, "max_deviation": world.max_deviation(), "sharpening_entropy": sweep}

    if args.ckpt is not None:
        _require(args, "data")
        from . import encoder as E
        from .evaluation import write_cosine_csv
        from .trainer import TrainConfig, encode_points, init_encoder_store, load_encoder

        enc, meta = load_encoder(args.ckpt)
        cfg = TrainConfig.from_dict(meta["config"])
        store = init_encoder_store(cfg)
        store.load_state_dict(enc)
        train, val, _ = load_data(args.data)
        insts = [inst for s in train for inst in s.instances]
        pts = np.stack([E.prepare_points(inst.points, cfg.n_points, seed=[cfg.seed, 6, k], augment=False) for k, inst in enumerate(insts)])
        emb = encode_points(pts, store)
        classes, matrix = embedding_diagnostics(emb, [inst.label for inst in insts])
        write_cosine_csv(out / "class_cosine.csv", classes, matrix)
        np.savetxt(out / "embeddings.csv", np.column_stack([[i.label for i in insts], emb]), delimiter=",", fmt="%.9g")
        intra, inter = class_separation(matrix)
        summary["embedding"] = {"intra": intra, "inter": inter}

    (out / "analysis.json").write_text(json.dumps(summary, indent=1, sort_keys=True, default=float) + "\n")
    write_manifest(out, "analyze", argv, {"bins": args.bins}, seed, [args.dump, args.ckpt, args.data])
    print(f"wrote analysis to {out}")


def cmd_ablate(args, argv):
    import csv
    import itertools

    from .evaluation.metrics import triplet_counts
    from .trainer import ABLATION_FLAGS, load_encoder, predict, run_pretraining, run_sg_training

    _require(args, "data", "out", "flags")
    flags = [f.strip() for f in args.flags.split(",") if f.strip()]
    bad = [f for f in flags if f not in ABLATION_FLAGS]
    if bad or not flags or len(set(flags)) != len(flags):
        raise UsageError(f"ablate: --flags must be distinct names from {','.join(ABLATION_FLAGS)}")
    ks = args.k or (50, 100)
    train, val, meta = load_data(args.data)
    base = train_config(args)
    enc = None
    if "ofl" in flags or base.ofl:
        enc = load_encoder(args.ckpt)[0] if args.ckpt else run_pretraining(train, val, base, n_obj=meta["n_obj"]).store.state_dict()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for values in itertools.product((True, False), repeat=len(flags)):
        cfg = base.replace(**dict(zip(flags, values)))
        res = run_sg_training(train, val, cfg, enc if cfg.ofl else None, n_obj=meta["n_obj"], n_pred=meta["n_pred"])
        dumps = predict(val, res.store, cfg, meta["n_pred"])
        row = {f: int(v) for f, v in zip(flags, values)}
        for k in ks:
            c = triplet_counts(dumps, k, graph_constraint=bool(args.graph_constraint))
            row[f"triplet_R@{k}"] = c.recall
            row[f"triplet_mR@{k}"] = c.mean_recall
        rows.append(row)
        log.info("ablation %s -> %s", row, res.best_epoch)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: ("" if v is None else v) for k, v in r.items()} for r in rows)
    write_manifest(out, "ablate", argv, base.to_dict(), base.seed, [args.data, args.config, args.ckpt])
    print(f"wrote {len(rows)} configurations to {out / 'ablation.csv'}")


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic dataset"),
    "pretrain": (cmd_pretrain, "contrastive object-encoder pretraining"),
    "train": (cmd_train, "scene-graph training"),
    "predict": (cmd_predict, "write a prediction dump"),
    "eval": (cmd_eval, "metrics report from a dump"),
    "analyze": (cmd_analyze, "entropy/error diagnostics, factorization check, embedding table"),
    "ablate": (cmd_ablate, "train every on/off combination of the given switches"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssg", description="3D semantic scene-graph toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--data", metavar="DIR")
        p.add_argument("--ckpt", metavar="PATH")
        p.add_argument("--dump", metavar="PATH")
        p.add_argument("--report", metavar="PATH")
        p.add_argument("--flags", metavar="CSV")
        p.add_argument("--k", metavar="CSV", type=parse_ks)
        p.add_argument("--graph-constraint", metavar="BOOL", type=parse_bool)
        if name == "predict":
            p.add_argument("--split", choices=("train", "val"), default="val")
        if name == "analyze":
            p.add_argument("--bins", type=int, default=10)
    return parser


def _cap_threads() -> None:
    cap = os.environ.get("SSG_THREADS")
    if cap:
        if not cap.isdigit() or int(cap) < 1:
            raise UsageError(f"SSG_THREADS must be a positive integer, got {cap!r}")
        for var in THREAD_VARS:
            os.environ[var] = cap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip())
        _cap_threads()
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command][0](args, argv)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ssg: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        # config, parse and validation errors all derive from ValueError
        print(f"ssg: invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
