"""Command-line surface: generate data, train, encode, retrieve, evaluate.

Commands compose through files only. Exit codes: 0 success, 1 runtime
failure (including a failing gradient report), 2 invalid configuration or
flags, 3 unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .config import apply_overrides, describe, load_run_config
from .data import CorpusConfig, build_corpus, load_corpus, save_corpus
from .errors import ArchiveError, ConfigError, DimensionError, ShapegraphError
from .gradcheck import main_report
from .metrics import (
    RetrievalRun,
    compute_metrics,
    cosine_similarities,
    distance_histograms,
    metrics_to_json,
    rank_gallery,
    render_metric_table,
    write_histogram_csv,
)
from .train import (
    ModelState,
    build_model,
    embed_shapes,
    embed_sketches,
    load_model,
    save_model,
    train,
    train_stage1,
    train_stage2,
    training_bank,
)
from .viewgraph import build_camera_rig, load_rig


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_data(args) -> int:
    cfg = CorpusConfig(
        classes=args.classes,
        shapes_per_class=args.per_class,
        sketches_per_class=args.sketches_per_class,
        views=args.views,
        feature_dim=args.feature_dim,
        sketch_dim=args.sketch_dim,
        proto_dim=args.proto_dim,
        noise=args.noise,
        mode=args.mode,
        unseen=args.unseen,
        unseen_names=tuple(s for s in (args.unseen_names or "").split(",") if s),
        seed=args.seed,
    )
    ds = build_corpus(cfg)
    save_corpus(ds, args.out)
    print(f"wrote {len(ds.shapes)} shapes, {len(ds.sketches)} sketches, "
          f"{len(ds.classes)} classes to {args.out}")
    if ds.splits.unseen_classes:
        print(f"held-out classes: {', '.join(ds.splits.unseen_classes)}")
    return 0


def _resolved_config(args):
    cfg = load_run_config(args.config)
    overrides = list(args.set or [])
    if getattr(args, "data", None):
        overrides.append(f"data.dir={args.data}")
    if getattr(args, "out", None):
        overrides.append(f"out.dir={args.out}")
    if getattr(args, "mode", None):
        overrides.append(f"train.mode={args.mode}")
    if getattr(args, "strategy", None):
        overrides.append(f"train.strategy={args.strategy}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    return apply_overrides(cfg, overrides)


def _write_train_outputs(out_dir: Path, model: ModelState, log, run_cfg) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "model.mvhf", model)
    with open(out_dir / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    _write_json(out_dir / "config_used.json", describe(run_cfg))


def cmd_train(args) -> int:
    run_cfg = _resolved_config(args)
    ds = load_corpus(run_cfg.data_dir)
    out_dir = Path(run_cfg.out_dir)
    t0 = time.perf_counter()
    if args.stage is None:
        model, log = train(ds, run_cfg.spec, run_cfg.train)
    elif run_cfg.train.strategy != "two_stage":
        raise ConfigError("--stage only applies to the two_stage strategy")
    elif args.stage == 1:
        model = build_model(ds, run_cfg.spec, run_cfg.train)
        log = train_stage1(ds, model, run_cfg.train, training_bank(ds))
    else:
        ckpt = args.ckpt or out_dir / "model_stage1.mvhf"
        model = load_model(ckpt)
        log = train_stage2(ds, model, run_cfg.train, training_bank(ds))
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.stage == 1 or (args.stage is None and run_cfg.train.strategy == "two_stage"):
        save_model(out_dir / "model_stage1.mvhf", model)
    _write_train_outputs(out_dir, model, log, run_cfg)
    last = log[-1] if log else {}
    losses = {k: round(v, 4) for k, v in last.items() if k not in ("stage", "epoch", "lr")}
    print(f"trained {run_cfg.train.mode}/{run_cfg.train.strategy} in "
          f"{time.perf_counter() - t0:.1f}s; final losses {losses}")
    print(f"checkpoint: {out_dir / 'model.mvhf'}")
    return 0


def _detect_kind(model: ModelState, shape: tuple[int, ...]) -> str | None:
    cfg = model.encoder_config
    views = cfg.schedule[0]
    as_shape = shape == (views, cfg.feature_dim)
    as_sketch = shape == (1, model.sketch_dim)
    if as_shape and as_sketch:
        return None
    if as_shape:
        return "shapes"
    if as_sketch:
        return "sketches"
    return "unknown"


def cmd_encode(args) -> int:
    model = load_model(args.ckpt)
    arc = read_archive(args.infile)
    if not arc.tensors:
        raise ArchiveError(f"{args.infile}: no tensors to encode")
    cfg = model.encoder_config
    views = cfg.schedule[0]
    rig = load_rig(args.rig) if args.rig else build_camera_rig(views)
    if rig.count != views:
        raise ConfigError(f"rig has {rig.count} cameras, model expects {views}")

    kind = args.kind
    first = next(iter(arc.tensors.values()))
    if kind == "auto":
        kind = _detect_kind(model, first.shape)
        if kind is None:
            raise ConfigError(
                "cannot tell shapes from sketches here; pass --kind explicitly")
        if kind == "unknown":
            raise ArchiveError(
                f"{args.infile}: item shape {first.shape} matches neither "
                f"({views}, {cfg.feature_dim}) views nor (1, {model.sketch_dim}) sketches")

    out_tensors: dict[str, np.ndarray] = {}
    if kind == "shapes":
        from .data import Dataset, ShapeItem, Splits
        items = []
        for name, t in arc.tensors.items():
            if t.shape != (views, cfg.feature_dim):
                raise ArchiveError(f"{args.infile}: {name!r} has shape {t.shape}, "
                                   f"expected ({views}, {cfg.feature_dim})")
            items.append(ShapeItem(name, arc.labels[name], t))
        ds = Dataset(shapes=items, sketches=[], classes=sorted({i.label for i in items}),
                     prototypes=np.eye(2, model.proto_dim), rig=rig, mode="category",
                     splits=Splits(), seed=0)
        emb = embed_shapes(model, ds, range(len(items)))
        for row, item in enumerate(items):
            out_tensors[item.item_id] = emb[row:row + 1]
    else:
        from .data import Dataset, SketchItem, Splits
        items = []
        for name, t in arc.tensors.items():
            if t.shape != (1, model.sketch_dim):
                raise ArchiveError(f"{args.infile}: {name!r} has shape {t.shape}, "
                                   f"expected (1, {model.sketch_dim})")
            items.append(SketchItem(name, arc.labels[name], t))
        ds = Dataset(shapes=[], sketches=items, classes=sorted({i.label for i in items}),
                     prototypes=np.eye(2, model.proto_dim), rig=rig, mode="category",
                     splits=Splits(), seed=0)
        emb = embed_sketches(model, ds, range(len(items)))
        for row, item in enumerate(items):
            out_tensors[item.item_id] = emb[row:row + 1]

    write_archive(args.out, out_tensors, dict(arc.labels))
    print(f"encoded {len(out_tensors)} {kind} -> {args.out}")
    return 0


def _load_embedding_run(query_path, gallery_path) -> tuple[RetrievalRun, list[str], list[str]]:
    q = read_archive(query_path)
    g = read_archive(gallery_path)
    if not q.tensors or not g.tensors:
        raise ArchiveError("empty query or gallery archive")
    q_ids = list(q.tensors)
    g_ids = list(g.tensors)
    run = RetrievalRun(
        queries=np.vstack([q.tensors[i] for i in q_ids]),
        query_labels=[q.labels[i] for i in q_ids],
        gallery=np.vstack([g.tensors[i] for i in g_ids]),
        gallery_labels=[g.labels[i] for i in g_ids],
    )
    return run, q_ids, g_ids


def cmd_retrieve(args) -> int:
    if args.top < 1:
        raise ConfigError("--top must be at least 1")
    run, q_ids, g_ids = _load_embedding_run(args.query, args.gallery)
    ranking = rank_gallery(run)
    sims = cosine_similarities(run.queries, run.gallery)
    top = min(args.top, len(g_ids))
    payload = []
    for qi, qid in enumerate(q_ids):
        results = [{
            "id": g_ids[gi],
            "label": run.gallery_labels[gi],
            "score": round(float(sims[qi, gi]), 8),
        } for gi in ranking[qi, :top]]
        payload.append({"id": qid, "label": run.query_labels[qi], "results": results})
    text = json.dumps({"top": top, "queries": payload}, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote rankings for {len(q_ids)} queries -> {args.out}")
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    run, _, _ = _load_embedding_run(args.query, args.gallery)
    metrics = compute_metrics(run)
    print(render_metric_table(metrics, title=f"{args.query} vs {args.gallery}"))
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(metrics_to_json(metrics) + "\n", encoding="utf-8")
    if args.hist:
        write_histogram_csv(args.hist, distance_histograms(run))
    return 0


def cmd_gradcheck(args) -> int:
    text, ok = main_report(args.module, args.seeds)
    print(text)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapegraph",
        description="Sketch-to-3D retrieval with a hierarchical multi-view graph encoder.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic benchmark corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=8, help="number of classes (2-8)")
    p.add_argument("--per-class", type=int, default=30, help="shapes per class")
    p.add_argument("--sketches-per-class", type=int, default=20)
    p.add_argument("--views", type=int, default=12, help="cameras on the ring")
    p.add_argument("--feature-dim", type=int, default=64, help="view feature width")
    p.add_argument("--sketch-dim", type=int, default=48, help="sketch feature width")
    p.add_argument("--proto-dim", type=int, default=32, help="class anchor width")
    p.add_argument("--noise", type=float, default=0.03, help="sketch corruption in [0,1]")
    p.add_argument("--mode", choices=("category", "zeroshot"), default="category")
    p.add_argument("--unseen", type=int, default=2, help="held-out classes (zeroshot)")
    p.add_argument("--unseen-names", default="",
                   help="comma-separated class names to hold out (zeroshot); "
                        "empty picks them from the seed")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the retrieval model")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--data", default=None, help="dataset directory (overrides config)")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--mode", choices=("category", "zeroshot"), default=None)
    p.add_argument("--strategy", choices=("two_stage", "one_stage"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stage", type=int, choices=(1, 2), default=None,
                   help="run a single stage of the two_stage strategy")
    p.add_argument("--ckpt", default=None, help="stage-1 checkpoint for --stage 2")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="embed shapes or sketches with a checkpoint")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--in", dest="infile", required=True, help="input feature archive")
    p.add_argument("--out", required=True, help="output embedding archive")
    p.add_argument("--kind", choices=("auto", "shapes", "sketches"), default="auto")
    p.add_argument("--rig", default=None, help="camera positions file (default: ring)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("retrieve", help="rank a gallery for each query")
    p.add_argument("--query", required=True, help="query embedding archive")
    p.add_argument("--gallery", required=True, help="gallery embedding archive")
    p.add_argument("--top", type=int, default=10, help="results per query")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score retrieval quality")
    p.add_argument("--query", required=True, help="query embedding archive")
    p.add_argument("--gallery", required=True, help="gallery embedding archive")
    p.add_argument("--json", default=None, help="also write metrics as JSON")
    p.add_argument("--hist", default=None, help="write distance histogram CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient report")
    p.add_argument("--module", choices=("all", "encoder", "losses", "ops"), default="all")
    p.add_argument("--seeds", type=int, default=5, help="random seeds per case")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArchiveError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ShapegraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
