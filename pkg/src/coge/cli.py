"""Command-line pipeline: generate, train, explain, evaluate, ablate.

One global seed drives everything: each stage derives its own seed as the
first 8 bytes of sha256("<seed>/<stage>"), so a single number reproduces the
dataset, the checkpoint, and every report byte-for-byte. A JSON manifest can
pin any setting; manifest values override flags, flags override defaults.
Verbosity comes from the COGE_LOG environment variable (quiet|info|debug).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import evaluate as ev
from . import explain as ex
from . import gnn, graphs

log = logging.getLogger("coge")

TABLE1_METHODS = ("random", "occlusion", "sensitivity", "coge")
TABLE2_VARIANTS = ("neg_same", "neg_same_self", "diff", "diff_self",
                   "diff_neg_same", "full_average", "full_ot")


def stage_seed(global_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{global_seed}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("COGE_LOG", "info"), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")


def _load_manifest(args) -> dict:
    if getattr(args, "manifest", None):
        return json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    return {}


def _setting(manifest: dict, section: str, key: str, flag_value):
    """Manifest overrides flags; flags override defaults (already folded into
    the argparse default)."""
    return manifest.get(section, {}).get(key, flag_value)


def _global_seed(args, manifest: dict) -> int:
    return int(manifest.get("seed", args.seed))


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    manifest = _load_manifest(args)
    seed = stage_seed(_global_seed(args, manifest), "generate")
    gen = manifest.get("generator", {})
    cfg = graphs.GeneratorConfig(
        tree_size_min=gen.get("tree_size_min", args.tree_min),
        tree_size_max=gen.get("tree_size_max", args.tree_max),
        motifs_min=gen.get("motifs_min", args.motifs_min),
        motifs_max=gen.get("motifs_max", args.motifs_max),
        cycle_len_min=gen.get("cycle_len_min", args.cycle_min),
        cycle_len_max=gen.get("cycle_len_max", args.cycle_max),
        clique_size_min=gen.get("clique_size_min", args.clique_min),
        clique_size_max=gen.get("clique_size_max", args.clique_max),
        feature_dim=gen.get("feature_dim", args.feature_dim),
        train_ratio=gen.get("train_ratio", args.train_ratio),
    )
    n = int(gen.get("n_graphs", args.n))
    try:
        cfg.validate()
        ds = graphs.generate_cycliq(n, seed, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(_setting(manifest, "paths", "dataset", args.out))
    out.parent.mkdir(parents=True, exist_ok=True)
    graphs.save_dataset(ds, out)
    n_cycle = sum(1 for g in ds.graphs if g.label == graphs.LABEL_CYCLE)
    n_train = sum(1 for t in ds.split if t == "train")
    print(f"wrote {out}: {len(ds)} graphs "
          f"({n_cycle} cycle / {len(ds) - n_cycle} clique), "
          f"split {n_train} train / {len(ds) - n_train} test")
    return 0


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    seed = stage_seed(_global_seed(args, manifest), "train")
    tr = manifest.get("train", {})
    cfg = gnn.TrainConfig(
        epochs=int(tr.get("epochs", args.epochs)),
        batch_size=int(tr.get("batch_size", args.batch_size)),
        learning_rate=float(tr.get("learning_rate", args.lr)),
        seed=seed,
    )
    ds = graphs.load_dataset(_setting(manifest, "paths", "dataset", args.dataset))
    model, history = gnn.train(ds, cfg)
    out = Path(_setting(manifest, "paths", "model", args.out))
    out.parent.mkdir(parents=True, exist_ok=True)
    gnn.save_model(model, out)
    train_acc = gnn.accuracy(model, ds.train_graphs())
    test_acc = gnn.accuracy(model, ds.test_graphs())
    metrics_path = out.with_suffix(".metrics.json")
    _atomic_write(metrics_path, json.dumps({
        "config": asdict(cfg), "history": history,
        "final_train_acc": train_acc, "final_test_acc": test_acc,
    }, indent=2) + "\n")
    print(f"wrote {out}; train acc {train_acc:.4f}, test acc {test_acc:.4f}")
    floor = float(tr.get("acc_floor", args.acc_floor))
    if test_acc < floor:
        print(f"error: test accuracy {test_acc:.4f} below floor {floor}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# explain / evaluate / ablate share configuration plumbing

def _explain_config(args, manifest: dict) -> ex.ExplainConfig:
    xp = manifest.get("explain", {})
    return ex.ExplainConfig(
        k=int(xp.get("k", args.k)),
        learning_rate=float(xp.get("learning_rate", args.lr)),
        steps=int(xp.get("steps", args.steps)),
        variant=xp.get("variant", getattr(args, "variant", "full_ot")),
        distance_mode=xp.get("distance_mode", args.distance_mode),
        sign_convention=xp.get("sign_convention", args.sign_convention),
        eps_scale=float(xp.get("eps_scale", args.eps_scale)),
    )


def _eval_config(args, manifest: dict, explain_cfg: ex.ExplainConfig) -> ev.EvalConfig:
    evm = manifest.get("eval", {})
    return ev.EvalConfig(
        split=evm.get("split", args.split),
        workers=int(evm.get("workers", args.workers)),
        seed=stage_seed(_global_seed(args, manifest), "explain"),
        explain=explain_cfg,
    )


def _load_inputs(args, manifest):
    ds = graphs.load_dataset(_setting(manifest, "paths", "dataset", args.dataset))
    model = gnn.load_model(_setting(manifest, "paths", "model", args.model))
    return ds, model


def _prepare_cache(method_list, model, ds, cfg: ev.EvalConfig):
    """Corpus embeddings plus contrast selections, shared by every
    optimizer-based method in the run."""
    union = {g.id: g for g in ds.train_graphs() + ds.subset(cfg.split)}
    corpus = ex.embed_corpus(model, list(union.values()))
    if not any(m == "coge" or m in ex.VARIANTS for m in method_list):
        return corpus, None
    log.info("precomputing contrast selections (pairwise OT distances)")
    cache = ev.precompute_contrast_sets(model, ds, cfg.explain, split=cfg.split,
                                        workers=cfg.workers, corpus=corpus)
    return corpus, cache


def cmd_explain(args) -> int:
    manifest = _load_manifest(args)
    ds, model = _load_inputs(args, manifest)
    xcfg = _explain_config(args, manifest)
    ecfg = _eval_config(args, manifest, xcfg)
    method = args.method if args.variant is None or args.method != "coge" else args.variant
    out_dir = Path(_setting(manifest, "paths", "out_dir", args.out_dir)) / "explanations" / method
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.graph_id is not None:
        g = ds.by_id(args.graph_id)
        result = ev.run_method(method, g, model, ds, xcfg, seed=ecfg.seed)
        path = out_dir / f"graph_{g.id}.json"
        _atomic_write(path, result.to_json() + "\n")
        print(f"wrote {path}")
        return 0
    corpus, cache = _prepare_cache([method], model, ds, ecfg)
    def sink(gid: int, text: str) -> None:
        _atomic_write(out_dir / f"graph_{gid}.json", text + "\n")
    report = ev.evaluate_method(method, ds, model, ecfg, contrast_cache=cache,
                                corpus=corpus, results_sink=sink)
    summary = out_dir / "summary"
    ev.emit_report([report], summary)
    print(f"{method}: cycle {report.cycle_mean:.3f} clique {report.clique_mean:.3f} "
          f"avg {report.avg:.3f} over {len(report.per_graph)} graphs -> {summary}.json")
    return 0


def _run_reports(method_list, args, table_name: str) -> int:
    manifest = _load_manifest(args)
    ds, model = _load_inputs(args, manifest)
    xcfg = _explain_config(args, manifest)
    ecfg = _eval_config(args, manifest, xcfg)
    out_dir = Path(_setting(manifest, "paths", "out_dir", args.out_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus, cache = _prepare_cache(method_list, model, ds, ecfg)
    reports = []
    for method in method_list:
        log.info("evaluating %s", method)
        reports.append(ev.evaluate_method(method, ds, model, ecfg,
                                          contrast_cache=cache, corpus=corpus))
    prefix = out_dir / table_name
    ev.emit_report(reports, prefix)
    for r in reports:
        print(f"{r.method:>14}: cycle {r.cycle_mean:.3f} +- {r.cycle_std:.3f}  "
              f"clique {r.clique_mean:.3f} +- {r.clique_std:.3f}  avg {r.avg:.3f}")
    print(f"wrote {prefix}.csv and {prefix}.json")
    failures = ev.check_thresholds(reports, manifest.get("eval", {}).get("thresholds", {}))
    if failures:
        for f in failures:
            print(f"threshold failed: {f}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    return _run_reports(list(TABLE1_METHODS), args, "table1")


def cmd_ablate(args) -> int:
    return _run_reports(list(TABLE2_VARIANTS), args, "table2")


# ---------------------------------------------------------------------------

def _add_common(sub, dataset=True, model=False):
    sub.add_argument("--manifest", help="JSON manifest; its values override flags")
    sub.add_argument("--seed", type=int, default=7, help="global seed (default 7)")
    if dataset:
        sub.add_argument("--dataset", default="cycliq.jsonl", help="dataset JSON-lines path")
    if model:
        sub.add_argument("--model", default="model.json", help="model checkpoint path")


def _add_explain_flags(sub):
    sub.add_argument("--k", type=int, default=10, help="contrast graphs per side")
    sub.add_argument("--lr", type=float, default=0.1, help="Adam step size for the weights")
    sub.add_argument("--steps", type=int, default=200, help="optimizer steps")
    sub.add_argument("--distance-mode", choices=("debiased", "entropic"), default="debiased",
                     dest="distance_mode")
    sub.add_argument("--sign-convention", choices=("eq1", "flipped"), default="eq1",
                     dest="sign_convention")
    sub.add_argument("--eps-scale", type=float, default=0.05, dest="eps_scale",
                     help="entropic regularization as a fraction of mean cost")
    sub.add_argument("--split", choices=("train", "test"), default="train")
    sub.add_argument("--workers", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coge",
        description="Contrastive graph-classifier explanations: data generation, "
                    "training, explanation, and evaluation.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("generate", help="write a synthetic cycle/clique dataset")
    _add_common(p, dataset=False)
    p.add_argument("--n", type=int, default=2000, help="number of graphs (even)")
    p.add_argument("--out", default="cycliq.jsonl")
    p.add_argument("--train-ratio", type=float, default=0.8, dest="train_ratio")
    p.add_argument("--tree-min", type=int, default=8)
    p.add_argument("--tree-max", type=int, default=15)
    p.add_argument("--motifs-min", type=int, default=1)
    p.add_argument("--motifs-max", type=int, default=2)
    p.add_argument("--cycle-min", type=int, default=4)
    p.add_argument("--cycle-max", type=int, default=8)
    p.add_argument("--clique-min", type=int, default=4)
    p.add_argument("--clique-max", type=int, default=6)
    p.add_argument("--feature-dim", type=int, default=10, dest="feature_dim")
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("train", help="train the graph classifier")
    _add_common(p)
    p.add_argument("--out", default="model.json", help="checkpoint path")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--acc-floor", type=float, default=0.95, dest="acc_floor",
                   help="exit nonzero if test accuracy falls below this")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("explain", help="explain one graph or a whole split")
    _add_common(p, model=True)
    p.add_argument("--method", choices=("coge", "random", "occlusion", "sensitivity"),
                   default="coge")
    p.add_argument("--variant", choices=sorted(ex.VARIANTS), default=None,
                   help="loss/distance variant (with --method coge)")
    p.add_argument("--graph-id", type=int, default=None, dest="graph_id")
    p.add_argument("--out-dir", default="out", dest="out_dir")
    _add_explain_flags(p)
    p.set_defaults(func=cmd_explain)

    p = subs.add_parser("evaluate", help="reproduce the four-method comparison")
    _add_common(p, model=True)
    p.add_argument("--out-dir", default="out", dest="out_dir")
    _add_explain_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("ablate", help="run the seven loss/distance variants")
    _add_common(p, model=True)
    p.add_argument("--out-dir", default="out", dest="out_dir")
    _add_explain_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
