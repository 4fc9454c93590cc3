"""Command-line entry point.

Every subcommand reads and writes its intermediates under ``--out`` so the
stages can run one at a time::

    seqgraph synth --out data
    seqgraph track --manifest data/manifest.json --out run
    seqgraph graph --manifest data/manifest.json --out run
    ...
    seqgraph eval  --manifest data/manifest.json --out run --csv

Exit codes: 0 success, 1 input error, 2 runtime failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import pipeline as pl
from .data import InputError, generate_synthetic, load_dataset, write_dataset
from .projection import save_checkpoint
from .report import plot_ablation, render_figures, write_metric_csv
from .simgraph import save_graph_csv

log = logging.getLogger("seqgraph")

_OVERRIDES = {
    "K": int, "lam": float, "horizon": int, "k_global": int, "n_viewpoints": int, "iou_min": float,
    "n_triplets": int, "frames_per_pair": int, "epochs": int, "batch_size": int,
    "learning_rate": float, "margin_alpha": float,
}


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {text!r}")


def build_config(args) -> pl.PipelineConfig:
    values = asdict(pl.PipelineConfig())
    if args.config:
        values.update(asdict(pl.PipelineConfig.from_file(args.config)))
    for name in _OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    types = {f.name: f.type for f in fields(pl.PipelineConfig)}
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep or key not in types:
            raise InputError(f"--set expects key=value with a known config key, got {item!r}")
        kind = types[key]
        try:
            values[key] = _parse_bool(raw) if kind is bool else kind(raw)
        except (TypeError, ValueError):
            raise InputError(f"bad value for {key}: {raw!r}") from None
    if getattr(args, "binary_graph", False):
        values["binary_graph"] = True
    if getattr(args, "constant_margin", False):
        values["constant_margin"] = True
    if getattr(args, "distance_method", None):
        values["distance_method"] = args.distance_method
    if args.seed is not None:
        values["seed"] = args.seed
    return pl.PipelineConfig.from_dict(values)


def _common(p, manifest=True):
    p.add_argument("--config", help="JSON file with pipeline settings")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest.json")
        for name, kind in _OVERRIDES.items():
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other config key")
        p.add_argument("--binary-graph", action="store_true", help="ablation: unweighted graph, conf = 1")
        p.add_argument("--constant-margin", action="store_true", help="ablation: conf = 1 in the loss")
        p.add_argument("--distance-method", choices=pl.DISTANCE_METHODS + ("raw",),
                       help="sequence distance used for the graph's dissimilarity term")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqgraph",
                                     description="Self-supervised object category discovery from mask features.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    _common(p, manifest=False)
    p.add_argument("--n-classes", type=int, default=10)
    p.add_argument("--instances", type=int, default=5, help="instances per class")
    p.add_argument("--frames", type=int, default=40, help="frames per instance")
    p.add_argument("--dim", type=int, default=64, help="feature dimension")
    p.add_argument("--viewpoints", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--class-scale", type=float, default=0.4)
    p.add_argument("--instance-sigma", type=float, default=0.2)
    p.add_argument("--viewpoint-scale", type=float, default=0.5)
    p.add_argument("--shared-viewpoint-scale", type=float, default=2.0)
    p.add_argument("--permute-viewpoints", action="store_true")
    p.add_argument("--dwell", type=float, default=None, help="Dirichlet concentration of viewpoint dwell times")
    p.add_argument("--objects-per-video", type=int, default=5)
    p.add_argument("--sequences-direct", action="store_true", help="write pre-grouped sequences (no boxes)")

    for name, text in (("track", "link masks into sequences"), ("graph", "build the similarity graph"),
                       ("sample", "mine triplets by random walks"), ("train", "train the projection network"),
                       ("cluster", "cluster projected and raw features"), ("eval", "score and write the report"),
                       ("run", "all stages"), ("ablate", "sequence-distance method sweep")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name in ("eval", "run", "ablate"):
            p.add_argument("--csv", action="store_true", help="also write flat metric rows as CSV")
    return parser


def _write_report(report: pl.RunReport, out: Path, want_csv: bool):
    pl.save_report(report, out)
    d = report.to_dict()
    if want_csv:
        write_metric_csv(d, out / "report.csv")
    for path in render_figures(d, out):
        log.info("wrote %s", path)


def _require(value, what):
    if value is None:
        raise InputError(f"missing {what}; run the earlier stage first")
    return value


def dispatch(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "synth":
        ds = generate_synthetic(
            n_classes=args.n_classes, instances_per_class=args.instances, frames_per_instance=args.frames,
            feature_dim=args.dim, viewpoint_count=args.viewpoints, noise_sigma=args.noise,
            seed=0 if args.seed is None else args.seed, class_scale=args.class_scale,
            instance_sigma=args.instance_sigma, viewpoint_scale=args.viewpoint_scale,
            shared_viewpoint_scale=args.shared_viewpoint_scale, permute_viewpoints=args.permute_viewpoints,
            dwell_concentration=args.dwell, objects_per_video=args.objects_per_video,
            as_sequences=args.sequences_direct)
        path = write_dataset(ds, out)
        print(f"wrote {len(ds.observations())} observations to {path}")
        return 0

    cfg = build_config(args)
    ds = load_dataset(args.manifest)
    pl.save_config(cfg, out)

    if args.command == "run":
        try:
            report, _, state = pl.run_pipeline(cfg, ds)
        except pl.StageError as exc:
            if exc.state is not None:
                pl.save_state(out, cfg, exc.state)
            raise
        pl.save_state(out, cfg, state)
        _write_report(report, out, args.csv)
        _print_summary(report)
        return 0

    if args.command == "ablate":
        seqs = pl.load_sequences(ds, out) if (out / pl.FILES["sequences"]).exists() else pl.stage_track(cfg, ds)
        if not ds.has_truth:
            raise InputError("ablate needs ground-truth labels in the manifest")
        table = pl.ablation_table(cfg, seqs)
        (out / "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if args.csv:
            with (out / "ablation.csv").open("w", encoding="utf-8") as fh:
                fh.write("method,precision,recall,f_beta,threshold\n")
                for m, r in table.items():
                    fh.write(f"{m},{r['precision']:.17g},{r['recall']:.17g},{r['f_beta']:.17g},{r['threshold']:.17g}\n")
        plot_ablation(table, out / "ablation.png")
        for m, r in table.items():
            print(f"{m:>13s}  f0.5={r['f_beta']:.3f}  P={r['precision']:.3f}  R={r['recall']:.3f}")
        return 0

    try:
        state = pl.load_state(out, ds)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    timings = {}
    with pl._stage(args.command, timings):
        if args.command == "track":
            pl.save_sequences(pl.stage_track(cfg, ds), out)
        elif args.command == "graph":
            g = pl.stage_graph(cfg, _require(state.sequences, "sequences.csv"))
            save_graph_csv(g, out / pl.FILES["graph"])
        elif args.command == "sample":
            idx, sidx, conf, skipped = pl.stage_sample(cfg, ds, _require(state.graph, "graph.csv"))
            pl.save_triplets(idx, sidx, conf, skipped, ds, out)
        elif args.command == "train":
            _require(state.triplets, "triplets.csv")
            net, history = pl.stage_train(cfg, ds, state.triplets, state.confidences)
            save_checkpoint(net, out / pl.FILES["checkpoint"])
            pl.save_train_log(history, out)
        elif args.command == "cluster":
            labels, raw = pl.stage_cluster(cfg, ds, _require(state.net, "checkpoint.txt"))
            pl.save_labels(ds, labels, raw, out)
        elif args.command == "eval":
            for value, what in ((state.sequences, "sequences.csv"), (state.graph, "graph.csv"),
                                (state.triplets, "triplets.csv"), (state.loss_history, "train_log.csv"),
                                (state.labels, "labels.csv")):
                _require(value, what)
            report = pl.stage_evaluate(cfg, state)
            _write_report(report, out, args.csv)
            _print_summary(report)
    log.info("%s finished in %.2fs", args.command, timings[args.command])
    return 0


def _print_summary(report: pl.RunReport):
    print(f"sequences={report.n_sequences} edges={report.graph_edges} triplets={report.n_triplets} "
          f"skipped={report.skipped_anchors}")
    if report.metrics:
        m = report.metrics
        print(f"ACC={m['acc']:.4f} ARI={m['ari']:.4f} NMI={m['nmi']:.4f} (raw ACC={m['raw_acc']:.4f})")
    else:
        print(report.note)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (InputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except pl.StageError as exc:
        if isinstance(exc.cause, (InputError, FileNotFoundError)):
            print(f"input error: {exc}", file=sys.stderr)
            return 1
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
