"""``casft`` command line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import VARIANTS, ExperimentConfig, load_config, resolve_data_path


def _cfg(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _out(path: str | None, cfg: ExperimentConfig | None = None) -> Path:
    return Path(path) if path else Path(cfg.run.out_dir)


def cmd_simulate(args) -> int:
    from .data import write_cascades
    from .simulate import simulate_hawkes_cascades

    cfg = _cfg(args.config)
    cascades = simulate_hawkes_cascades(seed=cfg.data.seed, **cfg.data.synthetic)
    out = Path(args.out)
    if out.suffix != ".jsonl":
        out = out / "cascades.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cascades(cascades, out)
    print(f"wrote {len(cascades)} cascades to {out}")
    return 0


def cmd_preprocess(args) -> int:
    from .data import ParseStats, filter_and_split, label_sample, parse_cascades

    src = resolve_data_path(args.input)
    if src.is_dir():
        src = src / "cascades.jsonl"
    stats = ParseStats()
    with open(src, encoding="utf-8") as fh:
        cascades = parse_cascades(fh, args.format, stats)
    ratios = tuple(float(x) for x in args.split.split(","))
    samples = [label_sample(c, args.t_obs, args.t_pred, args.intervals) for c in cascades]
    split = filter_and_split(samples, args.min_observed, ratios, args.seed)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    split.write_manifest(out / "manifest.json")
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for part in ("train", "val", "test"):
            for s in getattr(split, part):
                fh.write(json.dumps({"cascade_id": s.cascade_id, "split": part, "n_observed": s.n_observed,
                                     "P": s.incremental_popularity, "Y": list(s.segment_targets)}) + "\n")
    kept = len(split.train) + len(split.val) + len(split.test)
    print(f"{len(cascades)} cascades, {kept} kept (>= {args.min_observed} participants): "
          f"train {len(split.train)} / val {len(split.val)} / test {len(split.test)} -> {out}")
    return 0


def cmd_train(args) -> int:
    from .dataset import prepare
    from .harness import train

    cfg = _cfg(args.config)
    manifest = json.loads(Path(args.manifest).read_text()) if args.manifest else None
    out = _out(args.out, cfg)
    res = train(cfg, prepare(cfg, manifest=manifest), out_dir=out)
    print(json.dumps({"epoch": res.checkpoint.epoch, "val": res.checkpoint.val_metrics,
                      "checkpoint": str(out / "checkpoint.pt")}))
    return 0


def cmd_evaluate(args) -> int:
    from .harness import evaluate

    out = Path(args.out) if args.out else Path(args.ckpt).parent
    report = evaluate(args.ckpt, args.split, out_dir=out,
                      config=load_config(args.config) if args.config else None)
    print(json.dumps(report))
    return 0


def cmd_ablate(args) -> int:
    from .harness import ablate

    cfg = _cfg(args.config)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    res = ablate(cfg, args.variants or VARIANTS, seeds, out_dir=_out(args.out, cfg))
    for row in res["rows"]:
        print(f"{row['variant']:>13} seed={row['seed']} msle={row['msle']:.4f} mape={row['mape']:.4f}")
    for v, k in res["wins"].items():
        print(f"full <= {v}: {k}/{res['runs']} runs")
    return 0


def cmd_sweep(args) -> int:
    from .harness import sweep

    cfg = _cfg(args.config)
    values = [v for v in args.values.replace(",", " ").split() if v]
    rows = sweep(cfg, args.axis, values, out_dir=_out(args.out, cfg))
    for row in rows:
        print(f"{args.axis}={row['value']} msle={row['msle']:.4f} mape={row['mape']:.4f}")
    return 0


def cmd_baseline(args) -> int:
    from .harness import baseline_feature_mlp

    print(json.dumps(baseline_feature_mlp(_cfg(args.config))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="casft", description="Cascade popularity prediction experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic Hawkes corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="directory or .jsonl file")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("preprocess", help="label, filter and split a corpus")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--format", default="jsonl", choices=["jsonl", "deephawkes"])
    s.add_argument("--t-obs", type=float, required=True)
    s.add_argument("--t-pred", type=float, required=True)
    s.add_argument("--intervals", type=int, default=8)
    s.add_argument("--min-observed", type=int, default=10)
    s.add_argument("--split", default="0.7,0.15,0.15")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train")
    s.add_argument("--config")
    s.add_argument("--manifest", help="split manifest written by preprocess")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--config", help="optional; must match the checkpoint's config hash")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate")
    s.add_argument("--config")
    s.add_argument("--variants", nargs="+", choices=VARIANTS)
    s.add_argument("--seeds", help="comma-separated training seeds")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep")
    s.add_argument("--config")
    s.add_argument("--axis", required=True, choices=["diffusion_steps", "hidden_dim", "intervals", "solver"])
    s.add_argument("--values", required=True, help="comma- or space-separated")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("baseline", help="feature MLP baseline")
    s.add_argument("--config")
    s.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"casft: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
