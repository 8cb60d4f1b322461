"""Command-line entry point: ``medaug <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import VARIANTS, RunConfig, format_config, load_config, parse_overrides
from .emr import SyntheticSpec, format_rules, generate_synthetic
from .exceptions import ConfigError, MedAugError
from .metrics import format_table
from .persistence import write_manifest

STAGE_COMMANDS = {
    "build-graphs": pipeline.build_graphs,
    "pretrain-onto": pipeline.pretrain_onto,
    "pretrain-rel": pipeline.pretrain_rel,
    "train": pipeline.train,
}


def _common(p):
    p.add_argument("-c", "--config", help="run config file (INI sections)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value; repeatable")
    p.add_argument("-o", "--output-dir", help="artifact directory (default: paths.output_dir, then $MEDAUG_OUTPUT_DIR)")


def build_parser():
    parser = argparse.ArgumentParser(prog="medaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("build-graphs", "split the cohort and build ontology and co-occurrence graphs"),
        ("pretrain-onto", "contrastive pretraining on the ontology graphs"),
        ("pretrain-rel", "contrastive pretraining on the co-occurrence graph"),
        ("train", "train the medication predictor"),
        ("evaluate", "score the trained predictor"),
        ("run", "all stages in order"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "evaluate":
            p.add_argument("--split", choices=("train", "validation", "test"), default="test")

    p = sub.add_parser("ablate", help="run the pipeline for one or more variants")
    _common(p)
    p.add_argument("--variant", action="append", choices=VARIANTS, help="repeatable; default: all variants")

    p = sub.add_parser("sweep-zeta", help="sparsity-threshold grid 0.01..0.10")
    _common(p)

    p = sub.add_parser("encoder-study", help="encoder pairs AC/AA/CC/CA")
    _common(p)

    p = sub.add_parser("gen-synthetic", help="write a synthetic rule cohort and a matching run config")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--spec", help="INI file with a [synthetic] section")
    p.add_argument("--seed", type=int)
    p.add_argument("--patients", type=int)
    p.add_argument("--single-visit-patients", type=int)
    p.add_argument("--noise", type=float)

    p = sub.add_parser("show-config", help="print the effective config")
    _common(p)
    return parser


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(parse_overrides(args.overrides))
    if args.output_dir:
        cfg.paths.output_dir = args.output_dir
    return cfg


def _gen_synthetic(args):
    spec = SyntheticSpec.from_file(args.spec) if args.spec else SyntheticSpec()
    for key in ("seed", "patients", "single_visit_patients", "noise"):
        value = getattr(args, key)
        if value is not None:
            setattr(spec, key, value)
    spec.validate()
    records, rules, hierarchies = generate_synthetic(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "records.jsonl": records,
        "dx_hierarchy.tsv": hierarchies["dx"],
        "rx_hierarchy.tsv": hierarchies["rx"],
        "rules.tsv": format_rules(rules, spec),
    }
    cfg = RunConfig()
    cfg.paths.records, cfg.paths.dx_hierarchy, cfg.paths.rx_hierarchy = "records.jsonl", "dx_hierarchy.tsv", "rx_hierarchy.tsv"
    cfg.paths.output_dir = "run"
    cfg.experiment.seed = spec.seed
    # a 64-wide recurrent layer suits a cohort of this size; 256 memorizes it
    cfg.predictor.hidden_dim = 64
    files["config.ini"] = format_config(cfg)
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
    write_manifest(out, "gen-synthetic", "", spec.seed, [out / n for n in files])
    print(f"wrote synthetic cohort to {out}")
    return 0


def run(args):
    if args.command == "gen-synthetic":
        return _gen_synthetic(args)
    cfg = _resolve_config(args)
    if args.command == "show-config":
        sys.stdout.write(format_config(cfg))
        return 0
    out = cfg.output_dir()
    if args.command in STAGE_COMMANDS:
        STAGE_COMMANDS[args.command](cfg, out)
        print(f"{args.command}: artifacts in {out / args.command}")
        return 0
    if args.command == "evaluate":
        metrics = pipeline.evaluate(cfg, out, args.split)
        sys.stdout.write(format_table([(cfg.experiment.variant, metrics)], label="variant"))
        return 0
    if args.command == "run":
        metrics = pipeline.run_pipeline(cfg, out)
        sys.stdout.write(format_table([(cfg.experiment.variant, metrics)], label="variant"))
        return 0
    if args.command == "ablate":
        rows = pipeline.ablate(cfg, out, tuple(args.variant) if args.variant else VARIANTS)
        sys.stdout.write(format_table(rows, label="variant"))
        return 0
    if args.command == "sweep-zeta":
        sys.stdout.write(format_table(pipeline.sweep_zeta(cfg, out), label="zeta"))
        return 0
    if args.command == "encoder-study":
        sys.stdout.write(format_table(pipeline.encoder_study(cfg, out), label="encoders"))
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except MedAugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
