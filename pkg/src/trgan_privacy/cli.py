"""Command-line entry point: ``trgan-privacy {run,evaluate,plot,phantoms}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .figures import plot_from_data
from .volume import save_volume


def _config(args):
    return experiment.load_config(args.config, seed=args.seed, steps=args.steps, out=args.out)


def cmd_run(args) -> int:
    config = _config(args)
    report = experiment.run_experiment(config)
    for r, seq in enumerate(report.points):
        for p in seq:
            acc = "nan" if p.fidelity is None else f"{p.fidelity.correlation_accuracy:.3f}"
            print(f"repeat {r} step {p.step}: auc={p.auc:.3f} privacy={p.privacy:.3f} "
                  f"utility={p.utility:.3f} corr_acc={acc}")
    for kind, res in sorted(report.attacks.items()):
        s = res.summary()
        print(f"{kind} attack @ step {s['step']}: auc={s['auc']:.3f} p={s['p_value']:.3g} "
              f"top-m acc={s['top_m_accuracy']:.3f}")
    print(f"report: {Path(config.output_dir) / 'report.json'}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    ev = experiment.evaluate_checkpoint_file(args.checkpoint, config)
    p = ev.point
    doc = {"step": p.step, "auc": p.auc, "privacy": p.privacy, "utility": p.utility,
           "correlation_accuracy": None if p.fidelity is None else p.fidelity.correlation_accuracy,
           "correlation_mse": None if p.fidelity is None else p.fidelity.correlation_mse}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"evaluation_step{p.step:06d}.json").write_text(text + "\n", encoding="utf-8")
        ev.discriminator.save(out / f"attack_discriminator_step{p.step:06d}.json")
    print(text)
    return 0


def cmd_plot(args) -> int:
    path = Path(args.report)
    base = path if path.is_dir() else path.parent
    out = Path(args.out) if args.out else base
    if out != base:
        report = experiment.load_report(path)
        from .figures import emit_figures
        names = emit_figures(report, out)
    else:
        names = plot_from_data(base)
    for n in names:
        print(out / n)
    return 0


def cmd_phantoms(args) -> int:
    config = _config(args)
    datasets = experiment.build_datasets(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    members = {s.id for s in datasets.train}
    index = []
    for s in sorted(datasets.train + datasets.holdout, key=lambda s: s.id):
        labelled = type(s)(s.id, s.volume, s.mask, s.id in members)
        save_volume(labelled, out / f"{s.id}.vol")
        index.append(f"{s.id}.vol,{int(s.id in members)}")
    (out / "index.csv").write_text("file,train\n" + "\n".join(index) + "\n", encoding="utf-8")
    print(f"wrote {len(index)} phantoms to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trgan-privacy",
                                     description="Privacy/utility study of a conditional temporal GAN.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--steps", type=int, help="TrGAN training steps (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="only print warnings and results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run the full study")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate one saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", parents=[common], help="re-render figures from a saved report")
    p.add_argument("report")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("phantoms", parents=[common], help="write the phantom dataset to disk")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_phantoms)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except experiment.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
