"""``restorer-guidance`` command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 training divergence, 4 trial failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import config as cfgmod
from .errors import ConfigError, InvalidArgumentError, TrainingDivergenceError, TrialFailure
from .harness import (
    RestorerSpec,
    experiment_from_values,
    make_corpus,
    run_ablation,
    run_control,
    run_experiment,
    run_ood_study,
)
from .mlp import train_score_mlp
from .schedule import linear_beta_schedule

__all__ = ["main", "OUTPUT_ENV", "EXIT_OK", "EXIT_CONFIG", "EXIT_DIVERGENCE", "EXIT_TRIAL"]

OUTPUT_ENV = "RESTORER_GUIDANCE_OUT"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_TRIAL = 4

log = logging.getLogger("restorer_guidance")


def _run_dir(args, command: str, values: dict[str, Any]) -> Path:
    root = Path(args.out or os.environ.get(OUTPUT_ENV, "runs"))
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = root / f"{command}-{stamp}"
    path.mkdir(parents=True, exist_ok=False)
    (path / "config.txt").write_text(cfgmod.render(values), encoding="utf-8")
    return path


def cmd_schedule(args, values) -> int:
    s = linear_beta_schedule(values["schedule.N"], values["schedule.beta_start"], values["schedule.beta_end"])
    out = _run_dir(args, "schedule", values)
    (out / "schedule.csv").write_text(s.to_csv())
    print(out / "schedule.csv")
    return EXIT_OK


def cmd_train(args, values) -> int:
    s = linear_beta_schedule(values["schedule.N"], values["schedule.beta_start"], values["schedule.beta_end"])
    data = make_corpus(values["corpus.kind"], values["train.count"], values["corpus.size"], values["train.seed"])
    out = _run_dir(args, "train", values)
    result = train_score_mlp(
        data,
        s,
        lr=values["train.lr"],
        momentum=values["train.momentum"],
        epochs=values["train.epochs"],
        batch_size=values["train.batch_size"],
        hidden=values["train.hidden"],
        n_time_features=values["train.time_features"],
        seed=values["train.seed"],
    )
    result.net.save(out / "net")
    lines = [f"# zero_predictor_loss = {result.baseline_loss!r}", "epoch,loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(result.losses, 1)]
    lines.append(f"final,{result.final_loss!r}")
    (out / "loss.csv").write_text("\n".join(lines) + "\n")
    print(f"{out}: final loss {result.final_loss:.6f} vs zero predictor {result.baseline_loss:.6f}")
    return EXIT_OK


def _report_line(report) -> str:
    parts = []
    for (task, sampler, rt, mb), agg in report.aggregates().items():
        parts.append(f"{task}/{sampler}/rt{rt}/mb{mb}: psnr {agg['psnr_mean']:.3f} ssim {agg['ssim_mean']:.4f}")
    return "\n".join(parts)


def cmd_solve(args, values) -> int:
    out = _run_dir(args, "solve", values)
    report = run_experiment(experiment_from_values(values, out))
    print(out)
    print(_report_line(report))
    return EXIT_OK


def cmd_ablate(args, values) -> int:
    out = _run_dir(args, "ablate", values)
    report = run_ablation(experiment_from_values(values, out))
    print(out)
    print(_report_line(report))
    return EXIT_OK


def cmd_ood(args, values) -> int:
    out = _run_dir(args, "ood", values)
    cfg = experiment_from_values(values, out)
    task = cfg.task
    built_for = task.with_(blur_len=values["ood.blur_len"], blur_angle=values["ood.blur_angle"])
    mismatched = RestorerSpec(
        cfg.restorer.kind,
        cfg.restorer.lam,
        cfg.restorer.regularizer,
        cfg.restorer.threshold,
        None if built_for == task else built_for,
    )
    report = run_ood_study(cfg, mismatched, values["ood.zeta_gain"])
    print(out)
    print(_report_line(report))
    return EXIT_OK


def cmd_control(args, values) -> int:
    out = _run_dir(args, "control", values)
    cfg = experiment_from_values(values, out)
    cfg = cfg.with_(sampler=cfg.sampler.with_(steps=values["control.steps"] or None))
    result = run_control(cfg, values["control.rhos"], values["control.item"])
    print(out)
    print(result.to_csv(), end="")
    print(f"monotone: {'yes' if result.monotone() else 'no'}")
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable, str]] = {
    "schedule": (cmd_schedule, "write the noise schedule table as CSV"),
    "train": (cmd_train, "train the MLP score network on a generated corpus"),
    "solve": (cmd_solve, "solve a degraded corpus and write a metrics report"),
    "ablate": (cmd_ablate, "restorer traveling x measurement boosting grid"),
    "ood": (cmd_ood, "matched vs mismatched restorer prototype study"),
    "control": (cmd_control, "deterioration sweep over the restorer step size"),
}


def build_parser() -> argparse.ArgumentParser:
    keys = cfgmod.help_text()
    parser = argparse.ArgumentParser(
        prog="restorer-guidance",
        description="Restorer-guided diffusion sampling experiments.",
        epilog=f"exit codes: 0 ok, 2 config error, 3 training divergence, 4 trial failure\n"
        f"output root: --out, else ${OUTPUT_ENV}, else ./runs\n\n{keys}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_, epilog=keys, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("-c", "--config", help="config file ('section.key = value' lines)")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("-o", "--out", help=f"output root (default ${OUTPUT_ENV} or ./runs)")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    handler = COMMANDS[args.command][0]
    try:
        values = cfgmod.resolve(args.config, args.set)
        return handler(args, values)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except TrialFailure as exc:
        print(f"trial failure: {exc}", file=sys.stderr)
        return EXIT_TRIAL


if __name__ == "__main__":
    sys.exit(main())
