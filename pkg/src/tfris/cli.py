"""Command-line front end.

Subcommands mirror the pipeline: generate a scenario, simulate a
measurement campaign, fit or fake step-1 proxies, align their gauges,
score accuracy, run the gain benchmark, or drive a whole experiment grid.
Every artifact is JSON/CSV and byte-reproducible for a fixed seed; exit
codes are 0 success, 2 validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .errors import ValidationError
from .estimation import (
    align,
    load_alignment,
    save_alignment,
    step1_estimate,
    surrogate_step1,
)
from .gain import coordinate_ascent_gain
from .gauges import load_proxies, save_proxies
from .measurement import (
    MeasurementMode,
    load_campaign,
    save_campaign,
    simulate_campaign,
    simulate_static_campaigns,
)
from .metrics import evaluate_zeta
from .optim import OptimizerConfig
from .scenario import config_from_node, generate_scenario, load_scenario, save_scenario
from . import experiments, jsonio

GAIN_MODELS = ("gt", "trunc-gt", "aligned", "unaligned")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfris",
        description="time-Floquet RIS simulation and calibration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic scenario")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("campaign", help="simulate a measurement campaign")
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", required=True, choices=["m1", "m2", "m3"])
    p.add_argument("--k", required=True, type=int)
    p.add_argument("--q", required=True, type=int)
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--snr-db", type=float, default=None)
    noise.add_argument("--noiseless", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("step1", help="per-harmonic proxy multiports")
    p.add_argument("--scenario", required=True)
    p.add_argument("--surrogate", action="store_true",
                   help="gauge-perturbed ground truth instead of a fit")
    p.add_argument("--spread", type=float, default=0.3,
                   help="surrogate gauge spread")
    p.add_argument("--mc-unaware", action="store_true")
    p.add_argument("--k1", type=int, default=64,
                   help="static records per harmonic for the fitted path")
    p.add_argument("--snr-db", type=float, default=None)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr-start", type=float, default=2e-2)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_step1)

    p = sub.add_parser("align", help="optimize cross-harmonic gauges")
    p.add_argument("--proxies", required=True)
    p.add_argument("--campaign", required=True)
    p.add_argument("--iters", type=int, default=250)
    p.add_argument("--lr-start", type=float, default=1e-3)
    p.add_argument("--lr-end", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("zeta", help="score proxies on unseen patterns")
    p.add_argument("--scenario", required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--proxies")
    source.add_argument("--result", help="alignment result JSON")
    p.add_argument("--mode", required=True, choices=["m1", "m2", "m3"])
    p.add_argument("--patterns", type=int, default=100)
    p.add_argument("--q", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_zeta)

    p = sub.add_parser("gain", help="coordinate-ascent conversion gain")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", required=True, choices=list(GAIN_MODELS))
    p.add_argument("--proxies", help="proxy JSON for the unaligned model")
    p.add_argument("--result", help="alignment JSON for the aligned model")
    p.add_argument("--mc-unaware", action="store_true",
                   help="variant of the trunc-gt model")
    p.add_argument("--tx", required=True, type=int)
    p.add_argument("--rx", required=True, type=int)
    p.add_argument("--harmonic", type=int, default=1)
    p.add_argument("--q", required=True, type=int)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gain)

    p = sub.add_parser("exp", help="run an experiment grid")
    p.add_argument("which", choices=["fig3", "fig4", "table1"])
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_exp)

    return parser


def cmd_generate(args) -> int:
    cfg = config_from_node(jsonio.load_json(args.config), "")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    save_scenario(generate_scenario(cfg), args.out)
    print(f"wrote {args.out}")
    return 0


def _campaign_snr(args):
    if args.noiseless:
        return None
    return args.snr_db


def cmd_campaign(args) -> int:
    scn = load_scenario(args.scenario)
    camp = simulate_campaign(
        scn, scn.config.retained_grid(), args.k, args.q,
        MeasurementMode.parse(args.mode), _campaign_snr(args), args.seed,
    )
    save_campaign(camp, args.out)
    print(f"wrote {args.out} ({camp.k} records, mode {camp.mode.value})")
    return 0


def cmd_step1(args) -> int:
    scn = load_scenario(args.scenario)
    retained = scn.config.retained_grid()
    aware = not args.mc_unaware
    if args.surrogate:
        proxies = surrogate_step1(scn, retained, args.spread, args.seed, aware)
    else:
        stat = simulate_static_campaigns(
            scn, retained, args.k1, args.snr_db, args.seed
        )
        cfg = OptimizerConfig(
            iterations=args.iters, lr_start=args.lr_start,
            lr_end=args.lr_end, init_spread=0.1, seed=args.seed,
        )
        result = step1_estimate(stat, retained, cfg, mc_aware=aware)
        for flag in result.flags:
            print(f"flag: {flag}")
        worst = max(e for e in result.holdout_error if not np.isnan(e))
        print(f"worst holdout error {worst:.3e}")
        proxies = result.proxies
    save_proxies(proxies, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_align(args) -> int:
    proxies = load_proxies(args.proxies)
    campaign = load_campaign(args.campaign)
    cfg = OptimizerConfig(
        iterations=args.iters, lr_start=args.lr_start, lr_end=args.lr_end,
        seed=args.seed,
    )
    result = align(proxies, campaign, cfg)
    save_alignment(result, args.out)
    print(f"final loss {result.final_loss:.6e}")
    if not result.ok:
        for i, rep in enumerate(result.reports):
            for failure in rep.failures:
                print(f"admissibility[{i}]: {failure}")
    print(f"wrote {args.out}")
    return 0


def cmd_zeta(args) -> int:
    scn = load_scenario(args.scenario)
    if args.proxies:
        proxies = load_proxies(args.proxies)
    else:
        proxies = load_alignment(args.result).aligned
    rep = evaluate_zeta(
        scn, proxies, args.mode, args.q, n_patterns=args.patterns,
        seed=args.seed,
    )
    print(f"mode={rep.mode.value} patterns={rep.n_patterns} q={args.q}")
    if rep.infinite:
        print("zeta_db=inf zeta_linear=inf infinite=true")
    else:
        print(
            f"zeta_db={rep.zeta_db!r} zeta_linear={rep.zeta_linear!r} "
            "infinite=false"
        )
    return 0


def cmd_gain(args) -> int:
    scn = load_scenario(args.scenario)
    if args.model == "gt":
        model = scn
    elif args.model == "trunc-gt":
        model = surrogate_step1(
            scn, scn.config.retained_grid(), 0.0, 0, not args.mc_unaware
        )
    elif args.model == "unaligned":
        if not args.proxies:
            raise ValidationError("--model unaligned needs --proxies")
        model = load_proxies(args.proxies)
    else:
        if not args.result:
            raise ValidationError("--model aligned needs --result")
        model = load_alignment(args.result).aligned
    res = coordinate_ascent_gain(
        model, scn, args.tx, args.rx, args.harmonic, q=args.q,
        restarts=args.restarts, rng=args.seed,
    )
    print(f"true_gain_db={res.true_gain_db!r}")
    print(f"predicted_gain_db={res.predicted_gain_db!r}")
    for i, row in enumerate(res.pattern.states):
        print(f"states[{i}]={','.join(str(int(s)) for s in row)}")
    return 0


def cmd_exp(args) -> int:
    cfg = experiments.load_experiment_config(args.config)
    if args.which == "fig3":
        rows = experiments.experiment_fig3(cfg, args.out_dir)
    elif args.which == "fig4":
        rows = experiments.experiment_fig4(cfg, args.out_dir)
    else:
        rows, _ = experiments.experiment_table1(cfg, args.out_dir)
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {args.which} ({len(rows)} rows, {failed} failed) "
          f"to {args.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
