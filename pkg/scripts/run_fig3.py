#!/usr/bin/env python3
"""Accuracy-vs-campaign-size sweep (fig3 driver) at desk scale.

The default grid keeps one noise level and mode m3 across both coupling
variants; expect roughly 10-20 minutes single-threaded. Pass --config to
run a custom grid, e.g. the full mode sweep. FLOQUET_THREADS caps workers.
"""

import argparse

from tfris.experiments import (
    ExperimentConfig,
    experiment_fig3,
    load_experiment_config,
)
from tfris.optim import OptimizerConfig
from tfris.scenario import ScenarioConfig

DEFAULT = ExperimentConfig(
    scenario=ScenarioConfig(
        gt_harmonics=41, retained_harmonics=11, n_tx=2, n_rx=2, n_ris=6,
        p=6, q=3, delay_scale=0.2, seed=0,
    ),
    seeds=(0, 1, 2),
    k_list=(2, 8, 32),
    snr_list=(26.0,),
    modes=("m3",),
    mc_flags=(True, False),
    spread=0.3,
    align=OptimizerConfig(iterations=800, lr_start=1e-2, lr_end=1e-5),
    eval_patterns=100,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--out-dir", default="results/fig3")
    args = parser.parse_args()
    config = load_experiment_config(args.config) if args.config else DEFAULT
    rows = experiment_fig3(config, args.out_dir)
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"{len(rows)} rows ({failed} failed) -> {args.out_dir}/fig3.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
