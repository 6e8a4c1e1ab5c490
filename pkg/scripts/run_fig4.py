#!/usr/bin/env python3
"""Slot-count generalization sweep (fig4 driver) at desk scale.

Aligns once per seed and variant at q_cal=3, then scores the frozen
gauges at each evaluation slot count. Expect a few minutes single-threaded
with the default grid; pass --config for a custom one.
"""

import argparse

from tfris.experiments import (
    ExperimentConfig,
    experiment_fig4,
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
    k_list=(32,),
    snr_list=(26.0,),
    modes=("m3",),
    mc_flags=(True, False),
    q_cal=3,
    q_eval_list=(1, 2, 3, 4),
    spread=0.3,
    align=OptimizerConfig(iterations=800, lr_start=1e-2, lr_end=1e-5),
    eval_patterns=100,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--out-dir", default="results/fig4")
    args = parser.parse_args()
    config = load_experiment_config(args.config) if args.config else DEFAULT
    rows = experiment_fig4(config, args.out_dir)
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"{len(rows)} rows ({failed} failed) -> {args.out_dir}/fig4.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
