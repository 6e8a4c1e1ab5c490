"""Seeded experiment drivers emitting deterministic CSV artifacts.

Each driver expands a config into independent cells, runs them (optionally
in parallel, capped by FLOQUET_THREADS), sorts the rows by cell key, and
writes one CSV plus a small meta JSON. The meta file carries the run
timestamp; the CSV itself is byte-reproducible for a fixed config.

Per-cell randomness derives from the replicate's master seed and a cell
label through one documented rule (see derive_seed), so the output content
does not depend on worker scheduling. Cell failures become rows with an
error status instead of aborting the run.
"""

from __future__ import annotations

import csv
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import jsonio
from .errors import SchemaError, TfrisError, ValidationError
from .estimation import (
    align,
    optimizer_from_node,
    optimizer_to_node,
    surrogate_step1,
)
from .gain import coordinate_ascent_gain
from .measurement import MeasurementMode, simulate_campaign
from .metrics import evaluate_zeta
from .optim import OptimizerConfig
from .scenario import (
    ScenarioConfig,
    config_from_node,
    config_to_node,
    generate_scenario,
)

# recovery-strength schedule; the shorter paper default underfits at the
# spreads these drivers sweep
ALIGN_DEFAULT = OptimizerConfig(iterations=800, lr_start=1e-2, lr_end=1e-5)

TABLE_MODELS = ("gt", "trunc-gt", "aligned", "unaligned")

_CELL_ERRORS = (TfrisError, ArithmeticError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by the fig3/fig4/table1 drivers.

    fig3 sweeps (k_list, snr_list, modes, mc_flags). fig4 and table1
    calibrate once per (seed, variant) with the largest K, the first SNR
    entry, and mode m3, then sweep q_eval_list; table1 additionally sweeps
    the models.
    """

    scenario: ScenarioConfig = ScenarioConfig()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    k_list: tuple[int, ...] = (2, 8, 32)
    snr_list: tuple[float | None, ...] = (26.0,)
    modes: tuple[str, ...] = ("m1", "m2", "m3")
    mc_flags: tuple[bool, ...] = (True, False)
    q_cal: int = 3
    q_eval_list: tuple[int, ...] = (1, 2, 3)
    models: tuple[str, ...] = TABLE_MODELS
    spread: float = 0.3
    align: OptimizerConfig = ALIGN_DEFAULT
    eval_patterns: int = 100
    tx_port: int = 0
    rx_port: int = 0
    target_harmonic: int = 1
    restarts: int = 4

    def __post_init__(self):
        for name in ("seeds", "k_list", "snr_list", "modes", "mc_flags",
                     "q_eval_list", "models"):
            value = tuple(getattr(self, name))
            object.__setattr__(self, name, value)
            if not value:
                raise ValidationError(f"{name} must not be empty")
        if any(int(k) < 1 for k in self.k_list):
            raise ValidationError("campaign sizes must be >= 1")
        for snr in self.snr_list:
            if snr is not None and not np.isfinite(snr):
                raise ValidationError("snr entries must be finite or None")
        object.__setattr__(
            self, "modes",
            tuple(MeasurementMode.parse(m).value for m in self.modes),
        )
        for model in self.models:
            if model not in TABLE_MODELS:
                raise ValidationError(f"unknown benchmark model '{model}'")
        if self.q_cal < 1 or any(q < 1 for q in self.q_eval_list):
            raise ValidationError("slot counts must be >= 1")
        if self.spread < 0:
            raise ValidationError("surrogate spread must be non-negative")
        if self.eval_patterns < 2:
            raise ValidationError("need at least two evaluation patterns")
        if not 0 <= self.tx_port < self.scenario.n_tx:
            raise ValidationError(f"tx port {self.tx_port} out of range")
        if not 0 <= self.rx_port < self.scenario.n_rx:
            raise ValidationError(f"rx port {self.rx_port} out of range")
        if self.target_harmonic not in self.scenario.retained_grid():
            raise ValidationError(
                f"target harmonic {self.target_harmonic} not retained"
            )
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")


def derive_seed(master: int, label: str) -> int:
    """Cell seed = first word of SeedSequence([master, crc32(label)]).

    The crc keeps labels short and ascii-stable; distinct labels give
    independent streams under the same master seed.
    """
    tag = zlib.crc32(label.encode("ascii"))
    return int(np.random.SeedSequence([int(master), tag]).generate_state(1)[0])


def _variant(mc_aware: bool) -> str:
    return "aware" if mc_aware else "unaware"


def _snr_label(snr_db) -> str:
    return "none" if snr_db is None else repr(float(snr_db))


def thread_count(n_jobs: int) -> int:
    """Worker cap: FLOQUET_THREADS when set, else the CPU count."""
    env = os.environ.get("FLOQUET_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ValidationError(
                f"FLOQUET_THREADS must be an integer, got {env!r}"
            ) from None
        if cap < 1:
            raise ValidationError("FLOQUET_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


def _parallel_map(fn, items):
    items = list(items)
    workers = thread_count(len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# shared per-replicate artifacts


def _build_shared(config: ExperimentConfig, keys):
    """Scenario + surrogate proxies per (seed, mc) key; errors are stored
    and surface later in every cell that needs the key."""
    scenarios = {}

    def scenario_for(seed):
        if seed not in scenarios:
            cfg = replace(config.scenario, seed=derive_seed(seed, "scenario"))
            scenarios[seed] = generate_scenario(cfg)
        return scenarios[seed]

    shared = {}
    for seed, mc in keys:
        try:
            scn = scenario_for(seed)
            retained = scn.config.retained_grid()
            prox = surrogate_step1(
                scn, retained, config.spread,
                derive_seed(seed, f"proxies|{_variant(mc)}"), mc,
            )
            trunc = surrogate_step1(scn, retained, 0.0, 0, mc)
            shared[(seed, mc)] = (scn, prox, trunc)
        except _CELL_ERRORS as exc:
            shared[(seed, mc)] = exc
    return shared


def _calibrate(config: ExperimentConfig, shared, key):
    """Align once per (seed, mc) at q_cal with mode m3; returns the shared
    tuple extended by the alignment result, or the captured error."""
    entry = shared[key]
    if isinstance(entry, Exception):
        return entry
    seed, mc = key
    scn, prox, trunc = entry
    snr = config.snr_list[0]
    k = max(config.k_list)
    try:
        camp = simulate_campaign(
            scn, prox.grid, k, config.q_cal, MeasurementMode.M3, snr,
            derive_seed(seed, f"campaign|m3|{_snr_label(snr)}|q{config.q_cal}"),
        )
        acfg = replace(config.align, seed=derive_seed(
            seed, f"align|m3|{_snr_label(snr)}|q{config.q_cal}|{_variant(mc)}"
        ))
        return scn, prox, trunc, align(prox, camp, acfg)
    except _CELL_ERRORS as exc:
        return exc


# ---------------------------------------------------------------------------
# output plumbing


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit(out_dir, name, columns, rows, config) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row[col]) for col in columns])
    jsonio.dump_json({
        "experiment": name,
        "written_at": datetime.now(timezone.utc).isoformat(),
        "rows": len(rows),
        "config": experiment_config_to_node(config),
    }, out / f"{name}_meta.json")
    return csv_path


def _zeta_triplet(row, scn, models, mode, q, n_patterns, seed):
    for name, model in models:
        rep = evaluate_zeta(scn, model, mode, q, n_patterns=n_patterns,
                            seed=seed)
        row[f"{name}_zeta_db"] = float(rep.zeta_db)
        row[f"{name}_infinite"] = rep.infinite


# ---------------------------------------------------------------------------
# drivers

FIG3_COLUMNS = (
    "seed", "k", "snr_db", "mode", "mc_aware", "status",
    "aligned_zeta_db", "aligned_infinite",
    "unaligned_zeta_db", "unaligned_infinite",
    "trunc_gt_zeta_db", "trunc_gt_infinite",
    "align_final_loss", "error",
)


def experiment_fig3(
    config: ExperimentConfig,
    out_dir=None,
    k_list=None,
    snr_list=None,
    modes=None,
    mc_flags=None,
):
    """Accuracy sweep over campaign size, noise level, mode, and variant.

    Each cell simulates its own campaign, aligns, and scores the aligned,
    unaligned, and truncation-only models on unseen patterns. Returns the
    sorted rows; with out_dir set also writes fig3.csv and its meta file.
    """
    k_list = config.k_list if k_list is None else tuple(k_list)
    snr_list = config.snr_list if snr_list is None else tuple(snr_list)
    modes = config.modes if modes is None else tuple(
        MeasurementMode.parse(m).value for m in modes
    )
    mc_flags = config.mc_flags if mc_flags is None else tuple(mc_flags)

    cells = [
        (seed, k, snr, mode, mc)
        for seed in config.seeds
        for k in k_list
        for snr in snr_list
        for mode in modes
        for mc in mc_flags
    ]
    shared = _build_shared(config, {(seed, mc) for seed, _, _, _, mc in cells})

    def job(cell):
        seed, k, snr, mode, mc = cell
        row = dict.fromkeys(FIG3_COLUMNS)
        row.update(seed=seed, k=k, snr_db=snr, mode=mode, mc_aware=mc,
                   status="ok", error="")
        try:
            entry = shared[(seed, mc)]
            if isinstance(entry, Exception):
                raise entry
            scn, prox, trunc = entry
            camp = simulate_campaign(
                scn, prox.grid, k, config.scenario.q,
                MeasurementMode.parse(mode), snr,
                derive_seed(seed, f"campaign|{mode}|{_snr_label(snr)}"),
            )
            acfg = replace(config.align, seed=derive_seed(
                seed,
                f"align|{mode}|{_snr_label(snr)}|k{k}|{_variant(mc)}",
            ))
            res = align(prox, camp, acfg)
            _zeta_triplet(
                row, scn,
                (("aligned", res.aligned), ("unaligned", prox),
                 ("trunc_gt", trunc)),
                mode, config.scenario.q, config.eval_patterns, seed,
            )
            row["align_final_loss"] = res.final_loss
        except _CELL_ERRORS as exc:
            row["status"] = "error"
            row["error"] = str(exc)
        return row

    rows = _parallel_map(job, cells)
    rows.sort(key=lambda r: (
        r["seed"], r["k"], _snr_label(r["snr_db"]), r["mode"],
        _variant(r["mc_aware"]),
    ))
    if out_dir is not None:
        _emit(out_dir, "fig3", FIG3_COLUMNS, rows, config)
    return rows


FIG4_COLUMNS = (
    "seed", "q_cal", "q_eval", "mode", "mc_aware", "status",
    "aligned_zeta_db", "aligned_infinite",
    "unaligned_zeta_db", "unaligned_infinite",
    "trunc_gt_zeta_db", "trunc_gt_infinite",
    "align_final_loss", "error",
)


def experiment_fig4(
    config: ExperimentConfig,
    out_dir=None,
    q_cal=None,
    q_eval_list=None,
):
    """Slot-count generalization: align once, evaluate at other Q.

    Calibration uses mode m3, the largest configured K, and the first SNR
    entry; evaluation redraws patterns at each q_eval without realigning.
    """
    q_cal = config.q_cal if q_cal is None else int(q_cal)
    if q_cal < 1:
        raise ValidationError("q_cal must be >= 1")
    q_eval_list = (
        config.q_eval_list if q_eval_list is None else tuple(q_eval_list)
    )
    cfg = replace(config, q_cal=q_cal, q_eval_list=q_eval_list)

    keys = [(seed, mc) for seed in cfg.seeds for mc in cfg.mc_flags]
    shared = _build_shared(cfg, keys)
    calibrated = dict(zip(
        keys, _parallel_map(lambda key: _calibrate(cfg, shared, key), keys)
    ))

    cells = [
        (seed, mc, q_eval)
        for seed in cfg.seeds
        for mc in cfg.mc_flags
        for q_eval in cfg.q_eval_list
    ]

    def job(cell):
        seed, mc, q_eval = cell
        row = dict.fromkeys(FIG4_COLUMNS)
        row.update(seed=seed, q_cal=q_cal, q_eval=q_eval, mode="m3",
                   mc_aware=mc, status="ok", error="")
        try:
            entry = calibrated[(seed, mc)]
            if isinstance(entry, Exception):
                raise entry
            scn, prox, trunc, res = entry
            _zeta_triplet(
                row, scn,
                (("aligned", res.aligned), ("unaligned", prox),
                 ("trunc_gt", trunc)),
                "m3", q_eval, cfg.eval_patterns, seed,
            )
            row["align_final_loss"] = res.final_loss
        except _CELL_ERRORS as exc:
            row["status"] = "error"
            row["error"] = str(exc)
        return row

    rows = _parallel_map(job, cells)
    rows.sort(key=lambda r: (
        r["seed"], r["q_eval"], _variant(r["mc_aware"]),
    ))
    if out_dir is not None:
        _emit(out_dir, "fig4", FIG4_COLUMNS, rows, cfg)
    return rows


TABLE1_COLUMNS = (
    "seed", "model", "mc_aware", "q_eval", "status",
    "true_gain_db", "predicted_gain_db", "abs_gap_db", "error",
)


def _model_sort_key(row):
    mc = row["mc_aware"]
    return (row["model"], "" if mc is None else _variant(mc))


def experiment_table1(
    config: ExperimentConfig,
    out_dir=None,
    q_eval_list=None,
    models=None,
):
    """Conversion-gain benchmark across models and slot counts.

    Patterns are optimized under each evaluation model and re-scored under
    ground truth. Returns (rows, medians); with out_dir set also writes
    table1.csv and table1.json (rows plus per-cell medians over seeds).
    """
    q_eval_list = (
        config.q_eval_list if q_eval_list is None else tuple(q_eval_list)
    )
    models = config.models if models is None else tuple(models)
    cfg = replace(config, q_eval_list=q_eval_list, models=models)

    variants = [(m, mc) for m in cfg.models if m != "gt"
                for mc in cfg.mc_flags]
    if "gt" in cfg.models:
        variants.append(("gt", None))
    needs_align = any(m == "aligned" for m, _ in variants)

    keys = [(seed, mc) for seed in cfg.seeds for mc in cfg.mc_flags]
    shared = _build_shared(cfg, keys)
    if needs_align:
        calibrated = dict(zip(
            keys,
            _parallel_map(lambda key: _calibrate(cfg, shared, key), keys),
        ))
    else:
        calibrated = {}

    cells = [
        (seed, model, mc, q_eval)
        for seed in cfg.seeds
        for model, mc in variants
        for q_eval in cfg.q_eval_list
    ]

    def job(cell):
        seed, model, mc, q_eval = cell
        row = dict.fromkeys(TABLE1_COLUMNS)
        row.update(seed=seed, model=model, mc_aware=mc, q_eval=q_eval,
                   status="ok", error="")
        try:
            entry = shared[(seed, mc if mc is not None else cfg.mc_flags[0])]
            if isinstance(entry, Exception):
                raise entry
            scn, prox, trunc = entry
            if model == "gt":
                target = scn
            elif model == "trunc-gt":
                target = trunc
            elif model == "unaligned":
                target = prox
            else:
                cal = calibrated[(seed, mc)]
                if isinstance(cal, Exception):
                    raise cal
                target = cal[3].aligned
            # restart seed deliberately excludes the model and variant so
            # every model starts its ascents from the same patterns and the
            # per-seed comparison is paired
            gres = coordinate_ascent_gain(
                target, scn, cfg.tx_port, cfg.rx_port,
                cfg.target_harmonic, q=q_eval, restarts=cfg.restarts,
                rng=derive_seed(seed, f"gain|q{q_eval}"),
            )
            row["true_gain_db"] = gres.true_gain_db
            row["predicted_gain_db"] = gres.predicted_gain_db
            if gres.true_gain_db == gres.predicted_gain_db:
                row["abs_gap_db"] = 0.0
            else:
                row["abs_gap_db"] = abs(
                    gres.true_gain_db - gres.predicted_gain_db
                )
        except _CELL_ERRORS as exc:
            row["status"] = "error"
            row["error"] = str(exc)
        return row

    rows = _parallel_map(job, cells)
    rows.sort(key=lambda r: (r["seed"],) + _model_sort_key(r) + (r["q_eval"],))

    medians = []
    for model, mc in sorted(variants, key=lambda v: (
        v[0], "" if v[1] is None else _variant(v[1])
    )):
        for q_eval in cfg.q_eval_list:
            ok = [
                r for r in rows
                if r["model"] == model and r["mc_aware"] == mc
                and r["q_eval"] == q_eval and r["status"] == "ok"
            ]
            if not ok:
                continue
            medians.append({
                "model": model,
                "mc_aware": mc,
                "q_eval": q_eval,
                "n": len(ok),
                "median_true_gain_db": float(
                    np.median([r["true_gain_db"] for r in ok])
                ),
                "median_abs_gap_db": float(
                    np.median([r["abs_gap_db"] for r in ok])
                ),
            })

    if out_dir is not None:
        _emit(out_dir, "table1", TABLE1_COLUMNS, rows, cfg)
        jsonio.dump_json(
            {"rows": rows, "medians": medians},
            Path(out_dir) / "table1.json",
        )
    return rows, medians


# ---------------------------------------------------------------------------
# config file format


def experiment_config_to_node(config: ExperimentConfig) -> dict:
    return {
        "scenario": config_to_node(config.scenario),
        "seeds": list(config.seeds),
        "k_list": list(config.k_list),
        "snr_list": list(config.snr_list),
        "modes": list(config.modes),
        "mc_flags": list(config.mc_flags),
        "q_cal": config.q_cal,
        "q_eval_list": list(config.q_eval_list),
        "models": list(config.models),
        "spread": config.spread,
        "align": optimizer_to_node(config.align),
        "eval_patterns": config.eval_patterns,
        "tx_port": config.tx_port,
        "rx_port": config.rx_port,
        "target_harmonic": config.target_harmonic,
        "restarts": config.restarts,
    }


_EXP_KEYS = (
    "scenario", "seeds", "k_list", "snr_list", "modes", "mc_flags", "q_cal",
    "q_eval_list", "models", "spread", "align", "eval_patterns", "tx_port",
    "rx_port", "target_harmonic", "restarts",
)


def experiment_config_from_node(node, pointer: str) -> ExperimentConfig:
    obj = jsonio.expect_object(node, pointer)
    unknown = set(obj) - set(_EXP_KEYS)
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", pointer)

    def int_list(key):
        items = jsonio.expect_list(
            jsonio.expect_key(obj, key, pointer), f"{pointer}/{key}"
        )
        return tuple(
            jsonio.expect_int(v, f"{pointer}/{key}/{i}")
            for i, v in enumerate(items)
        )

    snr_node = jsonio.expect_list(
        jsonio.expect_key(obj, "snr_list", pointer), f"{pointer}/snr_list"
    )
    snr_list = tuple(
        None if v is None
        else jsonio.expect_number(v, f"{pointer}/snr_list/{i}")
        for i, v in enumerate(snr_node)
    )
    modes_node = jsonio.expect_list(
        jsonio.expect_key(obj, "modes", pointer), f"{pointer}/modes"
    )
    models_node = jsonio.expect_list(
        jsonio.expect_key(obj, "models", pointer), f"{pointer}/models"
    )
    mc_node = jsonio.expect_list(
        jsonio.expect_key(obj, "mc_flags", pointer), f"{pointer}/mc_flags"
    )
    try:
        return ExperimentConfig(
            scenario=config_from_node(
                jsonio.expect_key(obj, "scenario", pointer),
                f"{pointer}/scenario",
            ),
            seeds=int_list("seeds"),
            k_list=int_list("k_list"),
            snr_list=snr_list,
            modes=tuple(
                jsonio.expect_str(m, f"{pointer}/modes/{i}")
                for i, m in enumerate(modes_node)
            ),
            mc_flags=tuple(
                jsonio.expect_bool(v, f"{pointer}/mc_flags/{i}")
                for i, v in enumerate(mc_node)
            ),
            q_cal=jsonio.expect_int(
                jsonio.expect_key(obj, "q_cal", pointer), f"{pointer}/q_cal"
            ),
            q_eval_list=int_list("q_eval_list"),
            models=tuple(
                jsonio.expect_str(m, f"{pointer}/models/{i}")
                for i, m in enumerate(models_node)
            ),
            spread=jsonio.expect_number(
                jsonio.expect_key(obj, "spread", pointer), f"{pointer}/spread"
            ),
            align=optimizer_from_node(
                jsonio.expect_key(obj, "align", pointer), f"{pointer}/align"
            ),
            eval_patterns=jsonio.expect_int(
                jsonio.expect_key(obj, "eval_patterns", pointer),
                f"{pointer}/eval_patterns",
            ),
            tx_port=jsonio.expect_int(
                jsonio.expect_key(obj, "tx_port", pointer),
                f"{pointer}/tx_port",
            ),
            rx_port=jsonio.expect_int(
                jsonio.expect_key(obj, "rx_port", pointer),
                f"{pointer}/rx_port",
            ),
            target_harmonic=jsonio.expect_int(
                jsonio.expect_key(obj, "target_harmonic", pointer),
                f"{pointer}/target_harmonic",
            ),
            restarts=jsonio.expect_int(
                jsonio.expect_key(obj, "restarts", pointer),
                f"{pointer}/restarts",
            ),
        )
    except SchemaError:
        raise
    except ValidationError as exc:
        raise SchemaError(str(exc), pointer) from exc


def save_experiment_config(config: ExperimentConfig, path) -> None:
    jsonio.dump_json(experiment_config_to_node(config), path)


def load_experiment_config(path) -> ExperimentConfig:
    return experiment_config_from_node(jsonio.load_json(path), "")
