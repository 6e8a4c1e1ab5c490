"""Synthetic ground-truth scenarios and their canonical file format.

A scenario bundles everything the simulator needs: a passive static
scattering model with slow first-order dispersion across the harmonic
grid, a dispersive programmable load set placed on a loop inside the unit
disk, and per-element control delays. Generation is deterministic in the
config seed so scenarios double as reproducible test fixtures.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import jsonio
from .errors import DimensionMismatchError, SchemaError, ValidationError
from .floquet import LoadSet, StaticScatterModel
from .grid import HarmonicGrid, PortPartition


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the synthetic scenario generator.

    ``gt_harmonics`` is the simulated ground-truth harmonic count and
    ``retained_harmonics`` the subset available to the estimator; both are
    odd. ``dispersion_scale`` controls how quickly the static model and
    loads drift across harmonics, ``delay_scale`` the control delay range
    as a fraction of the modulation period.
    """

    f0: float = 135e9
    fm: float = 125e6
    gt_harmonics: int = 201
    retained_harmonics: int = 11
    n_tx: int = 4
    n_rx: int = 4
    n_ris: int = 10
    p: int = 8
    q: int = 3
    reciprocal: bool = True
    passivity_margin: float = 0.05
    dispersion_scale: float = 1.0
    delay_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gt_harmonics % 2 == 0 or self.retained_harmonics % 2 == 0:
            raise ValidationError("harmonic counts must be odd")
        if self.retained_harmonics > self.gt_harmonics:
            raise ValidationError(
                "retained harmonics must fit inside the ground-truth grid"
            )
        if min(self.n_tx, self.n_rx, self.n_ris) < 1:
            raise ValidationError("all port counts must be >= 1")
        if self.p < 2:
            raise ValidationError("need at least two load states")
        if self.q < 1:
            raise ValidationError("need at least one slot per period")
        if not 0 < self.passivity_margin < 1:
            raise ValidationError("passivity margin must lie in (0, 1)")
        if self.dispersion_scale < 0:
            raise ValidationError("dispersion scale must be non-negative")
        if not 0 <= self.delay_scale < 1:
            raise ValidationError("delay scale must lie in [0, 1)")

    def gt_grid(self) -> HarmonicGrid:
        return HarmonicGrid.centered(self.f0, self.fm, self.gt_harmonics)

    def retained_grid(self) -> HarmonicGrid:
        return HarmonicGrid.centered(self.f0, self.fm, self.retained_harmonics)

    def partition(self) -> PortPartition:
        return PortPartition.contiguous(self.n_tx, self.n_rx, self.n_ris)


@dataclass(frozen=True)
class Scenario:
    """Full synthetic ground truth: static model, load set, control delays."""

    config: ScenarioConfig
    model: StaticScatterModel
    loads: LoadSet
    delays: np.ndarray

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=float)
        object.__setattr__(self, "delays", delays)
        if self.model.grid != self.config.gt_grid():
            raise DimensionMismatchError("model grid disagrees with config")
        if self.loads.harmonics != self.model.grid.harmonics:
            raise DimensionMismatchError("loads do not cover the model grid")
        if self.loads.p != self.config.p:
            raise DimensionMismatchError("load state count disagrees with config")
        if delays.shape != (self.config.n_ris,):
            raise DimensionMismatchError(
                f"delays must have length {self.config.n_ris}, got {delays.shape}"
            )


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.swapaxes(-1, -2)) / 2


def _cap_spectral_norm(m: np.ndarray, limit: float) -> np.ndarray:
    smax = np.linalg.norm(m, 2)
    return m * (limit / smax) if smax > limit else m


def generate_scenario(config: ScenarioConfig, rng=None) -> Scenario:
    """Draw a scenario honoring passivity, reciprocity, and slow dispersion."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    grid = config.gt_grid()
    part = config.partition()
    n = part.n
    limit = 1 - config.passivity_margin

    def cmat(*shape):
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    s0 = cmat(n, n)
    if config.reciprocal:
        s0 = _symmetrize(s0)
    s0 *= limit / np.linalg.norm(s0, 2)
    # first-order dispersion direction, shared by all harmonics
    sp = _symmetrize(cmat(n, n))
    sp *= limit / np.linalg.norm(sp, 2)
    ratio = config.fm / config.f0
    matrices = np.empty((grid.n, n, n), dtype=complex)
    for i, h in enumerate(grid.harmonics):
        matrices[i] = _cap_spectral_norm(
            s0 + (h * ratio) * config.dispersion_scale * sp, limit
        )
    model = StaticScatterModel(
        grid, part, matrices, reciprocal=config.reciprocal
    )

    # load states on a loop: distinct phases, magnitudes within the band
    phases = 2 * np.pi * np.arange(config.p) / config.p
    phases += rng.uniform(-np.pi / config.p, np.pi / config.p, config.p) * 0.5
    radii = rng.uniform(0.7, 0.95, config.p)
    base = radii * np.exp(1j * phases)
    drift = np.exp(2j * np.pi * rng.random(config.p))
    hs = np.array(grid.harmonics)
    rho = base[:, None] + (hs[None, :] * ratio) * config.dispersion_scale * drift[:, None]
    mag = np.abs(rho)
    rho = np.where(mag > 0.99, rho * 0.99 / mag, rho)
    loads = LoadSet(rho, grid.harmonics)

    delays = rng.uniform(0, config.delay_scale * grid.tm, size=config.n_ris)
    return Scenario(config, model, loads, delays)


_CONFIG_FIELDS = tuple(ScenarioConfig.__dataclass_fields__)


def config_to_node(config: ScenarioConfig) -> dict:
    return asdict(config)


def config_from_node(node, pointer: str) -> ScenarioConfig:
    obj = jsonio.expect_object(node, pointer)
    unknown = set(obj) - set(_CONFIG_FIELDS)
    if unknown:
        raise SchemaError(f"unknown config keys {sorted(unknown)}", pointer)
    kwargs = {}
    for name in _CONFIG_FIELDS:
        if name not in obj:
            continue
        ptr = f"{pointer}/{name}"
        val = obj[name]
        if name == "reciprocal":
            kwargs[name] = jsonio.expect_bool(val, ptr)
        elif name in ("gt_harmonics", "retained_harmonics", "n_tx", "n_rx",
                      "n_ris", "p", "q", "seed"):
            kwargs[name] = jsonio.expect_int(val, ptr)
        else:
            kwargs[name] = jsonio.expect_number(val, ptr)
    try:
        return ScenarioConfig(**kwargs)
    except ValidationError as exc:
        raise SchemaError(str(exc), pointer) from exc


def save_scenario(scenario: Scenario, path) -> None:
    payload = {
        "config": config_to_node(scenario.config),
        "static_model": jsonio.encode_complex_array(scenario.model.matrices),
        "loads": jsonio.encode_complex_array(scenario.loads.rho),
        "delays_s": jsonio.encode_real_array(scenario.delays),
    }
    jsonio.dump_json(payload, path)


def load_scenario(path) -> Scenario:
    root = jsonio.expect_object(jsonio.load_json(path), "")
    config = config_from_node(jsonio.expect_key(root, "config", ""), "/config")
    grid = config.gt_grid()
    n = config.partition().n
    matrices = jsonio.decode_complex_array(
        jsonio.expect_key(root, "static_model", ""),
        "/static_model",
        (grid.n, n, n),
    )
    rho = jsonio.decode_complex_array(
        jsonio.expect_key(root, "loads", ""), "/loads", (config.p, grid.n)
    )
    delays = jsonio.decode_real_array(
        jsonio.expect_key(root, "delays_s", ""), "/delays_s", (config.n_ris,)
    )
    try:
        model = StaticScatterModel(
            grid, config.partition(), matrices, reciprocal=config.reciprocal
        )
        loads = LoadSet(rho, grid.harmonics)
        return Scenario(config, model, loads, delays)
    except ValidationError as exc:
        raise SchemaError(str(exc), "") from exc


def with_zero_delays(scenario: Scenario) -> Scenario:
    """Same scenario with all control delays removed."""
    return replace(scenario, delays=np.zeros_like(scenario.delays))
