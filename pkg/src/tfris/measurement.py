"""Measurement operators, noise injection, and simulated campaigns.

Three observables are supported: the complex fundamental-to-fundamental
block (M1), the entrywise modulus of the full multi-harmonic channel (M2),
and the full complex multi-harmonic channel (M3). Noise is circular
complex Gaussian added to the complex channel before projection, with a
variance set by the target SNR relative to a scenario-derived reference
power.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import DimensionMismatchError, SchemaError, ValidationError
from .floquet import (
    FloquetChannel,
    ModulationPattern,
    assemble_phi,
    end_to_end_channel,
    truncate,
)
from .grid import HarmonicGrid
from .scenario import Scenario

# fixed tag deriving the pilot stream from the scenario seed, so the SNR
# reference is a property of the scenario alone, not of any campaign
_PILOT_TAG = 0x70696C74


class MeasurementMode(enum.Enum):
    M1 = "m1"
    M2 = "m2"
    M3 = "m3"

    @classmethod
    def parse(cls, text: str) -> "MeasurementMode":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValidationError(f"unknown measurement mode '{text}'") from None


def project(mode: MeasurementMode, channel: FloquetChannel) -> np.ndarray:
    """Apply the measurement operator to an end-to-end channel."""
    if not isinstance(mode, MeasurementMode):
        raise ValidationError(f"mode must be a MeasurementMode, got {mode!r}")
    if mode == MeasurementMode.M1:
        return channel.block(0, 0).copy()
    if mode == MeasurementMode.M2:
        return np.abs(channel.matrix)
    return channel.matrix.copy()


def real_scalar_count(mode: MeasurementMode, n_harm: int, n_rx: int, n_tx: int) -> int:
    """Real scalars acquired per measurement record."""
    if mode == MeasurementMode.M1:
        return 2 * n_rx * n_tx
    if mode == MeasurementMode.M2:
        return n_harm * n_rx * n_harm * n_tx
    return 2 * n_harm * n_rx * n_harm * n_tx


def add_noise(
    channel: FloquetChannel,
    snr_db: float | None,
    ref_power: float,
    rng: np.random.Generator,
) -> FloquetChannel:
    """Add circular complex Gaussian noise at the given SNR.

    Per-entry noise variance is ref_power * 10^(-snr_db/10); ``None``
    means noiseless and returns the channel unchanged.
    """
    if snr_db is None:
        return channel
    if not np.isfinite(snr_db):
        raise ValidationError("snr_db must be finite; use None for noiseless")
    if ref_power <= 0:
        raise ValidationError("reference power must be positive")
    sigma = np.sqrt(ref_power * 10 ** (-snr_db / 10) / 2)
    shape = channel.matrix.shape
    noise = sigma * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    return FloquetChannel(
        channel.grid, channel.matrix + noise, channel.n_rx, channel.n_tx
    )


def random_patterns(
    k: int,
    n_ris: int,
    q: int,
    p: int,
    rng: np.random.Generator,
    delays: np.ndarray | None = None,
) -> list[ModulationPattern]:
    """K patterns with uniform i.i.d. states; delays are stamped, not drawn."""
    if min(k, n_ris, q, p) < 1:
        raise ValidationError("k, n_ris, q, p must all be >= 1")
    if delays is None:
        delays = np.zeros(n_ris)
    return [
        ModulationPattern(rng.integers(1, p + 1, size=(n_ris, q)), delays)
        for _ in range(k)
    ]


def simulate_channel(
    scenario: Scenario, pattern: ModulationPattern, retained: HarmonicGrid
) -> FloquetChannel:
    """Ground-truth channel on the full grid, truncated to the retained one."""
    phi = assemble_phi(pattern, scenario.loads, scenario.model.grid)
    full = end_to_end_channel(scenario.model, phi)
    if retained == scenario.model.grid:
        return full
    return truncate(full, retained)


def pilot_reference_power(
    scenario: Scenario,
    retained: HarmonicGrid,
    q: int,
    n_patterns: int = 50,
) -> float:
    """Mean per-entry channel power over a noiseless pilot ensemble.

    The pilot stream is derived from the scenario seed only, so every
    campaign of the same scenario shares one SNR reference.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([scenario.config.seed, _PILOT_TAG])
    )
    total, count = 0.0, 0
    for pattern in random_patterns(
        n_patterns, scenario.config.n_ris, q, scenario.config.p, rng,
        scenario.delays,
    ):
        h = simulate_channel(scenario, pattern, retained)
        total += float(np.sum(np.abs(h.matrix) ** 2))
        count += h.matrix.size
    return total / count


@dataclass(frozen=True)
class CampaignRecord:
    pattern: ModulationPattern
    observation: np.ndarray


@dataclass(frozen=True)
class Campaign:
    """K measured records of modulated patterns on a retained grid."""

    mode: MeasurementMode
    snr_db: float | None
    grid: HarmonicGrid
    n_rx: int
    n_tx: int
    records: tuple[CampaignRecord, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if len(self.records) < 1:
            raise ValidationError("a campaign needs at least one record")
        big = (self.grid.n * self.n_rx, self.grid.n * self.n_tx)
        for i, rec in enumerate(self.records):
            obs = rec.observation
            if self.mode == MeasurementMode.M1:
                ok = obs.shape == (self.n_rx, self.n_tx) and np.iscomplexobj(obs)
            elif self.mode == MeasurementMode.M2:
                ok = obs.shape == big and not np.iscomplexobj(obs)
            else:
                ok = obs.shape == big and np.iscomplexobj(obs)
            if not ok:
                raise DimensionMismatchError(
                    f"record {i}: observation shape {obs.shape} does not "
                    f"match mode {self.mode.value}"
                )

    @property
    def k(self) -> int:
        return len(self.records)

    @property
    def q(self) -> int:
        return self.records[0].pattern.q


def simulate_campaign(
    scenario: Scenario,
    retained: HarmonicGrid,
    k: int,
    q: int,
    mode: MeasurementMode,
    snr_db: float | None,
    seed: int,
    pilot_patterns: int = 50,
) -> Campaign:
    """Draw K random patterns, simulate, truncate, add noise, project.

    One independent noise stream is derived per record, so the campaign is
    identical however the records are computed.
    """
    if not retained.is_subgrid_of(scenario.model.grid):
        raise ValidationError("retained grid must be a subgrid of ground truth")
    root = np.random.SeedSequence([seed, 0x63616D70])
    streams = root.spawn(k + 1)
    patterns = random_patterns(
        k, scenario.config.n_ris, q, scenario.config.p,
        np.random.default_rng(streams[0]), scenario.delays,
    )
    ref = (
        pilot_reference_power(scenario, retained, q, pilot_patterns)
        if snr_db is not None
        else 1.0
    )
    records = []
    for i, pattern in enumerate(patterns):
        clean = simulate_channel(scenario, pattern, retained)
        noisy = add_noise(clean, snr_db, ref, np.random.default_rng(streams[i + 1]))
        records.append(CampaignRecord(pattern, project(mode, noisy)))
    return Campaign(
        mode, snr_db, retained, scenario.config.n_rx, scenario.config.n_tx,
        tuple(records), seed,
    )


@dataclass(frozen=True)
class StaticCampaign:
    """Q=1 calibration records at one harmonic: configs and complex blocks."""

    harmonic: int
    configs: np.ndarray
    observations: np.ndarray
    snr_db: float | None
    seed: int

    def __post_init__(self):
        c = np.asarray(self.configs, dtype=int)
        o = np.asarray(self.observations, dtype=complex)
        object.__setattr__(self, "configs", c)
        object.__setattr__(self, "observations", o)
        if c.ndim != 2 or o.ndim != 3 or c.shape[0] != o.shape[0]:
            raise DimensionMismatchError(
                "configs (K1, N_S) and observations (K1, N_R, N_T) required"
            )

    @property
    def k1(self) -> int:
        return self.configs.shape[0]


def simulate_static_campaigns(
    scenario: Scenario,
    retained: HarmonicGrid,
    k1: int,
    snr_db: float | None,
    seed: int,
    pilot_patterns: int = 50,
) -> tuple[StaticCampaign, ...]:
    """One Q=1 campaign per retained harmonic, sharing the configurations.

    A static pattern produces a block-diagonal channel, so a single
    simulation yields every harmonic's complex block at once.
    """
    root = np.random.SeedSequence([seed, 0x73746174])
    streams = root.spawn(k1 + 1)
    rng = np.random.default_rng(streams[0])
    configs = rng.integers(
        1, scenario.config.p + 1, size=(k1, scenario.config.n_ris)
    )
    ref = (
        pilot_reference_power(scenario, retained, 1, pilot_patterns)
        if snr_db is not None
        else 1.0
    )
    blocks = {h: [] for h in retained.harmonics}
    for i in range(k1):
        pattern = ModulationPattern(configs[i][:, None], scenario.delays)
        clean = simulate_channel(scenario, pattern, retained)
        noisy = add_noise(clean, snr_db, ref, np.random.default_rng(streams[i + 1]))
        for h in retained.harmonics:
            blocks[h].append(noisy.block(h, h))
    return tuple(
        StaticCampaign(h, configs, np.stack(blocks[h]), snr_db, seed)
        for h in retained.harmonics
    )


def save_campaign(campaign: Campaign, path) -> None:
    records = []
    for rec in campaign.records:
        obs = rec.observation
        records.append({
            "states": rec.pattern.states.tolist(),
            "delays_s": jsonio.encode_real_array(rec.pattern.delays),
            "observation": (
                jsonio.encode_real_array(obs)
                if campaign.mode == MeasurementMode.M2
                else jsonio.encode_complex_array(obs)
            ),
        })
    jsonio.dump_json({
        "mode": campaign.mode.value,
        "snr_db": campaign.snr_db,
        "grid": jsonio.grid_to_node(campaign.grid),
        "n_rx": campaign.n_rx,
        "n_tx": campaign.n_tx,
        "seed": campaign.seed,
        "records": records,
    }, path)


def load_campaign(path) -> Campaign:
    root = jsonio.expect_object(jsonio.load_json(path), "")
    mode = MeasurementMode.parse(
        jsonio.expect_str(jsonio.expect_key(root, "mode", ""), "/mode")
    )
    snr_node = jsonio.expect_key(root, "snr_db", "")
    snr_db = None if snr_node is None else jsonio.expect_number(snr_node, "/snr_db")
    grid = jsonio.grid_from_node(jsonio.expect_key(root, "grid", ""), "/grid")
    n_rx = jsonio.expect_int(jsonio.expect_key(root, "n_rx", ""), "/n_rx")
    n_tx = jsonio.expect_int(jsonio.expect_key(root, "n_tx", ""), "/n_tx")
    seed = jsonio.expect_int(jsonio.expect_key(root, "seed", ""), "/seed")
    recs_node = jsonio.expect_list(jsonio.expect_key(root, "records", ""), "/records")
    big = (grid.n * n_rx, grid.n * n_tx)
    records = []
    for i, node in enumerate(recs_node):
        ptr = f"/records/{i}"
        obj = jsonio.expect_object(node, ptr)
        states_node = jsonio.expect_list(
            jsonio.expect_key(obj, "states", ptr), f"{ptr}/states"
        )
        if not states_node or not isinstance(states_node[0], list):
            raise SchemaError("states must be a 2-d array", f"{ptr}/states")
        n_ris, q = len(states_node), len(states_node[0])
        states = np.asarray(
            jsonio.decode_real_array(states_node, f"{ptr}/states", (n_ris, q)),
            dtype=int,
        )
        delays = jsonio.decode_real_array(
            jsonio.expect_key(obj, "delays_s", ptr), f"{ptr}/delays_s", (n_ris,)
        )
        obs_node = jsonio.expect_key(obj, "observation", ptr)
        if mode == MeasurementMode.M1:
            obs = jsonio.decode_complex_array(
                obs_node, f"{ptr}/observation", (n_rx, n_tx)
            )
        elif mode == MeasurementMode.M2:
            obs = jsonio.decode_real_array(obs_node, f"{ptr}/observation", big)
        else:
            obs = jsonio.decode_complex_array(obs_node, f"{ptr}/observation", big)
        try:
            pattern = ModulationPattern(states, delays)
        except ValidationError as exc:
            raise SchemaError(str(exc), ptr) from exc
        records.append(CampaignRecord(pattern, obs))
    try:
        return Campaign(mode, snr_db, grid, n_rx, n_tx, tuple(records), seed)
    except ValidationError as exc:
        raise SchemaError(str(exc), "") from exc
