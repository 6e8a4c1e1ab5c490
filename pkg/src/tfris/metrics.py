"""Prediction accuracy as a truth-spread to error-spread ratio.

The metric stacks the projected observables of every evaluation pattern
into one long real vector, does the same with the projected errors, and
reports the ratio of their standard deviations, in dB as 20 log10. Complex
entries contribute their real and imaginary parts as separate scalars, so
for circular noise the ratio coincides with conventional SNR.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import inf, log10

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .grid import HarmonicGrid
from .measurement import MeasurementMode, project, random_patterns

_EVAL_TAG = 0x6576616C


@dataclass(frozen=True)
class ZetaReport:
    mode: MeasurementMode
    n_patterns: int
    zeta_linear: float
    zeta_db: float
    infinite: bool
    pattern_errors: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "pattern_errors", tuple(float(e) for e in self.pattern_errors)
        )
        if not self.infinite and not self.zeta_linear > 0:
            raise ValidationError("zeta must be positive unless flagged infinite")


def _real_view(arr: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(arr):
        return np.ascontiguousarray(arr).view(np.float64).ravel()
    return np.asarray(arr, dtype=float).ravel()


def zeta(
    truth_channels, predicted_channels, mode: MeasurementMode | str
) -> ZetaReport:
    """Spread ratio of stacked projected truths to stacked projected errors."""
    if isinstance(mode, str):
        mode = MeasurementMode.parse(mode)
    truth_channels = list(truth_channels)
    predicted_channels = list(predicted_channels)
    if len(truth_channels) != len(predicted_channels):
        raise DimensionMismatchError("channel lists must have equal length")
    if len(truth_channels) < 2:
        raise ValidationError("need at least two evaluation patterns")
    truth_parts = []
    err_parts = []
    pattern_errors = []
    for t, p in zip(truth_channels, predicted_channels):
        pt = project(mode, t)
        pp = project(mode, p)
        if pt.shape != pp.shape:
            raise DimensionMismatchError(
                f"projected shapes differ: {pt.shape} vs {pp.shape}"
            )
        err = _real_view(pt - pp)
        truth_parts.append(_real_view(pt))
        err_parts.append(err)
        pattern_errors.append(float(np.linalg.norm(err)))
    truth_stack = np.concatenate(truth_parts)
    err_stack = np.concatenate(err_parts)
    sd_truth = float(np.std(truth_stack))
    sd_err = float(np.std(err_stack))
    if sd_truth == 0:
        raise ValidationError("truth channels have zero spread")
    if sd_err == 0:
        return ZetaReport(
            mode, len(truth_channels), inf, inf, True, tuple(pattern_errors)
        )
    ratio = sd_truth / sd_err
    return ZetaReport(
        mode,
        len(truth_channels),
        ratio,
        20 * log10(ratio),
        False,
        tuple(pattern_errors),
    )


def evaluate_zeta(
    scenario,
    proxies,
    mode: MeasurementMode | str,
    q: int,
    n_patterns: int = 100,
    seed: int = 0,
    grid: HarmonicGrid | None = None,
) -> ZetaReport:
    """Zeta of proxy predictions on unseen random patterns.

    The evaluation stream is derived from the seed with a tag disjoint
    from the campaign streams, so patterns are unseen by construction for
    any campaign of the same seed. Truth channels carry the scenario's
    control delays; predictions are delay-free by the proxy convention.
    """
    from .estimation import predict_channel
    from .measurement import simulate_channel

    grid = proxies.grid if grid is None else grid
    rng = np.random.default_rng(np.random.SeedSequence([seed, _EVAL_TAG]))
    patterns = random_patterns(
        n_patterns,
        scenario.config.n_ris,
        q,
        scenario.config.p,
        rng,
        delays=scenario.delays,
    )
    truths = [simulate_channel(scenario, pat, grid) for pat in patterns]
    preds = [predict_channel(proxies, pat, grid) for pat in patterns]
    return zeta(truths, preds, mode)
