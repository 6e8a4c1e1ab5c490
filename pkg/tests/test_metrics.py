"""Accuracy metric tests: spread ratios, edge flags, evaluation harness."""

import numpy as np
import pytest

from tfris.errors import DimensionMismatchError, ValidationError
from tfris.estimation import surrogate_step1
from tfris.floquet import FloquetChannel
from tfris.grid import HarmonicGrid
from tfris.measurement import MeasurementMode
from tfris.metrics import ZetaReport, evaluate_zeta, zeta
from tfris.scenario import ScenarioConfig, generate_scenario

GRID = HarmonicGrid.centered(135e9, 125e6, 3)


def channels(rng, n, n_rx=2, n_tx=2):
    out = []
    for _ in range(n):
        m = rng.normal(size=(3 * n_rx, 3 * n_tx)) * 0.1
        m = m + 1j * rng.normal(size=m.shape) * 0.1
        out.append(FloquetChannel(GRID, m, n_rx, n_tx))
    return out


def shifted(chans, noise):
    return [
        FloquetChannel(GRID, c.matrix + e, c.n_rx, c.n_tx)
        for c, e in zip(chans, noise)
    ]


class TestZeta:
    def test_exact_prediction_flagged_infinite(self, rng):
        truth = channels(rng, 3)
        rep = zeta(truth, truth, MeasurementMode.M3)
        assert rep.infinite
        assert rep.zeta_linear == np.inf and rep.zeta_db == np.inf
        assert rep.pattern_errors == (0.0, 0.0, 0.0)

    def test_zero_predictor_scores_zero_db(self, rng):
        truth = channels(rng, 4)
        zeros = [
            FloquetChannel(GRID, np.zeros_like(c.matrix), 2, 2) for c in truth
        ]
        rep = zeta(truth, zeros, MeasurementMode.M3)
        assert rep.zeta_linear == 1.0
        assert rep.zeta_db == 0.0

    def test_constructed_noise_ratio(self, rng):
        # rescale the perturbation so the stacked error spread is exactly a
        # tenth of the stacked truth spread: zeta must come out at 20 dB
        truth = channels(rng, 5)
        noise = [rng.normal(size=c.matrix.shape)
                 + 1j * rng.normal(size=c.matrix.shape) for c in truth]
        t_stack = np.concatenate(
            [np.ascontiguousarray(c.matrix).view(np.float64).ravel()
             for c in truth]
        )
        n_stack = np.concatenate(
            [np.ascontiguousarray(e).view(np.float64).ravel() for e in noise]
        )
        scale = (np.std(t_stack) / 10) / np.std(n_stack)
        rep = zeta(truth, shifted(truth, [-scale * e for e in noise]),
                   MeasurementMode.M3)
        assert rep.zeta_linear == pytest.approx(10.0, rel=1e-12)
        assert rep.zeta_db == pytest.approx(20.0, abs=1e-10)

    def test_halving_noise_adds_six_db(self, rng):
        truth = channels(rng, 4)
        noise = [0.03 * (rng.normal(size=c.matrix.shape)
                         + 1j * rng.normal(size=c.matrix.shape))
                 for c in truth]
        full = zeta(truth, shifted(truth, noise), MeasurementMode.M3)
        half = zeta(truth, shifted(truth, [e / 2 for e in noise]),
                    MeasurementMode.M3)
        assert half.zeta_db - full.zeta_db == pytest.approx(
            20 * np.log10(2), abs=1e-9
        )

    def test_mode_projects_before_comparing(self, rng):
        # perturbation confined to off-center blocks is invisible to the
        # center-block projection
        truth = channels(rng, 3)
        noise = []
        for c in truth:
            e = 0.05 * (rng.normal(size=c.matrix.shape)
                        + 1j * rng.normal(size=c.matrix.shape))
            e[2:4, 2:4] = 0
            noise.append(e)
        preds = shifted(truth, noise)
        assert zeta(truth, preds, MeasurementMode.M1).infinite
        assert not zeta(truth, preds, MeasurementMode.M3).infinite
        assert not zeta(truth, preds, "m2").infinite

    def test_string_mode_parsed(self, rng):
        truth = channels(rng, 3)
        rep = zeta(truth, truth, "M3")
        assert rep.mode == MeasurementMode.M3
        with pytest.raises(ValidationError):
            zeta(truth, truth, "m9")

    def test_length_mismatch(self, rng):
        truth = channels(rng, 3)
        with pytest.raises(DimensionMismatchError):
            zeta(truth, truth[:2], MeasurementMode.M3)

    def test_needs_two_patterns(self, rng):
        truth = channels(rng, 1)
        with pytest.raises(ValidationError):
            zeta(truth, truth, MeasurementMode.M3)

    def test_shape_mismatch(self, rng):
        truth = channels(rng, 2)
        wide = [
            FloquetChannel(GRID, np.zeros((6, 9), dtype=complex), 2, 3)
            for _ in truth
        ]
        with pytest.raises(DimensionMismatchError):
            zeta(truth, wide, MeasurementMode.M3)

    def test_zero_truth_rejected(self):
        flat = [
            FloquetChannel(GRID, np.zeros((6, 6), dtype=complex), 2, 2)
            for _ in range(2)
        ]
        with pytest.raises(ValidationError):
            zeta(flat, flat, MeasurementMode.M3)

    def test_report_positivity(self):
        with pytest.raises(ValidationError):
            ZetaReport(MeasurementMode.M3, 2, 0.0, -np.inf, False, ())


SMALL = ScenarioConfig(
    gt_harmonics=3, retained_harmonics=3, n_tx=2, n_rx=2, n_ris=3, p=4,
    q=3, delay_scale=0.0, seed=11,
)

DELAYED = ScenarioConfig(
    gt_harmonics=3, retained_harmonics=3, n_tx=2, n_rx=2, n_ris=3, p=4,
    q=3, delay_scale=0.4, seed=11,
)


class TestEvaluateZeta:
    def test_exact_proxies_score_infinite(self):
        scn = generate_scenario(SMALL)
        prox = surrogate_step1(scn, SMALL.retained_grid(), 0.0, 0)
        for q in (1, 3):
            rep = evaluate_zeta(scn, prox, "m3", q, n_patterns=5, seed=1)
            assert rep.infinite

    def test_truth_carries_control_delays(self):
        # predictions are delay-free by convention, so unabsorbed scenario
        # delays must register as error
        scn = generate_scenario(DELAYED)
        prox = surrogate_step1(scn, DELAYED.retained_grid(), 0.0, 0)
        rep = evaluate_zeta(scn, prox, "m3", 3, n_patterns=5, seed=1)
        assert not rep.infinite
        assert rep.zeta_db < 60

    def test_deterministic_and_seed_sensitive(self):
        scn = generate_scenario(SMALL)
        prox = surrogate_step1(scn, SMALL.retained_grid(), 0.2, 7)
        a = evaluate_zeta(scn, prox, "m3", 3, n_patterns=6, seed=5)
        b = evaluate_zeta(scn, prox, "m3", 3, n_patterns=6, seed=5)
        c = evaluate_zeta(scn, prox, "m3", 3, n_patterns=6, seed=6)
        assert a.zeta_linear == b.zeta_linear
        assert a.pattern_errors == b.pattern_errors
        assert a.zeta_linear != c.zeta_linear

    def test_unseen_by_construction(self):
        # the evaluation stream must not replay campaign patterns of the
        # same seed
        from tfris.measurement import simulate_campaign

        scn = generate_scenario(SMALL)
        camp = simulate_campaign(
            scn, SMALL.retained_grid(), 4, 3, MeasurementMode.M3, None, 5
        )
        rng = np.random.default_rng(np.random.SeedSequence([5, 0x6576616C]))
        from tfris.measurement import random_patterns

        evals = random_patterns(4, 3, 3, 4, rng, delays=scn.delays)
        camp_states = {rec.pattern.states.tobytes() for rec in camp.records}
        eval_states = {pat.states.tobytes() for pat in evals}
        assert camp_states.isdisjoint(eval_states)

    def test_pattern_count_respected(self):
        scn = generate_scenario(SMALL)
        prox = surrogate_step1(scn, SMALL.retained_grid(), 0.2, 7)
        rep = evaluate_zeta(scn, prox, "m1", 3, n_patterns=9, seed=0)
        assert rep.n_patterns == 9
        assert len(rep.pattern_errors) == 9
        assert rep.mode == MeasurementMode.M1
