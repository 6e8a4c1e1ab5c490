"""Proxy prediction, step-1 fitting, and gauge alignment tests.

The gradient checks compare the batched engine against central finite
differences of the reference loss route, which composes gauges explicitly
and predicts record by record; the two share no code beyond the primitives.
"""

import numpy as np
import pytest

from tfris.errors import (
    DimensionMismatchError,
    GridMismatchError,
    NumericalError,
    SchemaError,
    ValidationError,
    VariantMismatchError,
)
from tfris.estimation import (
    AlignmentResult,
    Step1Result,
    align,
    alignment_gradient,
    alignment_loss,
    coords_from_gauges,
    gauges_from_coords,
    load_alignment,
    predict_channel,
    save_alignment,
    step1_estimate,
    surrogate_step1,
)
from tfris.floquet import ModulationPattern, assemble_phi, end_to_end_channel
from tfris.gauges import (
    GaugeParams,
    ProxySet,
    compose_set,
    load_proxies,
    random_gauge,
    save_proxies,
)
from tfris.measurement import (
    Campaign,
    CampaignRecord,
    MeasurementMode,
    project,
    simulate_campaign,
    simulate_static_campaigns,
)
from tfris.metrics import evaluate_zeta
from tfris.optim import OptimizerConfig
from tfris.scenario import ScenarioConfig, generate_scenario

SMALL = ScenarioConfig(
    gt_harmonics=3, retained_harmonics=3, n_tx=2, n_rx=2, n_ris=3, p=4,
    q=3, delay_scale=0.0, seed=11,
)

MODES = (MeasurementMode.M1, MeasurementMode.M2, MeasurementMode.M3)


@pytest.fixture(scope="module")
def scn():
    return generate_scenario(SMALL)


@pytest.fixture(scope="module")
def retained():
    return SMALL.retained_grid()


@pytest.fixture(scope="module")
def truth_proxies(scn, retained):
    return surrogate_step1(scn, retained, 0.0, 0)


def identity_gauges(proxies):
    return tuple(
        GaugeParams.identity(proxies.n_ris, proxies.mc_aware)
        for _ in range(proxies.grid.n)
    )


def jittered_gauges(proxies, spread, seed):
    rng = np.random.default_rng(seed)
    return tuple(
        random_gauge(rng, proxies.n_ris, spread, proxies.mc_aware)
        for _ in range(proxies.grid.n)
    )


class TestPredictChannel:
    def test_truth_proxies_reproduce_simulator(self, scn, retained, truth_proxies):
        rng = np.random.default_rng(5)
        for q in (1, 3):
            pat = ModulationPattern(
                rng.integers(1, 5, size=(3, q)), np.zeros(3)
            )
            truth = end_to_end_channel(
                scn.model, assemble_phi(pat, scn.loads, retained)
            )
            pred = predict_channel(truth_proxies, pat)
            assert np.array_equal(pred.matrix, truth.matrix)

    def test_pattern_delays_ignored(self, truth_proxies, retained):
        rng = np.random.default_rng(6)
        states = rng.integers(1, 5, size=(3, 2))
        a = predict_channel(truth_proxies, ModulationPattern(states, np.zeros(3)))
        delays = rng.uniform(0, retained.tm / 2, size=3)
        b = predict_channel(truth_proxies, ModulationPattern(states, delays))
        assert np.array_equal(a.matrix, b.matrix)

    def test_subgrid_selection(self, scn, truth_proxies):
        sub = ScenarioConfig(
            gt_harmonics=3, retained_harmonics=1, n_tx=2, n_rx=2, n_ris=3,
            p=4, seed=11,
        ).retained_grid()
        pat = ModulationPattern(np.full((3, 1), 2), np.zeros(3))
        chan = predict_channel(truth_proxies, pat, sub)
        assert chan.matrix.shape == (2, 2)
        full = predict_channel(truth_proxies, pat)
        assert np.allclose(chan.matrix, full.block(0, 0), atol=1e-15)

    def test_wrong_element_count(self, truth_proxies):
        pat = ModulationPattern(np.full((4, 1), 1), np.zeros(4))
        with pytest.raises(ValidationError):
            predict_channel(truth_proxies, pat)

    def test_state_beyond_table(self, truth_proxies):
        pat = ModulationPattern(np.full((3, 1), 5), np.zeros(3))
        with pytest.raises(ValidationError):
            predict_channel(truth_proxies, pat)


class TestSurrogate:
    def test_deterministic(self, scn, retained):
        a = surrogate_step1(scn, retained, 0.3, 7)
        b = surrogate_step1(scn, retained, 0.3, 7)
        for pa, pb in zip(a.params, b.params):
            assert np.array_equal(pa.a, pb.a)
            assert np.array_equal(pa.rho, pb.rho)

    def test_zero_spread_is_exact(self, scn, retained, truth_proxies):
        part = SMALL.partition()
        for h in retained.harmonics:
            theta = truth_proxies.at_harmonic(h)
            assert np.array_equal(theta.hd, scn.model.block(h, part.rx, part.tx))
            assert np.array_equal(
                theta.gamma, scn.model.block(h, part.ris, part.ris)
            )
            assert np.array_equal(theta.rho, scn.loads.at_harmonic(h))

    def test_spread_degrades_zeta(self, scn, retained, truth_proxies):
        clean = evaluate_zeta(scn, truth_proxies, "m3", 3, n_patterns=8, seed=2)
        rough = evaluate_zeta(
            scn, surrogate_step1(scn, retained, 0.3, 7), "m3", 3,
            n_patterns=8, seed=2,
        )
        assert clean.infinite
        assert not rough.infinite
        assert rough.zeta_db < 40

    def test_unaware_variant(self, scn, retained):
        prox = surrogate_step1(scn, retained, 0.1, 3, mc_aware=False)
        assert not prox.mc_aware
        assert all(np.all(t.gamma == 0) for t in prox.params)


class TestCoordinates:
    def test_round_trip(self, truth_proxies):
        gauges = jittered_gauges(truth_proxies, 0.2, 9)
        x = coords_from_gauges(gauges)
        back = gauges_from_coords(x, 3, 3, True)
        for a, b in zip(gauges, back):
            assert np.array_equal(a.d, b.d)
            assert a.gamma == b.gamma and a.third == b.third

    def test_layout(self):
        phi = GaugeParams(
            np.array([1 + 2j, 3 + 4j]), 5 + 6j, 7 + 8j, True
        )
        x = coords_from_gauges((phi,))
        assert np.array_equal(x, [1, 3, 2, 4, 5, 6, 7, 8])

    def test_bad_length(self):
        with pytest.raises(DimensionMismatchError):
            gauges_from_coords(np.zeros(11), 2, 1, True)


def make_campaign(scn, retained, mode, k, seed=1):
    return simulate_campaign(scn, retained, k, 3, mode, None, seed)


def scaled_campaign(proxies, mode, k, factor):
    """Records whose observations are a scaled copy of the proxy predictions."""
    rng = np.random.default_rng(42)
    records = []
    for _ in range(k):
        pat = ModulationPattern(
            rng.integers(1, proxies.p + 1, size=(proxies.n_ris, 3)),
            np.zeros(proxies.n_ris),
        )
        obs = project(mode, predict_channel(proxies, pat)) * factor
        records.append(CampaignRecord(pat, obs))
    nr = proxies.params[0].n_rx
    nt = proxies.params[0].n_tx
    return Campaign(mode, None, proxies.grid, nr, nt, tuple(records), 0)


class TestAlignmentLoss:
    @pytest.mark.parametrize("mode", MODES)
    def test_zero_at_exact_fit(self, scn, retained, truth_proxies, mode):
        camp = make_campaign(scn, retained, mode, 4)
        loss = alignment_loss(truth_proxies, identity_gauges(truth_proxies), camp)
        assert loss < 1e-8

    @pytest.mark.parametrize("mode", MODES)
    def test_half_observations_give_unit_loss(self, truth_proxies, mode):
        # pred - pred/2 = pred/2, so numerator and denominator coincide
        camp = scaled_campaign(truth_proxies, mode, 3, 0.5)
        loss = alignment_loss(truth_proxies, identity_gauges(truth_proxies), camp)
        assert loss == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("aware", [True, False])
    def test_batched_matches_reference(self, scn, retained, mode, aware):
        from tfris.estimation import _AlignmentWorkspace

        prox = surrogate_step1(scn, retained, 0.2, 13, mc_aware=aware)
        camp = make_campaign(scn, retained, mode, 3)
        gauges = jittered_gauges(prox, 0.15, 21)
        ref = alignment_loss(prox, gauges, camp)
        ws = _AlignmentWorkspace(prox, camp)
        batched, _ = ws.loss_grad(coords_from_gauges(gauges))
        assert batched == pytest.approx(ref, rel=1e-12)

    def test_center_block_invariance_without_coupling(self, scn, retained):
        # with zero proxy coupling the center diagonal block is blind to
        # every gauge direction, so the m1 loss is a gauge invariant
        prox = surrogate_step1(scn, retained, 0.0, 0, mc_aware=False)
        camp = make_campaign(scn, retained, MeasurementMode.M1, 3)
        base = alignment_loss(prox, identity_gauges(prox), camp)
        for seed in (1, 2, 3):
            moved = alignment_loss(prox, jittered_gauges(prox, 0.3, seed), camp)
            assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)

    def test_mode_numerators_nest(self, scn, retained):
        # per record: the center block is a subset of the full misfit, and
        # magnitude-only misfit is bounded by the complex one
        prox = surrogate_step1(scn, retained, 0.2, 13)
        gauges = jittered_gauges(prox, 0.1, 5)
        camps = {
            mode: make_campaign(scn, retained, mode, 4) for mode in MODES
        }
        for k in range(4):
            losses = {}
            for mode, camp in camps.items():
                single = Campaign(
                    mode, None, camp.grid, camp.n_rx, camp.n_tx,
                    (camp.records[k],), camp.seed,
                )
                den = float(np.abs(camp.records[k].observation).sum())
                losses[mode] = alignment_loss(prox, gauges, single) * den
            slack = 1e-6
            assert losses[MeasurementMode.M1] <= losses[MeasurementMode.M3] + slack
            assert losses[MeasurementMode.M2] <= losses[MeasurementMode.M3] + slack

    def test_zero_norm_record_rejected(self, truth_proxies):
        pat = ModulationPattern(np.full((3, 3), 1), np.zeros(3))
        camp = Campaign(
            MeasurementMode.M1, None, truth_proxies.grid, 2, 2,
            (CampaignRecord(pat, np.zeros((2, 2), dtype=complex)),), 0,
        )
        with pytest.raises(ValidationError):
            alignment_loss(truth_proxies, identity_gauges(truth_proxies), camp)

    def test_gauge_count_mismatch(self, scn, retained, truth_proxies):
        camp = make_campaign(scn, retained, MeasurementMode.M3, 2)
        with pytest.raises(DimensionMismatchError):
            alignment_loss(
                truth_proxies, identity_gauges(truth_proxies)[:2], camp
            )

    def test_variant_mismatch(self, scn, retained, truth_proxies):
        camp = make_campaign(scn, retained, MeasurementMode.M3, 2)
        wrong = tuple(GaugeParams.identity(3, False) for _ in range(3))
        with pytest.raises(VariantMismatchError):
            alignment_loss(truth_proxies, wrong, camp)

    def test_grid_mismatch(self, scn, truth_proxies):
        other = ScenarioConfig(
            gt_harmonics=5, retained_harmonics=5, n_tx=2, n_rx=2, n_ris=3,
            p=4, seed=11,
        )
        camp = make_campaign(generate_scenario(other), other.retained_grid(),
                             MeasurementMode.M3, 2)
        with pytest.raises(GridMismatchError):
            alignment_loss(truth_proxies, identity_gauges(truth_proxies), camp)


def fd_gradient(proxies, campaign, x, aware, h=1e-6):
    nh, ns = proxies.grid.n, proxies.n_ris
    grad = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        lp = alignment_loss(
            proxies, gauges_from_coords(xp, ns, nh, aware), campaign
        )
        lm = alignment_loss(
            proxies, gauges_from_coords(xm, ns, nh, aware), campaign
        )
        grad[i] = (lp - lm) / (2 * h)
    return grad


class TestAlignmentGradient:
    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("aware", [True, False])
    def test_matches_finite_differences(self, scn, retained, mode, aware):
        prox = surrogate_step1(scn, retained, 0.3, 17, mc_aware=aware)
        camp = make_campaign(scn, retained, mode, 2)
        gauges = jittered_gauges(prox, 0.08, 23)
        grad = alignment_gradient(prox, gauges, camp)
        fd = fd_gradient(prox, camp, coords_from_gauges(gauges), aware)
        if mode == MeasurementMode.M1 and not aware:
            # structurally flat direction set: both sides vanish
            assert np.linalg.norm(grad) < 1e-10
            assert np.linalg.norm(fd) < 1e-7
        else:
            rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
            assert rel < 1e-5

    def test_gradient_at_exact_fit_sits_at_noise_floor(
        self, scn, retained, truth_proxies
    ):
        # residuals at an exact fit are pure roundoff; the smoothing scale
        # amplifies them by up to 1/EPS_SMOOTH, which still leaves the
        # gradient far below any optimization-relevant magnitude
        camp = make_campaign(scn, retained, MeasurementMode.M3, 3)
        grad = alignment_gradient(
            truth_proxies, identity_gauges(truth_proxies), camp
        )
        assert np.linalg.norm(grad) < 1e-5

    def test_scaling_gauge_direction_active_with_coupling(
        self, scn, retained, truth_proxies
    ):
        # m1 sees gamma through the resolvent once coupling is retained
        camp = make_campaign(scn, retained, MeasurementMode.M1, 3)
        grad = alignment_gradient(
            truth_proxies, jittered_gauges(truth_proxies, 0.1, 3), camp
        )
        ns = truth_proxies.n_ris
        width = 2 * ns + 4
        gamma_coords = grad.reshape(3, width)[:, 2 * ns:2 * ns + 2]
        assert np.abs(gamma_coords).max() > 1e-6


class TestAlign:
    def test_fixed_point_at_truth(self, scn, retained, truth_proxies):
        # noise-floor gradients still drive full-size normalized steps, so
        # the step size has to be small for the iterate to stay put
        camp = make_campaign(scn, retained, MeasurementMode.M3, 6)
        cfg = OptimizerConfig(iterations=40, lr_start=1e-8, lr_end=1e-8,
                              init_spread=0.0)
        res = align(truth_proxies, camp, cfg)
        assert res.loss_trace.shape == (41,)
        # the entrywise l1 misfit has unit-scale slopes, so the wander off
        # the optimum is bounded by a small multiple of the step size
        assert res.loss_trace[0] < 1e-10
        assert res.loss_trace.max() < 1e-7
        for phi in res.gauges:
            assert np.abs(phi.d - 1).max() < 1e-6
            assert abs(phi.gamma - 1) < 1e-6
            assert abs(phi.third) < 1e-6

    def test_result_invariants(self, scn, retained):
        prox = surrogate_step1(scn, retained, 0.2, 29)
        camp = make_campaign(scn, retained, MeasurementMode.M3, 6)
        cfg = OptimizerConfig(iterations=30)
        res = align(prox, camp, cfg)
        assert res.config == cfg
        assert len(res.reports) == 3 and res.ok
        recomposed = compose_set(prox, res.gauges)
        for a, b in zip(res.aligned.params, recomposed.params):
            assert np.array_equal(a.hd, b.hd)
            assert np.array_equal(a.rho, b.rho)
        assert res.final_loss == res.loss_trace[-1]

    def test_recovers_gauge_spread(self, scn, retained):
        prox = surrogate_step1(scn, retained, 0.3, 7)
        camp = make_campaign(scn, retained, MeasurementMode.M3, 12)
        cfg = OptimizerConfig(iterations=400, lr_start=1e-2, lr_end=1e-4)
        res = align(prox, camp, cfg)
        assert res.final_loss < res.loss_trace[0] / 100
        before = evaluate_zeta(scn, prox, "m3", 3, n_patterns=8, seed=4)
        after = evaluate_zeta(scn, res.aligned, "m3", 3, n_patterns=8, seed=4)
        assert after.zeta_db > before.zeta_db + 10
        assert after.zeta_db > 40

    def test_deterministic(self, scn, retained):
        prox = surrogate_step1(scn, retained, 0.2, 29)
        camp = make_campaign(scn, retained, MeasurementMode.M3, 4)
        cfg = OptimizerConfig(iterations=20)
        a = align(prox, camp, cfg)
        b = align(prox, camp, cfg)
        assert np.array_equal(a.loss_trace, b.loss_trace)
        for ga, gb in zip(a.gauges, b.gauges):
            assert np.array_equal(ga.d, gb.d)

    def test_inadmissible_endpoint_reports_trace(
        self, scn, retained, truth_proxies, monkeypatch
    ):
        camp = make_campaign(scn, retained, MeasurementMode.M3, 2)

        def explode(proxies, gauges):
            raise ValidationError("forced")

        monkeypatch.setattr("tfris.estimation.compose_set", explode)
        cfg = OptimizerConfig(iterations=3)
        with pytest.raises(NumericalError) as exc:
            align(truth_proxies, camp, cfg)
        assert exc.value.loss_trace.shape == (4,)


class TestDelayAbsorption:
    def test_aligned_zeta_despite_delays(self):
        cfg = ScenarioConfig(
            gt_harmonics=3, retained_harmonics=3, n_tx=2, n_rx=2, n_ris=3,
            p=4, q=3, delay_scale=0.4, seed=19,
        )
        scn = generate_scenario(cfg)
        retained = cfg.retained_grid()
        assert np.any(scn.delays > 0)
        prox = surrogate_step1(scn, retained, 0.3, 7)
        camp = simulate_campaign(
            scn, retained, 12, 3, MeasurementMode.M3, None, 1
        )
        res = align(prox, camp, OptimizerConfig(
            iterations=400, lr_start=1e-2, lr_end=1e-4,
        ))
        after = evaluate_zeta(scn, res.aligned, "m3", 3, n_patterns=8, seed=4)
        assert after.zeta_db > 40


@pytest.fixture(scope="module")
def static_fit(scn, retained):
    stat = simulate_static_campaigns(scn, retained, 60, None, 3)
    cfg = OptimizerConfig(iterations=2000, lr_start=2e-2, lr_end=1e-5,
                          init_spread=0.1)
    return stat, step1_estimate(stat, retained, cfg)


class TestStep1:
    def test_holdout_error_small(self, static_fit):
        _, res = static_fit
        assert res.converged and not res.flags
        assert max(res.holdout_error) < 1e-3
        assert max(res.final_loss) < 1e-3

    def test_fit_is_gauge_ambiguous(self, scn, retained, static_fit):
        # predictions agree with truth while the fields themselves do not:
        # the static data pins only the composite channel map
        _, res = static_fit
        part = SMALL.partition()
        theta = res.proxies.at_harmonic(0)
        a_true = scn.model.block(0, part.rx, part.ris)
        field_gap = np.abs(theta.a - a_true).sum() / np.abs(a_true).sum()
        assert field_gap > 1e-2
        rng = np.random.default_rng(31)
        for _ in range(4):
            pat = ModulationPattern(
                rng.integers(1, 5, size=(3, 1)), scn.delays
            )
            truth = end_to_end_channel(
                scn.model, assemble_phi(pat, scn.loads, retained)
            )
            pred = predict_channel(res.proxies, pat)
            rel = np.abs(pred.matrix - truth.matrix).sum()
            rel /= np.abs(truth.matrix).sum()
            assert rel < 1e-3

    def test_unaware_fit_returns_zero_coupling(self, scn, retained):
        stat = simulate_static_campaigns(scn, retained, 30, None, 3)
        res = step1_estimate(
            stat, retained,
            OptimizerConfig(iterations=300, lr_start=1e-2, lr_end=1e-4,
                            init_spread=0.1),
            mc_aware=False,
        )
        assert not res.proxies.mc_aware
        assert all(np.all(t.gamma == 0) for t in res.proxies.params)

    def test_single_state_flagged(self, scn, retained):
        from tfris.measurement import StaticCampaign

        stat = simulate_static_campaigns(scn, retained, 8, None, 3)
        degenerate = tuple(
            StaticCampaign(
                c.harmonic, np.ones_like(c.configs), c.observations,
                c.snr_db, c.seed,
            )
            for c in stat
        )
        res = step1_estimate(
            degenerate, retained, OptimizerConfig(iterations=10)
        )
        assert any("single load state" in f for f in res.flags)

    def test_underdetermined_flagged(self, scn, retained):
        stat = simulate_static_campaigns(scn, retained, 3, None, 3)
        res = step1_estimate(stat, retained, OptimizerConfig(iterations=10))
        assert any("fewer measurements" in f for f in res.flags)

    def test_no_holdout_flagged(self, scn, retained):
        stat = simulate_static_campaigns(scn, retained, 6, None, 3)
        res = step1_estimate(
            stat, retained, OptimizerConfig(iterations=10),
            holdout_fraction=0.0,
        )
        assert all(np.isnan(e) for e in res.holdout_error)
        assert any("no held-out records" in f for f in res.flags)

    def test_missing_harmonic_rejected(self, scn, retained):
        stat = simulate_static_campaigns(scn, retained, 6, None, 3)
        with pytest.raises(GridMismatchError):
            step1_estimate(stat[:2], retained, OptimizerConfig(iterations=5))

    def test_bad_holdout_fraction(self, scn, retained):
        stat = simulate_static_campaigns(scn, retained, 6, None, 3)
        with pytest.raises(ValidationError):
            step1_estimate(stat, retained, holdout_fraction=1.0)


class TestArtifactIO:
    def test_proxies_round_trip(self, scn, retained, tmp_path):
        prox = surrogate_step1(scn, retained, 0.2, 13)
        path = tmp_path / "proxies.json"
        save_proxies(prox, path)
        back = load_proxies(path)
        assert back.grid == prox.grid
        assert back.mc_aware == prox.mc_aware
        for a, b in zip(back.params, prox.params):
            for field in ("hd", "a", "gamma", "b", "rho"):
                assert np.array_equal(getattr(a, field), getattr(b, field))

    def test_unaware_proxies_round_trip(self, scn, retained, tmp_path):
        prox = surrogate_step1(scn, retained, 0.1, 3, mc_aware=False)
        path = tmp_path / "proxies.json"
        save_proxies(prox, path)
        assert not load_proxies(path).mc_aware

    def test_truncated_proxies_file(self, scn, retained, tmp_path):
        prox = surrogate_step1(scn, retained, 0.2, 13)
        path = tmp_path / "proxies.json"
        save_proxies(prox, path)
        path.write_text(path.read_text()[:80])
        with pytest.raises(SchemaError):
            load_proxies(path)

    def test_alignment_round_trip(self, scn, retained, tmp_path):
        prox = surrogate_step1(scn, retained, 0.2, 29)
        camp = make_campaign(scn, retained, MeasurementMode.M3, 4)
        res = align(prox, camp, OptimizerConfig(iterations=15))
        path = tmp_path / "alignment.json"
        save_alignment(res, path)
        back = load_alignment(path)
        assert back.config == res.config
        assert np.array_equal(back.loss_trace, res.loss_trace)
        assert back.ok == res.ok
        for ga, gb in zip(back.gauges, res.gauges):
            assert np.array_equal(ga.d, gb.d)
            assert ga.gamma == gb.gamma and ga.third == gb.third
        for a, b in zip(back.aligned.params, res.aligned.params):
            assert np.array_equal(a.hd, b.hd)

    def test_alignment_save_deterministic(self, scn, retained, tmp_path):
        prox = surrogate_step1(scn, retained, 0.2, 29)
        camp = make_campaign(scn, retained, MeasurementMode.M3, 4)
        res = align(prox, camp, OptimizerConfig(iterations=15))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_alignment(res, p1)
        save_alignment(res, p2)
        assert p1.read_bytes() == p2.read_bytes()
