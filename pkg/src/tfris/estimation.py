"""Per-harmonic proxy fitting and cross-harmonic ambiguity alignment.

Step 1 fits one proxy multiport per harmonic from static (Q = 1)
measurements; a surrogate path shortcuts this by gauge-perturbing ground
truth. Step 2 picks one gauge per harmonic so the composed proxies jointly
explain modulated (Q > 1) measurements, minimizing a normalized entrywise
l1 misfit with exact reverse-mode gradients over the real/imaginary gauge
coordinates.

Gradient convention: for a real loss L and complex parameter z, the
accumulated adjoint is z_adj = dL/d(Re z) + j dL/d(Im z), so real
gradients are read off as (Re z_adj, Im z_adj). Products propagate as
C = A B => A_adj += C_adj B^H, B_adj += A^H C_adj, and the matrix inverse
as Y = X^{-1} => X_adj = -Y^H Y_adj Y^H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jsonio
from .errors import (
    DimensionMismatchError,
    GridMismatchError,
    NumericalError,
    SchemaError,
    ValidationError,
    VariantMismatchError,
)
from .floquet import (
    FloquetChannel,
    ModulationPattern,
    phi_from_slot_reflections,
    resolvent_channel,
    slot_weights,
    truncate,
)
from .gauges import (
    MU_MAX,
    AdmissibilityReport,
    GaugeParams,
    ProxyParams,
    ProxySet,
    apply_cs,
    apply_ds,
    check_admissible,
    compose,
    compose_set,
    gauges_from_node,
    gauges_to_node,
    proxies_from_node,
    proxies_to_node,
    random_gauge,
)
from .grid import HarmonicGrid
from .measurement import Campaign, MeasurementMode, StaticCampaign
from .optim import OptimizerConfig, adam_minimize, truncated_normal

EPS_SMOOTH = 1e-12
_EPS2 = EPS_SMOOTH * EPS_SMOOTH


@dataclass(frozen=True)
class AlignmentResult:
    """Optimized gauges with the proxies they produce and the loss trace."""

    gauges: tuple[GaugeParams, ...]
    aligned: ProxySet
    loss_trace: np.ndarray
    reports: tuple[AdmissibilityReport, ...]
    config: OptimizerConfig

    def __post_init__(self):
        object.__setattr__(self, "gauges", tuple(self.gauges))
        object.__setattr__(self, "reports", tuple(self.reports))
        object.__setattr__(
            self, "loss_trace", np.asarray(self.loss_trace, dtype=float)
        )
        if len(self.gauges) != self.aligned.grid.n:
            raise DimensionMismatchError("need one gauge per retained harmonic")
        if self.loss_trace.ndim != 1:
            raise DimensionMismatchError("loss trace must be one-dimensional")

    @property
    def ok(self) -> bool:
        return all(rep.ok for rep in self.reports)

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1])


@dataclass(frozen=True)
class Step1Result:
    """Per-harmonic proxy fit with its held-out errors and diagnostics."""

    proxies: ProxySet
    holdout_error: tuple[float, ...]
    final_loss: tuple[float, ...]
    flags: tuple[str, ...]

    @property
    def converged(self) -> bool:
        return not any("final loss" in f for f in self.flags)


# ---------------------------------------------------------------------------
# prediction


def _select_proxies(proxies: ProxySet, grid: HarmonicGrid | None) -> ProxySet:
    if grid is None or grid == proxies.grid:
        return proxies
    if not grid.is_subgrid_of(proxies.grid):
        raise GridMismatchError(
            "prediction grid must equal the proxies' grid or a subgrid of it"
        )
    return ProxySet(grid, tuple(proxies.at_harmonic(h) for h in grid.harmonics))


def predict_channel(
    proxies: ProxySet,
    pattern: ModulationPattern,
    grid: HarmonicGrid | None = None,
) -> FloquetChannel:
    """Channel predicted by proxy blocks; pattern delays are ignored.

    Delays enter only through per-harmonic diagonal phases, which the
    gauges absorb, so the proxy model always assembles its load operator
    with zero delays.
    """
    proxies = _select_proxies(proxies, grid)
    if pattern.n_ris != proxies.n_ris:
        raise DimensionMismatchError(
            f"pattern drives {pattern.n_ris} elements, proxies have "
            f"{proxies.n_ris}"
        )
    if int(pattern.states.max()) > proxies.p:
        raise ValidationError(
            f"pattern uses state {int(pattern.states.max())}, proxies hold "
            f"{proxies.p}"
        )
    hd, a, g, b, rho = proxies.stacked()
    # contiguous so the slot matmul takes the same reduction order as the
    # simulator path; identity proxies then reproduce it bitwise
    slots = np.ascontiguousarray(rho[:, pattern.states - 1])
    phi = phi_from_slot_reflections(
        slots, np.zeros(proxies.n_ris), proxies.grid
    )
    matrix = resolvent_channel(hd, a, g, b, phi.to_dense())
    return FloquetChannel(proxies.grid, matrix, hd.shape[1], hd.shape[2])


# ---------------------------------------------------------------------------
# surrogate Step 1


def surrogate_step1(
    scenario,
    retained: HarmonicGrid,
    spread: float,
    rng,
    mc_aware: bool = True,
) -> ProxySet:
    """Gauge-perturbed ground-truth proxies on the retained grid.

    Each harmonic gets an independent random gauge of the given spread, so
    the set carries exactly the cross-harmonic ambiguity mismatch that
    alignment is supposed to undo. Ground-truth delays are deliberately not
    baked in anywhere; they stay in the measured channels only.
    """
    rng = np.random.default_rng(rng)
    model = truncate(scenario.model, retained)
    loads = truncate(scenario.loads, retained)
    part = scenario.config.partition()
    n_ris = part.n_ris
    params = []
    for h in retained.harmonics:
        gamma = (
            model.block(h, part.ris, part.ris)
            if mc_aware
            else np.zeros((n_ris, n_ris), dtype=complex)
        )
        theta = ProxyParams(
            hd=model.block(h, part.rx, part.tx),
            a=model.block(h, part.rx, part.ris),
            gamma=gamma,
            b=model.block(h, part.ris, part.tx),
            rho=loads.at_harmonic(h).copy(),
            mc_aware=mc_aware,
        )
        params.append(compose(theta, random_gauge(rng, n_ris, spread, mc_aware)))
    return ProxySet(retained, tuple(params))


# ---------------------------------------------------------------------------
# gauge coordinate packing

# Real coordinate layout, one contiguous block per harmonic in grid order:
# [Re d (N_S), Im d (N_S), Re gamma, Im gamma, Re third, Im third].


def _block_width(n_ris: int) -> int:
    return 2 * n_ris + 4


def coords_from_gauges(gauges: tuple[GaugeParams, ...]) -> np.ndarray:
    gauges = tuple(gauges)
    if not gauges:
        raise ValidationError("need at least one gauge")
    ns = gauges[0].n_ris
    out = np.empty((len(gauges), _block_width(ns)))
    for i, phi in enumerate(gauges):
        if phi.n_ris != ns:
            raise DimensionMismatchError("gauges disagree in element count")
        out[i, :ns] = phi.d.real
        out[i, ns:2 * ns] = phi.d.imag
        out[i, 2 * ns] = phi.gamma.real
        out[i, 2 * ns + 1] = phi.gamma.imag
        out[i, 2 * ns + 2] = phi.third.real
        out[i, 2 * ns + 3] = phi.third.imag
    return out.ravel()


def gauges_from_coords(
    x: np.ndarray, n_ris: int, n_harmonics: int, mc_aware: bool
) -> tuple[GaugeParams, ...]:
    x = np.asarray(x, dtype=float)
    width = _block_width(n_ris)
    if x.shape != (n_harmonics * width,):
        raise DimensionMismatchError(
            f"coordinate vector must have length {n_harmonics * width}"
        )
    d, gamma, third = _unpack(x, n_harmonics, n_ris)
    return tuple(
        GaugeParams(d[h].copy(), complex(gamma[h]), complex(third[h]), mc_aware)
        for h in range(n_harmonics)
    )


def _unpack(x: np.ndarray, nh: int, ns: int):
    xr = x.reshape(nh, _block_width(ns))
    d = xr[:, :ns] + 1j * xr[:, ns:2 * ns]
    gamma = xr[:, 2 * ns] + 1j * xr[:, 2 * ns + 1]
    third = xr[:, 2 * ns + 2] + 1j * xr[:, 2 * ns + 3]
    return d, gamma, third


def _pack(d_adj: np.ndarray, gamma_adj: np.ndarray, third_adj: np.ndarray):
    nh, ns = d_adj.shape
    out = np.empty((nh, _block_width(ns)))
    out[:, :ns] = d_adj.real
    out[:, ns:2 * ns] = d_adj.imag
    out[:, 2 * ns] = gamma_adj.real
    out[:, 2 * ns + 1] = gamma_adj.imag
    out[:, 2 * ns + 2] = third_adj.real
    out[:, 2 * ns + 3] = third_adj.imag
    return out.ravel()


# ---------------------------------------------------------------------------
# batched loss / gradient engine


class _AlignmentWorkspace:
    """Precomputed per-campaign tensors for the loss and its gradient.

    The pattern dependence is reduced once to coefficient tensors
    e[k, di, i, p]: the sum of slot Fourier weights at harmonic offset
    di over the slots in which record k drives element i with state p.
    The load operator entries are then linear in the gauged rho tables,
    phi[k, n, m, i] = sum_p e[k, didx(n, m), i, p] * rho3[m, p], which keeps
    both directions of the sweep to dense einsum contractions.
    """

    def __init__(self, proxies: ProxySet, campaign: Campaign):
        if campaign.grid != proxies.grid:
            raise GridMismatchError(
                "campaign and proxies must share the retained grid"
            )
        first = proxies.params[0]
        if campaign.n_rx != first.n_rx or campaign.n_tx != first.n_tx:
            raise DimensionMismatchError(
                "campaign port counts do not match the proxies"
            )
        ns = proxies.n_ris
        q = campaign.q
        for i, rec in enumerate(campaign.records):
            pat = rec.pattern
            if pat.n_ris != ns or pat.q != q:
                raise DimensionMismatchError(
                    f"record {i}: pattern shape {pat.states.shape} breaks "
                    "campaign uniformity"
                )
            if int(pat.states.max()) > proxies.p:
                raise ValidationError(
                    f"record {i}: state index exceeds the proxies' {proxies.p} "
                    "load states"
                )
        self.mode = campaign.mode
        self.mc_aware = proxies.mc_aware
        self.hd0, self.a0, self.g0, self.b0, self.r0 = proxies.stacked()
        self.nh = proxies.grid.n
        self.ns = ns
        self.nr = campaign.n_rx
        self.nt = campaign.n_tx
        self.p = proxies.p
        self.k = campaign.k

        hs = np.asarray(proxies.grid.harmonics)
        deltas = hs[:, None] - hs[None, :]
        dmin = int(deltas.min())
        didx = deltas - dmin
        wtab = np.stack(
            [slot_weights(dmin + i, q) for i in range(int(didx.max()) + 1)]
        )
        states = np.stack([rec.pattern.states for rec in campaign.records])
        onehot = (states[..., None] - 1 == np.arange(self.p)).astype(float)
        e = np.einsum("dq,kiqp->kdip", wtab, onehot)
        # per input-harmonic gather of the offset axis: e_m[m][k, n, i, p]
        self.e_m = [np.ascontiguousarray(e[:, didx[:, m]]) for m in range(self.nh)]

        obs = np.stack([rec.observation for rec in campaign.records])
        self.obs = obs
        den = np.abs(obs).sum(axis=(1, 2))
        if np.any(den == 0):
            raise ValidationError("zero-norm measurement record")
        self.coef = 1.0 / (self.k * den)
        center = proxies.grid.index(0)
        self.rows0 = slice(center * self.nr, (center + 1) * self.nr)
        self.cols0 = slice(center * self.nt, (center + 1) * self.nt)

    def loss(self, x: np.ndarray) -> float:
        return self._evaluate(x, want_grad=False)[0]

    def loss_grad(self, x: np.ndarray):
        return self._evaluate(x, want_grad=True)

    # the forward pass keeps every intermediate the reverse sweep needs
    def _evaluate(self, x: np.ndarray, want_grad: bool):
        nh, ns, nr, nt, k = self.nh, self.ns, self.nr, self.nt, self.k
        d, gamma, third = _unpack(np.asarray(x, dtype=float), nh, ns)

        a1 = self.a0 / d[:, None, :]
        b1 = self.b0 * d[:, :, None]
        g1 = self.g0 * d[:, :, None] / d[:, None, :]
        a2 = a1 / gamma[:, None, None]
        g2 = g1 / gamma[:, None, None]
        r2 = self.r0 * gamma[:, None]
        eye = np.eye(ns)
        if self.mc_aware:
            mu = third
            mf = eye[None] - mu[:, None, None] * g2
            f = np.linalg.inv(mf)
            kk = np.sqrt(1.0 - np.abs(mu) ** 2)
            t_af = a2 @ f
            tb = t_af @ b1
            hd3 = self.hd0 + mu[:, None, None] * tb
            a3 = kk[:, None, None] * t_af
            fb = f @ b1
            b3 = kk[:, None, None] * fb
            g3 = (g2 - np.conj(mu)[:, None, None] * eye[None]) @ f
            den_r = 1.0 - np.conj(mu)[:, None] * r2
            r3 = (r2 - mu[:, None]) / den_r
        else:
            eta = third
            ab = a2 @ b1
            hd3 = self.hd0 - eta[:, None, None] * ab
            a3 = a2
            b3 = b1
            g3 = np.zeros_like(self.g0)
            r3 = r2 + eta[:, None]

        phi = np.empty((k, nh, nh, ns), dtype=complex)
        for m in range(nh):
            phi[:, :, m, :] = np.einsum("knip,p->kni", self.e_m[m], r3[m])
        hns = nh * ns
        phid = np.zeros((k, nh, ns, nh, ns), dtype=complex)
        diag = np.arange(ns)
        phid[:, :, diag, :, diag] = phi.transpose(3, 0, 1, 2)
        phi_dense = phid.reshape(k, hns, hns)
        phir = phi_dense.reshape(k, hns, nh, ns)
        phig = np.einsum("kpms,mst->kpmt", phir, g3).reshape(k, hns, hns)
        msys = np.eye(hns)[None] - phig
        nrhs = np.einsum("kpms,mst->kpmt", phir, b3).reshape(k, hns, nh * nt)
        minv = np.linalg.inv(msys)
        xsol = minv @ nrhs
        xr = xsol.reshape(k, nh, ns, nh * nt)
        pred = np.einsum("hrs,khst->khrt", a3, xr).reshape(k, nh * nr, nh * nt)
        pred5 = pred.reshape(k, nh, nr, nh, nt)
        hsel = np.arange(nh)
        pred5[:, hsel, :, hsel, :] += hd3[:, None]

        if self.mode == MeasurementMode.M1:
            diff = pred[:, self.rows0, self.cols0] - self.obs
            smooth = np.sqrt(diff.real**2 + diff.imag**2 + _EPS2)
            loss = float(np.dot(smooth.sum(axis=(1, 2)), self.coef))
            if not want_grad:
                return loss, None
            pred_adj = np.zeros_like(pred)
            pred_adj[:, self.rows0, self.cols0] = (
                self.coef[:, None, None] * diff / smooth
            )
        elif self.mode == MeasurementMode.M2:
            mag = np.sqrt(pred.real**2 + pred.imag**2 + _EPS2)
            diff = mag - self.obs
            smooth = np.sqrt(diff * diff + _EPS2)
            loss = float(np.dot(smooth.sum(axis=(1, 2)), self.coef))
            if not want_grad:
                return loss, None
            pred_adj = (self.coef[:, None, None] * diff / smooth) * (pred / mag)
        else:
            diff = pred - self.obs
            smooth = np.sqrt(diff.real**2 + diff.imag**2 + _EPS2)
            loss = float(np.dot(smooth.sum(axis=(1, 2)), self.coef))
            if not want_grad:
                return loss, None
            pred_adj = self.coef[:, None, None] * diff / smooth

        pa5 = pred_adj.reshape(k, nh, nr, nh, nt)
        hd3_adj = np.einsum("khrht->hrt", pa5)
        par = pred_adj.reshape(k, nh, nr, nh * nt)
        a3_adj = np.einsum("khrt,khst->hrs", par, np.conj(xr))
        x_adj = np.einsum("hrs,khrt->khst", np.conj(a3), par).reshape(
            k, hns, nh * nt
        )
        minv_h = np.conj(np.transpose(minv, (0, 2, 1)))
        n_adj = minv_h @ x_adj
        m_adj = -n_adj @ np.conj(np.transpose(xsol, (0, 2, 1)))
        n_adjr = n_adj.reshape(k, hns, nh, nt)
        m_adjr = m_adj.reshape(k, hns, nh, ns)
        b3_adj = np.einsum("kpms,kpmt->mst", np.conj(phir), n_adjr)
        g3_adj = -np.einsum("kpms,kpmt->mst", np.conj(phir), m_adjr)
        phi_adj_flat = np.einsum(
            "kpmt,mst->kpms", n_adjr, np.conj(b3)
        ) - np.einsum("kpmt,mst->kpms", m_adjr, np.conj(g3))
        phi_adj = np.einsum(
            "knimi->knmi", phi_adj_flat.reshape(k, nh, ns, nh, ns)
        )
        r3_adj = np.empty((nh, self.p), dtype=complex)
        for m in range(nh):
            r3_adj[m] = np.einsum(
                "knip,kni->p", np.conj(self.e_m[m]), phi_adj[:, :, m, :]
            )

        if self.mc_aware:
            one_m = 1.0 - np.abs(mu) ** 2
            r2_adj = np.conj(one_m[:, None] / den_r**2) * r3_adj
            mu_adj = np.sum(
                np.conj(r3_adj) * (r2 - mu[:, None]) * r2 / den_r**2
                - r3_adj * np.conj(1.0 / den_r),
                axis=1,
            )
            f_h = np.conj(np.transpose(f, (0, 2, 1)))
            pmat = g2 - np.conj(mu)[:, None, None] * eye[None]
            p_adj = g3_adj @ f_h
            f_adj = np.conj(np.transpose(pmat, (0, 2, 1))) @ g3_adj
            g2_adj = p_adj.copy()
            mu_adj -= np.conj(np.einsum("hii->h", p_adj))
            tb_adj = np.conj(mu)[:, None, None] * hd3_adj
            mu_adj += np.einsum("hrt,hrt->h", hd3_adj, np.conj(tb))
            t_adj = kk[:, None, None] * a3_adj
            fb_adj = kk[:, None, None] * b3_adj
            k_grad = (
                np.einsum("hrs,hrs->h", a3_adj, np.conj(t_af)).real
                + np.einsum("hst,hst->h", b3_adj, np.conj(fb)).real
            )
            mu_adj -= k_grad * mu / kk
            b1_h = np.conj(np.transpose(b1, (0, 2, 1)))
            t_adj += tb_adj @ b1_h
            b1_adj = np.conj(np.transpose(t_af, (0, 2, 1))) @ tb_adj
            f_adj += fb_adj @ b1_h
            b1_adj += f_h @ fb_adj
            a2_adj = t_adj @ f_h
            f_adj += np.conj(np.transpose(a2, (0, 2, 1))) @ t_adj
            mf_adj = -f_h @ f_adj @ f_h
            g2_adj -= np.conj(mu)[:, None, None] * mf_adj
            mu_adj -= np.einsum("hij,hij->h", mf_adj, np.conj(g2))
            third_adj = mu_adj
        else:
            ab_adj = -np.conj(eta)[:, None, None] * hd3_adj
            third_adj = -np.einsum(
                "hrt,hrt->h", hd3_adj, np.conj(ab)
            ) + r3_adj.sum(axis=1)
            r2_adj = r3_adj
            a2_adj = a3_adj + ab_adj @ np.conj(np.transpose(b1, (0, 2, 1)))
            b1_adj = b3_adj + np.conj(np.transpose(a2, (0, 2, 1))) @ ab_adj
            g2_adj = np.zeros_like(g2)

        cgamma = np.conj(gamma)
        gamma_adj = (
            -np.einsum("hrs,hrs->h", a2_adj, np.conj(a1)) / cgamma**2
            - np.einsum("hij,hij->h", g2_adj, np.conj(g1)) / cgamma**2
            + np.einsum("hp,hp->h", r2_adj, np.conj(self.r0))
        )
        a1_adj = a2_adj / cgamma[:, None, None]
        g1_adj = g2_adj / cgamma[:, None, None]
        cd = np.conj(d)
        d_adj = (
            -np.einsum("hri,hri->hi", a1_adj, np.conj(self.a0)) / cd**2
            + np.einsum("hit,hit->hi", b1_adj, np.conj(self.b0))
            + np.einsum(
                "hij,hij->hi", g1_adj, np.conj(self.g0 / d[:, None, :])
            )
            - np.einsum(
                "hji,hji->hi",
                g1_adj,
                np.conj(self.g0 * d[:, :, None] / d[:, None, :] ** 2),
            )
        )
        return loss, _pack(d_adj, gamma_adj, third_adj)


def _check_gauges(proxies: ProxySet, gauges: tuple[GaugeParams, ...]):
    gauges = tuple(gauges)
    if len(gauges) != proxies.grid.n:
        raise DimensionMismatchError("need one gauge per retained harmonic")
    for phi in gauges:
        if phi.mc_aware != proxies.mc_aware:
            raise VariantMismatchError(
                "gauge variant does not match proxy variant"
            )
    return gauges


def alignment_loss(
    proxies: ProxySet, gauges: tuple[GaugeParams, ...], campaign: Campaign
) -> float:
    """Normalized entrywise l1 misfit of the gauged proxies on a campaign.

    Reference implementation: composes the gauges explicitly and predicts
    record by record through the load-operator path. The optimizer uses an
    algebraically identical batched route; tests pin the two against each
    other.
    """
    gauges = _check_gauges(proxies, gauges)
    if campaign.grid != proxies.grid:
        raise GridMismatchError(
            "campaign and proxies must share the retained grid"
        )
    aligned = compose_set(proxies, gauges)
    total = 0.0
    for rec in campaign.records:
        chan = predict_channel(aligned, rec.pattern)
        y = rec.observation
        den = float(np.abs(y).sum())
        if den == 0:
            raise ValidationError("zero-norm measurement record")
        if campaign.mode == MeasurementMode.M1:
            diff = chan.block(0, 0) - y
            num = np.sqrt(diff.real**2 + diff.imag**2 + _EPS2).sum()
        elif campaign.mode == MeasurementMode.M2:
            mag = np.sqrt(
                chan.matrix.real**2 + chan.matrix.imag**2 + _EPS2
            )
            diff = mag - y
            num = np.sqrt(diff * diff + _EPS2).sum()
        else:
            diff = chan.matrix - y
            num = np.sqrt(diff.real**2 + diff.imag**2 + _EPS2).sum()
        total += float(num) / den
    return total / campaign.k


def alignment_gradient(
    proxies: ProxySet, gauges: tuple[GaugeParams, ...], campaign: Campaign
) -> np.ndarray:
    """Exact loss gradient over the packed real gauge coordinates.

    Coordinate layout per harmonic (grid order): Re d, Im d, Re gamma,
    Im gamma, Re third, Im third; see coords_from_gauges.
    """
    gauges = _check_gauges(proxies, gauges)
    ws = _AlignmentWorkspace(proxies, campaign)
    _, grad = ws.loss_grad(coords_from_gauges(gauges))
    return grad


def align(
    proxies: ProxySet,
    campaign: Campaign,
    config: OptimizerConfig | None = None,
) -> AlignmentResult:
    """Optimize one gauge per harmonic against the campaign misfit.

    Initialization centers d and gamma at 1 and the third parameter at 0,
    each real coordinate jittered by a truncated normal of the configured
    spread. After every step the Moebius parameters are projected radially
    back into |mu| <= 0.99; the affine variant needs no projection.
    """
    if config is None:
        config = OptimizerConfig()
    ws = _AlignmentWorkspace(proxies, campaign)
    rng = np.random.default_rng(config.seed)
    nh, ns = ws.nh, ws.ns
    width = _block_width(ns)
    x0 = truncated_normal(rng, (nh, width), config.init_spread)
    x0[:, :ns] += 1.0
    x0[:, 2 * ns] += 1.0
    x0 = x0.ravel()

    post = None
    if proxies.mc_aware:
        def post(x):
            xr = x.reshape(nh, width)
            mod = np.hypot(xr[:, 2 * ns + 2], xr[:, 2 * ns + 3])
            over = mod > MU_MAX
            if np.any(over):
                scale = MU_MAX / mod[over]
                xr[over, 2 * ns + 2] *= scale
                xr[over, 2 * ns + 3] *= scale
            return x

    xstar, trace = adam_minimize(x0, ws.loss_grad, config, post_step=post)
    gauges = gauges_from_coords(xstar, ns, nh, proxies.mc_aware)
    try:
        aligned = compose_set(proxies, gauges)
    except ValidationError as exc:
        err = NumericalError(f"alignment ended at an inadmissible gauge: {exc}")
        err.loss_trace = trace
        raise err from exc
    reports = []
    for theta, phi in zip(proxies.params, gauges):
        # admissibility of the third stage is judged against the proxies
        # after the diagonal and scaling stages, matching composition order
        theta2 = apply_cs(apply_ds(theta, phi.d), phi.gamma)
        reports.append(check_admissible(phi, theta2))
    return AlignmentResult(gauges, aligned, trace, tuple(reports), config)


# ---------------------------------------------------------------------------
# Step 1 gradient fit


class _Step1Workspace:
    """Single-harmonic static fit: observations against H_d + A X with
    X = (I - diag(phi) Gamma)^{-1} diag(phi) B and phi_i = rho[state_i]."""

    def __init__(self, configs, observations, p, mc_aware):
        self.cfg0 = np.asarray(configs, dtype=int) - 1
        self.obs = np.asarray(observations)
        self.k1, self.ns = self.cfg0.shape
        self.nr, self.nt = self.obs.shape[1], self.obs.shape[2]
        self.p = p
        self.mc_aware = mc_aware
        den = np.abs(self.obs).sum(axis=(1, 2))
        if np.any(den == 0):
            raise ValidationError("zero-norm static observation")
        self.coef = 1.0 / (self.k1 * den)
        # parameter order: hd, a, (gamma,) b, rho as interleaved re/im
        self.shapes = [(self.nr, self.nt), (self.nr, self.ns)]
        if mc_aware:
            self.shapes.append((self.ns, self.ns))
        self.shapes += [(self.ns, self.nt), (self.p,)]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.total = 2 * sum(self.sizes)

    def unpack(self, x):
        parts = []
        at = 0
        for shape, size in zip(self.shapes, self.sizes):
            re = x[at:at + size].reshape(shape)
            im = x[at + size:at + 2 * size].reshape(shape)
            parts.append(re + 1j * im)
            at += 2 * size
        return parts

    def pack_adj(self, adjoints):
        out = np.empty(self.total)
        at = 0
        for adj, size in zip(adjoints, self.sizes):
            out[at:at + size] = adj.real.ravel()
            out[at + size:at + 2 * size] = adj.imag.ravel()
            at += 2 * size
        return out

    def predict(self, x, cfg0=None):
        if cfg0 is None:
            cfg0 = self.cfg0
        parts = self.unpack(x)
        if self.mc_aware:
            hd, a, g, b, rho = parts
        else:
            hd, a, b, rho = parts
            g = None
        phi = rho[cfg0]
        if g is not None:
            msys = np.eye(self.ns)[None] - phi[:, :, None] * g[None]
            xsol = np.linalg.solve(msys, phi[:, :, None] * b[None])
        else:
            xsol = phi[:, :, None] * b[None]
        return hd[None] + np.einsum("rs,kst->krt", a, xsol)

    def loss_grad(self, x):
        parts = self.unpack(x)
        if self.mc_aware:
            hd, a, g, b, rho = parts
        else:
            hd, a, b, rho = parts
        phi = rho[self.cfg0]
        if self.mc_aware:
            msys = np.eye(self.ns)[None] - phi[:, :, None] * g[None]
            minv = np.linalg.inv(msys)
            xsol = minv @ (phi[:, :, None] * b[None])
        else:
            xsol = phi[:, :, None] * b[None]
        pred = hd[None] + np.einsum("rs,kst->krt", a, xsol)
        diff = pred - self.obs
        smooth = np.sqrt(diff.real**2 + diff.imag**2 + _EPS2)
        loss = float(np.dot(smooth.sum(axis=(1, 2)), self.coef))
        pa = self.coef[:, None, None] * diff / smooth
        hd_adj = pa.sum(axis=0)
        a_adj = np.einsum("krt,kst->rs", pa, np.conj(xsol))
        x_adj = np.einsum("rs,krt->kst", np.conj(a), pa)
        if self.mc_aware:
            minv_h = np.conj(np.transpose(minv, (0, 2, 1)))
            n_adj = minv_h @ x_adj
            m_adj = -n_adj @ np.conj(np.transpose(xsol, (0, 2, 1)))
            g_adj = -np.einsum("ki,kij->ij", np.conj(phi), m_adj)
            phi_adj = np.einsum("kit,it->ki", n_adj, np.conj(b)) - np.einsum(
                "kij,ij->ki", m_adj, np.conj(g)
            )
            b_adj = np.einsum("ki,kit->it", np.conj(phi), n_adj)
        else:
            b_adj = np.einsum("ki,kit->it", np.conj(phi), x_adj)
            phi_adj = np.einsum("kit,it->ki", x_adj, np.conj(b))
        rho_adj = np.zeros(self.p, dtype=complex)
        np.add.at(rho_adj, self.cfg0.ravel(), phi_adj.ravel())
        adjoints = [hd_adj, a_adj]
        if self.mc_aware:
            adjoints.append(g_adj)
        adjoints += [b_adj, rho_adj]
        return loss, self.pack_adj(adjoints)


def step1_estimate(
    static_campaigns: tuple[StaticCampaign, ...],
    grid: HarmonicGrid,
    config: OptimizerConfig | None = None,
    mc_aware: bool = True,
    holdout_fraction: float = 0.2,
    loss_threshold: float = 1e-2,
) -> Step1Result:
    """Fit one proxy multiport per harmonic from static campaigns.

    Each harmonic is fitted independently with the shared optimizer; the
    trailing fraction of records is held out and its relative l1 prediction
    error reported per harmonic. Poor fits and degenerate campaigns are
    flagged on the result rather than raised.
    """
    if config is None:
        config = OptimizerConfig()
    if not 0 <= holdout_fraction < 1:
        raise ValidationError("holdout fraction must lie in [0, 1)")
    by_harmonic = {c.harmonic: c for c in static_campaigns}
    if sorted(by_harmonic) != list(grid.harmonics):
        raise GridMismatchError(
            "need exactly one static campaign per retained harmonic"
        )
    first = by_harmonic[grid.harmonics[0]]
    p = int(max(c.configs.max() for c in static_campaigns))
    flags = []
    params = []
    holdout_errors = []
    final_losses = []
    for h in grid.harmonics:
        camp = by_harmonic[h]
        if camp.configs.shape != first.configs.shape:
            raise DimensionMismatchError(
                "static campaigns disagree in configuration shape"
            )
        k1 = camp.k1
        if holdout_fraction > 0:
            n_hold = int(round(holdout_fraction * k1))
            n_hold = min(max(n_hold, 1 if k1 > 1 else 0), k1 - 1)
        else:
            n_hold = 0
        fit_cfg = camp.configs[:k1 - n_hold]
        fit_obs = camp.observations[:k1 - n_hold]
        ws = _Step1Workspace(fit_cfg, fit_obs, p, mc_aware)
        if len(np.unique(fit_cfg)) < 2:
            flags.append(f"harmonic {h}: single load state, low identifiability")
        if (k1 - n_hold) * ws.nr * ws.nt < ws.total // 2:
            flags.append(
                f"harmonic {h}: fewer measurements than parameters, "
                "low identifiability"
            )
        rng = np.random.default_rng([config.seed, grid.index(h)])
        x0 = truncated_normal(rng, ws.total, config.init_spread)
        xstar, trace = adam_minimize(x0, ws.loss_grad, config)
        final = float(trace[-1])
        final_losses.append(final)
        if final > loss_threshold:
            flags.append(f"harmonic {h}: final loss {final:.3g} above threshold")
        if n_hold:
            hold_cfg = camp.configs[k1 - n_hold:] - 1
            hold_obs = camp.observations[k1 - n_hold:]
            hold_pred = ws.predict(xstar, hold_cfg)
            err = float(
                np.abs(hold_pred - hold_obs).sum() / np.abs(hold_obs).sum()
            )
        else:
            err = float("nan")
            flags.append(f"harmonic {h}: no held-out records")
        holdout_errors.append(err)
        parts = ws.unpack(xstar)
        if mc_aware:
            hd, a, g, b, rho = parts
        else:
            hd, a, b, rho = parts
            g = np.zeros((ws.ns, ws.ns), dtype=complex)
        params.append(ProxyParams(hd, a, g, b, rho, mc_aware))
    return Step1Result(
        ProxySet(grid, tuple(params)),
        tuple(holdout_errors),
        tuple(final_losses),
        tuple(flags),
    )


# ---------------------------------------------------------------------------
# alignment artifact I/O


def save_alignment(result: AlignmentResult, path) -> None:
    cfg = result.config
    jsonio.dump_json({
        "gauges": gauges_to_node(result.gauges),
        "aligned": proxies_to_node(result.aligned),
        "loss_trace": jsonio.encode_real_array(result.loss_trace),
        "admissibility": [list(rep.failures) for rep in result.reports],
        "config": optimizer_to_node(cfg),
        "seed": cfg.seed,
    }, path)


def optimizer_to_node(config: OptimizerConfig) -> dict:
    return {
        "iterations": config.iterations,
        "lr_start": config.lr_start,
        "lr_end": config.lr_end,
        "beta1": config.beta1,
        "beta2": config.beta2,
        "eps": config.eps,
        "init_spread": config.init_spread,
        "seed": config.seed,
    }


def optimizer_from_node(node, pointer: str) -> OptimizerConfig:
    obj = jsonio.expect_object(node, pointer)
    unknown = set(obj) - {
        "iterations", "lr_start", "lr_end", "beta1", "beta2", "eps",
        "init_spread", "seed",
    }
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", pointer)

    def num(key):
        return jsonio.expect_number(
            jsonio.expect_key(obj, key, pointer), f"{pointer}/{key}"
        )

    def integer(key):
        return jsonio.expect_int(
            jsonio.expect_key(obj, key, pointer), f"{pointer}/{key}"
        )

    try:
        return OptimizerConfig(
            iterations=integer("iterations"),
            lr_start=num("lr_start"),
            lr_end=num("lr_end"),
            beta1=num("beta1"),
            beta2=num("beta2"),
            eps=num("eps"),
            init_spread=num("init_spread"),
            seed=integer("seed"),
        )
    except ValidationError as exc:
        raise SchemaError(str(exc), pointer) from exc


def load_alignment(path) -> AlignmentResult:
    root = jsonio.expect_object(jsonio.load_json(path), "")
    gauges = gauges_from_node(jsonio.expect_key(root, "gauges", ""), "/gauges")
    aligned = proxies_from_node(
        jsonio.expect_key(root, "aligned", ""), "/aligned"
    )
    trace_node = jsonio.expect_list(
        jsonio.expect_key(root, "loss_trace", ""), "/loss_trace"
    )
    trace = jsonio.decode_real_array(
        trace_node, "/loss_trace", (len(trace_node),)
    )
    adm_node = jsonio.expect_list(
        jsonio.expect_key(root, "admissibility", ""), "/admissibility"
    )
    reports = tuple(
        AdmissibilityReport(tuple(
            jsonio.expect_str(f, f"/admissibility/{i}/{j}")
            for j, f in enumerate(jsonio.expect_list(n, f"/admissibility/{i}"))
        ))
        for i, n in enumerate(adm_node)
    )
    config = optimizer_from_node(
        jsonio.expect_key(root, "config", ""), "/config"
    )
    return AlignmentResult(gauges, aligned, trace, reports, config)
