"""Proxy parameter sets and the transformations that leave channels invariant.

A per-harmonic proxy (H_d, A, Gamma, B, rho_1..rho_P) reproduces every
end-to-end channel of the true system, yet is identified only up to a group
of transformations: diagonal similarity on the element ports, a common
complex scaling between loads and coupling, and a Moebius disk automorphism
of the load values (replaced by an affine shift when Gamma is pinned to
zero). Aligning these per-harmonic ambiguities is what makes independently
estimated proxies usable for frequency-mixing prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import jsonio
from .errors import (
    DimensionMismatchError,
    InadmissibleGaugeError,
    SchemaError,
    ValidationError,
    VariantMismatchError,
)
from .grid import HarmonicGrid

MU_MAX = 0.99
MIN_MODULUS = 1e-6
COND_LIMIT = 1e12


@dataclass(frozen=True)
class ProxyParams:
    """Single-harmonic proxy multiport parameters.

    ``rho`` holds the P proxy load reflection values at this harmonic;
    ``mc_aware`` distinguishes the full model from the benchmark that pins
    the element-coupling block ``gamma`` to zero.
    """

    hd: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    b: np.ndarray
    rho: np.ndarray
    mc_aware: bool = True

    def __post_init__(self):
        hd = np.asarray(self.hd, dtype=complex)
        a = np.asarray(self.a, dtype=complex)
        g = np.asarray(self.gamma, dtype=complex)
        b = np.asarray(self.b, dtype=complex)
        rho = np.asarray(self.rho, dtype=complex)
        for name, val in (("hd", hd), ("a", a), ("gamma", g), ("b", b)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "rho", rho)
        nr, nt = hd.shape
        ns = a.shape[1] if a.ndim == 2 else -1
        if a.shape != (nr, ns) or g.shape != (ns, ns) or b.shape != (ns, nt):
            raise DimensionMismatchError(
                f"inconsistent proxy shapes hd{hd.shape} a{a.shape} "
                f"gamma{g.shape} b{b.shape}"
            )
        if rho.ndim != 1 or rho.size < 1:
            raise DimensionMismatchError("rho must be a non-empty vector")
        if not self.mc_aware and np.any(g != 0):
            raise ValidationError("coupling-unaware proxies require gamma == 0")

    @property
    def n_rx(self) -> int:
        return self.hd.shape[0]

    @property
    def n_tx(self) -> int:
        return self.hd.shape[1]

    @property
    def n_ris(self) -> int:
        return self.a.shape[1]

    @property
    def p(self) -> int:
        return self.rho.size


@dataclass(frozen=True)
class ProxySet:
    """One ProxyParams per harmonic of a retained grid, uniform dimensions."""

    grid: HarmonicGrid
    params: tuple[ProxyParams, ...]

    def __post_init__(self):
        params = tuple(self.params)
        object.__setattr__(self, "params", params)
        if len(params) != self.grid.n:
            raise DimensionMismatchError(
                f"need {self.grid.n} per-harmonic proxies, got {len(params)}"
            )
        first = params[0]
        for theta in params[1:]:
            same = (
                theta.n_rx == first.n_rx
                and theta.n_tx == first.n_tx
                and theta.n_ris == first.n_ris
                and theta.p == first.p
                and theta.mc_aware == first.mc_aware
            )
            if not same:
                raise DimensionMismatchError(
                    "per-harmonic proxies disagree in dimensions or variant"
                )

    def at_harmonic(self, h: int) -> ProxyParams:
        return self.params[self.grid.index(h)]

    @property
    def mc_aware(self) -> bool:
        return self.params[0].mc_aware

    @property
    def n_ris(self) -> int:
        return self.params[0].n_ris

    @property
    def p(self) -> int:
        return self.params[0].p

    def stacked(self):
        """Per-harmonic blocks stacked along axis 0, plus the rho table.

        Returns (hd, a, gamma, b, rho) with rho of shape (|H|, P); the load
        table orientation matches LoadSet's (P, |H|) transposed.
        """
        hd = np.stack([t.hd for t in self.params])
        a = np.stack([t.a for t in self.params])
        g = np.stack([t.gamma for t in self.params])
        b = np.stack([t.b for t in self.params])
        rho = np.stack([t.rho for t in self.params])
        return hd, a, g, b, rho


@dataclass(frozen=True)
class GaugeParams:
    """Per-harmonic gauge coordinates (d, gamma, mu-or-eta).

    ``third`` is the Moebius parameter mu for coupling-aware proxies and
    the affine shift eta otherwise.
    """

    d: np.ndarray
    gamma: complex
    third: complex
    mc_aware: bool = True

    def __post_init__(self):
        d = np.asarray(self.d, dtype=complex)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "gamma", complex(self.gamma))
        object.__setattr__(self, "third", complex(self.third))
        if d.ndim != 1 or d.size < 1:
            raise DimensionMismatchError("d must be a non-empty vector")

    @classmethod
    def identity(cls, n_ris: int, mc_aware: bool = True) -> "GaugeParams":
        return cls(np.ones(n_ris, dtype=complex), 1.0, 0.0, mc_aware)

    @property
    def n_ris(self) -> int:
        return self.d.size


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of a gauge admissibility check, listing violated constraints."""

    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self) -> bool:
        return self.ok


def mobius_map(rho, mu):
    """Disk automorphism (rho - mu) / (1 - conj(mu) rho), elementwise."""
    return (rho - mu) / (1 - np.conj(mu) * rho)


def check_admissible(
    phi: GaugeParams, theta: ProxyParams | None = None
) -> AdmissibilityReport:
    """Check gauge parameters against their admissibility margins.

    Passing the target proxies additionally checks the constraints that
    depend on them (Moebius resolvent conditioning, load denominators).
    """
    failures = []
    if np.any(np.abs(phi.d) < MIN_MODULUS):
        failures.append(f"|d_i| < {MIN_MODULUS}")
    if abs(phi.gamma) < MIN_MODULUS:
        failures.append(f"|gamma| < {MIN_MODULUS}")
    if phi.mc_aware:
        mu = phi.third
        if abs(mu) > MU_MAX:
            failures.append(f"|mu| > {MU_MAX}")
        if theta is not None:
            if theta.n_ris != phi.n_ris:
                failures.append("d length does not match proxy element count")
            else:
                system = np.eye(theta.n_ris) - mu * theta.gamma
                cond = np.linalg.cond(system)
                if not np.isfinite(cond) or cond > COND_LIMIT:
                    failures.append(f"cond(I - mu Gamma) > {COND_LIMIT:g}")
                if np.any(np.abs(1 - np.conj(mu) * theta.rho) < MIN_MODULUS):
                    failures.append(f"|1 - conj(mu) rho_p| < {MIN_MODULUS}")
    elif theta is not None and theta.n_ris != phi.n_ris:
        failures.append("d length does not match proxy element count")
    return AdmissibilityReport(tuple(failures))


def apply_ds(theta: ProxyParams, d: np.ndarray) -> ProxyParams:
    """Diagonal similarity on the element ports: A D^-1, D B, D Gamma D^-1."""
    d = np.asarray(d, dtype=complex)
    if d.shape != (theta.n_ris,):
        raise DimensionMismatchError(
            f"d must have length {theta.n_ris}, got {d.shape}"
        )
    if np.any(np.abs(d) < MIN_MODULUS):
        raise InadmissibleGaugeError(f"diagonal entries must satisfy |d_i| >= {MIN_MODULUS}")
    return replace(
        theta,
        a=theta.a / d[None, :],
        b=theta.b * d[:, None],
        gamma=theta.gamma * d[:, None] / d[None, :],
    )


def apply_cs(theta: ProxyParams, gamma: complex) -> ProxyParams:
    """Common complex scaling: A/g and Gamma/g against rho * g."""
    gamma = complex(gamma)
    if abs(gamma) < MIN_MODULUS:
        raise InadmissibleGaugeError(f"scaling must satisfy |gamma| >= {MIN_MODULUS}")
    return replace(
        theta,
        a=theta.a / gamma,
        gamma=theta.gamma / gamma,
        rho=theta.rho * gamma,
    )


def apply_mobius(theta: ProxyParams, mu: complex) -> ProxyParams:
    """Moebius gauge moving load values by a disk automorphism."""
    if not theta.mc_aware:
        raise VariantMismatchError(
            "Moebius gauge requires coupling-aware proxies; use the affine shift"
        )
    mu = complex(mu)
    if abs(mu) > MU_MAX:
        raise InadmissibleGaugeError(f"Moebius parameter must satisfy |mu| <= {MU_MAX}")
    if np.any(np.abs(1 - np.conj(mu) * theta.rho) < MIN_MODULUS):
        raise InadmissibleGaugeError(
            "Moebius parameter puts a load value too close to the map's pole"
        )
    n = theta.n_ris
    system = np.eye(n) - mu * theta.gamma
    cond = np.linalg.cond(system)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise InadmissibleGaugeError(
            f"I - mu Gamma is numerically singular (condition {cond:.3g})"
        )
    f = np.linalg.inv(system)
    k = np.sqrt(1 - abs(mu) ** 2)
    af = theta.a @ f
    return replace(
        theta,
        hd=theta.hd + mu * (af @ theta.b),
        a=k * af,
        b=k * (f @ theta.b),
        gamma=(theta.gamma - np.conj(mu) * np.eye(n)) @ f,
        rho=mobius_map(theta.rho, mu),
    )


def apply_affine(theta: ProxyParams, eta: complex) -> ProxyParams:
    """Affine load shift, the Moebius replacement when Gamma is pinned to zero."""
    if theta.mc_aware:
        raise VariantMismatchError(
            "affine shift applies to coupling-unaware proxies only"
        )
    eta = complex(eta)
    return replace(
        theta,
        hd=theta.hd - eta * (theta.a @ theta.b),
        rho=theta.rho + eta,
    )


def compose(theta: ProxyParams, phi: GaugeParams) -> ProxyParams:
    """Apply a full gauge in the fixed order: diagonal, scaling, third."""
    if phi.mc_aware != theta.mc_aware:
        raise VariantMismatchError(
            "gauge variant does not match proxy variant"
        )
    out = apply_cs(apply_ds(theta, phi.d), phi.gamma)
    if phi.mc_aware:
        return apply_mobius(out, phi.third)
    return apply_affine(out, phi.third)


def compose_set(proxies: ProxySet, gauges: tuple[GaugeParams, ...]) -> ProxySet:
    """Apply one gauge per harmonic across a whole proxy set."""
    if len(gauges) != proxies.grid.n:
        raise DimensionMismatchError(
            f"need {proxies.grid.n} gauges, got {len(gauges)}"
        )
    return ProxySet(
        proxies.grid,
        tuple(compose(t, g) for t, g in zip(proxies.params, gauges)),
    )


def random_gauge(
    rng: np.random.Generator,
    n_ris: int,
    spread: float,
    mc_aware: bool = True,
    max_retries: int = 100,
) -> GaugeParams:
    """Random gauge near the identity with perturbations of scale ``spread``.

    The Moebius parameter is radially clipped into its admissible disk; the
    diagonal and scaling draws are resampled in the unlikely event they land
    within the minimum-modulus margin.
    """
    if spread < 0:
        raise ValidationError("spread must be non-negative")

    def cnormal(size=None):
        z = rng.normal(size=size) + 1j * rng.normal(size=size)
        return spread * z / np.sqrt(2)

    for _ in range(max_retries):
        d = 1 + cnormal(n_ris)
        gamma = 1 + cnormal()
        third = cnormal()
        if mc_aware and abs(third) > MU_MAX:
            third *= MU_MAX / abs(third)
        phi = GaugeParams(d, gamma, third, mc_aware)
        if check_admissible(phi).ok:
            return phi
    raise ValidationError("could not draw an admissible gauge")


def proxies_to_node(proxies: ProxySet) -> dict:
    return {
        "grid": jsonio.grid_to_node(proxies.grid),
        "mc_aware": proxies.mc_aware,
        "params": [
            {
                "hd": jsonio.encode_complex_array(t.hd),
                "a": jsonio.encode_complex_array(t.a),
                "gamma": jsonio.encode_complex_array(t.gamma),
                "b": jsonio.encode_complex_array(t.b),
                "rho": jsonio.encode_complex_array(t.rho),
            }
            for t in proxies.params
        ],
    }


def proxies_from_node(node, pointer: str) -> ProxySet:
    obj = jsonio.expect_object(node, pointer)
    grid = jsonio.grid_from_node(
        jsonio.expect_key(obj, "grid", pointer), f"{pointer}/grid"
    )
    mc_aware = jsonio.expect_bool(
        jsonio.expect_key(obj, "mc_aware", pointer), f"{pointer}/mc_aware"
    )
    nodes = jsonio.expect_list(
        jsonio.expect_key(obj, "params", pointer), f"{pointer}/params"
    )
    params = []
    for i, item in enumerate(nodes):
        ptr = f"{pointer}/params/{i}"
        rec = jsonio.expect_object(item, ptr)
        hd_node = jsonio.expect_list(jsonio.expect_key(rec, "hd", ptr), f"{ptr}/hd")
        row = jsonio.expect_list(hd_node[0] if hd_node else None, f"{ptr}/hd/0")
        n_rx, n_tx = len(hd_node), len(row)
        a_node = jsonio.expect_list(jsonio.expect_key(rec, "a", ptr), f"{ptr}/a")
        arow = jsonio.expect_list(a_node[0] if a_node else None, f"{ptr}/a/0")
        n_ris = len(arow)
        rho_node = jsonio.expect_list(
            jsonio.expect_key(rec, "rho", ptr), f"{ptr}/rho"
        )
        try:
            params.append(ProxyParams(
                hd=jsonio.decode_complex_array(hd_node, f"{ptr}/hd", (n_rx, n_tx)),
                a=jsonio.decode_complex_array(a_node, f"{ptr}/a", (n_rx, n_ris)),
                gamma=jsonio.decode_complex_array(
                    jsonio.expect_key(rec, "gamma", ptr),
                    f"{ptr}/gamma", (n_ris, n_ris),
                ),
                b=jsonio.decode_complex_array(
                    jsonio.expect_key(rec, "b", ptr), f"{ptr}/b", (n_ris, n_tx)
                ),
                rho=jsonio.decode_complex_array(
                    rho_node, f"{ptr}/rho", (len(rho_node),)
                ),
                mc_aware=mc_aware,
            ))
        except ValidationError as exc:
            raise SchemaError(str(exc), ptr) from exc
    try:
        return ProxySet(grid, tuple(params))
    except ValidationError as exc:
        raise SchemaError(str(exc), pointer) from exc


def save_proxies(proxies: ProxySet, path) -> None:
    jsonio.dump_json(proxies_to_node(proxies), path)


def load_proxies(path) -> ProxySet:
    return proxies_from_node(jsonio.load_json(path), "")


def gauges_to_node(gauges: tuple[GaugeParams, ...]) -> list:
    return [
        {
            "d": jsonio.encode_complex_array(phi.d),
            "gamma": jsonio.encode_complex_array(phi.gamma),
            "third": jsonio.encode_complex_array(phi.third),
            "mc_aware": phi.mc_aware,
        }
        for phi in gauges
    ]


def gauges_from_node(node, pointer: str) -> tuple[GaugeParams, ...]:
    nodes = jsonio.expect_list(node, pointer)
    gauges = []
    for i, item in enumerate(nodes):
        ptr = f"{pointer}/{i}"
        rec = jsonio.expect_object(item, ptr)
        d_node = jsonio.expect_list(jsonio.expect_key(rec, "d", ptr), f"{ptr}/d")
        d = jsonio.decode_complex_array(d_node, f"{ptr}/d", (len(d_node),))
        gamma = jsonio.decode_complex_array(
            jsonio.expect_key(rec, "gamma", ptr), f"{ptr}/gamma", ()
        )
        third = jsonio.decode_complex_array(
            jsonio.expect_key(rec, "third", ptr), f"{ptr}/third", ()
        )
        mc_aware = jsonio.expect_bool(
            jsonio.expect_key(rec, "mc_aware", ptr), f"{ptr}/mc_aware"
        )
        gauges.append(
            GaugeParams(d, complex(gamma), complex(third), mc_aware)
        )
    return tuple(gauges)
