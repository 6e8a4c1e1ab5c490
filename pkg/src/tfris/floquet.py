"""Multi-harmonic load scattering and end-to-end channels.

The static network is linear time-invariant, so its stacked scattering
matrix is block-diagonal with one N x N block per harmonic. Periodic load
modulation mixes harmonics: the load scattering operator has one diagonal
N_S x N_S block per ordered harmonic pair, whose entries are Fourier
coefficients of the slot-wise load reflection waveforms. The end-to-end
channel combines both through a resolvent of dimension |H|*N_S; the full
|H|*N x |H|*N system matrix is never assembled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import (
    DimensionMismatchError,
    GridMismatchError,
    IllConditionedError,
    ValidationError,
)
from .grid import HarmonicGrid, PortPartition

COND_LIMIT = 1e12


@dataclass(frozen=True)
class LoadSet:
    """Reflection coefficients of the P programmable load states.

    ``rho[p, i]`` is the reflection coefficient of state p+1 (states are
    numbered 1..P) at the i-th harmonic of ``harmonics``.
    """

    rho: np.ndarray
    harmonics: tuple[int, ...]

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "harmonics", tuple(int(h) for h in self.harmonics))
        if rho.ndim != 2 or rho.shape[1] != len(self.harmonics):
            raise DimensionMismatchError(
                f"rho must be (P, {len(self.harmonics)}), got {rho.shape}"
            )
        if rho.shape[0] < 1:
            raise ValidationError("need at least one load state")
        if np.any(np.abs(rho) > 1 + 1e-12):
            raise ValidationError("passive loads require |rho| <= 1 for all states")

    @property
    def p(self) -> int:
        return self.rho.shape[0]

    def at_harmonic(self, h: int) -> np.ndarray:
        """Length-P state reflection vector at harmonic h."""
        try:
            i = self.harmonics.index(int(h))
        except ValueError:
            raise GridMismatchError(f"harmonic {h} not in load set") from None
        return self.rho[:, i]


@dataclass(frozen=True)
class ModulationPattern:
    """Slot-wise load-state assignment plus per-element control delays.

    ``states`` has shape (N_S, Q) with entries in 1..P; ``delays`` holds one
    control delay per element in seconds, each within [0, T_m).
    """

    states: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        delays = np.asarray(self.delays, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "delays", delays)
        if states.ndim != 2 or states.shape[1] < 1:
            raise DimensionMismatchError(
                f"states must be (N_S, Q) with Q >= 1, got {states.shape}"
            )
        if np.any(states < 1):
            raise ValidationError("state indices are 1-based and must be >= 1")
        if delays.shape != (states.shape[0],):
            raise DimensionMismatchError(
                f"delays must have one entry per element, got {delays.shape}"
            )
        if np.any(delays < 0):
            raise ValidationError("delays must be non-negative")

    @classmethod
    def static(cls, config: np.ndarray) -> "ModulationPattern":
        """Q = 1 pattern (conventional RIS configuration), zero delays."""
        c = np.asarray(config, dtype=int).reshape(-1, 1)
        return cls(c, np.zeros(c.shape[0]))

    @property
    def n_ris(self) -> int:
        return self.states.shape[0]

    @property
    def q(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class StaticScatterModel:
    """Per-harmonic scattering matrices of the static subsystem.

    ``matrices[i]`` is the N x N scattering matrix at ``grid.harmonics[i]``,
    referenced to ``reference_impedance`` ohms.
    """

    grid: HarmonicGrid
    partition: PortPartition
    matrices: np.ndarray
    reference_impedance: float = 50.0
    reciprocal: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=complex)
        object.__setattr__(self, "matrices", m)
        n = self.partition.n
        if m.shape != (self.grid.n, n, n):
            raise DimensionMismatchError(
                f"matrices must be ({self.grid.n}, {n}, {n}), got {m.shape}"
            )
        smax = max(np.linalg.norm(mh, 2) for mh in m)
        if smax > 1 + 1e-9:
            raise ValidationError(
                f"passivity violated: largest singular value {smax:.12g} > 1"
            )
        if self.reciprocal:
            for h, mh in zip(self.grid.harmonics, m):
                denom = max(np.linalg.norm(mh), 1e-300)
                if np.linalg.norm(mh - mh.T) / denom > 1e-12:
                    raise ValidationError(
                        f"reciprocity flag set but S({h}) is not symmetric"
                    )

    def at_harmonic(self, h: int) -> np.ndarray:
        return self.matrices[self.grid.index(h)]

    def block(self, h: int, rows: tuple[int, ...], cols: tuple[int, ...]) -> np.ndarray:
        return self.at_harmonic(h)[np.ix_(rows, cols)]


@dataclass(frozen=True)
class FloquetLoadScatter:
    """Harmonic-pair blocks of the modulated-load scattering operator.

    ``diagonals[n, m]`` holds the N_S diagonal entries of the block coupling
    input harmonic ``grid.harmonics[m]`` to output harmonic
    ``grid.harmonics[n]``; every block is diagonal because elements are
    modulated independently.
    """

    grid: HarmonicGrid
    diagonals: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diagonals, dtype=complex)
        object.__setattr__(self, "diagonals", d)
        if d.ndim != 3 or d.shape[0] != self.grid.n or d.shape[1] != self.grid.n:
            raise DimensionMismatchError(
                f"diagonals must be ({self.grid.n}, {self.grid.n}, N_S), got {d.shape}"
            )

    @property
    def n_ris(self) -> int:
        return self.diagonals.shape[2]

    def block(self, h_out: int, h_in: int) -> np.ndarray:
        """Dense N_S x N_S block for the ordered harmonic pair."""
        return np.diag(self.diagonals[self.grid.index(h_out), self.grid.index(h_in)])

    def to_dense(self) -> np.ndarray:
        """Full (|H| N_S) x (|H| N_S) matrix, harmonic-major ordering."""
        return dense_from_block_diagonals(self.diagonals)


@dataclass(frozen=True)
class FloquetChannel:
    """End-to-end multi-harmonic channel matrix with block accessors."""

    grid: HarmonicGrid
    matrix: np.ndarray
    n_rx: int
    n_tx: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.shape != (self.grid.n * self.n_rx, self.grid.n * self.n_tx):
            raise DimensionMismatchError(
                f"channel matrix must be ({self.grid.n * self.n_rx}, "
                f"{self.grid.n * self.n_tx}), got {m.shape}"
            )

    def block(self, h_out: int, h_in: int) -> np.ndarray:
        """N_R x N_T block mapping inputs at h_in to outputs at h_out."""
        i = self.grid.index(h_out)
        j = self.grid.index(h_in)
        return self.matrix[
            i * self.n_rx : (i + 1) * self.n_rx, j * self.n_tx : (j + 1) * self.n_tx
        ]

    def apply(self, a: np.ndarray) -> np.ndarray:
        """Output wavefront b = H a for a stacked input wavefront."""
        a = np.asarray(a, dtype=complex)
        if a.shape != (self.matrix.shape[1],):
            raise DimensionMismatchError(
                f"input wavefront must have length {self.matrix.shape[1]}"
            )
        return self.matrix @ a


def dense_from_block_diagonals(diagonals: np.ndarray) -> np.ndarray:
    """Expand (H, H, N_S) per-pair diagonals into a dense (H N_S, H N_S) matrix."""
    nh, _, ns = diagonals.shape
    out = np.zeros((nh, ns, nh, ns), dtype=complex)
    idx = np.arange(ns)
    out[:, idx, :, idx] = np.transpose(diagonals, (2, 0, 1))
    return out.reshape(nh * ns, nh * ns)


def slot_weights(delta: int, q: int) -> np.ndarray:
    """Per-slot Fourier weights w_q for harmonic offset delta.

    The coefficient of a piecewise-constant periodic waveform at offset
    delta is sum_q r_q * w_q; each w_q is the normalized slot integral of
    exp(-2j*pi*delta*t/T_m), which has an elementary antiderivative. The
    delta = 0 case is the removable limit w_q = 1/Q.
    """
    if delta == 0:
        return np.full(q, 1.0 / q, dtype=complex)
    edges = np.exp(-2j * np.pi * delta * np.arange(q + 1) / q)
    return (1j / (2 * np.pi * delta)) * (edges[1:] - edges[:-1])


def delay_phase(delta: int, tau: float | np.ndarray, tm: float):
    """Fourier time-shift phase factor for control delay tau at offset delta."""
    return np.exp(-2j * np.pi * delta * np.asarray(tau) / tm)


def fourier_load_coefficient(
    states: np.ndarray,
    tau: float,
    loads: LoadSet,
    h_n: int,
    h_m: int,
    grid: HarmonicGrid,
) -> complex:
    """Closed-form Fourier coefficient of one element's load waveform.

    ``states`` is the element's length-Q slot sequence (1-based state
    indices); the result couples an input at harmonic h_m to an output at
    harmonic h_n and includes the delay phase for control delay ``tau``.
    """
    if h_n not in grid or h_m not in grid:
        raise GridMismatchError(f"harmonic pair ({h_n}, {h_m}) not in grid")
    states = np.asarray(states, dtype=int).ravel()
    if np.any(states < 1) or np.any(states > loads.p):
        raise ValidationError(f"state indices must lie in 1..{loads.p}")
    delta = h_n - h_m
    r = loads.at_harmonic(h_m)[states - 1]
    w = slot_weights(delta, states.size)
    return complex(delay_phase(delta, tau, grid.tm) * np.sum(r * w))


def phi_from_slot_reflections(
    r: np.ndarray, delays: np.ndarray, grid: HarmonicGrid
) -> FloquetLoadScatter:
    """Load operator from raw slot reflections r[m, i, q].

    ``r[m, i, q]`` is the reflection of element i during slot q seen by an
    input at ``grid.harmonics[m]``; no passivity is assumed, so proxy load
    tables can pass through here as well.
    """
    r = np.asarray(r, dtype=complex)
    delays = np.asarray(delays, dtype=float)
    nh, ns, q = r.shape
    if nh != grid.n:
        raise DimensionMismatchError(
            f"slot reflections must cover {grid.n} harmonics, got {nh}"
        )
    if delays.shape != (ns,):
        raise DimensionMismatchError(f"delays must have length {ns}")
    hs = np.array(grid.harmonics)
    diagonals = np.empty((nh, nh, ns), dtype=complex)
    for n in range(nh):
        for m in range(nh):
            delta = int(hs[n] - hs[m])
            w = slot_weights(delta, q)
            diagonals[n, m] = delay_phase(delta, delays, grid.tm) * (r[m] @ w)
    return FloquetLoadScatter(grid, diagonals)


def assemble_phi(
    pattern: ModulationPattern, loads: LoadSet, grid: HarmonicGrid
) -> FloquetLoadScatter:
    """Build all harmonic-pair blocks of the load scattering operator."""
    for h in grid.harmonics:
        if int(h) not in loads.harmonics:
            raise GridMismatchError(f"loads do not cover grid harmonic {h}")
    if np.any(pattern.states > loads.p):
        raise DimensionMismatchError(
            f"pattern uses states beyond the {loads.p} available"
        )
    if np.any(pattern.delays >= grid.tm):
        raise ValidationError("delays must be smaller than the modulation period")
    nh, ns, q = grid.n, pattern.n_ris, pattern.q
    # r[m, i, q]: reflection of element i during slot q for input harmonic m
    r = np.empty((nh, ns, q), dtype=complex)
    for m, h in enumerate(grid.harmonics):
        r[m] = loads.at_harmonic(h)[pattern.states - 1]
    return phi_from_slot_reflections(r, pattern.delays, grid)


def _factor_resolvent(system: np.ndarray):
    """LU-factor (I - Phi S_SS) and verify it is numerically invertible.

    The norm is floored at 1 so the estimate also trips when the whole
    system matrix collapses toward zero, which the scale-invariant
    condition number would miss.
    """
    with warnings.catch_warnings():
        # exact singularity is reported through IllConditionedError below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(system, check_finite=False)
    anorm = max(np.linalg.norm(system, 1), 1.0)
    rcond, info = lapack.zgecon(lu, anorm)
    if info != 0 or not np.isfinite(rcond) or rcond < 1.0 / COND_LIMIT:
        cond = np.inf if rcond == 0 or not np.isfinite(rcond) else 1.0 / rcond
        raise IllConditionedError(cond)
    return lu, piv


def resolvent_channel(
    hd_blocks: np.ndarray,
    a_blocks: np.ndarray,
    gamma_blocks: np.ndarray,
    b_blocks: np.ndarray,
    phi: np.ndarray,
) -> np.ndarray:
    """Stacked channel from per-harmonic blocks and a dense load operator.

    Computes blkdiag(H_d) + blkdiag(A) (I - Phi blkdiag(Gamma))^{-1} Phi
    blkdiag(B) with the harmonic-major layout. ``phi`` is (H N_S, H N_S);
    block arrays carry one block per harmonic along axis 0.
    """
    nh, nr, nt = hd_blocks.shape
    ns = gamma_blocks.shape[1]
    hns = nh * ns
    if phi.shape != (hns, hns):
        raise DimensionMismatchError(f"phi must be ({hns}, {hns}), got {phi.shape}")
    # Right-multiplying by a block-diagonal matrix scales each column block.
    phi_cols = phi.reshape(hns, nh, ns)
    phi_gamma = np.einsum("pms,mst->pmt", phi_cols, gamma_blocks).reshape(hns, hns)
    rhs = np.einsum("pms,mst->pmt", phi_cols, b_blocks).reshape(hns, nh * nt)
    lu_piv = _factor_resolvent(np.eye(hns) - phi_gamma)
    x = sla.lu_solve(lu_piv, rhs, check_finite=False).reshape(nh, ns, nh * nt)
    out = np.einsum("hrs,hsc->hrc", a_blocks, x).reshape(nh * nr, nh * nt)
    rows = np.arange(nh * nr).reshape(nh, nr)
    cols = np.arange(nh * nt).reshape(nh, nt)
    for h in range(nh):
        out[np.ix_(rows[h], cols[h])] += hd_blocks[h]
    return out


def end_to_end_channel(
    model: StaticScatterModel, phi: FloquetLoadScatter
) -> FloquetChannel:
    """End-to-end channel of the static network terminated by modulated loads."""
    if model.grid != phi.grid:
        raise GridMismatchError("model and load operator use different grids")
    part = model.partition
    if phi.n_ris != part.n_ris:
        raise DimensionMismatchError(
            f"load operator has {phi.n_ris} elements, partition {part.n_ris}"
        )
    hd = np.stack([model.block(h, part.rx, part.tx) for h in model.grid.harmonics])
    a = np.stack([model.block(h, part.rx, part.ris) for h in model.grid.harmonics])
    g = np.stack([model.block(h, part.ris, part.ris) for h in model.grid.harmonics])
    b = np.stack([model.block(h, part.ris, part.tx) for h in model.grid.harmonics])
    matrix = resolvent_channel(hd, a, g, b, phi.to_dense())
    return FloquetChannel(model.grid, matrix, part.n_rx, part.n_tx)


def truncate(obj, retained: HarmonicGrid):
    """Restrict a model, load set, or channel to a retained sub-grid.

    Rows, columns, and blocks that belong to dropped harmonics are removed;
    the relative order of the retained harmonics is preserved.
    """
    if isinstance(obj, StaticScatterModel):
        if not retained.is_subgrid_of(obj.grid):
            raise GridMismatchError("retained harmonics missing from source model")
        sel = [obj.grid.index(h) for h in retained.harmonics]
        return StaticScatterModel(
            retained,
            obj.partition,
            obj.matrices[sel],
            obj.reference_impedance,
            obj.reciprocal,
        )
    if isinstance(obj, LoadSet):
        missing = [h for h in retained.harmonics if h not in obj.harmonics]
        if missing:
            raise GridMismatchError(f"retained harmonics {missing} missing from loads")
        sel = [obj.harmonics.index(h) for h in retained.harmonics]
        return LoadSet(obj.rho[:, sel], retained.harmonics)
    if isinstance(obj, FloquetChannel):
        if not retained.is_subgrid_of(obj.grid):
            raise GridMismatchError("retained harmonics missing from source channel")
        sel = np.array([obj.grid.index(h) for h in retained.harmonics])
        rows = (sel[:, None] * obj.n_rx + np.arange(obj.n_rx)).ravel()
        cols = (sel[:, None] * obj.n_tx + np.arange(obj.n_tx)).ravel()
        return FloquetChannel(
            retained, obj.matrix[np.ix_(rows, cols)], obj.n_rx, obj.n_tx
        )
    raise TypeError(f"cannot truncate object of type {type(obj).__name__}")
