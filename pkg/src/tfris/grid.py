"""Harmonic grid and port bookkeeping.

Frequencies are f_h = f0 + h*fm for integer harmonic indices h. All stacked
multi-harmonic matrices in this package are laid out harmonic-major,
port-minor: block i of a stacked vector/matrix belongs to ``harmonics[i]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import GridMismatchError, ValidationError


@dataclass(frozen=True)
class HarmonicGrid:
    """A finite, zero-symmetric set of retained harmonic indices.

    Parameters
    ----------
    f0 : float
        Carrier frequency in Hz.
    fm : float
        Modulation frequency in Hz (slow compared to the carrier).
    harmonics : tuple[int, ...]
        Strictly increasing integer harmonic indices, symmetric around 0.
    """

    f0: float
    fm: float
    harmonics: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple(int(h) for h in self.harmonics))
        if not (self.f0 > 0 and self.fm > 0):
            raise ValidationError("f0 and fm must be positive")
        if self.f0 / self.fm <= 10:
            raise ValidationError(
                f"f0/fm = {self.f0 / self.fm:.3g} but the model assumes fm much "
                "smaller than f0 (require f0/fm > 10)"
            )
        h = self.harmonics
        if len(h) == 0 or len(h) % 2 == 0:
            raise ValidationError("harmonics must have odd cardinality")
        if any(b <= a for a, b in zip(h, h[1:])):
            raise ValidationError("harmonics must be strictly increasing")
        if 0 not in h:
            raise ValidationError("harmonics must contain 0")
        if tuple(-x for x in reversed(h)) != h:
            raise ValidationError("harmonics must be symmetric around 0")

    @classmethod
    def centered(cls, f0: float, fm: float, count: int) -> "HarmonicGrid":
        """Contiguous grid of ``count`` harmonics centered on 0 (count odd)."""
        if count < 1 or count % 2 == 0:
            raise ValidationError(f"harmonic count must be odd and >= 1, got {count}")
        half = count // 2
        return cls(f0, fm, tuple(range(-half, half + 1)))

    @property
    def tm(self) -> float:
        """Modulation period T_m = 1/fm (seconds)."""
        return 1.0 / self.fm

    @property
    def n(self) -> int:
        return len(self.harmonics)

    def frequency(self, h: int) -> float:
        """Absolute frequency of harmonic h (Hz)."""
        self.index(h)
        return self.f0 + h * self.fm

    def index(self, h: int) -> int:
        """Position of harmonic h in the grid order."""
        try:
            return self.harmonics.index(int(h))
        except ValueError:
            raise GridMismatchError(f"harmonic {h} not in grid {self.harmonics}") from None

    def __contains__(self, h: int) -> bool:
        return int(h) in self.harmonics

    def is_subgrid_of(self, other: "HarmonicGrid") -> bool:
        """True when every frequency of this grid appears in ``other``."""
        return (
            self.f0 == other.f0
            and self.fm == other.fm
            and set(self.harmonics) <= set(other.harmonics)
        )


@dataclass(frozen=True)
class PortPartition:
    """Disjoint partition of the N static-network ports.

    Index sets are 0-based and must jointly cover ``range(N)`` with
    N = n_tx + n_rx + n_ris.
    """

    tx: tuple[int, ...]
    rx: tuple[int, ...]
    ris: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tx", tuple(int(i) for i in self.tx))
        object.__setattr__(self, "rx", tuple(int(i) for i in self.rx))
        object.__setattr__(self, "ris", tuple(int(i) for i in self.ris))
        if min(len(self.tx), len(self.rx), len(self.ris)) < 1:
            raise ValidationError("each of tx, rx, ris needs at least one port")
        allports = self.tx + self.rx + self.ris
        if len(set(allports)) != len(allports):
            raise ValidationError("tx, rx, ris must be pairwise disjoint")
        if set(allports) != set(range(self.n)):
            raise ValidationError(
                f"port sets must cover 0..{self.n - 1} exactly, got {sorted(allports)}"
            )

    @classmethod
    def contiguous(cls, n_tx: int, n_rx: int, n_ris: int) -> "PortPartition":
        """Standard layout: tx ports first, then rx, then RIS elements."""
        a = tuple(range(n_tx))
        b = tuple(range(n_tx, n_tx + n_rx))
        c = tuple(range(n_tx + n_rx, n_tx + n_rx + n_ris))
        return cls(a, b, c)

    @property
    def n_tx(self) -> int:
        return len(self.tx)

    @property
    def n_rx(self) -> int:
        return len(self.rx)

    @property
    def n_ris(self) -> int:
        return len(self.ris)

    @property
    def n(self) -> int:
        return len(self.tx) + len(self.rx) + len(self.ris)
