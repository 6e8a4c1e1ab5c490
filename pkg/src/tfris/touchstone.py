"""Touchstone S-parameter import and export.

Covers version 1 and version 2 N-port files with RI, MA, and DB data
formats, the four standard frequency units, and the 2-port column-order
quirk. Import extracts one matrix per harmonic by nearest-frequency
selection and reports gaps and mild passivity violations as warnings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, SchemaError, ValidationError
from .floquet import StaticScatterModel
from .grid import HarmonicGrid, PortPartition

_UNIT_SCALE = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}

GAP_FRACTION = 0.1
PASSIVITY_HARD_LIMIT = 1.01


@dataclass(frozen=True)
class TouchstoneData:
    """Parsed network data: frequencies in Hz and per-point S-matrices."""

    freqs_hz: np.ndarray
    matrices: np.ndarray
    reference_impedance: float


@dataclass(frozen=True)
class ImportResult:
    """Imported static model plus human-readable import warnings."""

    model: StaticScatterModel
    warnings: tuple[str, ...]


def _tokens_to_matrices(values, n, path, two_port_order="21_12"):
    per_point = 1 + 2 * n * n
    if len(values) % per_point != 0:
        raise SchemaError(
            f"network data token count {len(values)} is not a multiple of "
            f"{per_point} for {n} ports",
            path,
        )
    pts = len(values) // per_point
    raw = np.asarray(values, dtype=float).reshape(pts, per_point)
    freqs = raw[:, 0]
    pairs = raw[:, 1:].reshape(pts, n * n, 2)
    return freqs, pairs, two_port_order


def _pairs_to_complex(pairs, fmt):
    a, b = pairs[..., 0], pairs[..., 1]
    if fmt == "RI":
        return a + 1j * b
    if fmt == "MA":
        return a * np.exp(1j * np.deg2rad(b))
    if fmt == "DB":
        return 10 ** (a / 20) * np.exp(1j * np.deg2rad(b))
    raise SchemaError(f"unsupported data format '{fmt}'", "")


def read_touchstone(path) -> TouchstoneData:
    """Parse a Touchstone v1 or v2 file into frequencies and matrices."""
    path = str(path)
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.readlines()

    version = 1
    n_ports = None
    option = None
    two_port_order = "21_12"
    data_tokens = []
    in_network_data = version == 1
    for line in lines:
        line = line.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            keyword, _, rest = line.partition("]")
            keyword = keyword[1:].strip().lower()
            rest = rest.strip()
            if keyword == "version":
                version = 2
                in_network_data = False
            elif keyword == "number of ports":
                try:
                    n_ports = int(rest)
                except ValueError:
                    raise SchemaError("bad port count", path) from None
            elif keyword == "two-port data order":
                two_port_order = rest
            elif keyword == "matrix format":
                if rest.lower() != "full":
                    raise SchemaError(
                        f"unsupported matrix format '{rest}'", path
                    )
            elif keyword == "network data":
                in_network_data = True
            elif keyword in ("noise data", "end"):
                in_network_data = False
            continue
        if line.startswith("#"):
            option = line[1:].split()
            continue
        if version == 1 or in_network_data:
            for tok in line.split():
                try:
                    data_tokens.append(float(tok))
                except ValueError:
                    raise SchemaError(f"bad numeric token '{tok}'", path) from None

    unit, fmt, z0 = "ghz", "MA", 50.0
    if option:
        rest = [t for t in option]
        i = 0
        while i < len(rest):
            tok = rest[i].lower()
            if tok in _UNIT_SCALE:
                unit = tok
            elif tok in ("s", "y", "z", "g", "h"):
                if tok != "s":
                    raise SchemaError(
                        f"only S-parameters supported, got '{tok.upper()}'", path
                    )
            elif tok in ("ri", "ma", "db"):
                fmt = tok.upper()
            elif tok == "r" and i + 1 < len(rest):
                z0 = float(rest[i + 1])
                i += 1
            i += 1

    if n_ports is None:
        # v1 files do not declare the port count; infer from the suffix or
        # from the token count of the first frequency point
        suffix = path.rsplit(".", 1)[-1].lower()
        if suffix.startswith("s") and suffix.endswith("p"):
            try:
                n_ports = int(suffix[1:-1])
            except ValueError:
                n_ports = None
        if n_ports is None:
            n_ports = _infer_ports(len(data_tokens))
    if not data_tokens:
        raise SchemaError("file contains no network data", path)

    freqs, pairs, order = _tokens_to_matrices(
        data_tokens, n_ports, path, two_port_order
    )
    flat = _pairs_to_complex(pairs, fmt)
    mats = flat.reshape(-1, n_ports, n_ports)
    if n_ports == 2 and order.replace(",", "").replace(" ", "") != "12_21":
        # v1 two-port files interleave S11 S21 S12 S22
        mats = mats.swapaxes(1, 2)
    if np.any(np.diff(freqs) < 0):
        raise SchemaError("frequencies must be non-decreasing", path)
    return TouchstoneData(freqs * _UNIT_SCALE[unit], mats, z0)


def _infer_ports(token_count):
    for n in range(1, 512):
        if token_count % (1 + 2 * n * n) == 0:
            return n
    raise SchemaError("cannot infer port count from data size", "")


def write_touchstone(path, freqs_hz, matrices, z0=50.0) -> None:
    """Write a v1 real-imaginary Touchstone file (Hz, row-major matrices)."""
    freqs_hz = np.asarray(freqs_hz, dtype=float)
    matrices = np.asarray(matrices, dtype=complex)
    pts, n, n2 = matrices.shape
    if n != n2 or freqs_hz.shape != (pts,):
        raise DimensionMismatchError("matrices must be (F, N, N) with F freqs")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"! {n}-port S-parameters\n")
        fh.write(f"# Hz S RI R {z0:g}\n")
        for f, m in zip(freqs_hz, matrices):
            if n == 2:
                m = m.T  # v1 two-port column order is S11 S21 S12 S22
            vals = m.reshape(-1)
            fh.write(f"{float(f)!r}")
            for i, z in enumerate(vals):
                if i and i % 4 == 0:
                    fh.write("\n ")
                fh.write(f" {float(z.real)!r} {float(z.imag)!r}")
            fh.write("\n")


def terminate_ports(s: np.ndarray, keep, reflection=0.0) -> np.ndarray:
    """Close all ports outside ``keep`` with loads of the given reflection.

    The reduced scattering matrix is S_kk + S_kd G (I - S_dd G)^{-1} S_dk
    with G = reflection * I over the dropped ports; zero reflection makes
    this plain sub-matrix selection.
    """
    s = np.asarray(s, dtype=complex)
    keep = np.asarray(keep, dtype=int)
    dropped = np.setdiff1d(np.arange(s.shape[0]), keep)
    s_kk = s[np.ix_(keep, keep)]
    if dropped.size == 0:
        return s_kk
    g = reflection * np.eye(dropped.size)
    s_kd = s[np.ix_(keep, dropped)]
    s_dd = s[np.ix_(dropped, dropped)]
    s_dk = s[np.ix_(dropped, keep)]
    inner = np.linalg.solve(np.eye(dropped.size) - s_dd @ g, s_dk)
    return s_kk + s_kd @ g @ inner


def import_touchstone_set(
    paths,
    grid: HarmonicGrid,
    partition: PortPartition,
    port_map=None,
) -> ImportResult:
    """Build a static model from one Touchstone file per harmonic.

    ``paths`` maps harmonic index to file path (or is a sequence aligned
    with the grid); ``port_map`` selects which file ports become model
    ports 0..N-1, defaulting to an identity mapping. Matched-load
    termination of unselected ports equals sub-matrix selection.
    """
    if isinstance(paths, dict):
        missing = [h for h in grid.harmonics if h not in paths]
        if missing:
            raise ValidationError(f"missing files for harmonics {missing}")
        ordered = [paths[h] for h in grid.harmonics]
    else:
        ordered = list(paths)
        if len(ordered) != grid.n:
            raise DimensionMismatchError(
                f"need {grid.n} files, got {len(ordered)}"
            )
    n = partition.n
    warnings = []
    out = np.empty((grid.n, n, n), dtype=complex)
    for i, (h, path) in enumerate(zip(grid.harmonics, ordered)):
        data = read_touchstone(path)
        target = grid.frequency(h)
        j = int(np.argmin(np.abs(data.freqs_hz - target)))
        gap = abs(data.freqs_hz[j] - target)
        if gap > GAP_FRACTION * grid.fm:
            warnings.append(
                f"harmonic {h}: nearest frequency {data.freqs_hz[j]:.6e} Hz "
                f"is {gap:.3e} Hz from target {target:.6e} Hz"
            )
        s = data.matrices[j]
        if port_map is not None:
            s = terminate_ports(s, port_map)
        if s.shape != (n, n):
            raise DimensionMismatchError(
                f"harmonic {h}: file provides {s.shape[0]} ports, need {n}"
            )
        smax = np.linalg.norm(s, 2)
        if smax > PASSIVITY_HARD_LIMIT:
            raise ValidationError(
                f"harmonic {h}: largest singular value {smax:.6g} exceeds "
                f"the {PASSIVITY_HARD_LIMIT} import limit"
            )
        if smax > 1:
            warnings.append(
                f"harmonic {h}: mildly non-passive data (smax {smax:.6g}) "
                "rescaled to the unit sphere"
            )
            s = s / smax
        out[i] = s
    model = StaticScatterModel(grid, partition, out)
    return ImportResult(model, tuple(warnings))
