"""Touchstone parsing, export round trip, and per-harmonic import tests."""

import numpy as np
import pytest

from tfris.errors import SchemaError, ValidationError
from tfris.grid import HarmonicGrid, PortPartition
from tfris.touchstone import (
    import_touchstone_set,
    read_touchstone,
    terminate_ports,
    write_touchstone,
)

from conftest import random_static_model


def random_matrices(rng, pts, n, scale=0.4):
    m = rng.normal(size=(pts, n, n)) + 1j * rng.normal(size=(pts, n, n))
    return scale * m / np.sqrt(n)


class TestReadWrite:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_round_trip(self, rng, tmp_path, n):
        freqs = np.array([1e9, 2e9, 3e9])
        mats = random_matrices(rng, 3, n)
        path = tmp_path / f"net.s{n}p"
        write_touchstone(path, freqs, mats)
        data = read_touchstone(path)
        assert np.allclose(data.freqs_hz, freqs)
        assert np.array_equal(data.matrices, mats)
        assert data.reference_impedance == 50.0

    def test_two_port_v1_column_order(self, tmp_path):
        # v1 two-port rows run S11 S21 S12 S22
        path = tmp_path / "pair.s2p"
        path.write_text(
            "# Hz S RI R 50\n"
            "1.0 0.11 0.0 0.21 0.0 0.12 0.0 0.22 0.0\n"
        )
        data = read_touchstone(path)
        want = np.array([[0.11, 0.12], [0.21, 0.22]])
        assert np.allclose(data.matrices[0], want)

    def test_magnitude_angle_format(self, tmp_path):
        path = tmp_path / "net.s1p"
        path.write_text("# GHz S MA R 50\n2.5 0.5 90.0\n")
        data = read_touchstone(path)
        assert data.freqs_hz[0] == pytest.approx(2.5e9)
        assert data.matrices[0, 0, 0] == pytest.approx(0.5j)

    def test_db_format(self, tmp_path):
        path = tmp_path / "net.s1p"
        path.write_text("# MHz S DB R 75\n10 -6.0205999132796 180\n")
        data = read_touchstone(path)
        assert data.freqs_hz[0] == pytest.approx(1e7)
        assert data.matrices[0, 0, 0] == pytest.approx(-0.5)
        assert data.reference_impedance == 75.0

    def test_default_option_line_is_ma_ghz(self, tmp_path):
        path = tmp_path / "net.s1p"
        path.write_text("#\n1.0 1.0 0.0\n")
        data = read_touchstone(path)
        assert data.freqs_hz[0] == pytest.approx(1e9)
        assert data.matrices[0, 0, 0] == pytest.approx(1.0)

    def test_comments_and_wrapping(self, rng, tmp_path):
        freqs = np.array([5e8])
        mats = random_matrices(rng, 1, 3)
        path = tmp_path / "net.s3p"
        write_touchstone(path, freqs, mats)
        text = "! leading comment\n" + path.read_text() + "! trailing\n"
        path.write_text(text)
        data = read_touchstone(path)
        assert np.array_equal(data.matrices, mats)
        # 9 complex pairs cannot fit one line under the 4-pair wrap rule
        assert any(line.startswith(" ") for line in text.splitlines())

    def test_v2_network_data(self, rng, tmp_path):
        mats = random_matrices(rng, 2, 3)
        body_lines = []
        for f, m in zip([1.0, 2.0], mats):
            row = [f"{f}"]
            for z in m.reshape(-1):
                row.append(f"{float(z.real)!r} {float(z.imag)!r}")
            body_lines.append(" ".join(row))
        path = tmp_path / "net.ts"
        path.write_text(
            "[Version] 2.0\n"
            "# GHz S RI R 50\n"
            "[Number of Ports] 3\n"
            "[Number of Frequencies] 2\n"
            "[Matrix Format] Full\n"
            "[Network Data]\n" + "\n".join(body_lines) + "\n[End]\n"
        )
        data = read_touchstone(path)
        assert np.allclose(data.freqs_hz, [1e9, 2e9])
        assert np.allclose(data.matrices, mats)

    def test_bad_token(self, tmp_path):
        path = tmp_path / "net.s1p"
        path.write_text("# Hz S RI R 50\n1.0 garbage 0.0\n")
        with pytest.raises(SchemaError):
            read_touchstone(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "net.s1p"
        path.write_text("# Hz S RI R 50\n")
        with pytest.raises(SchemaError):
            read_touchstone(path)

    def test_token_count_mismatch(self, tmp_path):
        path = tmp_path / "net.s2p"
        path.write_text("# Hz S RI R 50\n1.0 0.1 0.2 0.3\n")
        with pytest.raises(SchemaError):
            read_touchstone(path)


class TestTerminatePorts:
    def test_matched_load_equals_submatrix(self, rng):
        s = random_matrices(rng, 1, 8)[0]
        keep = np.array([1, 3, 4])
        reduced = terminate_ports(s, keep, reflection=0.0)
        assert np.array_equal(reduced, s[np.ix_(keep, keep)])

    def test_nonzero_reflection_differs(self, rng):
        s = random_matrices(rng, 1, 5)[0]
        keep = np.array([0, 2])
        r0 = terminate_ports(s, keep, reflection=0.0)
        r1 = terminate_ports(s, keep, reflection=0.5)
        assert not np.allclose(r0, r1)

    def test_short_circuit_one_port(self, rng):
        # closing port 1 of a 2-port with reflection g gives the classic
        # one-port formula s11 + s12 g s21 / (1 - s22 g)
        s = random_matrices(rng, 1, 2)[0]
        g = 0.3 - 0.4j
        got = terminate_ports(s, np.array([0]), reflection=g)
        want = s[0, 0] + s[0, 1] * g * s[1, 0] / (1 - s[1, 1] * g)
        assert np.allclose(got[0, 0], want)


class TestImportSet:
    def write_model_files(self, model, tmp_path):
        paths = {}
        for h in model.grid.harmonics:
            f = model.grid.frequency(h)
            s = model.at_harmonic(h)
            path = tmp_path / f"h{h}.s{s.shape[0]}p"
            write_touchstone(path, np.array([f - 2e5, f, f + 3e5]),
                             np.stack([s, s, s]))
            paths[h] = path
        return paths

    def test_round_trip_through_files(self, rng, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 3)
        part = PortPartition.contiguous(1, 1, 2)
        model = random_static_model(rng, grid, part)
        paths = self.write_model_files(model, tmp_path)
        result = import_touchstone_set(paths, grid, part)
        assert np.array_equal(result.model.matrices, model.matrices)
        assert result.warnings == ()

    def test_sequence_paths(self, rng, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 3)
        part = PortPartition.contiguous(1, 1, 2)
        model = random_static_model(rng, grid, part)
        paths = self.write_model_files(model, tmp_path)
        ordered = [paths[h] for h in grid.harmonics]
        result = import_touchstone_set(ordered, grid, part)
        assert np.array_equal(result.model.matrices, model.matrices)

    def test_gap_warning(self, rng, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 3)
        part = PortPartition.contiguous(1, 1, 2)
        model = random_static_model(rng, grid, part)
        paths = self.write_model_files(model, tmp_path)
        # rewrite harmonic +1 far from its target frequency
        f_bad = grid.frequency(1) + 0.5 * grid.fm
        write_touchstone(
            paths[1], np.array([f_bad]), model.at_harmonic(1)[None]
        )
        result = import_touchstone_set(paths, grid, part)
        assert len(result.warnings) == 1
        assert "harmonic 1" in result.warnings[0]

    def test_missing_harmonic(self, rng, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 3)
        part = PortPartition.contiguous(1, 1, 2)
        model = random_static_model(rng, grid, part)
        paths = self.write_model_files(model, tmp_path)
        del paths[0]
        with pytest.raises(ValidationError):
            import_touchstone_set(paths, grid, part)

    def test_port_map_submatrix(self, rng, tmp_path):
        # larger measured network restricted to a sub-partition by matched
        # termination of the unused ports
        grid = HarmonicGrid.centered(135e9, 125e6, 3)
        part = PortPartition.contiguous(2, 2, 3)
        keep = [0, 2, 3, 5, 7, 8, 10]
        big = {}
        paths = {}
        for h in grid.harmonics:
            s = random_matrices(rng, 1, 12, scale=0.9)[0]
            s *= 0.9 / np.linalg.norm(s, 2)
            big[h] = s
            path = tmp_path / f"big{h}.s12p"
            write_touchstone(path, np.array([grid.frequency(h)]), s[None])
            paths[h] = path
        result = import_touchstone_set(paths, grid, part, port_map=keep)
        for i, h in enumerate(grid.harmonics):
            want = big[h][np.ix_(keep, keep)]
            assert np.array_equal(result.model.matrices[i], want)

    def test_mild_passivity_violation_warns(self, rng, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 1)
        part = PortPartition.contiguous(1, 1, 1)
        s = 1.005 * np.eye(3, dtype=complex)
        path = tmp_path / "hot.s3p"
        write_touchstone(path, np.array([grid.f0]), s[None])
        result = import_touchstone_set({0: path}, grid, part)
        assert any("non-passive" in w for w in result.warnings)
        assert np.linalg.norm(result.model.matrices[0], 2) <= 1

    def test_hard_passivity_violation_fails(self, tmp_path):
        grid = HarmonicGrid.centered(135e9, 125e6, 1)
        part = PortPartition.contiguous(1, 1, 1)
        s = 1.2 * np.eye(3, dtype=complex)
        path = tmp_path / "active.s3p"
        write_touchstone(path, np.array([grid.f0]), s[None])
        with pytest.raises(ValidationError):
            import_touchstone_set({0: path}, grid, part)
