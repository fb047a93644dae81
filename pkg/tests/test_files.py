import numpy as np
import pytest

from viscogalerkin.basis import CoefficientVector, build_basis, random_coefficients
from viscogalerkin.files import (
    TRAJECTORY_HEADER,
    TrajectoryWriter,
    fmt,
    load_snapshot,
    read_trajectory_csv,
    save_snapshot,
    write_rows,
    write_trajectory,
)
from viscogalerkin.integrator import IntegratorConfig, run
from viscogalerkin.viscosity import ViscosityModel


class TestSnapshot:
    @pytest.mark.parametrize("N,m", [(2, 4), (3, 2)])
    def test_roundtrip_bit_exact(self, N, m, tmp_path):
        b = build_basis(N, m)
        u = random_coefficients(b, 11).replace(t=0.1 + 0.2)
        p = save_snapshot(u, tmp_path / "s.csv")
        v = load_snapshot(p)
        assert v.t == u.t
        assert np.array_equal(v.d, u.d)
        assert v.basis.grid_size == b.grid_size

    def test_lf_only(self, tmp_path):
        p = save_snapshot(random_coefficients(build_basis(2, 3), 0), tmp_path / "s.csv")
        raw = p.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")

    def test_basis_mismatch(self, tmp_path):
        p = save_snapshot(CoefficientVector.zeros(build_basis(2, 3)), tmp_path / "s.csv")
        with pytest.raises(ValueError):
            load_snapshot(p, build_basis(2, 4))

    def test_bad_mode_line(self, tmp_path):
        p = save_snapshot(CoefficientVector.zeros(build_basis(2, 2)), tmp_path / "s.csv")
        p.write_text(p.read_text() + "9,9,cos,1.0\n")
        with pytest.raises(ValueError, match=r"s\.csv:\d+"):
            load_snapshot(p)

    def test_duplicate_mode(self, tmp_path):
        p = save_snapshot(CoefficientVector.zeros(build_basis(2, 2)), tmp_path / "s.csv")
        p.write_text(p.read_text() + "1,0,cos,1.0\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_snapshot(p)

    def test_not_a_snapshot(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            load_snapshot(p)


class TestTrajectory:
    def test_roundtrip(self, tmp_path):
        b = build_basis(2, 3)
        traj, _ = run(random_coefficients(b, 2), IntegratorConfig(t_end=0.2, record_dt=0.05),
                      ViscosityModel("carreau", mu=1.0, alpha=1.0), 1e-3)
        p = write_trajectory(traj, tmp_path / "t.csv")
        data = read_trajectory_csv(p)
        assert tuple(data) == TRAJECTORY_HEADER
        assert np.array_equal(data["t"], traj.times)
        assert np.array_equal(data["l2"], traj["l2"])

    def test_writer_flushes_each_row(self, tmp_path):
        p = tmp_path / "t.csv"
        with TrajectoryWriter(p) as w:
            w(0.0, None, [1.0] * (len(TRAJECTORY_HEADER) - 1))
            assert len(p.read_text().splitlines()) == 2
        assert w._fh.closed

    def test_rows(self, tmp_path):
        p = write_rows(tmp_path / "r.csv", ["a", "b"], [[1, 0.1], ["x", np.float64(2.5)]])
        assert p.read_text() == "a,b\n1,0.1\nx,2.5\n"


class TestFmt:
    def test_values(self):
        assert fmt(3) == "3"
        assert fmt(np.int64(3)) == "3"
        assert fmt(0.1 + 0.2) == "0.30000000000000004"
        assert fmt(np.float64(1e-300)) == "1e-300"
        assert fmt("cos") == "cos"
        assert fmt(float("nan")) == "nan"
