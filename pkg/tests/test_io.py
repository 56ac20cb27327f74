import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracbiot import generators as gen
from fracbiot.errors import UnsupportedElementError
from fracbiot.io import (
    MeshFormatError,
    OutputError,
    read_csv,
    read_gmsh,
    read_vtk_cell_data,
    write_csv,
    write_gmsh,
    write_vtk,
)
from fracbiot.mesh import build_mesh

from conftest import fractured_raw

TRIANGLE = """$MeshFormat
2.2 0 8
$EndMeshFormat
$PhysicalNames
2
1 1 "bottom"
2 2 "domain"
$EndPhysicalNames
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
3
1 1 2 1 1 1 2
2 2 2 2 2 1 2 3
3 2 2 2 2 1 3 4
$EndElements
"""


def _same_raw(a, b):
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.cells, b.cells)
    assert set(a.face_groups) == set(b.face_groups)
    for k in a.face_groups:
        assert np.array_equal(a.face_groups[k], b.face_groups[k])


class TestGmsh:
    def test_read_minimal(self, tmp_path):
        p = tmp_path / "m.msh"
        p.write_text(TRIANGLE)
        raw = read_gmsh(p)
        assert raw.nodes.shape == (4, 2)
        assert raw.cells.tolist() == [[0, 1, 2], [0, 2, 3]]
        assert raw.face_groups["bottom"].tolist() == [[0, 1]]

    @pytest.mark.parametrize("dim", [2, 3])
    def test_round_trip_generator(self, dim, tmp_path):
        raw = fractured_raw(dim)
        p = tmp_path / "m.msh"
        write_gmsh(p, raw)
        back = read_gmsh(p)
        _same_raw(raw, back)
        a, b = build_mesh(raw, ["f"]), build_mesh(back, ["f"])
        assert np.array_equal(a.nodes, b.nodes)
        assert np.array_equal(a.face_nodes, b.face_nodes)
        assert np.array_equal(a.face_cells, b.face_cells)

    @given(st.integers(1, 5), st.integers(1, 5), st.floats(0.0, 0.45), st.integers(0, 100),
           st.floats(0.1, 1e3), st.floats(-1e3, 1e3))
    def test_round_trip_property(self, nx, ny, perturb, seed, length, shift):
        import tempfile
        from pathlib import Path

        raw = gen.rectangle(nx, ny, lengths=(length, 2 * length), origin=(shift, -shift), perturb=perturb, seed=seed)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "m.msh"
            write_gmsh(p, raw)
            _same_raw(raw, read_gmsh(p))

    @pytest.mark.parametrize(
        "mutate, line",
        [
            (lambda t: t.replace("$EndNodes\n", ""), None),
            (lambda t: t.replace("2.2 0 8", "4.1 0 8"), 2),
            (lambda t: t.replace("2 2 2 2 2 1 2 3", "2 2 2 2 2 1 2"), 20),
            (lambda t: t.replace("3 1 1 0", "3 1 x 0"), 10),
            (lambda t: t.replace("2 2 2 2 2 1 2 3", "2 2 2 2 2 1 2 9"), 20),
        ],
        ids=["unclosed-section", "version", "short-element", "bad-node", "unknown-node"],
    )
    def test_malformed(self, mutate, line, tmp_path):
        p = tmp_path / "bad.msh"
        p.write_text(mutate(TRIANGLE))
        with pytest.raises(MeshFormatError) as err:
            read_gmsh(p)
        assert str(p) in str(err.value)
        if line is not None:
            assert err.value.line is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(MeshFormatError):
            read_gmsh(tmp_path / "nope.msh")

    def test_unsupported_element(self, tmp_path):
        p = tmp_path / "quad.msh"
        p.write_text(TRIANGLE.replace("3\n1 1 2 1 1 1 2", "4\n9 3 2 2 2 1 2 3 4\n1 1 2 1 1 1 2"))
        with pytest.raises(UnsupportedElementError):
            read_gmsh(p)


class TestVtk:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_cell_data(self, dim, tmp_path, rng):
        mesh = build_mesh(fractured_raw(dim), ["f"])
        u = rng.standard_normal((mesh.num_cells, dim))
        p = rng.standard_normal(mesh.num_cells)
        path = tmp_path / "out.vtk"
        write_vtk(path, mesh, {"u": u, "p": p})
        data = read_vtk_cell_data(path)
        assert data["u"].shape == (mesh.num_cells, 3)
        assert np.array_equal(data["u"][:, :dim], u)
        if dim == 2:
            assert np.all(data["u"][:, 2] == 0)
        assert np.array_equal(data["p"], p)
        text = path.read_text()
        assert f"POINTS {mesh.num_nodes} double" in text
        assert f"CELL_TYPES {mesh.num_cells}" in text

    def test_length_mismatch(self, tmp_path):
        mesh = build_mesh(gen.rectangle(2, 2))
        with pytest.raises(ValueError):
            write_vtk(tmp_path / "x.vtk", mesh, {"p": np.zeros(3)})


class TestCsv:
    def test_round_trip_exact_floats(self, tmp_path):
        rows = [["a", 1, 0.1 + 0.2], ["b", 2, np.float64(1e-300)]]
        path = tmp_path / "t.csv"
        write_csv(path, ["name", "k", "x"], rows)
        header, back = read_csv(path)
        assert header == ["name", "k", "x"]
        assert float(back[0][2]) == 0.1 + 0.2 and float(back[1][2]) == 1e-300

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OutputError) as err:
            write_csv(blocker / "sub" / "t.csv", ["a"], [])
        assert "sub" in str(err.value)
