import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracbiot import generators as gen
from fracbiot.convergence import (
    CONVERGENCE_TABLE_HEADER,
    compare_levels,
    fitted_order,
    level_solution,
    locate_cells,
    locate_faces,
    observed_orders,
    relative_error,
    run_convergence_study,
)
from fracbiot.errors import ContractViolation
from fracbiot.mesh import build_mesh
from fracbiot.scenarios import parse_scenario, run_scenario

from test_scenarios import SMALL


class TestMetrics:
    def test_relative_error_examples(self, rng):
        xi = rng.standard_normal((10, 2))
        w = rng.uniform(0.1, 1, 10)
        assert relative_error(xi, xi, w) == 0.0
        assert np.isclose(relative_error(2 * xi, xi, w), 1.0)

    def test_zero_reference(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.ones(3), np.zeros(3)) == np.inf

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            relative_error(np.zeros(3), np.zeros(4))

    def test_orders(self):
        assert np.allclose(observed_orders([0.1, 0.05]), [1.0])
        assert np.allclose(observed_orders([0.1, 0.025], [8, 16]), [2.0])
        assert np.isclose(fitted_order([0.4, 0.1, 0.025]), 2.0)
        assert np.isnan(fitted_order([0.1]))

    @given(st.floats(0.1, 3.0), st.floats(1e-6, 1.0), st.integers(2, 6))
    def test_fitted_recovers_power_law(self, p, c, n):
        r = 2.0 ** np.arange(n)
        assert np.isclose(fitted_order(c * r**-p, r), p)
        assert np.allclose(observed_orders(c * r**-p, r), p)


class TestLocate:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_cells(self, dim, rng):
        mesh = build_mesh(gen.rectangle(5, 4, perturb=0.3, seed=2) if dim == 2 else gen.box(3, 3, 3, perturb=0.2, seed=2))
        pts = rng.uniform(0.01, 0.99, (200, dim))
        cells = locate_cells(mesh, pts)
        verts = mesh.nodes[mesh.cell_nodes[cells]]
        T = np.swapaxes(verts[:, 1:] - verts[:, :1], 1, 2)
        lam = np.linalg.solve(T, (pts - verts[:, 0])[..., None])[..., 0]
        bary = np.column_stack([1 - lam.sum(axis=1), lam])
        assert bary.min() >= -1e-12

    def test_own_centroids(self):
        mesh = build_mesh(gen.rectangle(6, 6, perturb=0.2, seed=1))
        assert np.array_equal(locate_cells(mesh, mesh.cell_centers), np.arange(mesh.num_cells))

    def test_faces(self):
        coarse = build_mesh(gen.rectangle(4, 4, pattern="crossed",
                                          fractures={"f": gen.on_polyline([(0.25, 0.5), (0.75, 0.5)])}), ["f"])
        faces = np.flatnonzero(coarse.face_fracture >= 0)
        pts = np.column_stack([np.linspace(0.26, 0.74, 9), np.full(9, 0.5)])
        pos = locate_faces(coarse, faces, pts)
        fn = coarse.nodes[coarse.face_nodes[faces[pos]]]
        lo, hi = fn[:, :, 0].min(axis=1), fn[:, :, 0].max(axis=1)
        assert np.all((lo <= pts[:, 0] + 1e-12) & (pts[:, 0] <= hi + 1e-12))


def small(n):
    return parse_scenario(SMALL.replace("cells: [6, 6]", f"cells: [{n}, {n}]"))


class TestStudy:
    def test_self_comparison_is_zero(self):
        res = run_scenario(small(6))
        s = level_solution(res, 6)
        errs = compare_levels(s, s)
        assert set(errs) == {("u", "omega"), ("lam", "f"), ("jump", "f")}
        assert all(v == 0 for v in errs.values())

    def test_study(self):
        table = run_convergence_study(small, [6, 12], 24)
        for key in (("u", "omega"), ("lam", "f"), ("jump", "f")):
            e = table.errors[key]
            assert len(e) == 2 and all(np.isfinite(e)) and e[1] < e[0]
        rows = table.rows()
        assert all(len(r) == len(CONVERGENCE_TABLE_HEADER) for r in rows)
        assert sum(r[2] == "fit" for r in rows) == 3
        assert "reference level 24" in table.to_text()
        assert set(table.iterations) == {6, 12, 24}

    def test_reference_must_be_finest(self):
        with pytest.raises(ContractViolation):
            run_convergence_study(small, [6, 24], 12)
