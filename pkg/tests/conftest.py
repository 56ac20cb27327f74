import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracbiot import generators as gen
from fracbiot.assembly import Discretization
from fracbiot.fvm_local import BoundaryTypes, MaterialField
from fracbiot.mesh import build_mesh, build_subgrid, pair_fracture_sides

settings.register_profile(
    "fracbiot",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("fracbiot")


def fractured_raw(dim, n=4):
    """Small mesh with one interior fracture (2d segment or 3d disc)."""
    if dim == 2:
        return gen.rectangle(
            n, n, pattern="crossed",
            fractures={"f": gen.on_polyline([(1 / n, 0.5), (1 - 1 / n, 0.5)])},
        )
    return gen.box(n, n, n, fractures={"f": gen.on_disc((0.5, 0.5, 0.5), (0.0, 0.0, 1.0), 0.3)})


def make_disc(dim, n=4, flow=True, friction=0.5, bnd="dirichlet", **material):
    mesh = build_mesh(fractured_raw(dim, n), ["f"])
    sg = build_subgrid(mesh)
    pr = pair_fracture_sides(sg)
    kw = dict(mu=1.0, lam=1.0, alpha=0.8 if flow else 0.0, c0=0.1, perm=1.0)
    kw.update(material)
    mat = MaterialField.homogeneous(mesh.num_cells, dim, **kw)
    bt = BoundaryTypes.all_dirichlet(sg) if bnd == "dirichlet" else bnd(sg)
    return Discretization(mesh, sg, pr, mat, bt, friction, flow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
