import csv

import pytest

from fracbiot import generators as gen
from fracbiot.cli import EXIT_IO, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_VALIDATION, apply_overrides, main
from fracbiot.errors import ScenarioError
from fracbiot.io import write_gmsh
from fracbiot.scenarios import preset

from test_scenarios import SMALL


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(SMALL)
    return path


def test_run_config(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--output", str(out)]) == EXIT_OK
    assert "completed" in capsys.readouterr().out
    assert (out / "small_fractures_0000.csv").is_file()
    assert (out / "small_0000.vtk").is_file()


def test_run_preset_with_overrides(tmp_path, capsys):
    args = ["run", "--preset", "consolidation", "--param", "cells=4", "--param", "steps=2",
            "--dt", "0.5", "--delta", "1e-8", "--c", "1e9", "--output", str(tmp_path)]
    assert main(args) == EXIT_OK
    text = capsys.readouterr().out
    assert "t=1 " in text and "step   2" in text


def test_nonconvergence(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(SMALL.replace("{c: 1.0}", "{c: 1.0, max_iter: 1}"))
    assert main(["run", "--config", str(path), "--output", str(tmp_path / "o")]) == EXIT_NONCONVERGENCE
    assert "FAILED" in (tmp_path / "o" / "small_report.txt").read_text()


def exit_code(args):
    """``main`` return value, or the code of an argparse usage exit."""
    try:
        return main(args)
    except SystemExit as err:
        return err.code


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--preset", "ex9"],
        ["run", "--preset", "ex1", "--param", "n=7"],
        ["run", "--preset", "ex1", "--param", "bogus=1"],
        ["run", "--preset", "consolidation", "--param", "cells=2", "--dt", "-1"],
        ["run"],
        ["frobnicate"],
        ["run", "--preset", "ex1", "--param", "novalue"],
    ],
    ids=["unknown-preset", "bad-n", "unknown-kw", "negative-dt", "no-source", "bad-verb", "bad-param"],
)
def test_validation_errors(args, tmp_path):
    assert exit_code(args + ["--output", str(tmp_path)]) == EXIT_VALIDATION


def test_invalid_config_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(SMALL.replace("ymax:", "top:"))
    assert main(["run", "--config", str(path), "--output", str(tmp_path)]) == EXIT_VALIDATION


def test_io_errors(tmp_path, config):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == EXIT_IO
    assert main(["mesh-info", "--mesh", str(tmp_path / "missing.msh")]) == EXIT_IO
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", "--config", str(config), "--output", str(blocker / "x")]) == EXIT_IO


def test_malformed_mesh_is_validation(tmp_path):
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    assert main(["mesh-info", "--mesh", str(bad)]) == EXIT_VALIDATION


def test_mesh_info(tmp_path, capsys):
    path = tmp_path / "m.msh"
    write_gmsh(path, gen.rectangle(3, 2))
    assert main(["mesh-info", "--mesh", str(path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "cells 12" in out and "dimension 2" in out
    assert main(["mesh-info", "--preset", "ex1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "fracture f6" in out and "cells 800" in out


def test_convergence(tmp_path, capsys):
    args = ["convergence", "--preset", "consolidation", "--param", "steps=2", "--param", "dt=10.0",
            "--levels", "4", "8", "--reference", "16", "--output", str(tmp_path)]
    assert main(args) == EXIT_OK
    with open(tmp_path / "consolidation_convergence.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["variable", "domain", "level", "error", "order"]
    assert any(r[2] == "fit" for r in rows[1:])


def test_convergence_unknown_family(tmp_path):
    assert main(["convergence", "--preset", "nope", "--levels", "1", "--reference", "2"]) == EXIT_VALIDATION


def test_apply_overrides():
    cfg = apply_overrides(preset("ex3"), delta=1e-6, dt=2.0, c=5.0)
    assert cfg.solver.tol == 1e-6 and cfg.time.dt == 2.0 and cfg.solver.c == 5.0
    with pytest.raises(ScenarioError):
        apply_overrides(preset("ex3"), c=-1.0)


@pytest.mark.slow
def test_verify_quick(tmp_path, capsys):
    assert main(["verify", "--output", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "all checks passed" in out
    assert (tmp_path / "verification.csv").is_file()
