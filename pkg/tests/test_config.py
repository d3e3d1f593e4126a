import numpy as np
import pytest

from fbhomog.acceptance import load_preset, preset_names
from fbhomog.config import ExperimentConfig, bump, compile_expression
from fbhomog.elliptic import homogenized_matrix
from fbhomog.errors import ConfigInvalid
from fbhomog.field import Grid, GridFunction

BASE = """
[experiment]
id = test
seed = 3

[medium]
preset = constant
qplus2 = 3.0

[grid]
radius = 2
h = 0.25

[boundary]
kind = two-plane
alpha = 2.0
"""


def test_parse_and_build():
    cfg = ExperimentConfig.from_string(BASE)
    assert cfg.seed() == 3
    f = cfg.field()
    assert f.gap() == pytest.approx(2.0)
    grid = cfg.grid()
    g = cfg.boundary(grid)
    x = grid.node_coords()
    np.testing.assert_allclose(g.values, np.where(x[..., 1] > 0, np.sqrt(5) * x[..., 1],
                                                  2 * x[..., 1]))
    assert cfg.minimize_config().seed == 3


@pytest.mark.parametrize("text,message", [
    (BASE + "\n[nonsense]\nx = 1\n", "unknown section"),
    (BASE.replace("qplus2 = 3.0", "qplus3 = 3.0"), "unknown key medium.qplus3"),
    (BASE.replace("radius = 2\n", ""), "missing key grid.radius"),
    (BASE.replace("seed = 3", "seed = three"), "invalid value"),
    (BASE.replace("preset = constant", "preset = marble"), "medium.preset"),
])
def test_invalid_configs(text, message):
    with pytest.raises(ConfigInvalid, match=message):
        cfg = ExperimentConfig.from_string(text)
        cfg.seed()
        cfg.field()
        cfg.grid()


def test_missing_file():
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.from_file("/nonexistent/config.ini")


def test_typed_getters():
    cfg = ExperimentConfig.from_string("[minimize]\ntwo_starts = no\nepsilon = 3, 1\n")
    assert cfg.get("minimize", "two_starts", bool) is False
    assert cfg.get("minimize", "epsilon", "list") == [3.0, 1.0]
    assert cfg.get("grid", "h", float, 0.5) == 0.5
    assert cfg.minimize_config().epsilon == (3.0, 1.0)
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.from_string("[minimize]\nepsilon = 1, 3\n").minimize_config()


def test_expressions():
    fn = compile_expression("sin(pi * x1) + r ** 2 + phi(1.0, x2)", 2)
    x = np.array([[0.5, 0.0], [0.0, -1.0]])
    np.testing.assert_allclose(fn(x), [1.25, 1.0 - 1.0])
    for bad in ("__import__('os')", "x1.real", "x3 + 1", "open('f')", "[1, 2]"):
        with pytest.raises(ConfigInvalid):
            compile_expression(bad, 2)


def test_bump_is_tangential():
    nu = np.array([0.0, 1.0])
    y = np.array([[0.5, 0.5], [0.0, 1.0]])
    np.testing.assert_allclose(bump(y, nu), [0.25, 0.0])


def test_expression_boundary():
    cfg = ExperimentConfig.from_string(BASE.replace("kind = two-plane\nalpha = 2.0",
                                                    "kind = expression\nexpression = x1 * x2"))
    g = cfg.boundary(cfg.grid())
    x = cfg.grid().node_coords()
    np.testing.assert_allclose(g.values, x[..., 0] * x[..., 1])


def test_file_boundary(tmp_path):
    grid = Grid(2, 2.0, 0.25)
    GridFunction(grid, np.ones(grid.node_shape)).save(tmp_path / "g.fbh")
    text = BASE.replace("kind = two-plane\nalpha = 2.0", f"kind = file\nfile = {tmp_path}/g.fbh")
    cfg = ExperimentConfig.from_string(text)
    assert np.all(cfg.boundary(cfg.grid()).values == 1.0)
    with pytest.raises(ConfigInvalid):
        cfg.boundary(Grid(2, 1.0, 0.25))


def test_sampled_medium(tmp_path):
    m = 4
    a = np.broadcast_to(np.eye(2), (m, m, 2, 2)).copy()
    a[: m // 2] *= 2.0
    np.savez(tmp_path / "medium.npz", a=a, qplus=np.full((m, m), 2.0),
             qminus=np.ones((m, m)))
    cfg = ExperimentConfig.from_string(f"[medium]\npreset = custom-sampled\nfile = {tmp_path}/medium.npz\n")
    f = cfg.field()
    assert f.cell_resolution == m
    assert f.gap() == pytest.approx(3.0)


def test_presets_load():
    assert {"constant", "laminate", "laminate-normalized", "checkerboard"} <= set(preset_names())
    for name in preset_names():
        cfg = load_preset(name)
        assert cfg.field().dim == 2


def test_normalized_preset_has_identity_abar():
    cfg = load_preset("laminate-flat-q")
    m = cfg.get("medium", "normalize_m", int)
    np.testing.assert_allclose(homogenized_matrix(cfg.field(), m=m), np.eye(2), atol=1e-10)
