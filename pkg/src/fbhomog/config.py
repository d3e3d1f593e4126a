"""Experiment configuration files.

A configuration is an INI file: ``[section]`` headers followed by
``key = value`` lines.  Every section has a fixed set of allowed keys and
unknown sections or keys are rejected.  Example::

    [medium]
    preset = laminate
    normalize = abar

    [grid]
    radius = 16
    h = 0.25

    [boundary]
    kind = two-plane
    alpha = 1.0

Lists are comma or whitespace separated.  Expressions (``boundary.expression``,
``transmission.data``) are arithmetic in the coordinates ``x1 .. xd`` and
``r = |x|`` with the usual numpy functions.
"""

import ast
import configparser
from dataclasses import dataclass
import operator

import numpy as np

from .elliptic import normalize_abar
from .errors import ConfigInvalid
from .field import (CoefficientField, Grid, GridFunction, checkerboard_field, constant_field,
                    laminate_field)
from .twoplane import phi

SCHEMA = {
    "experiment": {"id", "seed", "threads"},
    "medium": {"preset", "dim", "lam", "a", "qplus2", "qminus2", "mean", "amplitude",
               "qplus2_amplitude", "qminus2_amplitude", "a1", "a2", "cell_resolution",
               "normalize", "normalize_m", "file"},
    "grid": {"radius", "h"},
    "boundary": {"kind", "alpha", "nu", "offset", "bump", "expression", "file"},
    "minimize": {"epsilon", "max_iter", "max_polish", "cd_sweeps", "two_starts", "method"},
    "corrector": {"m", "method"},
    "flatness": {"radius", "rel_tol", "tie_tol"},
    "profile": {"what", "radii", "r0"},
    "dichotomy": {"c1", "L0", "eta", "theta", "beta"},
    "hom-error": {"radii", "gamma", "r0", "h"},
    "transmission": {"alpha", "n", "scheme", "data"},
}

PRESETS = ("constant", "laminate", "checkerboard", "custom-sampled")

_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan",
    "arctan2", "minimum", "maximum", "sign", "floor")}
_FUNCS["pi"] = np.pi
_FUNCS["phi"] = phi
_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos, ast.Mod: operator.mod}


def compile_expression(text, dim, key="expression"):
    """Turn an arithmetic expression into a function of node coordinates.

    Only numbers, the names ``x1 .. xd``, ``r``, ``pi`` and a fixed list
    of numpy functions are allowed.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigInvalid(f"{key}: cannot parse expression ({exc.msg})") from None
    names = {f"x{k + 1}" for k in range(dim)} | {"r"}

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name) and (node.id in names or node.id in _FUNCS):
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            check(node.operand)
            return
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            for arg in node.args:
                check(arg)
            return
        raise ConfigInvalid(f"{key}: construct not allowed in expression: {ast.dump(node)[:40]}")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _FUNCS[node.id]
        if isinstance(node, ast.BinOp):
            return _OPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _OPS[type(node.op)](ev(node.operand, env))
        return _FUNCS[node.func.id](*(ev(a, env) for a in node.args))

    def fn(x):
        env = {f"x{k + 1}": x[..., k] for k in range(dim)}
        env["r"] = np.linalg.norm(x, axis=-1)
        return np.broadcast_to(ev(tree.body, env), x.shape[:-1]).astype(float)

    return fn


def bump(y, nu):
    """Squared tangential part ``|y - (y.nu) nu|^2`` of ``y`` (a curvature perturbation)."""
    tang = y - (y @ nu)[..., None] * nu
    return np.sum(tang * tang, axis=-1)


@dataclass
class ExperimentConfig:
    """Parsed configuration: ``sections[name][key] -> str``."""

    sections: dict
    source: str = "<string>"

    @classmethod
    def from_string(cls, text, source="<string>"):
        parser = configparser.ConfigParser(interpolation=None, strict=True)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigInvalid(f"{source}: {exc}") from None
        sections = {}
        for name in parser.sections():
            if name not in SCHEMA:
                raise ConfigInvalid(f"unknown section [{name}]")
            for key in parser[name]:
                if key not in SCHEMA[name]:
                    raise ConfigInvalid(f"unknown key {name}.{key}")
            sections[name] = dict(parser[name])
        return cls(sections, source)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_string(text, source=str(path))

    def has(self, section, key=None):
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    def raw(self, section, key, default=None, required=False):
        if self.has(section, key):
            return self.sections[section][key]
        if required:
            raise ConfigInvalid(f"missing key {section}.{key}")
        return default

    def get(self, section, key, kind=float, default=None, required=False):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            if kind is bool:
                low = text.strip().lower()
                if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                    raise ValueError(text)
                return low in ("true", "yes", "1", "on")
            if kind == "list":
                return [float(v) for v in text.replace(",", " ").split()]
            if kind is int:
                return int(text)
            if kind is float:
                return float(text)
            return text.strip()
        except ValueError:
            raise ConfigInvalid(f"invalid value for {section}.{key}: {text!r}") from None

    def echo(self):
        return {k: dict(v) for k, v in self.sections.items()}

    # ------------------------------------------------------------------
    def seed(self):
        return self.get("experiment", "seed", int, 0)

    def dim(self):
        return self.get("medium", "dim", int, 2)

    def field(self):
        """Coefficient field of the ``[medium]`` section."""
        preset = self.get("medium", "preset", str, required=True)
        dim = self.dim()
        lam = self.get("medium", "lam")
        g = lambda key, default: self.get("medium", key, float, default)  # noqa: E731
        if preset == "constant":
            f = constant_field(g("a", 1.0), g("qplus2", 2.0), g("qminus2", 1.0), dim=dim, lam=lam)
        elif preset == "laminate":
            f = laminate_field(g("mean", 2.0), g("amplitude", 1.0), g("qplus2", 2.0),
                               g("qminus2", 1.0), g("qplus2_amplitude", 0.0),
                               g("qminus2_amplitude", 0.0), dim=dim, lam=lam,
                               cell_resolution=self.get("medium", "cell_resolution", int, 256))
        elif preset == "checkerboard":
            f = checkerboard_field(g("a1", 2.0), g("a2", 0.5), g("qplus2", 2.0),
                                   g("qminus2", 1.0), dim=dim, lam=lam,
                                   cell_resolution=self.get("medium", "cell_resolution", int, 256))
        elif preset == "custom-sampled":
            f = _sampled_field(self.get("medium", "file", str, required=True), lam)
        else:
            raise ConfigInvalid(f"medium.preset must be one of {', '.join(PRESETS)}, got {preset!r}")
        norm = self.get("medium", "normalize", str, "none")
        if norm == "abar":
            f = normalize_abar(f, m=self.get("medium", "normalize_m", int, None))
        elif norm != "none":
            raise ConfigInvalid(f"medium.normalize must be none or abar, got {norm!r}")
        return f

    def grid(self):
        radius = self.get("grid", "radius", float, required=True)
        h = self.get("grid", "h", float, required=True)
        return Grid(self.dim(), radius, h)

    def boundary(self, grid):
        """Boundary data of the ``[boundary]`` section on ``grid``."""
        kind = self.get("boundary", "kind", str, "two-plane")
        if kind == "two-plane":
            alpha = self.get("boundary", "alpha", float, 1.0)
            nu = self.get("boundary", "nu", "list", None)
            nu = np.eye(grid.dim)[-1] if nu is None else np.asarray(nu) / np.linalg.norm(nu)
            if nu.shape != (grid.dim,):
                raise ConfigInvalid("boundary.nu must have one entry per dimension")
            offset = self.get("boundary", "offset", float, 0.0)
            amp = self.get("boundary", "bump", float, 0.0)
            R = grid.radius
            fn = lambda x: phi(alpha, (x - grid.center) @ nu + offset  # noqa: E731
                               + amp * R * bump((x - grid.center) / R, nu))
            return GridFunction.from_function(grid, fn)
        if kind == "expression":
            fn = compile_expression(self.get("boundary", "expression", str, required=True),
                                    grid.dim, "boundary.expression")
            return GridFunction.from_function(grid, lambda x: fn(x - grid.center))
        if kind == "file":
            u = GridFunction.load(self.get("boundary", "file", str, required=True))
            if not u.grid.compatible(grid):
                raise ConfigInvalid("boundary.file grid does not match [grid]")
            return u
        raise ConfigInvalid(f"boundary.kind must be two-plane, expression or file, got {kind!r}")

    def boundary_function(self):
        """Boundary data as a function of coordinates (for multi-radius runs)."""
        kind = self.get("boundary", "kind", str, "two-plane")
        dim = self.dim()
        if kind == "two-plane":
            alpha = self.get("boundary", "alpha", float, 1.0)
            nu = self.get("boundary", "nu", "list", None)
            nu = np.eye(dim)[-1] if nu is None else np.asarray(nu) / np.linalg.norm(nu)
            offset = self.get("boundary", "offset", float, 0.0)
            return lambda x: phi(alpha, x @ nu + offset)
        if kind == "expression":
            return compile_expression(self.get("boundary", "expression", str, required=True),
                                      dim, "boundary.expression")
        raise ConfigInvalid("multi-radius runs need boundary.kind two-plane or expression")

    def minimize_config(self):
        from .minimize import MinimizeConfig
        kw = {}
        eps = self.get("minimize", "epsilon", "list")
        if eps is not None:
            kw["epsilon"] = tuple(eps)
        for key, kind in (("max_iter", int), ("max_polish", int), ("cd_sweeps", int),
                          ("two_starts", bool), ("method", str)):
            v = self.get("minimize", key, kind)
            if v is not None:
                kw[key] = v
        try:
            return MinimizeConfig(seed=self.seed(), **kw)
        except ValueError as exc:
            raise ConfigInvalid(f"[minimize]: {exc}") from None

    def thresholds(self):
        return {k: self.get("dichotomy", k) for k in SCHEMA["dichotomy"]
                if self.has("dichotomy", k)}


def _sampled_field(path, lam):
    """Medium sampled at cell centres of the periodic unit cell, stored as ``.npz``.

    Arrays: ``a`` with shape ``(m,)*d + (d, d)``, ``qplus`` and ``qminus``
    with shape ``(m,)*d``.
    """
    try:
        data = np.load(path)
        a, qp, qm = data["a"], data["qplus"], data["qminus"]
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigInvalid(f"medium.file: cannot read sampled medium ({exc})") from None
    return CoefficientField(a, qp, qm, lam=lam, name="custom-sampled")
