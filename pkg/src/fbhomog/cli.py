"""Command-line interface: ``fbhomog <subcommand> [options]``.

Every subcommand writes a JSON report (and CSV series where they exist)
into ``--out`` using temp-file-and-rename, so an interrupted run never
leaves a partial file behind.  Exit codes: 0 when every verdict passes,
1 when a verdict fails, 2 for configuration or input errors, 3 for solver
errors.  ``FBH_LOG`` sets the log level (``DEBUG``, ``INFO``, ...).
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import acceptance
from .config import ExperimentConfig, bump, compile_expression
from .elliptic import correctors, harmonic_replacement  # noqa: F401  (re-exported for scripts)
from .errors import ConfigInvalid, FBHomogError, InputError
from .field import Grid, GridFunction
from .homog import hom_error_report
from .minimize import harmonic_gap, minimize, strip_growth_exponent
from .regularity import _jsonable, flatness_profile, gradient_profile, liouville_fit
from .transmission import TransmissionProblem, c11_fit, interface_balance, solve_transmission
from .twoplane import measure_flatness, phi

logger = logging.getLogger("fbhomog")

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------
def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


class Report:
    """Experiment report: metrics, verdicts and the echoed configuration."""

    def __init__(self, command, config=None):
        self.command = command
        self.config = config
        self.metrics = {}
        self.verdicts = []
        self.started = time.time()

    def verdict(self, name, passed, tolerance, provenance):
        self.verdicts.append({"name": name, "passed": bool(passed), "tolerance": tolerance,
                              "provenance": provenance})

    @property
    def passed(self):
        return all(v["passed"] for v in self.verdicts)

    def to_dict(self):
        cfg = self.config
        return {
            "experiment": cfg.get("experiment", "id", str, self.command) if cfg else self.command,
            "command": self.command,
            "config": cfg.echo() if cfg else None,
            "metrics": _jsonable(self.metrics),
            "verdicts": self.verdicts,
            "passed": self.passed,
            "wall_clock": time.time() - self.started,
        }

    def write(self, out_dir, name="report.json"):
        path = os.path.join(out_dir, name)
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def _need_config(args, optional=False):
    if args.config is None and optional:
        return ExperimentConfig.from_string("")
    if args.config is None:
        raise ConfigInvalid(f"{args.command} needs --config")
    return ExperimentConfig.from_file(args.config)


def _override(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.sections.setdefault("experiment", {})["seed"] = str(args.seed)
    if getattr(args, "alpha", None) is not None:
        for section in ("boundary", "transmission"):
            cfg.sections.setdefault(section, {})["alpha"] = repr(float(args.alpha))
    return cfg


def _corrector_metrics(field, m):
    from ._stencil import cell_ops
    cs = correctors(field, m=m)
    ops = cell_ops((cs.m,) * field.dim, True)
    norms = [float(np.sqrt(ops.grad_sq(cs.values[k].ravel(), cs.h).mean()))
             for k in range(field.dim)]
    return cs, norms


def cmd_corrector(args):
    cfg = _override(_need_config(args), args)
    field = cfg.field()
    rep = Report("corrector", cfg)
    cs, norms = _corrector_metrics(field, cfg.get("corrector", "m", int))
    rep.metrics.update({"m": cs.m, "abar": cs.abar, "residuals": list(cs.residuals),
                        "corrector_gradient_norms": norms, "lambda": field.lam})
    rep.verdict("solver residual", max(cs.residuals) <= 1e-10, "<= 1e-10", "linear solve")
    rep.verdict("corrector gradient bound", all(n <= field.lam ** 2 for n in norms),
                "||grad chi_e|| <= Lambda^2", "energy estimate on the unit cell")
    ax = (np.arange(cs.m) / cs.m)
    pts = np.stack(np.meshgrid(*([ax] * field.dim), indexing="ij"), axis=-1).reshape(-1, field.dim)
    vals = cs.values.reshape(field.dim, -1).T
    write_csv(os.path.join(args.out, "correctors.csv"),
              [f"x{k + 1}" for k in range(field.dim)] + [f"chi_e{k + 1}" for k in range(field.dim)],
              np.hstack([pts, vals]))
    return rep


def cmd_homog_matrix(args):
    cfg = _override(_need_config(args), args)
    field = cfg.field()
    rep = Report("homog-matrix", cfg)
    cs = correctors(field, m=cfg.get("corrector", "m", int))
    eig = np.linalg.eigvalsh(cs.abar)
    rep.metrics.update({"m": cs.m, "abar": cs.abar, "eigenvalues": eig, "lambda": field.lam})
    rep.verdict("symmetric", np.allclose(cs.abar, cs.abar.T, atol=1e-10), "|abar - abar^T| <= 1e-10",
                "symmetry of the coefficients")
    rep.verdict("ellipticity", eig.min() >= 1 / field.lam - 1e-10 and eig.max() <= field.lam + 1e-10,
                "spectrum in [1/Lambda, Lambda]", "bounds of the homogenized matrix")
    return rep


def _minimize_from_config(cfg):
    grid = cfg.grid()
    g = cfg.boundary(grid)
    return cfg.field(), minimize(cfg.field(), g, grid.radius, cfg.minimize_config())


def _input_or_minimize(args, cfg, rep):
    if args.input:
        return GridFunction.load(args.input)
    field, res = _minimize_from_config(cfg)
    rep.metrics["minimizer"] = {"energy": res.energy.to_dict(), "iterations": res.iterations,
                                "converged": res.converged, "start": res.start}
    return res.u


def cmd_minimize(args):
    cfg = _override(_need_config(args), args)
    rep = Report("minimize", cfg)
    field, res = _minimize_from_config(cfg)
    rep.metrics.update({"energy": res.energy.to_dict(), "iterations": res.iterations,
                        "converged": res.converged, "start": res.start})
    rep.verdict("converged", res.converged, "relative energy change <= 1e-10", "minimizer")
    res.u.save(os.path.join(args.out, "u.fbh"))
    res.u.to_csv(os.path.join(args.out, "u.csv"))
    write_csv(os.path.join(args.out, "trace.csv"), ["iteration", "energy"], enumerate(res.trace))
    return rep


def cmd_flatness(args):
    cfg = _override(_need_config(args, optional=bool(args.input) and not getattr(args, "deltas", None)),
                    args)
    rep = Report("flatness", cfg)
    if args.deltas:
        return _flatness_sweep(args, cfg, rep)
    u = _input_or_minimize(args, cfg, rep)
    radius = cfg.get("flatness", "radius", float, u.grid.radius / 2)
    fit = measure_flatness(u, radius, rel_tol=cfg.get("flatness", "rel_tol", float, 1e-4),
                           tie_tol=cfg.get("flatness", "tie_tol", float, 1e-6))
    rep.metrics.update({"radius": radius, **fit.to_dict()})
    rep.verdict("fit achieved", fit.achieved, "alpha in the interior of the search range",
                "two-plane fit")
    return rep


def _flatness_sweep(args, cfg, rep):
    """Sweep the curvature perturbation and report where geometric decay sets in."""
    grid = cfg.grid()
    field = cfg.field()
    radii = args.radii or [grid.radius * f for f in (0.109375, 0.21875, 0.4375, 0.875)]
    rows = []
    for amp in args.deltas:
        cfg.sections.setdefault("boundary", {})["bump"] = repr(float(amp))
        res = minimize(field, cfg.boundary(grid), grid.radius, cfg.minimize_config())
        prof = flatness_profile(res.u, radii, r0=min(radii))
        v = prof.values
        decay = all(v[i - 1] / v[i] <= 2 ** -0.5 or v[i - 1] * prof.radii[i - 1] <= 2 * grid.h
                    for i in range(1, len(v)))
        rows.append({"delta": amp, "flatness_over_r": v, "geometric_decay": decay,
                     "osc_nu": prof.extra["osc_nu"], "osc_log_alpha": prof.extra["osc_log_alpha"]})
    good = [r["delta"] for r in rows if r["geometric_decay"]]
    rep.metrics.update({"radii": radii, "sweep": rows,
                        "largest_delta_with_decay": max(good) if good else None})
    write_csv(os.path.join(args.out, "flatness_sweep.csv"),
              ["delta"] + [f"r={r:g}" for r in radii],
              [[r["delta"], *r["flatness_over_r"]] for r in rows])
    return rep


def cmd_profile(args):
    cfg = _override(_need_config(args, optional=bool(args.input) and not getattr(args, "deltas", None)),
                    args)
    rep = Report("profile", cfg)
    what = args.what or cfg.get("profile", "what", str, "gradient")
    u = _input_or_minimize(args, cfg, rep)
    radii = args.radii or cfg.get("profile", "radii", "list", required=True)
    r0 = args.r0 if args.r0 is not None else cfg.get("profile", "r0", float, 4.0)
    if what == "gradient":
        prof = gradient_profile(u, radii, r0=r0)
        rep.verdict("Lipschitz ratio", prof.extra["lipschitz_ratio"] <= 10,
                    "max_r l(r) / (1 + l(R)) <= 10", "large-scale Lipschitz estimate")
    elif what == "flatness":
        prof = flatness_profile(u, radii, r0=r0)
    elif what == "liouville":
        alpha, e, prof = liouville_fit(u, radii, r0=r0)
        rep.metrics.update({"alpha": alpha, "e": e})
        app = [s for s in prof.extra["stability"] if s["applicable"]]
        rep.verdict("fit stability", all(s["ratio_ok"] and s["direction_ok"] for s in app),
                    "ratio <= 24 eta, direction <= 6 sqrt(eta) where eta < 1/100",
                    "stability of two-plane fits")
    else:
        raise ConfigInvalid(f"profile.what must be gradient, flatness or liouville, got {what!r}")
    rep.metrics["profile"] = prof.to_dict()
    rep.metrics["what"] = what
    write_csv(os.path.join(args.out, f"profile_{what}.csv"), ["radius", "value"],
              zip(prof.radii, prof.values))
    return rep


def cmd_hom_error(args):
    cfg = _override(_need_config(args), args)
    rep = Report("hom-error", cfg)
    radii = args.radii or cfg.get("hom-error", "radii", "list", required=True)
    report = hom_error_report(cfg.field(), cfg.boundary_function(), radii,
                              h=cfg.get("hom-error", "h", float, 0.25),
                              gamma=cfg.get("hom-error", "gamma", float, 0.25),
                              r0=cfg.get("hom-error", "r0", float, 4.0),
                              config=cfg.minimize_config(), threads=args.threads)
    rep.metrics.update(report.to_dict())
    rep.verdict("strip gradient bound", all(s["holds"] for s in report.strip_checks),
                "upscaled strip energy <= 9 x original + quadrature slack", "upscaling estimate")
    keys = list(report.defects)
    write_csv(os.path.join(args.out, "hom_error.csv"), ["radius"] + keys,
              [[r] + [report.defects[k][i] for k in keys] for i, r in enumerate(report.radii)])
    return rep


def cmd_transmission(args):
    cfg = _override(_need_config(args), args)
    rep = Report("transmission", cfg)
    dim = cfg.dim()
    alpha = cfg.get("transmission", "alpha", float, 1.0)
    n = cfg.get("transmission", "n", int, 32)
    data = compile_expression(cfg.get("transmission", "data", str, required=True), dim,
                              "transmission.data")
    sol = solve_transmission(TransmissionProblem(alpha, data, n, dim,
                                                 cfg.get("transmission", "scheme", str, "flux")))
    rep.metrics.update(sol.to_dict())
    rep.metrics["c11"] = c11_fit(sol, [0.125, 0.25, 0.5])
    if not np.isinf(alpha):
        rep.metrics["max_node_balance"] = float(np.abs(interface_balance(sol)).max())
        rep.verdict("interface balance", abs(sol.balance()) <= 1.0 / n, "|L| <= h",
                    "first-order discretization of the flux condition")
    w = sol.w
    write_csv(os.path.join(args.out, "transmission.csv"),
              [f"x{k + 1}" for k in range(dim)] + ["w"],
              np.hstack([w.grid.node_coords().reshape(-1, dim), w.values.reshape(-1, 1)]))
    return rep


def _verify_medium(cfg, rep):
    """Checks that apply to any medium described by a configuration."""
    field = cfg.field()
    cs, norms = _corrector_metrics(field, cfg.get("corrector", "m", int))
    rep.metrics["abar"] = cs.abar
    rep.verdict("corrector bound", all(n <= field.lam ** 2 for n in norms),
                "||grad chi_e|| <= Lambda^2", "energy estimate on the unit cell")
    eig = np.linalg.eigvalsh(cs.abar)
    rep.verdict("abar ellipticity", eig.min() >= 1 / field.lam - 1e-10 and eig.max() <= field.lam + 1e-10,
                "spectrum in [1/Lambda, Lambda]", "bounds of the homogenized matrix")
    if field.is_constant():
        rep.verdict("constant corrector", np.abs(cs.values).max() <= 1e-10, "max |chi| <= 1e-10",
                    "exactness for constant coefficients")
        rep.verdict("constant abar", np.abs(cs.abar - field.mean_a()).max() <= 1e-10,
                    "|abar - a| <= 1e-10", "exactness for constant coefficients")
    if cfg.has("grid"):
        grid = cfg.grid()
        res = minimize(field, cfg.boundary(grid), grid.radius, cfg.minimize_config())
        u = res.u
        rep.verdict("minimizer converged", res.converged, "relative energy change <= 1e-10",
                    "minimizer")
        gap, info = harmonic_gap(field, u, grid.radius / 2)
        rep.metrics["harmonic_gap"] = info
        rep.verdict("harmonic gap", info["within_bound"], "gap <= sqrt(Lambda max Q^2)",
                    "harmonic replacement comparison")
        expo, _ = strip_growth_exponent(u, grid.radius / 2)
        rep.metrics["strip_exponent"] = expo
        rep.verdict("strip growth", expo >= 0.9, "exponent >= 0.9", "boundary strip estimate")
        two_plane = cfg.get("boundary", "kind", str, "two-plane") == "two-plane" \
            and cfg.get("boundary", "bump", float, 0.0) == 0.0
        if field.is_constant() and two_plane and np.allclose(field.mean_a(), np.eye(field.dim)) \
                and abs(field.gap() - 1.0) < 1e-12:
            err = float(np.abs(u.values - cfg.boundary(grid).values)[
                grid.cells_to_nodes(grid.ball_cells(grid.radius))].max())
            flat = measure_flatness(u, grid.radius / 2).delta
            rep.metrics.update({"two_plane_error": err, "two_plane_flatness": flat})
            rep.verdict("two-plane exactness", err <= 3 * grid.h, "sup error <= 3h",
                        "two-plane solutions are minimizers")
            rep.verdict("two-plane flatness", flat <= 2 * grid.h, "flat(u, B_R/2) <= 2h",
                        "two-plane solutions are minimizers")
    if cfg.has("transmission"):
        alpha = cfg.get("transmission", "alpha", float, 1.0)
        gm = 0.8
        gp = alpha ** 2 * gm / (1 + alpha ** 2)
        exact = lambda x: 0.3 + 0.5 * x[..., 0] + gp * np.maximum(x[..., -1], 0) \
            + gm * np.minimum(x[..., -1], 0)  # noqa: E731
        sol = solve_transmission(TransmissionProblem(alpha, exact, cfg.get("transmission", "n", int, 32),
                                                     cfg.dim()))
        err = float(np.abs(sol.w.values - exact(sol.w.grid.node_coords())).max())
        rep.metrics["transmission_exact_error"] = err
        rep.verdict("transmission exactness", err <= 1e-6, "<= 1e-6", "piecewise-linear solutions")


def cmd_verify(args):
    if args.config is not None:
        cfg = _override(ExperimentConfig.from_file(args.config), args)
        rep = Report("verify", cfg)
        _verify_medium(cfg, rep)
        return rep
    rep = Report("verify")
    ctx = acceptance.AcceptanceContext(seed=args.seed or 0, threads=args.threads)
    numbers = args.criteria or sorted(acceptance.CRITERIA)
    t0 = time.time()
    results = acceptance.run_criteria(numbers, ctx, report=lambda line: print(line, flush=True))
    final = acceptance.summary_criterion(results, time.time() - t0)
    if args.criteria is None:
        results.append(final)
        print(final.line(), flush=True)
    for r in results:
        rep.verdict(f"criterion {r.number}: {r.title}", r.passed, r.tolerance, "acceptance suite")
    rep.metrics["criteria"] = [r.to_dict() for r in results]
    return rep


COMMANDS = {
    "corrector": cmd_corrector,
    "homog-matrix": cmd_homog_matrix,
    "minimize": cmd_minimize,
    "flatness": cmd_flatness,
    "profile": cmd_profile,
    "hom-error": cmd_hom_error,
    "transmission": cmd_transmission,
    "verify": cmd_verify,
}


def _radii(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid radii list {text!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (INI)")
    common.add_argument("--out", default="fbh-out", help="output directory (default: fbh-out)")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for multi-radius runs")
    common.add_argument("--alpha", type=float, help="override the two-plane or transmission slope")
    common.add_argument("--radii", type=_radii, help="comma separated radii")

    parser = argparse.ArgumentParser(prog="fbhomog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("flatness", "profile"):
            p.add_argument("--input", help="grid function file (.fbh) instead of a fresh minimizer")
        if name == "profile":
            p.add_argument("--what", choices=["gradient", "flatness", "liouville"])
            p.add_argument("--r0", type=float, help="microscale below which radii are dropped")
        if name == "flatness":
            p.add_argument("--deltas", type=_radii,
                           help="sweep of curvature perturbation amplitudes")
        if name == "verify":
            p.add_argument("--criteria", type=lambda s: [int(v) for v in s.split(",")],
                           help="comma separated subset of acceptance criteria")
    return parser


def _setup_logging():
    level = os.environ.get("FBH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        rep = COMMANDS[args.command](args)
        path = rep.write(args.out)
    except (ConfigInvalid, InputError, OSError) as exc:
        print(f"fbhomog {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FBHomogError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"fbhomog {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    status = "PASS" if rep.passed else "FAIL"
    print(f"{args.command}: {status} ({sum(v['passed'] for v in rep.verdicts)}/"
          f"{len(rep.verdicts)} verdicts) -> {path}")
    return EXIT_OK if rep.passed else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
