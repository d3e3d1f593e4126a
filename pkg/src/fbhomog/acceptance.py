"""Acceptance checks run by ``fbhomog verify`` and the test suite.

Each ``criterion_<n>`` function takes an :class:`AcceptanceContext`
(which caches expensive minimizers shared between checks) and returns a
:class:`CriterionResult`.  Media and grids come from the presets shipped
in ``fbhomog/presets``.
"""

from dataclasses import dataclass, field as dc_field
from importlib import resources
import logging
import time

import numpy as np
from scipy.optimize import minimize_scalar

from .config import ExperimentConfig
from .elliptic import correctors, dual_energy
from .errors import InvalidComposition
from .field import Grid, GridFunction, constant_field
from .homog import hom_error_report
from .minimize import (energy_difference_check, harmonic_gap, minimize,
                       strip_growth_exponent)
from .regularity import (_jsonable, flatness_profile, gradient_profile, liouville_fit,
                         loglog_fit, recentre)
from .transmission import TransmissionProblem, solve_transmission, transmission_continuity
from .twoplane import (FIT_SLACK, compose_slopes, flat_fit_stability, measure_flatness, phi,
                       stability_defects, stability_holds)

logger = logging.getLogger(__name__)

TIME_BUDGET = 1800.0


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    tolerance: str
    metrics: dict = dc_field(default_factory=dict)
    elapsed: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} {status}  {self.title}  [{self.tolerance}]  ({self.elapsed:.1f}s)"

    def to_dict(self):
        return {"criterion": self.number, "title": self.title, "passed": bool(self.passed),
                "tolerance": self.tolerance, "elapsed": self.elapsed,
                "metrics": _jsonable(self.metrics)}


def load_preset(name):
    """Parsed preset configuration ``fbhomog/presets/<name>.ini``."""
    text = resources.files("fbhomog").joinpath("presets", f"{name}.ini").read_text()
    return ExperimentConfig.from_string(text, source=f"preset:{name}")


def preset_names():
    return sorted(p.name[:-4] for p in resources.files("fbhomog").joinpath("presets").iterdir()
                  if p.name.endswith(".ini"))


class AcceptanceContext:
    """Lazily built media and minimizers shared between criteria."""

    def __init__(self, seed=0, threads=1):
        self.seed = seed
        self.threads = threads
        self._cache = {}

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def field(self, preset):
        return self.cached(("field", preset), lambda: load_preset(preset).field())

    def minimizer(self, preset, radius, h):
        """Minimizer of the preset medium on ``B_radius`` with the preset boundary data."""
        def build():
            cfg = load_preset(preset)
            grid = Grid(cfg.dim(), radius, h)
            g = cfg.boundary(grid)
            t0 = time.time()
            res = minimize(self.field(preset), g, radius, cfg.minimize_config())
            logger.info("minimizer %s R=%g h=%g: %.1fs, converged=%s", preset, radius, h,
                        time.time() - t0, res.converged)
            return res
        return self.cached(("min", preset, float(radius), float(h)), build)


# ----------------------------------------------------------------------
# criteria
# ----------------------------------------------------------------------
def criterion_1(ctx):
    """Slope composition identity on random samples."""
    rng = np.random.default_rng(ctx.seed)
    worst, n, rejected = 0.0, 0, 0
    z = np.linspace(-2.0, 2.0, 41)
    while n < 1000:
        alpha = rng.uniform(0.05, 5.0)
        gp, gm = rng.uniform(-3.0, 3.0, size=2)
        delta = rng.uniform(0.0, 0.2)
        try:
            a_new, lam = compose_slopes(alpha, gp, gm, delta)
        except InvalidComposition:
            rejected += 1
            continue
        if 1 + delta * gp <= 0:
            rejected += 1
            continue
        lhs = np.where(z > 0, np.sqrt(1 + alpha ** 2) * (1 + delta * gp) * z,
                       alpha * (1 + delta * gm) * z)
        rhs = phi(a_new, lam * z)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs)))))
        n += 1
    return CriterionResult(1, "slope composition identity", worst <= 1e-12, "max error <= 1e-12",
                           {"samples": n, "rejected": rejected, "max_error": worst})


def _corrector_gradient_norm(cs, q, field):
    from ._stencil import cell_ops
    m = cs.m
    ops = cell_ops((m,) * field.dim, True)
    chi = cs.corrector(q).ravel()
    return float(np.sqrt(ops.grad_sq(chi, 1.0 / m).mean()))


def criterion_2(ctx):
    """Corrector and homogenized-matrix oracles."""
    const = ctx.field("constant")
    cs = correctors(const, m=load_preset("constant").get("corrector", "m", int))
    chi0 = float(np.abs(cs.values).max())
    abar0 = float(np.abs(cs.abar - np.eye(const.dim)).max())
    lam = ctx.field("laminate")
    cl = correctors(lam, m=load_preset("laminate").get("corrector", "m", int))
    target = np.diag([np.sqrt(3.0), 2.0])
    abar_err = float(np.abs(cl.abar - target).max())
    rng = np.random.default_rng(ctx.seed)
    bounds = []
    for name, cset, f in (("laminate", cl, lam),
                          ("checkerboard", correctors(ctx.field("checkerboard"), m=64),
                           ctx.field("checkerboard"))):
        for q in list(np.eye(f.dim)) + list(rng.normal(size=(4, f.dim))):
            g = _corrector_gradient_norm(cset, q, f)
            bounds.append({"medium": name, "q": q, "grad_norm": g,
                           "bound": f.lam ** 2 * np.linalg.norm(q)})
    bound_ok = all(b["grad_norm"] <= b["bound"] for b in bounds)
    ok = chi0 <= 1e-10 and abar0 <= 1e-10 and abar_err <= 1e-3 and bound_ok
    return CriterionResult(
        2, "corrector and abar oracles", ok,
        "const chi, abar-I <= 1e-10; laminate abar within 1e-3; |grad chi_q| <= Lambda^2 |q|",
        {"constant_max_chi": chi0, "constant_abar_error": abar0, "laminate_abar": cl.abar,
         "laminate_abar_error": abar_err, "gradient_bounds": bounds})


def criterion_3(ctx):
    """Dual energy: exact for a = I, decaying error for the checkerboard."""
    const = ctx.field("constant")
    exact_err = 0.0
    for q in ([1.0, 0.5], [0.0, 2.0], [-1.5, 0.3]):
        q = np.asarray(q)
        mu = dual_energy(const, 4.0, q, h=1 / 8)
        exact_err = max(exact_err, abs(mu + 0.5 * q @ q))
    cb = ctx.field("checkerboard")
    h = 1.0 / load_preset("checkerboard").get("medium", "normalize_m", int)
    ts = [4.0, 8.0, 16.0, 32.0]
    q = np.array([1.0, 0.0])
    errs = [abs(dual_energy(cb, t, q, h=h) + 0.5) for t in ts]
    slope, const_c, resid = loglog_fit(ts, errs)
    ok = exact_err <= 1e-8 and -slope >= 0.4
    return CriterionResult(3, "dual energy convergence", ok,
                           "a=I error <= 1e-8; checkerboard decay exponent >= 0.4",
                           {"identity_error": exact_err, "t": ts, "errors": errs,
                            "decay_exponent": -slope, "fit_residual": resid})


def criterion_4(ctx):
    """Two-plane data in a constant medium is reproduced by the minimizer."""
    cfg = load_preset("constant")
    field = ctx.field("constant")
    R = cfg.get("grid", "radius")
    rows, ok = [], True
    for alpha in (0.5, 1.0, 2.0):
        errs = []
        for h in (1 / 8, 1 / 16):
            grid = Grid(2, R, h)
            g = GridFunction.from_function(grid, lambda x: phi(alpha, x[..., 1]))
            res = minimize(field, g, R, cfg.minimize_config())
            nodes = grid.cells_to_nodes(grid.ball_cells(R))
            err = float(np.abs(res.u.values - g.values)[nodes].max())
            flat = measure_flatness(res.u, R / 2).delta
            errs.append(err)
            row_ok = err <= 3 * h and flat <= 2 * h
            ok &= row_ok
            rows.append({"alpha": alpha, "h": h, "sup_error": err, "flatness": flat,
                         "converged": res.converged, "ok": row_ok})
        ratio = errs[0] / errs[1] if errs[1] > 0 else float("inf")
        ok &= 1.5 <= ratio <= 3.0
        rows.append({"alpha": alpha, "refinement_ratio": ratio})
    return CriterionResult(4, "two-plane minimizer exactness", bool(ok),
                           "sup error <= 3h, flat(B_R/2) <= 2h, refinement ratio in [1.5, 3]",
                           {"runs": rows})


def criterion_5(ctx):
    """One-dimensional free boundary against the scalar minimization of the energy."""
    E = lambda s: 2.0 / (1.0 - s * s) + 3.0 - s  # noqa: E731
    s_star = minimize_scalar(E, bounds=(-0.99, 0.99), method="bounded",
                             options={"xatol": 1e-12}).x
    field = constant_field(1.0, 2.0, 1.0, dim=1)
    grid = Grid(1, 1.0, 1 / 200)
    g = GridFunction.from_function(grid, lambda x: x[..., 0])
    res = minimize(field, g, 1.0)
    x = grid.axis(0)
    u = res.u.values
    k = int(np.flatnonzero((u[:-1] <= 0) & (u[1:] > 0))[0])
    s = float(x[k] - u[k] * (x[k + 1] - x[k]) / (u[k + 1] - u[k]))
    err = abs(s - s_star)
    return CriterionResult(5, "1D free boundary oracle", err <= 0.01, "|s - s*| <= 0.01",
                           {"s_star": float(s_star), "s_discrete": s, "error": err,
                            "converged": res.converged})


def _laminate_minimizer(ctx, h=0.25):
    cfg = load_preset("laminate-normalized")
    return ctx.minimizer("laminate-normalized", cfg.get("grid", "radius"), h)


def criterion_6(ctx):
    """Harmonic approximation gap of laminate minimizers does not grow with the radius."""
    res = _laminate_minimizer(ctx)
    field = ctx.field("laminate-normalized")
    radii = [8.0, 16.0, 32.0, 64.0]
    gaps = [harmonic_gap(field, res.u, r)[0] for r in radii]
    slope, _, resid = loglog_fit(radii, gaps)
    bound = harmonic_gap(field, res.u, radii[0])[1]["bound"]
    return CriterionResult(6, "harmonic approximation", slope <= 0.1, "log-slope of gap <= 0.1",
                           {"radii": radii, "gaps": gaps, "log_slope": slope,
                            "fit_residual": resid, "bound": bound,
                            "converged": res.converged})


def criterion_7(ctx):
    """Boundary strip energy grows at least linearly in the strip width."""
    out, ok = {}, True
    r = 8.0
    for preset in ("constant", "laminate-normalized"):
        res = ctx.minimizer(preset, 2 * r, 0.25)
        expo, vals = strip_growth_exponent(res.u, r)
        out[preset] = {"exponent": expo, "strip_energies": vals, "converged": res.converged}
        ok &= expo >= 0.9
    return CriterionResult(7, "boundary strip energy", bool(ok), "growth exponent >= 0.9", out)


def _random_pair(rng, kind, dim):
    """Admissible pair for one of the two energy-difference inequalities."""
    h = 1 / 200 if dim == 1 else 1 / 32
    grid = Grid(dim, 1.0, h)
    cells = grid.ball_cells(1.0)
    layer = grid.cells_to_nodes(cells) & ~grid.interior_nodes(cells)
    x = grid.node_coords()
    r2 = np.sum(x * x, axis=-1)
    rho2 = r2[layer].min()
    mu = rng.uniform(0.1, 3.0)
    curv = (mu + rng.uniform(0.0, 2.0)) / (2 * dim)
    b = rng.normal(scale=0.5, size=dim)
    p = rng.choice([1.0, 2.0, 3.0])
    bump = rng.uniform(0.05, 1.0) * np.maximum(rho2 - r2, 0.0) ** p
    sign = 1.0 if kind == "sub" else -1.0
    base = sign * curv * r2 + x @ b
    base = base - base[layer].min() + rng.uniform(0.0, 0.3)
    if kind == "sub":
        v1, v0 = base, base - bump
    else:
        v0, v1 = base, base + bump
    return GridFunction(grid, v0), GridFunction(grid, v1), mu


def criterion_8(ctx):
    """Energy-difference inequalities on explicit and random admissible pairs."""
    grid = Grid(1, 1.0, 1 / 200)
    x = grid.node_coords()[..., 0]
    pairs = {
        "x^4 <= x^2": (x ** 4, x ** 2),
        "1-x^2 <= 1-x^4": (1 - x ** 2, 1 - x ** 4),
    }
    explicit = {}
    seen = {"sub": False, "super": False}
    ok = True
    for name, (a, b) in pairs.items():
        lhs, rs, rp, v = energy_difference_check(GridFunction(grid, a), GridFunction(grid, b),
                                                 2.0, 1.0)
        explicit[name] = {"lhs": lhs, "rhs_sub": rs, "rhs_super": rp, **v}
        for k in ("sub", "super"):
            ok &= v[k] != "fails"
            seen[k] |= v[k] == "holds"
    rng = np.random.default_rng(ctx.seed)
    counts = {"holds": 0, "fails": 0, "not-applicable": 0}
    failures = []
    for i in range(100):
        kind = ("sub", "super")[i % 2]
        dim = 1 + (i // 2) % 2
        v0, v1, mu = _random_pair(rng, kind, dim)
        lhs, rs, rp, v = energy_difference_check(v0, v1, mu, 1.0)
        counts[v[kind]] += 1
        if v[kind] != "holds" or any(v[k] == "fails" for k in ("sub", "super")):
            failures.append({"index": i, "kind": kind, "dim": dim, "lhs": lhs,
                             "rhs": rs if kind == "sub" else rp, **v})
    ok = bool(ok and seen["sub"] and seen["super"] and not failures)
    return CriterionResult(8, "energy-difference inequalities", ok,
                           "no verdict fails; each inequality holds where its hypothesis holds",
                           {"explicit": explicit, "random": counts, "failures": failures[:5]})


def _transmission_data(x):
    return np.exp(0.5 * x[..., 0]) * np.cos(x[..., 1]) + 0.7 * x[..., 1] + 0.4 * x[..., 0] * x[..., 1]


def criterion_9(ctx):
    """Transmission solver: exact solutions, continuity in alpha and interface balance."""
    n = 32
    h = 1.0 / n
    exact = {}
    for alpha in (0.5, 1.0, 2.0):
        gm = 0.8
        gp = alpha ** 2 * gm / (1 + alpha ** 2)
        w = lambda x, gp=gp, gm=gm: (0.3 + 0.5 * x[..., 0] + gp * np.maximum(x[..., 1], 0)
                                     + gm * np.minimum(x[..., 1], 0))
        sol = solve_transmission(TransmissionProblem(alpha, w, n))
        grid = sol.w.grid
        err = float(np.abs(sol.w.values - w(grid.node_coords())).max())
        exact[str(alpha)] = err
    plane = lambda x: 0.2 - 0.4 * x[..., 0] + 1.3 * x[..., 1]  # noqa: E731
    sol = solve_transmission(TransmissionProblem(np.inf, plane, n))
    exact["inf"] = float(np.abs(sol.w.values - plane(sol.w.grid.node_coords())).max())
    exact_ok = all(v <= 1e-6 for v in exact.values())

    alphas = [1 + 2.0 ** -k for k in range(1, 7)]
    dev_finite = transmission_continuity(alphas, 1.0, _transmission_data, n)
    big = [2.0 ** k for k in range(2, 12, 2)]
    dev_inf = transmission_continuity(big, np.inf, _transmission_data, n)
    cont_ok = True
    for dev in (dev_finite, dev_inf):
        cont_ok &= bool(np.all(np.diff(dev) <= 1e-12) and dev[-1] <= 5 * h)

    ns = [16, 32, 64]
    bal = []
    for m in ns:
        s = solve_transmission(TransmissionProblem(1.5, _transmission_data, m))
        bal.append(abs(s.balance()))
    bal_ok = all(b <= 1.0 / m for b, m in zip(bal, ns))
    order = loglog_fit([1.0 / m for m in ns], bal)[0]
    ok = exact_ok and cont_ok and bal_ok
    return CriterionResult(
        9, "transmission solver", bool(ok),
        "exact <= 1e-6; deviations monotone and <= 5h; |L| <= 1*h",
        {"exact_errors": exact, "alphas": alphas, "deviations": dev_finite,
         "alphas_to_inf": big, "deviations_to_inf": dev_inf, "n": ns, "balance": bal,
         "balance_order": order})


def _primary_defects(report):
    return [max(max(u, 0.0), max(d, 0.0), e) for u, d, e in
            zip(report.defects["upscale"], report.defects["downscale"], report.defects["energy"])]


def criterion_10(ctx):
    """Homogenization defects: decay for the laminate, O(h) for the constant medium.

    The verdict uses the layered medium with constant phase constants.  The
    variant with oscillating phase constants is reported as a diagnostic: its
    interface drifts towards a favourable phase as the domain grows, which
    adds a volume defect that is not monotone over moderate radii.
    """
    cfg = load_preset("laminate-flat-q")
    radii = cfg.get("hom-error", "radii", "list")
    h = cfg.get("hom-error", "h")
    gamma = cfg.get("hom-error", "gamma")
    boundary = cfg.boundary_function()
    lam = hom_error_report(ctx.field("laminate-flat-q"), boundary, radii, h=h, gamma=gamma,
                           config=cfg.minimize_config(), threads=ctx.threads)
    primary = _primary_defects(lam)
    slope = loglog_fit(lam.radii, primary)[0]

    osc_cfg = load_preset("laminate-normalized")
    pre = {}
    big = max(radii)
    if 2 * big == osc_cfg.get("grid", "radius") and h == osc_cfg.get("grid", "h"):
        pre[big] = _laminate_minimizer(ctx)
    osc = hom_error_report(ctx.field("laminate-normalized"), boundary, radii, h=h, gamma=gamma,
                           config=osc_cfg.minimize_config(), threads=ctx.threads, minimizers=pre)
    osc_primary = _primary_defects(osc)

    const = hom_error_report(ctx.field("constant"), boundary, radii, h=h, gamma=gamma,
                             threads=ctx.threads)
    C = 1.0
    const_max = max(max(abs(v) for v in vals) for vals in const.defects.values())
    ok = -slope > 0 and const_max <= C * h
    return CriterionResult(
        10, "homogenization rate", bool(ok),
        "laminate primary defect exponent > 0; constant defects <= 1*h",
        {"laminate": lam.to_dict(), "laminate_primary": primary, "laminate_exponent": -slope,
         "oscillating_q": {"report": osc.to_dict(), "primary": osc_primary,
                           "exponent": -loglog_fit(osc.radii, osc_primary)[0]},
         "constant": const.to_dict(), "constant_max_defect": const_max, "C": C})


def criterion_11(ctx):
    """Improvement of flatness for a perturbed two-plane minimizer in a constant medium."""
    R, h, amp = 16.0, 1 / 16, 0.1
    cfg = load_preset("constant")
    grid = Grid(2, R, h)
    cfg.sections.setdefault("boundary", {})["bump"] = str(amp)
    g = cfg.boundary(grid)
    res = minimize(ctx.field("constant"), g, R, cfg.minimize_config())
    radii = [1.75, 3.5, 7.0, 14.0]
    prof = flatness_profile(res.u, radii, r0=1.0)
    v = list(prof.values)
    halvings = []
    ok = True
    for i in range(len(radii) - 1, 0, -1):
        ratio = v[i - 1] / v[i]
        floor = v[i - 1] * radii[i - 1] <= 2 * h
        good = ratio <= 2 ** -0.5 or floor
        halvings.append({"from": radii[i], "to": radii[i - 1], "ratio": ratio,
                         "at_floor": bool(floor), "ok": bool(good)})
        ok &= good
    initial = v[-1]
    osc_ok = prof.extra["osc_nu"] <= 5 * initial and prof.extra["osc_log_alpha"] <= 5 * initial
    return CriterionResult(
        11, "improvement of flatness", bool(ok and osc_ok),
        "each halving ratio <= 2^-1/2 or flat <= 2h; osc <= 5 x initial flatness",
        {"radii": radii, "flatness_over_r": v, "halvings": halvings,
         "osc_nu": prof.extra["osc_nu"], "osc_log_alpha": prof.extra["osc_log_alpha"],
         "alpha": prof.extra["alpha"], "initial_flatness": initial, "bump": amp,
         "converged": res.converged})


def criterion_12(ctx):
    """Large-scale Lipschitz ratio of laminate minimizers and its grid stability."""
    cfg = load_preset("laminate-normalized")
    radii = cfg.get("profile", "radii", "list")
    ratios = {}
    for h in (0.5, 0.25):
        u = _laminate_minimizer(ctx, h).u
        prof = gradient_profile(u, radii, center=recentre(u))
        ratios[h] = {"ratio": prof.extra["lipschitz_ratio"], "profile": prof.values}
    change = abs(ratios[0.25]["ratio"] / ratios[0.5]["ratio"] - 1.0)
    ok = all(r["ratio"] <= 10 for r in ratios.values()) and change <= 0.2
    return CriterionResult(12, "Lipschitz profile", bool(ok),
                           "max ratio <= 10; change under refinement <= 20%",
                           {"radii": radii, "h=1/2": ratios[0.5], "h=1/4": ratios[0.25],
                            "relative_change": change})


def criterion_13(ctx):
    """Stability of two-plane fits: synthetic cases and a minimizer blow-down series."""
    grid = Grid(2, 4.0, 1 / 16)
    r, a0 = 2.0, 1.0
    e0 = np.array([0.0, 1.0])
    cases = {
        "exact": lambda x: phi(a0, x[..., 1]),
        "shifted": lambda x: phi(a0, x[..., 1] + 0.005 * r),
        "dilated": lambda x: phi(a0, x[..., 1] * 1.004),
    }
    rows, ok = {}, True
    for name, fn in cases.items():
        u = GridFunction.from_function(grid, fn)
        eta, ratio, direction, fit = flat_fit_stability(u, r, a0, e0)
        good = all(stability_holds(eta, ratio, direction))
        rows[name] = {"eta": eta, "ratio_defect": ratio, "direction_defect": direction,
                      "ok": bool(good)}
        ok &= good
    u = _laminate_minimizer(ctx).u
    radii = [4.0, 8.0, 16.0, 32.0, 64.0]
    alpha, nu, prof = liouville_fit(u, radii)
    series = prof.extra["stability"]
    ok &= all(s["ratio_ok"] and s["direction_ok"] for s in series)
    pairs = []
    for small, big in zip(radii[:-1], radii[1:]):
        ref = measure_flatness(u, big)
        eta, ratio, direction, _ = stability_defects(u, small, ref.alpha, ref.nu)
        good = all(stability_holds(eta, ratio, direction))
        pairs.append({"r": small, "reference_radius": big, "eta": eta, "ratio_defect": ratio,
                      "direction_defect": direction, "ok": bool(good)})
        ok &= good
    decreasing = bool(np.all(np.diff(prof.values) < 0))
    ok &= decreasing and prof.extra["omega"] > 0
    return CriterionResult(
        13, "Liouville and fit stability", bool(ok),
        f"ratio defect <= 24 eta, direction defect <= 6 sqrt(eta) (+{FIT_SLACK:g}); "
        "D(r) decreasing, omega > 0",
        {"synthetic": rows, "alpha": alpha, "e": nu, "D": prof.values,
         "omega": prof.extra["omega"], "series": series, "pairs": pairs})


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 14)}


def run_criteria(numbers=None, ctx=None, report=print):
    """Run the selected criteria (default all of 1-13) and return their results."""
    ctx = ctx or AcceptanceContext()
    numbers = sorted(CRITERIA) if numbers is None else list(numbers)
    results = []
    for n in numbers:
        t0 = time.time()
        res = CRITERIA[n](ctx)
        res.elapsed = time.time() - t0
        results.append(res)
        if report is not None:
            report(res.line())
    return results


def summary_criterion(results, elapsed):
    """The end-to-end verdict: every criterion passed within the time budget."""
    ok = all(r.passed for r in results) and elapsed <= TIME_BUDGET
    return CriterionResult(14, "end-to-end verification", ok,
                           f"all criteria pass, wall clock <= {TIME_BUDGET:.0f}s",
                           {"failed": [r.number for r in results if not r.passed],
                            "wall_clock": elapsed}, elapsed)
