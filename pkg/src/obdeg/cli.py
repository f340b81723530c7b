"""Command-line driver: configuration loading, dispatch, reports.

Usage: obdeg <subcommand> --config file.json [--out dir] [--seed n]

Subcommands: degree, solve, homotopy, reflector, yamabe, verify.
Configurations are strict JSON documents (unknown keys are rejected,
naming the offending key), every report echoes enough input to re-run
the case, and outputs are written atomically.  All floats are printed in
shortest round-trip form, so identical config + seed reproduces outputs
bit for bit.
"""

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .calculus import (
    BoundaryField,
    ScalarField,
    field_to_csv,
    random_smooth_field,
    residual_floor,
)
from .continuation import ContinuationSchedule, NewtonOptions, continue_homotopy, newton_solve
from .degree import degree_at_zero
from .domain import DomainFoliation, RadiusFunction, build_disk, build_star
from .errors import ConfigurationError, ObdegError
from .linops import (
    equilibrated_min_svd,
    find_N0,
    frozen_split,
    kernel_estimate_ratio,
    rellich_ratio,
    resolvent_symbol_bound,
    semifiniteness_mu,
    surjectivity_family_ratio,
)
from .problem import (
    linearize,
    make_laplace_robin,
    make_semilinear_robin,
    problem_by_name,
    residual,
)
from .reflector import (
    analytic_manufactured,
    boundary_defect,
    gradient,
    ma_residual,
    mass_balance,
    pushforward_discrepancy,
    reflection_map,
    solve_reflector,
)
from .yamabe import YamabeConfig, solve_yamabe


@dataclass
class Report:
    """One check or run: inputs echoed, measurements, pass flags, tolerances."""

    name: str
    inputs: dict
    measured: dict = field(default_factory=dict)
    passes: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = __version__

    @property
    def ok(self):
        return all(self.passes.values())

    def to_json(self):
        def clean(v):
            if isinstance(v, (np.bool_, bool)):
                return bool(v)
            if isinstance(v, (np.floating, float)):
                return float(v)
            if isinstance(v, (np.integer, int)):
                return int(v)
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            if isinstance(v, np.ndarray):
                return [clean(x) for x in v.tolist()]
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            return v

        doc = {
            "name": self.name,
            "inputs": clean(self.inputs),
            "measured": clean(self.measured),
            "passes": clean(self.passes),
            "tolerances": clean(self.tolerances),
            "wall_time": self.wall_time,
            "version": self.version,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Strict configuration schema


_DOMAIN_KEYS = {"shape", "radius", "radius0", "fourier_cos", "fourier_sin", "n_r", "n_theta"}
_SCHEMA = {
    "degree": {"name", "seed", "domain", "problem", "initial", "newton"},
    "solve": {"name", "seed", "domain", "problem", "initial", "newton"},
    "homotopy": {"name", "seed", "domain", "family", "initial", "newton", "schedule",
                 "write_fields"},
    "reflector": {"name", "seed", "domain", "eps_schedule", "foliation", "newton",
                  "image_samples"},
    "yamabe": {"name", "seed", "n", "c", "h_g", "n_r", "n_theta"},
    "verify": {"name", "seed", "preset"},
}
_SUB_KEYS = {
    "domain": _DOMAIN_KEYS,
    "problem": None,   # free-form: name + parameters
    "family": None,
    "initial": {"constant", "profile"},
    "newton": {"tol", "max_iter", "lambda_floor", "chi_floor"},
    "schedule": {"dt_init", "dt_min", "dt_max", "t_end"},
    "foliation": {"r_init"},
}


def validate_config(sub, cfg):
    if not isinstance(cfg, dict):
        raise ConfigurationError("configuration must be a JSON object")
    allowed = _SCHEMA[sub]
    for key in cfg:
        if key not in allowed:
            raise ConfigurationError(f"unknown configuration key {key!r} for {sub!r}")
        inner = _SUB_KEYS.get(key)
        if inner is not None and isinstance(cfg[key], dict):
            for k2 in cfg[key]:
                if k2 not in inner:
                    raise ConfigurationError(f"unknown configuration key {key}.{k2!r}")
    return cfg


def domain_from_config(cfg):
    block = cfg.get("domain", {})
    shape = block.get("shape", "disk")
    n_r = int(block.get("n_r", 16))
    n_theta = int(block.get("n_theta", 32))
    if shape == "disk":
        return build_disk(n_r, n_theta, float(block.get("radius", 1.0)))
    if shape == "star":
        rf = RadiusFunction(
            a0=float(block.get("radius0", 1.0)),
            a_cos=tuple(block.get("fourier_cos", ())),
            b_sin=tuple(block.get("fourier_sin", ())),
        )
        return build_star(rf, n_r, n_theta)
    raise ConfigurationError(f"unknown domain shape {shape!r}")


def newton_from_config(cfg, dom=None):
    block = dict(cfg.get("newton", {}))
    if "tol" not in block and dom is not None:
        block["tol"] = max(1e-9, 100.0 * residual_floor(dom))
    return NewtonOptions(
        tol=float(block.get("tol", 1e-9)),
        max_iter=int(block.get("max_iter", 30)),
        lambda_floor=float(block.get("lambda_floor", 0.0)),
        chi_floor=float(block.get("chi_floor", 0.0)),
    )


def initial_field(cfg, dom):
    block = cfg.get("initial", {})
    if "constant" in block:
        return ScalarField(dom, np.full(dom.n_nodes, float(block["constant"])))
    if "profile" in block and block["profile"] == "bump":
        r2 = np.sum(dom.nodes**2, axis=1)
        return ScalarField(dom, 1.5 * (1.0 - 0.3 * r2))
    return ScalarField(dom, np.zeros(dom.n_nodes))


def _problem_from(cfg, dom):
    block = dict(cfg.get("problem", {"name": "laplace-robin"}))
    name = block.pop("name")
    return problem_by_name(name, dom, **block)


# ---------------------------------------------------------------------------
# Subcommand implementations (each returns a list of (filename, text) pairs
# plus the primary report)


def run_degree(cfg, out, seed):
    dom = domain_from_config(cfg)
    prob = _problem_from(cfg, dom)
    u = initial_field(cfg, dom)
    fi, gb = residual(prob, u)
    ni = dom.n_interior
    res = max(np.max(np.abs(fi.values[:ni])), np.max(np.abs(gb.values)))
    if res > 1e-6:
        u, _ = newton_solve(prob, u, newton_from_config(cfg, dom))
    rep_deg = degree_at_zero(prob, u)
    name = cfg.get("name", "degree")
    report = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured={
            "dim_E_minus": rep_deg.dim_E_minus,
            "degree": rep_deg.degree,
            "negative_real_eigenvalues": list(rep_deg.negative_real_eigenvalues),
            "residual_sup": rep_deg.diagnostics.get("residual_sup"),
            "nearest_to_zero": rep_deg.diagnostics.get("nearest_to_zero"),
        },
        passes={"degree_defined": abs(rep_deg.degree) == 1},
        tolerances={"zero_certification": 1e-6, "degeneracy": 1e-8},
    )
    return report, [(f"{name}.field.csv", field_to_csv(u))]


def run_solve(cfg, out, seed):
    dom = domain_from_config(cfg)
    prob = _problem_from(cfg, dom)
    opts = newton_from_config(cfg, dom)
    u, diag = newton_solve(prob, initial_field(cfg, dom), opts)
    name = cfg.get("name", "solve")
    report = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured={
            "iterations": diag["iterations"],
            "residual": diag["residual"],
            "lambda_margin": diag["lambda_margin"],
            "chi_margin": diag["chi_margin"],
        },
        passes={"converged": diag["residual"] <= opts.tol},
        tolerances={"newton_tol": opts.tol},
    )
    return report, [(f"{name}.field.csv", field_to_csv(u))]


def path_to_csv(path):
    lines = ["t,residual,lambda,chi,iterations"]
    for e in path.entries:
        lines.append(
            f"{float(e.t)!r},{float(e.residual)!r},{float(e.lambda_margin)!r},"
            f"{float(e.chi_margin)!r},{e.iterations}"
        )
    return "\n".join(lines) + "\n"


def run_homotopy(cfg, out, seed):
    dom = domain_from_config(cfg)
    fam_block = dict(cfg.get("family", {"name": "semilinear-robin", "parameter": "lam",
                                        "from": 0.0, "to": 3.0}))
    name_p = fam_block.pop("name")
    pname = fam_block.pop("parameter")
    v0 = float(fam_block.pop("from"))
    v1 = float(fam_block.pop("to"))

    def family(t):
        params = dict(fam_block)
        params[pname] = (1.0 - t) * v0 + t * v1
        return problem_by_name(name_p, dom, **params)

    sched_block = cfg.get("schedule", {})
    sched = ContinuationSchedule(
        dt_init=float(sched_block.get("dt_init", 0.2)),
        dt_min=float(sched_block.get("dt_min", 1e-4)),
        dt_max=float(sched_block.get("dt_max", 0.25)),
        t_end=float(sched_block.get("t_end", 1.0)),
    )
    opts = newton_from_config(cfg, dom)
    path = continue_homotopy(family, initial_field(cfg, dom), sched, opts)
    name = cfg.get("name", "homotopy")
    files = [(f"{name}.path.csv", path_to_csv(path))]
    if cfg.get("write_fields", False):
        for i, e in enumerate(path.entries):
            files.append((f"{name}.step{i:03d}.field.csv", field_to_csv(e.u)))
    else:
        files.append((f"{name}.field.csv", field_to_csv(path.final.u)))
    report = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured={
            "steps": len(path.entries),
            "final_t": path.final.t,
            "final_residual": path.final.residual,
        },
        passes={"reached_end": path.final.t >= sched.t_end - 1e-12},
        tolerances={"newton_tol": opts.tol},
    )
    return report, files


def run_reflector(cfg, out, seed):
    dom = domain_from_config(cfg)
    prob, u_star = analytic_manufactured(dom, eps=0.0)
    fol_block = cfg.get("foliation", {})
    r_init = float(fol_block.get("r_init", 0.4 * dom.radius.a0))
    fol = DomainFoliation(
        RadiusFunction(r_init), dom.radius, dom.n_r, dom.n_theta
    )
    eps_schedule = [float(e) for e in cfg.get("eps_schedule", [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])]
    opts = None
    if "newton" in cfg:
        opts = newton_from_config(cfg, dom)
    u, diag = solve_reflector(prob, fol, eps_schedule, opts)
    res = ma_residual(u, prob)
    defect = boundary_defect(u, prob)
    name = cfg.get("name", "reflector")

    n_img = int(cfg.get("image_samples", 500))
    rng = np.random.default_rng(seed)
    idx = rng.choice(dom.n_nodes, size=min(n_img, dom.n_nodes), replace=False)
    pts = dom.nodes[idx]
    grad_vals = gradient(u)[idx]
    img = reflection_map(pts, u.values[idx], grad_vals)
    img_lines = ["sample_index,x,y"]
    for i, (xx, yy) in enumerate(img):
        img_lines.append(f"{i},{float(xx)!r},{float(yy)!r}")

    incident = float(np.dot(dom.interior_weights, prob.rho.values))
    balance = mass_balance(prob)
    defect_sup = float(np.max(np.abs(defect.values)))
    report = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured={
            "mass_balance": balance,
            "residual_sup": float(np.max(np.abs(res.values))),
            "defect_sup": defect_sup,
            "eps_gaps": diag["eps_gaps"],
            "drift_sign_change": diag["drift_sign_change"],
            "recovery_error": float(np.max(np.abs(u.values - u_star.values))),
        },
        passes={
            "mass_balanced": abs(balance) <= 0.05 * incident,
            "boundary_on_target": defect_sup <= 1e-4,
        },
        tolerances={"mass_balance_rel": 0.05, "defect_sup": 1e-4},
    )
    return report, [
        (f"{name}.field.csv", field_to_csv(u)),
        (f"{name}.image.csv", "\n".join(img_lines) + "\n"),
    ]


def run_yamabe(cfg, out, seed):
    ycfg = YamabeConfig(
        n=int(cfg.get("n", 3)),
        c=float(cfg.get("c", 0.0)),
        h_g=float(cfg.get("h_g", 1.0)),
        n_r=int(cfg.get("n_r", 64)),
        n_theta=int(cfg.get("n_theta", 16)),
    )
    u, rep = solve_yamabe(ycfg)
    name = cfg.get("name", "yamabe")
    report = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured=rep,
        passes={"degree_unit": abs(rep["degree"]) == 1},
        tolerances={},
    )
    return report, [(f"{name}.field.csv", field_to_csv(u))]


# ---------------------------------------------------------------------------
# Verification suite


def _verify_checks(preset, seed):
    small = preset == "small"
    n_r, n_t = (12, 24) if small else (16, 32)
    dom = build_disk(n_r, n_t, 1.0)
    dom2 = build_disk(2 * n_r, 2 * n_t, 1.0)
    eye = np.broadcast_to(np.eye(2), (dom.n_nodes, 2, 2)).copy()
    eye2 = np.broadcast_to(np.eye(2), (dom2.n_nodes, 2, 2)).copy()
    ones = ScalarField(dom, np.ones(dom.n_nodes))
    rng = np.random.default_rng(seed)

    def check_boundary_trace():
        want = (1.0 + np.sqrt(2.0)) / 2.0
        got = rellich_ratio(dom2, eye2, dom2.gamma.copy(),
                            BoundaryField(dom2, np.cos(dom2.thetas)))
        coarse = rellich_ratio(dom, eye, dom.gamma.copy(),
                               BoundaryField(dom, np.cos(dom.thetas)))
        return Report(
            name="boundary-trace-ratio",
            inputs={"mesh": [n_r, n_t]},
            measured={"ratio_fine": got, "ratio_coarse": coarse, "reference": want},
            passes={
                "cosine_reference": abs(got - want) <= 0.02 * want,
                "refinement_stable": abs(got - coarse) <= 0.05 * coarse,
            },
            tolerances={"reference_rel": 0.02, "stability_rel": 0.05},
        )

    def check_semifiniteness():
        mu0, _ = semifiniteness_mu(linearize(make_laplace_robin(dom), ones))
        mu7, _ = semifiniteness_mu(linearize(make_laplace_robin(dom, c=7.0), ones))
        return Report(
            name="semifiniteness",
            inputs={"mesh": [n_r, n_t], "shift": 7.0},
            measured={"mu_star": mu0, "shifted": mu7, "shift_error": abs(mu7 - mu0 - 7.0)},
            passes={
                "negative_threshold": mu0 < 0.0,
                "shift_identity": abs(mu7 - mu0 - 7.0) <= 1e-8,
            },
            tolerances={"shift": 1e-8},
        )

    def check_resolvent():
        vals = {N: resolvent_symbol_bound(N, 512) for N in (1.0, 2.0, 4.0, 16.0, 256.0)}
        return Report(
            name="resolvent-symbol-bound",
            inputs={"K_max": 512},
            measured={str(k): v for k, v in vals.items()},
            passes={
                "unit_at_one": vals[1.0] == 1.0,
                "bounded": all(v <= 1.0 + 1e-12 for v in vals.values()),
            },
            tolerances={"bound": 1.0 + 1e-12},
        )

    def check_threshold():
        n0, profile = find_N0(dom, eye, dom.gamma.copy(), 256.0)
        tail = [r for N, r in profile if N >= n0]
        return Report(
            name="regularization-threshold",
            inputs={"mesh": [n_r, n_t], "N_max": 256},
            measured={"N0": n0, "profile": profile},
            passes={
                "finite": n0 <= 256.0,
                "nondecreasing_above": all(b >= a for a, b in zip(tail, tail[1:])),
            },
            tolerances={"svd_tol": 1e-10},
        )

    def check_surjectivity():
        n0, _ = find_N0(dom, eye, dom.gamma.copy(), 256.0)
        ratios = {t: surjectivity_family_ratio(dom, 2 * n0, t)
                  for t in (0.0, 0.25, 0.5, 0.75, 1.0)}
        return Report(
            name="boundary-surjectivity-family",
            inputs={"mesh": [n_r, n_t], "N": 2 * n0},
            measured={str(t): v for t, v in ratios.items()},
            passes={"nonsingular": all(v > 1e-10 for v in ratios.values())},
            tolerances={"svd_tol": 1e-10},
        )

    def check_kernel_estimate():
        x, y = dom.nodes[:, 0], dom.nodes[:, 1]
        phi = ScalarField(dom, np.sin(2 * x) * np.cos(y) + 0.3 * x * y)
        x2, y2 = dom2.nodes[:, 0], dom2.nodes[:, 1]
        phi2 = ScalarField(dom2, np.sin(2 * x2) * np.cos(y2) + 0.3 * x2 * y2)
        r1 = kernel_estimate_ratio(dom, eye, dom.gamma.copy(), 32.0, phi)
        r2 = kernel_estimate_ratio(dom2, eye2, dom2.gamma.copy(), 32.0, phi2)
        return Report(
            name="interior-kernel-estimate",
            inputs={"mesh": [n_r, n_t], "N": 32.0},
            measured={"ratio_coarse": r1, "ratio_fine": r2},
            passes={"bounded_growth": r2 <= 2.0 * r1},
            tolerances={"growth_factor": 2.0},
        )

    def check_frozen_split():
        prob = make_semilinear_robin(dom, lam=3.0)
        u = random_smooth_field(dom, rng, amplitude=0.8)
        fs = frozen_split(prob, u, N=8.0)
        l_parts = fs.l_apply(u)
        r_parts = fs.r_apply(u)
        targets = fs.composite_target()
        scale = max(1.0, *(np.max(np.abs(t)) for t in targets))
        err = max(
            np.max(np.abs(l + r - t)) / scale
            for l, r, t in zip(l_parts, r_parts, targets)
        )
        return Report(
            name="frozen-split-reconstruction",
            inputs={"mesh": [n_r, n_t], "N": 8.0},
            measured={"relative_error": err},
            passes={"reconstructs": err <= 1e-8},
            tolerances={"relative": 1e-8},
        )

    def check_eigenvalue_continuity():
        mu0, _ = semifiniteness_mu(linearize(make_laplace_robin(dom), ones))
        pert = linearize(make_laplace_robin(dom), ones)
        from .problem import LinearPair

        pert = LinearPair(
            domain=pert.domain,
            a=(1.0 + 1e-3) * pert.a,
            d=pert.d,
            c=pert.c,
            b=pert.b,
            ell=pert.ell,
        )
        mu1, _ = semifiniteness_mu(pert)
        return Report(
            name="eigenvalue-continuity",
            inputs={"mesh": [n_r, n_t], "relative_perturbation": 1e-3},
            measured={"mu_star": mu0, "mu_perturbed": mu1, "move": abs(mu1 - mu0)},
            passes={"continuous": abs(mu1 - mu0) <= 0.05 * max(1.0, abs(mu0))},
            tolerances={"move_rel": 0.05},
        )

    return [
        check_boundary_trace,
        check_semifiniteness,
        check_resolvent,
        check_threshold,
        check_surjectivity,
        check_kernel_estimate,
        check_frozen_split,
        check_eigenvalue_continuity,
    ]


def run_verify(cfg, out, seed):
    preset = cfg.get("preset", "small")
    reports = []
    for make in _verify_checks(preset, seed):
        t0 = time.time()
        rep = make()
        rep.wall_time = time.time() - t0
        rep.inputs["seed"] = seed
        reports.append(rep)
    name = cfg.get("name", "verify")
    summary = Report(
        name=name,
        inputs={"config": cfg, "seed": seed},
        measured={"checks": [r.name for r in reports]},
        passes={r.name: r.ok for r in reports},
        tolerances={},
    )
    files = [(f"{r.name}.report.json", r.to_json()) for r in reports]
    return summary, files


_RUNNERS = {
    "degree": run_degree,
    "solve": run_solve,
    "homotopy": run_homotopy,
    "reflector": run_reflector,
    "yamabe": run_yamabe,
    "verify": run_verify,
}


def run(subcommand, config, out_dir=".", seed=0):
    """Dispatch one subcommand; returns (exit status, report)."""
    if subcommand not in _RUNNERS:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    validate_config(subcommand, config)
    t0 = time.time()
    report, files = _RUNNERS[subcommand](config, out_dir, seed)
    report.wall_time = time.time() - t0
    name = report.name
    atomic_write(os.path.join(out_dir, f"{name}.report.json"), report.to_json())
    for fname, text in files:
        atomic_write(os.path.join(out_dir, fname), text)
    return (0 if report.ok else 1), report


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="obdeg",
        description="Degree computation and solvers for oblique boundary value problems",
    )
    parser.add_argument("subcommand", choices=sorted(_RUNNERS))
    parser.add_argument("--config", required=False, help="JSON configuration file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.config:
        try:
            with open(args.config) as f:
                config = json.load(f)
        except json.JSONDecodeError as exc:
            print(f"malformed configuration: line {exc.lineno}, column {exc.colno}: "
                  f"{exc.msg}", file=sys.stderr)
            return 2
        except OSError as exc:
            print(f"cannot read configuration: {exc}", file=sys.stderr)
            return 2
    else:
        config = {}

    try:
        status, report = run(args.subcommand, config, args.out, args.seed)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ObdegError as exc:
        err_report = Report(
            name=config.get("name", args.subcommand),
            inputs={"config": config, "seed": args.seed},
            measured={"error": str(exc), "error_type": type(exc).__name__},
            passes={"completed": False},
        )
        atomic_write(
            os.path.join(args.out, f"{err_report.name}.report.json"), err_report.to_json()
        )
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for check, ok in report.passes.items():
        print(f"{'PASS' if ok else 'FAIL'}  {check}")
    return status


if __name__ == "__main__":
    sys.exit(main())
