"""Damped Newton solver and predictor-corrector homotopy continuation.

Each Newton step solves the coupled linearized system (interior operator
rows at interior nodes, boundary operator rows at boundary nodes) as one
square matrix.  Backtracking halves the step while the residual fails to
decrease; admissibility (ellipticity and obliqueness margins above their
floors) is enforced at every accepted iterate.

The continuation driver walks a family t -> problem from t = 0 to 1 with
a secant predictor and adaptive step halving down to a floor.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .calculus import ScalarField, sup_norm
from .errors import (
    ContinuationStuckError,
    DomainOfDefinitionError,
    InputError,
    LeftAdmissibleSetError,
    NonConvergenceError,
    SolverError,
)
from .problem import (
    assemble_pair,
    ellipticity_margin,
    linearize,
    obliqueness_margin,
    residual,
)


@dataclass(frozen=True)
class NewtonOptions:
    """Newton solver controls and admissibility floors."""

    tol: float = 1e-10
    max_iter: int = 30
    damping_min: float = 1.0 / 64.0
    lambda_floor: float = 0.0
    chi_floor: float = 0.0

    def __post_init__(self):
        if self.tol <= 0.0:
            raise InputError("Newton tolerance must be positive")
        if self.lambda_floor < 0.0 or self.chi_floor < 0.0:
            raise InputError("margin floors must be nonnegative")


@dataclass
class PathEntry:
    t: float
    u: ScalarField
    iterations: int
    residual: float
    lambda_margin: float
    chi_margin: float


@dataclass
class SolvePath:
    """Accepted continuation states in order of strictly increasing t."""

    entries: list = field(default_factory=list)

    def append(self, entry: PathEntry):
        if self.entries and entry.t <= self.entries[-1].t:
            raise InputError("continuation path parameters must increase strictly")
        self.entries.append(entry)

    @property
    def ts(self):
        return [e.t for e in self.entries]

    @property
    def final(self):
        return self.entries[-1]


def _residual_vector(prob, u):
    fi, gb = residual(prob, u)
    ni = prob.domain.n_interior
    return np.concatenate([fi.values[:ni], gb.values])


def _check_margins(prob, u, opts, iterate):
    lam = ellipticity_margin(prob, u)
    chi = obliqueness_margin(prob, u)
    if lam <= opts.lambda_floor or chi <= opts.chi_floor:
        raise LeftAdmissibleSetError(
            f"iterate {iterate} left the admissible set "
            f"(ellipticity {lam:.3e} <= floor {opts.lambda_floor:.3e} or "
            f"obliqueness {chi:.3e} <= floor {opts.chi_floor:.3e})",
            iterate=iterate,
            margins=(lam, chi),
        )
    return lam, chi


def newton_solve(prob, u0: ScalarField, opts: NewtonOptions = None):
    """Damped Newton iteration for (f, g) = 0 from the initial field u0.

    Returns (solution, diagnostics).  Raises LeftAdmissibleSetError when
    an accepted iterate violates a margin floor, NonConvergenceError when
    the iteration budget runs out.
    """
    opts = opts or NewtonOptions()
    u = u0
    _check_margins(prob, u, opts, 0)
    r = _residual_vector(prob, u)
    norm = sup_norm(r)
    history = [norm]
    steps = []
    for it in range(1, opts.max_iter + 1):
        if norm <= opts.tol:
            break
        pair = linearize(prob, u)
        A = assemble_pair(pair).tocsc()
        try:
            delta = spla.splu(A).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"Newton system singular at iterate {it}: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SolverError(f"Newton system produced non-finite update at iterate {it}")
        step = 1.0
        accepted = False
        while step >= opts.damping_min:
            trial = ScalarField(prob.domain, u.values + step * delta)
            try:
                r_trial = _residual_vector(prob, trial)
            except DomainOfDefinitionError:
                step *= 0.5
                continue
            norm_trial = sup_norm(r_trial)
            if norm_trial < norm or norm_trial <= opts.tol:
                u, r, norm = trial, r_trial, norm_trial
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise NonConvergenceError(
                f"backtracking stalled at iterate {it} (residual {norm:.3e})",
                diagnostics={"history": history, "steps": steps},
            )
        _check_margins(prob, u, opts, it)
        history.append(norm)
        steps.append(step)
    if norm > opts.tol:
        raise NonConvergenceError(
            f"no convergence in {opts.max_iter} iterations (residual {norm:.3e})",
            diagnostics={"history": history, "steps": steps},
        )
    lam, chi = _check_margins(prob, u, opts, len(history) - 1)
    diagnostics = {
        "iterations": len(history) - 1,
        "residual": norm,
        "history": history,
        "steps": steps,
        "lambda_margin": lam,
        "chi_margin": chi,
    }
    return u, diagnostics


@dataclass(frozen=True)
class ContinuationSchedule:
    """Step controls for the homotopy driver."""

    dt_init: float = 0.1
    dt_min: float = 1e-4
    dt_max: float = 0.25
    t_end: float = 1.0
    growth: float = 1.5


def continue_homotopy(family, u0: ScalarField, schedule=None, opts=None) -> SolvePath:
    """March the family from t = 0 to t_end with Newton correction.

    ``family(t)`` returns the problem at parameter t; domains along the
    family must share mesh topology so fields transfer node-wise.  The
    predictor is the previous solution, upgraded to a secant extrapolation
    once two accepted states exist.  Failed corrections halve the step
    down to ``dt_min``; exhausting that raises ContinuationStuckError
    carrying the partial path.
    """
    schedule = schedule or ContinuationSchedule()
    opts = opts or NewtonOptions()
    path = SolvePath()

    prob0 = family(0.0)
    u, diag = newton_solve(prob0, u0, opts)
    path.append(
        PathEntry(
            t=0.0,
            u=u,
            iterations=diag["iterations"],
            residual=diag["residual"],
            lambda_margin=diag["lambda_margin"],
            chi_margin=diag["chi_margin"],
        )
    )

    t = 0.0
    dt = schedule.dt_init
    prev = None  # (t, values) behind the current state, for the secant predictor
    while t < schedule.t_end - 1e-14:
        t_try = min(t + dt, schedule.t_end)
        prob = family(t_try)
        if prev is not None and t_try > t:
            slope = (path.final.u.values - prev[1]) / (t - prev[0])
            guess_vals = path.final.u.values + slope * (t_try - t)
        else:
            guess_vals = path.final.u.values
        guess = ScalarField(prob.domain, guess_vals)
        try:
            u, diag = newton_solve(prob, guess, opts)
        except (NonConvergenceError, LeftAdmissibleSetError, SolverError, DomainOfDefinitionError):
            dt *= 0.5
            if dt < schedule.dt_min:
                raise ContinuationStuckError(
                    f"continuation step fell below {schedule.dt_min:g} at t = {t:g}",
                    path=path,
                )
            continue
        prev = (t, path.final.u.values)
        t = t_try
        path.append(
            PathEntry(
                t=t,
                u=u,
                iterations=diag["iterations"],
                residual=diag["residual"],
                lambda_margin=diag["lambda_margin"],
                chi_margin=diag["chi_margin"],
            )
        )
        dt = min(schedule.dt_max, dt * schedule.growth)
    return path
