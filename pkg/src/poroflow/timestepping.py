"""Partitioned time stepping for the coupled pressure/saturation system.

Three scheme families on a fixed step ``tau``:

* ``theta``: one-leg refactorized theta scheme.  Each step extrapolates an
  initial guess to the theta point ``t_n + theta*tau``, runs decoupled
  backward-Euler subiterations (pressure solve, then saturation solve, with
  coefficients frozen at the previous iterate) until the relative L2
  increments of both unknowns drop below TOL, then extrapolates forward to
  the whole step.  ``theta=1/2`` is the midpoint scheme (MP), ``theta=1`` is
  backward Euler (BE).
* ``tl1``: single implicit solve per unknown with coefficients lagged to the
  previous step.
* ``tl2``: BDF2 in time with coefficients extrapolated from the two previous
  steps (values of the coefficient functions are extrapolated, not the
  saturation itself).

The first step of theta and TL2 runs is always one midpoint step with TOL
tightened by 100x, started from the initial fields (bootstrap); TL1 needs no
history and starts directly.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, linalg, physics, spatial

__all__ = [
    "SchemeConfig",
    "scheme_from_name",
    "ProblemSetup",
    "StepperState",
    "SubiterationReport",
    "StepReport",
    "RunResult",
    "StepFailure",
    "BlowUpError",
    "NonConvergenceError",
    "initial_guess",
    "be_subiterate",
    "forward_extrapolate",
    "step_theta",
    "step_tl1",
    "step_tl2",
    "bootstrap",
    "run_simulation",
]

SATURATION_BLOWUP_LIMIT = 10.0
_TINY = 1e-300
# Absolute L2 increment below which a field counts as converged regardless
# of its relative change: a field that is identically zero up to round-off
# (the pressure in pure no-flux runs) never passes a relative test because
# its increments are noise divided by noise.
INCREMENT_ABS_FLOOR = 1e-12


class StepFailure(RuntimeError):
    """Base class for classified time-step failures."""


class BlowUpError(StepFailure):
    """Non-finite dofs or saturation beyond any physical bound."""


class NonConvergenceError(StepFailure):
    """Subiteration failed to reach TOL within max_iters."""


@dataclass
class SchemeConfig:
    kind: str  # "theta" | "tl1" | "tl2"
    tau: float
    theta: float = 0.5
    tol: float = 1e-5
    max_iters: int = 50

    def __post_init__(self):
        if self.kind not in ("theta", "tl1", "tl2"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "theta" and not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.tau <= 0.0 or self.tol <= 0.0 or self.max_iters < 1:
            raise ValueError("tau, tol and max_iters must be positive")

    @property
    def name(self):
        if self.kind == "theta":
            if self.theta == 0.5:
                return "mp"
            if self.theta == 1.0:
                return "be"
            return f"theta{self.theta:g}"
        return self.kind


def scheme_from_name(name, tau, tol=1e-5, max_iters=50):
    """Build a SchemeConfig from one of mp | be | tl1 | tl2."""
    name = name.lower()
    if name == "mp":
        return SchemeConfig("theta", tau, theta=0.5, tol=tol, max_iters=max_iters)
    if name == "be":
        return SchemeConfig("theta", tau, theta=1.0, tol=tol, max_iters=max_iters)
    if name in ("tl1", "tl2"):
        return SchemeConfig(name, tau, tol=tol, max_iters=max_iters)
    raise ValueError(f"unknown scheme {name!r}")


@dataclass
class ProblemSetup:
    """Everything a run needs besides the scheme."""

    space: spatial.FeSpace
    model: physics.FluidModel
    bc: spatial.BoundaryConditions
    source_q: object  # callable (x, y, t) or None
    source_qa: object
    p0: np.ndarray
    s0: np.ndarray
    t_final: float


@dataclass
class StepperState:
    """History carried between steps.

    ``p_hist`` holds the two most recent theta-point pressures as
    ``(time, dofs)`` pairs (the older entry is the initial pressure right
    after bootstrap); TL2 uses the two whole-step saturations
    ``s_prev``/``s_curr``.
    """

    t: float
    step: int
    s_curr: np.ndarray
    s_prev: np.ndarray | None = None
    p_hist: list = field(default_factory=list)


@dataclass
class SubiterationReport:
    iterations: int
    converged: bool
    p_increments: list
    s_increments: list


@dataclass
class StepReport:
    step: int
    t_end: float
    iterations: int
    converged: bool
    p_increments: list
    s_increments: list
    bootstrap: bool = False
    wall_time: float = 0.0


@dataclass
class RunResult:
    times: list
    saturations: list
    pressures: list  # whole-level pressures (None where not recovered)
    theta_times: list  # per step: theta-point time or None
    theta_pressures: list  # per step: theta-point pressure or None
    step_thetas: list  # per step: theta used (None for TL)
    reports: list
    outcome: str  # "completed" | "blew_up" | "no_convergence"
    failure_cause: str | None
    ledger: object | None

    @property
    def mean_iterations(self):
        if not self.reports:
            return float("nan")
        return float(np.mean([r.iterations for r in self.reports]))


def _check_fields(p, s):
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(s))):
        raise BlowUpError("non-finite field values")
    smax = float(np.max(np.abs(s)))
    if smax > SATURATION_BLOWUP_LIMIT:
        raise BlowUpError(f"saturation magnitude {smax:.3e} beyond bound")


def _rel_increment(space, new, old):
    num = spatial.l2_norm(space, new - old)
    den = max(spatial.l2_norm(space, old), _TINY)
    return num / den


def initial_guess(state, theta, tau):
    """Extrapolated subiteration start values at the next theta point.

    Saturation: linear extrapolation through the two whole-step levels.
    Pressure: Lagrange linear extrapolation through the two stored
    theta-point pressures, evaluated at ``t + theta*tau``.
    """
    if state.s_prev is None or len(state.p_hist) < 2:
        raise ValueError("state lacks history; bootstrap first")
    s_guess = (1.0 + theta) * state.s_curr - theta * state.s_prev
    (t_b, p_b), (t_a, p_a) = state.p_hist[-2], state.p_hist[-1]
    t_target = state.t + theta * tau
    c = (t_target - t_b) / (t_a - t_b)
    p_guess = p_b + c * (p_a - p_b)
    return p_guess, s_guess


def be_subiterate(problem, p_guess, s_guess, s_prev_whole, theta_tau, t_eval,
                  tol, max_iters):
    """Decoupled fixed-point subiteration for the implicit theta-point system.

    Alternates a pressure solve (coefficients at the current saturation
    iterate) and a saturation solve (coefficients at the current iterate, the
    fresh pressure on the right-hand side) until both relative L2 increments
    drop below ``tol``.  Raises :class:`NonConvergenceError` after
    ``max_iters`` and :class:`BlowUpError` on non-finite iterates.
    """
    space, model, bc = problem.space, problem.model, problem.bc
    p_i, s_i = p_guess, s_guess
    p_inc, s_inc = [], []
    for it in range(1, max_iters + 1):
        A, b = spatial.assemble_pressure(space, model, s_i, problem.source_q,
                                         bc, t_eval)
        p_next, _ = linalg.solve(A, b)
        A, b = spatial.assemble_saturation(space, model, s_i, s_prev_whole,
                                           p_next, theta_tau,
                                           problem.source_qa, bc, t_eval)
        s_next, _ = linalg.solve(A, b)
        _check_fields(p_next, s_next)
        dp_abs = spatial.l2_norm(space, p_next - p_i)
        ds_abs = spatial.l2_norm(space, s_next - s_i)
        dp = dp_abs / max(spatial.l2_norm(space, p_i), _TINY)
        ds = ds_abs / max(spatial.l2_norm(space, s_i), _TINY)
        p_inc.append(dp)
        s_inc.append(ds)
        p_i, s_i = p_next, s_next
        p_ok = dp < tol or dp_abs < INCREMENT_ABS_FLOOR
        s_ok = ds < tol or ds_abs < INCREMENT_ABS_FLOOR
        if p_ok and s_ok:
            return p_i, s_i, SubiterationReport(it, True, p_inc, s_inc)
    raise NonConvergenceError(
        f"subiteration stalled at increments p={p_inc[-1]:.3e}, "
        f"s={s_inc[-1]:.3e} after {max_iters} iterations"
    )


def forward_extrapolate(s_theta, s_n, theta):
    """Step 3: whole-step saturation from the theta-point value."""
    return s_theta / theta - (1.0 - theta) / theta * s_n


def step_theta(state, cfg, problem):
    """One refactorized theta step from ``state``; returns (state, report)."""
    t0 = time.perf_counter()
    theta, tau = cfg.theta, cfg.tau
    t_theta = state.t + theta * tau
    p_g, s_g = initial_guess(state, theta, tau)
    p_th, s_th, rep = be_subiterate(problem, p_g, s_g, state.s_curr,
                                    theta * tau, t_theta, cfg.tol,
                                    cfg.max_iters)
    s_new = forward_extrapolate(s_th, state.s_curr, theta)
    _check_fields(p_th, s_new)
    new_state = StepperState(
        t=state.t + tau,
        step=state.step + 1,
        s_curr=s_new,
        s_prev=state.s_curr,
        p_hist=(state.p_hist + [(t_theta, p_th)])[-2:],
    )
    report = StepReport(new_state.step, new_state.t, rep.iterations,
                        rep.converged, rep.p_increments, rep.s_increments,
                        wall_time=time.perf_counter() - t0)
    return new_state, report, (t_theta, p_th)


def step_tl1(state, cfg, problem):
    """One first-order time-lagged step: coefficients at the previous level."""
    t0 = time.perf_counter()
    space, model, bc = problem.space, problem.model, problem.bc
    t1 = state.t + cfg.tau
    s_n = state.s_curr
    A, b = spatial.assemble_pressure(space, model, s_n, problem.source_q,
                                     bc, t1)
    p1, _ = linalg.solve(A, b)
    A, b = spatial.assemble_saturation(space, model, s_n, s_n, p1, cfg.tau,
                                       problem.source_qa, bc, t1)
    s1, _ = linalg.solve(A, b)
    _check_fields(p1, s1)
    new_state = StepperState(t=t1, step=state.step + 1, s_curr=s1,
                             s_prev=s_n, p_hist=[(t1, p1)])
    report = StepReport(new_state.step, t1, 1, True, [], [],
                        wall_time=time.perf_counter() - t0)
    return new_state, report, p1


def step_tl2(state, cfg, problem):
    """One BDF2 step with extrapolated coefficient values.

    Mobilities and capillary slope are evaluated at the two stored saturation
    levels and extrapolated as values ``2 f(s^n) - f(s^(n-1))``; these may
    leave the physical range at large tau, which is the scheme's known
    failure mode and is reported as a blow-up.
    """
    t0 = time.perf_counter()
    space, model, bc = problem.space, problem.model, problem.bc
    if state.s_prev is None:
        raise ValueError("TL2 needs two saturation levels; bootstrap first")
    tau = cfg.tau
    t1 = state.t + tau
    kap = space.mesh.cell_permeability[:, None]

    sn_q, gsn = spatial.evaluate_at_quadrature(space, state.s_curr)
    sm_q, gsm = spatial.evaluate_at_quadrature(space, state.s_prev)
    lam_t = 2.0 * physics.mobility(model, "total", sn_q) \
        - physics.mobility(model, "total", sm_q)
    lam_a = 2.0 * physics.mobility(model, "a", sn_q) \
        - physics.mobility(model, "a", sm_q)
    pc1 = 2.0 * model.capillary.derivative(sn_q) \
        - model.capillary.derivative(sm_q)
    grad_pc = (
        2.0 * model.capillary.derivative(sn_q)[..., None] * gsn
        - model.capillary.derivative(sm_q)[..., None] * gsm
    )

    A = spatial.stiffness_matrix(space, lam_t * kap)
    b = np.zeros(space.n_dofs)
    if problem.source_q is not None:
        b += spatial.load_vector(space, problem.source_q, t1)
    b += spatial.gradient_load_vector(space, (lam_a * kap)[..., None] * grad_pc)
    dofs, vals = spatial._collect_dirichlet(space, bc.p_dirichlet, t1)
    if dofs.size == 0 and bc.pin_pressure:
        dofs, vals = np.array([0]), np.array([0.0])
    A, b = spatial.apply_dirichlet(A, b, dofs, vals)
    p1, _ = linalg.solve(A, b)

    phi, bdf_scale = model.porosity, 3.0 / (2.0 * tau)
    if "mass" not in space.cache:
        space.cache["mass"] = spatial.mass_matrix(space)
    A = phi * bdf_scale * space.cache["mass"] \
        + spatial.stiffness_matrix(space, -lam_a * kap * pc1)
    b = np.zeros(space.n_dofs)
    if problem.source_qa is not None:
        b += spatial.load_vector(space, problem.source_qa, t1)
    b += spatial.load_vector_from_values(
        space, phi / (2.0 * tau) * (4.0 * sn_q - sm_q)
    )
    _, gp1 = spatial.evaluate_at_quadrature(space, p1)
    b -= spatial.gradient_load_vector(space, (lam_a * kap)[..., None] * gp1)
    for tag in bc.s_outflow:
        edges = spatial._tag_edge_indices(space, tag)
        sn_e, _ = spatial.evaluate_on_boundary(space, state.s_curr, edges)
        sm_e, _ = spatial.evaluate_on_boundary(space, state.s_prev, edges)
        lam_a_e = 2.0 * physics.mobility(model, "a", sn_e) \
            - physics.mobility(model, "a", sm_e)
        _, gp_e = spatial.evaluate_on_boundary(space, p1, edges)
        kap_e = space.mesh.cell_permeability[
            space.mesh.boundary_edge_cells[edges]
        ][:, None]
        flux = lam_a_e * kap_e * np.einsum(
            "eqd,ed->eq", gp_e, space.be_normal[edges]
        )
        b += spatial.boundary_advective_load(space, edges, flux)
    dofs, vals = spatial._collect_dirichlet(space, bc.s_dirichlet, t1)
    A, b = spatial.apply_dirichlet(A, b, dofs, vals)
    s1, _ = linalg.solve(A, b)
    _check_fields(p1, s1)

    new_state = StepperState(t=t1, step=state.step + 1, s_curr=s1,
                             s_prev=state.s_curr, p_hist=[(t1, p1)])
    report = StepReport(new_state.step, t1, 1, True, [], [],
                        wall_time=time.perf_counter() - t0)
    return new_state, report, p1


def bootstrap(problem, cfg):
    """First step: one midpoint step with TOL/100 from the initial fields.

    Populates the saturation pair and the theta-point pressure history; the
    initial pressure enters the history as the older extrapolation node.
    """
    t0 = time.perf_counter()
    tau = cfg.tau
    t_half = 0.5 * tau
    p_th, s_th, rep = be_subiterate(
        problem, problem.p0.copy(), problem.s0.copy(), problem.s0,
        0.5 * tau, t_half, 0.01 * cfg.tol, cfg.max_iters
    )
    s1 = forward_extrapolate(s_th, problem.s0, 0.5)
    _check_fields(p_th, s1)
    state = StepperState(
        t=tau, step=1, s_curr=s1, s_prev=problem.s0,
        p_hist=[(0.0, problem.p0), (t_half, p_th)],
    )
    report = StepReport(1, tau, rep.iterations, rep.converged,
                        rep.p_increments, rep.s_increments, bootstrap=True,
                        wall_time=time.perf_counter() - t0)
    return state, report, (t_half, p_th)


def _recover_pressure(problem, s_new, t):
    """Diagnostic whole-level pressure: elliptic solve with frozen s_new."""
    A, b = spatial.assemble_pressure(problem.space, problem.model, s_new,
                                     problem.source_q, problem.bc, t)
    p, _ = linalg.solve(A, b)
    return p


def run_simulation(problem, cfg, recover_pressure=True, step_callback=None):
    """March the scheme to ``t_final`` and collect fields and diagnostics.

    Returns a :class:`RunResult`; numerical failures are classified into the
    outcome field (``blew_up`` covers non-finite fields, saturation bound
    violations and linear-solver breakdowns; ``no_convergence`` covers
    subiteration stalls) instead of propagating.
    """
    tau, t_final = cfg.tau, problem.t_final
    n_steps = int(round(t_final / tau))
    if abs(n_steps * tau - t_final) > 1e-9 * max(1.0, t_final) or n_steps < 1:
        raise ValueError("t_final must be a positive whole multiple of tau")

    times = [0.0]
    sats = [problem.s0]
    prs = [problem.p0]
    theta_ts, theta_ps, step_thetas, reports = [], [], [], []
    outcome, cause = "completed", None

    def record(report, s_new, p_whole, theta_point, theta_used):
        times.append(report.t_end)
        sats.append(s_new)
        prs.append(p_whole)
        theta_ts.append(theta_point[0] if theta_point else None)
        theta_ps.append(theta_point[1] if theta_point else None)
        step_thetas.append(theta_used)
        reports.append(report)
        if step_callback is not None:
            step_callback(report)

    try:
        if cfg.kind == "tl1":
            state = StepperState(t=0.0, step=0, s_curr=problem.s0)
        else:
            state, report, theta_point = bootstrap(problem, cfg)
            p_whole = _recover_pressure(problem, state.s_curr, state.t) \
                if recover_pressure else None
            record(report, state.s_curr, p_whole, theta_point, 0.5)

        while state.step < n_steps:
            if cfg.kind == "theta":
                state, report, theta_point = step_theta(state, cfg, problem)
                if cfg.theta == 1.0:
                    p_whole = theta_point[1]
                elif recover_pressure:
                    p_whole = _recover_pressure(problem, state.s_curr, state.t)
                else:
                    p_whole = None
                record(report, state.s_curr, p_whole, theta_point, cfg.theta)
            elif cfg.kind == "tl1":
                state, report, p1 = step_tl1(state, cfg, problem)
                record(report, state.s_curr, p1, None, None)
            else:
                state, report, p1 = step_tl2(state, cfg, problem)
                record(report, state.s_curr, p1, None, None)
    except (BlowUpError, linalg.LinearSolveError) as err:
        outcome, cause = "blew_up", str(err)
    except NonConvergenceError as err:
        outcome, cause = "no_convergence", str(err)

    ledger = None
    if problem.model.energy is not None and len(sats) > 1:
        ledger = diagnostics.build_energy_ledger(
            problem, tau, times, sats, theta_ts, theta_ps, step_thetas
        )
    return RunResult(times, sats, prs, theta_ts, theta_ps, step_thetas,
                     reports, outcome, cause, ledger)
