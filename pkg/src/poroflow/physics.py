"""Fluid models, mobilities, capillary laws and mixing-energy algebra.

Two incompressible phases (liquid "l" and aqueous "a") fill the pore space,
``s_l + s_a = 1``.  A fluid model bundles relative permeabilities, viscosities,
porosity, a capillary pressure law ``p_c(s_a)`` and, when the capillary law
derives from a Gibbs mixing energy, the energy parameters.  All saturation
functions clamp their argument to ``[CLAMP_EPS, 1 - CLAMP_EPS]`` before
logarithms or fractional powers are taken; dof vectors themselves are never
clamped.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "CLAMP_EPS",
    "EnergyParams",
    "LogCapillary",
    "BrooksCoreyCapillary",
    "FluidModel",
    "clamp_saturation",
    "mobility",
    "mobility_derivative",
    "capillary_pressure",
    "free_energy_density",
    "chemical_potential",
    "chemical_potential_derivative",
    "chemical_potential_midpoint",
    "chemical_potential_midpoint_partials",
    "mms_fluid_model",
    "q5spot_fluid_model",
    "validate_model",
]

# Saturation clamp for log/power evaluation of model functions.
CLAMP_EPS = 1e-10

# Increment below which two-point formulas fall back to midpoint evaluation.
DEGENERATE_DS = 1e-8

# Wider fallback for the divided-difference partials: their cancellation
# error grows like eps/ds**2, so the crossover to the limit formula sits
# near eps**(1/3), not near eps.
PARTIALS_DEGENERATE_DS = 1e-5


def clamp_saturation(s):
    """Clamp saturations into the open unit interval for model evaluation."""
    return np.clip(s, CLAMP_EPS, 1.0 - CLAMP_EPS)


@dataclass(frozen=True)
class EnergyParams:
    """Gibbs mixing-energy coefficients.

    ``F(s) = gamma_a*s*(ln s - 1) + gamma_l*(1-s)*(ln(1-s) - 1)
    + gamma_al*s*(1-s)`` with ``s`` the aqueous saturation.  The chemical
    potential ``dF/ds`` equals minus the capillary pressure for a consistent
    pairing of energy and capillary law.
    """

    gamma_a: float
    gamma_l: float = 0.0
    gamma_al: float = 0.0


class LogCapillary:
    """Logarithmic capillary law ``p_c(s) = coef * ln(s)`` with ``coef < 0``.

    Pairs exactly with ``EnergyParams(gamma_a=-coef)`` when the liquid and
    interaction coefficients vanish.
    """

    def __init__(self, coef):
        if coef >= 0.0:
            raise ValueError("log capillary law needs a negative coefficient")
        self.coef = float(coef)

    def value(self, s):
        return self.coef * np.log(clamp_saturation(s))

    def derivative(self, s):
        return self.coef / clamp_saturation(s)

    def second_derivative(self, s):
        return -self.coef / clamp_saturation(s) ** 2


class BrooksCoreyCapillary:
    """Brooks-Corey capillary law ``p_c(s) = entry_pressure * s**(-exponent)``."""

    def __init__(self, entry_pressure, exponent):
        if entry_pressure <= 0.0 or exponent <= 0.0:
            raise ValueError("entry pressure and exponent must be positive")
        self.entry_pressure = float(entry_pressure)
        self.exponent = float(exponent)

    def value(self, s):
        return self.entry_pressure * clamp_saturation(s) ** (-self.exponent)

    def derivative(self, s):
        e = self.exponent
        return -e * self.entry_pressure * clamp_saturation(s) ** (-e - 1.0)

    def second_derivative(self, s):
        e = self.exponent
        return e * (e + 1.0) * self.entry_pressure * clamp_saturation(s) ** (-e - 2.0)


@dataclass(frozen=True)
class FluidModel:
    """Rock/fluid description for the two-phase system.

    ``kr_l``/``kr_a`` are relative permeability callables of the aqueous
    saturation; ``dkr_l``/``dkr_a`` their derivatives (used by manufactured
    sources and validation).  ``energy`` is None when the capillary law has no
    consistent Gibbs energy, which disables the energy diagnostics.
    """

    porosity: float
    mu_l: float
    mu_a: float
    kr_l: Callable
    kr_a: Callable
    dkr_l: Callable
    dkr_a: Callable
    capillary: object
    energy: EnergyParams | None = None


def mobility(model, phase, s):
    """Phase mobility ``kr_j(s)/mu_j`` for phase ``"l"``, ``"a"`` or ``"total"``."""
    sc = clamp_saturation(s)
    if phase == "l":
        return model.kr_l(sc) / model.mu_l
    if phase == "a":
        return model.kr_a(sc) / model.mu_a
    if phase == "total":
        return model.kr_l(sc) / model.mu_l + model.kr_a(sc) / model.mu_a
    raise ValueError(f"unknown phase {phase!r}")


def mobility_derivative(model, phase, s):
    """d(mobility)/ds, clamped consistently with :func:`mobility`."""
    sc = clamp_saturation(s)
    if phase == "l":
        return model.dkr_l(sc) / model.mu_l
    if phase == "a":
        return model.dkr_a(sc) / model.mu_a
    if phase == "total":
        return model.dkr_l(sc) / model.mu_l + model.dkr_a(sc) / model.mu_a
    raise ValueError(f"unknown phase {phase!r}")


def capillary_pressure(model, s):
    return model.capillary.value(s)


def free_energy_density(params, s):
    """Gibbs mixing free energy per unit pore volume."""
    sc = clamp_saturation(s)
    u = 1.0 - sc
    out = params.gamma_a * sc * (np.log(sc) - 1.0)
    if params.gamma_l != 0.0:
        out = out + params.gamma_l * u * (np.log(u) - 1.0)
    if params.gamma_al != 0.0:
        out = out + params.gamma_al * sc * u
    return out


def chemical_potential(params, s):
    """Pointwise chemical potential ``dF/ds``."""
    sc = clamp_saturation(s)
    out = params.gamma_a * np.log(sc)
    if params.gamma_l != 0.0:
        out = out - params.gamma_l * np.log(1.0 - sc)
    if params.gamma_al != 0.0:
        out = out + params.gamma_al * (1.0 - 2.0 * sc)
    return out


def chemical_potential_derivative(params, s):
    """Second derivative of the free energy, ``d^2F/ds^2``."""
    sc = clamp_saturation(s)
    out = params.gamma_a / sc
    if params.gamma_l != 0.0:
        out = out + params.gamma_l / (1.0 - sc)
    if params.gamma_al != 0.0:
        out = out - 2.0 * params.gamma_al
    return out


def chemical_potential_midpoint(params, s_old, s_new):
    """Two-point discrete-gradient chemical potential.

    Satisfies the exact increment identity
    ``F(s_new) - F(s_old) = value * (s_new - s_old)`` to round-off, is
    symmetric in its arguments, and reduces to
    ``chemical_potential((s_old+s_new)/2)`` for increments below 1e-8.
    """
    s0 = clamp_saturation(np.asarray(s_old, dtype=float))
    s1 = clamp_saturation(np.asarray(s_new, dtype=float))
    ds = s1 - s0
    mid = 0.5 * (s0 + s1)
    small = np.abs(ds) < DEGENERATE_DS
    ds_safe = np.where(small, 1.0, ds)

    log0, log1 = np.log(s0), np.log(s1)
    out = params.gamma_a * (
        0.5 * (log1 + log0) + mid * (log1 - log0) / ds_safe - 1.0
    )
    if params.gamma_l != 0.0:
        u0, u1 = 1.0 - s0, 1.0 - s1
        lu0, lu1 = np.log(u0), np.log(u1)
        out = out + params.gamma_l * (
            -0.5 * (lu1 + lu0) + (1.0 - mid) * (lu1 - lu0) / ds_safe + 1.0
        )
    if params.gamma_al != 0.0:
        out = out + params.gamma_al * (1.0 - 2.0 * mid)

    result = np.where(small, chemical_potential(params, mid), out)
    return result if result.ndim else float(result)


def chemical_potential_midpoint_partials(params, s_old, s_new):
    """Partials of :func:`chemical_potential_midpoint` w.r.t. its two states.

    Needed to evaluate gradients of the discrete-gradient potential through
    the chain rule.  Uses the divided-difference identities
    ``d(nu)/ds_new = (nu_cont(s_new) - nu)/(s_new - s_old)`` and the mirror
    formula for ``s_old``; both tend to ``nu_cont'(mid)/2`` for vanishing
    increments.
    """
    s0 = clamp_saturation(np.asarray(s_old, dtype=float))
    s1 = clamp_saturation(np.asarray(s_new, dtype=float))
    ds = s1 - s0
    mid = 0.5 * (s0 + s1)
    small = np.abs(ds) < PARTIALS_DEGENERATE_DS
    ds_safe = np.where(small, 1.0, ds)

    nu = chemical_potential_midpoint(params, s0, s1)
    d_new = (chemical_potential(params, s1) - nu) / ds_safe
    d_old = (nu - chemical_potential(params, s0)) / ds_safe
    limit = 0.5 * chemical_potential_derivative(params, mid)
    d_old = np.where(small, limit, d_old)
    d_new = np.where(small, limit, d_new)
    if d_new.ndim:
        return d_old, d_new
    return float(d_old), float(d_new)


def _mms_kr_l(s):
    sl = 1.0 - s
    return sl * (sl + s) * (1.0 - s)


def _mms_dkr_l(s):
    return -2.0 * (1.0 - s)


def mms_fluid_model():
    """Quadratic-permeability model with logarithmic capillary law.

    The capillary coefficient ``6.3/ln(0.01)`` pairs with the mixing energy
    ``gamma_a = -6.3/ln(0.01)`` (liquid and interaction coefficients zero), so
    the energy diagnostics apply.
    """
    coef = 6.3 / np.log(0.01)
    return FluidModel(
        porosity=0.2,
        mu_l=0.75,
        mu_a=0.5,
        kr_l=_mms_kr_l,
        kr_a=lambda s: s**2,
        dkr_l=_mms_dkr_l,
        dkr_a=lambda s: 2.0 * s,
        capillary=LogCapillary(coef),
        energy=EnergyParams(gamma_a=-coef),
    )


def _bc_kr_l(s):
    return (1.0 - s) ** 2 * (1.0 - s ** (5.0 / 3.0))


def _bc_dkr_l(s):
    return -2.0 * (1.0 - s) * (1.0 - s ** (5.0 / 3.0)) - (5.0 / 3.0) * (
        1.0 - s
    ) ** 2 * s ** (2.0 / 3.0)


def q5spot_fluid_model():
    """Brooks-Corey model for the quarter-five-spot scenario.

    No consistent Gibbs energy exists for this capillary law, so ``energy`` is
    None and energy diagnostics are disabled.
    """
    return FluidModel(
        porosity=0.2,
        mu_l=2e-3,
        mu_a=5e-4,
        kr_l=_bc_kr_l,
        kr_a=lambda s: s ** (11.0 / 3.0),
        dkr_l=_bc_dkr_l,
        dkr_a=lambda s: (11.0 / 3.0) * s ** (8.0 / 3.0),
        capillary=BrooksCoreyCapillary(5e3, 1.0 / 3.0),
        energy=None,
    )


@dataclass
class ModelValidationReport:
    """Sampled bounds and structural flags for a fluid model."""

    s_min: float
    s_max: float
    mobility_l_range: tuple
    mobility_a_range: tuple
    mobility_total_range: tuple
    capillary_slope_range: tuple
    lipschitz_mobility_l: float
    lipschitz_mobility_a: float
    violations: list

    @property
    def ok(self):
        return not self.violations

    def describe(self):
        lines = [
            f"saturation sample range: [{self.s_min:g}, {self.s_max:g}]",
            f"liquid mobility range:   [{self.mobility_l_range[0]:g}, "
            f"{self.mobility_l_range[1]:g}]",
            f"aqueous mobility range:  [{self.mobility_a_range[0]:g}, "
            f"{self.mobility_a_range[1]:g}]",
            f"total mobility range:    [{self.mobility_total_range[0]:g}, "
            f"{self.mobility_total_range[1]:g}]",
            f"capillary slope range:   [{self.capillary_slope_range[0]:g}, "
            f"{self.capillary_slope_range[1]:g}]",
            f"mobility Lipschitz bounds: l {self.lipschitz_mobility_l:g}, "
            f"a {self.lipschitz_mobility_a:g}",
        ]
        if self.violations:
            lines.append("violations: " + "; ".join(self.violations))
        else:
            lines.append("violations: none")
        return "\n".join(lines)


def validate_model(model, samples=None):
    """Check structural model assumptions on a saturation sample.

    Verifies positive total mobility, nonnegative phase mobilities, a strictly
    decreasing capillary law and finite Lipschitz bounds over the sample.
    Violations are collected, not raised; degenerate phase mobilities at the
    saturation endpoints are expected for realistic laws and reported through
    the ranges.  Without an explicit sample, a uniform 1000-point sweep of
    (0, 1) is used.
    """
    if samples is None:
        samples = np.linspace(0.001, 0.999, 1000)
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size < 2 or s.min() <= 0.0 or s.max() >= 1.0:
        raise ValueError("need at least two samples strictly inside (0, 1)")

    lam_l = mobility(model, "l", s)
    lam_a = mobility(model, "a", s)
    lam_t = lam_l + lam_a
    slope = model.capillary.derivative(s)

    violations = []
    if np.any(lam_l < 0.0) or np.any(lam_a < 0.0):
        violations.append("negative phase mobility")
    if np.any(lam_t <= 0.0):
        violations.append("nonpositive total mobility")
    if np.any(slope >= 0.0):
        violations.append("capillary law not strictly decreasing")
    if not (
        np.all(np.isfinite(lam_l))
        and np.all(np.isfinite(lam_a))
        and np.all(np.isfinite(slope))
    ):
        violations.append("non-finite model value in sample range")

    ds = np.diff(s)
    lip_l = float(np.max(np.abs(np.diff(lam_l)) / ds))
    lip_a = float(np.max(np.abs(np.diff(lam_a)) / ds))

    return ModelValidationReport(
        s_min=float(s.min()),
        s_max=float(s.max()),
        mobility_l_range=(float(lam_l.min()), float(lam_l.max())),
        mobility_a_range=(float(lam_a.min()), float(lam_a.max())),
        mobility_total_range=(float(lam_t.min()), float(lam_t.max())),
        capillary_slope_range=(float(slope.min()), float(slope.max())),
        lipschitz_mobility_l=lip_l,
        lipschitz_mobility_a=lip_a,
        violations=violations,
    )
