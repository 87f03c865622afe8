"""Manufactured exact solution on the unit square for verification runs.

The exact fields

``p(x,y,t) = e^(t-T) (2 + x y^2 + x^2 sin y)``
``s(x,y,t) = e^(t-T) (2 + x^2 y^2 + cos x) / 8``

stay inside physical bounds on [0,1]^2 for every T > 0.  Source terms are the
closed-form strong residuals of the two-phase system under the quadratic
relative-permeability model with logarithmic capillary law and unit
permeability; the divergence terms are expanded by the chain rule
``div(f(s) grad w) = f(s) lap(w) + f'(s) grad(s).grad(w)`` using the model's
analytic derivatives.  All callables are vectorized and take ``(x, y, t)``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import physics
from .physics import mms_fluid_model

__all__ = ["ManufacturedCase"]


@dataclass
class ManufacturedCase:
    """Exact solution, derivatives and matching sources for horizon ``t_final``."""

    t_final: float
    model: physics.FluidModel = field(default_factory=mms_fluid_model)

    def _amp(self, t):
        return np.exp(np.asarray(t, dtype=float) - self.t_final)

    # -- exact fields and derivatives ------------------------------------

    def exact_p(self, x, y, t):
        return self._amp(t) * (2.0 + x * y**2 + x**2 * np.sin(y))

    def exact_s(self, x, y, t):
        return self._amp(t) * (2.0 + x**2 * y**2 + np.cos(x)) / 8.0

    def grad_p(self, x, y, t):
        a = self._amp(t)
        return (
            a * (y**2 + 2.0 * x * np.sin(y)),
            a * (2.0 * x * y + x**2 * np.cos(y)),
        )

    def grad_s(self, x, y, t):
        a = self._amp(t) / 8.0
        return (
            a * (2.0 * x * y**2 - np.sin(x)),
            a * (2.0 * x**2 * y),
        )

    def lap_p(self, x, y, t):
        return self._amp(t) * (2.0 * np.sin(y) + 2.0 * x - x**2 * np.sin(y))

    def lap_s(self, x, y, t):
        return self._amp(t) * (2.0 * y**2 - np.cos(x) + 2.0 * x**2) / 8.0

    def dt_s(self, x, y, t):
        return self.exact_s(x, y, t)

    # -- sources -----------------------------------------------------------

    def _divergences(self, x, y, t):
        """Chain-rule expansions of the two divergence operators.

        Returns (div(lambda grad p), div(lambda_a grad p),
        div(lambda_a p_c' grad s)) with unit permeability.
        """
        m = self.model
        s = self.exact_s(x, y, t)
        px, py = self.grad_p(x, y, t)
        sx, sy = self.grad_s(x, y, t)
        lp = self.lap_p(x, y, t)
        ls = self.lap_s(x, y, t)
        gs_gp = sx * px + sy * py
        gs_gs = sx * sx + sy * sy

        lam_t = physics.mobility(m, "total", s)
        dlam_t = physics.mobility_derivative(m, "total", s)
        lam_a = physics.mobility(m, "a", s)
        dlam_a = physics.mobility_derivative(m, "a", s)
        pc1 = m.capillary.derivative(s)
        pc2 = m.capillary.second_derivative(s)

        div_t = lam_t * lp + dlam_t * gs_gp
        div_a = lam_a * lp + dlam_a * gs_gp
        cap = lam_a * pc1
        dcap = dlam_a * pc1 + lam_a * pc2
        div_cap = cap * ls + dcap * gs_gs
        return div_t, div_a, div_cap

    def source_q(self, x, y, t):
        """Total source: ``-div(lambda grad p) + div(lambda_a grad p_c)``."""
        div_t, _, div_cap = self._divergences(x, y, t)
        return -div_t + div_cap

    def source_qa(self, x, y, t):
        """Aqueous source: ``phi dt(s) + div(lambda_a p_c' grad s) - div(lambda_a grad p)``."""
        _, div_a, div_cap = self._divergences(x, y, t)
        return self.model.porosity * self.dt_s(x, y, t) + div_cap - div_a

    # -- wiring helpers ----------------------------------------------------

    def boundary_conditions(self):
        from .spatial import BoundaryConditions

        return BoundaryConditions(
            p_dirichlet={"dirichlet": self.exact_p},
            s_dirichlet={"dirichlet": self.exact_s},
        )

    def exact_energy(self, space, t):
        """Quadrature energy of the exact saturation at time ``t``."""
        if self.model.energy is None:
            raise ValueError("model carries no mixing energy")
        s = self.exact_s(space.X[..., 0], space.X[..., 1], t)
        dens = physics.free_energy_density(self.model.energy, s)
        return float(np.sum(space.wdetJ * self.model.porosity * dens))
