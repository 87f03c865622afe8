"""Two-phase porous-media flow with partitioned theta time stepping.

Conforming Q1/Q2 finite elements on structured quadrilateral meshes, a
refactorized midpoint/backward-Euler scheme with decoupled subiterations, two
time-lagged baseline schemes, and discrete-gradient energy diagnostics.
"""

__version__ = "0.1.0"

from .mesh import build_q5spot_mesh, build_rect_mesh  # noqa: F401
from .physics import mms_fluid_model, q5spot_fluid_model  # noqa: F401
from .spatial import fe_space  # noqa: F401
from .timestepping import (  # noqa: F401
    ProblemSetup,
    SchemeConfig,
    run_simulation,
    scheme_from_name,
)
