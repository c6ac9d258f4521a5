"""Convex relaxations of AC optimal power flow with lifted nonlinear cuts.

Pipeline: parse a Matpower case into a per-unit :class:`~opfrelax.netmodel.Network`,
optionally tighten voltage/angle bounds with OBBT, build one of three
relaxations (SOC, Convex DistFlow, Network Flow) as a conic program,
strengthen it with lifted nonlinear cuts, solve with the bundled
interior-point method, and report the optimality gap against an
AC-feasible lower bound.
"""

from opfrelax.netmodel import Network, parse_matpower, parse_matpower_file
from opfrelax.conic import ConicProgram, StandardForm
from opfrelax.ipm import SolveResult, solve
from opfrelax.relax import build_soc, build_cdf, build_nf
from opfrelax.lnc import make_lnc_wspace, project_nf, project_cdf
from opfrelax.obbt import BoundsSet, tighten
from opfrelax.acval import AcPoint, newton_power_flow, check_feasible, gap

__version__ = "0.1.0"

__all__ = [
    "Network",
    "parse_matpower",
    "parse_matpower_file",
    "ConicProgram",
    "StandardForm",
    "SolveResult",
    "solve",
    "build_soc",
    "build_cdf",
    "build_nf",
    "make_lnc_wspace",
    "project_nf",
    "project_cdf",
    "BoundsSet",
    "tighten",
    "AcPoint",
    "newton_power_flow",
    "check_feasible",
    "gap",
]
