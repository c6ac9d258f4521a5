"""AC power flow, feasibility checking, and optimality-gap arithmetic.

The Newton-Raphson solver here produces the AC-feasible operating points
used both as embedding witnesses for the relaxations and as lower bounds for
gap reporting.  Branch flows are always recomputed from bus voltages, never
cached, so a point can't go stale.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from opfrelax.netmodel import Network, NetworkError, branch_constants

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    """Newton iteration failed to converge; carries the final mismatch."""

    def __init__(self, message: str, iterations: int, mismatch: float):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass
class AcPoint:
    """Complex bus voltages plus generator dispatch (all per-unit, radians)."""

    v: dict[int, float]
    theta: dict[int, float]
    p_g: list[float]
    q_g: list[float]

    def to_json(self, indent: int | None = 2) -> str:
        doc = {
            "bus": {str(k): {"vm": self.v[k], "va": self.theta[k]} for k in self.v},
            "gen": [{"p": p, "q": q} for p, q in zip(self.p_g, self.q_g)],
        }
        return json.dumps(doc, indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "AcPoint":
        doc = json.loads(text)
        v = {int(k): rec["vm"] for k, rec in doc["bus"].items()}
        th = {int(k): rec["va"] for k, rec in doc["bus"].items()}
        return cls(
            v=v,
            theta=th,
            p_g=[g["p"] for g in doc["gen"]],
            q_g=[g["q"] for g in doc["gen"]],
        )


@dataclass
class BranchFlow:
    """Derived per-branch quantities of an AC point."""

    s_fr: complex
    s_to: complex
    current_sq: float  # squared magnitude of the series current


def _ybus(net: Network) -> tuple[sp.csr_matrix, dict[int, int]]:
    """Complex bus admittance matrix and bus-id -> row index map."""
    idx = {b.id: i for i, b in enumerate(net.buses)}
    n = len(net.buses)
    rows, cols, vals = [], [], []
    for br in net.branches:
        k = branch_constants(br)
        y = complex(k.g, k.b)
        tap = complex(k.tr, k.ti)
        i, j = idx[br.from_bus], idx[br.to_bus]
        yff = (y + complex(k.g_fr, k.b_fr)) / k.tm2
        ytt = y + complex(k.g_to, k.b_to)
        yft = -y / tap.conjugate()
        ytf = -y / tap
        rows += [i, i, j, j]
        cols += [i, j, i, j]
        vals += [yff, yft, ytf, ytt]
    for b in net.buses:
        rows.append(idx[b.id])
        cols.append(idx[b.id])
        vals.append(complex(b.g_shunt, b.b_shunt))
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex).tocsr()
    return Y, idx


def branch_flows(net: Network, pt: AcPoint) -> list[BranchFlow]:
    """End flows and squared series current of every branch at an AC point."""
    out = []
    for br in net.branches:
        k = branch_constants(br)
        y = complex(k.g, k.b)
        tap = complex(k.tr, k.ti)
        vi = pt.v[br.from_bus] * np.exp(1j * pt.theta[br.from_bus])
        vj = pt.v[br.to_bus] * np.exp(1j * pt.theta[br.to_bus])
        yff = (y + complex(k.g_fr, k.b_fr)) / k.tm2
        ytt = y + complex(k.g_to, k.b_to)
        yft = -y / tap.conjugate()
        ytf = -y / tap
        s_fr = vi * (yff * vi + yft * vj).conjugate()
        s_to = vj * (ytf * vi + ytt * vj).conjugate()
        i_series = y * (vi / tap - vj)
        out.append(
            BranchFlow(s_fr=complex(s_fr), s_to=complex(s_to), current_sq=float(abs(i_series) ** 2))
        )
    return out


@dataclass
class Dispatch:
    """Power-flow targets: per-generator active power, per-bus voltage setpoints."""

    p: list[float]
    v_set: dict[int, float]

    @classmethod
    def from_network(cls, net: Network) -> "Dispatch":
        v_set: dict[int, float] = {}
        for g in net.generators:
            v_set.setdefault(g.bus, g.vg_set)
        return cls(p=[g.pg_set for g in net.generators], v_set=v_set)


def newton_power_flow(
    net: Network,
    dispatch: Dispatch | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> AcPoint:
    """Solve the AC power-balance equations by Newton-Raphson in polar form.

    PV and slack buses hold their voltage setpoints; the slack bus absorbs the
    active/reactive residual and PV buses the reactive residual, distributed
    over co-located generators proportionally to their dispatch ranges.
    Starts flat (v=1, theta=0) and raises :class:`PowerFlowError` instead of
    returning an unconverged point.
    """
    if dispatch is None:
        dispatch = Dispatch.from_network(net)
    slack = net.slack_buses()
    if len(slack) != 1:
        raise NetworkError(f"power flow needs exactly one slack bus, found {len(slack)}")

    Y, idx = _ybus(net)
    n = len(net.buses)
    gens_at = net.gens_at()

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for b in net.buses:
        p_spec[idx[b.id]] -= b.p_load
        q_spec[idx[b.id]] -= b.q_load
    bus_types = {b.id: b.bus_type for b in net.buses}
    for k, g in enumerate(net.generators):
        p_spec[idx[g.bus]] += dispatch.p[k]
        if bus_types[g.bus] == "PQ":
            q_spec[idx[g.bus]] += g.qg_set

    islack = idx[slack[0].id]
    pv = [idx[b.id] for b in net.buses if b.bus_type == "PV"]
    pq = [idx[b.id] for b in net.buses if b.bus_type in ("PQ", "isolated")]
    pvpq = pv + pq

    vm = np.ones(n)
    va = np.zeros(n)
    for bid, vset in dispatch.v_set.items():
        if bus_types[bid] in ("PV", "slack"):
            vm[idx[bid]] = vset

    mism = math.inf
    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        Ibus = Y @ V
        S = V * np.conj(Ibus)
        fp = S.real - p_spec
        fq = S.imag - q_spec
        F = np.concatenate([fp[pvpq], fq[pq]])
        mism = float(np.max(np.abs(F))) if F.size else 0.0
        if mism <= tol:
            break
        if it == max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(mismatch {mism:.3e})",
                iterations=it,
                mismatch=mism,
            )
        diagV = sp.diags(V)
        diagI = sp.diags(Ibus)
        diagVnorm = sp.diags(V / np.abs(V))
        dS_dVa = 1j * diagV @ (diagI - Y @ diagV).conjugate()
        dS_dVm = diagV @ (Y @ diagVnorm).conjugate() + diagI.conjugate() @ diagVnorm
        J11 = dS_dVa[np.ix_(pvpq, pvpq)].real
        J12 = dS_dVm[np.ix_(pvpq, pq)].real
        J21 = dS_dVa[np.ix_(pq, pvpq)].imag
        J22 = dS_dVm[np.ix_(pq, pq)].imag
        J = sp.bmat([[J11, J12], [J21, J22]], format="csc")
        dx = spla.spsolve(J, -F)
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq) :]

    va -= va[islack]  # reference angle

    # recover generator outputs from the converged injections
    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    p_g = list(dispatch.p)
    q_g = [0.0] * len(net.generators)
    for b in net.buses:
        ks = gens_at[b.id]
        if not ks:
            continue
        i = idx[b.id]
        if b.bus_type in ("PV", "slack"):
            q_need = S[i].imag + b.q_load
            _distribute(q_need, ks, net, q_g, axis="q")
        else:
            for k in ks:
                q_g[k] = net.generators[k].qg_set
        if b.bus_type == "slack":
            p_need = S[i].real + b.p_load
            _distribute(p_need, ks, net, p_g, axis="p")

    return AcPoint(
        v={b.id: float(vm[idx[b.id]]) for b in net.buses},
        theta={b.id: float(va[idx[b.id]]) for b in net.buses},
        p_g=p_g,
        q_g=q_g,
    )


def _distribute(total: float, ks: list[int], net: Network, out: list[float], axis: str) -> None:
    """Split a bus-level requirement over co-located generators.

    Proportional to each unit's dispatch range, so the split stays inside
    individual limits whenever the total is achievable; equal split if all
    ranges are zero.
    """
    los = [getattr(net.generators[k], f"{axis}_lo") for k in ks]
    his = [getattr(net.generators[k], f"{axis}_hi") for k in ks]
    ranges = [hi - lo for lo, hi in zip(los, his)]
    tot_range = sum(ranges)
    excess = total - sum(los)
    for k, lo, rng_k in zip(ks, los, ranges):
        if tot_range > 0:
            out[k] = lo + excess * rng_k / tot_range
        else:
            out[k] = lo + excess / len(ks)


@dataclass
class FeasibilityReport:
    """Worst violation per constraint family, plus the verdict at a tolerance."""

    violations: dict[str, float]
    tol: float
    feasible: bool

    @property
    def worst(self) -> float:
        return max(self.violations.values()) if self.violations else 0.0

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(
            {"feasible": self.feasible, "tol": self.tol, "violations": self.violations},
            indent=indent,
        )


def check_feasible(net: Network, pt: AcPoint, tol: float = 1e-6) -> FeasibilityReport:
    """Evaluate every bound and balance equation of an AC point.

    Never raises on a bad point; the report carries the worst violation of
    each family (voltage, angle-difference, generator, thermal, balance).
    """
    viol = {"voltage": 0.0, "angle": 0.0, "generator": 0.0, "thermal": 0.0, "balance": 0.0}
    for b in net.buses:
        viol["voltage"] = max(viol["voltage"], pt.v[b.id] - b.v_hi, b.v_lo - pt.v[b.id])
    flows = branch_flows(net, pt)
    for br, f in zip(net.branches, flows):
        td = pt.theta[br.from_bus] - pt.theta[br.to_bus]
        viol["angle"] = max(viol["angle"], td - br.ang_hi, br.ang_lo - td)
        if br.s_max is not None:
            viol["thermal"] = max(
                viol["thermal"], abs(f.s_fr) - br.s_max, abs(f.s_to) - br.s_max
            )
    for k, g in enumerate(net.generators):
        viol["generator"] = max(
            viol["generator"],
            pt.p_g[k] - g.p_hi,
            g.p_lo - pt.p_g[k],
            pt.q_g[k] - g.q_hi,
            g.q_lo - pt.q_g[k],
        )
    Y, idx = _ybus(net)
    n = len(net.buses)
    V = np.zeros(n, dtype=complex)
    for b in net.buses:
        V[idx[b.id]] = pt.v[b.id] * np.exp(1j * pt.theta[b.id])
    S = V * np.conj(Y @ V)
    inj = np.zeros(n, dtype=complex)
    for b in net.buses:
        inj[idx[b.id]] -= complex(b.p_load, b.q_load)
    for k, g in enumerate(net.generators):
        inj[idx[g.bus]] += complex(pt.p_g[k], pt.q_g[k])
    resid = inj - S
    if n:
        viol["balance"] = float(
            max(np.max(np.abs(resid.real)), np.max(np.abs(resid.imag)))
        )
    viol = {k: float(max(0.0, v)) for k, v in viol.items()}
    feasible = all(v <= tol for v in viol.values())
    return FeasibilityReport(violations=viol, tol=tol, feasible=feasible)


def gap(ub: float, lb: float) -> float:
    """Optimality gap in percent, 100 * (ub - lb) / lb, for maximization bounds."""
    if lb <= 0.0:
        raise ValueError(f"lower bound must be positive for gap reporting (got {lb})")
    return 100.0 * (ub - lb) / lb
