"""Builders compiling a network into the SOC, CDF, or NF relaxation.

All three share bus power balance, generator/voltage bounds, and the
objective; they differ in how branch physics is representable:

* ``build_soc`` lifts each branch's voltage product into (wr, wi) with the
  product inequality wr^2 + wi^2 <= w_i * w_j as a rotated cone, plus
  angle-difference envelopes and apparent-power cones at both ends.
* ``build_cdf`` works on squared voltages, complex flows and the squared
  series current L, with the flow-current rotated cone and the series
  voltage-drop equality.
* ``build_nf`` keeps only linear structure: loss-direction inequalities on
  the series flows and an eight-sided outer polygon for thermal limits.

Optional lifted nonlinear cuts are added in each formulation's own variable
space.  The correctness anchor is :func:`embedding_point`: any AC-feasible
operating point induces an assignment satisfying every constraint of every
builder.
"""

from __future__ import annotations

import math

from opfrelax import lnc as lnc_mod
from opfrelax.acval import AcPoint, branch_flows
from opfrelax.conic import ConicProgram
from opfrelax.netmodel import Network, branch_constants

FORMULATIONS = ("soc", "cdf", "nf")

# tangent angles of the linear outer approximation of a thermal disk
_POLYGON_ANGLES = [k * math.pi / 4.0 for k in range(8)]


def _product_bounds(br, bus_i, bus_j):
    """Variable bounds for (wr, wi) implied by voltage and angle windows.

    cos/sin are monotone over angle windows inside (-pi/2, pi/2), so the
    extremes are attained at window corners; the wr lower bound stays
    positive, which the angle envelopes rely on.
    """
    lo, hi = br.ang_lo, br.ang_hi
    cmin = min(math.cos(lo), math.cos(hi))
    cmax = 1.0 if lo <= 0.0 <= hi else max(math.cos(lo), math.cos(hi))
    vv_lo = bus_i.v_lo * bus_j.v_lo
    vv_hi = bus_i.v_hi * bus_j.v_hi
    wr_lo = vv_lo * cmin
    wr_hi = vv_hi * cmax
    s_lo, s_hi = math.sin(lo), math.sin(hi)
    wi_hi = vv_hi * s_hi if s_hi >= 0.0 else vv_lo * s_hi
    wi_lo = vv_hi * s_lo if s_lo <= 0.0 else vv_lo * s_lo
    return wr_lo, wr_hi, wi_lo, wi_hi


def _add_common(prog: ConicProgram, net: Network) -> None:
    """Voltage-square, generator and flow variables shared by all builders."""
    for b in net.buses:
        prog.add_var(f"w[{b.id}]", lb=b.v_lo**2, ub=b.v_hi**2)
    for k, g in enumerate(net.generators):
        prog.add_var(f"pg[{k}]", lb=g.p_lo, ub=g.p_hi)
        prog.add_var(f"qg[{k}]", lb=g.q_lo, ub=g.q_hi)
    for e, br in enumerate(net.branches):
        for end in ("fr", "to"):
            prog.add_var(f"p_{end}[{e}]")
            prog.add_var(f"q_{end}[{e}]")
        if br.s_max is not None:
            prog.add_var(f"smax[{e}]", lb=br.s_max, ub=br.s_max)


def _add_balance(prog: ConicProgram, net: Network) -> None:
    gens_at = net.gens_at()
    fr_of: dict[int, list[int]] = {b.id: [] for b in net.buses}
    to_of: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for e, br in enumerate(net.branches):
        fr_of[br.from_bus].append(e)
        to_of[br.to_bus].append(e)
    for b in net.buses:
        prow = {f"pg[{k}]": 1.0 for k in gens_at[b.id]}
        qrow = {f"qg[{k}]": 1.0 for k in gens_at[b.id]}
        for e in fr_of[b.id]:
            prow[f"p_fr[{e}]"] = -1.0
            qrow[f"q_fr[{e}]"] = -1.0
        for e in to_of[b.id]:
            prow[f"p_to[{e}]"] = -1.0
            qrow[f"q_to[{e}]"] = -1.0
        if b.g_shunt != 0.0:
            prow[f"w[{b.id}]"] = prow.get(f"w[{b.id}]", 0.0) - b.g_shunt
        if b.b_shunt != 0.0:
            qrow[f"w[{b.id}]"] = qrow.get(f"w[{b.id}]", 0.0) + b.b_shunt
        prog.add_linear(prow, "==", b.p_load, name=f"balP[{b.id}]")
        prog.add_linear(qrow, "==", b.q_load, name=f"balQ[{b.id}]")


def _add_objective(prog: ConicProgram, net: Network, objective: str) -> None:
    if objective == "maxgen":
        prog.set_objective("max", {f"pg[{k}]": 1.0 for k in range(len(net.generators))})
        return
    if objective != "mincost":
        raise ValueError(f"unknown objective {objective!r}")
    coeffs: dict[str, float] = {}
    const = 0.0
    need_one = any(len(g.cost) == 3 and g.cost[2] != 0.0 for g in net.generators)
    if need_one:
        prog.add_var("one", lb=1.0, ub=1.0)
    for k, g in enumerate(net.generators):
        c = g.cost
        if len(c) > 3:
            raise ValueError(
                f"generator at bus {g.bus}: cost polynomials beyond quadratic are not supported"
            )
        if len(c) >= 1:
            const += c[0]
        if len(c) >= 2:
            coeffs[f"pg[{k}]"] = coeffs.get(f"pg[{k}]", 0.0) + c[1]
        if len(c) == 3 and c[2] != 0.0:
            if c[2] < 0.0:
                raise ValueError(f"generator at bus {g.bus}: concave quadratic cost")
            # epigraph tcost >= pg^2 via the rotated cone with the fixed unit
            prog.add_var(f"tcost[{k}]", lb=0.0)
            prog.add_rotated_cone([f"pg[{k}]"], "one", f"tcost[{k}]", name=f"cost[{k}]")
            coeffs[f"tcost[{k}]"] = c[2]
    prog.set_objective("min", coeffs, const=const)


def _add_thermal_cones(prog: ConicProgram, net: Network) -> None:
    for e, br in enumerate(net.branches):
        if br.s_max is None:
            continue
        prog.add_soc(f"smax[{e}]", [f"p_fr[{e}]", f"q_fr[{e}]"], name=f"thermal_fr[{e}]")
        prog.add_soc(f"smax[{e}]", [f"p_to[{e}]", f"q_to[{e}]"], name=f"thermal_to[{e}]")


def _cut_row(prog: ConicProgram, row: dict[str, float], rhs: float,
             e: int, i: int, j: int, kind: str) -> None:
    named = {}
    rename = {"w_i": f"w[{i}]", "w_j": f"w[{j}]", "p_fr": f"p_fr[{e}]",
              "q_fr": f"q_fr[{e}]", "L": f"L[{e}]"}
    for term, coef in row.items():
        named[rename[term]] = named.get(rename[term], 0.0) + coef
    prog.add_linear(named, ">=", rhs, name=f"lnc_{kind}[{e}]")


def build_soc(net: Network, objective: str = "maxgen", cuts: str = "none") -> ConicProgram:
    """Second-order cone relaxation in the lifted voltage-product space."""
    net.validate()
    prog = ConicProgram()
    _add_common(prog, net)
    buses = net.bus_by_id()
    for e, br in enumerate(net.branches):
        bi, bj = buses[br.from_bus], buses[br.to_bus]
        wr_lo, wr_hi, wi_lo, wi_hi = _product_bounds(br, bi, bj)
        prog.add_var(f"wr[{e}]", lb=wr_lo, ub=wr_hi)
        prog.add_var(f"wi[{e}]", lb=wi_lo, ub=wi_hi)
    _add_balance(prog, net)
    for e, br in enumerate(net.branches):
        k = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        A = (-k.g * k.tr + k.b * k.ti) / k.tm2
        B = (-k.b * k.tr - k.g * k.ti) / k.tm2
        C = (-k.g * k.tr - k.b * k.ti) / k.tm2
        D = (-k.b * k.tr + k.g * k.ti) / k.tm2
        wv, wrv, wiv = f"w[{i}]", f"wr[{e}]", f"wi[{e}]"
        wjv = f"w[{j}]"
        prog.add_linear(
            {f"p_fr[{e}]": 1.0, wv: -(k.g + k.g_fr) / k.tm2, wrv: -A, wiv: -B},
            "==", 0.0, name=f"flowPf[{e}]")
        prog.add_linear(
            {f"q_fr[{e}]": 1.0, wv: (k.b + k.b_fr) / k.tm2, wrv: B, wiv: -A},
            "==", 0.0, name=f"flowQf[{e}]")
        prog.add_linear(
            {f"p_to[{e}]": 1.0, wjv: -(k.g + k.g_to), wrv: -C, wiv: D},
            "==", 0.0, name=f"flowPt[{e}]")
        prog.add_linear(
            {f"q_to[{e}]": 1.0, wjv: (k.b + k.b_to), wrv: D, wiv: C},
            "==", 0.0, name=f"flowQt[{e}]")
        # voltage-product relaxation and angle-difference envelopes
        prog.add_rotated_cone([wrv, wiv], wv, wjv, name=f"vprod[{e}]")
        prog.add_linear({wiv: 1.0, wrv: -math.tan(br.ang_hi)}, "<=", 0.0, name=f"ang_hi[{e}]")
        prog.add_linear({wiv: 1.0, wrv: -math.tan(br.ang_lo)}, ">=", 0.0, name=f"ang_lo[{e}]")
    _add_thermal_cones(prog, net)
    if cuts == "lnc":
        for e, br in enumerate(net.branches):
            up, lo = lnc_mod.make_lnc_wspace(br, buses[br.from_bus], buses[br.to_bus])
            for cut, kind in ((up, "up"), (lo, "lo")):
                prog.add_linear(
                    {f"wr[{e}]": cut.a_wr, f"wi[{e}]": cut.a_wi,
                     f"w[{br.from_bus}]": cut.a_wf, f"w[{br.to_bus}]": cut.a_wt},
                    ">=", cut.rhs, name=f"lnc_{kind}[{e}]")
    elif cuts != "none":
        raise ValueError(f"unknown cuts setting {cuts!r}")
    _add_objective(prog, net, objective)
    return prog


def _series_names(prog: ConicProgram, net: Network, e: int, br) -> tuple[str, str, str]:
    """Names of the series flow and voltage variables for a CDF branch.

    When the defining equation is an identity (no from-side shunt term, unit
    tap) the underlying flow/voltage variable is used directly instead of an
    aliased copy, which keeps the program smaller without changing its
    feasible set.
    """
    k = branch_constants(br)
    i = br.from_bus
    if k.g_fr == 0.0:
        ps = f"p_fr[{e}]"
    else:
        ps = prog.add_var(f"ps[{e}]")
        prog.add_linear(
            {ps: 1.0, f"p_fr[{e}]": -1.0, f"w[{i}]": k.g_fr / k.tm2},
            "==", 0.0, name=f"linkPs[{e}]")
    if k.b_fr == 0.0:
        qs = f"q_fr[{e}]"
    else:
        qs = prog.add_var(f"qs[{e}]")
        prog.add_linear(
            {qs: 1.0, f"q_fr[{e}]": -1.0, f"w[{i}]": -k.b_fr / k.tm2},
            "==", 0.0, name=f"linkQs[{e}]")
    if k.tm2 == 1.0:
        ws = f"w[{i}]"
    else:
        bi = net.bus_by_id()[i]
        ws = prog.add_var(f"ws[{e}]", lb=bi.v_lo**2 / k.tm2, ub=bi.v_hi**2 / k.tm2)
        prog.add_linear({ws: 1.0, f"w[{i}]": -1.0 / k.tm2}, "==", 0.0, name=f"linkWs[{e}]")
    return ps, qs, ws


def build_cdf(net: Network, objective: str = "maxgen", cuts: str = "none") -> ConicProgram:
    """Convex DistFlow relaxation over squared voltages, flows and currents."""
    net.validate()
    prog = ConicProgram()
    _add_common(prog, net)
    buses = net.bus_by_id()
    for e, br in enumerate(net.branches):
        prog.add_var(f"L[{e}]", lb=0.0)
    _add_balance(prog, net)
    for e, br in enumerate(net.branches):
        k = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        ps, qs, ws = _series_names(prog, net, e, br)
        # voltage drop along the series impedance
        drop = {f"w[{j}]": 1.0, f"L[{e}]": -(br.r**2 + br.x**2)}
        drop[ws] = drop.get(ws, 0.0) - 1.0
        drop[ps] = drop.get(ps, 0.0) + 2.0 * br.r
        drop[qs] = drop.get(qs, 0.0) + 2.0 * br.x
        prog.add_linear(drop, "==", 0.0, name=f"drop[{e}]")
        # to-side flow: series flow minus losses, plus the to-side shunt
        rowp = {f"p_to[{e}]": 1.0, f"L[{e}]": -br.r}
        rowp[ps] = rowp.get(ps, 0.0) + 1.0
        rowp[f"w[{j}]"] = rowp.get(f"w[{j}]", 0.0) - k.g_to
        prog.add_linear(rowp, "==", 0.0, name=f"flowPt[{e}]")
        rowq = {f"q_to[{e}]": 1.0, f"L[{e}]": -br.x}
        rowq[qs] = rowq.get(qs, 0.0) + 1.0
        rowq[f"w[{j}]"] = rowq.get(f"w[{j}]", 0.0) + k.b_to
        prog.add_linear(rowq, "==", 0.0, name=f"flowQt[{e}]")
        # |S_series|^2 <= ws * L
        prog.add_rotated_cone([ps, qs], ws, f"L[{e}]", name=f"icone[{e}]")
        # angle envelopes on the projected voltage product
        wr_row, wi_row = _projected_product_rows(br, e, i, j, "cdf")
        _add_envelopes(prog, br, e, wr_row, wi_row)
    _add_thermal_cones(prog, net)
    if cuts == "lnc":
        for e, br in enumerate(net.branches):
            up, lo = lnc_mod.make_lnc_wspace(br, buses[br.from_bus], buses[br.to_bus])
            for cut, kind in ((up, "up"), (lo, "lo")):
                row, rhs = lnc_mod.project_cdf(br, cut)
                _cut_row(prog, row, rhs, e, br.from_bus, br.to_bus, kind)
    elif cuts != "none":
        raise ValueError(f"unknown cuts setting {cuts!r}")
    _add_objective(prog, net, objective)
    return prog


def build_nf(net: Network, objective: str = "maxgen", cuts: str = "none") -> ConicProgram:
    """Linear network-flow relaxation: balance, loss directions, polygons."""
    net.validate()
    prog = ConicProgram()
    _add_common(prog, net)
    buses = net.bus_by_id()
    _add_balance(prog, net)
    for e, br in enumerate(net.branches):
        k = branch_constants(br)
        i, j = br.from_bus, br.to_bus
        # dissipation direction of the series element (losses r*L, x*L >= 0)
        if br.r >= 0.0:
            prog.add_linear(
                {f"p_fr[{e}]": 1.0, f"p_to[{e}]": 1.0,
                 f"w[{i}]": -k.g_fr / k.tm2, f"w[{j}]": -k.g_to},
                ">=", 0.0, name=f"lossP[{e}]")
        if br.x >= 0.0:
            prog.add_linear(
                {f"q_fr[{e}]": 1.0, f"q_to[{e}]": 1.0,
                 f"w[{i}]": k.b_fr / k.tm2, f"w[{j}]": k.b_to},
                ">=", 0.0, name=f"lossQ[{e}]")
        if br.s_max is not None:
            for kk, ang in enumerate(_POLYGON_ANGLES):
                ca, sa = math.cos(ang), math.sin(ang)
                prog.add_linear({f"p_fr[{e}]": ca, f"q_fr[{e}]": sa}, "<=", br.s_max,
                                name=f"thermal_fr[{e}]#{kk}")
                prog.add_linear({f"p_to[{e}]": ca, f"q_to[{e}]": sa}, "<=", br.s_max,
                                name=f"thermal_to[{e}]#{kk}")
    if cuts == "lnc":
        for e, br in enumerate(net.branches):
            i, j = br.from_bus, br.to_bus
            up, lo = lnc_mod.make_lnc_wspace(br, buses[br.from_bus], buses[br.to_bus])
            for cut, kind in ((up, "up"), (lo, "lo")):
                row, rhs = lnc_mod.project_nf(br, cut)
                _cut_row(prog, row, rhs, e, i, j, kind)
    elif cuts != "none":
        raise ValueError(f"unknown cuts setting {cuts!r}")
    _add_objective(prog, net, objective)
    return prog


def _projected_product_rows(br, e: int, i: int, j: int, form: str):
    """(wr, wi) of the bus-level product as rows over program variables."""
    k = branch_constants(br)
    if form == "cdf":
        ws_r, ws_i = lnc_mod.series_product_cdf(br)
    else:
        ws_r, ws_i = lnc_mod.series_product_nf(br)
    rename = {"w_i": f"w[{i}]", "w_j": f"w[{j}]", "p_fr": f"p_fr[{e}]",
              "q_fr": f"q_fr[{e}]", "L": f"L[{e}]"}

    def combine(cr: float, ci: float) -> dict[str, float]:
        row: dict[str, float] = {}
        for term, coef in ws_r.items():
            row[rename[term]] = row.get(rename[term], 0.0) + cr * coef
        for term, coef in ws_i.items():
            row[rename[term]] = row.get(rename[term], 0.0) + ci * coef
        return row

    wr_row = combine(k.tr, -k.ti)
    wi_row = combine(k.ti, k.tr)
    return wr_row, wi_row


def _add_envelopes(prog: ConicProgram, br, e: int,
                   wr_row: dict[str, float], wi_row: dict[str, float]) -> None:
    """tan(theta) envelopes and positivity on a (possibly projected) product."""
    hi = {v: c for v, c in wi_row.items()}
    for v, c in wr_row.items():
        hi[v] = hi.get(v, 0.0) - math.tan(br.ang_hi) * c
    prog.add_linear(hi, "<=", 0.0, name=f"ang_hi[{e}]")
    lo = {v: c for v, c in wi_row.items()}
    for v, c in wr_row.items():
        lo[v] = lo.get(v, 0.0) - math.tan(br.ang_lo) * c
    prog.add_linear(lo, ">=", 0.0, name=f"ang_lo[{e}]")
    prog.add_linear(dict(wr_row), ">=", 0.0, name=f"wr_pos[{e}]")


def build(net: Network, form: str, objective: str = "maxgen", cuts: str = "none") -> ConicProgram:
    """Dispatch on the formulation name ("soc", "cdf", "nf")."""
    builders = {"soc": build_soc, "cdf": build_cdf, "nf": build_nf}
    try:
        builder = builders[form]
    except KeyError:
        raise ValueError(f"unknown formulation {form!r}") from None
    return builder(net, objective=objective, cuts=cuts)


def embedding_point(net: Network, pt: AcPoint, form: str,
                    objective: str = "maxgen") -> dict[str, float]:
    """Variable assignment induced by an AC operating point.

    The master correctness check: this assignment must satisfy every
    constraint of ``build(net, form, objective, cuts)`` for any cut setting,
    provided the point is AC-feasible and within bounds.
    """
    flows = branch_flows(net, pt)
    point: dict[str, float] = {}
    for b in net.buses:
        point[f"w[{b.id}]"] = pt.v[b.id] ** 2
    for kgen in range(len(net.generators)):
        point[f"pg[{kgen}]"] = pt.p_g[kgen]
        point[f"qg[{kgen}]"] = pt.q_g[kgen]
    for e, (br, f) in enumerate(zip(net.branches, flows)):
        point[f"p_fr[{e}]"] = f.s_fr.real
        point[f"q_fr[{e}]"] = f.s_fr.imag
        point[f"p_to[{e}]"] = f.s_to.real
        point[f"q_to[{e}]"] = f.s_to.imag
        if br.s_max is not None:
            point[f"smax[{e}]"] = br.s_max
        vi, vj = pt.v[br.from_bus], pt.v[br.to_bus]
        td = pt.theta[br.from_bus] - pt.theta[br.to_bus]
        if form == "soc":
            point[f"wr[{e}]"] = vi * vj * math.cos(td)
            point[f"wi[{e}]"] = vi * vj * math.sin(td)
        elif form == "cdf":
            k = branch_constants(br)
            w_i = vi * vi
            if k.g_fr != 0.0:
                point[f"ps[{e}]"] = f.s_fr.real - k.g_fr * w_i / k.tm2
            if k.b_fr != 0.0:
                point[f"qs[{e}]"] = f.s_fr.imag + k.b_fr * w_i / k.tm2
            if k.tm2 != 1.0:
                point[f"ws[{e}]"] = w_i / k.tm2
            point[f"L[{e}]"] = f.current_sq
        elif form != "nf":
            raise ValueError(f"unknown formulation {form!r}")
    if objective == "mincost":
        need_one = any(len(g.cost) == 3 and g.cost[2] != 0.0 for g in net.generators)
        if need_one:
            point["one"] = 1.0
        for kgen, g in enumerate(net.generators):
            if len(g.cost) == 3 and g.cost[2] != 0.0:
                point[f"tcost[{kgen}]"] = pt.p_g[kgen] ** 2
    return point
