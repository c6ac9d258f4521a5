"""Power network data model and Matpower case-file parsing.

All quantities are stored in per-unit on the system MVA base; angles are in
radians.  Parsing covers the Matpower subset used by standard OPF benchmark
libraries: ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen``, ``mpc.branch`` and
polynomial ``mpc.gencost``.  Out-of-service branches and generators are
dropped at parse time so downstream index sets stay dense.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, asdict

log = logging.getLogger(__name__)

# Angle-difference bounds declared "unconstrained" in a case file are replaced
# by this sentinel (radians, strictly inside +-pi/2 so that cos of the
# half-width stays positive and tan of the bound stays finite).
ANGLE_SENTINEL = math.radians(89.9)

BUS_TYPES = {1: "PQ", 2: "PV", 3: "slack", 4: "isolated"}


class MatpowerParseError(ValueError):
    """Raised for malformed case-file text; carries a line number when known."""


class NetworkError(ValueError):
    """Raised for semantically invalid network data."""


@dataclass
class Bus:
    id: int
    bus_type: str = "PQ"
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0
    v_lo: float = 0.9
    v_hi: float = 1.1


@dataclass
class Generator:
    bus: int
    p_lo: float = 0.0
    p_hi: float = 0.0
    q_lo: float = 0.0
    q_hi: float = 0.0
    cost: list[float] = field(default_factory=list)  # p.u. polynomial, ascending degree
    status: bool = True
    pg_set: float = 0.0  # dispatch target used as the power-flow default
    qg_set: float = 0.0
    vg_set: float = 1.0  # voltage setpoint for PV/slack power flow


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    s_max: float | None = None
    tap: float = 1.0
    shift: float = 0.0
    ang_lo: float = -ANGLE_SENTINEL
    ang_hi: float = ANGLE_SENTINEL
    g_fr: float = 0.0
    g_to: float = 0.0


@dataclass(frozen=True)
class BranchConstants:
    """Derived admittance and transformer constants of a branch."""

    g: float
    b: float
    tr: float
    ti: float
    tm2: float
    g_fr: float
    b_fr: float
    g_to: float
    b_to: float


def branch_constants(br: Branch) -> BranchConstants:
    """Series admittance, transformer rotation terms and split line charging.

    The series admittance is the complex reciprocal of the impedance,
    g + ib = 1/(r + ix); the total charging susceptance is split evenly
    between the two ends.
    """
    zmag2 = br.r * br.r + br.x * br.x
    if zmag2 <= 0.0:
        raise NetworkError(
            f"branch {br.from_bus}-{br.to_bus}: zero series impedance (r=x=0)"
        )
    if br.tap <= 0.0:
        raise NetworkError(f"branch {br.from_bus}-{br.to_bus}: non-positive tap ratio")
    return BranchConstants(
        g=br.r / zmag2,
        b=-br.x / zmag2,
        tr=br.tap * math.cos(br.shift),
        ti=br.tap * math.sin(br.shift),
        tm2=br.tap * br.tap,
        g_fr=br.g_fr,
        b_fr=br.b_charge / 2.0,
        g_to=br.g_to,
        b_to=br.b_charge / 2.0,
    )


@dataclass
class Network:
    base_mva: float
    buses: list[Bus] = field(default_factory=list)
    generators: list[Generator] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    name: str = ""

    def bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    def slack_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.bus_type == "slack"]

    def gens_at(self) -> dict[int, list[int]]:
        """Bus id -> indices into ``generators``."""
        out: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for k, g in enumerate(self.generators):
            out[g.bus].append(k)
        return out

    def validate(self) -> None:
        if self.base_mva <= 0:
            raise NetworkError(f"non-positive baseMVA: {self.base_mva}")
        ids = set()
        for b in self.buses:
            if b.id in ids:
                raise NetworkError(f"duplicate bus id {b.id}")
            ids.add(b.id)
            if not (0.0 < b.v_lo <= b.v_hi):
                raise NetworkError(
                    f"bus {b.id}: voltage bounds must satisfy 0 < v_lo <= v_hi "
                    f"(got [{b.v_lo}, {b.v_hi}])"
                )
        for g in self.generators:
            if g.bus not in ids:
                raise NetworkError(f"generator references missing bus {g.bus}")
            if g.p_lo > g.p_hi or g.q_lo > g.q_hi:
                raise NetworkError(f"generator at bus {g.bus}: inverted dispatch bounds")
        for br in self.branches:
            if br.from_bus not in ids or br.to_bus not in ids:
                raise NetworkError(
                    f"branch references missing bus ({br.from_bus}-{br.to_bus})"
                )
            if br.ang_lo > br.ang_hi:
                raise NetworkError(
                    f"branch {br.from_bus}-{br.to_bus}: inverted angle bounds"
                )
            if math.cos((br.ang_hi - br.ang_lo) / 2.0) <= 0.0:
                raise NetworkError(
                    f"branch {br.from_bus}-{br.to_bus}: angle window wider than pi"
                )
            branch_constants(br)  # raises on zero impedance / bad tap


# ---------------------------------------------------------------------------
# Matpower parsing


def _strip_comment(line: str) -> str:
    k = line.find("%")
    return line if k < 0 else line[:k]


def _find_matrix(lines: list[str], key: str) -> tuple[list[list[float]], int] | None:
    """Locate ``mpc.<key> = [ ... ];`` and return (rows, first line no)."""
    open_re = re.compile(r"mpc\.%s\s*=\s*\[" % re.escape(key))
    for i, raw in enumerate(lines):
        text = _strip_comment(raw)
        m = open_re.search(text)
        if not m:
            continue
        rows: list[list[float]] = []
        buf = text[m.end():]
        j = i
        while True:
            closed = "]" in buf
            if closed:
                buf = buf[: buf.index("]")]
            for piece in buf.split(";"):
                piece = piece.strip()
                if not piece:
                    continue
                try:
                    rows.append([float(tok) for tok in piece.replace(",", " ").split()])
                except ValueError as exc:
                    raise MatpowerParseError(
                        f"line {j + 1}: malformed {key} row: {piece!r}"
                    ) from exc
            if closed:
                return rows, i + 1
            j += 1
            if j >= len(lines):
                raise MatpowerParseError(f"line {i + 1}: unterminated mpc.{key} matrix")
            buf = _strip_comment(lines[j])


def _find_scalar(lines: list[str], key: str) -> float | None:
    pat = re.compile(r"mpc\.%s\s*=\s*([-+0-9.eE]+)\s*;" % re.escape(key))
    for raw in lines:
        m = pat.search(_strip_comment(raw))
        if m:
            return float(m.group(1))
    return None


def _angle_bounds(angmin_deg: float, angmax_deg: float) -> tuple[float, float]:
    """Matpower angle-difference bounds -> radians with sentinel substitution.

    Zero/zero means unconstrained; bounds at or beyond the sentinel are
    clamped so every branch keeps a usable angle window.
    """
    if angmin_deg == 0.0 and angmax_deg == 0.0:
        return -ANGLE_SENTINEL, ANGLE_SENTINEL
    lo = max(math.radians(angmin_deg), -ANGLE_SENTINEL)
    hi = min(math.radians(angmax_deg), ANGLE_SENTINEL)
    return lo, hi


def parse_matpower(text: str, name: str = "") -> Network:
    """Parse Matpower case-file text into a per-unit :class:`Network`.

    MW/MVAr quantities are divided by ``baseMVA``; angle limits are converted
    to radians (zero or out-of-range limits become sentinel bounds); zero tap
    ratios become 1.0.  Out-of-service branches and generators are dropped.
    Unknown ``mpc.*`` fields are ignored with a warning, except DC lines and
    piecewise-linear generator costs, which are rejected.
    """
    lines = text.splitlines()

    known = {"version", "baseMVA", "bus", "gen", "branch", "gencost", "bus_name"}
    for raw in lines:
        m = re.search(r"mpc\.(\w+)\s*=", _strip_comment(raw))
        if m and m.group(1) not in known:
            if m.group(1) == "dcline":
                raise MatpowerParseError("DC lines are not supported")
            log.warning("ignoring unknown case field mpc.%s", m.group(1))

    base = _find_scalar(lines, "baseMVA")
    if base is None:
        raise MatpowerParseError("missing mpc.baseMVA")
    if base <= 0:
        raise MatpowerParseError(f"non-positive baseMVA: {base}")

    found_bus = _find_matrix(lines, "bus")
    found_gen = _find_matrix(lines, "gen")
    found_branch = _find_matrix(lines, "branch")
    if found_bus is None:
        raise MatpowerParseError("missing mpc.bus matrix")
    if found_gen is None:
        raise MatpowerParseError("missing mpc.gen matrix")
    if found_branch is None:
        raise MatpowerParseError("missing mpc.branch matrix")

    buses: list[Bus] = []
    for row in found_bus[0]:
        if len(row) < 13:
            raise MatpowerParseError(
                f"bus row for bus {row[0] if row else '?'} has {len(row)} columns, expected >= 13"
            )
        btype = BUS_TYPES.get(int(row[1]))
        if btype is None:
            raise MatpowerParseError(f"bus {int(row[0])}: unknown bus type {row[1]}")
        buses.append(
            Bus(
                id=int(row[0]),
                bus_type=btype,
                p_load=row[2] / base,
                q_load=row[3] / base,
                g_shunt=row[4] / base,
                b_shunt=row[5] / base,
                v_hi=row[11],
                v_lo=row[12],
            )
        )

    gen_rows = found_gen[0]
    gencost_rows: list[list[float]] = []
    found_cost = _find_matrix(lines, "gencost")
    if found_cost is not None:
        gencost_rows = found_cost[0]
        if len(gencost_rows) > len(gen_rows):
            # a second block of rows carries reactive-power costs; not used
            log.warning("ignoring reactive-power cost rows in mpc.gencost")
            gencost_rows = gencost_rows[: len(gen_rows)]

    gens: list[Generator] = []
    for k, row in enumerate(gen_rows):
        if len(row) < 10:
            raise MatpowerParseError(f"gen row {k + 1} has {len(row)} columns, expected >= 10")
        status = row[7] > 0
        cost: list[float] = []
        if k < len(gencost_rows):
            crow = gencost_rows[k]
            model = int(crow[0])
            if model == 1:
                raise MatpowerParseError(
                    "piecewise-linear generator costs (gencost model 1) are not supported"
                )
            if model != 2:
                raise MatpowerParseError(f"unknown gencost model {model}")
            ncost = int(crow[3])
            coeffs = crow[4 : 4 + ncost]  # descending powers of MW
            if len(coeffs) != ncost:
                raise MatpowerParseError(f"gencost row {k + 1}: expected {ncost} coefficients")
            # convert c_k * P_MW^k to per-unit power: multiply by base^k
            cost = [c * base ** (ncost - 1 - i) for i, c in enumerate(reversed(coeffs))]
        if not status:
            continue
        gens.append(
            Generator(
                bus=int(row[0]),
                p_lo=row[9] / base,
                p_hi=row[8] / base,
                q_lo=row[4] / base,
                q_hi=row[3] / base,
                cost=cost,
                status=True,
                pg_set=row[1] / base,
                qg_set=row[2] / base,
                vg_set=row[5] if row[5] > 0 else 1.0,
            )
        )

    branches: list[Branch] = []
    for k, row in enumerate(found_branch[0]):
        if len(row) < 13:
            raise MatpowerParseError(
                f"branch row {k + 1} has {len(row)} columns, expected >= 13"
            )
        if row[10] <= 0:  # out of service
            continue
        ang_lo, ang_hi = _angle_bounds(row[11], row[12])
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charge=row[4],
                s_max=(row[5] / base) if row[5] > 0 else None,
                tap=row[8] if row[8] != 0.0 else 1.0,
                shift=math.radians(row[9]),
                ang_lo=ang_lo,
                ang_hi=ang_hi,
            )
        )

    net = Network(base_mva=base, buses=buses, generators=gens, branches=branches, name=name)
    net.validate()
    return net


def parse_matpower_file(path: str) -> Network:
    with open(path) as fh:
        text = fh.read()
    name = re.sub(r"\.m$", "", path.replace("\\", "/").rsplit("/", 1)[-1])
    return parse_matpower(text, name=name)


# ---------------------------------------------------------------------------
# Canonical JSON serialization (exact round-trip; see README for the schema)


def network_to_json(net: Network, indent: int | None = 2) -> str:
    doc = {
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [asdict(b) for b in net.buses],
        "generators": [asdict(g) for g in net.generators],
        "branches": [asdict(br) for br in net.branches],
    }
    return json.dumps(doc, indent=indent)


def network_from_json(text: str) -> Network:
    doc = json.loads(text)
    net = Network(
        base_mva=doc["base_mva"],
        buses=[Bus(**b) for b in doc["buses"]],
        generators=[Generator(**g) for g in doc["generators"]],
        branches=[Branch(**br) for br in doc["branches"]],
        name=doc.get("name", ""),
    )
    net.validate()
    return net
