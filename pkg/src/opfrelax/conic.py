"""Solver-independent conic program representation and standard-form compiler.

A :class:`ConicProgram` holds named variables with optional bounds, linear
constraints, cone memberships and a linear objective.  :meth:`ConicProgram.compile`
lowers it to the equality standard form

    min c'x   s.t.  A x = b,   x in K = R^f x R+^l x Q^{d1} x Q^{d2} x ...

where the leading block holds every original variable (free), inequality
rows and variable bounds gain nonnegative slacks, and each cone membership
gets a fresh second-order block tied to the referenced variables by linking
equalities.  A rotated membership ||u||^2 <= s*t is rewritten as the
second-order constraint ||(2u, s-t)|| <= s+t.  Row and variable ordering is
insertion order, so compilation is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ProgramError(ValueError):
    """Raised for ill-formed programs (unknown variables, bad cones, ...)."""


@dataclass
class _Constraint:
    coeffs: dict[str, float]
    sense: str  # "<=", "==", ">="
    rhs: float
    name: str


@dataclass
class _SocMembership:
    t: str
    u: list[str]
    name: str


@dataclass
class _RotatedMembership:
    u: list[str]
    s: str
    t: str
    name: str


class ConicProgram:
    """Named-variable conic program builder."""

    def __init__(self) -> None:
        self._vars: dict[str, int] = {}
        self._lb: list[float | None] = []
        self._ub: list[float | None] = []
        self.constraints: list[_Constraint] = []
        self.socs: list[_SocMembership] = []
        self.rotated: list[_RotatedMembership] = []
        self.objective_sense: str = "min"
        self.objective: dict[str, float] = {}
        self.objective_const: float = 0.0

    # -- construction -------------------------------------------------------

    def add_var(self, name: str, lb: float | None = None, ub: float | None = None) -> str:
        if name in self._vars:
            raise ProgramError(f"duplicate variable {name!r}")
        if lb is not None and ub is not None and lb > ub:
            raise ProgramError(f"variable {name!r}: lb {lb} > ub {ub}")
        self._vars[name] = len(self._lb)
        self._lb.append(lb)
        self._ub.append(ub)
        return name

    def has_var(self, name: str) -> bool:
        return name in self._vars

    def var_names(self) -> list[str]:
        return list(self._vars)

    def bounds(self, name: str) -> tuple[float | None, float | None]:
        k = self._index(name)
        return self._lb[k], self._ub[k]

    def set_bounds(self, name: str, lb: float | None, ub: float | None) -> None:
        k = self._index(name)
        if lb is not None and ub is not None and lb > ub:
            raise ProgramError(f"variable {name!r}: lb {lb} > ub {ub}")
        self._lb[k] = lb
        self._ub[k] = ub

    def _index(self, name: str) -> int:
        try:
            return self._vars[name]
        except KeyError:
            raise ProgramError(f"unknown variable {name!r}") from None

    def add_linear(self, coeffs: dict[str, float], sense: str, rhs: float, name: str = "") -> None:
        if sense not in ("<=", "==", ">="):
            raise ProgramError(f"bad constraint sense {sense!r}")
        for v in coeffs:
            self._index(v)
        self.constraints.append(_Constraint(dict(coeffs), sense, float(rhs), name))

    def add_soc(self, t: str, u: list[str], name: str = "") -> None:
        """Membership ||u|| <= t."""
        self._index(t)
        for v in u:
            self._index(v)
        if not u:
            raise ProgramError("second-order cone needs at least one norm term")
        self.socs.append(_SocMembership(t, list(u), name))

    def add_rotated_cone(self, u: list[str], s: str, t: str, name: str = "") -> None:
        """Membership ||u||^2 <= s * t with s, t >= 0.

        Both scalar variables must carry nonnegative lower bounds; the
        factor-of-two difference from the textbook rotated cone is absorbed
        when the membership is compiled to ||(2u, s-t)|| <= s+t.
        """
        for v in u:
            self._index(v)
        if not u:
            raise ProgramError("rotated cone needs at least one norm term")
        for v in (s, t):
            lb = self._lb[self._index(v)]
            if lb is None or lb < 0.0:
                raise ProgramError(
                    f"rotated-cone scalar {v!r} must have a nonnegative lower bound"
                )
        self.rotated.append(_RotatedMembership(list(u), s, t, name))

    def set_objective(self, sense: str, coeffs: dict[str, float], const: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise ProgramError(f"bad objective sense {sense!r}")
        for v in coeffs:
            self._index(v)
        self.objective_sense = sense
        self.objective = dict(coeffs)
        self.objective_const = float(const)

    def drop_constraints(self, prefix: str) -> int:
        """Remove linear rows and cone memberships whose name starts with prefix."""
        n0 = len(self.constraints) + len(self.socs) + len(self.rotated)
        self.constraints = [c for c in self.constraints if not c.name.startswith(prefix)]
        self.socs = [c for c in self.socs if not c.name.startswith(prefix)]
        self.rotated = [c for c in self.rotated if not c.name.startswith(prefix)]
        return n0 - (len(self.constraints) + len(self.socs) + len(self.rotated))

    # -- point evaluation ----------------------------------------------------

    def residuals(self, point: dict[str, float]) -> dict[str, float]:
        """Worst constraint violations of a named point, by family.

        Returns nonnegative violations for keys ``bounds``, ``linear``,
        ``soc``, ``rotated`` and their maximum under ``max``.  Equality rows
        contribute |a.x - rhs|; inequalities and cones contribute their
        one-sided excess.
        """
        for v in self._vars:
            if v not in point:
                raise ProgramError(f"point missing variable {v!r}")
        viol = {"bounds": 0.0, "linear": 0.0, "soc": 0.0, "rotated": 0.0}
        for name, k in self._vars.items():
            val = point[name]
            if self._lb[k] is not None:
                viol["bounds"] = max(viol["bounds"], self._lb[k] - val)
            if self._ub[k] is not None:
                viol["bounds"] = max(viol["bounds"], val - self._ub[k])
        for c in self.constraints:
            ax = sum(coef * point[v] for v, coef in c.coeffs.items())
            if c.sense == "==":
                viol["linear"] = max(viol["linear"], abs(ax - c.rhs))
            elif c.sense == "<=":
                viol["linear"] = max(viol["linear"], ax - c.rhs)
            else:
                viol["linear"] = max(viol["linear"], c.rhs - ax)
        for m in self.socs:
            nrm = np.hypot.reduce([point[v] for v in m.u]) if len(m.u) > 1 else abs(point[m.u[0]])
            viol["soc"] = max(viol["soc"], float(nrm) - point[m.t])
        for m in self.rotated:
            sq = sum(point[v] ** 2 for v in m.u)
            viol["rotated"] = max(viol["rotated"], sq - point[m.s] * point[m.t])
        viol["max"] = max(viol.values())
        return viol

    # -- compilation ---------------------------------------------------------

    def compile(self) -> "StandardForm":
        """Lower to equality standard form over free/nonneg/second-order blocks."""
        n_orig = len(self._lb)
        used = [False] * n_orig
        for c in self.constraints:
            for v in c.coeffs:
                used[self._vars[v]] = True
        for m in self.socs:
            for v in [m.t, *m.u]:
                used[self._vars[v]] = True
        for m in self.rotated:
            for v in [*m.u, m.s, m.t]:
                used[self._vars[v]] = True
        loose = [
            name
            for name, k in self._vars.items()
            if not used[k] and self._lb[k] is None and self._ub[k] is None
        ]
        if loose:
            raise ProgramError(
                "unbounded variables appear in no constraint: " + ", ".join(loose)
            )

        rows_i: list[int] = []
        cols_i: list[int] = []
        vals: list[float] = []
        b: list[float] = []
        row_names: list[str] = []
        n_slack = 0
        soc_dims: list[int] = []

        slack_of_row: list[int | None] = []  # slack sign encoded separately
        slack_sign: list[float] = []

        def add_row(coeffs: list[tuple[int, float]], rhs: float, name: str,
                    slack: float = 0.0) -> None:
            nonlocal n_slack
            r = len(b)
            for k, coef in coeffs:
                rows_i.append(r)
                cols_i.append(k)
                vals.append(coef)
            if slack != 0.0:
                slack_of_row.append(n_slack)
                slack_sign.append(slack)
                n_slack += 1
            else:
                slack_of_row.append(None)
                slack_sign.append(0.0)
            b.append(rhs)
            row_names.append(name)

        # variable bounds become rows with nonnegative slacks
        for name, k in self._vars.items():
            lb, ub = self._lb[k], self._ub[k]
            if lb is not None and ub is not None and lb == ub:
                add_row([(k, 1.0)], lb, f"fix[{name}]")
                continue
            if lb is not None:
                add_row([(k, 1.0)], lb, f"lb[{name}]", slack=-1.0)  # x - s = lb
            if ub is not None:
                add_row([(k, 1.0)], ub, f"ub[{name}]", slack=+1.0)  # x + s = ub

        for c in self.constraints:
            coeffs = [(self._vars[v], coef) for v, coef in c.coeffs.items()]
            slack = {"==": 0.0, "<=": +1.0, ">=": -1.0}[c.sense]
            add_row(coeffs, c.rhs, c.name or "lin", slack=slack)

        # cone blocks: fresh variables after free and slack blocks
        cone_rows: list[tuple[int, list[tuple[int, float]], str]] = []
        cone_col = 0  # offset within the cone region, fixed up after n_slack known

        def add_cone_row(local_col: int, coeffs: list[tuple[int, float]], name: str) -> None:
            # z[local_col] - sum(coeffs) = 0
            cone_rows.append((local_col, coeffs, name))

        for m in self.socs:
            d = 1 + len(m.u)
            base = cone_col
            add_cone_row(base, [(self._vars[m.t], 1.0)], m.name or "soc")
            for j, v in enumerate(m.u):
                add_cone_row(base + 1 + j, [(self._vars[v], 1.0)], m.name or "soc")
            soc_dims.append(d)
            cone_col += d
        for m in self.rotated:
            d = 2 + len(m.u)
            base = cone_col
            ks, kt = self._vars[m.s], self._vars[m.t]
            add_cone_row(base, [(ks, 1.0), (kt, 1.0)], m.name or "rot")
            for j, v in enumerate(m.u):
                add_cone_row(base + 1 + j, [(self._vars[v], 2.0)], m.name or "rot")
            add_cone_row(base + d - 1, [(ks, 1.0), (kt, -1.0)], m.name or "rot")
            soc_dims.append(d)
            cone_col += d

        n_cone = cone_col
        n = n_orig + n_slack + n_cone

        # splice slack entries now that column offsets are final
        for r, (srow, sgn) in enumerate(zip(slack_of_row, slack_sign)):
            if srow is not None:
                rows_i.append(r)
                cols_i.append(n_orig + srow)
                vals.append(sgn)
        for local_col, coeffs, name in cone_rows:
            r = len(b)
            rows_i.append(r)
            cols_i.append(n_orig + n_slack + local_col)
            vals.append(1.0)
            for k, coef in coeffs:
                rows_i.append(r)
                cols_i.append(k)
                vals.append(-coef)
            b.append(0.0)
            row_names.append(name)

        m_rows = len(b)
        A = sp.coo_matrix(
            (np.asarray(vals), (np.asarray(rows_i), np.asarray(cols_i))),
            shape=(m_rows, n),
        ).tocsr()

        sign = 1.0 if self.objective_sense == "min" else -1.0
        c_vec = np.zeros(n)
        for v, coef in self.objective.items():
            c_vec[self._vars[v]] = sign * coef

        return StandardForm(
            A=A,
            b=np.asarray(b),
            c=c_vec,
            n_free=n_orig,
            n_nonneg=n_slack,
            soc_dims=tuple(soc_dims),
            names=dict(self._vars),
            obj_sign=sign,
            obj_const=self.objective_const,
            row_names=row_names,
        )

    def lift(self, point: dict[str, float], sf: "StandardForm") -> np.ndarray:
        """Extend a named point to a full standard-form vector (slacks, cones)."""
        x = np.zeros(sf.A.shape[1])
        for name, k in self._vars.items():
            x[k] = point[name]
        col = sf.n_free
        for name, k in self._vars.items():
            lb, ub = self._lb[k], self._ub[k]
            if lb is not None and ub is not None and lb == ub:
                continue
            if lb is not None:
                x[col] = point[name] - lb
                col += 1
            if ub is not None:
                x[col] = ub - point[name]
                col += 1
        for c in self.constraints:
            if c.sense == "==":
                continue
            ax = sum(coef * point[v] for v, coef in c.coeffs.items())
            x[col] = (c.rhs - ax) if c.sense == "<=" else (ax - c.rhs)
            col += 1
        col = sf.n_free + sf.n_nonneg
        for m in self.socs:
            x[col] = point[m.t]
            for j, v in enumerate(m.u):
                x[col + 1 + j] = point[v]
            col += 1 + len(m.u)
        for m in self.rotated:
            d = 2 + len(m.u)
            x[col] = point[m.s] + point[m.t]
            for j, v in enumerate(m.u):
                x[col + 1 + j] = 2.0 * point[v]
            x[col + d - 1] = point[m.s] - point[m.t]
            col += d
        return x

    def to_json(self, indent: int | None = 2) -> str:
        doc = {
            "variables": [
                {"name": name, "lb": self._lb[k], "ub": self._ub[k]}
                for name, k in self._vars.items()
            ],
            "constraints": [
                {"coeffs": c.coeffs, "sense": c.sense, "rhs": c.rhs, "name": c.name}
                for c in self.constraints
            ],
            "soc": [{"t": m.t, "u": m.u, "name": m.name} for m in self.socs],
            "rotated": [
                {"u": m.u, "s": m.s, "t": m.t, "name": m.name} for m in self.rotated
            ],
            "objective": {
                "sense": self.objective_sense,
                "coeffs": self.objective,
                "const": self.objective_const,
            },
        }
        return json.dumps(doc, indent=indent)


@dataclass
class StandardForm:
    """Equality-form conic program ``min c'x, A x = b, x in K``.

    ``x`` is laid out as [original (free) | slacks (nonneg) | cone blocks],
    with second-order blocks of the listed dimensions.  ``names`` maps each
    original variable to its column; together with the implied slack/cone
    layout this is a bijection between program points and standard-form
    points.
    """

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    n_free: int
    n_nonneg: int
    soc_dims: tuple[int, ...]
    names: dict[str, int]
    obj_sign: float
    obj_const: float
    row_names: list[str] = field(default_factory=list)

    def extract(self, x: np.ndarray) -> dict[str, float]:
        """Original-variable values from a standard-form point."""
        return {name: float(x[k]) for name, k in self.names.items()}

    def objective_value(self, x: np.ndarray) -> float:
        """Objective in the program's own sense (sign convention undone)."""
        return self.obj_sign * float(self.c @ x) + self.obj_const

    def replace_objective(self, coeffs: dict[str, float], sense: str,
                          const: float = 0.0) -> "StandardForm":
        """Same constraints, new linear objective over original variables."""
        sign = {"min": 1.0, "max": -1.0}[sense]
        c_vec = np.zeros_like(self.c)
        for v, coef in coeffs.items():
            c_vec[self.names[v]] = sign * coef
        return StandardForm(
            A=self.A, b=self.b, c=c_vec,
            n_free=self.n_free, n_nonneg=self.n_nonneg, soc_dims=self.soc_dims,
            names=self.names, obj_sign=sign, obj_const=const,
            row_names=self.row_names,
        )

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Equality and cone violations of a standard-form point."""
        eq = float(np.max(np.abs(self.A @ x - self.b))) if self.b.size else 0.0
        nn = 0.0
        if self.n_nonneg:
            blk = x[self.n_free : self.n_free + self.n_nonneg]
            nn = float(max(0.0, -blk.min())) if blk.size else 0.0
        soc = 0.0
        k = self.n_free + self.n_nonneg
        for d in self.soc_dims:
            blk = x[k : k + d]
            soc = max(soc, float(np.linalg.norm(blk[1:]) - blk[0]))
            k += d
        return {"eq": eq, "nonneg": nn, "soc": soc, "max": max(eq, nn, soc)}

    def to_json(self, indent: int | None = 2) -> str:
        coo = self.A.tocoo()
        doc = {
            "m": int(self.A.shape[0]),
            "n": int(self.A.shape[1]),
            "A": {
                "rows": coo.row.tolist(),
                "cols": coo.col.tolist(),
                "vals": coo.data.tolist(),
            },
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "cones": {
                "free": self.n_free,
                "nonneg": self.n_nonneg,
                "soc": list(self.soc_dims),
            },
            "names": self.names,
            "obj_sign": self.obj_sign,
            "obj_const": self.obj_const,
        }
        return json.dumps(doc, indent=indent)
