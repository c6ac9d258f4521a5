"""Primal-dual interior-point solver for LP/SOCP in equality standard form.

Implements a homogeneous self-dual embedding with Nesterov-Todd scaling and
a Mehrotra predictor-corrector step, so primal/dual infeasibility is detected
through the embedding certificates rather than by diverging iterates.  The
Newton step is computed from the symmetric quasi-definite system

    [ -(H + dI)   A' ] [dx]   [rhs_x]
    [     A       dI ] [dy] = [rhs_y],   H = W^-2 (zero on the free block),

factorized sparsely once per iteration, with one step of iterative
refinement against the unregularized matrix.  All cone kernels are grouped
by block dimension and vectorized, which keeps repeated small solves (for
bound tightening) cheap.

The residuals reported in :class:`SolveResult` are recomputed from the
returned point by :func:`kkt_residuals`, not taken from solver internals.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from opfrelax.conic import StandardForm

_STEP_FRAC = 0.99
_REG_MAX = 1e-5


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    reg: float = 1e-9
    trace: bool = False


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | iteration_limit | numerical_failure
    objective: float | None
    primal: np.ndarray | None
    dual: np.ndarray | None
    slack: np.ndarray | None
    residuals: dict[str, float]
    iterations: int
    wall_time: float
    values: dict[str, float] = field(default_factory=dict)
    trace: list[dict[str, float]] = field(default_factory=list)


class _Cones:
    """Vectorized kernels over the cone region of x = [free | lp | soc...]."""

    def __init__(self, n_free: int, n_lp: int, soc_dims: tuple[int, ...]):
        self.nf = n_free
        self.nl = n_lp
        self.lp = slice(n_free, n_free + n_lp)
        self.dims = soc_dims
        self.n = n_free + n_lp + sum(soc_dims)
        self.degree = n_lp + len(soc_dims)
        groups: dict[int, list[int]] = {}
        start = n_free + n_lp
        for d in soc_dims:
            groups.setdefault(d, []).append(start)
            start += d
        # per distinct dim: (k, d) fancy index into full-length vectors
        self.groups = [
            (d, np.asarray(starts)[:, None] + np.arange(d)[None, :])
            for d, starts in sorted(groups.items())
        ]

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[self.lp] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def product(self, x: np.ndarray, s: np.ndarray) -> float:
        """Inner product over the cone region only."""
        out = float(x[self.lp] @ s[self.lp])
        for _, idx in self.groups:
            out += float(np.sum(x[idx] * s[idx]))
        return out

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Largest a >= 0 with x + t*dx in the cone for all t in [0, a]."""
        alpha = math.inf
        xl, dl = x[self.lp], dx[self.lp]
        neg = dl < 0
        if np.any(neg):
            alpha = float(np.min(-xl[neg] / dl[neg]))
        for _, idx in self.groups:
            X, D = x[idx], dx[idx]
            a = D[:, 0] ** 2 - np.sum(D[:, 1:] ** 2, axis=1)
            b = 2.0 * (X[:, 0] * D[:, 0] - np.sum(X[:, 1:] * D[:, 1:], axis=1))
            c = X[:, 0] ** 2 - np.sum(X[:, 1:] ** 2, axis=1)
            alpha = min(alpha, _first_positive_root(a, b, c))
        return alpha

    def min_residue(self, x: np.ndarray) -> float:
        """Distance-to-boundary indicator: min over blocks of the cone residue."""
        r = math.inf
        if self.nl:
            r = float(np.min(x[self.lp]))
        for _, idx in self.groups:
            X = x[idx]
            res = X[:, 0] - np.sqrt(np.maximum(np.sum(X[:, 1:] ** 2, axis=1), 0.0))
            if res.size:
                r = min(r, float(np.min(res)))
        return r


def _first_positive_root(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Smallest positive root of a t^2 + b t + c = 0 over rows; inf if none.

    c > 0 is assumed (the current point is strictly interior), so the first
    positive root is where the cone residue first vanishes.
    """
    out = math.inf
    lin = np.abs(a) < 1e-300
    if np.any(lin):
        bl, cl = b[lin], c[lin]
        mask = bl < 0
        if np.any(mask):
            out = min(out, float(np.min(-cl[mask] / bl[mask])))
    aq, bq, cq = a[~lin], b[~lin], c[~lin]
    if aq.size:
        disc = bq * bq - 4.0 * aq * cq
        ok = disc >= 0.0
        if np.any(ok):
            aq, bq, cq, disc = aq[ok], bq[ok], cq[ok], disc[ok]
            sq = np.sqrt(disc)
            qq = -0.5 * (bq + np.sign(bq) * sq + (bq == 0.0) * sq)
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(np.abs(aq) > 0, qq / aq, math.inf)
                r2 = np.where(np.abs(qq) > 0, cq / qq, math.inf)
            roots = np.concatenate([r1, r2])
            roots = roots[roots > 1e-300]
            if roots.size:
                out = min(out, float(np.min(roots)))
    return out


class _Scaling:
    """Nesterov-Todd scaling for the current (x, s) cone pair.

    Each second-order block uses the hyperbolic Householder form
    W = eta * [[w0, w1'], [w1, I + w1 w1'/(1+w0)]] built from the unit
    scaling point wbar (wbar' J wbar = 1), so that W^-1 x = W s = lambda
    and W^-2 = eta^-2 (2 (J wbar)(J wbar)' - J).
    """

    def __init__(self, cones: _Cones, x: np.ndarray, s: np.ndarray):
        self.cones = cones
        self.w_lp = np.sqrt(x[cones.lp] / s[cones.lp]) if cones.nl else np.empty(0)
        self.soc = []  # per group: (eta, wbar)
        for _, idx in cones.groups:
            X, S = x[idx], s[idx]
            resx = X[:, 0] ** 2 - np.sum(X[:, 1:] ** 2, axis=1)
            ress = S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1)
            resx = np.maximum(resx, 1e-300)
            ress = np.maximum(ress, 1e-300)
            xb = X / np.sqrt(resx)[:, None]
            sb = S / np.sqrt(ress)[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(xb * sb, axis=1)))
            jsb = sb.copy()
            jsb[:, 1:] *= -1.0
            wbar = (xb + jsb) / (2.0 * gamma)[:, None]
            eta = (resx / ress) ** 0.25
            self.soc.append((eta, wbar))
        self.lmbda = self.mult_Winv(x)

    def mult_W(self, v: np.ndarray) -> np.ndarray:
        """W v; free block passes through untouched."""
        out = v.copy()
        c = self.cones
        out[c.lp] = self.w_lp * v[c.lp]
        for (eta, wbar), (_, idx) in zip(self.soc, c.groups):
            V = v[idx]
            w0, w1 = wbar[:, 0], wbar[:, 1:]
            dot = np.sum(w1 * V[:, 1:], axis=1)
            head = w0 * V[:, 0] + dot
            tail = V[:, 1:] + w1 * (V[:, 0] + dot / (1.0 + w0))[:, None]
            out[idx] = eta[:, None] * np.column_stack([head, tail])
        return out

    def mult_Winv(self, v: np.ndarray) -> np.ndarray:
        out = v.copy()
        c = self.cones
        out[c.lp] = v[c.lp] / self.w_lp
        for (eta, wbar), (_, idx) in zip(self.soc, c.groups):
            V = v[idx]
            w0, w1 = wbar[:, 0], wbar[:, 1:]
            dot = np.sum(w1 * V[:, 1:], axis=1)
            head = w0 * V[:, 0] - dot
            tail = V[:, 1:] + w1 * (-V[:, 0] + dot / (1.0 + w0))[:, None]
            out[idx] = np.column_stack([head, tail]) / eta[:, None]
        return out

    def arrow_solve(self, d: np.ndarray) -> np.ndarray:
        """Solve lambda o u = d on the cone region (free block zeroed)."""
        c = self.cones
        out = np.zeros_like(d)
        lam = self.lmbda
        out[c.lp] = d[c.lp] / lam[c.lp]
        for _, idx in c.groups:
            L, D = lam[idx], d[idx]
            det = L[:, 0] ** 2 - np.sum(L[:, 1:] ** 2, axis=1)
            u0 = (L[:, 0] * D[:, 0] - np.sum(L[:, 1:] * D[:, 1:], axis=1)) / det
            u1 = (D[:, 1:] - u0[:, None] * L[:, 1:]) / L[:, 0][:, None]
            out[idx] = np.column_stack([u0, u1])
        return out

    def arrow_prod(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a o b on the cone region (free block zeroed)."""
        c = self.cones
        out = np.zeros_like(a)
        out[c.lp] = a[c.lp] * b[c.lp]
        for _, idx in c.groups:
            A, B = a[idx], b[idx]
            p0 = np.sum(A * B, axis=1)
            p1 = A[:, 0][:, None] * B[:, 1:] + B[:, 0][:, None] * A[:, 1:]
            out[idx] = np.column_stack([p0, p1])
        return out

    def h_values(self) -> np.ndarray:
        """Values of H = W^-2 matching the pattern from :func:`_h_pattern`."""
        parts = [1.0 / self.w_lp**2]
        for (eta, wbar), (d, idx) in zip(self.soc, self.cones.groups):
            q = wbar.copy()
            q[:, 1:] *= -1.0  # J wbar
            J = -np.eye(d)
            J[0, 0] = 1.0
            H = (2.0 * q[:, :, None] * q[:, None, :] - J[None, :, :]) / (eta**2)[
                :, None, None
            ]
            parts.append(H.reshape(-1))
        return np.concatenate(parts) if parts else np.empty(0)


def _h_pattern(cones: _Cones) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) pattern of the block-diagonal H over the cone region."""
    rows = [np.arange(cones.nf, cones.nf + cones.nl)]
    cols = [np.arange(cones.nf, cones.nf + cones.nl)]
    for d, idx in cones.groups:
        r = np.repeat(idx, d, axis=1).reshape(-1)
        c = np.tile(idx, (1, d)).reshape(-1)
        rows.append(r)
        cols.append(c)
    return np.concatenate(rows), np.concatenate(cols)


class _KKT:
    """Sparse quasi-definite KKT system with a fixed pattern."""

    def __init__(self, A: sp.csr_matrix, cones: _Cones, reg: float):
        m, n = A.shape
        self.m, self.n = m, n
        coo = A.tocoo()
        h_r, h_c = _h_pattern(cones)
        self.rows = np.concatenate(
            [h_r, np.arange(n), coo.row + n, coo.col, np.arange(n, n + m)]
        )
        self.cols = np.concatenate(
            [h_c, np.arange(n), coo.col, coo.row + n, np.arange(n, n + m)]
        )
        self.a_vals = coo.data
        self.lu = None
        self._M: sp.csc_matrix | None = None
        self._reg = reg

    def factor(self, h_vals: np.ndarray, reg: float) -> None:
        n, m = self.n, self.m
        vals = np.concatenate(
            [-h_vals, np.full(n, -reg), self.a_vals, self.a_vals, np.full(m, reg)]
        )
        M = sp.csc_matrix((vals, (self.rows, self.cols)), shape=(n + m, n + m))
        self.lu = spla.splu(M, permc_spec="COLAMD")
        self._M = M
        self._reg = reg

    def solve(self, rx: np.ndarray, ry: np.ndarray, refine: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Solve [[-H, A'], [A, 0]] [dx; dy] = [rx; ry] with refinement."""
        n = self.n
        rhs = np.concatenate([rx, ry])
        sol = self.lu.solve(rhs)
        for _ in range(refine):
            # residual against the unregularized matrix M0 = M - diag(-reg, +reg)
            res = rhs - self._M @ sol
            res[:n] -= self._reg * sol[:n]
            res[n:] += self._reg * sol[n:]
            if np.max(np.abs(res)) < 1e-14 * (1.0 + np.max(np.abs(rhs))):
                break
            sol = sol + self.lu.solve(res)
        return sol[: self.n], sol[self.n :]


def kkt_residuals(
    sf: StandardForm, x: np.ndarray, y: np.ndarray, s: np.ndarray
) -> dict[str, float]:
    """Relative KKT residuals of a candidate primal/dual pair.

    Recomputed from (A, b, c) and the given point only, independent of any
    solver state: primal feasibility ||Ax-b||/(1+||b||), dual feasibility
    ||A'y+s-c||/(1+||c||), relative duality gap |c'x-b'y|/(1+|c'x|+|b'y|),
    and the worst cone violation of x and s.
    """
    A, b, c = sf.A, sf.b, sf.c
    pres = float(np.linalg.norm(A @ x - b) / (1.0 + np.linalg.norm(b)))
    dres = float(np.linalg.norm(A.T @ y + s - c) / (1.0 + np.linalg.norm(c)))
    pobj = float(c @ x)
    dobj = float(b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    cones = _Cones(sf.n_free, sf.n_nonneg, sf.soc_dims)
    cone_viol = max(0.0, -cones.min_residue(x), -cones.min_residue(s))
    if sf.n_free:
        # the dual cone of the free block is {0}
        cone_viol = max(cone_viol, float(np.max(np.abs(s[: sf.n_free]))))
    return {
        "primal": pres,
        "dual": dres,
        "gap": float(gap),
        "cone": float(cone_viol),
    }


def solve(sf: StandardForm, opts: SolverOptions | None = None) -> SolveResult:
    """Solve a standard-form conic program.

    Returns an optimal primal/dual pair, an infeasibility or unboundedness
    certificate, or a failure status.  The reported objective is in the
    original program's sense.  Deterministic for identical inputs.

    Certificate criteria: *infeasible* is declared for a dual ray with
    b'y = 1, s in K and ||A'y + s|| <= tol * (1 + ||c||); *unbounded* for a
    primal ray with c'x = -1, x in K and ||Ax|| <= tol * (1 + ||b||).
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    m, n = sf.A.shape

    if n == 0:
        return SolveResult(
            status="optimal", objective=sf.obj_const, primal=np.zeros(0),
            dual=np.zeros(m), slack=np.zeros(0),
            residuals={"primal": 0.0, "dual": 0.0, "gap": 0.0, "cone": 0.0},
            iterations=0, wall_time=time.perf_counter() - t0,
        )

    cones = _Cones(sf.n_free, sf.n_nonneg, sf.soc_dims)
    A = sf.A
    b = sf.b.astype(float)
    c_orig = sf.c.astype(float)
    c_scale = max(1.0, float(np.max(np.abs(c_orig))) if n else 1.0)
    c = c_orig / c_scale

    e = cones.identity()
    x = e.copy()
    s = e.copy()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    deg = cones.degree + 1

    bnorm = float(np.linalg.norm(b))
    cnorm = float(np.linalg.norm(c))
    kkt = _KKT(A, cones, opts.reg)
    trace: list[dict[str, float]] = []

    def finish(status: str, it: int) -> SolveResult:
        wall = time.perf_counter() - t0
        if status == "optimal":
            xs, ys, ss = x / tau, y / tau, s / tau
            res = kkt_residuals(sf, xs, ys * c_scale, ss * c_scale)
            obj = sf.obj_sign * float(c_orig @ xs) + sf.obj_const
            return SolveResult(
                status=status, objective=obj, primal=xs, dual=ys * c_scale,
                slack=ss * c_scale, residuals=res, iterations=it, wall_time=wall,
                values=sf.extract(xs), trace=trace,
            )
        if status == "infeasible":
            beta = float(b @ y)
            yc, sc = y / beta, s / beta
            return SolveResult(
                status=status, objective=None, primal=None, dual=yc * c_scale,
                slack=sc * c_scale,
                residuals={"certificate": float(np.linalg.norm(A.T @ yc + sc) / (1.0 + cnorm))},
                iterations=it, wall_time=wall, trace=trace,
            )
        if status == "unbounded":
            gam = -float(c @ x)
            xc = x / gam
            return SolveResult(
                status=status,
                objective=(-math.inf if sf.obj_sign > 0 else math.inf),
                primal=xc, dual=None, slack=None,
                residuals={"certificate": float(np.linalg.norm(A @ xc) / (1.0 + bnorm))},
                iterations=it, wall_time=wall, trace=trace,
            )
        xs = x / max(tau, 1e-300)
        res = kkt_residuals(sf, xs, y / max(tau, 1e-300) * c_scale, s / max(tau, 1e-300) * c_scale)
        return SolveResult(
            status=status, objective=None, primal=xs, dual=y / max(tau, 1e-300) * c_scale,
            slack=s / max(tau, 1e-300) * c_scale, residuals=res,
            iterations=it, wall_time=wall, trace=trace,
        )

    reg = opts.reg
    for it in range(opts.max_iter):
        rp = A @ x - b * tau
        rd = A.T @ y + s - c * tau
        rg = float(b @ y) - float(c @ x) - kappa
        mu = (cones.product(x, s) + tau * kappa) / deg

        pobj = float(c @ x) / tau
        dobj = float(b @ y) / tau
        pres = float(np.linalg.norm(rp)) / tau / (1.0 + bnorm)
        dres = float(np.linalg.norm(rd)) / tau / (1.0 + cnorm)
        gap = cones.product(x, s) / tau**2
        relgap = gap / max(1.0, abs(pobj))
        if opts.trace:
            trace.append(
                {"iter": it, "pobj": pobj * c_scale, "dobj": dobj * c_scale,
                 "pres": pres, "dres": dres, "gap": gap, "mu": mu,
                 "tau": tau, "kappa": kappa}
            )

        if pres <= opts.tol and dres <= opts.tol and relgap <= opts.tol:
            return finish("optimal", it)

        by = float(b @ y)
        cx = float(c @ x)
        if by > 0.0:
            pinf = float(np.linalg.norm(A.T @ (y / by) + s / by)) / (1.0 + cnorm)
            if pinf <= opts.tol and tau <= opts.tol * max(1.0, kappa):
                return finish("infeasible", it)
        if cx < 0.0:
            dinf = float(np.linalg.norm(A @ (x / -cx))) / (1.0 + bnorm)
            if dinf <= opts.tol and tau <= opts.tol * max(1.0, kappa):
                return finish("unbounded", it)

        try:
            scal = _Scaling(cones, x, s)
            kkt.factor(scal.h_values(), reg)
        except (RuntimeError, FloatingPointError):
            reg *= 100.0
            if reg > _REG_MAX:
                return finish("numerical_failure", it)
            continue

        lam = scal.lmbda
        lam_sq = scal.arrow_prod(lam, lam)

        ux, uy = kkt.solve(c, b)
        denom_base = float(b @ uy) - float(c @ ux) + kappa / tau

        def direction(sigma: float, corr: np.ndarray | None, corr_tk: float):
            eta = 1.0 - sigma
            rhs4 = sigma * mu * e - lam_sq
            if corr is not None:
                rhs4 -= corr
            rhs5 = sigma * mu - tau * kappa - corr_tk
            dt4 = scal.arrow_solve(rhs4)
            g4 = scal.mult_Winv(dt4)
            g4[: cones.nf] = 0.0
            vx, vy = kkt.solve(-eta * rd - g4, -eta * rp)
            numer = -eta * rg - float(b @ vy) + float(c @ vx) + rhs5 / tau
            dtau = numer / denom_base
            dx = vx + dtau * ux
            dy = vy + dtau * uy
            ds = g4 - scal.mult_Winv(scal.mult_Winv(dx))
            ds[: cones.nf] = 0.0
            dkappa = (rhs5 - kappa * dtau) / tau
            return dx, dy, ds, dtau, dkappa

        dxa, dya, dsa, dtaua, dkappaa = direction(0.0, None, 0.0)
        if not np.all(np.isfinite(dxa)) or not math.isfinite(dtaua):
            reg *= 100.0
            if reg > _REG_MAX:
                return finish("numerical_failure", it)
            continue

        alpha_a = min(
            cones.max_step(x, dxa),
            cones.max_step(s, dsa),
            (-tau / dtaua) if dtaua < 0 else math.inf,
            (-kappa / dkappaa) if dkappaa < 0 else math.inf,
        )
        alpha_a = min(1.0, alpha_a)
        mu_aff = (
            cones.product(x + alpha_a * dxa, s + alpha_a * dsa)
            + (tau + alpha_a * dtaua) * (kappa + alpha_a * dkappaa)
        ) / deg
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        corr = scal.arrow_prod(scal.mult_Winv(dxa), scal.mult_W(dsa))
        dx, dy, ds, dtau, dkappa = direction(sigma, corr, dtaua * dkappaa)
        if not np.all(np.isfinite(dx)) or not math.isfinite(dtau):
            reg *= 100.0
            if reg > _REG_MAX:
                return finish("numerical_failure", it)
            continue

        alpha = min(
            cones.max_step(x, dx),
            cones.max_step(s, ds),
            (-tau / dtau) if dtau < 0 else math.inf,
            (-kappa / dkappa) if dkappa < 0 else math.inf,
        )
        alpha = min(1.0, _STEP_FRAC * alpha)
        if alpha <= 1e-13:
            return finish("numerical_failure", it)

        x += alpha * dx
        y += alpha * dy
        s += alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa

    return finish("iteration_limit", opts.max_iter)
