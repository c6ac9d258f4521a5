"""Lifted nonlinear cuts on the voltage product and their projections.

Each branch yields two valid linear inequalities over the lifted variables
(wr, wi, w_i, w_j) -- the real/imaginary parts of the from-to voltage product
and the squared voltage magnitudes.  They are derived from the voltage and
angle-difference bounds, so tighter bounds give stronger cuts.  For
formulations that do not carry wr/wi as variables, the cuts are projected
through the branch-flow equations: wr/wi become affine expressions in the
flow variables (and, for the convex DistFlow form, the squared series
current), composed with the transformer rotation back to bus level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from opfrelax.netmodel import Branch, Bus, branch_constants


@dataclass(frozen=True)
class CutCoefficients:
    """One linear cut a_wr*wr + a_wi*wi + a_wf*w_i + a_wt*w_j >= rhs."""

    kind: str  # "upper" (built from v_hi) or "lower" (built from v_lo)
    phi: float  # angle-window center
    delta: float  # angle-window half-width
    vsig_i: float  # v_lo_i + v_hi_i
    vsig_j: float
    a_wr: float
    a_wi: float
    a_wf: float
    a_wt: float
    rhs: float

    def evaluate(self, wr: float, wi: float, w_i: float, w_j: float) -> float:
        """Left-hand side minus rhs; nonnegative on valid points."""
        return (
            self.a_wr * wr + self.a_wi * wi + self.a_wf * w_i + self.a_wt * w_j - self.rhs
        )


def make_lnc_wspace(br: Branch, bus_fr: Bus, bus_to: Bus) -> tuple[CutCoefficients, CutCoefficients]:
    """Both cuts for one branch, in the lifted voltage-product space.

    Requires an angle window narrower than pi (cos of the half-width must be
    positive); parsing and bound tightening maintain that invariant.
    """
    phi = (br.ang_hi + br.ang_lo) / 2.0
    delta = (br.ang_hi - br.ang_lo) / 2.0
    cd = math.cos(delta)
    if cd <= 0.0:
        raise ValueError(
            f"branch {br.from_bus}-{br.to_bus}: angle half-width {delta:.4f} rad "
            "has nonpositive cosine; cuts are undefined"
        )
    vli, vui = bus_fr.v_lo, bus_fr.v_hi
    vlj, vuj = bus_to.v_lo, bus_to.v_hi
    sig_i, sig_j = vli + vui, vlj + vuj
    common_wr = sig_i * sig_j * math.cos(phi)
    common_wi = sig_i * sig_j * math.sin(phi)
    upper = CutCoefficients(
        kind="upper",
        phi=phi,
        delta=delta,
        vsig_i=sig_i,
        vsig_j=sig_j,
        a_wr=common_wr,
        a_wi=common_wi,
        a_wf=-vuj * cd * sig_j,
        a_wt=-vui * cd * sig_i,
        rhs=vui * vuj * cd * (vli * vlj - vui * vuj),
    )
    lower = CutCoefficients(
        kind="lower",
        phi=phi,
        delta=delta,
        vsig_i=sig_i,
        vsig_j=sig_j,
        a_wr=common_wr,
        a_wi=common_wi,
        a_wf=-vlj * cd * sig_j,
        a_wt=-vli * cd * sig_i,
        rhs=vli * vlj * cd * (vui * vuj - vli * vlj),
    )
    return upper, lower


def series_product_nf(br: Branch) -> tuple[dict[str, float], dict[str, float]]:
    """Affine forms of the series voltage product over {w_i, p_fr, q_fr}.

    Solving the line-flow equation for the voltage product gives
    W' = w' - conj(Z) * S_series, with w' the squared voltage behind the
    transformer and S_series the flow net of the from-side shunt.  Returns
    (ws_r, ws_i) as coefficient dictionaries.
    """
    k = branch_constants(br)
    # p_s = p_fr - g_fr*w_i/tm2, q_s = q_fr + b_fr*w_i/tm2
    ws_r = {
        "w_i": (1.0 + br.r * k.g_fr - br.x * k.b_fr) / k.tm2,
        "p_fr": -br.r,
        "q_fr": -br.x,
    }
    ws_i = {
        "w_i": -(br.x * k.g_fr + br.r * k.b_fr) / k.tm2,
        "p_fr": br.x,
        "q_fr": -br.r,
    }
    return ws_r, ws_i


def series_product_cdf(br: Branch) -> tuple[dict[str, float], dict[str, float]]:
    """Affine forms of the series voltage product over CDF variables.

    The real part averages the two squared end voltages minus the squared
    series current scaled by the squared admittance magnitude; keeping the
    current variable in the real part is what distinguishes this projection
    from the flow-only one.  The imaginary part matches the flow-based form.
    """
    k = branch_constants(br)
    ymag2 = k.g * k.g + k.b * k.b
    ws_r = {
        "w_i": 0.5 / k.tm2,
        "w_j": 0.5,
        "L": -0.5 / ymag2,
    }
    _, ws_i = series_product_nf(br)
    return ws_r, ws_i


def _rotate_and_combine(
    br: Branch, cut: CutCoefficients, ws_r: dict[str, float], ws_i: dict[str, float]
) -> dict[str, float]:
    """Compose cut coefficients with the tap rotation and the series forms.

    The bus-level product is tau * exp(i*shift) times the series one, so
    a_wr*wr + a_wi*wi = k_r*ws_r + k_i*ws_i with the rotated weights below.
    """
    k = branch_constants(br)
    k_r = cut.a_wr * k.tr + cut.a_wi * k.ti
    k_i = -cut.a_wr * k.ti + cut.a_wi * k.tr
    row: dict[str, float] = {}
    for term, coef in ws_r.items():
        row[term] = row.get(term, 0.0) + k_r * coef
    for term, coef in ws_i.items():
        row[term] = row.get(term, 0.0) + k_i * coef
    row["w_i"] = row.get("w_i", 0.0) + cut.a_wf
    row["w_j"] = row.get("w_j", 0.0) + cut.a_wt
    return row


def project_nf(br: Branch, cut: CutCoefficients) -> tuple[dict[str, float], float]:
    """Cut as a linear row over {w_i, w_j, p_fr, q_fr}, sense >= rhs."""
    ws_r, ws_i = series_product_nf(br)
    return _rotate_and_combine(br, cut, ws_r, ws_i), cut.rhs


def project_cdf(br: Branch, cut: CutCoefficients) -> tuple[dict[str, float], float]:
    """Cut as a linear row over {w_i, w_j, L, p_fr, q_fr}, sense >= rhs."""
    ws_r, ws_i = series_product_cdf(br)
    return _rotate_and_combine(br, cut, ws_r, ws_i), cut.rhs
