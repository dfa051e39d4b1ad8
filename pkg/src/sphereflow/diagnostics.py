"""Reported quantities and identity audits for flow runs.

Residuals are always scaled by (1 + magnitude of the audited quantity) so
that near-zero identities do not blow up the ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import dirichlet_energy, l1_nodal_norm


@dataclass
class StepRecord:
    """One row of the per-step trace; NaN marks a not-applicable audit."""

    n: int
    time: float
    norm_udot_star: float
    norm_dtu_l2: float
    energy: float
    delta_uni: float
    res_energy_law: float = math.nan
    res_nodal_recursion: float = math.nan


@dataclass
class RunReport:
    """Per-run record of stopping data, diagnostics and identity residuals."""

    method: str
    metric: str
    tau: float
    n_stop: int
    converged: bool
    energy_final: float
    delta_uni: float
    delta_ener: float
    a_sq: float
    b_sq: float
    trace: list[StepRecord] = field(default_factory=list)
    res_init: float = math.nan
    res_energy_law: float = math.nan
    res_nodal_recursion: float = math.nan
    res_closed_form: float = math.nan
    mono_violation: float = math.nan
    u_final: np.ndarray | None = None


@dataclass
class SweepRow:
    tau: float
    report: RunReport
    eoc_uni: float | None = None
    eoc_ener: float | None = None


def relative_residual(lhs, rhs):
    """|lhs - rhs| / (1 + |lhs| + |rhs|), elementwise maximum for arrays."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    res = np.abs(lhs - rhs) / (1.0 + np.abs(lhs) + np.abs(rhs))
    return float(res.max()) if res.ndim else float(res)


def constraint_violation(u, mesh, weights=None):
    """Lumped L1 norm of the nodal unit-length defect |u|^2 - 1."""
    u = np.asarray(u, dtype=float)
    defect = np.sum(u * u, axis=1) - 1.0
    return l1_nodal_norm(defect, mesh, weights=weights)


def energy_error(u, stiffness, reference_energy):
    """Absolute distance of the field's energy from a reference value."""
    return abs(dirichlet_energy(u, stiffness) - reference_energy)


def eoc(coarse, fine):
    """Convergence order log2(coarse/fine) under step halving.

    Returns None when either value is nonpositive (the order is undefined).
    """
    if coarse <= 0 or fine <= 0:
        return None
    return math.log2(coarse / fine)


def nodal_recursion_residual(u_n, u_prev, u_prev2, tau):
    """Per-node defect of the squared-length difference equation.

    The orthogonality of the two-step derivative to the extrapolated state
    forces (3/2)|u_n|^2 - 2|u_prev|^2 + (1/2)|u_prev2|^2 to equal
    (3/2) tau^4 |second difference|^2 node by node.  Returns the worst
    scaled residual over the given nodal values.
    """
    sq_n = np.sum(u_n * u_n, axis=-1)
    sq_p = np.sum(u_prev * u_prev, axis=-1)
    sq_p2 = np.sum(u_prev2 * u_prev2, axis=-1)
    d2 = (u_n - 2.0 * u_prev + u_prev2) / tau**2
    lhs = 1.5 * sq_n - 2.0 * sq_p + 0.5 * sq_p2
    rhs = 1.5 * tau**4 * np.sum(d2 * d2, axis=-1)
    return relative_residual(lhs, rhs)


def audit_summary(report):
    """Collect the identity residuals of a finished run.

    Returns a dict with the initialization identity, the telescoped energy
    law, the worst per-step nodal recursion, the closed-form constraint
    audit, and the worst monotonicity violation.  Both step-law entries are
    NaN (skipped) for pure Euler runs, which have no two-step identities.
    """
    return {
        "res_init": report.res_init,
        "res_energy_law": report.res_energy_law,
        "res_nodal_recursion": report.res_nodal_recursion,
        "res_closed_form": report.res_closed_form,
        "mono_violation": report.mono_violation,
    }


def audit_identities(report, tol=1e-8, mono_slack=1e-9):
    """Pass/fail view of :func:`audit_summary`.

    NaN residuals count as skipped, not failed.  Returns (passed, summary).
    """
    summary = audit_summary(report)
    passed = True
    for key, value in summary.items():
        if math.isnan(value):
            continue
        limit = mono_slack if key == "mono_violation" else tol
        if value > limit:
            passed = False
    return passed, summary


def build_sweep_table(taus, reports):
    """Pair sweep runs with experimental orders between consecutive rows.

    Orders are defined only across a halving step and are suppressed when
    either participating run failed to converge.
    """
    rows = []
    for i, (tau, report) in enumerate(zip(taus, reports)):
        eoc_uni = eoc_ener = None
        if i > 0:
            prev = rows[i - 1]
            halved = abs(tau - 0.5 * prev.tau) <= 1e-12 * prev.tau
            if halved and report.converged and prev.report.converged:
                eoc_uni = eoc(prev.report.delta_uni, report.delta_uni)
                eoc_ener = eoc(prev.report.delta_ener, report.delta_ener)
        rows.append(SweepRow(tau, report, eoc_uni, eoc_ener))
    return rows
