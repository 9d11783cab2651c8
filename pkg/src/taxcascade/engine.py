"""Multi-stage propagation of input taxes to final demand.

The share matrices here are row-normalized by the SUPPLYING activity: entry
(i, j) of ``intermediate_shares`` is the fraction of activity i's total supply
delivered to activity j, and row i of ``final_shares`` is the fraction
delivered to each final-demand component.  This is not the usual
column-normalized technical-coefficient convention; each row of
[intermediate_shares | final_shares] sums to one, which is exactly what makes
the cascade conserve tax mass.

First-stage tax destined to intermediate use is a cost of the purchasing
activities and is passed on stage by stage through those supply shares until
it reaches final demand.  Two routes compute the limit: a closed-form linear
solve and an explicit truncated stage loop; they must agree and are
cross-checked in the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs, lu_factor, lu_solve

from .accounts import Activity, IOAccounts, N_COMPONENTS, TaxDestinationTable

#: Abort the closed form when the 1-norm condition estimate exceeds this.
CONDITION_LIMIT = 1e12
#: Default stopping tolerance for the truncated stage loop (fraction of the
#: first-stage intermediate mass still circulating).
TRUNCATION_TOL = 1e-12
#: Default relative tolerance for the conservation identity
#: total final incidence == total statutory tax.
CONSERVATION_RTOL = 1e-9
#: Rows of [intermediate_shares | final_shares] should sum to 1 within this;
#: beyond it conservation degrades to the imbalance scale and we warn.
ROW_SHARE_ATOL = 1e-9


class SingularSystemError(RuntimeError):
    """The inter-activity share structure leaves (I - shares) unsolvable."""


@dataclass(frozen=True)
class CoefficientSystem:
    """Share matrices and first-stage incidence extracted from accounts."""

    activities: tuple[Activity, ...]
    intermediate_shares: np.ndarray  # (n, n) supplier-normalized supply shares
    final_shares: np.ndarray  # (n, 6)
    intermediate_tax: np.ndarray  # (n,) first-stage tax on intermediate demand
    final_tax: np.ndarray  # (n, 6) first-stage tax on final demand

    @property
    def n(self) -> int:
        return len(self.activities)

    @property
    def statutory_total(self) -> float:
        return float(self.intermediate_tax.sum() + self.final_tax.sum())


def build_system(
    accounts: IOAccounts, *, allow_unredistributed_margins: bool = False
) -> CoefficientSystem:
    """Normalize accounts into a :class:`CoefficientSystem`.

    Margin shares must already be redistributed (all zero); pass
    ``allow_unredistributed_margins=True`` to skip that step deliberately.
    Zero-supply activities get all-zero share rows; tax destined to their
    intermediate use can then never reach final demand, so a warning is
    issued and the conservation residual will show the trapped amount.
    """
    if accounts.marginshares.any() and not allow_unredistributed_margins:
        raise ValueError(
            "accounts still carry margin shares; run redistribute_margins first "
            "or pass allow_unredistributed_margins=True"
        )
    supply = accounts.supply
    n = accounts.n
    safe = np.where(supply > 0, supply, 1.0)[:, None]
    producing = supply > 0
    shares = np.where(producing[:, None], accounts.flows / safe, 0.0)
    final_shares = np.where(producing[:, None], accounts.finaldemand / safe, 0.0)

    rowsums = shares.sum(axis=1) + final_shares.sum(axis=1)
    off = np.abs(rowsums[producing] - 1.0)
    if off.size and off.max() > ROW_SHARE_ATOL:
        warnings.warn(
            f"supply-share rows deviate from 1 by up to {off.max():.3e}; "
            "conservation of propagated tax degrades to that scale",
            stacklevel=2,
        )

    intermediate_tax = accounts.taxdest.intermediate.sum(axis=1)
    final_tax = accounts.taxdest.final.copy()

    trapped = (~producing) & (intermediate_tax > 0)
    if trapped.any():
        names = ", ".join(accounts.codes[i] for i in np.flatnonzero(trapped))
        warnings.warn(
            f"tax on intermediate demand of zero-supply activities cannot be "
            f"propagated: {names}",
            stacklevel=2,
        )

    return CoefficientSystem(
        activities=accounts.activities,
        intermediate_shares=shares,
        final_shares=final_shares,
        intermediate_tax=intermediate_tax,
        final_tax=final_tax,
    )


@dataclass(frozen=True)
class IncidenceResult:
    """Final incidence of the taxes in one coefficient system.

    ``final_incidence = first_stage_final + subsequent_stage``; its grand
    total must match the statutory total up to ``conservation_rtol`` whenever
    the stage series converged.
    """

    activities: tuple[Activity, ...]
    first_stage_intermediate: np.ndarray  # (n,)
    first_stage_final: np.ndarray  # (n, 6)
    subsequent_stage: np.ndarray  # (n, 6) incidence arriving after stage one
    final_incidence: np.ndarray  # (n, 6)
    method: str  # "closed-form" or "truncated"
    stages: int | None  # accumulated stages (truncated only)
    series_residual: float  # tax mass never delivered to final demand
    converged: bool
    conservation_rtol: float

    @property
    def component_totals(self) -> np.ndarray:
        return self.final_incidence.sum(axis=0)

    @property
    def grand_total(self) -> float:
        return float(self.final_incidence.sum())

    @property
    def statutory_total(self) -> float:
        return float(self.first_stage_intermediate.sum() + self.first_stage_final.sum())

    @property
    def conservation_residual(self) -> float:
        """Signed difference between delivered and statutory totals."""
        return self.grand_total - self.statutory_total

    @property
    def conservation_relative(self) -> float:
        return abs(self.conservation_residual) / max(1.0, abs(self.statutory_total))

    @property
    def conserved(self) -> bool:
        return self.conservation_relative <= self.conservation_rtol


def _result(
    system: CoefficientSystem,
    subsequent: np.ndarray,
    *,
    method: str,
    stages: int | None,
    series_residual: float,
    converged: bool,
    conservation_rtol: float,
) -> IncidenceResult:
    return IncidenceResult(
        activities=system.activities,
        first_stage_intermediate=system.intermediate_tax.copy(),
        first_stage_final=system.final_tax.copy(),
        subsequent_stage=subsequent,
        final_incidence=system.final_tax + subsequent,
        method=method,
        stages=stages,
        series_residual=series_residual,
        converged=converged,
        conservation_rtol=conservation_rtol,
    )


def propagate_closed_form(
    system: CoefficientSystem,
    *,
    condition_limit: float = CONDITION_LIMIT,
    conservation_rtol: float = CONSERVATION_RTOL,
) -> IncidenceResult:
    """Propagate the full stage series at once via a linear solve.

    The cumulative intermediate mass v solves (I - shares)' v = intermediate
    tax; the subsequent-stage incidence is v scaled by each activity's
    final-demand shares.  The system is LU-factorized and its condition
    estimated (LAPACK gecon); an estimate beyond ``condition_limit`` raises
    :class:`SingularSystemError`, in which case :func:`propagate_truncated`
    can still show how mass circulates in such structures.
    """
    n = system.n
    lhs = (np.eye(n) - system.intermediate_shares).T
    anorm = np.linalg.norm(lhs, 1)
    with warnings.catch_warnings():
        # lu_factor warns about exactly singular factors; the rcond gate
        # below turns that case into a typed error instead.
        warnings.simplefilter("ignore")
        lu, piv = lu_factor(lhs)
    gecon = get_lapack_funcs("gecon", (lhs,))
    rcond, info = gecon(lu, anorm)
    if info != 0:
        raise SingularSystemError(f"condition estimation failed (info={info})")
    if rcond == 0 or 1.0 / rcond > condition_limit:
        estimate = "inf" if rcond == 0 else f"{1.0 / rcond:.3e}"
        raise SingularSystemError(
            f"(I - intermediate_shares) is singular or near-singular "
            f"(condition estimate {estimate} exceeds {condition_limit:.1e}); "
            "the truncated method can propagate such systems stage by stage"
        )
    cumulative = lu_solve((lu, piv), system.intermediate_tax)
    subsequent = cumulative[:, None] * system.final_shares
    result = _result(
        system,
        subsequent,
        method="closed-form",
        stages=None,
        series_residual=0.0,
        converged=True,
        conservation_rtol=conservation_rtol,
    )
    # The solve itself reports conservation honestly via the residual; zero
    # final-demand shares with trapped mass show up there, not as an error.
    return result


def propagate_truncated(
    system: CoefficientSystem,
    tol: float = TRUNCATION_TOL,
    maxstages: int = 10000,
    *,
    conservation_rtol: float = CONSERVATION_RTOL,
) -> IncidenceResult:
    """Propagate stage by stage, truncating the series explicitly.

    At each stage the mass sitting on intermediate demand hands its
    final-demand share out and passes the rest along the supply shares.  The
    loop stops once the circulating mass drops to ``tol`` times the
    first-stage intermediate mass (absolute sums, so oscillating signed
    entries cannot fake convergence), or after ``maxstages`` stages with
    ``converged=False``.  Either way the undelivered mass is recorded as
    ``series_residual``, never silently dropped.
    """
    if maxstages < 1:
        raise ValueError(f"maxstages must be at least 1, got {maxstages}")
    if tol < 0:
        raise ValueError(f"tol must be nonnegative, got {tol}")
    shares_t = system.intermediate_shares.T
    scale = float(np.abs(system.intermediate_tax).sum())
    mass = system.intermediate_tax.copy()
    subsequent = np.zeros((system.n, N_COMPONENTS))
    stages = 0
    converged = False
    while stages < maxstages:
        subsequent += mass[:, None] * system.final_shares
        mass = shares_t @ mass
        stages += 1
        if float(np.abs(mass).sum()) <= tol * scale:
            converged = True
            break
    return _result(
        system,
        subsequent,
        method="truncated",
        stages=stages,
        series_residual=float(mass.sum()),
        converged=converged,
        conservation_rtol=conservation_rtol,
    )


def apply_scenario(accounts: IOAccounts, scale) -> IOAccounts:
    """Scale each activity's tax-destination row; flows and supply are untouched.

    ``scale`` is a length-n nonnegative vector (1.0 leaves an activity alone,
    0.0 removes its taxes, 2.0 doubles them).  Statutory amounts are recomputed
    from the scaled destination rows.
    """
    scale = np.asarray(scale, dtype=float)
    if scale.shape != (accounts.n,):
        raise ValueError(
            f"scale must have length {accounts.n}, got shape {scale.shape}"
        )
    if (scale < 0).any():
        bad = np.flatnonzero(scale < 0)
        names = ", ".join(accounts.codes[i] for i in bad)
        raise ValueError(f"negative scenario scale for: {names}")
    dest = accounts.taxdest.dest * scale[:, None]
    return IOAccounts(
        activities=accounts.activities,
        flows=accounts.flows,
        finaldemand=accounts.finaldemand,
        supply=accounts.supply,
        taxdest=TaxDestinationTable(dest=dest, statutory=dest.sum(axis=1)),
        marginshares=accounts.marginshares,
        metadata=accounts.metadata,
    )
