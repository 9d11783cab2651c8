"""Tax-exclusive effective rates and aggregate summary figures.

Rates follow the tax-exclusive definition: incidence divided by expenditure
net of that incidence, in percent.  Expenditure is at purchasers' prices
(tax included), so the natural base is the final-demand matrix of the same
accounts the incidence was propagated from.  Cells are masked as not
determinable (ND) when expenditure is at or below a smallness threshold or
when the net base is nonpositive; masking is purely presentational and never
feeds back into totals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accounts import Activity, COMPONENT_ORDER, DemandComponent, N_COMPONENTS
from .engine import CoefficientSystem, IncidenceResult

#: Expenditure at or below this (currency millions) is too small for a
#: meaningful rate and is masked as ND.
DISPLAY_THRESHOLD = 1000.0


@dataclass(frozen=True)
class RateReport:
    """Effective rates by activity and component, plus the totals row.

    All matrices have one column per :data:`COMPONENT_ORDER` entry plus a
    trailing total-final-demand column (row sums over all six components).
    ``rates`` holds NaN wherever ``masked`` is True.
    """

    activities: tuple[Activity, ...]
    rates: np.ndarray  # (n, 7) percent
    masked: np.ndarray  # (n, 7) bool
    incidence: np.ndarray  # (n, 7)
    expenditure: np.ndarray  # (n, 7)
    total_rates: np.ndarray  # (7,) percent, from summed incidence/expenditure
    total_masked: np.ndarray  # (7,) bool
    component_shares: np.ndarray  # (6,) percent of grand total, NaN if undefined
    threshold: float
    diagnostics: tuple[str, ...] = ()


def _with_total_column(matrix: np.ndarray) -> np.ndarray:
    return np.column_stack([matrix, matrix.sum(axis=1)])


def _rate_cells(
    incidence: np.ndarray, expenditure: np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    net = expenditure - incidence
    masked = (expenditure <= threshold) | (net <= 0)
    rates = np.full(incidence.shape, np.nan)
    np.divide(100.0 * incidence, net, out=rates, where=~masked)
    return rates, masked


def effective_rates(
    result: IncidenceResult,
    expenditure,
    *,
    threshold: float = DISPLAY_THRESHOLD,
) -> RateReport:
    """Compute tax-exclusive effective rates against an expenditure base.

    ``expenditure`` is an (n, 6) matrix of final-demand expenditure at
    purchasers' prices, aligned with the result's activities and with
    :data:`COMPONENT_ORDER`.  Every unmasked cell satisfies
    ``rate = 100 * incidence / (expenditure - incidence)``; cells where the
    net base is nonpositive despite expenditure above the threshold are
    masked and reported in ``diagnostics`` rather than raising.
    """
    expenditure = np.asarray(expenditure, dtype=float)
    n = len(result.activities)
    if expenditure.shape != (n, N_COMPONENTS):
        raise ValueError(
            f"expenditure must be {n}x{N_COMPONENTS}, got {expenditure.shape}"
        )

    incidence7 = _with_total_column(result.final_incidence)
    expenditure7 = _with_total_column(expenditure)
    rates, masked = _rate_cells(incidence7, expenditure7, threshold)

    diagnostics = []
    labels = [c.value for c in COMPONENT_ORDER] + ["total"]
    suspicious = masked & (expenditure7 > threshold)
    for i, j in zip(*np.nonzero(suspicious)):
        diagnostics.append(
            f"{result.activities[i].code} / {labels[j]}: expenditure "
            f"{expenditure7[i, j]:.6g} does not exceed incidence "
            f"{incidence7[i, j]:.6g}; rate masked as ND"
        )

    total_incidence = incidence7.sum(axis=0, keepdims=True)
    total_expenditure = expenditure7.sum(axis=0, keepdims=True)
    total_rates, total_masked = _rate_cells(total_incidence, total_expenditure, threshold)

    grand = result.grand_total
    if grand == 0:
        shares = np.full(N_COMPONENTS, np.nan)
        diagnostics.append("grand-total incidence is zero; component shares undefined")
    else:
        shares = 100.0 * result.component_totals / grand

    return RateReport(
        activities=result.activities,
        rates=rates,
        masked=masked,
        incidence=incidence7,
        expenditure=expenditure7,
        total_rates=total_rates[0],
        total_masked=total_masked[0],
        component_shares=shares,
        threshold=threshold,
        diagnostics=tuple(diagnostics),
    )


def component_shares(result: IncidenceResult) -> np.ndarray:
    """Each component's share of grand-total final incidence, in percent."""
    grand = result.grand_total
    if grand == 0:
        raise ValueError("grand-total incidence is zero; shares are undefined")
    return 100.0 * result.component_totals / grand


def first_stage_intermediate_share(system: CoefficientSystem) -> float:
    """Percent of statutory tax that lands on intermediate demand at stage one."""
    total = system.statutory_total
    if total == 0:
        raise ValueError("statutory total is zero; share is undefined")
    return 100.0 * float(system.intermediate_tax.sum()) / total


def single_rate_equivalent(result: IncidenceResult, expenditure) -> float:
    """The one household-consumption rate that would raise the same revenue.

    Grand-total incidence divided by household expenditure net of the
    incidence already borne by households, in percent.
    """
    expenditure = np.asarray(expenditure, dtype=float)
    n = len(result.activities)
    if expenditure.shape != (n, N_COMPONENTS):
        raise ValueError(
            f"expenditure must be {n}x{N_COMPONENTS}, got {expenditure.shape}"
        )
    household = DemandComponent.HOUSEHOLDS.column
    net_base = float(
        expenditure[:, household].sum() - result.final_incidence[:, household].sum()
    )
    if net_base <= 0:
        raise ValueError(f"household net expenditure base must be positive, got {net_base}")
    return 100.0 * result.grand_total / net_base
