"""
Ex-Ante Pricing and Settlement

Turns a central solution into bus prices announced before consumption,
settles the period under net metering and checks that decentralized best
responses to the announced prices reproduce the central optimum.

Price thresholds and the balanced price are found from individual best
responses only, so the operator never needs the prosumers' utilities.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config_manager import SolverSettings
from core.errors import (
    DimensionError,
    EquilibriumViolation,
    RootBracketError,
    SettlementMismatch,
)
from core.network import SensitivityMatrices
from core.prosumer import ConsumptionBundle, Prosumer, respond, utility
from core.welfare import (
    SIGN_TOL,
    Duals,
    MarketSolution,
    Regime,
    Tariff,
    bracketed_root,
    regime_bus_prices,
    solve_central,
)

logger = logging.getLogger("gridshare.pricing")

DualsArg = Union[Duals, Tuple[Duals, Duals]]

# Relative bound on the operator balance, absolute bound on payment uniformity
SETTLEMENT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PriceSchedule:
    """Announced bus prices and the thresholds that selected the regime."""

    regime: Regime
    sigma1: float
    sigma2: float
    G0: float
    bus_price: np.ndarray
    duals: Duals

    def price_at(self, bus: int) -> float:
        return float(self.bus_price[bus - 1])


@dataclass(frozen=True, eq=False)
class Settlement:
    """Per-prosumer charges of one netting period."""

    prosumer_ids: Tuple[int, ...]
    buses: np.ndarray
    z: np.ndarray
    bus_price: np.ndarray
    ex_ante_charge: np.ndarray
    allocation: np.ndarray
    final_payment: np.ndarray
    Z0: float
    nem_price: float
    nem_cost: float
    operator_balance: float

    def records(self) -> List[Dict[str, float]]:
        return [
            {
                'prosumer_id': pid,
                'bus': int(self.buses[n]),
                'z_kwh': float(self.z[n]),
                'bus_price_usd_per_kwh': float(self.bus_price[n]),
                'ex_ante_charge_usd': float(self.ex_ante_charge[n]),
                'allocation_usd': float(self.allocation[n]),
                'final_payment_usd': float(self.final_payment[n]),
            }
            for n, pid in enumerate(self.prosumer_ids)
        ]


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    """Comparison of decentralized best responses with the central optimum."""

    passed: bool
    max_deviation: float
    worst_prosumer: Optional[int]
    central_welfare: float
    decentralized_welfare: float
    welfare_gap: float
    tol: float
    responses: Tuple[ConsumptionBundle, ...] = ()
    settlement: Optional[Settlement] = None


def chi_kappa(sens: SensitivityMatrices, duals: Duals, tariff: Tariff,
              kappa: Regime) -> np.ndarray:
    """Bus prices of regime ``kappa`` under the given multipliers."""
    return regime_bus_prices(sens, tariff, kappa, duals)


def aggregate_consumption(prosumers: Sequence[Prosumer], bus_price: np.ndarray,
                          tol: float = 1e-10) -> float:
    """Total consumption when every prosumer answers its own bus price."""
    return math.fsum(float(np.sum(respond(p, float(bus_price[p.bus - 1]), tol).d))
                     for p in prosumers)


def _split_duals(duals: DualsArg) -> Tuple[Duals, Duals]:
    if isinstance(duals, Duals):
        return duals, duals
    plus, minus = duals
    return plus, minus


def thresholds(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], tariff: Tariff,
               duals: DualsArg) -> Tuple[float, float]:
    """Aggregate consumption at the import and export prices.

    ``duals`` is one multiplier set or an ``(import, export)`` pair.
    """
    plus, minus = _split_duals(duals)
    sigma1 = aggregate_consumption(prosumers, chi_kappa(sens, plus, tariff, Regime.IMPORT))
    sigma2 = aggregate_consumption(prosumers, chi_kappa(sens, minus, tariff, Regime.EXPORT))
    return sigma1, sigma2


def classify_regime(G0: float, sigma1: float, sigma2: float) -> Regime:
    """Threshold rule: import below ``sigma1``, export above ``sigma2``."""
    if sigma1 - G0 > SIGN_TOL:
        return Regime.IMPORT
    if G0 - sigma2 > SIGN_TOL:
        return Regime.EXPORT
    return Regime.BALANCED


def solve_mu(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], duals: Duals,
             G0: float, tariff: Tariff, settings: Optional[SolverSettings] = None) -> float:
    """Uniform price at which aggregate consumption equals generation ``G0``.

    Bisection on ``[pi_minus - spread, pi_plus + spread]``, widened up to
    ``mu_expansions`` times.

    Raises:
        RootBracketError: the bracket never encloses a sign change
    """
    settings = settings or SolverSettings()
    shift = sens.R_kwh.T @ duals.y
    spread = float(np.max(np.abs(shift), initial=0.0))

    def excess(mu: float) -> float:
        return aggregate_consumption(prosumers, mu - shift, settings.envelope_tol) - G0

    try:
        return bracketed_root(excess, tariff.pi_minus - spread, tariff.pi_plus + spread,
                              expansions=settings.mu_expansions, xtol=settings.mu_tol)
    except RootBracketError as e:
        raise e.with_context(G0=G0)


def _candidate_duals(sol: MarketSolution, regime: Regime) -> Duals:
    outcome = sol.candidates.get(regime)
    if outcome is not None and outcome.solution is not None:
        return outcome.solution.duals
    return sol.duals


def ex_ante_prices(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], tariff: Tariff,
                   sol: MarketSolution, settings: Optional[SolverSettings] = None) -> PriceSchedule:
    """Announce bus prices for the period from the central multipliers."""
    settings = settings or SolverSettings()
    plus = _candidate_duals(sol, Regime.IMPORT)
    minus = _candidate_duals(sol, Regime.EXPORT)
    sigma1, sigma2 = thresholds(sens, prosumers, tariff, (plus, minus))
    if sigma1 - sigma2 > SIGN_TOL * max(1.0, abs(sigma2)):
        logger.warning("import threshold %.10g exceeds export threshold %.10g", sigma1, sigma2)
    G0 = math.fsum(p.g for p in prosumers)
    regime = classify_regime(G0, sigma1, sigma2)

    if regime is Regime.IMPORT:
        used = plus
    elif regime is Regime.EXPORT:
        used = minus
    else:
        balanced = _candidate_duals(sol, Regime.BALANCED)
        mu = solve_mu(sens, prosumers, balanced, G0, tariff, settings)
        used = Duals(eta_up=balanced.eta_up, eta_lo=balanced.eta_lo, mu=mu)

    if regime is not sol.regime:
        logger.warning("threshold rule selects %s, central solution is %s",
                       regime.value, sol.regime.value)

    return PriceSchedule(
        regime=regime,
        sigma1=sigma1,
        sigma2=sigma2,
        G0=G0,
        bus_price=chi_kappa(sens, used, tariff, regime),
        duals=used,
    )


def settle(schedule: PriceSchedule, tariff: Tariff, z: Sequence[float],
           prosumers: Sequence[Prosumer]) -> Settlement:
    """Charge ex-ante prices, then allocate the difference to the net-metering bill.

    Every prosumer ends up paying the net-metering price of the aggregate
    times its own net consumption.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (len(prosumers),):
        raise DimensionError(f"expected {len(prosumers)} net consumptions, got shape {z.shape}")
    buses = np.array([p.bus for p in prosumers])
    prices = schedule.bus_price[buses - 1]
    Z0 = math.fsum(z)
    nem_price = tariff.nem_price(Z0)

    ex_ante = prices * z
    final = nem_price * z
    allocation = ex_ante - final
    nem_cost = tariff.nem_cost(Z0)

    return Settlement(
        prosumer_ids=tuple(p.id for p in prosumers),
        buses=buses,
        z=z,
        bus_price=prices,
        ex_ante_charge=ex_ante,
        allocation=allocation,
        final_payment=final,
        Z0=Z0,
        nem_price=nem_price,
        nem_cost=nem_cost,
        operator_balance=math.fsum(final) - nem_cost,
    )


@dataclass(frozen=True)
class SettlementCheck:
    """Budget neutrality and payment uniformity residuals of a settlement."""

    operator_balance: float
    neutrality_bound: float
    max_uniformity_gap: float
    tol: float

    @property
    def neutral(self) -> bool:
        return abs(self.operator_balance) <= self.neutrality_bound

    @property
    def uniform(self) -> bool:
        return self.max_uniformity_gap <= self.tol

    @property
    def passed(self) -> bool:
        return self.neutral and self.uniform


def audit_settlement(settlement: Settlement, tol: float = SETTLEMENT_TOL,
                     raise_on_failure: bool = False) -> SettlementCheck:
    """Recompute the operator balance and every payment against the tariff price.

    Raises:
        SettlementMismatch: ``raise_on_failure`` is set and a residual exceeds ``tol``
    """
    balance = math.fsum(settlement.final_payment) - settlement.nem_cost
    gaps = np.abs(settlement.final_payment - settlement.nem_price * settlement.z)
    check = SettlementCheck(
        operator_balance=balance,
        neutrality_bound=tol * max(1.0, abs(settlement.nem_cost)),
        max_uniformity_gap=float(np.max(gaps, initial=0.0)),
        tol=tol,
    )
    if raise_on_failure and not check.passed:
        raise SettlementMismatch(
            f"operator balance {balance:.3e} $ (bound {check.neutrality_bound:.1e}), "
            f"payment gap {check.max_uniformity_gap:.3e} $"
        )
    return check


def check_equilibrium(sol: MarketSolution, schedule: PriceSchedule,
                      prosumers: Sequence[Prosumer], tariff: Tariff, tol: float = 1e-6,
                      raise_on_failure: bool = True) -> EquilibriumReport:
    """Query every prosumer at the announced price and compare with ``sol``.

    Raises:
        EquilibriumViolation: a response or the total surplus deviates beyond ``tol``
    """
    if len(sol.d) != len(prosumers):
        raise DimensionError(f"solution covers {len(sol.d)} prosumers, got {len(prosumers)}")

    responses = tuple(respond(p, schedule.price_at(p.bus)) for p in prosumers)
    deviations = [float(np.max(np.abs(r.d - central)))
                  for r, central in zip(responses, sol.d)]
    worst = int(np.argmax(deviations))
    max_deviation = deviations[worst]

    settlement = settle(schedule, tariff, [r.z for r in responses], prosumers)
    decentralized = math.fsum(utility(p, r.d) - settlement.final_payment[n]
                              for n, (p, r) in enumerate(zip(prosumers, responses)))
    gap = abs(decentralized - sol.welfare)

    passed = max_deviation <= tol and gap <= tol * max(1.0, abs(sol.welfare))
    report = EquilibriumReport(
        passed=passed,
        max_deviation=max_deviation,
        worst_prosumer=prosumers[worst].id,
        central_welfare=sol.welfare,
        decentralized_welfare=decentralized,
        welfare_gap=gap,
        tol=tol,
        responses=responses,
        settlement=settlement,
    )
    if not passed:
        logger.warning("equilibrium check failed: deviation %.3e at prosumer %d, "
                       "welfare gap %.3e", max_deviation, prosumers[worst].id, gap)
        if raise_on_failure:
            raise EquilibriumViolation(
                f"best responses deviate from the central optimum by {max_deviation:.3e} "
                f"(prosumer {prosumers[worst].id}), welfare gap {gap:.3e}",
                worst_prosumer=prosumers[worst].id,
                deviation=max_deviation,
            )
    return report


def verify_equilibrium(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], tariff: Tariff,
                       tol: float = 1e-6,
                       settings: Optional[SolverSettings] = None) -> EquilibriumReport:
    """Solve centrally, announce prices and check the decentralized outcome."""
    sol = solve_central(sens, prosumers, tariff, settings)
    schedule = ex_ante_prices(sens, prosumers, tariff, sol, settings)
    return check_equilibrium(sol, schedule, prosumers, tariff, tol)


class AllocationLedger:
    """Accrues per-period allocations and pays them out at the end of a billing cycle."""

    def __init__(self):
        self.periods: List[Settlement] = []
        self._accrued: Dict[int, float] = {}

    def __len__(self) -> int:
        return len(self.periods)

    def accrue(self, settlement: Settlement):
        """Add one period's allocations."""
        self.periods.append(settlement)
        for pid, amount in zip(settlement.prosumer_ids, settlement.allocation):
            self._accrued[pid] = self._accrued.get(pid, 0.0) + float(amount)

    def balance(self, prosumer_id: int) -> float:
        return self._accrued.get(prosumer_id, 0.0)

    @property
    def accumulated(self) -> Dict[int, float]:
        return dict(self._accrued)

    def payout(self) -> Dict[int, float]:
        """Return the accrued allocations and start a new cycle."""
        paid = dict(self._accrued)
        self._accrued.clear()
        self.periods.clear()
        logger.info("paid out allocations to %d prosumers", len(paid))
        return paid
