"""
Welfare Maximization

Central voltage-constrained welfare program under net metering. The
piecewise-linear tariff cost is handled by solving three smooth subproblems
(import at the retail rate, export at the sell rate, balanced with zero
aggregate net consumption) and keeping the sign-consistent winner.

Each subproblem is solved in the dual. Prices at every bus are the base
price shifted by the voltage multipliers, prosumers respond with their
clipped inverse marginal utility, and the multipliers are updated by an
accelerated projected ascent that is finished off with an active-set Newton
step, so reported multipliers satisfy complementarity to rounding error.
"""
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect, brentq, linprog

from core.config_manager import SolverSettings
from core.errors import (
    DimensionError,
    DomainError,
    Infeasible,
    RootBracketError,
    SolverDiverged,
)
from core.network import SensitivityMatrices, check_voltage_feasibility
from core.prosumer import Prosumer, best_response_enveloped

logger = logging.getLogger("gridshare.welfare")

# Aggregate net consumption within this band (kWh) counts as balanced
SIGN_TOL = 1e-9


class Regime(enum.Enum):
    """Netting regime of the coalition's aggregate meter."""

    IMPORT = "import"
    BALANCED = "balanced"
    EXPORT = "export"

    @property
    def symbol(self) -> str:
        return {"import": "+", "balanced": "z", "export": "-"}[self.value]


@dataclass(frozen=True)
class Tariff:
    """Net-metering tariff: retail rate ``pi_plus`` and sell rate ``pi_minus`` ($/kWh)."""

    pi_plus: float
    pi_minus: float

    def __post_init__(self):
        if not self.pi_plus >= self.pi_minus >= 0:
            raise DomainError(f"tariff must satisfy pi_plus >= pi_minus >= 0, "
                              f"got {self.pi_plus}, {self.pi_minus}")

    def nem_price(self, Z0: float) -> float:
        """Marginal net-metering price at aggregate net consumption ``Z0``."""
        return self.pi_plus if Z0 >= 0 else self.pi_minus

    def nem_cost(self, Z0: float) -> float:
        """Net-metering bill of aggregate net consumption ``Z0``."""
        return max(self.pi_plus * Z0, self.pi_minus * Z0)

    def base_price(self, regime: Regime) -> float:
        if regime is Regime.IMPORT:
            return self.pi_plus
        if regime is Regime.EXPORT:
            return self.pi_minus
        raise DomainError("the balanced regime has no fixed base price")


@dataclass(frozen=True, eq=False)
class Duals:
    """Voltage multipliers (upper, lower) and the balance multiplier ``mu``."""

    eta_up: np.ndarray
    eta_lo: np.ndarray
    mu: Optional[float] = None

    @property
    def y(self) -> np.ndarray:
        return self.eta_up - self.eta_lo

    @classmethod
    def zeros(cls, n_buses: int, mu: Optional[float] = None) -> "Duals":
        return cls(eta_up=np.zeros(n_buses), eta_lo=np.zeros(n_buses), mu=mu)

    @classmethod
    def from_signed(cls, y: np.ndarray, mu: Optional[float] = None) -> "Duals":
        y = np.asarray(y, dtype=float)
        return cls(eta_up=np.maximum(y, 0.0), eta_lo=np.maximum(-y, 0.0), mu=mu)


@dataclass(frozen=True)
class SolverStats:
    """How a regime subproblem was solved."""

    regime: Regime
    method: str
    iterations: int
    polish_rounds: int
    primal_residual: float
    dual_residual: float
    rank_deficient: bool = False

    def as_dict(self) -> Dict[str, Any]:
        return {
            'regime': self.regime.value,
            'method': self.method,
            'iterations': self.iterations,
            'polish_rounds': self.polish_rounds,
            'primal_residual': self.primal_residual,
            'dual_residual': self.dual_residual,
            'rank_deficient': self.rank_deficient,
        }


@dataclass(frozen=True, eq=False)
class MarketSolution:
    """Optimal consumption, multipliers and welfare of one regime (or the winner)."""

    regime: Regime
    d: Tuple[np.ndarray, ...]
    z: np.ndarray
    Z_bus: np.ndarray
    Z0: float
    G0: float
    duals: Duals
    bus_price: np.ndarray
    utility: float
    welfare: float
    stats: SolverStats
    candidates: Dict[Regime, "CandidateOutcome"] = field(default_factory=dict)

    @property
    def eta_up(self) -> np.ndarray:
        return self.duals.eta_up

    @property
    def eta_lo(self) -> np.ndarray:
        return self.duals.eta_lo

    @property
    def mu(self) -> Optional[float]:
        return self.duals.mu


@dataclass(frozen=True)
class CandidateOutcome:
    """Result of one regime subproblem inside the central solve."""

    regime: Regime
    status: str
    solution: Optional[MarketSolution] = None
    message: str = ""

    @property
    def welfare(self) -> Optional[float]:
        return None if self.solution is None else self.solution.welfare


@dataclass(frozen=True)
class KKTReport:
    """Residuals of the optimality conditions of a :class:`MarketSolution`."""

    passed: bool
    max_primal: float
    max_complementarity: float
    max_stationarity: float
    min_dual: float
    violations: Tuple[str, ...] = ()


def bracketed_root(fn: Callable[[float], float], lo: float, hi: float,
                   expansions: int, xtol: float,
                   solver: Callable[..., float] = bisect) -> float:
    """Root of a non-increasing function, widening ``[lo, hi]`` until it brackets one.

    Raises:
        RootBracketError: no sign change after ``expansions`` widenings
    """
    if hi < lo:
        lo, hi = hi, lo
    width = max(hi - lo, 1e-3)
    f_lo, f_hi = fn(lo), fn(hi)
    for attempt in range(expansions + 1):
        if f_lo >= 0 >= f_hi:
            break
        if attempt == expansions:
            raise RootBracketError(
                f"no sign change in [{lo:.6g}, {hi:.6g}] after {expansions} expansions "
                f"(values {f_lo:.3e}, {f_hi:.3e})"
            )
        if f_lo < 0:
            lo -= width
            f_lo = fn(lo)
        if f_hi > 0:
            hi += width
            f_hi = fn(hi)
        width *= 2.0
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    return float(solver(fn, lo, hi, xtol=xtol, maxiter=500))


class Coalition:
    """Flattened device data of all prosumers on a feeder.

    Devices are stacked prosumer by prosumer; ``owner`` maps a device to its
    prosumer and ``bus_of_device`` to the (0-based) bus index.
    """

    def __init__(self, prosumers: Sequence[Prosumer], n_buses: int,
                 envelope_tol: float = 1e-10):
        self.prosumers = tuple(prosumers)
        if not self.prosumers:
            raise DimensionError("a coalition needs at least one prosumer")
        for p in self.prosumers:
            if not 1 <= p.bus <= n_buses:
                raise DimensionError(f"prosumer {p.id} sits at bus {p.bus}, "
                                     f"feeder has buses 1..{n_buses}")
        self.n_buses = n_buses
        self.envelope_tol = envelope_tol

        counts = [p.n_devices for p in self.prosumers]
        self.offsets = np.concatenate(([0], np.cumsum(counts)))
        self.owner = np.repeat(np.arange(len(self.prosumers)), counts)
        self.alpha = np.concatenate([p.alpha for p in self.prosumers])
        self.beta = np.concatenate([p.beta for p in self.prosumers])
        self.d_lo = np.concatenate([p.d_lo for p in self.prosumers])
        self.d_hi = np.concatenate([p.d_hi for p in self.prosumers])
        self.bus_of_prosumer = np.array([p.bus - 1 for p in self.prosumers])
        self.bus_of_device = self.bus_of_prosumer[self.owner]
        self.g = np.array([p.g for p in self.prosumers], dtype=float)
        self.G0 = float(math.fsum(self.g))
        self.enveloped = [n for n, p in enumerate(self.prosumers) if p.envelope is not None]

    @property
    def n_prosumers(self) -> int:
        return len(self.prosumers)

    @property
    def n_devices(self) -> int:
        return int(self.alpha.size)

    def segment(self, n: int) -> slice:
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def respond(self, bus_price: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Enveloped best responses of every device; also flags pinned prosumers."""
        device_price = bus_price[self.bus_of_device]
        d = np.clip((self.alpha - device_price) / self.beta, self.d_lo, self.d_hi)
        pinned = np.zeros(self.n_prosumers, dtype=bool)
        for n in self.enveloped:
            p = self.prosumers[n]
            seg = self.segment(n)
            total = float(np.sum(d[seg]))
            z_lo, z_hi = p.envelope
            if z_lo + p.g <= total <= z_hi + p.g:
                continue
            bundle = best_response_enveloped(p, float(bus_price[p.bus - 1]), self.envelope_tol)
            d[seg] = bundle.d
            pinned[n] = bundle.pinned
        return d, pinned

    def net(self, d: np.ndarray) -> np.ndarray:
        return np.bincount(self.owner, weights=d, minlength=self.n_prosumers) - self.g

    def bus_net(self, z: np.ndarray) -> np.ndarray:
        return np.bincount(self.bus_of_prosumer, weights=z, minlength=self.n_buses)

    def total_utility(self, d: np.ndarray) -> float:
        capped = np.minimum(d, self.alpha / self.beta)
        return float(math.fsum(self.alpha * capped - 0.5 * self.beta * capped ** 2))

    def free_slopes(self, bus_price: np.ndarray, pinned: np.ndarray) -> np.ndarray:
        """Per-bus demand slope ``-dZ/dprice`` on the current linear piece."""
        f = (self.alpha - bus_price[self.bus_of_device]) / self.beta
        free = (f > self.d_lo) & (f < self.d_hi) & ~pinned[self.owner]
        return np.bincount(self.bus_of_device, weights=np.where(free, 1.0 / self.beta, 0.0),
                           minlength=self.n_buses)

    def max_slopes(self) -> np.ndarray:
        return np.bincount(self.bus_of_device, weights=1.0 / self.beta, minlength=self.n_buses)

    def split(self, d: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(d[self.segment(n)].copy() for n in range(self.n_prosumers))


@dataclass
class _State:
    y: np.ndarray
    mu: Optional[float]
    prices: np.ndarray
    d: np.ndarray
    pinned: np.ndarray
    z: np.ndarray
    Z: np.ndarray
    s: np.ndarray


class _RegimeSolver:
    """Dual solver for one regime subproblem."""

    def __init__(self, sens: SensitivityMatrices, coalition: Coalition, tariff: Tariff,
                 regime: Regime, settings: SolverSettings,
                 trace: Optional[List[Dict[str, Any]]] = None):
        self.sens = sens
        self.coalition = coalition
        self.tariff = tariff
        self.regime = regime
        self.settings = settings
        self.trace = trace
        self.R = sens.R_kwh
        self.balanced = regime is Regime.BALANCED
        self.base = None if self.balanced else tariff.base_price(regime)

        lipschitz = float(np.linalg.norm(self.R, 2)) ** 2 * float(np.max(coalition.max_slopes()))
        self.step = 1.0 / max(lipschitz, 1e-12)
        self.iterations = 0
        self.rounds = 0
        self.rank_deficient = False

    # -- evaluation ---------------------------------------------------------

    def _balance_price(self, shift: np.ndarray) -> float:
        coalition = self.coalition

        def excess(mu: float) -> float:
            d, _ = coalition.respond(mu - shift)
            return float(np.sum(d)) - coalition.G0

        spread = float(np.max(np.abs(shift), initial=0.0))
        return bracketed_root(excess, self.tariff.pi_minus - spread,
                              self.tariff.pi_plus + spread,
                              expansions=self.settings.mu_expansions,
                              xtol=self.settings.mu_tol * 1e-2, solver=brentq)

    def state(self, y: np.ndarray, mu: Optional[float] = None) -> _State:
        shift = self.R.T @ y
        if self.balanced:
            if mu is None:
                mu = self._balance_price(shift)
            base = mu
        else:
            base = self.base
        prices = base - shift
        d, pinned = self.coalition.respond(prices)
        z = self.coalition.net(d)
        Z = self.coalition.bus_net(z)
        return _State(y=y, mu=mu, prices=prices, d=d, pinned=pinned, z=z, Z=Z, s=self.R @ Z)

    def _margins(self, state: _State) -> Tuple[np.ndarray, np.ndarray]:
        return self.sens.v_upper + state.s, self.sens.v_lower - state.s

    def primal_residual(self, state: _State) -> float:
        upper, lower = self._margins(state)
        residual = max(float(np.max(-upper, initial=0.0)), float(np.max(-lower, initial=0.0)), 0.0)
        if self.balanced:
            residual = max(residual, abs(float(np.sum(state.z))))
        return residual

    def certified(self, state: _State) -> bool:
        """Full optimality check; stationarity holds by construction of the responses.

        Complementarity is judged on multiplier times margin, so large
        multipliers need proportionally tighter margins.
        """
        tol = self.settings.residual_tol
        if self.primal_residual(state) > tol:
            return False
        upper, lower = self._margins(state)
        complementarity = max(float(np.max(np.maximum(state.y, 0.0) * np.abs(upper))),
                              float(np.max(np.maximum(-state.y, 0.0) * np.abs(lower))))
        if complementarity > tol:
            return False
        if np.any((state.y > 0) & (np.abs(upper) > tol)):
            return False
        if np.any((state.y < 0) & (np.abs(lower) > tol)):
            return False
        return True

    def _record(self, phase: str, state: _State, dual_residual: float):
        if self.trace is None:
            return
        Z0 = float(np.sum(state.z))
        self.trace.append({
            'regime': self.regime.value,
            'phase': phase,
            'iteration': self.iterations,
            'dual_residual': dual_residual,
            'primal_residual': self.primal_residual(state),
            'welfare': self.coalition.total_utility(state.d) - self.tariff.nem_cost(Z0),
        })

    # -- active-set Newton ----------------------------------------------------

    def polish(self, state: _State) -> Tuple[_State, bool]:
        """Semi-smooth Newton on the active voltage constraints.

        Each round fixes the active upper/lower sets and the free devices,
        solves the resulting linear system in least squares (minimum-norm
        multipliers when the active rows are dependent) and re-evaluates.
        """
        R = self.R
        previous = None
        for _ in range(self.settings.polish_rounds):
            self.rounds += 1
            upper_active = state.y + self.step * (-state.s - self.sens.v_upper) > 0
            lower_active = -state.y + self.step * (state.s - self.sens.v_lower) > 0
            active = np.flatnonzero(upper_active | lower_active)
            slopes = self.coalition.free_slopes(state.prices, state.pinned)
            signature = (upper_active.tobytes(), lower_active.tobytes(), slopes.tobytes())
            if signature == previous:
                break
            previous = signature

            # Z = offset - slopes * price on the current linear piece
            offset = state.Z + slopes * state.prices
            target = np.where(upper_active, -self.sens.v_upper, self.sens.v_lower)[active]
            H = R @ (slopes[:, None] * R.T)
            y_new = np.zeros_like(state.y)

            if self.balanced:
                # Joint solve for the multipliers and the balance price; the
                # price is re-derived exactly from the balance equation below
                k = active.size
                system = np.zeros((k + 1, k + 1))
                rhs = np.zeros(k + 1)
                system[:k, :k] = H[np.ix_(active, active)]
                system[:k, k] = -(R @ slopes)[active]
                system[k, :k] = (slopes @ R.T)[active]
                system[k, k] = -float(np.sum(slopes))
                rhs[:k] = target - (R @ offset)[active]
                rhs[k] = -float(np.sum(offset))
                solution, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
                self.rank_deficient |= rank < k + 1
                y_new[active] = solution[:k]
            elif active.size:
                system = H[np.ix_(active, active)]
                rhs = target - (R @ (offset - slopes * self.base))[active]
                solution, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
                self.rank_deficient |= rank < active.size
                y_new[active] = solution

            try:
                state = self.state(y_new)
            except RootBracketError:
                return state, False
            self._record("active-set", state, 0.0)
            if self.certified(state):
                return state, True
        return state, False

    # -- accelerated projected ascent ---------------------------------------

    def _prox(self, u: np.ndarray) -> np.ndarray:
        t = self.step
        return np.where(u > t * self.sens.v_upper, u - t * self.sens.v_upper,
                        np.where(u < -t * self.sens.v_lower, u + t * self.sens.v_lower, 0.0))

    def solve(self) -> Tuple[_State, str, float]:
        y = np.zeros(self.sens.n_buses)
        state = self.state(y)
        self._record("initial", state, 0.0)
        if self.certified(state):
            return state, "initial", 0.0

        state, ok = self.polish(state)
        if ok:
            return state, "active-set", 0.0

        settings = self.settings
        previous = y
        extrapolated = y
        theta = 1.0
        residual = math.inf
        for _ in range(settings.max_iter_dual):
            self.iterations += 1
            lookahead = self.state(extrapolated)
            current = self._prox(extrapolated - self.step * lookahead.s)
            residual = float(np.max(np.abs(current - extrapolated))) / self.step
            self._record("ascent", lookahead, residual)

            # Restart momentum when the step opposes the previous direction
            if float(np.dot(extrapolated - current, current - previous)) > 0:
                theta = 1.0
            theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta ** 2))
            extrapolated = current + ((theta - 1.0) / theta_next) * (current - previous)
            previous = current
            theta = theta_next

            if self.iterations % settings.polish_every == 0 or residual < settings.dual_tol:
                state = self.state(current)
                accepted = self.certified(state)
                polished, ok = self.polish(state)
                if ok:
                    return polished, "active-set", residual
                if accepted:
                    return state, "ascent", residual

        state = self.state(previous)
        raise SolverDiverged(
            f"{self.regime.value} subproblem did not converge in "
            f"{settings.max_iter_dual} iterations",
            residuals={'dual_residual': residual,
                       'primal_residual': self.primal_residual(state)},
        )


def _feasibility_program(sens: SensitivityMatrices, coalition: Coalition, balanced: bool,
                         tol: float):
    """Linear feasibility check of the voltage box, device bounds and envelopes."""
    R = sens.R_kwh
    incidence = np.zeros((sens.n_buses, coalition.n_devices))
    incidence[coalition.bus_of_device, np.arange(coalition.n_devices)] = 1.0
    bus_generation = coalition.bus_net(coalition.g)
    response = R @ incidence
    offset = R @ bus_generation

    rows = [-response, response]
    limits = [sens.v_upper - offset + tol, sens.v_lower + offset + tol]
    for n in coalition.enveloped:
        p = coalition.prosumers[n]
        row = np.zeros(coalition.n_devices)
        row[coalition.segment(n)] = 1.0
        rows.extend([row, -row])
        limits.extend([np.array([p.envelope[1] + p.g + tol]),
                       np.array([-(p.envelope[0] + p.g) + tol])])

    A_eq = b_eq = None
    if balanced:
        A_eq = np.ones((1, coalition.n_devices))
        b_eq = np.array([coalition.G0])

    return linprog(
        c=np.zeros(coalition.n_devices),
        A_ub=np.vstack(rows),
        b_ub=np.concatenate(limits),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=list(zip(coalition.d_lo, coalition.d_hi)),
        method="highs",
    )


def solve_subproblem(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], tariff: Tariff,
                     regime: Regime, settings: Optional[SolverSettings] = None,
                     trace: Optional[List[Dict[str, Any]]] = None) -> MarketSolution:
    """Solve one regime subproblem (no sign restriction on the aggregate).

    Raises:
        Infeasible: voltage box, bounds and envelopes (and balance) cannot all hold
        SolverDiverged: dual iteration exhausted its budget
    """
    settings = settings or SolverSettings()
    coalition = Coalition(prosumers, sens.n_buses, settings.envelope_tol)

    check = _feasibility_program(sens, coalition, regime is Regime.BALANCED,
                                 settings.feasibility_tol)
    if check.status == 2:
        raise Infeasible(f"{regime.value} subproblem has no voltage-feasible schedule",
                         context={'regime': regime.value})
    if check.status != 0:
        logger.warning("feasibility check for %s ended with status %d: %s",
                       regime.value, check.status, check.message)

    solver = _RegimeSolver(sens, coalition, tariff, regime, settings, trace)
    try:
        state, method, residual = solver.solve()
    except SolverDiverged as e:
        raise e.with_context(regime=regime.value)

    Z0 = float(math.fsum(state.z))
    total_utility = coalition.total_utility(state.d)
    stats = SolverStats(
        regime=regime,
        method=method,
        iterations=solver.iterations,
        polish_rounds=solver.rounds,
        primal_residual=solver.primal_residual(state),
        dual_residual=residual,
        rank_deficient=solver.rank_deficient,
    )
    if solver.rank_deficient:
        logger.info("%s: active voltage rows are dependent, reporting minimum-norm multipliers",
                    regime.value)
    logger.debug("%s subproblem solved by %s (%d iterations, %d rounds)", regime.value,
                 method, solver.iterations, solver.rounds)

    return MarketSolution(
        regime=regime,
        d=coalition.split(state.d),
        z=state.z,
        Z_bus=state.Z,
        Z0=Z0,
        G0=coalition.G0,
        duals=Duals.from_signed(state.y, state.mu),
        bus_price=state.prices,
        utility=total_utility,
        welfare=total_utility - tariff.nem_cost(Z0),
        stats=stats,
    )


def _select_regime(outcomes: Dict[Regime, CandidateOutcome]) -> Regime:
    """Pick the welfare-maximal sign-consistent regime.

    An import (export) solution strictly inside its sign region maximizes the
    piecewise objective outright; solutions on the boundary tie with the
    balanced one, which is then preferred.
    """
    def solved(regime: Regime) -> Optional[MarketSolution]:
        outcome = outcomes.get(regime)
        return None if outcome is None else outcome.solution

    importing, balanced, exporting = (solved(r) for r in Regime)
    if importing is not None and importing.Z0 > SIGN_TOL:
        return Regime.IMPORT
    if exporting is not None and exporting.Z0 < -SIGN_TOL:
        return Regime.EXPORT
    if balanced is not None:
        return Regime.BALANCED
    if importing is not None and importing.Z0 >= -SIGN_TOL:
        return Regime.IMPORT
    if exporting is not None and exporting.Z0 <= SIGN_TOL:
        return Regime.EXPORT
    raise Infeasible("no netting regime admits a voltage-feasible schedule")


def solve_central(sens: SensitivityMatrices, prosumers: Sequence[Prosumer], tariff: Tariff,
                  settings: Optional[SolverSettings] = None,
                  trace: Optional[List[Dict[str, Any]]] = None) -> MarketSolution:
    """Maximize coalition welfare under net metering and the voltage box.

    Every regime subproblem is kept in ``candidates`` of the returned
    solution (solved, sign-inconsistent or infeasible).

    Raises:
        Infeasible: no regime admits a feasible schedule
    """
    settings = settings or SolverSettings()
    outcomes: Dict[Regime, CandidateOutcome] = {}
    for regime in Regime:
        try:
            solution = solve_subproblem(sens, prosumers, tariff, regime, settings, trace)
        except Infeasible as e:
            outcomes[regime] = CandidateOutcome(regime=regime, status="infeasible",
                                                message=str(e))
            continue
        consistent = ((regime is Regime.IMPORT and solution.Z0 >= -SIGN_TOL)
                      or (regime is Regime.EXPORT and solution.Z0 <= SIGN_TOL)
                      or regime is Regime.BALANCED)
        outcomes[regime] = CandidateOutcome(
            regime=regime,
            status="consistent" if consistent else "sign-inconsistent",
            solution=solution,
        )

    chosen = _select_regime(outcomes)
    winner = outcomes[chosen].solution
    outcomes[chosen] = CandidateOutcome(regime=chosen, status="selected", solution=winner)

    contenders = [o.solution for o in outcomes.values() if o.status in ("consistent", "selected")]
    best = max(contenders, key=lambda s: s.welfare)
    if best.welfare > winner.welfare + 1e-9 * max(1.0, abs(winner.welfare)):
        logger.warning("selected %s regime trails %s by %.3e in welfare", chosen.value,
                       best.regime.value, best.welfare - winner.welfare)

    logger.info("central solution: regime=%s welfare=%.6f Z0=%.6g", chosen.value,
                winner.welfare, winner.Z0)
    return MarketSolution(
        regime=chosen,
        d=winner.d,
        z=winner.z,
        Z_bus=winner.Z_bus,
        Z0=winner.Z0,
        G0=winner.G0,
        duals=winner.duals,
        bus_price=winner.bus_price,
        utility=winner.utility,
        welfare=winner.welfare,
        stats=winner.stats,
        candidates=outcomes,
    )


def regime_bus_prices(sens: SensitivityMatrices, tariff: Tariff, regime: Regime,
                      duals: Duals) -> np.ndarray:
    """Base price of the regime shifted by the voltage multipliers."""
    if regime is Regime.BALANCED:
        if duals.mu is None:
            raise DomainError("balanced prices need the balance multiplier mu")
        base = duals.mu
    else:
        base = tariff.base_price(regime)
    return base - sens.R_kwh.T @ duals.y


def verify_kkt(sol: MarketSolution, sens: SensitivityMatrices, prosumers: Sequence[Prosumer],
               tariff: Tariff, tol: float = 1e-6) -> KKTReport:
    """Check primal feasibility, dual signs, complementarity and stationarity."""
    coalition = Coalition(prosumers, sens.n_buses)
    if len(sol.d) != coalition.n_prosumers:
        raise DimensionError(f"solution covers {len(sol.d)} prosumers, "
                             f"coalition has {coalition.n_prosumers}")
    d = np.concatenate(sol.d)
    violations: List[str] = []

    primal = max(float(np.max(coalition.d_lo - d, initial=0.0)),
                 float(np.max(d - coalition.d_hi, initial=0.0)))
    z = coalition.net(d)
    for n in coalition.enveloped:
        z_lo, z_hi = coalition.prosumers[n].envelope
        primal = max(primal, z_lo - z[n], z[n] - z_hi)
    report = check_voltage_feasibility(sens, coalition.bus_net(z), tol)
    primal = max(primal, report.max_violation)
    if sol.regime is Regime.BALANCED:
        primal = max(primal, abs(float(math.fsum(z))))
    if primal > tol:
        violations.append(f"primal infeasibility {primal:.3e}")

    min_dual = float(min(np.min(sol.eta_up), np.min(sol.eta_lo)))
    if min_dual < -tol:
        violations.append(f"negative multiplier {min_dual:.3e}")

    complementarity = max(float(np.max(np.abs(sol.eta_up * report.upper_margin))),
                          float(np.max(np.abs(sol.eta_lo * report.lower_margin))))
    if complementarity > tol:
        violations.append(f"complementarity residual {complementarity:.3e}")

    prices = regime_bus_prices(sens, tariff, sol.regime, sol.duals)
    responded, _ = coalition.respond(prices)
    stationarity = float(np.max(np.abs(responded - d)))
    if stationarity > tol:
        violations.append(f"stationarity residual {stationarity:.3e}")

    return KKTReport(
        passed=not violations,
        max_primal=primal,
        max_complementarity=complementarity,
        max_stationarity=stationarity,
        min_dual=min_dual,
        violations=tuple(violations),
    )
