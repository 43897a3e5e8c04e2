"""
Scenario Harness

Loads scenario files, chains welfare, pricing, verification, settlement and
the exact power-flow check into one run, sweeps the generation scale and
calibrates it to reach a requested netting regime.
"""
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.config_manager import SolverSettings
from core.errors import ConfigError, GridshareError, Infeasible, PowerFlowDiverged
from core.network import (
    RadialNetwork,
    build_sensitivities,
    exact_voltages,
    lin_voltages,
    load_feeder,
)
from core.pricing import (
    EquilibriumReport,
    PriceSchedule,
    Settlement,
    check_equilibrium,
    ex_ante_prices,
)
from core.prosumer import Prosumer, load_prosumers, standalone_nem_surplus, utility
from core.welfare import (
    KKTReport,
    MarketSolution,
    Regime,
    Tariff,
    solve_central,
    verify_kkt,
)

logger = logging.getLogger("gridshare.harness")

GENERATION_TARGETS = ("import_slack", "balanced", "export_binding")


@dataclass(frozen=True)
class ScenarioOptions:
    trace: bool = False
    exact_power_flow: bool = True


@dataclass(frozen=True)
class Scenario:
    """A feeder, its prosumers, a tariff and a generation scale.

    ``g_target`` replaces a numeric ``g_scale`` by a calibration target.
    """

    name: str
    network: RadialNetwork
    prosumers: Tuple[Prosumer, ...]
    tariff: Tariff
    g_scale: Optional[float] = 1.0
    g_target: Optional[str] = None
    seed: int = 0
    options: ScenarioOptions = field(default_factory=ScenarioOptions)
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, 'prosumers', tuple(self.prosumers))
        if self.g_target is None:
            if self.g_scale is None or not self.g_scale >= 0:
                raise ConfigError(f"must be a non-negative number, got {self.g_scale}",
                                  field="g_scale")
        elif self.g_target not in GENERATION_TARGETS:
            raise ConfigError(f"unknown target {self.g_target!r}, expected one of "
                              f"{', '.join(GENERATION_TARGETS)}", field="g_scale.target")
        for p in self.prosumers:
            if not 1 <= p.bus <= self.network.n_buses:
                raise ConfigError(f"prosumer {p.id} sits at bus {p.bus}, feeder has "
                                  f"buses 1..{self.network.n_buses}", field="prosumers")

    @property
    def reference_generation(self) -> float:
        return math.fsum(p.g for p in self.prosumers)

    def scaled_prosumers(self, g_scale: float) -> Tuple[Prosumer, ...]:
        return tuple(p.with_generation(p.g * g_scale) for p in self.prosumers)

    def with_scale(self, g_scale: float) -> "Scenario":
        return replace(self, g_scale=float(g_scale), g_target=None)


@dataclass(frozen=True, eq=False)
class RunResult:
    """Everything produced by one scenario run."""

    scenario: str
    g_scale: float
    G0: float
    network: RadialNetwork
    prosumers: Tuple[Prosumer, ...]
    solution: MarketSolution
    kkt: KKTReport
    schedule: PriceSchedule
    equilibrium: EquilibriumReport
    settlement: Settlement
    voltages_linear: np.ndarray
    voltages_exact: Optional[np.ndarray]
    coalition_surplus: np.ndarray
    standalone_surplus: np.ndarray
    trace: Tuple[Dict[str, Any], ...] = ()
    elapsed: float = 0.0

    @property
    def regime(self) -> Regime:
        return self.solution.regime

    @property
    def welfare(self) -> float:
        return self.solution.welfare

    @property
    def passed(self) -> bool:
        return self.kkt.passed and self.equilibrium.passed

    @property
    def voltage_mismatch(self) -> Optional[np.ndarray]:
        """Exact minus linearized squared voltages (p.u.^2)."""
        if self.voltages_exact is None:
            return None
        return self.voltages_exact ** 2 - self.voltages_linear ** 2


def _resolve(base_dir: Path, value: Any, where: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError("must be a file path", field=where)
    path = Path(value)
    return path if path.is_absolute() else base_dir / path


def parse_scenario(data: Dict[str, Any], base_dir: Union[str, Path] = ".") -> Scenario:
    """Validate a decoded scenario document; relative paths resolve against ``base_dir``."""
    if not isinstance(data, dict):
        raise ConfigError("scenario document must be a JSON object")
    base_dir = Path(base_dir)

    name = data.get('name')
    if not isinstance(name, str) or not name:
        raise ConfigError("missing scenario name", field="name")

    tariff_raw = data.get('tariff')
    if not isinstance(tariff_raw, dict):
        raise ConfigError("missing tariff", field="tariff")
    try:
        tariff = Tariff(pi_plus=float(tariff_raw['pi_plus']),
                        pi_minus=float(tariff_raw['pi_minus']))
    except KeyError as e:
        raise ConfigError(f"missing {e.args[0]}", field="tariff")
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid number: {e}", field="tariff")
    except GridshareError as e:
        raise ConfigError(e.message, field="tariff")

    g_raw = data.get('g_scale', 1.0)
    g_scale: Optional[float] = None
    g_target: Optional[str] = None
    if isinstance(g_raw, dict):
        g_target = g_raw.get('target')
        if not isinstance(g_target, str):
            raise ConfigError("needs a 'target' string", field="g_scale")
    else:
        try:
            g_scale = float(g_raw)
        except (TypeError, ValueError):
            raise ConfigError(f"not a number: {g_raw!r}", field="g_scale")

    options_raw = data.get('options', {}) or {}
    if not isinstance(options_raw, dict):
        raise ConfigError("must be an object", field="options")
    unknown = set(options_raw) - {'trace', 'exact_power_flow'}
    if unknown:
        raise ConfigError(f"unknown options {sorted(unknown)}", field="options")

    try:
        seed = int(data.get('seed', 0))
    except (TypeError, ValueError):
        raise ConfigError("must be an integer", field="seed")

    network = load_feeder(_resolve(base_dir, data.get('network_file'), "network_file"))
    prosumers = load_prosumers(_resolve(base_dir, data.get('prosumer_file'), "prosumer_file"))

    return Scenario(
        name=name,
        network=network,
        prosumers=tuple(prosumers),
        tariff=tariff,
        g_scale=g_scale,
        g_target=g_target,
        seed=seed,
        options=ScenarioOptions(trace=bool(options_raw.get('trace', False)),
                                exact_power_flow=bool(options_raw.get('exact_power_flow', True))),
        description=str(data.get('description', '')),
    )


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load and validate a scenario file.

    Raises:
        ConfigError: the file or anything it references is missing or invalid
    """
    path = Path(path)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    try:
        return parse_scenario(data, path.parent)
    except ConfigError as e:
        raise e.with_context(file=str(path))


def run(sc: Scenario, settings: Optional[SolverSettings] = None, tol: float = 1e-6) -> RunResult:
    """Central solve, ex-ante prices, verification, settlement and voltage check."""
    settings = settings or SolverSettings()
    started = time.perf_counter()
    g_scale = sc.g_scale
    try:
        if sc.g_target is not None:
            g_scale = calibrate_generation(sc, sc.g_target, settings)
        prosumers = sc.scaled_prosumers(g_scale)
        sens = build_sensitivities(sc.network)
        trace: Optional[List[Dict[str, Any]]] = [] if sc.options.trace else None

        sol = solve_central(sens, prosumers, sc.tariff, settings, trace)
        kkt = verify_kkt(sol, sens, prosumers, sc.tariff, tol)
        schedule = ex_ante_prices(sens, prosumers, sc.tariff, sol, settings)
        equilibrium = check_equilibrium(sol, schedule, prosumers, sc.tariff, tol,
                                        raise_on_failure=False)
    except GridshareError as e:
        raise e.with_context(scenario=sc.name, g_scale=g_scale)

    settlement = equilibrium.settlement
    v_linear = np.sqrt(np.maximum(lin_voltages(sens, sol.Z_bus), 0.0))
    v_exact = None
    if sc.options.exact_power_flow:
        try:
            v_exact = np.sqrt(exact_voltages(sc.network, sol.Z_bus, settings.tol_pf,
                                             settings.max_iter_pf))
        except PowerFlowDiverged as e:
            logger.warning("%s: exact power flow unavailable: %s", sc.name, e)

    coalition_surplus = np.array([
        utility(p, response.d) - settlement.final_payment[n]
        for n, (p, response) in enumerate(zip(prosumers, equilibrium.responses))
    ])
    standalone = np.array([standalone_nem_surplus(p, sc.tariff.pi_plus, sc.tariff.pi_minus,
                                                  settings.envelope_tol)
                           for p in prosumers])

    if not kkt.passed:
        logger.warning("%s: KKT check failed: %s", sc.name, "; ".join(kkt.violations))

    return RunResult(
        scenario=sc.name,
        g_scale=float(g_scale),
        G0=sol.G0,
        network=sc.network,
        prosumers=prosumers,
        solution=sol,
        kkt=kkt,
        schedule=schedule,
        equilibrium=equilibrium,
        settlement=settlement,
        voltages_linear=v_linear,
        voltages_exact=v_exact,
        coalition_surplus=coalition_surplus,
        standalone_surplus=standalone,
        trace=tuple(trace or ()),
        elapsed=time.perf_counter() - started,
    )


def sweep(sc: Scenario, g_scales: Sequence[float], settings: Optional[SolverSettings] = None,
          tol: float = 1e-6, errors: Optional[List[Tuple[float, GridshareError]]] = None,
          workers: int = 1, progress: bool = False) -> List[RunResult]:
    """Run the scenario at each generation scale (ascending).

    Failed runs are logged and appended to ``errors``; the sweep continues.
    """
    scales = [float(s) for s in g_scales]
    if any(later < earlier for earlier, later in zip(scales, scales[1:])):
        raise ConfigError("must be sorted ascending", field="g_scales")

    def one(scale: float) -> Optional[RunResult]:
        try:
            return run(sc.with_scale(scale), settings, tol)
        except GridshareError as e:
            logger.error("%s at g_scale=%g failed: %s", sc.name, scale, e)
            if errors is not None:
                errors.append((scale, e))
            return None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(tqdm(pool.map(one, scales), total=len(scales),
                             desc=f"sweep {sc.name}", disable=not progress))
    return [result for result in outcomes if result is not None]


class _GenerationSearch:
    """Memoized central solves of a scenario as a function of the generation scale."""

    def __init__(self, sc: Scenario, settings: SolverSettings):
        self.sc = sc
        self.settings = settings
        self.sens = build_sensitivities(sc.network)
        self._cache: Dict[float, Optional[MarketSolution]] = {}

    def __call__(self, scale: float) -> Optional[MarketSolution]:
        if scale not in self._cache:
            try:
                self._cache[scale] = solve_central(self.sens, self.sc.scaled_prosumers(scale),
                                                   self.sc.tariff, self.settings)
            except Infeasible:
                self._cache[scale] = None
        return self._cache[scale]

    def threshold(self, predicate: Callable[[Optional[MarketSolution]], bool], lo: float,
                  hi: float, rel_tol: float) -> Tuple[float, float]:
        """Bracket where ``predicate`` switches from False to True on ``[lo, hi]``."""
        if predicate(self(lo)):
            return lo, lo
        while hi - lo > rel_tol * max(hi, 1.0):
            mid = 0.5 * (lo + hi)
            if predicate(self(mid)):
                hi = mid
            else:
                lo = mid
        return lo, hi


def _not_importing(sol: Optional[MarketSolution]) -> bool:
    return sol is None or sol.regime is not Regime.IMPORT


def _exporting(sol: Optional[MarketSolution]) -> bool:
    return sol is None or sol.regime is Regime.EXPORT


def _voltage_slack(sol: Optional[MarketSolution]) -> bool:
    return sol is not None and not np.any(sol.eta_up > 0) and not np.any(sol.eta_lo > 0)


def _upper_binding(sol: Optional[MarketSolution]) -> bool:
    return sol is None or bool(np.any(sol.eta_up > 0))


def _infeasible(sol: Optional[MarketSolution]) -> bool:
    return sol is None


def calibrate_generation(sc: Scenario, target: str, settings: Optional[SolverSettings] = None,
                         rel_tol: float = 1e-4, max_doublings: int = 40) -> float:
    """Generation scale that puts the scenario in the requested regime.

    ``import_slack``: importing with no binding voltage limit.
    ``balanced``: middle of the window where aggregate net consumption is zero.
    ``export_binding``: exporting with the upper voltage limit binding while
    the schedule stays feasible.

    Raises:
        ConfigError: the target regime does not occur for this scenario
    """
    if target not in GENERATION_TARGETS:
        raise ConfigError(f"unknown target {target!r}", field="g_scale.target")
    if sc.reference_generation <= 0:
        raise ConfigError("prosumers have no generation to scale", field="g_scale")

    search = _GenerationSearch(sc, settings or SolverSettings())

    ceiling = 1.0
    for _ in range(max_doublings):
        if _exporting(search(ceiling)):
            break
        ceiling *= 2.0
    else:
        raise ConfigError("export regime never reached", field="g_scale.target")

    import_end, balanced_start = search.threshold(_not_importing, 0.0, ceiling, rel_tol)
    balanced_end, export_start = search.threshold(_exporting, balanced_start, ceiling, rel_tol)

    if target == "balanced":
        if export_start - import_end <= 2 * rel_tol * max(export_start, 1.0):
            raise ConfigError("no balanced window (pi_plus equals pi_minus?)",
                              field="g_scale.target")
        scale = 0.5 * (balanced_start + balanced_end)

    elif target == "import_slack":
        if not _voltage_slack(search(import_end)) or import_end <= 0:
            raise ConfigError("voltage limits bind across the whole import window",
                              field="g_scale.target")
        _, slack_start = search.threshold(_voltage_slack, 0.0, import_end, rel_tol)
        scale = 0.5 * (slack_start + import_end)

    else:
        limit = max(export_start, 1e-3)
        for _ in range(max_doublings):
            if _infeasible(search(limit)):
                break
            limit *= 2.0
        else:
            raise ConfigError("generation never becomes infeasible", field="g_scale.target")
        _, binding_start = search.threshold(_upper_binding, export_start, limit, rel_tol)
        last_feasible, _ = search.threshold(_infeasible, binding_start, limit, rel_tol)
        if last_feasible <= binding_start:
            raise ConfigError("no feasible export window with a binding upper limit",
                              field="g_scale.target")
        scale = 0.5 * (binding_start + last_feasible)

    logger.info("%s: calibrated g_scale=%.6g for target %s", sc.name, scale, target)
    return scale
