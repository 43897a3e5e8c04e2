"""
Result Reporting

Tabular views of run results as pandas DataFrames and their CSV / JSON
output. Column names carry their units.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import GridshareError
from core.pricing import AllocationLedger, audit_settlement
from harness.scenario import RunResult

logger = logging.getLogger("gridshare.reporting")

DEFAULT_FLOAT_FORMAT = "%.10g"


def settlement_frame(result: RunResult) -> pd.DataFrame:
    """One row per prosumer: net consumption, price, charges and surpluses."""
    frame = pd.DataFrame(result.settlement.records())
    frame['coalition_surplus_usd'] = result.coalition_surplus
    frame['standalone_surplus_usd'] = result.standalone_surplus
    return frame


def schedule_frame(result: RunResult) -> pd.DataFrame:
    """One row per bus: announced price, voltage multipliers and net consumption."""
    net = result.network
    duals = result.schedule.duals
    return pd.DataFrame({
        'bus': np.arange(1, net.n_buses + 1),
        'bus_name': [net.bus_label(b) for b in range(1, net.n_buses + 1)],
        'price_usd_per_kwh': result.schedule.bus_price,
        'eta_up_usd_per_pu2': duals.eta_up,
        'eta_lo_usd_per_pu2': duals.eta_lo,
        'Z_kwh': result.solution.Z_bus,
    })


def voltage_frame(result: RunResult) -> pd.DataFrame:
    """Linearized and exact bus voltages against the limits."""
    net = result.network
    frame = pd.DataFrame({
        'bus': np.arange(1, net.n_buses + 1),
        'bus_name': [net.bus_label(b) for b in range(1, net.n_buses + 1)],
        'v_linear_pu': result.voltages_linear,
        'v_min_pu': net.v_min,
        'v_max_pu': net.v_max,
    })
    if result.voltages_exact is not None:
        frame['v_exact_pu'] = result.voltages_exact
        frame['mismatch_pu2'] = result.voltage_mismatch
    return frame


def trace_frame(result: RunResult) -> pd.DataFrame:
    """Per-iteration dual residuals of every regime subproblem."""
    frame = pd.DataFrame(list(result.trace),
                         columns=['regime', 'phase', 'iteration', 'dual_residual',
                                  'primal_residual', 'welfare'])
    return frame.rename(columns={'welfare': 'welfare_usd'})


def summary(result: RunResult) -> Dict[str, Any]:
    """Scalar outcome of a run."""
    sol = result.solution
    schedule = result.schedule
    candidates = {
        regime.value: {
            'status': outcome.status,
            'welfare_usd': outcome.welfare,
            'Z0_kwh': None if outcome.solution is None else outcome.solution.Z0,
            'message': outcome.message,
        }
        for regime, outcome in sol.candidates.items()
    }
    return {
        'scenario': result.scenario,
        'g_scale': result.g_scale,
        'G0_kwh': result.G0,
        'regime': sol.regime.value,
        'Z0_kwh': sol.Z0,
        'welfare_usd': sol.welfare,
        'mu_usd_per_kwh': schedule.duals.mu,
        'sigma1_kwh': schedule.sigma1,
        'sigma2_kwh': schedule.sigma2,
        'operator_balance_usd': result.settlement.operator_balance,
        'allocation_total_usd': float(np.sum(result.settlement.allocation)),
        'coalition_surplus_usd': float(np.sum(result.coalition_surplus)),
        'standalone_surplus_usd': float(np.sum(result.standalone_surplus)),
        'kkt': {
            'passed': result.kkt.passed,
            'max_primal': result.kkt.max_primal,
            'max_complementarity': result.kkt.max_complementarity,
            'max_stationarity': result.kkt.max_stationarity,
            'violations': list(result.kkt.violations),
        },
        'equilibrium': {
            'passed': result.equilibrium.passed,
            'max_deviation_kwh': result.equilibrium.max_deviation,
            'worst_prosumer': result.equilibrium.worst_prosumer,
            'welfare_gap_usd': result.equilibrium.welfare_gap,
        },
        'solver': sol.stats.as_dict(),
        'candidates': candidates,
        'max_voltage_mismatch_pu2': (None if result.voltage_mismatch is None
                                     else float(np.max(np.abs(result.voltage_mismatch)))),
        'elapsed_s': result.elapsed,
    }


def sweep_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    """One row per generation scale."""
    rows = []
    for result in results:
        prices = result.schedule.bus_price
        rows.append({
            'g_scale': result.g_scale,
            'G0_kwh': result.G0,
            'regime': result.regime.value,
            'Z0_kwh': result.solution.Z0,
            'welfare_usd': result.welfare,
            'sigma1_kwh': result.schedule.sigma1,
            'sigma2_kwh': result.schedule.sigma2,
            'min_price_usd_per_kwh': float(np.min(prices)),
            'mean_price_usd_per_kwh': float(np.mean(prices)),
            'max_price_usd_per_kwh': float(np.max(prices)),
            'allocation_usd': float(np.sum(result.settlement.allocation)),
            'coalition_surplus_usd': float(np.sum(result.coalition_surplus)),
            'standalone_surplus_usd': float(np.sum(result.standalone_surplus)),
            'operator_balance_usd': result.settlement.operator_balance,
            'max_deviation_kwh': result.equilibrium.max_deviation,
            'passed': result.passed,
        })
    frame = pd.DataFrame(rows)
    if not frame.empty:
        frame['accumulated_allocation_usd'] = frame['allocation_usd'].cumsum()
    return frame


def allocation_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    """Per-prosumer allocations of each sweep period and their running totals."""
    ledger = AllocationLedger()
    rows = []
    for period, result in enumerate(results):
        ledger.accrue(result.settlement)
        for pid, amount in zip(result.settlement.prosumer_ids, result.settlement.allocation):
            rows.append({
                'period': period,
                'g_scale': result.g_scale,
                'prosumer_id': pid,
                'allocation_usd': float(amount),
                'accumulated_allocation_usd': ledger.balance(pid),
            })
    return pd.DataFrame(rows, columns=['period', 'g_scale', 'prosumer_id', 'allocation_usd',
                                       'accumulated_allocation_usd'])


def check_integrity(result: RunResult):
    """Re-check budget neutrality and payment uniformity before results leave the run.

    Raises:
        SettlementMismatch: either property fails at the settlement tolerance
    """
    try:
        audit_settlement(result.settlement, raise_on_failure=True)
    except GridshareError as e:
        raise e.with_context(scenario=result.scenario, g_scale=result.g_scale)


def write_run(result: RunResult, out_dir: Union[str, Path],
              float_format: str = DEFAULT_FLOAT_FORMAT) -> List[Path]:
    """Write settlement, schedule, voltage (and trace) CSVs plus a JSON summary."""
    check_integrity(result)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = result.scenario
    written = []

    frames = [('settlement', settlement_frame(result)),
              ('schedule', schedule_frame(result)),
              ('voltage', voltage_frame(result))]
    if result.trace:
        frames.append(('trace', trace_frame(result)))

    for kind, frame in frames:
        path = out_dir / f"{stem}_{kind}.csv"
        frame.to_csv(path, index=False, float_format=float_format)
        written.append(path)

    path = out_dir / f"{stem}_summary.json"
    with open(path, 'w') as f:
        json.dump(summary(result), f, indent=2, default=float)
    written.append(path)

    logger.info("wrote %d result files to %s", len(written), out_dir)
    return written


def write_sweep(name: str, results: Sequence[RunResult],
                errors: Sequence[Tuple[float, GridshareError]], out_dir: Union[str, Path],
                float_format: str = DEFAULT_FLOAT_FORMAT) -> Path:
    """Write the sweep table and the accrued allocations.

    Failed scales are listed in a companion JSON file.
    """
    for result in results:
        check_integrity(result)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}_sweep.csv"
    sweep_frame(results).to_csv(path, index=False, float_format=float_format)
    allocation_frame(results).to_csv(out_dir / f"{name}_allocations.csv", index=False,
                                     float_format=float_format)
    if errors:
        with open(out_dir / f"{name}_sweep_errors.json", 'w') as f:
            json.dump([{'g_scale': scale, 'error': type(err).__name__, 'message': str(err)}
                       for scale, err in errors], f, indent=2)
    return path
