"""
Unit tests for result tables, result files and terminal rendering
"""
import json
import math
import unittest
import tempfile
import shutil
from dataclasses import replace
from pathlib import Path

from rich.console import Console

from core.errors import Infeasible, SettlementMismatch
from harness import reporting
from harness.scenario import load_scenario, run
from interface.terminal_ui import TerminalUI
from tests.instances import write_single_bus_scenario


class TestReporting(unittest.TestCase):
    """Test reporting on the one-bus hand case."""

    def setUp(self):
        """Set up test fixtures."""
        self.test_dir = Path(tempfile.mkdtemp())
        path = write_single_bus_scenario(self.test_dir / "in", v_min=math.sqrt(0.6),
                                         options={"exact_power_flow": True, "trace": True})
        self.result = run(load_scenario(path))

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.test_dir)

    def test_settlement_frame(self):
        """Test per-prosumer columns."""
        frame = reporting.settlement_frame(self.result)
        self.assertEqual(len(frame), 1)
        for column in ('prosumer_id', 'z_kwh', 'bus_price_usd_per_kwh', 'allocation_usd',
                       'final_payment_usd', 'coalition_surplus_usd', 'standalone_surplus_usd'):
            self.assertIn(column, frame.columns)
        self.assertAlmostEqual(frame['final_payment_usd'].iloc[0], 8.0, places=6)

    def test_schedule_frame(self):
        """Test per-bus prices and multipliers."""
        frame = reporting.schedule_frame(self.result)
        self.assertEqual(list(frame['bus']), [1])
        self.assertEqual(list(frame['bus_name']), ["load"])
        self.assertAlmostEqual(frame['price_usd_per_kwh'].iloc[0], 6.0, places=6)
        self.assertAlmostEqual(frame['eta_lo_usd_per_pu2'].iloc[0], 10.0, places=5)

    def test_voltage_frame(self):
        """Test linear and exact voltages against the limits."""
        frame = reporting.voltage_frame(self.result)
        self.assertIn('v_exact_pu', frame.columns)
        self.assertLess(frame['mismatch_pu2'].iloc[0], 0.0)
        self.assertAlmostEqual(frame['v_min_pu'].iloc[0], math.sqrt(0.6))

    def test_summary(self):
        """Test the scalar summary."""
        info = reporting.summary(self.result)
        self.assertEqual(info['regime'], 'import')
        self.assertTrue(info['kkt']['passed'])
        self.assertTrue(info['equilibrium']['passed'])
        self.assertEqual(set(info['candidates']), {'import', 'balanced', 'export'})
        self.assertEqual(info['candidates']['import']['status'], 'selected')

    def test_write_run(self):
        """Test the written file set and the JSON summary."""
        out = self.test_dir / "out"
        written = reporting.write_run(self.result, out)
        self.assertEqual(sorted(p.name for p in written),
                         ['single_schedule.csv', 'single_settlement.csv', 'single_summary.json',
                          'single_trace.csv', 'single_voltage.csv'])
        with open(out / "single_summary.json") as f:
            info = json.load(f)
        self.assertEqual(info['scenario'], 'single')
        self.assertAlmostEqual(info['operator_balance_usd'], 0.0, places=9)

    def test_deterministic_tables(self):
        """Test that repeated runs write identical tables."""
        again = run(load_scenario(self.test_dir / "in" / "single.json"))
        reporting.write_run(self.result, self.test_dir / "a")
        reporting.write_run(again, self.test_dir / "b")
        for name in ('single_settlement.csv', 'single_schedule.csv', 'single_voltage.csv'):
            self.assertEqual((self.test_dir / "a" / name).read_bytes(),
                             (self.test_dir / "b" / name).read_bytes())

    def test_write_sweep(self):
        """Test the sweep table and its error companion."""
        path = reporting.write_sweep("single", [self.result], [(2.0, Infeasible("no regime"))],
                                     self.test_dir / "sweep")
        self.assertTrue(path.exists())
        with open(self.test_dir / "sweep" / "single_sweep_errors.json") as f:
            errors = json.load(f)
        self.assertEqual(errors, [{'g_scale': 2.0, 'error': 'Infeasible', 'message': 'no regime'}])
        frame = reporting.sweep_frame([self.result])
        self.assertEqual(list(frame['regime']), ['import'])
        self.assertTrue(bool(frame['passed'].iloc[0]))
        self.assertTrue((self.test_dir / "sweep" / "single_allocations.csv").exists())

    def test_trace_frame(self):
        """Test trace columns with units."""
        frame = reporting.trace_frame(self.result)
        self.assertIn('welfare_usd', frame.columns)
        self.assertIn('active-set', set(frame['phase']))

    def test_accumulated_allocations(self):
        """Test running allocation totals over sweep periods."""
        frame = reporting.sweep_frame([self.result, self.result])
        self.assertAlmostEqual(frame['mean_price_usd_per_kwh'].iloc[0], 6.0, places=6)
        self.assertEqual(list(frame['accumulated_allocation_usd'].round(6)), [4.0, 8.0])

        allocations = reporting.allocation_frame([self.result, self.result])
        self.assertEqual(list(allocations['period']), [0, 1])
        self.assertEqual(list(allocations['accumulated_allocation_usd'].round(6)), [4.0, 8.0])

    def test_integrity_recheck(self):
        """Test refusing to write a settlement that is not budget-neutral."""
        settlement = self.result.settlement
        broken = replace(self.result, settlement=replace(
            settlement, final_payment=settlement.final_payment + 0.01))
        with self.assertRaises(SettlementMismatch):
            reporting.write_run(broken, self.test_dir / "broken")
        with self.assertRaises(SettlementMismatch):
            reporting.write_sweep("single", [broken], [], self.test_dir / "broken")
        self.assertFalse((self.test_dir / "broken").exists())


class TestTerminalUI(unittest.TestCase):
    """Test rendering with a recording console."""

    def setUp(self):
        """Set up test fixtures."""
        self.test_dir = Path(tempfile.mkdtemp())
        self.console = Console(record=True, width=120)
        self.ui = TerminalUI(self.console)

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.test_dir)

    def test_run_summary(self):
        """Test the headline panel."""
        result = run(load_scenario(write_single_bus_scenario(self.test_dir, g=3.5)))
        self.ui.print_run_summary(reporting.summary(result))
        text = self.console.export_text()
        self.assertIn("balanced", text)
        self.assertIn("Balanced price: $3.0000/kWh", text)

    def test_frame(self):
        """Test rendering selected columns."""
        result = run(load_scenario(write_single_bus_scenario(self.test_dir)))
        self.ui.print_frame("Bus prices", reporting.schedule_frame(result),
                            ['bus', 'price_usd_per_kwh'])
        text = self.console.export_text()
        self.assertIn("Bus prices", text)
        self.assertIn("price_usd_per_kwh", text)

    def test_messages(self):
        """Test status messages."""
        self.ui.print_error("broken")
        self.ui.print_success("done")
        text = self.console.export_text()
        self.assertIn("broken", text)
        self.assertIn("done", text)


if __name__ == '__main__':
    unittest.main()
