"""
Unit tests for the central welfare program
"""
import math
import unittest
from dataclasses import replace

import numpy as np

from core.config_manager import SolverSettings
from core.errors import DomainError, Infeasible, RootBracketError
from core.network import Bus, Line, RadialNetwork, build_sensitivities
from core.welfare import (
    Coalition,
    Duals,
    Regime,
    Tariff,
    bracketed_root,
    regime_bus_prices,
    solve_central,
    solve_subproblem,
    verify_kkt,
    _RegimeSolver,
)
from tests.instances import hand_prosumer, single_bus

HAND_TARIFF = Tariff(pi_plus=4.0, pi_minus=2.0)


class TestTariff(unittest.TestCase):
    """Test the net-metering tariff."""

    def test_cost(self):
        """Test the piecewise-linear bill."""
        self.assertEqual(HAND_TARIFF.nem_cost(0.0), 0.0)
        self.assertEqual(HAND_TARIFF.nem_cost(2.0), 8.0)
        self.assertEqual(HAND_TARIFF.nem_cost(-3.0), -6.0)

    def test_marginal_price(self):
        """Test the marginal price on each side of zero."""
        self.assertEqual(HAND_TARIFF.nem_price(0.0), 4.0)
        self.assertEqual(HAND_TARIFF.nem_price(-1.0), 2.0)

    def test_ordering(self):
        """Test rejecting a sell rate above the retail rate."""
        with self.assertRaises(DomainError):
            Tariff(pi_plus=1.0, pi_minus=2.0)
        with self.assertRaises(DomainError):
            HAND_TARIFF.base_price(Regime.BALANCED)


class TestBracketedRoot(unittest.TestCase):
    """Test the bracketing root finder."""

    def test_inside_bracket(self):
        """Test a root inside the initial bracket."""
        self.assertAlmostEqual(bracketed_root(lambda x: 3.0 - x, 0.0, 5.0, 0, 1e-12), 3.0)

    def test_widening(self):
        """Test widening until the root is enclosed."""
        self.assertAlmostEqual(bracketed_root(lambda x: 30.0 - x, 0.0, 5.0, 10, 1e-12), 30.0)

    def test_no_root(self):
        """Test giving up after the allowed widenings."""
        with self.assertRaises(RootBracketError):
            bracketed_root(lambda x: 1.0, 0.0, 1.0, 3, 1e-12)


class TestSubproblems(unittest.TestCase):
    """Test single-regime solves against hand solutions."""

    def test_slack_voltages(self):
        """Test that slack constraints leave the multipliers at zero."""
        _, sens = single_bus()
        sol = solve_subproblem(sens, [hand_prosumer()], HAND_TARIFF, Regime.IMPORT)
        np.testing.assert_allclose(sol.d[0], [3.0])
        self.assertAlmostEqual(sol.Z0, 3.0)
        self.assertTrue(np.all(sol.eta_up == 0) and np.all(sol.eta_lo == 0))
        self.assertEqual(sol.stats.method, "initial")

    def test_lower_limit_binding(self):
        """Test the hand KKT solution with the lower limit active."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        sol = solve_subproblem(sens, [hand_prosumer()], HAND_TARIFF, Regime.IMPORT)
        np.testing.assert_allclose(sol.d[0], [2.0], atol=1e-9)
        self.assertAlmostEqual(sol.eta_lo[0], 10.0, places=7)
        self.assertEqual(sol.eta_up[0], 0.0)
        self.assertAlmostEqual(sol.bus_price[0], 6.0, places=8)

    def test_balanced(self):
        """Test the balance price inside the threshold window."""
        _, sens = single_bus()
        sol = solve_subproblem(sens, [hand_prosumer(g=3.5)], HAND_TARIFF, Regime.BALANCED)
        self.assertAlmostEqual(sol.mu, 3.0, places=8)
        np.testing.assert_allclose(sol.d[0], [3.5], atol=1e-9)
        self.assertAlmostEqual(sol.Z0, 0.0, places=9)

    def test_infeasible(self):
        """Test a voltage box no consumption level can meet."""
        _, sens = single_bus(v_min=1.1, v_max=1.2)
        with self.assertRaises(Infeasible):
            solve_subproblem(sens, [hand_prosumer()], HAND_TARIFF, Regime.IMPORT)


class TestCentral(unittest.TestCase):
    """Test regime selection of the central solve."""

    def test_no_generation_imports(self):
        """Test importing when there is no generation."""
        _, sens = single_bus()
        sol = solve_central(sens, [hand_prosumer()], HAND_TARIFF)
        self.assertIs(sol.regime, Regime.IMPORT)
        self.assertAlmostEqual(sol.Z0, 3.0)
        self.assertAlmostEqual(sol.welfare, 21.0 - 12.0)
        self.assertEqual(set(sol.candidates), set(Regime))
        self.assertEqual(sol.candidates[Regime.IMPORT].status, "selected")
        self.assertEqual(sol.candidates[Regime.EXPORT].status, "sign-inconsistent")

    def test_between_thresholds(self):
        """Test zero net consumption between the thresholds."""
        _, sens = single_bus()
        sol = solve_central(sens, [hand_prosumer(g=3.5)], HAND_TARIFF)
        self.assertIs(sol.regime, Regime.BALANCED)
        self.assertAlmostEqual(sol.Z0, 0.0, places=9)
        self.assertAlmostEqual(sol.mu, 3.0, places=8)

    def test_surplus_exports(self):
        """Test exporting when generation exceeds the upper threshold."""
        _, sens = single_bus()
        sol = solve_central(sens, [hand_prosumer(g=6.0)], HAND_TARIFF)
        self.assertIs(sol.regime, Regime.EXPORT)
        self.assertAlmostEqual(sol.Z0, 4.0 - 6.0)

    def test_upper_limit_binding(self):
        """Test the export hand case with the upper limit active."""
        _, sens = single_bus(v_max=math.sqrt(1.4))
        sol = solve_central(sens, [hand_prosumer(g=8.0)], HAND_TARIFF)
        self.assertIs(sol.regime, Regime.EXPORT)
        self.assertAlmostEqual(sol.Z0, -2.0, places=8)
        self.assertAlmostEqual(sol.eta_up[0], 20.0, places=6)
        self.assertAlmostEqual(sol.bus_price[0], -2.0, places=8)
        self.assertAlmostEqual(sol.welfare, 60.0 - 36.0 + 4.0, places=8)

    def test_all_regimes_infeasible(self):
        """Test raising when no regime is feasible."""
        _, sens = single_bus(v_min=1.1, v_max=1.2)
        with self.assertRaises(Infeasible):
            solve_central(sens, [hand_prosumer()], HAND_TARIFF)

    def test_trace(self):
        """Test per-iteration trace rows."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        trace = []
        solve_central(sens, [hand_prosumer()], HAND_TARIFF, trace=trace)
        self.assertTrue(trace)
        self.assertEqual({row['regime'] for row in trace}, {'import', 'balanced', 'export'})
        self.assertIn('active-set', {row['phase'] for row in trace})


class TestKKT(unittest.TestCase):
    """Test the optimality report."""

    def test_unconstrained(self):
        """Test zero residuals without binding limits."""
        _, sens = single_bus()
        sol = solve_central(sens, [hand_prosumer()], HAND_TARIFF)
        report = verify_kkt(sol, sens, [hand_prosumer()], HAND_TARIFF)
        self.assertTrue(report.passed)
        self.assertEqual(report.max_complementarity, 0.0)

    def test_binding(self):
        """Test small residuals at the hand KKT point."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        sol = solve_central(sens, [hand_prosumer()], HAND_TARIFF)
        report = verify_kkt(sol, sens, [hand_prosumer()], HAND_TARIFF, tol=1e-8)
        self.assertTrue(report.passed, report.violations)
        self.assertLess(report.max_complementarity, 1e-8)
        self.assertLess(report.max_stationarity, 1e-8)

    def test_corrupted_duals(self):
        """Test flagging multipliers on slack constraints."""
        _, sens = single_bus()
        sol = solve_central(sens, [hand_prosumer()], HAND_TARIFF)
        bad = replace(sol, duals=Duals(eta_up=sol.eta_up + 1.0, eta_lo=sol.eta_lo, mu=sol.mu))
        report = verify_kkt(bad, sens, [hand_prosumer()], HAND_TARIFF)
        self.assertFalse(report.passed)
        self.assertTrue(any("complementarity" in v for v in report.violations))

    def test_uniform_prices_without_multipliers(self):
        """Test that zero multipliers give a uniform price."""
        net = RadialNetwork(buses=(Bus(1), Bus(2)),
                            lines=(Line(0, 1, 0.1, 0.0), Line(1, 2, 0.1, 0.0)))
        sens = build_sensitivities(net)
        prices = regime_bus_prices(sens, HAND_TARIFF, Regime.EXPORT, Duals.zeros(2))
        np.testing.assert_allclose(prices, [2.0, 2.0])
        with self.assertRaises(DomainError):
            regime_bus_prices(sens, HAND_TARIFF, Regime.BALANCED, Duals.zeros(2))


class TestCertification(unittest.TestCase):
    """Test the stopping rule of the dual solver."""

    def setUp(self):
        """Set up the lower-binding hand case (eta_lo = 10 at the optimum)."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        self.settings = SolverSettings(residual_tol=1e-7)
        coalition = Coalition([hand_prosumer()], sens.n_buses)
        self.solver = _RegimeSolver(sens, coalition, HAND_TARIFF, Regime.IMPORT, self.settings)

    def test_exact_multiplier(self):
        """Test accepting the hand KKT point."""
        self.assertTrue(self.solver.certified(self.solver.state(np.array([-10.0]))))

    def test_margin_scaled_by_multiplier(self):
        """Test rejecting a small margin times a large multiplier."""
        # margin 0.02 * 2.5e-6 = 5e-8 passes alone, times eta_lo ~10 it does not
        state = self.solver.state(np.array([-10.0 - 2.5e-6]))
        _, lower = self.solver._margins(state)
        self.assertLess(abs(lower[0]), self.settings.residual_tol)
        self.assertFalse(self.solver.certified(state))


if __name__ == '__main__':
    unittest.main()
