"""
Unit tests for ex-ante pricing and settlement
"""
import math
import unittest
from dataclasses import replace

import numpy as np

from core.errors import DimensionError, EquilibriumViolation
from core.pricing import (
    AllocationLedger,
    check_equilibrium,
    chi_kappa,
    classify_regime,
    ex_ante_prices,
    settle,
    solve_mu,
    thresholds,
    verify_equilibrium,
)
from core.welfare import Duals, Regime, Tariff, solve_central
from tests.instances import hand_prosumer, single_bus

HAND_TARIFF = Tariff(pi_plus=4.0, pi_minus=2.0)


class TestThresholds(unittest.TestCase):
    """Test the import and export thresholds."""

    def test_without_multipliers(self):
        """Test thresholds at the bare tariff."""
        _, sens = single_bus()
        sigma1, sigma2 = thresholds(sens, [hand_prosumer()], HAND_TARIFF, Duals.zeros(1))
        self.assertAlmostEqual(sigma1, 3.0)
        self.assertAlmostEqual(sigma2, 4.0)

    def test_envelope_caps_threshold(self):
        """Test an envelope lowering the import threshold."""
        _, sens = single_bus()
        sigma1, _ = thresholds(sens, [hand_prosumer(g=1.0, envelope=(-10.0, 1.0))],
                               HAND_TARIFF, Duals.zeros(1))
        self.assertAlmostEqual(sigma1, 2.0)

    def test_separate_multiplier_sets(self):
        """Test thresholds from an (import, export) pair."""
        _, sens = single_bus()
        plus = Duals(eta_up=np.zeros(1), eta_lo=np.array([10.0]))
        sigma1, sigma2 = thresholds(sens, [hand_prosumer()], HAND_TARIFF, (plus, Duals.zeros(1)))
        self.assertAlmostEqual(sigma1, 2.0)
        self.assertAlmostEqual(sigma2, 4.0)


class TestClassification(unittest.TestCase):
    """Test the threshold rule."""

    def test_regions(self):
        """Test the three regions and their edges."""
        self.assertIs(classify_regime(2.0, 3.0, 4.0), Regime.IMPORT)
        self.assertIs(classify_regime(3.5, 3.0, 4.0), Regime.BALANCED)
        self.assertIs(classify_regime(5.0, 3.0, 4.0), Regime.EXPORT)
        self.assertIs(classify_regime(3.0, 3.0, 4.0), Regime.BALANCED)
        self.assertIs(classify_regime(4.0, 3.0, 4.0), Regime.BALANCED)


class TestBalancePrice(unittest.TestCase):
    """Test the balance price search."""

    def test_interior(self):
        """Test a balance price strictly between the tariff rates."""
        _, sens = single_bus()
        mu = solve_mu(sens, [hand_prosumer()], Duals.zeros(1), 3.5, HAND_TARIFF)
        self.assertAlmostEqual(mu, 3.0, places=8)

    def test_edges(self):
        """Test generation equal to either threshold."""
        _, sens = single_bus()
        self.assertAlmostEqual(solve_mu(sens, [hand_prosumer()], Duals.zeros(1), 3.0, HAND_TARIFF), 4.0)
        self.assertAlmostEqual(solve_mu(sens, [hand_prosumer()], Duals.zeros(1), 4.0, HAND_TARIFF), 2.0)

    def test_monotone_in_generation(self):
        """Test that more generation lowers the balance price."""
        _, sens = single_bus()
        prices = [solve_mu(sens, [hand_prosumer()], Duals.zeros(1), G0, HAND_TARIFF)
                  for G0 in np.linspace(3.0, 4.0, 6)]
        self.assertTrue(all(a >= b for a, b in zip(prices, prices[1:])))


class TestRegimePrices(unittest.TestCase):
    """Test bus prices under given multipliers."""

    def test_lower_limit_raises_price(self):
        """Test the import price shifted by a lower-limit multiplier."""
        _, sens = single_bus()
        duals = Duals(eta_up=np.zeros(1), eta_lo=np.array([10.0]))
        np.testing.assert_allclose(chi_kappa(sens, duals, HAND_TARIFF, Regime.IMPORT), [6.0])

    def test_upper_limit_lowers_price(self):
        """Test the export price shifted by an upper-limit multiplier."""
        _, sens = single_bus()
        duals = Duals(eta_up=np.array([5.0]), eta_lo=np.zeros(1))
        np.testing.assert_allclose(chi_kappa(sens, duals, HAND_TARIFF, Regime.EXPORT), [1.0])


class TestExAnte(unittest.TestCase):
    """Test price announcement from the central solution."""

    def test_lower_limit_binding(self):
        """Test announcing the congestion price of the import hand case."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        prosumers = [hand_prosumer()]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        self.assertIs(schedule.regime, Regime.IMPORT)
        self.assertAlmostEqual(schedule.sigma1, 2.0, places=8)
        self.assertAlmostEqual(schedule.price_at(1), 6.0, places=8)

    def test_balanced(self):
        """Test announcing the balance price."""
        _, sens = single_bus()
        prosumers = [hand_prosumer(g=3.5)]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        self.assertIs(schedule.regime, Regime.BALANCED)
        self.assertAlmostEqual(schedule.duals.mu, 3.0, places=8)
        self.assertAlmostEqual(schedule.price_at(1), 3.0, places=8)

    def test_upper_limit_binding(self):
        """Test announcing the congestion price of the export hand case."""
        _, sens = single_bus(v_max=math.sqrt(1.4))
        prosumers = [hand_prosumer(g=8.0)]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        self.assertIs(schedule.regime, Regime.EXPORT)
        self.assertAlmostEqual(schedule.sigma2, 6.0, places=6)
        self.assertAlmostEqual(schedule.price_at(1), -2.0, places=6)


class TestSettlement(unittest.TestCase):
    """Test ex-ante charges and the allocation."""

    def _schedule(self):
        _, sens = single_bus(v_min=math.sqrt(0.6))
        prosumers = [hand_prosumer()]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        return ex_ante_prices(sens, prosumers, HAND_TARIFF, sol), prosumers

    def test_import_settlement(self):
        """Test that the allocation brings every payment back to the bill."""
        schedule, prosumers = self._schedule()
        settlement = settle(schedule, HAND_TARIFF, [2.0], prosumers)
        self.assertAlmostEqual(settlement.ex_ante_charge[0], 12.0, places=7)
        self.assertAlmostEqual(settlement.allocation[0], 4.0, places=7)
        self.assertAlmostEqual(settlement.final_payment[0], 8.0, places=7)
        self.assertAlmostEqual(settlement.nem_cost, 8.0)
        self.assertAlmostEqual(settlement.operator_balance, 0.0, places=9)

    def test_export_settlement(self):
        """Test the sell-rate settlement under export."""
        _, sens = single_bus(v_max=math.sqrt(1.4))
        prosumers = [hand_prosumer(g=8.0)]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        settlement = settle(schedule, HAND_TARIFF, sol.z, prosumers)
        self.assertAlmostEqual(settlement.nem_price, 2.0)
        self.assertAlmostEqual(settlement.final_payment[0], -4.0, places=6)
        self.assertAlmostEqual(settlement.operator_balance, 0.0, places=9)

    def test_records(self):
        """Test flat per-prosumer records."""
        schedule, prosumers = self._schedule()
        records = settle(schedule, HAND_TARIFF, [2.0], prosumers).records()
        self.assertEqual(len(records), 1)
        self.assertEqual(records[0]['prosumer_id'], 1)
        self.assertIn('allocation_usd', records[0])

    def test_dimension(self):
        """Test rejecting the wrong number of net consumptions."""
        schedule, prosumers = self._schedule()
        with self.assertRaises(DimensionError):
            settle(schedule, HAND_TARIFF, [1.0, 2.0], prosumers)


class TestEquilibrium(unittest.TestCase):
    """Test the decentralized equilibrium check."""

    def test_hand_cases(self):
        """Test that best responses reproduce the central optimum."""
        cases = [
            (single_bus(v_min=math.sqrt(0.6))[1], hand_prosumer()),
            (single_bus()[1], hand_prosumer(g=3.5)),
            (single_bus(v_max=math.sqrt(1.4))[1], hand_prosumer(g=8.0)),
        ]
        for sens, prosumer in cases:
            report = verify_equilibrium(sens, [prosumer], HAND_TARIFF)
            self.assertTrue(report.passed)
            self.assertLess(report.welfare_gap, 1e-6)
            self.assertAlmostEqual(report.settlement.operator_balance, 0.0, places=9)

    def test_perturbed_price(self):
        """Test detecting a price that moves a best response."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        prosumers = [hand_prosumer()]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        shifted = replace(schedule, bus_price=schedule.bus_price + 0.01)
        with self.assertRaises(EquilibriumViolation) as ctx:
            check_equilibrium(sol, shifted, prosumers, HAND_TARIFF)
        self.assertEqual(ctx.exception.worst_prosumer, 1)

        report = check_equilibrium(sol, shifted, prosumers, HAND_TARIFF, raise_on_failure=False)
        self.assertFalse(report.passed)
        self.assertAlmostEqual(report.max_deviation, 0.005, places=6)


class TestAllocationLedger(unittest.TestCase):
    """Test accrual of allocations across periods."""

    def test_accrue_and_payout(self):
        """Test summing two periods and clearing on payout."""
        _, sens = single_bus(v_min=math.sqrt(0.6))
        prosumers = [hand_prosumer()]
        sol = solve_central(sens, prosumers, HAND_TARIFF)
        schedule = ex_ante_prices(sens, prosumers, HAND_TARIFF, sol)
        settlement = settle(schedule, HAND_TARIFF, [2.0], prosumers)

        ledger = AllocationLedger()
        ledger.accrue(settlement)
        ledger.accrue(settlement)
        self.assertEqual(len(ledger), 2)
        self.assertAlmostEqual(ledger.balance(1), 8.0, places=6)
        self.assertEqual(ledger.balance(99), 0.0)

        paid = ledger.payout()
        self.assertAlmostEqual(paid[1], 8.0, places=6)
        self.assertEqual(len(ledger), 0)
        self.assertEqual(ledger.accumulated, {})


if __name__ == '__main__':
    unittest.main()
