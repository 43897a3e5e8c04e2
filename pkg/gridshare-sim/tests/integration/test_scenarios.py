"""
Shipped 13-bus scenarios from congested import to congested export.
"""
import unittest
from pathlib import Path

import numpy as np
import pytest

from core.network import build_sensitivities
from core.pricing import audit_settlement, classify_regime
from core.welfare import Regime, Tariff, verify_kkt
from harness.scenario import calibrate_generation, load_scenario, run, sweep

SCENARIOS = Path(__file__).resolve().parents[2] / "resources" / "scenarios"
PI_PLUS, PI_MINUS = 0.12, 0.06
REGIME_ORDER = [Regime.IMPORT, Regime.BALANCED, Regime.EXPORT]
KKT_TOL = 1e-7


def run_shipped(name: str):
    return run(load_scenario(SCENARIOS / f"{name}.json"))


def assert_verified(case: unittest.TestCase, result):
    sens = build_sensitivities(result.network)
    kkt = verify_kkt(result.solution, sens, result.prosumers, Tariff(PI_PLUS, PI_MINUS), KKT_TOL)
    case.assertTrue(kkt.passed, kkt.violations)
    case.assertTrue(result.equilibrium.passed)
    audit = audit_settlement(result.settlement)
    case.assertTrue(audit.neutral, audit.operator_balance)
    case.assertTrue(audit.uniform, audit.max_uniformity_gap)


@pytest.mark.slow
class TestShippedScenarios(unittest.TestCase):
    """Run each shipped scenario end to end."""

    def test_congested_import(self):
        """Test the no-generation case with the lower limit binding."""
        result = run_shipped("ieee13_s1")
        assert_verified(self, result)
        self.assertIs(result.regime, Regime.IMPORT)
        self.assertTrue(np.any(result.solution.eta_lo > 0))
        self.assertGreater(float(np.max(result.schedule.bus_price)), PI_PLUS)
        self.assertTrue(np.all(result.schedule.bus_price >= PI_PLUS - 1e-12))

    def test_slack_import(self):
        """Test moderate generation with slack voltage limits."""
        result = run_shipped("ieee13_s2")
        assert_verified(self, result)
        self.assertIs(result.regime, Regime.IMPORT)
        self.assertTrue(np.all(result.solution.eta_up == 0))
        self.assertTrue(np.all(result.solution.eta_lo == 0))
        np.testing.assert_allclose(result.schedule.bus_price, PI_PLUS, atol=1e-12)

    def test_balanced(self):
        """Test zero aggregate net consumption at a uniform price."""
        result = run_shipped("ieee13_s3")
        assert_verified(self, result)
        self.assertIs(result.regime, Regime.BALANCED)
        self.assertAlmostEqual(result.solution.Z0, 0.0, places=6)
        mu = result.schedule.duals.mu
        self.assertTrue(PI_MINUS - 1e-9 <= mu <= PI_PLUS + 1e-9)

    def test_congested_export(self):
        """Test high generation with the upper limit binding."""
        result = run_shipped("ieee13_s4")
        assert_verified(self, result)
        self.assertIs(result.regime, Regime.EXPORT)
        self.assertTrue(np.any(result.solution.eta_up > 0))
        self.assertLess(float(np.min(result.schedule.bus_price)), PI_MINUS)

        v_max = result.network.v_max
        self.assertAlmostEqual(float(np.max(result.voltages_linear)), v_max, places=6)
        self.assertIsNotNone(result.voltages_exact)
        self.assertLess(float(np.max(result.voltages_exact)), v_max)


@pytest.mark.slow
class TestGenerationSweep(unittest.TestCase):
    """Sweep generation from zero to congested export."""

    @classmethod
    def setUpClass(cls):
        sc = load_scenario(SCENARIOS / "ieee13_s1.json")
        top = calibrate_generation(sc, "export_binding")
        cls.errors = []
        cls.results = sweep(sc, np.linspace(0.0, top, 20), errors=cls.errors)

    def test_every_point_solves(self):
        """Test that all 20 points are feasible and verified."""
        self.assertEqual(self.errors, [])
        self.assertEqual(len(self.results), 20)
        for result in self.results:
            with self.subTest(g_scale=result.g_scale):
                assert_verified(self, result)

    def test_threshold_rule(self):
        """Test that the sign of net import follows G0 against the thresholds."""
        for result in self.results:
            schedule = result.schedule
            with self.subTest(g_scale=result.g_scale):
                self.assertLessEqual(schedule.sigma1 - schedule.sigma2,
                                     1e-8 * max(1.0, abs(schedule.sigma2)))
                regime = classify_regime(schedule.G0, schedule.sigma1, schedule.sigma2)
                self.assertIs(regime, result.regime)
                Z0 = result.solution.Z0
                if regime is Regime.IMPORT:
                    self.assertGreater(Z0, 0.0)
                elif regime is Regime.EXPORT:
                    self.assertLess(Z0, 0.0)
                else:
                    self.assertLessEqual(abs(Z0), 1e-6)

    def test_regimes_never_step_back(self):
        """Test that regimes are non-decreasing and span import to export."""
        order = [REGIME_ORDER.index(r.regime) for r in self.results]
        self.assertEqual(order, sorted(order))
        self.assertIs(self.results[0].regime, Regime.IMPORT)
        self.assertIs(self.results[-1].regime, Regime.EXPORT)


if __name__ == '__main__':
    unittest.main()
