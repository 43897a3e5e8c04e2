"""
Scenario harness: runs, sweeps, calibration and reporting.
"""
