"""
Gridshare Simulator

Network-aware energy sharing under net metering: central welfare solve,
ex-ante bus prices, settlement and verification on radial feeders.
"""

__version__ = "1.0.0"
__author__ = "Gridshare Developers"
__description__ = "Network-aware energy sharing simulator for net-metered prosumer coalitions"
