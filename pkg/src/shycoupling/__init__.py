"""Co-adapted couplings of reflected Brownian motion in convex domains.

Simulation of coupled reflected pairs, Lyapunov-type certificates that
force epsilon-coupling, and ensemble statistics that check them.
"""
from .dynamics import CoupledTrajectory, SimConfig, simulate_ensemble, simulate_pair
from .geometry import Ball, ConvexDomain, Ellipse, Polygon, Superellipse, domain_from_dict
from .strategies import Perverse, Reflection, Synchronous, Independent, strategy_from_config

__version__ = "0.1.0"
