"""Rhythmic control for mixed bus and car traffic.

Design pipeline (background rhythm, joint platoon/bus/car optimisation,
bilevel heuristic) plus a slot-based simulator with fixed-time signal
baselines.
"""
__version__ = "0.1.0"
