"""Simulation and optimization of periodic-review lost-sales inventory policies."""
