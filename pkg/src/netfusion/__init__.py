"""Planning, simulation and analysis for fusing two entanglement networks."""

__version__ = "0.1.0"
