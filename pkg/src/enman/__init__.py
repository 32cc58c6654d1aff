"""Reinforcement-learning energy manager for energy-harvesting wearables.

Trains a small Gaussian policy to allocate harvested energy hour by hour on
a battery-constrained device, keeping each day energy-neutral, and ships it
as a dependency-free binary bundle. Baselines (clairvoyant optimum,
prediction-based uniform allocation) and a deterministic evaluation harness
come along for benchmarking.
"""

__version__ = "0.1.0"
