"""Equilibrium-propagation training of networks with binary synapses and
optionally binary neurons."""

__version__ = "0.1.0"
