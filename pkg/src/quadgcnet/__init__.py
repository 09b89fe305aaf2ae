"""Guidance & control networks for quadcopters: optimal trajectories, imitation
learning, rotor-limit identification and closed-loop simulation."""

__version__ = "0.1.0"
