"""Decentralized reinforcement communication learning on social networks."""

from .engine import HAVE_NATIVE
from .experiment import SimulationConfig, SweepSpec, preset, run_simulation, run_sweep
from .topology import Kind, SocialNetwork, TopologySpec

__version__ = "0.1.0"

__all__ = [
    "HAVE_NATIVE",
    "Kind",
    "SimulationConfig",
    "SocialNetwork",
    "SweepSpec",
    "TopologySpec",
    "preset",
    "run_simulation",
    "run_sweep",
]
