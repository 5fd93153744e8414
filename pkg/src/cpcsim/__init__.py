"""Simulator and checker for concurrent policy composition in SDN control planes."""
from .checker import History, Verdict, sequentially_composable, tag_complexity
from .scenario import Scenario, fig1, gen_lowerbound, weakport
from .scheduler import Simulator, run_until_quiescent

__all__ = ["History", "Verdict", "sequentially_composable", "tag_complexity",
           "Scenario", "fig1", "gen_lowerbound", "weakport", "Simulator", "run_until_quiescent"]
