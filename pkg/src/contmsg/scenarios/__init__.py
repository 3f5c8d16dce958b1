"""Desk-scale experiment harness: ping-pong, bursts, offloading, statecheck."""

from .config import ScenarioConfig, ScenarioResult
from .pingpong import run_pingpong
from .burst import run_burst
from .offload import run_offload
from .statecheck import run_statecheck

RUNNERS = {
    "pingpong": run_pingpong,
    "burst": run_burst,
    "offload": run_offload,
    "statecheck": run_statecheck,
}

__all__ = ["ScenarioConfig", "ScenarioResult", "RUNNERS",
           "run_pingpong", "run_burst", "run_offload", "run_statecheck"]
