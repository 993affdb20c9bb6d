"""Deterministic navigation simulator: scenes, sensors, agent, runner.

Builds synthetic environments (obstacle-course hallway, community route),
renders depth and segmentation frames against them, corrupts GPS/VIO/
compass streams with configurable noise, drives a kinematic walker from
guidance output, and scores runs with completion time, contacts, and
verbal-correction counts.
"""

from .scene import Box, Scene, SurfaceRegion, make_community_scene, make_hallway
from .sensors import DEFAULT_NOISE, ZERO_NOISE, SensorNoise
from .agent import Agent, step
from .runner import RunMetrics, run_scenario

__all__ = [
    "Agent",
    "Box",
    "DEFAULT_NOISE",
    "RunMetrics",
    "Scene",
    "SensorNoise",
    "SurfaceRegion",
    "ZERO_NOISE",
    "make_community_scene",
    "make_hallway",
    "run_scenario",
    "step",
]
