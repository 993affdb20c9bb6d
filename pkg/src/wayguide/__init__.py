"""Sensor-fusion navigation engine with a deterministic walker simulator.

Subsystems:
    geodesy       -- small-angle bearing/distance/turn math on GPS coordinates
    occupancy     -- 3D obstacle occupancy grid from depth images
    avoidance     -- collision detection and avoidance-heading line casting
    surface       -- 2D walkability grid and path-direction guidance
    localization  -- GPS offset correction, turn detection, compass alignment
    depthcal      -- monocular-depth scale/shift calibration via RANSAC
    audio         -- spatial-audio guidance signals and turn prompts
    hitl          -- CMA-ES personalization of audio parameters
    sim           -- deterministic world, sensors, agent, and scenario runner
"""

__version__ = "0.1.0"
