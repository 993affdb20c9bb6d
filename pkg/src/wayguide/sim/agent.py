"""Kinematic walker, contact scoring, and the long-cane model.

The agent is a point with a heading; it turns toward a commanded heading
at a bounded rate and walks at constant speed. It is never physically
stopped by geometry — brushing an obstacle is recorded as a contact
instead, so collision counts stay comparable across guidance modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..geodesy import wrap_radians
from ..occupancy import WorldPose
from .scene import Box

WALK_SPEED = 1.0
TURN_RATE = 60.0
CAMERA_HEIGHT = 1.3
CAMERA_PITCH_DOWN = 30.0
USER_HEIGHT = 1.8

BODY_RADIUS = 0.3
CONTACT_RELEASE = 0.15

CANE_LENGTH = 1.2
CANE_SWEEP_DEGREES = 30.0
CANE_SWEEP_HZ = 1.0


@dataclass
class Agent:
    """Walker state in true scene coordinates.

    Attributes:
        x, z: Horizontal position in meters (east, north).
        heading: Radians clockwise from +z (north).
        speed: Walking speed in m/s.
        camera_height: Height the phone camera is held at, meters.
        user_height: Body height used for the collision volume, meters.
    """

    x: float
    z: float
    heading: float
    speed: float = WALK_SPEED
    camera_height: float = CAMERA_HEIGHT
    user_height: float = USER_HEIGHT

    def pose(self, pitch_down_deg: float = CAMERA_PITCH_DOWN) -> WorldPose:
        """Camera pose at the current position and heading."""
        return WorldPose.from_heading(
            (self.x, self.camera_height, self.z),
            self.heading,
            pitch_down=math.radians(pitch_down_deg),
        )


def step(
    agent: Agent,
    target_heading: float,
    dt: float,
    turn_rate: float = TURN_RATE,
) -> None:
    """Advance one time step toward a commanded heading.

    The heading moves toward the target at up to ``turn_rate`` degrees per
    second (a 90 degree error at 60 deg/s closes 30 degrees in a 0.5 s
    step), then the agent walks speed * dt along the new heading.

    Args:
        agent: Walker to mutate.
        target_heading: Commanded heading in radians.
        dt: Step duration in seconds, > 0.
        turn_rate: Maximum turn rate in degrees per second.
    """
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    err = wrap_radians(target_heading - agent.heading)
    limit = math.radians(turn_rate) * dt
    agent.heading = wrap_radians(agent.heading + max(-limit, min(limit, err)))
    agent.x += agent.speed * dt * math.sin(agent.heading)
    agent.z += agent.speed * dt * math.cos(agent.heading)


RELEASE_SECONDS = 0.8


@dataclass
class ContactTracker:
    """Counts distinct obstacle contacts, debounced per approach.

    A contact registers when a box name first appears in the engaged set
    (body circle or cane tip touching it). The name stays active — and
    cannot register again — until it has been disengaged for
    ``RELEASE_SECONDS`` and the body has pulled back past the release
    band, so one approach counts once however many frames or cane sweeps
    touch the box. Counting is independent of box listing order.
    """

    radius: float = BODY_RADIUS
    release: float = CONTACT_RELEASE
    release_seconds: float = RELEASE_SECONDS
    contacts: list = field(default_factory=list)
    _last_engaged: dict = field(default_factory=dict)

    def update(self, t: float, engaged, holding) -> list:
        """Record new contacts; returns their box names.

        Args:
            t: Current time in seconds.
            engaged: Names touching the body or cane right now, in a
                deterministic order.
            holding: Names still within the body release band.

        Returns:
            Names newly contacted this update.
        """
        new = []
        for name in engaged:
            if name not in self._last_engaged:
                self.contacts.append(name)
                new.append(name)
            self._last_engaged[name] = t
        for name in list(self._last_engaged):
            stale = t - self._last_engaged[name] > self.release_seconds
            if stale and name not in holding and name not in engaged:
                del self._last_engaged[name]
        return new

    @property
    def count(self) -> int:
        return len(self.contacts)


def cane_tip(agent: Agent, t: float) -> tuple[float, float]:
    """Cane tip position for the sweep phase at time ``t``.

    The cane sweeps sinusoidally +/- 30 degrees around the heading at
    1 Hz with a 1.2 m reach.
    """
    sweep = math.radians(CANE_SWEEP_DEGREES) * math.sin(
        2.0 * math.pi * CANE_SWEEP_HZ * t
    )
    angle = agent.heading + sweep
    return (
        agent.x + CANE_LENGTH * math.sin(angle),
        agent.z + CANE_LENGTH * math.cos(angle),
    )


def cane_contact(agent: Agent, t: float, boxes) -> Box | None:
    """First box the cane tip is touching at time ``t``, if any."""
    tip_x, tip_z = cane_tip(agent, t)
    for box in boxes:
        if box.x0 <= tip_x <= box.x1 and box.z0 <= tip_z <= box.z1:
            return box
    return None


def contact_sets(
    agent: Agent,
    t: float,
    boxes,
    cane: bool,
    radius: float = BODY_RADIUS,
    release: float = CONTACT_RELEASE,
) -> tuple[list, set]:
    """(engaged, holding) name sets for contact tracking this frame.

    Engaged names are boxes the body circle or (when carried) the cane
    tip touches now, in box listing order; holding names are boxes still
    inside the body release band.
    """
    engaged = []
    holding = set()
    for box in boxes:
        d = box.distance_xz(agent.x, agent.z)
        if d <= radius:
            engaged.append(box.name)
        if d <= radius + release:
            holding.add(box.name)
    if cane:
        hit = cane_contact(agent, t, boxes)
        if hit is not None and hit.name not in engaged:
            engaged.append(hit.name)
    return engaged, holding
