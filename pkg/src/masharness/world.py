"""Discrete-time streetlight neighborhood with logging agents.

Lights sit on a rectangular grid with 4-neighbor adjacency, one per node,
each wrapping an ambient-light sensor, a motion sensor, a wireless
transceiver, and a binary lamp.  Pedestrians walk seeded shortest-path
routes between border nodes and advance only when their current and next
nodes are lit above the dark threshold.  Every agent action is published as
a LogEvent when a broker is attached; without one the same simulation runs
silently, which is what the learning loop uses.

Each tick raises the event-clock floor by one tick's worth of microseconds,
so ``timestamp // TICK_US`` recovers the tick an event was published on and
test machines can measure timeouts in virtual time.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np

from .broker import Broker
from .logmodel import TICK_US
from .neural import decode

FAULT_GO_DARK = "go-dark"
FAULT_SENSOR_STUCK = "sensor-stuck"
FAULT_MUTE_WIRELESS = "mute-wireless"
FAULT_SKIP_HANDSHAKE = "skip-handshake"
FAULT_KINDS = (
    FAULT_GO_DARK,
    FAULT_SENSOR_STUCK,
    FAULT_MUTE_WIRELESS,
    FAULT_SKIP_HANDSHAKE,
)


class WorldError(Exception):
    """Base class for simulation errors."""


class InvalidConfig(WorldError):
    """A world configuration value is out of range or unparseable."""


class UnknownFault(WorldError):
    """Fault kind is not one of FAULT_KINDS."""


class UnknownTarget(WorldError):
    """Fault spec names a light that does not exist."""


@dataclass(frozen=True, slots=True)
class WorldConfig:
    gridWidth: int = 5
    gridHeight: int = 5
    wirelessRange: int = 1
    numPeople: int = 5
    maxTicks: int = 200
    ambientLight: float = 0.05
    lightBrightness: float = 0.8
    darkThreshold: float = 0.15
    energyPerTickOn: float = 1.0
    rngSeed: int = 1

    def __post_init__(self):
        if self.gridWidth < 1 or self.gridHeight < 1:
            raise InvalidConfig("grid dimensions must be positive")
        if self.wirelessRange < 0:
            raise InvalidConfig("wirelessRange must be >= 0")
        if self.numPeople < 0:
            raise InvalidConfig("numPeople must be >= 0")
        if self.maxTicks < 1:
            raise InvalidConfig("maxTicks must be positive")
        for name in ("ambientLight", "lightBrightness", "darkThreshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0,1], got {v}")
        if self.darkThreshold >= self.lightBrightness:
            raise InvalidConfig("darkThreshold must be below lightBrightness")
        if self.energyPerTickOn <= 0:
            raise InvalidConfig("energyPerTickOn must be positive")


_INT_FIELDS = ("gridWidth", "gridHeight", "wirelessRange", "numPeople", "maxTicks", "rngSeed")
_FLOAT_FIELDS = ("ambientLight", "lightBrightness", "darkThreshold", "energyPerTickOn")


def load_world_config(path) -> WorldConfig:
    """Read a flat key=value config file; keys are the WorldConfig fields."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidConfig(f"line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                if key in _INT_FIELDS:
                    values[key] = int(value)
                elif key in _FLOAT_FIELDS:
                    values[key] = float(value)
                else:
                    raise InvalidConfig(f"line {lineno}: unknown key {key!r}")
            except ValueError:
                raise InvalidConfig(f"line {lineno}: bad value for {key}: {value!r}") from None
    return WorldConfig(**values)


@dataclass(frozen=True, slots=True)
class SensorFrame:
    lightLevel: float
    motionDetected: bool
    wirelessIn: float


@dataclass(frozen=True, slots=True)
class FaultSpec:
    kind: str
    targets: tuple[str, ...]


def parse_fault_spec(text: str) -> FaultSpec:
    """Parse ``<kind>:<lightId>[,<lightId>...]`` fault syntax."""
    kind, sep, rest = text.partition(":")
    if not sep or not rest:
        raise UnknownFault(f"expected <kind>:<lightId>[,...], got {text!r}")
    if kind not in FAULT_KINDS:
        raise UnknownFault(f"unknown fault kind {kind!r}, expected one of {FAULT_KINDS}")
    targets = tuple(t for t in rest.split(",") if t)
    if not targets:
        raise UnknownFault(f"fault {kind!r} names no targets")
    return FaultSpec(kind=kind, targets=targets)


@dataclass(slots=True)
class Streetlight:
    id: str
    position: tuple[int, int]
    lightOn: bool = False
    outbox: float = 0.0
    faultFlags: set[str] = field(default_factory=set)
    stuckLightLevel: float | None = None
    lastFrame: SensorFrame | None = None


@dataclass(slots=True)
class Pedestrian:
    id: str
    route: tuple[tuple[int, int], ...]
    positionIndex: int = 0
    finished: bool = False
    ticksMoving: int = 0

    @property
    def position(self) -> tuple[int, int]:
        return self.route[self.positionIndex]


@dataclass(frozen=True, slots=True)
class EpisodeMetrics:
    pPeople: float
    pTrip: float
    pEnergy: float


def _node_id(config: WorldConfig, position: tuple[int, int]) -> str:
    x, y = position
    return f"node{y * config.gridWidth + x + 1}"


def _border_positions(config: WorldConfig) -> list[tuple[int, int]]:
    w, h = config.gridWidth, config.gridHeight
    return [
        (x, y)
        for y in range(h)
        for x in range(w)
        if x == 0 or x == w - 1 or y == 0 or y == h - 1
    ]


def _staircase(start, end, rng: random.Random) -> tuple[tuple[int, int], ...]:
    """Random monotone lattice path, one of the shortest routes start->end."""
    (x, y), (ex, ey) = start, end
    dx = 1 if ex > x else -1
    dy = 1 if ey > y else -1
    moves = ["h"] * abs(ex - x) + ["v"] * abs(ey - y)
    rng.shuffle(moves)
    route = [(x, y)]
    for move in moves:
        if move == "h":
            x += dx
        else:
            y += dy
        route.append((x, y))
    return tuple(route)


def build_routes(config: WorldConfig, rng: random.Random) -> list[tuple[tuple[int, int], ...]]:
    """Seeded border-to-border shortest-path routes, one per pedestrian."""
    if config.numPeople == 0:
        return []
    border = _border_positions(config)
    if len(border) < 2:
        raise InvalidConfig("grid too small to route pedestrians between distinct border nodes")
    routes = []
    for _ in range(config.numPeople):
        start, end = rng.sample(border, 2)
        routes.append(_staircase(start, end, rng))
    return routes


def seeds_with_light_on_route(config: WorldConfig, light_id: str, count: int,
                              start_seed: int = 1) -> list[int]:
    """First ``count`` seeds whose routes pass through the given light.

    Used to pick worlds where a fault on that light is route-critical.
    """
    found = []
    seed = start_seed
    while len(found) < count:
        rng = random.Random(seed)
        routes = build_routes(replace(config, rngSeed=seed), rng)
        ids = {_node_id(config, pos) for route in routes for pos in route}
        if light_id in ids:
            found.append(seed)
        seed += 1
        if seed - start_seed > 100_000:
            raise WorldError(f"no seed routes through {light_id!r}")
    return found


class WorldState:
    """Mutable simulation state plus the logging plumbing."""

    def __init__(self, config: WorldConfig, broker: Broker | None, episode_tag: str | None):
        self.config = config
        self.broker = broker
        self.episode_tag = episode_tag
        self.tick = 0
        self.onTicks = 0  # integer count of light-on tick slots, for exact energy
        self.lights: list[Streetlight] = []
        self.lights_by_id: dict[str, Streetlight] = {}
        self.light_at: dict[tuple[int, int], Streetlight] = {}
        self.people: list[Pedestrian] = []
        # previous-tick communication snapshots (wireless causality)
        self.prev_outbox: dict[str, float] = {}
        self.prev_emitting: set[tuple[int, int]] = set()
        self._neighbors: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}
        self._wireless: dict[str, tuple[str, ...]] = {}

    # -- naming ------------------------------------------------------------

    def agent_name(self, base: str) -> str:
        if self.episode_tag:
            return f"{base}@{self.episode_tag}"
        return base

    # -- logging -----------------------------------------------------------

    def publish(self, agentType, agentName, action, typeLog="info", *,
                sourceUnit, sourceOperation, sourceLine, resource, message=""):
        if self.broker is None:
            return None
        return self.broker.publisher(agentType, self.agent_name(agentName)).log(
            action,
            typeLog,
            sourceUnit=sourceUnit,
            sourceOperation=sourceOperation,
            sourceLine=sourceLine,
            resource=resource,
            message=message,
        )

    # -- geometry ----------------------------------------------------------

    def neighbors(self, position) -> tuple[tuple[int, int], ...]:
        return self._neighbors[position]

    def wireless_neighbors(self, light: Streetlight) -> tuple[str, ...]:
        return self._wireless[light.id]

    # -- state queries -----------------------------------------------------

    @property
    def all_finished(self) -> bool:
        return all(p.finished for p in self.people)

    @property
    def energy(self) -> float:
        return self.onTicks * self.config.energyPerTickOn

    def emitting(self, light: Streetlight) -> bool:
        """Whether the lamp is actually radiating right now."""
        return light.lightOn and FAULT_GO_DARK not in light.faultFlags

    def perceived_light(self, position) -> float:
        """Light level governing pedestrian movement at a node.

        Movement uses the node's own lamp only; sensor readings additionally
        see adjacent lamps (see sense()).
        """
        level = self.config.ambientLight
        lamp = self.light_at.get(position)
        if lamp is not None and self.emitting(lamp):
            level += self.config.lightBrightness
        return min(level, 1.0)

    def metrics(self) -> EpisodeMetrics:
        cfg = self.config
        if cfg.numPeople == 0:
            p_people, p_trip = 1.0, 0.0
        else:
            p_people = sum(1 for p in self.people if p.finished) / cfg.numPeople
            p_trip = sum(p.ticksMoving for p in self.people) / (cfg.numPeople * cfg.maxTicks)
        p_energy = self.onTicks / (len(self.lights) * cfg.maxTicks)
        return EpisodeMetrics(pPeople=p_people, pTrip=min(p_trip, 1.0), pEnergy=min(p_energy, 1.0))


def init_world(
    config: WorldConfig,
    broker: Broker | None = None,
    *,
    faults=(),
    episode_tag: str | None = None,
) -> WorldState:
    """Build the grid, route the pedestrians, and run the Manager handshake.

    Faults given here are installed before the handshake so skip-handshake
    can suppress the createAdaptiveAgent log; the other kinds behave exactly
    as if injected right after initialization.
    """
    world = WorldState(config, broker, episode_tag)
    w, h = config.gridWidth, config.gridHeight
    for y in range(h):
        for x in range(w):
            light = Streetlight(id=_node_id(config, (x, y)), position=(x, y))
            world.lights.append(light)
            world.lights_by_id[light.id] = light
            world.light_at[(x, y)] = light
            world.prev_outbox[light.id] = 0.0
    for (x, y) in list(world.light_at):
        adj = [
            (nx, ny)
            for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1))
            if 0 <= nx < w and 0 <= ny < h
        ]
        world._neighbors[(x, y)] = tuple(adj)
    for light in world.lights:
        x, y = light.position
        in_range = [
            other.id
            for other in world.lights
            if other.id != light.id
            and abs(other.position[0] - x) + abs(other.position[1] - y) <= config.wirelessRange
        ]
        world._wireless[light.id] = tuple(in_range)

    rng = random.Random(config.rngSeed)
    for i, route in enumerate(build_routes(config, rng), start=1):
        world.people.append(Pedestrian(id=f"person{i}", route=route))

    for spec in faults:
        inject_fault(world, spec)

    if world.broker is not None:
        world.broker.clock.advance_to(0)
    for light in world.lights:
        _handshake(world, light)
    return world


def _handshake(world: WorldState, light: Streetlight) -> None:
    """Manager bootstraps one light's controlling agent (five logs)."""
    world.publish(
        "MANAGER", "manager01", "receiveMsgFromSmartThing",
        sourceUnit="Manager", sourceOperation="handleSmartThing", sourceLine=31,
        resource="smartThing", message=f"thing={light.id}",
    )
    if FAULT_SKIP_HANDSHAKE not in light.faultFlags:
        world.publish(
            "MANAGER", "manager01", "createAdaptiveAgent",
            sourceUnit="Manager", sourceOperation="createAgent", sourceLine=38,
            resource="adaptiveAgent", message=f"controller for {light.id}",
        )
    world.publish(
        "AdaptiveAgent", "lightsAgent", "connect",
        sourceUnit="AdaptiveAgent", sourceOperation="connect", sourceLine=52,
        resource="system", message=f"{light.id} joined",
    )
    world.publish(
        "MANAGER", "manager01", "sendMsgToSmartThing",
        sourceUnit="Manager", sourceOperation="handleSmartThing", sourceLine=46,
        resource="smartThing", message=f"ack to {light.id}",
    )
    world.publish(
        "AdaptiveAgent", "lightsAgent", "receiveInputDataFromSmartThing",
        sourceUnit="AdaptiveAgent", sourceOperation="collectData", sourceLine=61,
        resource="msgAdaptiveAgent", message=f"initial data from {light.id}",
    )


def inject_fault(world: WorldState, spec: FaultSpec) -> None:
    """Install one fault kind on one or more lights."""
    if spec.kind not in FAULT_KINDS:
        raise UnknownFault(f"unknown fault kind {spec.kind!r}")
    targets = []
    for target in spec.targets:
        light = world.lights_by_id.get(target)
        if light is None:
            raise UnknownTarget(f"no light named {target!r}")
        targets.append(light)
    for light in targets:
        light.faultFlags.add(spec.kind)


def sense(light: Streetlight, world: WorldState) -> SensorFrame:
    """Read one light's sensors and forward the frame to its agent.

    wirelessIn is the strongest neighbor outbox from the previous tick, and
    lightLevel sees the ambient level plus every radiating lamp at the node
    or adjacent to it, so the reading is independent of actuation order
    within the current tick.
    """
    cfg = world.config
    level = cfg.ambientLight
    for pos in (light.position,) + world.neighbors(light.position):
        if pos in world.prev_emitting:
            level += cfg.lightBrightness
    level = min(level, 1.0)
    if FAULT_SENSOR_STUCK in light.faultFlags:
        if light.stuckLightLevel is None:
            light.stuckLightLevel = level
        level = light.stuckLightLevel

    motion = any(
        not p.finished
        and (p.position == light.position or p.position in world.neighbors(light.position))
        for p in world.people
    )

    wireless = 0.0
    for other_id in world.wireless_neighbors(light):
        wireless = max(wireless, world.prev_outbox[other_id])

    frame = SensorFrame(lightLevel=level, motionDetected=motion, wirelessIn=wireless)
    light.lastFrame = frame

    world.publish(
        "lightContainer", light.id, "receiveWirelessData",
        sourceUnit="Light", sourceOperation="sense", sourceLine=40,
        resource="wirelessReceiver", message=f"in={frame.wirelessIn:.6f}",
    )
    world.publish(
        "lightContainer", light.id, "readLightSensor",
        sourceUnit="Light", sourceOperation="sense", sourceLine=42,
        resource="lightSensor", message=f"level={frame.lightLevel:.6f}",
    )
    world.publish(
        "lightContainer", light.id, "readMotionSensor",
        sourceUnit="Light", sourceOperation="sense", sourceLine=44,
        resource="motionSensor", message=f"motion={1 if frame.motionDetected else 0}",
    )
    world.publish(
        "lightContainer", light.id, "sendMsg",
        sourceUnit="Light", sourceOperation="sense", sourceLine=47,
        resource="msgAdaptiveAgent", message=f"frame from {light.id}",
    )
    return frame


def actuate(light: Streetlight, decision, world: WorldState) -> None:
    """Apply one controller output pair (led, wireless) to the hardware."""
    led = float(decision[0])
    wireless = float(decision[1])
    world.publish(
        "lightContainer", light.id, "receiveNeuralNetworkCommand",
        sourceUnit="Light", sourceOperation="act", sourceLine=55,
        resource="neuralCommand", message=f"led={led:.6f} wireless={wireless:.6f}",
    )
    light.lightOn = led > 0
    if light.lightOn:
        world.publish(
            "lightContainer", light.id, "switchLightON",
            sourceUnit="Light", sourceOperation="act", sourceLine=58,
            resource="lightActuator", message="on",
        )
    else:
        world.publish(
            "lightContainer", light.id, "switchLightOFF",
            sourceUnit="Light", sourceOperation="act", sourceLine=58,
            resource="lightActuator", message="off",
        )
    light.outbox = 0.0 if FAULT_MUTE_WIRELESS in light.faultFlags else max(wireless, 0.0)
    world.publish(
        "lightContainer", light.id, "sendWirelessData",
        sourceUnit="Light", sourceOperation="act", sourceLine=61,
        resource="wirelessTransmitter", message=f"out={light.outbox:.6f}",
    )
    if world.emitting(light):
        # own sensor confirms a brightness at or above the lamp's own output
        world.publish(
            "lightContainer", light.id, "detectLight",
            sourceUnit="Light", sourceOperation="act", sourceLine=64,
            resource="lightSensor", message=f"brightness={world.config.lightBrightness:.6f}",
        )


def move_people(world: WorldState) -> None:
    """Advance every pedestrian that has light to walk by.

    A pedestrian moves one node per tick iff the perceived light at both the
    current and the next node clears darkThreshold; every unfinished
    pedestrian pays one tick of trip time whether it moved or not.
    """
    threshold = world.config.darkThreshold
    for person in world.people:
        if person.finished:
            continue
        person.ticksMoving += 1
        here = person.position
        nxt = person.route[person.positionIndex + 1]
        if world.perceived_light(here) > threshold and world.perceived_light(nxt) > threshold:
            person.positionIndex += 1
            if person.positionIndex == len(person.route) - 1:
                person.finished = True


def step_world(world: WorldState, controller) -> None:
    """Run one tick: every light senses and acts, then pedestrians move.

    Sensor frames are computed against start-of-tick snapshots, so the
    per-light ordering inside the tick cannot leak actuations into sensor
    readings.  The controller is queried once for all lights (forward_batch
    when available) to keep the arithmetic identical between silent and
    logged runs.
    """
    world.tick += 1
    if world.broker is not None:
        world.broker.clock.advance_to(world.tick * TICK_US)

    frames = [sense(light, world) for light in world.lights]

    inputs = np.array(
        [[f.lightLevel, 1.0 if f.motionDetected else 0.0, f.wirelessIn] for f in frames],
        dtype=float,
    )
    if hasattr(controller, "forward_batch"):
        outputs = np.asarray(controller.forward_batch(inputs), dtype=float)
    elif hasattr(controller, "forward"):
        outputs = np.array([controller.forward(row) for row in inputs], dtype=float)
    else:
        outputs = np.array([controller(row) for row in inputs], dtype=float)
    if outputs.shape != (len(world.lights), 2):
        raise WorldError(f"controller must yield (lights, 2) outputs, got {outputs.shape}")

    for light, frame, out in zip(world.lights, frames, outputs):
        if world.broker is not None:
            world.publish(
                "AdaptiveAgent", "lightsAgent", "receiveInputDataFromSmartThing",
                sourceUnit="AdaptiveAgent", sourceOperation="collectData", sourceLine=61,
                resource="msgAdaptiveAgent",
                message=f"from {light.id} level={frame.lightLevel:.6f} "
                        f"motion={1 if frame.motionDetected else 0} wireless={frame.wirelessIn:.6f}",
            )
            world.publish(
                "AdaptiveAgent", "lightsAgent", "useControllerToGetOutput",
                sourceUnit="AdaptiveAgent", sourceOperation="makeDecision", sourceLine=67,
                resource="neuralController", message=f"deciding for {light.id}",
            )
            world.publish(
                "AdaptiveAgent", "lightsAgent", "sendOutputToSmartThing",
                sourceUnit="AdaptiveAgent", sourceOperation="takeAction", sourceLine=73,
                resource="msgSmartThing",
                message=f"to {light.id} led={out[0]:.6f} wireless={out[1]:.6f}",
            )
        actuate(light, out, world)

    move_people(world)
    world.onTicks += sum(1 for l in world.lights if l.lightOn)
    # end-of-tick snapshots feed the next tick's sensor frames
    world.prev_emitting = {l.position for l in world.lights if world.emitting(l)}
    world.prev_outbox = {l.id: l.outbox for l in world.lights}


def run_episode(
    config: WorldConfig,
    genome,
    broker: Broker | None = None,
    *,
    faults=(),
    episode_tag: str | None = None,
) -> EpisodeMetrics:
    """Run one full episode and report the normalized metrics.

    ``genome`` may be a flat gene sequence (decoded with the default
    topology) or any controller object.  The episode ends early when every
    pedestrian has finished; a world with no pedestrians always runs the
    full maxTicks.
    """
    if hasattr(genome, "forward") or hasattr(genome, "forward_batch") or callable(genome):
        controller = genome
    else:
        controller = decode(genome)
    world = init_world(config, broker, faults=faults, episode_tag=episode_tag)
    for _ in range(config.maxTicks):
        step_world(world, controller)
        if config.numPeople > 0 and world.all_finished:
            break
    if world.all_finished:
        world.publish(
            "lightContainer", "lights", "finishSimulation",
            sourceUnit="Simulation", sourceOperation="finish", sourceLine=9,
            resource="simulation", message=f"tick={world.tick}",
        )
    return world.metrics()
