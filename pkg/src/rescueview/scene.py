"""Scene model: entities, viewer agents, relevance, scripted dynamics and the
scenario text format."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

Vec3 = tuple[float, float, float]


class ScenarioError(ValueError):
    """Raised for scenarios that violate an invariant."""


class ScenarioParseError(ScenarioError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class EntityKind(enum.Enum):
    OrdinaryBuilding = "OrdinaryBuilding"
    Hospital = "Hospital"
    FireStation = "FireStation"
    PoliceStation = "PoliceStation"
    School = "School"
    Refuge = "Refuge"
    Road = "Road"
    Civilian = "Civilian"
    FireBrigade = "FireBrigade"
    PoliceForce = "PoliceForce"
    AmbulanceTeam = "AmbulanceTeam"


BUILDING_KINDS = frozenset({
    EntityKind.OrdinaryBuilding, EntityKind.Hospital, EntityKind.FireStation,
    EntityKind.PoliceStation, EntityKind.School, EntityKind.Refuge,
})
AGENT_KINDS = frozenset({EntityKind.FireBrigade, EntityKind.PoliceForce, EntityKind.AmbulanceTeam})


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in meters."""

    min: Vec3
    max: Vec3

    def __post_init__(self):
        if len(self.min) != 3 or len(self.max) != 3:
            raise ScenarioError("box corners must be 3D")
        if any(a > b for a, b in zip(self.min, self.max)):
            raise ScenarioError(f"box min {self.min} exceeds max {self.max}")

    @property
    def center(self) -> Vec3:
        return tuple(0.5 * (a + b) for a, b in zip(self.min, self.max))

    def contains(self, other: "Box") -> bool:
        return all(a <= c for a, c in zip(self.min, other.min)) and all(
            d <= b for b, d in zip(self.max, other.max)
        )

    def overlaps(self, other: "Box") -> bool:
        """True when the interiors intersect (touching faces do not count)."""
        return all(a < d and c < b for a, b, c, d in zip(self.min, self.max, other.min, other.max))


@dataclass(frozen=True)
class Entity:
    id: int
    kind: EntityKind
    box: Box
    fire_intensity: float = 0.0
    buried: bool = False
    # Per-entity override of the kind's base relevance.
    base_relevance: float | None = None

    def __post_init__(self):
        if self.id < 0:
            raise ScenarioError(f"entity id {self.id} is negative")
        if not 0.0 <= self.fire_intensity <= 1.0:
            raise ScenarioError(f"entity {self.id}: fire_intensity {self.fire_intensity} outside [0,1]")
        if self.base_relevance is not None and not 0.0 <= self.base_relevance <= 1.0:
            raise ScenarioError(f"entity {self.id}: base relevance {self.base_relevance} outside [0,1]")

    @property
    def burning(self) -> bool:
        return self.fire_intensity > 0.0


@dataclass(frozen=True)
class ViewerAgent:
    entity_id: int
    eye_height: float = 1.7


@dataclass(frozen=True)
class Scenario:
    """Immutable snapshot of the world at one tick."""

    tick: int
    entities: tuple[Entity, ...]
    viewers: tuple[ViewerAgent, ...]
    extent: Box

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "viewers", tuple(self.viewers))
        if self.tick < 0:
            raise ScenarioError("tick must be nonnegative")
        seen: set[int] = set()
        for e in self.entities:
            if e.id in seen:
                raise ScenarioError(f"duplicate entity id {e.id}")
            seen.add(e.id)
            if not self.extent.contains(e.box):
                raise ScenarioError(f"entity {e.id} lies outside the scenario extent")
        if not self.viewers:
            raise ScenarioError("a scenario needs at least one viewer")
        if len(self.viewers) > len(self.entities):
            raise ScenarioError("more viewers than entities")
        vseen: set[int] = set()
        for v in self.viewers:
            if v.entity_id not in seen:
                raise ScenarioError(f"viewer references missing entity {v.entity_id}")
            if v.entity_id in vseen:
                raise ScenarioError(f"entity {v.entity_id} carries two viewers")
            vseen.add(v.entity_id)

    def entity(self, entity_id: int) -> Entity:
        try:
            return self.entities[self.index_of[entity_id]]
        except KeyError:
            raise ScenarioError(f"no entity with id {entity_id}") from None

    @cached_property
    def index_of(self) -> dict[int, int]:
        return {e.id: i for i, e in enumerate(self.entities)}

    @cached_property
    def viewer_ids(self) -> tuple[int, ...]:
        return tuple(v.entity_id for v in self.viewers)

    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([e.id for e in self.entities], dtype=np.int64)

    @cached_property
    def box_min(self) -> np.ndarray:
        return np.array([e.box.min for e in self.entities], dtype=np.float64).reshape(-1, 3)

    @cached_property
    def box_max(self) -> np.ndarray:
        return np.array([e.box.max for e in self.entities], dtype=np.float64).reshape(-1, 3)

    @cached_property
    def box_center(self) -> np.ndarray:
        return 0.5 * (self.box_min + self.box_max)

    def viewer(self, entity_id: int) -> ViewerAgent:
        for v in self.viewers:
            if v.entity_id == entity_id:
                return v
        raise ScenarioError(f"entity {entity_id} is not a viewer")

    def viewer_position(self, entity_id: int) -> Vec3:
        """Camera anchor: entity box center raised by the viewer's eye height."""
        v = self.viewer(entity_id)
        cx, cy, cz = self.entity(entity_id).box.center
        return (cx, cy, cz + v.eye_height)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# relevance

DEFAULT_BASE_RELEVANCE: dict[EntityKind, float] = {
    EntityKind.Hospital: 0.9,
    EntityKind.FireStation: 0.8,
    EntityKind.PoliceStation: 0.7,
    EntityKind.School: 0.7,
    EntityKind.Refuge: 0.7,
    EntityKind.OrdinaryBuilding: 0.2,
    EntityKind.Road: 0.1,
    EntityKind.Civilian: 0.3,
    EntityKind.FireBrigade: 0.3,
    EntityKind.PoliceForce: 0.3,
    EntityKind.AmbulanceTeam: 0.3,
}


@dataclass(frozen=True)
class RelevanceConfig:
    base: Mapping[EntityKind, float] = field(default_factory=lambda: dict(DEFAULT_BASE_RELEVANCE))
    fire_bonus: float = 0.6
    buried_bonus: float = 0.5

    def __post_init__(self):
        missing = set(EntityKind) - set(self.base)
        if missing:
            raise ValueError(f"base relevance table lacks {sorted(k.value for k in missing)}")
        for name, value in [("fire_bonus", self.fire_bonus), ("buried_bonus", self.buried_bonus),
                            *((k.value, v) for k, v in self.base.items())]:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"relevance coefficient {name}={value} outside [0,1]")

    def __hash__(self):
        return hash((tuple(sorted((k.value, v) for k, v in self.base.items())), self.fire_bonus, self.buried_bonus))


def relevance(e: Entity, cfg: RelevanceConfig) -> float:
    base = cfg.base[e.kind] if e.base_relevance is None else e.base_relevance
    r = base + cfg.fire_bonus * e.fire_intensity + (cfg.buried_bonus if e.buried else 0.0)
    return min(1.0, max(0.0, r))


def relevance_array(s: Scenario, cfg: RelevanceConfig) -> np.ndarray:
    return np.array([relevance(e, cfg) for e in s.entities], dtype=np.float64)


# ---------------------------------------------------------------------------
# scripted dynamics


class EventKind(enum.Enum):
    Ignite = "Ignite"
    Extinguish = "Extinguish"
    Bury = "Bury"
    Rescue = "Rescue"


@dataclass(frozen=True)
class Event:
    tick: int
    kind: EventKind
    entity_id: int


@dataclass(frozen=True)
class DynamicsScript:
    events: tuple[Event, ...] = ()
    growth: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        ticks = [ev.tick for ev in self.events]
        if ticks != sorted(ticks):
            raise ScenarioError("dynamics events must be sorted by tick")
        if self.growth < 0:
            raise ScenarioError("fire growth rate must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "DynamicsScript":
        """Parse `GROWTH <g>` and `<tick> <EventKind> <entity_id>` lines; `#` starts a comment."""
        growth = 0.1
        events = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0].upper() == "GROWTH" and len(parts) == 2:
                    growth = float(parts[1])
                elif len(parts) == 3:
                    events.append(Event(int(parts[0]), EventKind(parts[1]), int(parts[2])))
                else:
                    raise ValueError(line)
            except ValueError as exc:
                raise ScenarioParseError(lineno, f"bad dynamics line: {exc}") from None
        events.sort(key=lambda ev: ev.tick)
        return cls(tuple(events), growth)


def advance_tick(s: Scenario, script: DynamicsScript) -> Scenario:
    """Step the world by one tick.

    Fires already burning grow by ``script.growth`` (clamped to 1); then the
    events scheduled for the new tick are applied.  An ignition starts a fire
    at intensity ``growth``.
    """
    new_tick = s.tick + 1
    entities = list(s.entities)
    for i, e in enumerate(entities):
        if e.burning:
            entities[i] = dataclasses.replace(e, fire_intensity=min(1.0, e.fire_intensity + script.growth))
    for ev in script.events:
        if ev.tick != new_tick:
            continue
        if ev.entity_id not in s.index_of:
            raise ScenarioError(f"event at tick {ev.tick} references missing entity {ev.entity_id}")
        i = s.index_of[ev.entity_id]
        e = entities[i]
        if ev.kind is EventKind.Ignite:
            if not e.burning:
                e = dataclasses.replace(e, fire_intensity=min(1.0, script.growth))
        elif ev.kind is EventKind.Extinguish:
            e = dataclasses.replace(e, fire_intensity=0.0)
        elif ev.kind is EventKind.Bury:
            e = dataclasses.replace(e, buried=True)
        else:
            e = dataclasses.replace(e, buried=False)
        entities[i] = e
    return dataclasses.replace(s, tick=new_tick, entities=tuple(entities))


# ---------------------------------------------------------------------------
# generator

DEFAULT_EXTENT = Box((0.0, 0.0, -1.0), (1000.0, 1000.0, 100.0))
STREET_WIDTH = 8.0
ROAD_DEPTH = 0.5
AGENT_SIZE = 1.0
AGENT_EYE = 1.7

_SPECIAL_BUILDINGS = [
    (EntityKind.Hospital, 0.01),
    (EntityKind.FireStation, 0.01),
    (EntityKind.PoliceStation, 0.01),
    (EntityKind.School, 0.02),
    (EntityKind.Refuge, 0.02),
]


def generate_scenario(seed: int, n_entities: int, m_viewers: int, extent: Box = DEFAULT_EXTENT) -> Scenario:
    """Lay out a synthetic city on a jittered block grid.

    Buildings sit one per block; rescue agents and civilians are 1 m cubes on
    the streets between blocks; roads are thin slabs under the street lines.
    Viewers ride on rescue agents.
    """
    if n_entities < 1:
        raise ValueError("n_entities must be positive")
    if m_viewers < 1:
        raise ValueError("m_viewers must be positive")
    if m_viewers > n_entities:
        raise ValueError(f"m_viewers ({m_viewers}) exceeds n_entities ({n_entities})")
    (x0, y0, z0), (x1, y1, z1) = extent.min, extent.max
    if not (x1 > x0 and y1 > y0 and z1 > z0):
        raise ValueError("extent is degenerate")
    if z0 > -ROAD_DEPTH or z1 < 30.0 + AGENT_SIZE:
        raise ValueError("extent must span z from below -0.5 m to above 31 m")

    rng = np.random.default_rng(seed)
    n_rescue = max(m_viewers, min(n_entities, n_entities // 20))
    n_civ = min(n_entities - n_rescue, n_entities // 20)
    n_rest = n_entities - n_rescue - n_civ

    # grid large enough to host every remaining entity as a building
    cols = max(1, math.ceil(math.sqrt(max(n_rest, 1))))
    cell_x = (x1 - x0) / cols
    cell_y = (y1 - y0) / cols
    lines = 2 * (cols - 1)
    n_roads = min(n_rest, lines)
    n_build = n_rest - n_roads

    entities: list[Entity] = []
    slots = rng.permutation(cols * cols)[:n_build]
    slots.sort()
    room_x = cell_x - STREET_WIDTH
    room_y = cell_y - STREET_WIDTH
    if min(room_x, room_y) <= 1.0:
        raise ValueError("extent too small for the requested number of buildings")
    for slot in slots:
        r, c = divmod(int(slot), cols)
        hi_x = min(40.0, room_x)
        hi_y = min(40.0, room_y)
        fx = rng.uniform(min(10.0, hi_x / 2), hi_x)
        fy = rng.uniform(min(10.0, hi_y / 2), hi_y)
        h = rng.uniform(5.0, 30.0)
        bx = x0 + c * cell_x + STREET_WIDTH / 2 + rng.uniform(0.0, room_x - fx)
        by = y0 + r * cell_y + STREET_WIDTH / 2 + rng.uniform(0.0, room_y - fy)
        u = rng.random()
        kind = EntityKind.OrdinaryBuilding
        acc = 0.0
        for k, p in _SPECIAL_BUILDINGS:
            acc += p
            if u < acc:
                kind = k
                break
        fire = float(rng.uniform(0.1, 1.0)) if rng.random() < 0.05 else 0.0
        box = Box((float(bx), float(by), 0.0), (float(bx + fx), float(by + fy), float(h)))
        entities.append(Entity(len(entities), kind, box, fire_intensity=fire))

    for i in range(n_roads):
        half = STREET_WIDTH / 2
        if i < cols - 1:
            x = x0 + (i + 1) * cell_x
            box = Box((x - half, y0, -ROAD_DEPTH), (x + half, y1, 0.0))
        else:
            y = y0 + (i - cols + 2) * cell_y
            box = Box((x0, y - half, -ROAD_DEPTH), (x1, y + half, 0.0))
        entities.append(Entity(len(entities), EntityKind.Road, box))

    def street_point() -> tuple[float, float]:
        # a point on a street line (or on the extent border when there is none)
        if rng.random() < 0.5:
            line = int(rng.integers(0, cols + 1))
            x = x0 + line * cell_x + rng.uniform(-1.5, 1.5)
            y = rng.uniform(y0, y1)
        else:
            line = int(rng.integers(0, cols + 1))
            y = y0 + line * cell_y + rng.uniform(-1.5, 1.5)
            x = rng.uniform(x0, x1)
        half = AGENT_SIZE / 2
        return (min(max(x, x0 + half), x1 - half), min(max(y, y0 + half), y1 - half))

    agent_kinds = sorted(AGENT_KINDS, key=lambda k: k.value)
    agent_ids = []
    for i in range(n_rescue + n_civ):
        px, py = street_point()
        h = AGENT_SIZE / 2
        box = Box((px - h, py - h, 0.0), (px + h, py + h, AGENT_SIZE))
        if i < n_rescue:
            kind = agent_kinds[int(rng.integers(0, len(agent_kinds)))]
            agent_ids.append(len(entities))
            entities.append(Entity(len(entities), kind, box))
        else:
            buried = bool(rng.random() < 0.3)
            entities.append(Entity(len(entities), EntityKind.Civilian, box, buried=buried))

    chosen = sorted(int(a) for a in rng.choice(agent_ids, size=m_viewers, replace=False))
    viewers = tuple(ViewerAgent(a, AGENT_EYE) for a in chosen)
    return Scenario(0, tuple(entities), viewers, extent)


def default_eye_height(e: Entity) -> float:
    """1.7 m above agents; 1 m above the roof of buildings."""
    if e.kind in BUILDING_KINDS:
        return 0.5 * (e.box.max[2] - e.box.min[2]) + 1.0
    return AGENT_EYE


# ---------------------------------------------------------------------------
# text format


def format_float(x: float) -> str:
    return repr(float(x))


def format_vec(v: Iterable[float]) -> str:
    return ",".join(format_float(c) for c in v)


def parse_vec(text: str, n: int = 3) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    out = tuple(float(p) for p in parts)
    if not all(math.isfinite(c) for c in out):
        raise ValueError(f"non-finite number in {text!r}")
    return out


def parse_fields(tokens: Sequence[str]) -> dict[str, str]:
    """Split ``key=value`` tokens; the first occurrence of a key wins."""
    out: dict[str, str] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ValueError(f"malformed field {tok!r}")
        out.setdefault(key, value)
    return out


def entity_line(e: Entity) -> str:
    line = (f"ENT id={e.id} kind={e.kind.value} min={format_vec(e.box.min)} max={format_vec(e.box.max)} "
            f"fire={format_float(e.fire_intensity)} buried={int(e.buried)}")
    if e.base_relevance is not None:
        line += f" base={format_float(e.base_relevance)}"
    return line


def viewer_line(v: ViewerAgent) -> str:
    return f"VIEWER ent={v.entity_id} eye={format_float(v.eye_height)}"


def parse_entity_fields(f: Mapping[str, str]) -> Entity:
    buried = f["buried"]
    if buried not in ("0", "1"):
        raise ValueError(f"buried must be 0 or 1, got {buried!r}")
    fire = float(f["fire"])
    base = float(f["base"]) if "base" in f else None
    return Entity(
        id=_parse_nonneg_int(f["id"]),
        kind=EntityKind(f["kind"]),
        box=Box(parse_vec(f["min"]), parse_vec(f["max"])),
        fire_intensity=fire,
        buried=buried == "1",
        base_relevance=base,
    )


def parse_viewer_fields(f: Mapping[str, str]) -> ViewerAgent:
    eye = float(f["eye"])
    if not math.isfinite(eye):
        raise ValueError("eye height must be finite")
    return ViewerAgent(_parse_nonneg_int(f["ent"]), eye)


def _parse_nonneg_int(text: str) -> int:
    if not text.isdigit():
        raise ValueError(f"expected a nonnegative integer, got {text!r}")
    return int(text)


def serialize_scenario(s: Scenario) -> str:
    lines = [f"SCEN tick={s.tick} extent={format_vec(s.extent.min)},{format_vec(s.extent.max)}"]
    lines += [entity_line(e) for e in sorted(s.entities, key=lambda e: e.id)]
    lines += [viewer_line(v) for v in s.viewers]
    lines.append("END")
    return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> Scenario:
    header = None
    entities: list[Entity] = []
    viewers: list[ViewerAgent] = []
    ids: set[int] = set()
    ended = False
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.strip()
        if not line:
            continue
        if ended:
            raise ScenarioParseError(lineno, "content after END")
        word, *tokens = line.split()
        try:
            f = parse_fields(tokens)
            if word == "SCEN":
                if header is not None:
                    raise ValueError("duplicate SCEN header")
                ext = parse_vec(f["extent"], 6)
                header = (_parse_nonneg_int(f["tick"]), Box(ext[:3], ext[3:]))
            elif header is None:
                raise ValueError("missing SCEN header")
            elif word == "ENT":
                e = parse_entity_fields(f)
                if e.id in ids:
                    raise ScenarioParseError(lineno, f"duplicate entity id {e.id}")
                ids.add(e.id)
                entities.append(e)
            elif word == "VIEWER":
                viewers.append(parse_viewer_fields(f))
            elif word == "END":
                ended = True
            else:
                raise ValueError(f"unknown record {word!r}")
        except ScenarioParseError:
            raise
        except KeyError as exc:
            raise ScenarioParseError(lineno, f"missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc)) from None
    if header is None:
        raise ScenarioParseError(1, "missing SCEN header")
    if not ended:
        raise ScenarioParseError(len(text.split("\n")), "missing END terminator")
    entities.sort(key=lambda e: e.id)
    return Scenario(header[0], tuple(entities), tuple(viewers), header[1])
