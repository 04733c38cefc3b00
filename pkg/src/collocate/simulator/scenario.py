"""Scenario description, JSON loading and validation."""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..params import ParamsError, ProtocolParams, params_from_dict, params_to_dict, validate

ADVERSARY_KINDS = ("rebroadcaster", "fake-uploader")
FORGERY_KINDS = ("foreign", "stale", "saturate")


class ScenarioError(ValueError):
    def __init__(self, issues: list[tuple[str, str]]):
        self.issues = issues
        super().__init__("; ".join(f"{where}: {msg}" for where, msg in issues))


@dataclass(frozen=True)
class ContactEvent:
    """``b`` hears ``a`` at ``rssi_ab``; ``a`` hears ``b`` at ``rssi_ba`` only when symmetric."""

    a: int
    b: int
    start_tick: int
    duration_ticks: int = 1
    rssi_ab: float = -60.0
    rssi_ba: float = -60.0
    symmetric: bool = True
    loc_bucket: int = 0

    @property
    def last_tick(self) -> int:
        return self.start_tick + self.duration_ticks - 1

    def ticks(self) -> range:
        return range(self.start_tick, self.start_tick + self.duration_ticks)


@dataclass(frozen=True)
class Surface:
    surface_id: int
    attach_tick: int
    clean_tick: int


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    agent: int
    # rebroadcaster
    victim: int | None = None
    capture_start: int = 0
    capture_end: int = 0
    replay_contacts: tuple[ContactEvent, ...] = ()
    # fake-uploader
    forgery: str = "foreign"
    forged_count: int = 0


@dataclass(frozen=True)
class Scenario:
    params: ProtocolParams
    n_agents: int
    duration_ticks: int
    contacts: tuple[ContactEvent, ...] = ()
    diagnoses: tuple[tuple[int, int], ...] = ()
    surfaces: tuple[Surface, ...] = ()
    adversaries: tuple[AdversarySpec, ...] = ()
    master_seed: int = 0

    def replace(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_params(self, params: ProtocolParams) -> "Scenario":
        return dataclasses.replace(self, params=params)


def validate_scenario(sc: Scenario) -> Scenario:
    issues: list[tuple[str, str]] = []

    def need(ok: bool, where: str, msg: str) -> None:
        if not ok:
            issues.append((where, msg))

    try:
        validate(sc.params)
    except ParamsError as exc:
        issues.extend((f"params.{name}", msg) for name, msg in exc.issues)
    need(sc.n_agents >= 1, "n_agents", "must be >= 1")
    need(sc.duration_ticks >= 0, "duration_ticks", "must be >= 0")
    need(0 <= sc.master_seed < 2**64, "master_seed", "must fit in 64 unsigned bits")

    surfaces = {}
    for j, s in enumerate(sc.surfaces):
        where = f"surfaces[{j}]"
        need(s.surface_id >= sc.n_agents, where, "surface_id must not collide with agent ids (>= n_agents)")
        need(s.surface_id not in surfaces, where, "duplicate surface_id")
        need(0 <= s.attach_tick <= sc.duration_ticks, where, "attach_tick outside the run")
        need(s.attach_tick <= s.clean_tick, where, "clean_tick before attach_tick")
        surfaces[s.surface_id] = s

    def check_contact(c: ContactEvent, where: str, allow_surface: bool = True) -> None:
        need(0 <= c.a < sc.n_agents, where, f"a={c.a} is not an agent id")
        is_agent = 0 <= c.b < sc.n_agents
        need(is_agent or (allow_surface and c.b in surfaces), where, f"b={c.b} is not an agent or surface id")
        need(c.a != c.b, where, "a == b")
        need(c.duration_ticks >= 1, where, "duration_ticks must be >= 1")
        need(c.start_tick >= 0 and c.last_tick <= sc.duration_ticks, where, "contact outside the run")
        need(math.isfinite(c.rssi_ab) and math.isfinite(c.rssi_ba), where, "rssi must be finite")
        need(c.loc_bucket >= 0, where, "loc_bucket must be >= 0")
        if c.b in surfaces:
            need(c.start_tick >= surfaces[c.b].attach_tick, where, "contact before the surface was attached")

    for j, c in enumerate(sc.contacts):
        check_contact(c, f"contacts[{j}]")

    diagnosed = set()
    for j, (agent, tick) in enumerate(sc.diagnoses):
        need(0 <= agent < sc.n_agents, f"diagnoses[{j}]", f"agent {agent} out of range")
        need(0 <= tick <= sc.duration_ticks, f"diagnoses[{j}]", "diagnosis outside the run")
        diagnosed.add(agent)

    for j, adv in enumerate(sc.adversaries):
        where = f"adversaries[{j}]"
        need(adv.kind in ADVERSARY_KINDS, where, f"kind must be one of {ADVERSARY_KINDS}")
        need(0 <= adv.agent < sc.n_agents, where, "agent out of range")
        if adv.kind == "rebroadcaster":
            need(adv.victim is not None and 0 <= adv.victim < sc.n_agents and adv.victim != adv.agent,
                 where, "victim must be another agent")
            need(0 <= adv.capture_start <= adv.capture_end <= sc.duration_ticks, where, "bad capture window")
            for q, c in enumerate(adv.replay_contacts):
                check_contact(c, f"{where}.replay_contacts[{q}]", allow_surface=False)
                need(c.a == adv.agent, f"{where}.replay_contacts[{q}]", "replay contact must start at the attacker")
        elif adv.kind == "fake-uploader":
            need(adv.agent in diagnosed, where, "fake uploader must be diagnosed")
            need(adv.forgery in FORGERY_KINDS, where, f"forgery must be one of {FORGERY_KINDS}")
            need(adv.forged_count >= 0, where, "forged_count must be >= 0")
            if adv.forgery == "saturate":
                need(sc.params.mode_flags.upload == "bloom", where, "saturated report needs bloom upload mode")

    if issues:
        raise ScenarioError(issues)
    return sc


# --------------------------------------------------------------------------
# JSON


def _fields(cls: type) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls: type, data: Any, where: str, **convert: Any) -> Any:
    if not isinstance(data, dict):
        raise ScenarioError([(where, "must be an object")])
    unknown = sorted(set(data) - _fields(cls))
    if unknown:
        raise ScenarioError([(f"{where}.{k}", "unknown key") for k in unknown])
    data = dict(data)
    for key, fn in convert.items():
        if key in data:
            data[key] = fn(data[key])
    try:
        return cls(**data)
    except TypeError as exc:
        raise ScenarioError([(where, str(exc))]) from exc


def _contact(data: Any, where: str) -> ContactEvent:
    return _build(ContactEvent, data, where)


def _diagnosis(item: Any, where: str) -> tuple[int, int]:
    if isinstance(item, dict):
        if set(item) != {"agent", "tick"}:
            raise ScenarioError([(where, "diagnosis needs exactly 'agent' and 'tick'")])
        return int(item["agent"]), int(item["tick"])
    if isinstance(item, (list, tuple)) and len(item) == 2:
        return int(item[0]), int(item[1])
    raise ScenarioError([(where, "diagnosis must be [agent, tick] or {agent, tick}")])


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError([("scenario", "must be a JSON object")])
    unknown = sorted(set(data) - _fields(Scenario))
    if unknown:
        raise ScenarioError([(k, "unknown key") for k in unknown])
    if "params" not in data:
        raise ScenarioError([("params", "missing")])
    try:
        params = params_from_dict(data["params"])
    except ParamsError as exc:
        raise ScenarioError([(f"params.{name}", msg) for name, msg in exc.issues]) from exc
    contacts = tuple(_contact(c, f"contacts[{j}]") for j, c in enumerate(data.get("contacts", [])))
    diagnoses = tuple(_diagnosis(d, f"diagnoses[{j}]") for j, d in enumerate(data.get("diagnoses", [])))
    surfaces = tuple(_build(Surface, s, f"surfaces[{j}]") for j, s in enumerate(data.get("surfaces", [])))
    adversaries = []
    for j, a in enumerate(data.get("adversaries", [])):
        where = f"adversaries[{j}]"
        adversaries.append(_build(
            AdversarySpec, a, where,
            replay_contacts=lambda cs, w=where: tuple(
                _contact(c, f"{w}.replay_contacts[{q}]") for q, c in enumerate(cs)),
        ))
    for key in ("n_agents", "duration_ticks"):
        if key not in data:
            raise ScenarioError([(key, "missing")])
    sc = Scenario(
        params=params,
        n_agents=data["n_agents"],
        duration_ticks=data["duration_ticks"],
        contacts=contacts,
        diagnoses=diagnoses,
        surfaces=surfaces,
        adversaries=tuple(adversaries),
        master_seed=data.get("master_seed", 0),
    )
    for key in ("n_agents", "duration_ticks", "master_seed"):
        value = getattr(sc, key)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ScenarioError([(key, "must be an integer")])
    return validate_scenario(sc)


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    return {
        "params": params_to_dict(sc.params),
        "n_agents": sc.n_agents,
        "duration_ticks": sc.duration_ticks,
        "contacts": [dataclasses.asdict(c) for c in sc.contacts],
        "diagnoses": [[a, t] for a, t in sc.diagnoses],
        "surfaces": [dataclasses.asdict(s) for s in sc.surfaces],
        "adversaries": [
            {**dataclasses.asdict(a), "replay_contacts": [dataclasses.asdict(c) for c in a.replay_contacts]}
            for a in sc.adversaries
        ],
        "master_seed": sc.master_seed,
    }


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


# --------------------------------------------------------------------------
# generator


def random_scenario(seed: int, params: ProtocolParams, n_agents: int = 20, n_contacts: int = 100,
                    duration_ticks: int = 100, n_diagnoses: int = 3, max_contact_ticks: int = 5,
                    asymmetric_fraction: float = 0.0, rssi_range: tuple[float, float] = (-60.0, -60.0),
                    n_surfaces: int = 0) -> Scenario:
    """Uniformly random pairings for property tests.

    This is a testing aid, not an epidemiological or mobility model: pairs,
    start ticks and durations are drawn independently and uniformly.
    """
    rng = random.Random(seed)
    surfaces = tuple(
        Surface(n_agents + j, attach, rng.randint(attach, duration_ticks))
        for j, attach in enumerate(rng.randint(0, duration_ticks // 2) for _ in range(n_surfaces))
    )
    contacts = []
    for _ in range(n_contacts):
        length = rng.randint(1, max_contact_ticks)
        a = rng.randrange(n_agents)
        if surfaces and rng.random() < 0.2:
            surf = rng.choice(surfaces)
            b = surf.surface_id
            lo = surf.attach_tick
        else:
            b = rng.randrange(n_agents - 1)
            b = b + 1 if b >= a else b
            lo = 0
        start = rng.randint(lo, max(lo, duration_ticks - length + 1))
        length = min(length, duration_ticks - start + 1)
        contacts.append(ContactEvent(
            a=a, b=b, start_tick=start, duration_ticks=length,
            rssi_ab=float(rng.uniform(*rssi_range)), rssi_ba=float(rng.uniform(*rssi_range)),
            symmetric=rng.random() >= asymmetric_fraction,
            loc_bucket=rng.randrange(4),
        ))
    diagnosed = rng.sample(range(n_agents), min(n_diagnoses, n_agents))
    diagnoses = tuple(sorted((a, rng.randint(0, duration_ticks)) for a in diagnosed))
    return validate_scenario(Scenario(
        params=params, n_agents=n_agents, duration_ticks=duration_ticks, contacts=tuple(contacts),
        diagnoses=diagnoses, surfaces=surfaces, master_seed=rng.getrandbits(64),
    ))
