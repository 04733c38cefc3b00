"""Brute-force expected alert set, derived from the scenario alone.

Nothing here touches tokens, hashes, devices or the registry: exposure is
decided by walking contact ticks and applying the RSSI gate and reception
directions.  The simulator is checked against this, not the other way round.
"""

from __future__ import annotations

from collections import defaultdict

from .scenario import Scenario


def _deliveries(scenario: Scenario) -> dict[tuple[int, int], set[tuple[int, int]]]:
    """(sender, receiver) -> {(tick, loc_bucket)} of honest receptions passing the RSSI gate."""
    threshold = scenario.params.rssi_threshold_dbm
    heard: dict[tuple[int, int], set[tuple[int, int]]] = defaultdict(set)
    for c in scenario.contacts:
        forward = threshold is None or c.rssi_ab >= threshold
        backward = c.symmetric and (threshold is None or c.rssi_ba >= threshold)
        for t in c.ticks():
            if forward:
                heard[(c.a, c.b)].add((t, c.loc_bucket))
            if backward:
                heard[(c.b, c.a)].add((t, c.loc_bucket))
    return heard


def _exposure_ticks(heard, source: int, target: int, per_encounter: bool, bind_location: bool) -> list[int]:
    """Ticks at which ``target`` holds a value that ``source`` will upload."""
    out = heard.get((source, target), set())
    if not per_encounter:
        return sorted({t for t, _ in out})
    back = heard.get((target, source), set())
    if bind_location:
        return sorted({t for t, loc in out if (t, loc) in back})
    back_ticks = {t for t, _ in back}
    return sorted({t for t, _ in out if t in back_ticks})


def ground_truth(scenario: Scenario, collocation: bool = False) -> set[int]:
    """Agents that an honest run must alert.

    By default the exposure rule follows the configured encounter mode: in
    per-encounter mode both directions must deliver in the same tick, since
    the diagnosed party has to have stored the pair hash.  With
    ``collocation=True`` the rule is mode-independent (the agent heard the
    diagnosed party at all), which is what missed alerts are counted against.

    Diagnosed agents are never in the set: they already know their status,
    and in per-encounter mode their own upload would match their own log.
    """
    modes = scenario.params.mode_flags
    per_encounter = modes.encounter == "per-encounter" and not collocation
    bind_location = modes.freshness_check and not collocation
    window = scenario.params.contagious_window_i
    n = scenario.n_agents
    heard = _deliveries(scenario)
    parties = set(range(n)) | {s.surface_id for s in scenario.surfaces}

    expected: set[int] = set()
    # earliest tick from which each surface counts as contagious
    contagious_from: dict[int, int] = {}
    for agent, dtick in scenario.diagnoses:
        lo = dtick - window
        for other in parties:
            if other == agent:
                continue
            ticks = [t for t in _exposure_ticks(heard, agent, other, per_encounter, bind_location) if lo <= t <= dtick]
            if not ticks:
                continue
            if other < n:
                expected.add(other)
            else:
                contagious_from[other] = min(ticks[0], contagious_from.get(other, ticks[0]))

    for surf in scenario.surfaces:
        start = contagious_from.get(surf.surface_id)
        if start is None:
            continue
        for other in range(n):
            ticks = _exposure_ticks(heard, surf.surface_id, other, per_encounter, bind_location)
            if any(start <= t <= surf.clean_tick for t in ticks):
                expected.add(other)
    return expected - {agent for agent, _ in scenario.diagnoses}
