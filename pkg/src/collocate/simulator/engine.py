"""Deterministic tick loop tying devices, doctors and the registry together.

Within tick ``t`` the order is fixed:

1. attach surfaces whose ``attach_tick`` is ``t``;
2. deliver every active contact (scenario order), then adversary replays;
3. process diagnoses: collect, doctor checks, registry ingest;
4. on snapshot ticks (``t % r == 0`` and the final tick): expire, publish,
   let contagious surfaces report, republish if they did;
5. agents whose poll phase hits ``t`` (and everyone on the final tick)
   match their heard log against the latest snapshot.

Devices are advanced lazily, only when they act; the counter-based token
engine makes that identical to stepping every device every tick.
"""

from __future__ import annotations

import hashlib
from collections import defaultdict

from ..bloom import saturate
from ..crypto import derive_seed
from ..encounter import BroadcastMessage, ReceptionEvent, make_broadcast, receive
from ..medical import EmptyUploadError, UploadPackage, collect_upload, prepare_report, verify_validity
from ..registry import Registry, RegistryRejection, RegistrySnapshot, match_local
from ..tokens import DeviceState, advance_tick, broadcast_interval, init_device
from .metrics import Metrics
from .scenario import AdversarySpec, ContactEvent, Scenario, validate_scenario
from .truth import ground_truth


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = validate_scenario(scenario)
        self.params = scenario.params
        seed = scenario.master_seed
        self.registry = Registry(self.params, seed=derive_seed(seed, "registry"))
        self.devices: dict[int, DeviceState] = {}
        self._trace = hashlib.sha256()
        for i in range(scenario.n_agents):
            self._attach(i, 0)
        r = self.params.update_interval_r
        self.phase = {i: derive_seed(seed, "phase", i) % r for i in range(scenario.n_agents)}

        self.surfaces = {s.surface_id: s for s in scenario.surfaces}
        self.contagious_from: dict[int, int] = {}
        self.surface_uploaded_to: dict[int, int] = {}

        self.rebroadcasters = [a for a in scenario.adversaries if a.kind == "rebroadcaster"]
        self.fake_uploaders = {a.agent: a for a in scenario.adversaries if a.kind == "fake-uploader"}
        self.captured: dict[int, dict[bytes, BroadcastMessage]] = defaultdict(dict)
        self.replayed: dict[int, set[bytes]] = defaultdict(set)
        self.injected: set[bytes] = set()
        self.saturated_accepted = False

        self.diagnosed = {a for a, _ in scenario.diagnoses}
        self.latest: RegistrySnapshot | None = None
        self._latest_size = 0
        self.first_published: dict[bytes, int] = {}
        self._pending: list[bytes] = []

        self.alerts: dict[int, int] = {}
        self.alert_values: dict[int, list[bytes]] = {}
        self.alert_latency: dict[int, int] = {}
        self.stored_replays = 0
        self.rejected_entries = 0
        self.rejection_reasons: list[str] = []
        self.device_download_bytes = 0
        self.trusted_query_bits = 0
        self.registry_probes = 0
        self._broadcasts: dict[tuple[int, int, int], BroadcastMessage] = {}

    # -- devices -------------------------------------------------------------

    def _attach(self, ident: int, tick: int) -> None:
        dev = init_device(ident, self.params, derive_seed(self.scenario.master_seed, "device", ident), tick)
        self.devices[ident] = dev
        self._log_tokens(dev, tick - 1)

    def _log_tokens(self, dev: DeviceState, since: int) -> None:
        fresh = []
        for rec in reversed(dev.own_log):
            if rec.epoch_tick <= since:
                break
            fresh.append(rec)
        for rec in reversed(fresh):
            self._trace.update(dev.device_id.to_bytes(8, "big") + rec.epoch_tick.to_bytes(8, "big") + rec.token)

    def _sync(self, ident: int, tick: int) -> DeviceState:
        dev = self.devices[ident]
        if dev.now < tick:
            before = dev.now
            advance_tick(dev, tick, self.params)
            self._log_tokens(dev, before)
        return dev

    def _broadcast(self, ident: int, tick: int, loc: int) -> BroadcastMessage:
        key = (ident, tick, loc)
        msg = self._broadcasts.get(key)
        if msg is None:
            msg = make_broadcast(self._sync(ident, tick), tick, loc, self.params)
            self._broadcasts[key] = msg
        return msg

    # -- phases of a tick ---------------------------------------------------

    def _deliver(self, sender: int, receiver: int, rssi: float, tick: int, loc: int) -> None:
        msg = self._broadcast(sender, tick, loc)
        own = self._broadcast(receiver, tick, loc).token
        dev = self.devices[receiver]
        receive(dev, ReceptionEvent(msg, rssi, tick, loc), self.params, own)
        for adv in self.rebroadcasters:
            if adv.agent == receiver and adv.victim == sender and adv.capture_start <= tick <= adv.capture_end:
                self.captured[adv.agent].setdefault(msg.token, msg)

    def _contact(self, c: ContactEvent, tick: int) -> None:
        self._broadcast(c.a, tick, c.loc_bucket)
        self._broadcast(c.b, tick, c.loc_bucket)
        self._deliver(c.a, c.b, c.rssi_ab, tick, c.loc_bucket)
        if c.symmetric:
            self._deliver(c.b, c.a, c.rssi_ba, tick, c.loc_bucket)

    def _replay(self, adv: AdversarySpec, c: ContactEvent, tick: int) -> None:
        target = self._sync(c.b, tick)
        own = self._broadcast(c.b, tick, c.loc_bucket).token
        for msg in list(self.captured[adv.agent].values()):
            event = ReceptionEvent(msg, c.rssi_ab, tick, c.loc_bucket)
            if receive(target, event, self.params, own):
                self.stored_replays += 1
                self.replayed[c.b].add(target.heard_log[-1].value)

    def _tamper(self, dev: DeviceState, package: UploadPackage, adv: AdversarySpec) -> UploadPackage:
        if adv.forgery == "foreign":
            forged = []
            for value, _ in dev.heard_log:
                if value not in forged:
                    forged.append(value)
                if len(forged) >= adv.forged_count:
                    break
            self.injected.update(forged)
            if package.mode == "preimages":
                # no preimage exists for a foreign token; the best the attacker can do is pass the token itself
                package.entries.extend(forged)
                package.claims.extend(forged)
            else:
                package.entries.extend(forged)
        elif adv.forgery == "stale":
            lo = package.diagnosis_tick - package.window_ticks
            stale = [rec for j, rec in enumerate(dev.own_log) if broadcast_interval(dev, j)[1] < lo]
            stale = stale[-adv.forged_count:] if adv.forged_count else []
            self.injected.update(rec.token for rec in stale)
            if package.mode == "preimages":
                package.entries.extend(rec.preimage for rec in stale)
                package.claims.extend(rec.token for rec in stale)
            else:
                package.entries.extend(rec.token for rec in stale)
        return package

    def _report(self, dev: DeviceState, package: UploadPackage, tick: int,
                adv: AdversarySpec | None = None) -> bool:
        if adv is not None:
            package = self._tamper(dev, package, adv)
        forwarded, rejected = prepare_report(package, self.params, self.registry.active_shape)
        self.rejected_entries += rejected
        values = forwarded.entries
        if forwarded.mode == "bloom-report":
            # the simulator (not the registry) remembers what went in, for latency bookkeeping
            values = verify_validity(package, self.params)[0] if package.mode == "preimages" else package.entries
            if adv is not None and adv.forgery == "saturate":
                forwarded.report = saturate(forwarded.report)
        try:
            self.registry.ingest(forwarded, tick)
        except RegistryRejection as exc:
            self.rejection_reasons.append(f"tick {tick} device {dev.device_id}: {type(exc).__name__}: {exc}")
            return False
        if adv is not None and adv.forgery == "saturate":
            self.saturated_accepted = True
        self._pending.extend(values)
        return True

    def _diagnose(self, agent: int, tick: int) -> None:
        dev = self._sync(agent, tick)
        try:
            package = collect_upload(dev, tick, self.params)
        except EmptyUploadError as exc:
            self.rejection_reasons.append(f"tick {tick} device {agent}: nothing to upload ({exc})")
            return
        self._report(dev, package, tick, self.fake_uploaders.get(agent))

    def _publish(self, tick: int) -> None:
        snap = self.registry.snapshot(tick)
        self.latest = snap
        self._latest_size = len(snap.to_bytes())
        for value in self._pending:
            self.first_published.setdefault(value, tick)
        self._pending.clear()

    def _surfaces_report(self, tick: int) -> bool:
        uploaded = False
        for sid in sorted(self.surfaces):
            surf = self.surfaces[sid]
            if sid not in self.devices:
                continue
            dev = self._sync(sid, tick)
            if sid not in self.contagious_from:
                hits = set(match_local(self.latest, dev.heard_log))
                if not hits:
                    continue
                self.contagious_from[sid] = min(t for v, t in dev.heard_log if v in hits)
            lo = max(self.contagious_from[sid], self.surface_uploaded_to.get(sid, -1) + 1)
            hi = min(surf.clean_tick, tick)
            if lo > hi:
                continue
            self.surface_uploaded_to[sid] = hi
            try:
                package = collect_upload(dev, tick, self.params, window=(lo, hi))
            except EmptyUploadError:
                continue
            uploaded |= self._report(dev, package, tick)
        return uploaded

    def _poll(self, agent: int, tick: int) -> None:
        if self.latest is None:
            return
        dev = self._sync(agent, tick)
        if self.params.mode_flags.query == "trusted-query":
            values = list(dict.fromkeys(v for v, _ in dev.heard_log))
            result = self.registry.query_trusted(values)
            self.trusted_query_bits += result.request_bits
            hits = [v for v, ok in zip(values, result.verdicts) if ok]
            probes = len(values)
        else:
            self.device_download_bytes += self._latest_size
            hits = match_local(self.latest, dev.heard_log)
            probes = len({v for v, _ in dev.heard_log})
        self.registry_probes += probes
        if hits and agent not in self.alerts and agent not in self.diagnosed:
            self.alerts[agent] = tick
            self.alert_values[agent] = hits
            heard_at: dict[bytes, int] = {}
            for v, t in dev.heard_log:
                heard_at.setdefault(v, t)
            # a value becomes matchable once it is both published and heard
            ready = [max(self.first_published[v], heard_at[v]) for v in hits if v in self.first_published]
            if ready:
                self.alert_latency[agent] = tick - min(ready)

    # -- driver ---------------------------------------------------------------

    def execute(self) -> Metrics:
        sc = self.scenario
        r = self.params.update_interval_r
        by_tick: dict[int, list[ContactEvent]] = defaultdict(list)
        for c in sc.contacts:
            for t in c.ticks():
                by_tick[t].append(c)
        replays: dict[int, list[tuple[AdversarySpec, ContactEvent]]] = defaultdict(list)
        for adv in self.rebroadcasters:
            for c in adv.replay_contacts:
                for t in c.ticks():
                    replays[t].append((adv, c))
        diagnoses: dict[int, list[int]] = defaultdict(list)
        for agent, t in sc.diagnoses:
            diagnoses[t].append(agent)
        attaches: dict[int, list[int]] = defaultdict(list)
        for s in sc.surfaces:
            attaches[s.attach_tick].append(s.surface_id)

        for t in range(sc.duration_ticks + 1):
            for sid in attaches.get(t, ()):
                self._attach(sid, t)
            for c in by_tick.get(t, ()):
                self._contact(c, t)
            for adv, c in replays.get(t, ()):
                self._replay(adv, c, t)
            for agent in diagnoses.get(t, ()):
                self._diagnose(agent, t)
            final = t == sc.duration_ticks
            if t % r == 0 or final:
                self.registry.expire(t)
                self._publish(t)
                if self.surfaces and self._surfaces_report(t):
                    self._publish(t)
            for agent in range(sc.n_agents):
                if final or (t - self.phase[agent]) % r == 0:
                    self._poll(agent, t)
            self._broadcasts.clear()
        return self._metrics()

    def _metrics(self) -> Metrics:
        # counted against physical collocation, so per-encounter blind spots show up as misses
        expected = ground_truth(self.scenario, collocation=True)
        alerted = set(self.alerts)
        false_set = alerted - expected
        attack = 0
        for agent in false_set:
            values = set(self.alert_values[agent])
            if self.saturated_accepted or values & self.injected or values & self.replayed.get(agent, set()):
                attack += 1
        chain = self.registry.chain
        for rec in sorted(self.alerts.items()):
            self._trace.update(b"alert" + rec[0].to_bytes(8, "big") + rec[1].to_bytes(8, "big"))
        return Metrics(
            true_alerts=len(alerted & expected),
            false_alerts=len(false_set),
            missed_alerts=len(expected - alerted),
            attack_false_alerts=attack,
            alerts_by_agent=dict(sorted(self.alerts.items())),
            expected_alerts=sorted(expected),
            max_alert_latency=max(self.alert_latency.values(), default=None),
            registry_bytes=self.registry.bytes_published,
            device_download_bytes=self.device_download_bytes,
            trusted_query_bits=self.trusted_query_bits,
            registry_probes=self.registry_probes,
            rejected_reports=self.registry.rejected_reports,
            rejected_entries=self.rejected_entries,
            rejection_reasons=list(self.rejection_reasons),
            stored_replays=self.stored_replays,
            chain_length=len(chain) if chain is not None else 0,
            rng_trace_digest=self._trace.hexdigest(),
        )


def run(scenario: Scenario) -> Metrics:
    return Simulation(scenario).execute()


def run_rebroadcast_attack(scenario: Scenario) -> Metrics:
    if not any(a.kind == "rebroadcaster" for a in scenario.adversaries):
        raise ValueError("scenario has no rebroadcaster")
    return run(scenario)


def run_fake_upload_attack(scenario: Scenario) -> Metrics:
    if not any(a.kind == "fake-uploader" for a in scenario.adversaries):
        raise ValueError("scenario has no fake uploader")
    return run(scenario)
