"""Run summary emitted by the simulator and written by the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any


@dataclass
class Metrics:
    true_alerts: int = 0
    false_alerts: int = 0
    missed_alerts: int = 0
    # false alerts traceable to a replayed, forged or saturated value
    attack_false_alerts: int = 0
    alerts_by_agent: dict[int, int] = field(default_factory=dict)
    expected_alerts: list[int] = field(default_factory=list)
    max_alert_latency: int | None = None
    registry_bytes: int = 0
    device_download_bytes: int = 0
    trusted_query_bits: int = 0
    registry_probes: int = 0
    rejected_reports: int = 0
    rejected_entries: int = 0
    rejection_reasons: list[str] = field(default_factory=list)
    stored_replays: int = 0
    chain_length: int = 0
    rng_trace_digest: str = ""
    params: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["alerts_by_agent"] = {str(k): v for k, v in sorted(self.alerts_by_agent.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
