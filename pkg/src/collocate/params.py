"""Protocol parameters and the closed-form sizing formulas.

All tunables live in one frozen :class:`ProtocolParams`.  ``validate`` checks
every invariant at once and reports each violation by field name, so a
misconfigured JSON file fails with the whole list rather than the first typo.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .crypto import MAX_TOKEN_BITS

ENCOUNTER_MODES = ("raw", "per-encounter")
UPLOAD_MODES = ("raw-tokens", "bloom")
QUERY_MODES = ("public-snapshot", "trusted-query")

LN2 = math.log(2.0)
MAX_FILTER_BITS = 1 << 63


class ParamsError(ValueError):
    """One or more parameter invariants failed.

    ``issues`` is a list of ``(field, message)`` pairs.
    """

    def __init__(self, issues: list[tuple[str, str]]):
        self.issues = issues
        super().__init__("; ".join(f"{name}: {msg}" for name, msg in issues))


@dataclass(frozen=True)
class ModeFlags:
    encounter: str = "raw"
    upload: str = "raw-tokens"
    freshness_check: bool = False
    validity_check: bool = False
    query: str = "public-snapshot"


@dataclass(frozen=True)
class ProtocolParams:
    tick_duration_s: float = 60.0
    retention_ticks: int = 20160
    update_interval_r: int = 60
    p_new: float = 1.0 / 30.0
    token_len_bits: int = 128
    p_fp: float = 1e-6
    initial_filter_bits_s: int = 1 << 20
    growth_factor_alpha: float = 2.0
    growth_bound_g: int = 1000
    contagious_window_i: int = 20160
    rssi_threshold_dbm: float | None = None
    freshness_tolerance_ticks: int = 1
    plausibility_factor: float = 3.0
    mode_flags: ModeFlags = field(default_factory=ModeFlags)

    @property
    def k(self) -> int:
        return derive_k(self.p_fp)

    @property
    def registry_backend(self) -> str:
        return "bloom" if self.mode_flags.upload == "bloom" else "exact"

    def with_modes(self, **changes: Any) -> "ProtocolParams":
        return dataclasses.replace(self, mode_flags=dataclasses.replace(self.mode_flags, **changes))

    def replace(self, **changes: Any) -> "ProtocolParams":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# closed-form formulas


def derive_k(p_fp: float) -> int:
    """Number of Bloom hash probes, ``ceil(-log2(p_fp))``."""
    if not 0.0 < p_fp < 1.0:
        raise ValueError(f"p_fp out of range (0, 1): {p_fp!r}")
    raw = -math.log2(p_fp)
    nearest = round(raw)
    if abs(raw - nearest) < 1e-12:
        return max(1, int(nearest))
    return max(1, math.ceil(raw))


def optimal_bits(n: int, p_fp: float) -> int:
    """Filter length keeping ``n`` insertions at false-positive rate ``p_fp``."""
    if not 0.0 < p_fp < 1.0:
        raise ValueError(f"p_fp out of range (0, 1): {p_fp!r}")
    if n < 0:
        raise ValueError(f"n must be non-negative: {n!r}")
    if n == 0:
        return 0
    return math.ceil(n * -math.log2(p_fp) / LN2)


def max_p_new(window_ticks: int, growth_bound: int) -> float:
    """Largest rotation probability whose expected token count over the window stays within g."""
    if window_ticks < 1 or growth_bound < 1:
        raise ValueError("window and growth bound must be >= 1")
    return min(1.0, growth_bound / window_ticks)


def filter_capacity(m_bits: int, k: int) -> int:
    """Insertions at which an ``(m, k)`` filter reaches its designed false-positive rate."""
    return int(m_bits * LN2 // k)


def expected_fill(m_bits: int, k: int, n: int) -> float:
    """Expected fraction of set bits after ``n`` distinct insertions."""
    return -math.expm1(k * n * math.log1p(-1.0 / m_bits)) if m_bits > 1 else 1.0


def plausibility_limit(params: ProtocolParams, m_bits: int) -> float:
    return params.plausibility_factor * expected_fill(m_bits, params.k, params.growth_bound_g)


# --------------------------------------------------------------------------
# validation


def validate(params: ProtocolParams) -> ProtocolParams:
    issues: list[tuple[str, str]] = []

    def need(ok: bool, name: str, msg: str) -> None:
        if not ok:
            issues.append((name, msg))

    need(params.tick_duration_s > 0, "tick_duration_s", "must be > 0")
    need(0.0 < params.p_new <= 1.0, "p_new", "p_new out of range (0, 1]")
    need(0.0 < params.p_fp < 1.0, "p_fp", "p_fp out of range (0, 1)")
    need(params.growth_factor_alpha > 1.0, "growth_factor_alpha", "must be > 1")
    need(64 <= params.token_len_bits <= MAX_TOKEN_BITS, "token_len_bits",
         f"must be in [64, {MAX_TOKEN_BITS}]")
    need(params.update_interval_r >= 1, "update_interval_r", "must be >= 1")
    need(64 <= params.initial_filter_bits_s < MAX_FILTER_BITS, "initial_filter_bits_s",
         "must be in [64, 2**63)")
    need(params.growth_bound_g >= 1, "growth_bound_g", "must be >= 1")
    need(params.contagious_window_i >= 1, "contagious_window_i", "must be >= 1")
    need(params.retention_ticks >= params.contagious_window_i, "retention_ticks",
         "retention shorter than window (retention_ticks < contagious_window_i)")
    need(params.freshness_tolerance_ticks >= 0, "freshness_tolerance_ticks", "must be >= 0")
    need(params.plausibility_factor >= 1.0, "plausibility_factor", "must be >= 1")
    if params.rssi_threshold_dbm is not None:
        need(math.isfinite(params.rssi_threshold_dbm), "rssi_threshold_dbm", "must be finite")

    modes = params.mode_flags
    need(modes.encounter in ENCOUNTER_MODES, "mode_flags.encounter", f"must be one of {ENCOUNTER_MODES}")
    need(modes.upload in UPLOAD_MODES, "mode_flags.upload", f"must be one of {UPLOAD_MODES}")
    need(modes.query in QUERY_MODES, "mode_flags.query", f"must be one of {QUERY_MODES}")
    if modes.validity_check:
        need(modes.encounter == "raw", "mode_flags.validity_check",
             "token validity needs raw encounter mode")
        need(not modes.freshness_check, "mode_flags.validity_check",
             "token validity and freshness tags are mutually exclusive")

    if not issues and modes.upload == "bloom":
        need(plausibility_limit(params, params.initial_filter_bits_s) < 1.0, "initial_filter_bits_s",
             "too small: a saturated report would pass the plausibility gate")

    if issues:
        raise ParamsError(issues)
    return params


# --------------------------------------------------------------------------
# JSON


def _strict(cls: type, data: dict[str, Any], where: str) -> dict[str, Any]:
    if not isinstance(data, dict):
        raise ParamsError([(where or "params", "must be a JSON object")])
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParamsError([(f"{where}{key}", "unknown key") for key in unknown])
    return data


def _check_types(cls: type, data: dict[str, Any], where: str) -> None:
    defaults = cls()
    issues = []
    for key, value in data.items():
        want = getattr(defaults, key)
        if key == "mode_flags":
            continue
        if key == "rssi_threshold_dbm":
            ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
        elif isinstance(want, bool):
            ok = isinstance(value, bool)
        elif isinstance(want, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(want, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, type(want))
        if not ok:
            issues.append((f"{where}{key}", f"wrong type {type(value).__name__}"))
    if issues:
        raise ParamsError(issues)


def params_from_dict(data: dict[str, Any]) -> ProtocolParams:
    data = dict(_strict(ProtocolParams, data, ""))
    _check_types(ProtocolParams, data, "")
    if "mode_flags" in data:
        flags = _strict(ModeFlags, data["mode_flags"], "mode_flags.")
        _check_types(ModeFlags, flags, "mode_flags.")
        data["mode_flags"] = ModeFlags(**flags)
    try:
        params = ProtocolParams(**data)
    except TypeError as exc:  # pragma: no cover - guarded by _strict
        raise ParamsError([("params", str(exc))]) from exc
    return validate(params)


def params_to_dict(params: ProtocolParams) -> dict[str, Any]:
    return dataclasses.asdict(params)


def load_params(path: str | Path) -> ProtocolParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


def town_scale_sample() -> ProtocolParams:
    """The worked town-scale example: 1-minute ticks, 20-day window, p_fp 1e-15, g 1000.

    Retention is raised to the 20-day window; with two-week retention the
    window would not be coverable by the own-token log.
    """
    return ProtocolParams(
        tick_duration_s=60.0,
        retention_ticks=28800,
        update_interval_r=1440,
        p_new=1.0 / 30.0,
        token_len_bits=128,
        p_fp=1e-15,
        growth_bound_g=1000,
        contagious_window_i=28800,
    )
