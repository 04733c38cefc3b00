import json
import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from collocate.params import (
    ModeFlags,
    ParamsError,
    ProtocolParams,
    derive_k,
    expected_fill,
    filter_capacity,
    load_params,
    max_p_new,
    optimal_bits,
    town_scale_sample,
    params_from_dict,
    params_to_dict,
    validate,
)

mpmath.mp.dps = 50


def oracle_bits(n, p_fp):
    return int(mpmath.ceil(mpmath.mpf(n) * -mpmath.log(p_fp, 2) / mpmath.log(2)))


def oracle_k(p_fp):
    return int(mpmath.ceil(-mpmath.log(p_fp, 2)))


def test_town_scale_sizing():
    assert optimal_bits(11_000_000, 1e-15) == 790_767_317
    assert derive_k(1e-15) == 50


def test_small_filter_sizing():
    # ceil(9585.058...) = 9586
    assert optimal_bits(1000, 0.01) == 9586
    assert derive_k(0.01) == 7


def test_exact_powers_of_two_do_not_round_up():
    for e in (1, 10, 20, 40):
        assert derive_k(2.0 ** -e) == e


def test_zero_items_needs_no_bits():
    assert optimal_bits(0, 0.01) == 0


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_p_fp_range(p):
    with pytest.raises(ValueError):
        derive_k(p)
    with pytest.raises(ValueError):
        optimal_bits(10, p)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10**9), st.floats(1e-18, 0.5))
def test_optimal_bits_matches_high_precision(n, p_fp):
    got = optimal_bits(n, p_fp)
    want = oracle_bits(n, p_fp)
    # float rounding can only matter when the exact value sits on an integer
    assert abs(got - want) <= 1


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-18, 0.99))
def test_derive_k_matches_high_precision(p_fp):
    exact = -mpmath.log(p_fp, 2)
    if abs(exact - mpmath.nint(exact)) < 1e-9:
        return
    assert derive_k(p_fp) == oracle_k(p_fp)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**7), st.floats(1e-15, 0.3))
def test_designed_filter_holds_n(n, p_fp):
    m = optimal_bits(n, p_fp)
    assert filter_capacity(m, derive_k(p_fp)) >= math.floor(n * math.log2(1 / p_fp) / derive_k(p_fp)) - 1


def test_max_p_new_window_of_twenty_days():
    assert max_p_new(28800, 1000) == pytest.approx(0.034722, abs=1e-6)
    assert max_p_new(10, 1000) == 1.0


@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_max_p_new_keeps_expected_tokens_within_bound(i, g):
    assert i * max_p_new(i, g) <= g * (1 + 1e-12)


def test_expected_fill_small_load():
    m, k = 1 << 20, 20
    assert expected_fill(m, k, 1000) == pytest.approx(1 - math.exp(-k * 1000 / m), rel=1e-6)


def test_defaults_validate():
    assert validate(ProtocolParams()) is not None
    assert ProtocolParams().k == 20


def test_worked_example_validates():
    p = validate(town_scale_sample())
    assert p.p_new <= max_p_new(p.contagious_window_i, p.growth_bound_g)
    assert p.k == 50


def test_two_week_retention_with_twenty_day_window_is_rejected():
    with pytest.raises(ParamsError, match="retention shorter than window"):
        validate(town_scale_sample().replace(retention_ticks=20160))


def test_every_issue_is_reported():
    bad = ProtocolParams(p_new=0.0, token_len_bits=32, growth_factor_alpha=1.0)
    with pytest.raises(ParamsError) as info:
        validate(bad)
    fields = {name for name, _ in info.value.issues}
    assert {"p_new", "token_len_bits", "growth_factor_alpha"} <= fields
    assert "p_new out of range (0, 1]" in str(info.value)


@pytest.mark.parametrize("modes", [
    ModeFlags(encounter="per-encounter", validity_check=True),
    ModeFlags(freshness_check=True, validity_check=True),
    ModeFlags(encounter="sideways"),
])
def test_incompatible_modes(modes):
    with pytest.raises(ParamsError):
        validate(ProtocolParams(mode_flags=modes))


def test_tiny_bloom_filter_cannot_gate_saturation():
    with pytest.raises(ParamsError, match="saturated"):
        validate(ProtocolParams(initial_filter_bits_s=4096, mode_flags=ModeFlags(upload="bloom")))


def test_json_round_trip(tmp_path):
    p = ProtocolParams(p_new=0.02, rssi_threshold_dbm=-70.0, mode_flags=ModeFlags(encounter="per-encounter"))
    path = tmp_path / "p.json"
    path.write_text(json.dumps(params_to_dict(p)))
    assert load_params(path) == p


def test_unknown_keys_are_errors():
    with pytest.raises(ParamsError, match="unknown"):
        params_from_dict({"p_neww": 0.1})
    with pytest.raises(ParamsError):
        params_from_dict({"mode_flags": {"upload": "bloom", "colour": 1}})


def test_wrong_types_are_errors():
    with pytest.raises(ParamsError):
        params_from_dict({"retention_ticks": "many"})
