"""Pruebas del lector de casos de red."""

from __future__ import annotations

from io import StringIO

import pytest

from src.core.case_reader import CaseParseError, load_case, parse_case, serialize_case
from src.core.network import CaseValidationError

TWO_BUS = """
[case]
name = tiny
[buses]
1 slack 0 0 0 1.0
2 PQ 0.5 0.1
[branches]
1 2 0.02 0.06
"""


def test_bundled_ieee14_counts(ieee14):
    assert ieee14.n_bus == 14
    assert len(ieee14.branches) == 20
    assert ieee14.slack_bus == 1
    assert ieee14.mva_base == pytest.approx(100.0)


def test_two_bus_case(two_bus):
    assert two_bus.n_bus == 2
    (branch,) = two_bus.branches
    assert branch.g == pytest.approx(5.0)
    assert branch.b == pytest.approx(-15.0)


def test_parse_case_defaults_and_aliases():
    case = parse_case(TWO_BUS.replace("slack", "ref"))
    assert case.name == "tiny"
    assert case.bus(2).v_set == 1.0
    assert case.branches[0].tap == 1.0
    assert case.branches[0].b_sh == 0.0


def test_dangling_branch_reference_is_rejected():
    with pytest.raises(CaseValidationError, match="99"):
        parse_case(TWO_BUS.replace("1 2 0.02 0.06", "1 99 0.02 0.06"))


def test_parse_error_carries_line_number():
    with pytest.raises(CaseParseError) as info:
        parse_case(TWO_BUS.replace("2 PQ 0.5 0.1", "2 PQ abc 0.1"))
    assert info.value.line_number == 6


def test_unknown_section_and_orphan_content():
    with pytest.raises(CaseParseError):
        parse_case("[generators]\n1 2 3\n")
    with pytest.raises(CaseParseError):
        parse_case("1 slack 0 0\n")


def test_zero_tap_means_line():
    case = parse_case(TWO_BUS.replace("1 2 0.02 0.06", "1 2 0.02 0.06 0.01 0"))
    assert case.branches[0].tap == 1.0


def test_serialize_then_parse_keeps_case(ieee14):
    again = parse_case(serialize_case(ieee14))
    assert again == ieee14


def test_load_case_from_buffer_and_missing_file(tmp_path):
    assert load_case(StringIO(TWO_BUS)).n_bus == 2
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "nope.case")
