"""Lectura y escritura de casos de red en formato de texto por secciones."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from src.core.network import Branch, Bus, NetworkCase
from src.utils.config import resolve_data_path
from src.utils.logger import setup_logger

LOGGER = setup_logger(__name__)

_SECTIONS = ("case", "buses", "branches")
_TYPE_ALIASES: Dict[str, str] = {
    "slack": "slack",
    "ref": "slack",
    "3": "slack",
    "pv": "PV",
    "2": "PV",
    "pq": "PQ",
    "1": "PQ",
}


class CaseParseError(ValueError):
    """Se lanza cuando una línea del archivo de caso no respeta el formato."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")


def _floats(fields: Iterable[str], line_number: int) -> List[float]:
    try:
        return [float(value) for value in fields]
    except ValueError as exc:
        raise CaseParseError(f"valor numérico inválido ({exc})", line_number) from exc


def _parse_bus(fields: List[str], line_number: int) -> Bus:
    if len(fields) not in (4, 6):
        raise CaseParseError("bus line must be 'id type Pload Qload [Pgen Vset]'", line_number)
    try:
        bus_id = int(fields[0])
    except ValueError as exc:
        raise CaseParseError(f"bus id '{fields[0]}' is not an integer", line_number) from exc
    bus_type = _TYPE_ALIASES.get(fields[1].lower())
    if bus_type is None:
        raise CaseParseError(f"tipo de barra desconocido '{fields[1]}'", line_number)
    values = _floats(fields[2:], line_number)
    p_gen, v_set = (values[2], values[3]) if len(values) == 4 else (0.0, 1.0)
    return Bus(id=bus_id, type=bus_type, p_load=values[0], q_load=values[1], p_gen=p_gen, v_set=v_set)


def _parse_branch(fields: List[str], line_number: int) -> Branch:
    if not 4 <= len(fields) <= 6:
        raise CaseParseError("branch line must be 'from to r x [b_sh [tap]]'", line_number)
    try:
        from_bus, to_bus = int(fields[0]), int(fields[1])
    except ValueError as exc:
        raise CaseParseError("branch endpoints must be integer bus ids", line_number) from exc
    values = _floats(fields[2:], line_number)
    b_sh = values[2] if len(values) > 2 else 0.0
    tap = values[3] if len(values) > 3 else 1.0
    # MATPOWER writes 0 for "no transformer"
    if tap == 0.0:
        tap = 1.0
    return Branch(from_bus=from_bus, to_bus=to_bus, r=values[0], x=values[1], b_sh=b_sh, tap=tap)


def _parse_lines(lines: Iterable[str]) -> Tuple[Dict[str, str], List[Bus], List[Branch]]:
    header: Dict[str, str] = {}
    buses: List[Bus] = []
    branches: List[Branch] = []
    section: Optional[str] = None

    for line_number, original in enumerate(lines, start=1):
        line = original.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise CaseParseError(f"unknown section [{section}]", line_number)
            continue
        if section is None:
            raise CaseParseError("content outside of a [section]", line_number)
        if section == "case":
            if "=" not in line:
                raise CaseParseError("expected 'key = value' in [case]", line_number)
            key, value = line.split("=", 1)
            header[key.strip().lower()] = value.strip()
        elif section == "buses":
            buses.append(_parse_bus(line.split(), line_number))
        else:
            branches.append(_parse_branch(line.split(), line_number))

    if not buses:
        raise CaseParseError("case file has no [buses] entries")
    return header, buses, branches


def parse_case(text: str) -> NetworkCase:
    """Parse case-file text into a validated :class:`NetworkCase`.

    Raises :class:`CaseParseError` for syntax problems and
    :class:`~src.core.network.CaseValidationError` for invariant violations.
    """

    header, buses, branches = _parse_lines(text.splitlines())
    try:
        mva_base = float(header.get("mva_base", 100.0))
    except ValueError as exc:
        raise CaseParseError(f"mva_base inválido: {header['mva_base']}") from exc
    case = NetworkCase(buses=tuple(buses), branches=tuple(branches), mva_base=mva_base, name=header.get("name", "case"))
    LOGGER.debug("Parsed case %s: %d buses, %d branches", case.name, case.n_bus, len(case.branches))
    return case


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_case(case: NetworkCase) -> str:
    """Render a case in the text format; ``parse_case`` reads it back unchanged."""

    lines = [
        "[case]",
        f"name = {case.name}",
        f"mva_base = {_fmt(case.mva_base)}",
        "",
        "[buses]",
        "# id type Pload Qload Pgen Vset",
    ]
    for bus in case.buses:
        lines.append(
            " ".join([str(bus.id), bus.type, _fmt(bus.p_load), _fmt(bus.q_load), _fmt(bus.p_gen), _fmt(bus.v_set)])
        )
    lines += ["", "[branches]", "# from to r x b_sh tap"]
    for br in case.branches:
        lines.append(
            " ".join([str(br.from_bus), str(br.to_bus), _fmt(br.r), _fmt(br.x), _fmt(br.b_sh), _fmt(br.tap)])
        )
    return "\n".join(lines) + "\n"


def load_case(source) -> NetworkCase:
    """Load a case from a path (bundled names like ``cases/ieee14.case`` allowed) or a buffer."""

    if hasattr(source, "read"):
        raw = source.read()
        if hasattr(source, "seek"):
            source.seek(0)
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        return parse_case(text)

    path = resolve_data_path(source)
    if not Path(path).exists():
        raise FileNotFoundError(f"No se encuentra el archivo de caso: {source}")
    LOGGER.info("Loading case file: %s", path)
    return parse_case(Path(path).read_text(encoding="utf-8"))


__all__ = ["CaseParseError", "load_case", "parse_case", "serialize_case"]
