"""Tooth numbering systems and arch geometry helpers.

Three notations for permanent dentition are supported: FDI two-digit codes
(quadrant 1-4, position 1-8), the Universal system (1-32 counted clockwise
from the upper-right third molar), and Palmer codes written as a quadrant
tag plus position ("UR3", "LL8").  Deciduous FDI codes (quadrants 5-8) are
accepted as valid identifiers but have no mapping here, so converting them
raises InvalidCode.
"""

from __future__ import annotations

__all__ = [
    "ToothError",
    "InvalidCode",
    "UnsupportedSystem",
    "SYSTEMS",
    "is_valid_fdi",
    "convert_tooth_notation",
    "contralateral",
    "arch_walk",
]


class ToothError(ValueError):
    pass


class InvalidCode(ToothError):
    pass


class UnsupportedSystem(ToothError):
    pass


SYSTEMS = ("fdi", "universal", "palmer")

_PALMER_QUADRANTS = {1: "UR", 2: "UL", 3: "LL", 4: "LR"}
_PALMER_LOOKUP = {tag: q for q, tag in _PALMER_QUADRANTS.items()}

# Tooth order along each dental arch, patient's right to patient's left.
UPPER_ARCH = ["18", "17", "16", "15", "14", "13", "12", "11",
              "21", "22", "23", "24", "25", "26", "27", "28"]
LOWER_ARCH = ["48", "47", "46", "45", "44", "43", "42", "41",
              "31", "32", "33", "34", "35", "36", "37", "38"]


def is_valid_fdi(code: str | int) -> bool:
    """True for two-digit FDI codes: quadrant 1-8, position 1-8."""
    text = str(code).strip()
    if len(text) != 2 or not text.isdigit():
        return False
    quadrant, position = int(text[0]), int(text[1])
    return 1 <= quadrant <= 8 and 1 <= position <= 8


def _parse_fdi(code: str | int) -> tuple[int, int]:
    text = str(code).strip()
    if not is_valid_fdi(text):
        raise InvalidCode(f"not a valid FDI code: {code!r}")
    return int(text[0]), int(text[1])


def _require_permanent(quadrant: int, code) -> None:
    if quadrant > 4:
        raise InvalidCode(f"deciduous code {code!r} has no mapping outside FDI")


def _from_fdi(code) -> tuple[int, int]:
    quadrant, position = _parse_fdi(code)
    return quadrant, position


def _from_universal(code) -> tuple[int, int]:
    text = str(code).strip()
    if not text.isdigit() or not 1 <= int(text) <= 32:
        raise InvalidCode(f"not a valid Universal number: {code!r}")
    n = int(text)
    if n <= 8:
        return 1, 9 - n
    if n <= 16:
        return 2, n - 8
    if n <= 24:
        return 3, 25 - n
    return 4, n - 24


def _from_palmer(code) -> tuple[int, int]:
    text = str(code).strip().upper()
    if len(text) != 3 or text[:2] not in _PALMER_LOOKUP or not text[2].isdigit():
        raise InvalidCode(f"not a valid Palmer code: {code!r}")
    position = int(text[2])
    if not 1 <= position <= 8:
        raise InvalidCode(f"Palmer position out of range: {code!r}")
    return _PALMER_LOOKUP[text[:2]], position


def _to_fdi(quadrant: int, position: int) -> str:
    return f"{quadrant}{position}"


def _to_universal(quadrant: int, position: int) -> str:
    if quadrant == 1:
        return str(9 - position)
    if quadrant == 2:
        return str(8 + position)
    if quadrant == 3:
        return str(25 - position)
    return str(24 + position)


def _to_palmer(quadrant: int, position: int) -> str:
    return f"{_PALMER_QUADRANTS[quadrant]}{position}"


_PARSERS = {"fdi": _from_fdi, "universal": _from_universal, "palmer": _from_palmer}
_EMITTERS = {"fdi": _to_fdi, "universal": _to_universal, "palmer": _to_palmer}


def convert_tooth_notation(code: str | int, from_system: str, to_system: str) -> str:
    """Convert a tooth identifier between FDI, Universal, and Palmer.

    The mapping is a bijection on the 32 permanent teeth.  Inputs may be
    strings or integers; output is always a string in the target system.
    """
    src = from_system.strip().lower()
    dst = to_system.strip().lower()
    for name in (src, dst):
        if name not in _PARSERS:
            raise UnsupportedSystem(f"unknown numbering system: {name!r}")
    quadrant, position = _PARSERS[src](code)
    if src == "fdi" and dst != "fdi":
        _require_permanent(quadrant, code)
    return _EMITTERS[dst](quadrant, position)


def contralateral(code: str | int) -> str:
    """FDI code of the mirror-image tooth (quadrant 1<->2, 3<->4, 5<->6, 7<->8)."""
    quadrant, position = _parse_fdi(code)
    partner = quadrant + 1 if quadrant % 2 == 1 else quadrant - 1
    return f"{partner}{position}"


def arch_walk(start: str | int, end: str | int) -> list[str]:
    """Inclusive run of FDI codes along the arch between two permanent teeth.

    Both endpoints must sit on the same arch (upper or lower); crossing the
    midline walks through the anterior teeth.  Endpoints on different
    arches fall back to just the two-code list.
    """
    a, b = str(start).strip(), str(end).strip()
    for code in (a, b):
        quadrant, _ = _parse_fdi(code)
        _require_permanent(quadrant, code)
    for arch in (UPPER_ARCH, LOWER_ARCH):
        if a in arch and b in arch:
            i, j = arch.index(a), arch.index(b)
            lo, hi = min(i, j), max(i, j)
            return arch[lo : hi + 1]
    return [a, b]
