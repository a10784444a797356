"""Small value helpers shared by storage, cube, oracle and reports."""

from __future__ import annotations

import hashlib
import json
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

UNKNOWN = "UNKNOWN"
INFERRED = "INFERRED"
ALL = "All"


def value_sort_key(value):
    """Total order over stored values: numbers first, then text.

    Placeholder members put ``"UNKNOWN"`` into integer columns, so a plain
    ``sorted`` over a level's values would raise on mixed types.
    """
    if value is None:
        return (2, "")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, value)
    return (1, str(value))


def coerce(kind: str, value):
    """Best-effort conversion of an external value to a column's kind.

    Values that do not convert are returned unchanged; they will simply
    never match a stored member.
    """
    if value is None:
        return None
    if kind == "integer":
        if isinstance(value, bool):
            return value
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, str):
            text = value.strip()
            if text.lstrip("-").isdigit():
                return int(text)
        return value
    if kind == "decimal":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return value
        if isinstance(value, str):
            try:
                d = Decimal(value.strip())
            except Exception:
                return value
            return int(d) if d == d.to_integral_value() else float(d)
        return value
    # text and date are stored as strings
    return value if isinstance(value, str) else str(value)


def round_half_up(x) -> int:
    """Round a Decimal/Fraction/int to the nearest integer, halves away from zero."""
    if isinstance(x, Fraction):
        sign = -1 if x < 0 else 1
        n, d = abs(x.numerator), x.denominator
        q, r = divmod(n, d)
        if 2 * r >= d:
            q += 1
        return sign * q
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def render_fraction(x: Fraction, places: int) -> str:
    """Render an exact rational with ``places`` decimals, half-up."""
    scaled = round_half_up(x * 10**places)
    sign = "-" if scaled < 0 else ""
    digits = str(abs(scaled)).rjust(places + 1, "0")
    if places == 0:
        return sign + digits
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def render_avg(total: int, count: int) -> str:
    return render_fraction(Fraction(total, count), 6)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_hex(data) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
