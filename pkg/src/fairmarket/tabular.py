"""Row-per-chunk packing of tabular data.

Chunk 0 is a header::

    bytes 0..3    magic b"TBL1"
    byte  4       column count (<= 9)
    bytes 5..     (offset, width) per column
    bytes 24..31  row count, u64 big-endian

Chunks 1..n hold one row each; chunks past the row count are zero padding.
Cells are right-aligned big-endian integers or left-aligned byte strings
padded with zeros. Categorical columns map labels to integer codes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .commitments import WORD_SIZE

MAGIC = b"TBL1"
MAX_COLUMNS = 9


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    offset: int
    width: int
    clear: bool = False                      # left unencrypted in the package
    codes: tuple[tuple[str, int], ...] = ()  # categorical label -> code


@dataclass(frozen=True)
class TableLayout:
    columns: tuple[Column, ...]

    def __post_init__(self):
        if len(self.columns) > MAX_COLUMNS:
            raise LayoutError(f"at most {MAX_COLUMNS} columns fit in the header")
        used = bytearray(WORD_SIZE)
        for c in self.columns:
            if c.width <= 0 or c.offset < 0 or c.offset + c.width > WORD_SIZE:
                raise LayoutError(f"column {c.name!r} does not fit in a row word")
            for i in range(c.offset, c.offset + c.width):
                if used[i]:
                    raise LayoutError(f"column {c.name!r} overlaps another column")
                used[i] = 1

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise LayoutError(f"no column named {name!r}")

    def cell_code(self, name: str, value) -> int:
        """Integer a cell holds, as read by GE64 on the trailing bytes."""
        col = self.column(name)
        if isinstance(value, int):
            code = value
        elif col.codes and isinstance(value, str):
            try:
                code = dict(col.codes)[value]
            except KeyError:
                raise LayoutError(f"{value!r} is not a category of {name!r}") from None
        else:
            raw = value.encode() if isinstance(value, str) else bytes(value)
            if len(raw) > col.width:
                raise LayoutError(f"{value!r} is wider than column {name!r}")
            code = int.from_bytes(raw.rjust(col.width, b"\x00"), "big")
        if not 0 <= code < 1 << (8 * col.width):
            raise LayoutError(f"{value!r} does not fit column {name!r}")
        return code

    def header(self, rows: int) -> bytes:
        h = bytearray(WORD_SIZE)
        h[0:4] = MAGIC
        h[4] = len(self.columns)
        for i, c in enumerate(self.columns):
            h[5 + 2 * i] = c.offset
            h[6 + 2 * i] = c.width
        h[24:32] = rows.to_bytes(8, "big")
        return bytes(h)

    def encode_row(self, row: dict) -> bytes:
        w = bytearray(WORD_SIZE)
        for c in self.columns:
            v = row.get(c.name, 0)
            if isinstance(v, (bytes, str)) and not (c.codes and isinstance(v, str)):
                raw = v.encode() if isinstance(v, str) else v
                if len(raw) > c.width:
                    raise LayoutError(f"{v!r} is wider than column {c.name!r}")
                w[c.offset:c.offset + c.width] = raw.ljust(c.width, b"\x00")
            else:
                w[c.offset:c.offset + c.width] = self.cell_code(c.name, v).to_bytes(c.width, "big")
        return bytes(w)

    def pack(self, rows: list[dict], capacity: int | None = None) -> list[bytes]:
        """Header plus one chunk per row, zero-padded to ``capacity`` rows."""
        capacity = len(rows) if capacity is None else capacity
        if capacity < len(rows):
            raise LayoutError("capacity smaller than row count")
        chunks = [self.header(len(rows))] + [self.encode_row(r) for r in rows]
        chunks += [bytes(WORD_SIZE)] * (capacity - len(rows))
        return chunks

    def clear_masks(self) -> tuple[bytes, bytes]:
        """(header mask, row mask); set bytes stay unencrypted."""
        row = bytearray(WORD_SIZE)
        for c in self.columns:
            if c.clear:
                row[c.offset:c.offset + c.width] = b"\xff" * c.width
        return b"\xff" * WORD_SIZE, bytes(row)

    def to_json(self) -> list:
        return [{"name": c.name, "offset": c.offset, "width": c.width, "clear": c.clear,
                 "codes": [list(x) for x in c.codes]} for c in self.columns]


DISEASES = ("Diabetes", "Heart Ailments", "Psychological Issues", "Oncology", "Orthopaedics")
ALLOWED_DISEASES = frozenset(DISEASES[:3])
BLOOD_GROUPS = ("A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-")
DRUGS = ("Metformin", "Insulin", "Atorvastatin", "Aspirin", "Sertraline", "Lithium", "Amlodipine")

MEDICAL_LAYOUT = TableLayout((
    Column("id", 0, 4, clear=True),
    Column("age", 4, 1),
    Column("blood_group", 5, 3),
    Column("drug_name", 8, 16),
    Column("class_of_disease", 24, 8, clear=True,
           codes=tuple((d, i + 1) for i, d in enumerate(DISEASES))),
))


def medical_rows(rng: random.Random, n: int, allowed_only: bool = True) -> list[dict]:
    diseases = sorted(ALLOWED_DISEASES) if allowed_only else list(DISEASES)
    return [
        {
            "id": i + 1,
            "age": rng.randrange(18, 95),
            "blood_group": rng.choice(BLOOD_GROUPS),
            "drug_name": rng.choice(DRUGS),
            "class_of_disease": rng.choice(diseases),
        }
        for i in range(n)
    ]
