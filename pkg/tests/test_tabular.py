import random

import pytest

from fairmarket.tabular import (
    MEDICAL_LAYOUT, Column, LayoutError, TableLayout, medical_rows)


def test_header_layout():
    h = MEDICAL_LAYOUT.header(12)
    assert h[:4] == b"TBL1" and h[4] == 5
    assert int.from_bytes(h[24:], "big") == 12


def test_row_encoding():
    row = {"id": 7, "age": 40, "blood_group": "AB+", "drug_name": "Insulin",
           "class_of_disease": "Heart Ailments"}
    w = MEDICAL_LAYOUT.encode_row(row)
    assert w[0:4] == (7).to_bytes(4, "big")
    assert w[4] == 40
    assert w[5:8] == b"AB+"
    assert w[8:24] == b"Insulin".ljust(16, b"\0")
    assert int.from_bytes(w[24:], "big") == 2


def test_pack_pads_with_zero_chunks():
    rows = medical_rows(random.Random(0), 3)
    chunks = MEDICAL_LAYOUT.pack(rows, 6)
    assert len(chunks) == 7 and chunks[-1] == bytes(32)
    with pytest.raises(LayoutError):
        MEDICAL_LAYOUT.pack(rows, 2)


def test_clear_masks_cover_id_and_class():
    header, row = MEDICAL_LAYOUT.clear_masks()
    assert header == b"\xff" * 32
    assert row[:4] == b"\xff" * 4 and row[24:] == b"\xff" * 8
    assert row[4:24] == bytes(20)


def test_bad_layouts():
    with pytest.raises(LayoutError):
        TableLayout((Column("a", 0, 8), Column("b", 4, 8)))
    with pytest.raises(LayoutError):
        TableLayout((Column("a", 30, 4),))
    with pytest.raises(LayoutError):
        MEDICAL_LAYOUT.cell_code("class_of_disease", "Flu")
    with pytest.raises(LayoutError):
        MEDICAL_LAYOUT.encode_row({"drug_name": "x" * 17})


def test_allowed_only_rows():
    rows = medical_rows(random.Random(1), 200)
    assert {r["class_of_disease"] for r in rows} <= {"Diabetes", "Heart Ailments", "Psychological Issues"}
