"""The medical-shop walk-through: selective encryption, a mediator who
checks the clear columns, and what each party ends up seeing.

    python3 scripts/medical_example.py [--rows 50] [--seed 7]
"""

import argparse
import random

from fairmarket.exchange import DataBlob, encode_package
from fairmarket.ledger import Ledger
from fairmarket.mediated import MediatedTerms, run_mediated
from fairmarket.predicate import (
    And, FieldMembership, RowCountAtLeast, clear_evaluable, compile_spec, eval_circuit)
from fairmarket.roles import Strategy
from fairmarket.tabular import ALLOWED_DISEASES, MEDICAL_LAYOUT, medical_rows


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=50)
    ap.add_argument("--min-rows", type=int, default=40)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    rng = random.Random(args.seed)
    rows = medical_rows(rng, args.rows)
    chunks = MEDICAL_LAYOUT.pack(rows, args.rows + 10)
    spec = And(FieldMembership("class_of_disease", ALLOWED_DISEASES), RowCountAtLeast(args.min_rows))
    phi = compile_spec(spec, len(chunks), MEDICAL_LAYOUT)
    clear = MEDICAL_LAYOUT.clear_masks()
    print(f"{len(rows)} rows in {len(chunks)} chunks; predicate has {len(phi.gates)} gates")
    print(f"predicate true on plaintext: {eval_circuit(phi, chunks)}")
    print(f"checkable on ciphertext:     {clear_evaluable(phi, *clear)}")

    key = rng.randbytes(32)
    pkg = encode_package(DataBlob(chunks), phi, key, clear)
    print(f"true on the encrypted chunks: {eval_circuit(phi, pkg.enc_chunks)}")
    row = pkg.enc_chunks[1]
    print(f"row 1 plaintext  {chunks[1].hex()}")
    print(f"row 1 as shipped {row.hex()}")

    ledger = Ledger()
    for acct, bal in (("seller", 1000), ("mediator", 0), ("buyer", 1000)):
        ledger.open_account(acct, bal)
    terms = MediatedTerms(DataBlob(chunks), phi, ask=100, budget=120, c_s=500, c_b=1000, clear=clear)
    honest = [Strategy.of(r, "Honest") for r in ("Seller", "Mediator", "Buyer")]
    out = run_mediated(*honest, terms, ledger, key=key)
    print(f"outcome: {out.phase}, deltas {out.deltas}")
    for party in ("mediator", "buyer"):
        print(f"{party} observed: {sorted(out.info.kinds(party))}")


if __name__ == "__main__":
    main()
