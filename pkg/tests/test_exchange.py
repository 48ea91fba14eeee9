import random

import pytest
from hypothesis import given, settings, strategies as st

from fairmarket.exchange import (
    BAD_GATE, BAD_OUTPUT, DataBlob, EncodedPackage, MalformedPackage, MisbehaviorProof,
    PhaseError, TwoPartyState, TwoPartyTerms, corrupt_leaf, decode, encode_package, forge_pom,
    generate_pom, run_two_party, verify_package, verify_pom, well_formed)
from fairmarket.ledger import Ledger
from fairmarket.predicate import AllChunksContain, HashEquals, chain_digest, compile_spec
from fairmarket.roles import Strategy

from gen import forged_proof, honest_package, simple_true_circuit


def test_round_trip_small():
    blob = DataBlob.from_bytes(b"hello world, this spans two chunks of data")
    c = simple_true_circuit(len(blob.chunks))
    key = b"k" * 32
    pkg = encode_package(blob, c, key)
    out, ok = decode(pkg, key, c)
    assert out == blob and ok
    assert verify_package(pkg, pkg.root, c.digest, c)


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=4096), st.binary(min_size=32, max_size=32))
def test_round_trip_property(data, key):
    blob = DataBlob.from_bytes(data)
    c = simple_true_circuit(len(blob.chunks))
    pkg = encode_package(blob, c, key)
    assert decode(pkg, key, c)[0] == blob
    assert b"".join(decode(pkg, key, c)[0].chunks)[:len(data)] == data


def test_package_json_round_trip():
    rng = random.Random(0)
    c, chunks, key, pkg = honest_package(rng, max_chunks=8, max_ops=8)
    back = EncodedPackage.from_json(__import__("json").loads(pkg.dumps()))
    assert back == pkg
    with pytest.raises(MalformedPackage):
        EncodedPackage.from_json({"leaves": ["zz"]})


def test_verify_package_rejects_mismatches():
    rng = random.Random(1)
    c, chunks, key, pkg = honest_package(rng, max_chunks=6, max_ops=6)
    assert verify_package(pkg, pkg.root, c.digest, c)
    assert not verify_package(pkg, bytes(32), c.digest, c)
    assert not verify_package(pkg, pkg.root, bytes(32), c)
    other = compile_spec(AllChunksContain(b"q"), c.num_inputs)
    assert not verify_package(pkg, pkg.root, c.digest, other)
    flipped = EncodedPackage(pkg.enc_chunks[:-1] + (bytes(32),), pkg.enc_wires, pkg.circuit_digest, pkg.root)
    assert not well_formed(flipped)


def test_honest_package_has_no_pom():
    rng = random.Random(2)
    for _ in range(20):
        c, chunks, key, pkg = honest_package(rng, max_chunks=10, max_ops=12)
        assert generate_pom(pkg, key, c) is None


def test_every_single_leaf_corruption_is_provable():
    rng = random.Random(3)
    for _ in range(10):
        c, chunks, key, pkg = honest_package(rng, max_chunks=10, max_ops=12)
        for i in range(len(pkg.leaves)):
            bad = corrupt_leaf(pkg, i, byte=rng.randrange(32), flip=1 << rng.randrange(8))
            proof = generate_pom(bad, key, c)
            assert proof is not None
            assert verify_pom(bad.root, c, key, proof)
            # a proof only holds against the root it was made for
            assert not verify_pom(pkg.root, c, key, proof)


def test_false_output_gives_bad_output_proof():
    blob = DataBlob.from_bytes(b"no such letter here")
    c = compile_spec(AllChunksContain(b"\xfe\xfe"), len(blob.chunks))
    key = b"\x01" * 32
    pkg = encode_package(blob, c, key)
    proof = generate_pom(pkg, key, c)
    assert proof.kind == BAD_OUTPUT and verify_pom(pkg.root, c, key, proof)


def test_forged_proofs_rejected():
    rng = random.Random(4)
    for _ in range(300):
        c, chunks, key, pkg = honest_package(rng, max_chunks=8, max_ops=10)
        assert not verify_pom(pkg.root, c, key, forged_proof(rng, pkg, c, key))


def test_forge_pom_is_well_formed_but_false():
    rng = random.Random(5)
    c, chunks, key, pkg = honest_package(rng, max_chunks=8, max_ops=10)
    p = forge_pom(pkg, c)
    assert p.kind == BAD_OUTPUT and not verify_pom(pkg.root, c, key, p)
    assert MisbehaviorProof.from_json(p.to_json()) == p


def test_wrong_key_in_verify():
    rng = random.Random(6)
    c, chunks, key, pkg = honest_package(rng, max_chunks=6, max_ops=6)
    bad = corrupt_leaf(pkg, 0)
    proof = generate_pom(bad, key, c)
    assert proof.kind in (BAD_GATE, BAD_OUTPUT)
    assert verify_pom(bad.root, c, key, proof)


# -- two-party flow ----------------------------------------------------------

def _alice_bob(behaviors=("Honest", "Honest"), price=5, window=3, bob=100):
    text = b"some strings: s in each chunk, see? yes, s is there"
    blob = DataBlob.from_bytes(text)
    phi = compile_spec(AllChunksContain(b"s"), len(blob.chunks))
    led = Ledger()
    led.open_account("Alice", 10)
    led.open_account("Bob", bob)
    terms = TwoPartyTerms(price, blob, phi, b"\x07" * 32, window=window)
    out = run_two_party(Strategy.of("Seller", behaviors[0]), Strategy.of("Buyer", behaviors[1]),
                        terms, led, "Alice", "Bob")
    return out, led


def test_alice_bob_price_five():
    out, led = _alice_bob()
    assert out.phase == "Settled"
    assert out.deltas == {"Alice": 5, "Bob": -5}
    assert out.notes == ["Agreed", "Funded", "Delivered", "Revealed", "Settled"]


def test_alice_junk_refunds_bob():
    out, led = _alice_bob(("SellerJunkData", "Honest"), price=50)
    assert out.phase == "Aborted"
    assert out.verdicts and out.verdicts[0]["basis"] == "ValidPoM"
    assert out.deltas == {"Alice": -5, "Bob": 5}


def test_bob_underpays():
    out, led = _alice_bob(("Honest", "BuyerUnderpay"), price=50)
    assert out.phase == "Aborted" and not out.buyer_has_key
    assert out.deltas == {"Alice": 0, "Bob": 0}


def test_bob_false_complaint():
    out, led = _alice_bob(("Honest", "BuyerFalseComplaint"), price=50)
    assert out.phase == "Settled"
    assert out.verdicts[0]["basis"] == "InvalidComplaint"


def test_abort_before_funding():
    out, led = _alice_bob(("Abort", "Honest"))
    assert out.phase == "Aborted" and out.deltas == {"Alice": 0, "Bob": 0}


def test_hash_predicate_two_party():
    blob = DataBlob.from_bytes(bytes(range(200)))
    phi = compile_spec(HashEquals(chain_digest(blob.chunks)), len(blob.chunks))
    led = Ledger()
    led.open_account("s", 10)
    led.open_account("b", 100)
    out = run_two_party(Strategy.of("Seller"), Strategy.of("Buyer"),
                        TwoPartyTerms(40, blob, phi, b"\x02" * 32), led, "s", "b")
    assert out.phase == "Settled" and out.buyer_valid_data and out.buyer_phi


def test_phase_machine():
    st_ = TwoPartyState()
    with pytest.raises(PhaseError):
        st_.advance("Revealed")
    st_.advance("Funded")
    st_.abort()
    with pytest.raises(PhaseError):
        st_.advance("Delivered")
