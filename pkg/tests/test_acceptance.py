"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""

import random
import time

import pytest

from fairmarket.adversim import (
    Scenario, assert_fairness, enumerate_collusion_suite, random_market, run_scenario,
    trace_violations)
from fairmarket.exchange import (
    PHASE_ORDER, DataBlob, EncodedPackage, TwoPartyTerms, corrupt_leaf, decode, encode_package,
    generate_pom, run_two_party, verify_package, verify_pom)
from fairmarket.ledger import (
    Agreement, DeadlineExpired, Ledger, NotPaid, compute_payouts)
from fairmarket.mediated import STEP_PHASES, MediatedTerms, run_mediated
from fairmarket.predicate import AllChunksContain, HashEquals, chain_digest, compile_spec
from fairmarket.roles import Strategy
from fairmarket.tradegraph import GraphBuilder, rebuild_from_log

from conftest import record
from gen import LedgerFuzzer, forged_proof, honest_package, ledger_pool, simple_true_circuit

pytestmark = pytest.mark.acceptance


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    record(f"[{n}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


# 1 -----------------------------------------------------------------------------

def test_1_payout_arithmetic():
    rng = random.Random(101)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(100_000):
        p = rng.randrange(0, 10**9 + 1)
        cs, cb = rng.randrange(0, 10**4 + 1), rng.randrange(0, 10**4 + 1)
        pay = compute_payouts(p, cs, cb)
        fee_s, fee_b = divmod(cs * p, 10**4)[0], divmod(cb * p, 10**4)[0]
        escrow = p + fee_b
        if (pay.to_mediator != fee_s + fee_b or pay.to_seller != p - fee_s
                or escrow - pay.to_mediator - pay.to_seller != 0):
            bad += 1
    dt = time.perf_counter() - t0
    verdict(1, "payout arithmetic", bad == 0 and dt < 5, f"1e5 draws, {bad} mismatches, {dt:.2f}s < 5s")


# 2 -----------------------------------------------------------------------------

def test_2_conservation_fuzz():
    rng = random.Random(202)
    pool = ledger_pool(rng, 9)
    t0 = time.perf_counter()
    broken = replay_bad = 0
    for _ in range(10_000):
        f = LedgerFuzzer(rng, pool)
        for _ in range(rng.randrange(5, 30)):
            f.step()
            if f.led.total_supply() != f.led.genesis_supply:
                broken += 1
        if Ledger.replay(f.led.read_log()).snapshot() != f.led.snapshot():
            replay_bad += 1
    dt = time.perf_counter() - t0
    verdict(2, "conservation fuzz", broken == 0 and replay_bad == 0 and dt < 30,
            f"1e4 sequences, {broken} supply breaks, {replay_bad} replay mismatches, {dt:.1f}s < 30s")


# 3 -----------------------------------------------------------------------------

def test_3_pom_completeness():
    rng = random.Random(303)
    t0 = time.perf_counter()
    misses = tried = 0
    for _ in range(100):
        c, chunks, key, pkg = honest_package(rng, max_chunks=64, max_ops=64)
        assert generate_pom(pkg, key, c) is None
        for i in range(len(pkg.leaves)):
            bad = corrupt_leaf(pkg, i, byte=rng.randrange(32), flip=1 << rng.randrange(8))
            proof = generate_pom(bad, key, c)
            tried += 1
            if proof is None or not verify_pom(bad.root, c, key, proof):
                misses += 1
    dt = time.perf_counter() - t0
    verdict(3, "PoM completeness", misses == 0 and dt < 60,
            f"100 pairs, {tried} corruptions, {misses} misses, {dt:.1f}s < 60s")


# 4 -----------------------------------------------------------------------------

def test_4_pom_soundness():
    rng = random.Random(404)
    accepted = 0
    for _ in range(200):
        c, chunks, key, pkg = honest_package(rng, max_chunks=16, max_ops=24)
        for _ in range(50):
            if verify_pom(pkg.root, c, key, forged_proof(rng, pkg, c, key)):
                accepted += 1
    verdict(4, "PoM soundness", accepted == 0, f"1e4 forged proofs, {accepted} accepted")


# 5 -----------------------------------------------------------------------------

def test_5_fairness_suite():
    base = Scenario(name="medical", seed=7, budget=120, rho={"none_contain": "SSN:"},
                    rho_text="no social security numbers")
    suite = enumerate_collusion_suite(base)
    failures = []
    for s in suite:
        r = run_scenario(s)
        v = assert_fairness(r)
        if not v.passed:
            failures.append(f"{s.name}: {v.failures}")
        if not v.checks.get("mediator_blind"):
            failures.append(f"{s.name}: mediator not blind")
        if r.phase == "Settled" and "mediator" in v.checks and not v.checks["mediator"]:
            failures.append(f"{s.name}: commission withheld")
        if run_scenario(s).dumps() != r.dumps():
            failures.append(f"{s.name}: nondeterministic")
    verdict(5, "fairness suite", len(suite) == 7 and not failures,
            f"{len(suite)} scenarios, failures: {failures or 'none'}")


# 6 -----------------------------------------------------------------------------

def _ordered(history, order):
    pos = [order.index(h) for h in history if h in order]
    return pos == sorted(pos) and len(set(pos)) == len(pos)


def test_6_protocol_ordering():
    rng = random.Random(606)
    behaviors = {
        "seller": ["Honest", "SellerJunkData", "SellerWrongRho", "Abort"],
        "mediator": ["Honest", "MediatorSkipPhiCheck", "MediatorTamperPackage"],
        "buyer": ["Honest", "BuyerUnderpay", "BuyerFalseComplaint", "Abort"],
    }
    traces = bad_traces = 0
    for k in range(150):
        mediated = k % 3 != 0
        st = {r: [rng.choice(behaviors[r])] for r in behaviors}
        if not mediated:
            st["mediator"] = ["Honest"]
        s = Scenario(name=f"t{k}", seed=k, budget=100 + rng.randrange(0, 20),
                     rho={"none_contain": "SSN:"}, window=rng.randrange(0, 5), strategies=st,
                     mediator="mediator" if mediated else None)
        r = run_scenario(s)
        traces += 1
        steps = r.outcome.notes
        order = STEP_PHASES if mediated else PHASE_ORDER
        if trace_violations(r.events) or not _ordered(steps, order):
            bad_traces += 1
    for k in range(50):
        led = random_market(random.Random(k), 6)
        traces += 1
        bad_traces += bool(trace_violations(led.read_log()))

    # reveal before (full) payment must be refused every time
    attempts = refused = 0
    for k in range(200):
        led = Ledger()
        for n in ("s", "m", "b"):
            led.open_account(n, 10_000)
        blob = DataBlob.from_bytes(rng.randbytes(rng.randrange(1, 200)))
        c = compile_spec(HashEquals(chain_digest(blob.chunks)), len(blob.chunks))
        key = rng.randbytes(32)
        pkg = encode_package(blob, c, key)
        price = rng.randrange(1, 1000)
        cb = rng.randrange(0, 3000) if k % 2 else 0
        parties = ("s", "m", "b") if k % 2 else ("s", "b")
        tid = led.register_agreement(Agreement.create(
            "trade", parties, {"price": price, "c_s": 0, "c_b": cb, "window": 2, "min_deposit": 0}, phi=c))
        led.post_commitment(tid, "s", pkg.root)
        due = led.trade(tid).due
        mode = k % 4
        if mode == 1 and due > 1:
            led.freeze("b", rng.randrange(1, due), tid)      # partial
        elif mode == 2:
            led.freeze("b", due + 1, tid)                     # wrong amount
        elif mode == 3:
            led.freeze("b", due, "elsewhere")                 # paid into the wrong contract
        attempts += 1
        try:
            led.reveal_key(tid, "s", key, 0)
        except NotPaid:
            refused += 1
    ok = bad_traces == 0 and refused == attempts
    verdict(6, "protocol ordering", ok,
            f"{traces} traces, {bad_traces} out of order; reveal-before-pay refused {refused}/{attempts}")


# 7 -----------------------------------------------------------------------------

def test_7_timeout_boundary():
    results = []
    for t in (0, 1, 7, 1000):
        for late, expect_ok in ((0, True), (1, False)):
            led = Ledger()
            led.open_account("s", 100)
            led.open_account("b", 100)
            blob = DataBlob.from_bytes(b"abc" * 30)
            c = compile_spec(AllChunksContain(b"\xfe\xfe\xfe"), len(blob.chunks))
            key = b"\x33" * 32
            pkg = encode_package(blob, c, key)
            tid = led.register_agreement(Agreement.create(
                "trade", ("s", "b"), {"price": 50, "c_s": 0, "c_b": 0, "window": t, "min_deposit": 5}, phi=c))
            led.post_commitment(tid, "s", pkg.root)
            led.freeze("b", 50, tid)
            led.reveal_key(tid, "s", key, 5)
            reveal = led.clock
            led.advance_time(t + late)
            proof = generate_pom(pkg, key, c)
            try:
                led.submit_complaint(tid, "b", proof)
                got = True
            except DeadlineExpired:
                got = False
            results.append((t, led.clock - reveal, got == expect_ok))
    ok = all(r[2] for r in results)
    verdict(7, "timeout boundary", ok,
            "t in {0,1,7,1000}: accepted at reveal+t, rejected at reveal+t+1" if ok else str(results))


# 8 -----------------------------------------------------------------------------

def test_8_graph_reconstruction():
    mismatches = edges = 0
    for seed in range(100):
        b = GraphBuilder()
        led = random_market(random.Random(8000 + seed), 6, b)
        g = rebuild_from_log(led.read_log())
        edges += len(g.edges)
        if g != b.graph or len(g.edges) != sum(e.kind == "Settled" for e in led.read_log()):
            mismatches += 1
    ab = Scenario(name="alice-bob", accounts={"Alice": 0, "Bob": 100}, seller="Alice", mediator=None,
                  buyer="Bob", data={"kind": "text", "text": "s" * 64}, phi={"all_contain": "s"},
                  ask=5, budget=5, c_s=0, c_b=0)
    g = rebuild_from_log(run_scenario(ab).events)
    example = [(e.seller, e.buyer, e.weight) for e in g.edges] == [("Alice", "Bob", 5)]
    verdict(8, "graph reconstruction", mismatches == 0 and example,
            f"100 markets ({edges} edges), {mismatches} mismatches; Alice->Bob w=5: {example}")


# 9 -----------------------------------------------------------------------------

def test_9_round_trip_and_verification():
    rng = random.Random(909)
    sizes = [0, 1, 31, 32, 33, 1000, 65_536, 1 << 20]
    sizes += [rng.randrange(1, 1 << 20) for _ in range(2)]
    round_trips = 0
    for n in sizes:
        data = rng.randbytes(n)
        blob = DataBlob.from_bytes(data)
        c = simple_true_circuit(len(blob.chunks))
        key = rng.randbytes(32)
        pkg = encode_package(blob, c, key)
        out, ok = decode(pkg, key, c)
        round_trips += out == blob and ok and b"".join(out.chunks)[:n] == data

    c, chunks, key, pkg = honest_package(rng, max_chunks=32, max_ops=32)
    accepted = 0
    for _ in range(1000):
        leaves = [bytearray(x) for x in pkg.leaves]
        where = rng.random()
        root, digest = bytearray(pkg.root), bytearray(pkg.circuit_digest)
        if where < 0.8:
            leaves[rng.randrange(len(leaves))][rng.randrange(32)] ^= rng.randrange(1, 256)
        elif where < 0.9:
            root[rng.randrange(32)] ^= rng.randrange(1, 256)
        else:
            digest[rng.randrange(32)] ^= rng.randrange(1, 256)
        n = len(pkg.enc_chunks)
        flipped = EncodedPackage(tuple(bytes(x) for x in leaves[:n]), tuple(bytes(x) for x in leaves[n:]),
                                 bytes(digest), bytes(root), pkg.clear)
        accepted += verify_package(flipped, pkg.root, c.digest, c)
    ok = round_trips == len(sizes) and accepted == 0 and verify_package(pkg, pkg.root, c.digest, c)
    verdict(9, "round trip and verification", ok,
            f"{round_trips}/{len(sizes)} round trips up to 1 MiB; {accepted}/1000 flipped packages accepted")
