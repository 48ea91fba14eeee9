import random

import pytest

from fairmarket.exchange import DataBlob, MalformedPackage, encode_package, generate_pom, corrupt_leaf
from fairmarket.ledger import DeadlineExpired, DepositTooLow, Ledger, NotPaid, UnknownAccount
from fairmarket.mediated import (
    BudgetBelowAsk, BuyerRequest, InvalidListing, MediatedTerms, Mediator, PackageRejected,
    PhaseError, RhoRejected, SellerOffer, accept_and_pay, complain, reveal_key, run_mediated, settle)
from fairmarket.predicate import (
    And, FieldMembership, NoChunkContains, RowCountAtLeast, compile_spec, conjoin)
from fairmarket.roles import InfoFlow, Strategy
from fairmarket.tabular import ALLOWED_DISEASES, MEDICAL_LAYOUT, medical_rows

KEY = b"\x42" * 32


@pytest.fixture
def medical():
    rows = medical_rows(random.Random(11), 20)
    chunks = MEDICAL_LAYOUT.pack(rows, 24)
    phi = compile_spec(And(FieldMembership("class_of_disease", ALLOWED_DISEASES), RowCountAtLeast(15)),
                       len(chunks), MEDICAL_LAYOUT)
    return DataBlob(chunks), phi, MEDICAL_LAYOUT.clear_masks()


def market(**bal):
    led = Ledger()
    for k, v in (bal or {"s": 1000, "m": 0, "b": 1000}).items():
        led.open_account(k, v)
    return led


def listed(medical, ask=100, budget=100, c_s=500, c_b=1000, rho=None, key=KEY, tamper=False,
           skip=False, led=None):
    blob, phi, clear = medical
    led = led or market()
    info = InfoFlow()
    med = Mediator("m", led, info, tamper=tamper, skip_phi_check=skip)
    pkg = encode_package(blob, conjoin(phi, rho), key, clear)
    oid = med.register_offer(SellerOffer("s", pkg, phi, ask, c_s, rho))
    rid = med.register_request(BuyerRequest("b", phi, budget, c_b))
    return led, med, info, oid, rid, pkg


def test_offer_mediator_sees_only_ciphertext(medical):
    blob, phi, clear = medical
    led, med, info, oid, rid, pkg = listed(medical)
    assert info.kinds("m") <= {"ciphertext", "terms"}
    # encrypted columns never appear in what the mediator saw
    for row in blob.chunks[1:21]:
        assert not info.contains("m", row[4:24])
    # the clear columns are what it can read
    assert pkg.enc_chunks[1][24:] == blob.chunks[1][24:]


def test_offer_validation(medical):
    blob, phi, clear = medical
    led = market()
    med = Mediator("m", led)
    pkg = encode_package(blob, phi, KEY, clear)
    with pytest.raises(InvalidListing):
        med.register_offer(SellerOffer("s", pkg, phi, 0, 0))
    with pytest.raises(UnknownAccount):
        med.register_offer(SellerOffer("nobody", pkg, phi, 10, 0))
    broken = corrupt_leaf(pkg, 0)
    broken = type(pkg)(broken.enc_chunks, broken.enc_wires, broken.circuit_digest, pkg.root, pkg.clear)
    with pytest.raises(MalformedPackage):
        med.register_offer(SellerOffer("s", broken, phi, 10, 0))
    a = med.register_offer(SellerOffer("s", pkg, phi, 10, 0))
    b = med.register_offer(SellerOffer("s", pkg, phi, 10, 0))
    assert a != b


def test_request_validation(medical):
    blob, phi, clear = medical
    led = market()
    med = Mediator("m", led)
    with pytest.raises(InvalidListing):
        med.register_request(BuyerRequest("b", phi, 0, 0))
    big = compile_spec(RowCountAtLeast(10_000), len(blob.chunks), MEDICAL_LAYOUT)
    assert med.register_request(BuyerRequest("b", big, 10, 0))


@pytest.mark.parametrize("ask, budget, price", [(80, 100, 80), (80, 80, 80)])
def test_match_price(medical, ask, budget, price):
    led, med, info, oid, rid, pkg = listed(medical, ask=ask, budget=budget)
    assert med.match_and_forward(oid, rid).price == price


def test_budget_below_ask(medical):
    led, med, info, oid, rid, pkg = listed(medical, ask=80, budget=79)
    with pytest.raises(BudgetBelowAsk):
        med.match_and_forward(oid, rid)


@pytest.mark.parametrize("c_b, escrow", [(1000, 110), (0, 100)])
def test_accept_and_pay_escrow(medical, c_b, escrow):
    led, med, info, oid, rid, pkg = listed(medical, c_b=c_b)
    tr = med.match_and_forward(oid, rid)
    e = accept_and_pay(tr, led)
    assert e.amount == escrow and tr.phase == "Paid"


def test_buyer_rejects_rho(medical):
    blob, phi, clear = medical
    rho = compile_spec(NoChunkContains(b"SSN"), len(blob.chunks))
    led, med, info, oid, rid, pkg = listed(medical, rho=rho)
    before = {k: led.balance(k) for k in "smb"}
    tr = med.match_and_forward(oid, rid)
    with pytest.raises(RhoRejected):
        accept_and_pay(tr, led, accept_rho=False)
    assert tr.phase == "Aborted"
    assert {k: led.balance(k) for k in "smb"} == before


def test_reveal_before_payment(medical):
    led, med, info, oid, rid, pkg = listed(medical)
    tr = med.match_and_forward(oid, rid)
    with pytest.raises(NotPaid):
        led.reveal_key(tr.id, "s", KEY, 10)
    with pytest.raises(NotPaid):
        reveal_key(tr, KEY, 10, led)
    assert tr.phase == "Matched"
    with pytest.raises(PhaseError):
        tr.advance("Revealed")


def test_deposit_minimum(medical):
    led, med, info, oid, rid, pkg = listed(medical)
    tr = med.match_and_forward(oid, rid)
    accept_and_pay(tr, led)
    with pytest.raises(DepositTooLow):
        reveal_key(tr, KEY, 9, led)


def test_valid_complaint_refunds_110(medical):
    blob, phi, clear = medical
    led, med, info, oid, rid, pkg = listed(medical)
    # swap in a corrupted package with its own root, as a cheating seller would list it
    bad = corrupt_leaf(pkg, 3)
    oid = med.register_offer(SellerOffer("s", bad, phi, 100, 500))
    tr = med.match_and_forward(oid, rid)
    accept_and_pay(tr, led)
    reveal_key(tr, KEY, 10, led)
    v = complain(tr, generate_pom(bad, KEY, phi), led)
    assert v.basis == "ValidPoM"
    assert led.balance("b") == 1010 and led.balance("s") == 990 and led.balance("m") == 0


def test_late_complaint(medical):
    blob, phi, clear = medical
    led, med, info, oid, rid, pkg = listed(medical)
    bad = corrupt_leaf(pkg, 3)
    oid = med.register_offer(SellerOffer("s", bad, phi, 100, 500))
    tr = med.match_and_forward(oid, rid)
    accept_and_pay(tr, led)
    reveal_key(tr, KEY, 10, led)
    led.advance_time(tr.window + 1)
    with pytest.raises(DeadlineExpired):
        complain(tr, generate_pom(bad, KEY, phi), led)


def test_no_complaint_settles(medical):
    led, med, info, oid, rid, pkg = listed(medical)
    tr = med.match_and_forward(oid, rid)
    accept_and_pay(tr, led)
    reveal_key(tr, KEY, 10, led)
    led.advance_time(tr.window + 1)
    pay = settle(tr, led)
    assert (pay.to_mediator, pay.to_seller) == (15, 95)
    assert tr.history == ["Offered", "Requested", "Matched", "Paid", "Revealed", "Settled"]


def test_tampered_package_rejected_before_payment(medical):
    led, med, info, oid, rid, pkg = listed(medical, tamper=True)
    tr = med.match_and_forward(oid, rid)
    with pytest.raises(PackageRejected):
        accept_and_pay(tr, led)
    assert led.escrowed() == 0


def _run(medical, s="Honest", m="Honest", b="Honest", **kw):
    blob, phi, clear = medical
    led = market()
    terms = MediatedTerms(blob, phi, 100, 120, 500, 1000, clear=clear, seller="s", mediator="m",
                          buyer="b", **kw)
    return run_mediated(Strategy.of("Seller", s), Strategy.of("Mediator", m), Strategy.of("Buyer", b),
                        terms, led, key=KEY)


def test_run_honest(medical):
    out = _run(medical)
    assert out.phase == "Settled"
    assert out.deltas == {"s": 95, "m": 15, "b": -110}
    assert out.buyer_valid_data and out.buyer_phi
    assert not out.info.saw_secret("m") and not out.info.contains("m", KEY)


def test_run_junk(medical):
    out = _run(medical, s="SellerJunkData")
    assert out.deltas["b"] >= 0 and out.deltas["s"] == -10
    assert out.verdicts[0]["basis"] == "ValidPoM"


def test_run_tamper(medical):
    out = _run(medical, m="MediatorTamperPackage")
    assert out.phase == "Aborted" and set(out.deltas.values()) == {0}


def test_run_underpay(medical):
    out = _run(medical, b="BuyerUnderpay")
    assert out.phase == "Aborted" and set(out.deltas.values()) == {0}
    assert not out.buyer_has_key


def test_run_wrong_rho(medical):
    blob, phi, clear = medical
    rho = compile_spec(NoChunkContains(b"SSN:"), len(blob.chunks))
    chunks = list(blob.chunks)
    row = bytearray(chunks[1])
    row[8:12] = b"SSN:"
    chunks[1] = bytes(row)
    out = _run(medical, s="SellerWrongRho", rho=rho, bad_rho_blob=DataBlob(chunks))
    assert out.phase == "Aborted" and out.deltas["b"] == 10
