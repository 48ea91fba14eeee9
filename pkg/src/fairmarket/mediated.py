"""Three-party trade through a mediator who only ever handles ciphertext.

Step order:

1. seller lists f(D) and rho with the mediator (ask p_S, commission c_S)
2. buyer files a request with its predicate (budget p_B, commission c_B)
3. mediator matches at p = min(p_S, p_B), posts the deal, forwards f(D)
4. buyer checks the package and rho against the ledger, escrows p + c_B p
5. seller reveals the key (with a deposit) once the escrow is complete
6. buyer may complain with a proof of misbehavior within t ticks
7. the ledger settles: c_S p + c_B p to the mediator, p - c_S p to the seller
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .exchange import (
    DataBlob,
    EncodedPackage,
    MalformedPackage,
    complaint_cites,
    corrupt_leaf,
    decode,
    encode_package,
    forge_pom,
    generate_pom,
    verify_package,
    well_formed,
)
from .ledger import (
    BPS,
    Agreement,
    Escrow,
    Ledger,
    LedgerError,
    Payouts,
    UnknownAccount,
    Verdict,
    buyer_due,
    compute_payouts,
    default_deposit,
)
from .predicate import PredicateCircuit, clear_evaluable, conjoin, eval_circuit
from .roles import Behavior, InfoFlow, Strategy, TradeOutcome

__all__ = [
    "SellerOffer", "BuyerRequest", "MediatedTrade", "Mediator", "Payouts", "compute_payouts",
    "accept_and_pay", "reveal_key", "complain", "settle", "run_mediated", "MediatedTerms",
]

STEP_PHASES = ("Offered", "Requested", "Matched", "Paid", "Revealed", "Complained", "Settled")
_NEXT = {
    "Matched": {"Paid", "Aborted"},
    "Paid": {"Revealed", "Aborted"},
    "Revealed": {"Complained", "Settled"},
    "Complained": {"Complained", "Settled", "Aborted"},
}


class MarketError(Exception):
    pass


class BudgetBelowAsk(MarketError):
    pass


class PhiCheckFailed(MarketError):
    pass


class RhoRejected(MarketError):
    pass


class PackageRejected(MarketError):
    pass


class InvalidListing(MarketError):
    pass


class PhaseError(MarketError):
    pass


@dataclass(frozen=True)
class SellerOffer:
    seller: str
    package: EncodedPackage
    phi: PredicateCircuit          # predicate the package was encoded against
    ask: int
    c_s: int
    rho: Optional[PredicateCircuit] = None
    rho_text: str = ""


@dataclass(frozen=True)
class BuyerRequest:
    buyer: str
    phi: PredicateCircuit
    budget: int
    c_b: int


@dataclass
class MediatedTrade:
    id: str
    seller: str
    mediator: str
    buyer: str
    offer_id: str
    request_id: str
    price: int
    c_s: int
    c_b: int
    window: int
    min_deposit: int
    package: EncodedPackage            # as forwarded to the buyer
    phi: PredicateCircuit
    rho: Optional[PredicateCircuit]
    rho_text: str
    phase: str = "Matched"
    reveal_tick: Optional[int] = None
    escrow: Optional[str] = None
    history: list = field(default_factory=lambda: ["Offered", "Requested", "Matched"])

    @property
    def contract(self) -> PredicateCircuit:
        return conjoin(self.phi, self.rho)

    def advance(self, phase: str) -> None:
        if phase not in _NEXT.get(self.phase, ()):
            raise PhaseError(f"trade {self.id}: cannot go from {self.phase} to {phase}")
        self.phase = phase
        self.history.append(phase)


def _check_commission(bps: int) -> None:
    if not 0 <= bps <= BPS:
        raise InvalidListing(f"commission {bps} bps outside [0, {BPS}]")


class Mediator:
    """Matchmaker holding offers and requests; never sees a key or plaintext.

    ``skip_phi_check`` and ``tamper`` switch on the two mediator deviations.
    """

    def __init__(self, account: str, ledger: Ledger, info: InfoFlow | None = None, *,
                 window: int = 3, deposit_bps: int = 1000,
                 skip_phi_check: bool = False, tamper: bool = False):
        self.account = account
        self.ledger = ledger
        self.info = info if info is not None else InfoFlow()
        self.window = window
        self.deposit_bps = deposit_bps
        self.skip_phi_check = skip_phi_check
        self.tamper = tamper
        self.offers: dict[str, SellerOffer] = {}
        self.requests: dict[str, BuyerRequest] = {}

    def register_offer(self, o: SellerOffer) -> str:
        if o.seller not in self.ledger.balances:
            raise UnknownAccount(f"no account {o.seller!r}")
        if o.ask <= 0:
            raise InvalidListing("ask must be positive")
        _check_commission(o.c_s)
        if not well_formed(o.package):
            raise MalformedPackage("package root does not match its leaves")
        contract = conjoin(o.phi, o.rho)
        if (o.package.circuit_digest != contract.digest
                or len(o.package.enc_chunks) != contract.num_inputs
                or len(o.package.enc_wires) != len(contract.gates)):
            raise MalformedPackage("package is not shaped for its advertised predicate")
        for i, leaf in enumerate(o.package.leaves):
            self.info.observe(self.account, "ciphertext", f"offer-leaf{i}", leaf)
        pkg = o.package
        a = Agreement.create(
            "offer", (o.seller, self.account),
            {"ask": o.ask, "c_s": o.c_s, "root": pkg.root.hex(),
             "clear": None if pkg.clear is None else [m.hex() for m in pkg.clear],
             "circuit_digest": pkg.circuit_digest.hex()},
            phi=o.phi, rho=o.rho, rho_text=o.rho_text, created_at=self.ledger.clock)
        oid = self.ledger.register_agreement(a)
        self.offers[oid] = o
        return oid

    def register_request(self, r: BuyerRequest) -> str:
        if r.buyer not in self.ledger.balances:
            raise UnknownAccount(f"no account {r.buyer!r}")
        if r.budget <= 0:
            raise InvalidListing("budget must be positive")
        _check_commission(r.c_b)
        self.info.observe(self.account, "terms", "request-phi", r.phi.serialize().encode())
        a = Agreement.create("request", (r.buyer, self.account), {"budget": r.budget, "c_b": r.c_b},
                             phi=r.phi, created_at=self.ledger.clock)
        rid = self.ledger.register_agreement(a)
        self.requests[rid] = r
        return rid

    def phi_check(self, o: SellerOffer, r: BuyerRequest) -> bool:
        """What can be checked without a key: shape, digests, clear columns."""
        contract = conjoin(r.phi, o.rho)
        if r.phi.digest != o.phi.digest or o.package.circuit_digest != contract.digest:
            return False
        if not well_formed(o.package):
            return False
        clear = o.package.clear
        if clear_evaluable(r.phi, *(clear or (None, None))):
            return eval_circuit(r.phi, o.package.enc_chunks)
        return True

    def match_and_forward(self, offer_id: str, request_id: str) -> MediatedTrade:
        o = self.offers[offer_id]
        r = self.requests[request_id]
        if r.budget < o.ask:
            raise BudgetBelowAsk(f"budget {r.budget} below ask {o.ask}")
        if r.phi.digest != o.phi.digest:
            raise PhiCheckFailed("request predicate differs from the one the package commits to")
        if not self.skip_phi_check and not self.phi_check(o, r):
            raise PhiCheckFailed("package fails the buyer predicate on visible data")
        p = min(o.ask, r.budget)
        pkg = o.package
        a = Agreement.create(
            "trade", (o.seller, self.account, r.buyer),
            {"price": p, "c_s": o.c_s, "c_b": r.c_b, "window": self.window,
             "min_deposit": default_deposit(p, self.deposit_bps),
             "offer": offer_id, "request": request_id, "root": pkg.root.hex(),
             "clear": None if pkg.clear is None else [m.hex() for m in pkg.clear]},
            phi=r.phi, rho=o.rho, rho_text=o.rho_text, created_at=self.ledger.clock)
        tid = self.ledger.register_agreement(a)
        forwarded = pkg
        if self.tamper:
            forwarded = corrupt_leaf(pkg, min(1, len(pkg.enc_chunks) - 1))
        return MediatedTrade(
            id=tid, seller=o.seller, mediator=self.account, buyer=r.buyer,
            offer_id=offer_id, request_id=request_id, price=p, c_s=o.c_s, c_b=r.c_b,
            window=self.window, min_deposit=a.terms["min_deposit"], package=forwarded,
            phi=r.phi, rho=o.rho, rho_text=o.rho_text)


def accept_and_pay(trade: MediatedTrade, ledger: Ledger, *, accept_rho: bool = True,
                   underpay: bool = False, info: InfoFlow | None = None) -> Escrow:
    """Buyer's step 4: check the forwarded package and rho, then escrow.

    A failed check aborts the trade before any money moves.
    """
    if trade.phase != "Matched":
        raise PhaseError(f"trade {trade.id} is {trade.phase}, not Matched")
    if info is not None:
        for i, leaf in enumerate(trade.package.leaves):
            info.observe(trade.buyer, "ciphertext", f"leaf{i}", leaf)
    t = ledger.trade(trade.id)
    on_chain = ledger.agreement(trade.id)
    seen = None if trade.rho is None else trade.rho.digest
    if seen != on_chain.rho_digest or not accept_rho:
        trade.advance("Aborted")
        raise RhoRejected(f"trade {trade.id}: regulation terms do not match the ledger")
    contract = ledger.contract_circuit(trade.id)
    if not verify_package(trade.package, t.root, contract.digest, contract, t.clear):
        trade.advance("Aborted")
        raise PackageRejected(f"trade {trade.id}: package does not match the committed root")
    clear = t.clear or (None, None)
    if clear_evaluable(on_chain.phi, *clear) and not eval_circuit(on_chain.phi, trade.package.enc_chunks):
        trade.advance("Aborted")
        raise PackageRejected(f"trade {trade.id}: visible columns fail the predicate")
    due = buyer_due(trade.price, trade.c_b)
    amount = due - max(1, due // 10) if underpay else due
    esc = ledger.freeze(trade.buyer, amount, trade.id)
    trade.escrow = esc.id
    trade.advance("Paid")
    return esc


def reveal_key(trade: MediatedTrade, key: bytes, deposit: int, ledger: Ledger) -> None:
    """Seller's step 5. The ledger refuses (NotPaid) unless step 4 completed."""
    ledger.reveal_key(trade.id, trade.seller, key, deposit)
    trade.reveal_tick = ledger.clock
    trade.advance("Revealed")


def complain(trade: MediatedTrade, proof, ledger: Ledger, cites: str = "phi") -> Verdict:
    verdict = ledger.submit_complaint(trade.id, trade.buyer, proof, cites=cites)
    trade.advance("Complained")
    if verdict.guilty is not None:
        trade.advance("Aborted")
    return verdict


def settle(trade: MediatedTrade, ledger: Ledger) -> Payouts:
    pay = ledger.settle(trade.id)
    trade.advance("Settled")
    return pay


# ---------------------------------------------------------------------------
# end-to-end driver

@dataclass
class MediatedTerms:
    blob: DataBlob
    phi: PredicateCircuit
    ask: int
    budget: int
    c_s: int = 0
    c_b: int = 0
    window: int = 3
    deposit_bps: int = 1000
    rho: Optional[PredicateCircuit] = None
    rho_text: str = ""
    clear: Optional[tuple[bytes, bytes]] = None
    # rho-violating data a SellerWrongRho seller ships instead of ``blob``
    bad_rho_blob: Optional[DataBlob] = None
    seller: str = "seller"
    mediator: str = "mediator"
    buyer: str = "buyer"


def run_mediated(seller: Strategy, mediator: Strategy, buyer: Strategy, terms: MediatedTerms,
                 ledger: Ledger, key: bytes | None = None, rng: random.Random | None = None) -> TradeOutcome:
    """Drive steps 1..7 to a terminal phase.

    Deltas are spendable-balance changes; ``info`` records every byte
    string each party was shown.
    """
    rng = rng or random.Random(0)
    key = key if key is not None else rng.randbytes(32)
    info = InfoFlow()
    s_id, m_id, b_id = terms.seller, terms.mediator, terms.buyer
    parties = (s_id, m_id, b_id)
    before = {p: ledger.balance(p) for p in parties}
    out = TradeOutcome(phase="Offered", deltas={}, info=info,
                       roles={"seller": seller.names(), "mediator": mediator.names(),
                              "buyer": buyer.names()})
    history = []

    def finish(phase, trade=None):
        out.phase = phase
        out.deltas = {p: ledger.balance(p) - before[p] for p in parties}
        out.notes = history if trade is None else list(trade.history)
        if trade is not None:
            t = ledger.trade(trade.id)
            out.trade_id = trade.id
            out.price = trade.price
            out.verdicts = list(t.verdicts)
            out.live_escrow = sum(ledger.escrows[e].amount for e in t.payment) + (
                ledger.escrows[t.deposit].amount if t.deposit else 0)
        return out

    if seller.does(Behavior.OFF_CHAIN) or buyer.does(Behavior.OFF_CHAIN):
        # the pair deals outside the system; nothing reaches the ledger
        history.append("OffChain")
        return finish("OffChain")

    med = Mediator(m_id, ledger, info, window=terms.window, deposit_bps=terms.deposit_bps,
                   skip_phi_check=mediator.does(Behavior.MEDIATOR_SKIP_PHI_CHECK),
                   tamper=mediator.does(Behavior.MEDIATOR_TAMPER_PACKAGE))

    # step 1
    contract = conjoin(terms.phi, terms.rho)
    blob = terms.blob
    if seller.does(Behavior.SELLER_WRONG_RHO) and terms.bad_rho_blob is not None:
        blob = terms.bad_rho_blob
    pkg = encode_package(blob, contract, key, terms.clear)
    if seller.does(Behavior.SELLER_JUNK_DATA):
        pkg = corrupt_leaf(pkg, min(1, len(pkg.enc_chunks) - 1))
    if seller.does(Behavior.ABORT):
        history.append("Aborted")
        return finish("Aborted")
    offer_id = med.register_offer(SellerOffer(s_id, pkg, terms.phi, terms.ask, terms.c_s,
                                              terms.rho, terms.rho_text))
    history.append("Offered")

    # step 2
    request_id = med.register_request(BuyerRequest(b_id, terms.phi, terms.budget, terms.c_b))
    history.append("Requested")
    if buyer.does(Behavior.ABORT):
        history.append("Aborted")
        return finish("Aborted")

    # step 3
    try:
        trade = med.match_and_forward(offer_id, request_id)
    except (BudgetBelowAsk, PhiCheckFailed) as exc:
        history += ["Aborted", type(exc).__name__]
        return finish("Aborted")

    # step 4
    try:
        accept_and_pay(trade, ledger, underpay=buyer.does(Behavior.BUYER_UNDERPAY), info=info)
    except (RhoRejected, PackageRejected):
        return finish("Aborted", trade)

    # step 5: an honest seller checks the escrow before revealing
    if not ledger.paid(trade.id):
        ledger.advance_time(trade.window + 1)
        ledger.refund(trade.id)
        trade.advance("Aborted")
        return finish("Aborted", trade)
    reveal_key(trade, key, trade.min_deposit, ledger)
    info.observe(b_id, "key", "key", key)
    out.buyer_has_key = True

    # step 6
    data, ok = decode(trade.package, key, trade.contract)
    info.observe(b_id, "plaintext", "data", b"".join(data.chunks))
    proof = generate_pom(trade.package, key, trade.contract)
    out.buyer_phi = eval_circuit(trade.phi, data.chunks)
    out.buyer_valid_data = proof is None
    if proof is not None:
        complain(trade, proof, ledger, cites=complaint_cites(trade.phi, data))
    elif buyer.does(Behavior.BUYER_FALSE_COMPLAINT):
        complain(trade, forge_pom(trade.package, trade.contract), ledger)
    if trade.phase == "Aborted":
        return finish("Aborted", trade)

    # step 7
    ledger.advance_time(trade.window + 1)
    settle(trade, ledger)
    return finish("Settled", trade)
