"""In-process ledger acting as the trusted arbiter.

State is a pure fold over an append-only event log: every mutating
operation validates its preconditions, builds one or more events and
hands each to ``_apply``. ``Ledger.replay`` runs the same fold over a
recorded log, so a replayed ledger matches the live one field for field.

The logical clock is advanced explicitly and is not itself an event;
a replayed ledger's clock stops at the tick of the last event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from .commitments import hash
from .exchange import MisbehaviorProof, verify_pom
from .predicate import PredicateCircuit, conjoin

BPS = 10_000
MAX_ID_BYTES = 64

EVENT_KINDS = (
    "AccountOpened", "Transferred", "Frozen", "Unfrozen", "AgreementRegistered",
    "CommitmentPosted", "KeyRevealed", "ComplaintFiled", "VerdictIssued", "Settled",
)

VALID_POM = "ValidPoM"
INVALID_COMPLAINT = "InvalidComplaint"
NO_COMPLAINT = "NoComplaint"


class LedgerError(Exception):
    pass


class DuplicateAccount(LedgerError):
    pass


class UnknownAccount(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


class UnknownEscrow(LedgerError):
    pass


class AlreadyReleased(LedgerError):
    pass


class EscrowLocked(LedgerError):
    pass


class HashMismatch(LedgerError):
    pass


class InvalidTerms(LedgerError):
    pass


class NoSuchTrade(LedgerError):
    pass


class Unauthorized(LedgerError):
    pass


class NotPaid(LedgerError):
    pass


class DepositTooLow(LedgerError):
    pass


class KeyNotRevealed(LedgerError):
    pass


class AlreadyRevealed(LedgerError):
    pass


class DeadlineExpired(LedgerError):
    pass


class WindowStillOpen(LedgerError):
    pass


class AlreadySettled(LedgerError):
    pass


class ComplaintUpheld(LedgerError):
    pass


class TradeClosed(LedgerError):
    pass


class CorruptLog(LedgerError):
    pass


# ---------------------------------------------------------------------------
# value types

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    tick: int
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {"seq": self.seq, "tick": self.tick, "kind": self.kind, "payload": self.payload}

    def to_line(self) -> str:
        return _dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "LedgerEvent":
        if set(obj) != {"seq", "tick", "kind", "payload"}:
            raise CorruptLog(f"event has fields {sorted(obj)}")
        if obj["kind"] not in EVENT_KINDS:
            raise CorruptLog(f"unknown event kind {obj['kind']!r}")
        if not isinstance(obj["seq"], int) or not isinstance(obj["tick"], int) or not isinstance(obj["payload"], dict):
            raise CorruptLog("malformed event record")
        return cls(obj["seq"], obj["tick"], obj["kind"], obj["payload"])


def dump_events(events: Iterable[LedgerEvent]) -> str:
    return "".join(e.to_line() + "\n" for e in events)


def load_events(text: str) -> list[LedgerEvent]:
    """Parse JSON-lines; any unparseable line is a corrupt log."""
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"line {n}: {exc}") from exc
        if not isinstance(obj, dict):
            raise CorruptLog(f"line {n}: not an object")
        out.append(LedgerEvent.from_json(obj))
    return out


@dataclass(frozen=True)
class Escrow:
    id: str
    owner: str
    amount: int
    contract: str


@dataclass(frozen=True)
class Verdict:
    trade: str
    guilty: Optional[str]
    basis: str

    def to_json(self) -> dict:
        return {"trade": self.trade, "guilty": self.guilty, "basis": self.basis}


@dataclass(frozen=True)
class Payouts:
    to_mediator: int
    to_seller: int
    refund_to_buyer: int = 0
    deposit_disposition: str = "returned"

    def to_json(self) -> dict:
        return {"to_mediator": self.to_mediator, "to_seller": self.to_seller,
                "refund_to_buyer": self.refund_to_buyer, "deposit_disposition": self.deposit_disposition}


def commission(p: int, bps: int) -> int:
    return p * bps // BPS


def buyer_due(p: int, c_b: int) -> int:
    return p + commission(p, c_b)


def compute_payouts(p: int, c_s: int, c_b: int) -> Payouts:
    """Settlement split of the buyer's escrow ``p + floor(c_b p / 10^4)``."""
    if p < 0 or not (0 <= c_s <= BPS and 0 <= c_b <= BPS):
        raise InvalidTerms("price must be >= 0 and commissions within [0, 10000] bps")
    fee_s = commission(p, c_s)
    return Payouts(to_mediator=fee_s + commission(p, c_b), to_seller=p - fee_s)


def default_deposit(p: int, deposit_bps: int = 1000) -> int:
    return p * deposit_bps // BPS


@dataclass(frozen=True)
class Agreement:
    """Registered deal. ``kind`` is offer, request or trade.

    Trade parties are ``(seller, buyer)`` or ``(seller, mediator, buyer)``.
    """
    kind: str
    parties: tuple[str, ...]
    terms: dict
    phi: Optional[PredicateCircuit]
    phi_commitment: Optional[bytes]
    rho: Optional[PredicateCircuit]
    rho_digest: Optional[bytes]
    rho_text: str
    created_at: int
    terms_hash: bytes

    @staticmethod
    def _body(kind, parties, terms, phi, phi_commitment, rho, rho_digest, rho_text, created_at) -> dict:
        return {
            "kind": kind,
            "parties": list(parties),
            "terms": terms,
            "phi": None if phi is None else phi.to_json(),
            "phi_commitment": None if phi_commitment is None else phi_commitment.hex(),
            "rho": None if rho is None else rho.to_json(),
            "rho_digest": None if rho_digest is None else rho_digest.hex(),
            "rho_text": rho_text,
            "created_at": created_at,
        }

    @classmethod
    def create(cls, kind: str, parties, terms: dict, phi=None, rho=None, rho_text: str = "",
               created_at: int = 0) -> "Agreement":
        parties = tuple(parties)
        terms = json.loads(_dumps(terms))
        phi_c = None if phi is None else phi.digest
        rho_d = None if rho is None else rho.digest
        body = cls._body(kind, parties, terms, phi, phi_c, rho, rho_d, rho_text, created_at)
        return cls(kind, parties, terms, phi, phi_c, rho, rho_d, rho_text, created_at,
                   hash(_dumps(body).encode()))

    def body(self) -> dict:
        return self._body(self.kind, self.parties, self.terms, self.phi, self.phi_commitment,
                          self.rho, self.rho_digest, self.rho_text, self.created_at)

    def hash_ok(self) -> bool:
        if self.phi is not None and self.phi.digest != self.phi_commitment:
            return False
        if self.rho is not None and self.rho.digest != self.rho_digest:
            return False
        return hash(_dumps(self.body()).encode()) == self.terms_hash

    def to_json(self) -> dict:
        return {**self.body(), "terms_hash": self.terms_hash.hex()}

    @classmethod
    def from_json(cls, obj: dict) -> "Agreement":
        def opt(x, f):
            return None if x is None else f(x)
        return cls(
            kind=obj["kind"],
            parties=tuple(obj["parties"]),
            terms=obj["terms"],
            phi=opt(obj["phi"], PredicateCircuit.from_json),
            phi_commitment=opt(obj["phi_commitment"], bytes.fromhex),
            rho=opt(obj["rho"], PredicateCircuit.from_json),
            rho_digest=opt(obj["rho_digest"], bytes.fromhex),
            rho_text=obj["rho_text"],
            created_at=obj["created_at"],
            terms_hash=bytes.fromhex(obj["terms_hash"]),
        )

    # trade accessors
    @property
    def seller(self) -> str:
        return self.parties[0]

    @property
    def buyer(self) -> str:
        return self.parties[-1]

    @property
    def mediator(self) -> Optional[str]:
        return self.parties[1] if len(self.parties) == 3 else None


@dataclass
class _EscrowState:
    id: str
    owner: str
    amount: int
    contract: str
    released: bool = False


@dataclass
class TradeState:
    id: str
    seller: str
    buyer: str
    mediator: Optional[str]
    price: int
    c_s: int
    c_b: int
    window: int
    min_deposit: int
    root: Optional[bytes] = None
    clear: Optional[tuple[bytes, bytes]] = None
    payment: list = field(default_factory=list)   # buyer escrow ids
    deposit: Optional[str] = None
    key: Optional[bytes] = None
    reveal_tick: Optional[int] = None
    verdicts: list = field(default_factory=list)
    status: str = "open"                           # open | settled | upheld | refunded

    @property
    def due(self) -> int:
        return buyer_due(self.price, self.c_b)

    @property
    def deadline(self) -> Optional[int]:
        return None if self.reveal_tick is None else self.reveal_tick + self.window


def _clear_from_json(x):
    return None if x is None else (bytes.fromhex(x[0]), bytes.fromhex(x[1]))


class Ledger:
    """Single-writer ledger; not thread-safe.

    Callers are trusted to act only for the accounts they name.
    """

    def __init__(self):
        self.clock = 0
        self.balances: dict[str, int] = {}
        self.escrows: dict[str, _EscrowState] = {}
        self.agreements: dict[str, dict] = {}
        self.trades: dict[str, TradeState] = {}
        self.genesis_supply = 0
        self._log: list[LedgerEvent] = []
        self._observers: list[Callable[[LedgerEvent], None]] = []
        self._circuits: dict[bytes, PredicateCircuit] = {}

    # -- log plumbing -------------------------------------------------------

    def subscribe(self, fn: Callable[[LedgerEvent], None]) -> None:
        self._observers.append(fn)

    def _emit(self, kind: str, payload: dict) -> LedgerEvent:
        ev = LedgerEvent(len(self._log), self.clock, kind, json.loads(_dumps(payload)))
        self._apply(ev)
        self._log.append(ev)
        for fn in self._observers:
            fn(ev)
        return ev

    def read_log(self, from_seq: int = 0) -> list[LedgerEvent]:
        if from_seq < 0:
            raise ValueError("from_seq must be >= 0")
        return list(self._log[from_seq:])

    def __iter__(self) -> Iterator[LedgerEvent]:
        return iter(list(self._log))

    @classmethod
    def replay(cls, events: Iterable[LedgerEvent]) -> "Ledger":
        led = cls()
        for n, ev in enumerate(events):
            if ev.seq != n:
                raise CorruptLog(f"expected seq {n}, found {ev.seq}")
            if ev.tick < led.clock:
                raise CorruptLog(f"tick goes backwards at seq {n}")
            led.clock = ev.tick
            try:
                led._apply(ev)
            except CorruptLog:
                raise
            except (KeyError, ValueError, TypeError, LedgerError, AttributeError) as exc:
                raise CorruptLog(f"event {n} ({ev.kind}) does not apply: {exc!r}") from exc
            led._log.append(ev)
        return led

    def snapshot(self) -> dict:
        """Comparable view of the full state (the free-running clock excluded)."""
        return {
            "balances": dict(sorted(self.balances.items())),
            "escrows": {k: vars(v).copy() for k, v in sorted(self.escrows.items())},
            "agreements": dict(sorted(self.agreements.items())),
            "trades": {k: {**vars(v), "payment": list(v.payment), "verdicts": list(v.verdicts)}
                       for k, v in sorted(self.trades.items())},
            "genesis_supply": self.genesis_supply,
            "events": len(self._log),
        }

    # -- the fold -----------------------------------------------------------

    def _apply(self, ev: LedgerEvent) -> None:
        p = ev.payload
        k = ev.kind
        if k == "AccountOpened":
            if p["account"] in self.balances:
                raise CorruptLog(f"account {p['account']} opened twice")
            self.balances[p["account"]] = p["initial"]
            self.genesis_supply += p["initial"]
        elif k == "Transferred":
            self._debit(p["from"], p["amount"])
            self.balances[p["to"]] += p["amount"]
        elif k == "Frozen":
            self._debit(p["owner"], p["amount"])
            self.escrows[p["escrow"]] = _EscrowState(p["escrow"], p["owner"], p["amount"], p["contract"])
            t = self.trades.get(p["contract"])
            if p.get("role") == "payment":
                t.payment.append(p["escrow"])
            elif p.get("role") == "deposit":
                t.deposit = p["escrow"]
        elif k == "Unfrozen":
            self._release(p["escrow"], p["to"], p["escrow_amount"])
            t = self.trades.get(self.escrows[p["escrow"]].contract)
            if t is not None:
                if p["escrow"] in t.payment:
                    t.payment.remove(p["escrow"])
                if t.deposit == p["escrow"]:
                    t.deposit = None
                if p.get("reason") == "refund" and t.status == "open":
                    t.status = "refunded"
        elif k == "AgreementRegistered":
            a = Agreement.from_json(p["agreement"])
            if not a.hash_ok():
                raise CorruptLog(f"agreement {p['id']} hash does not verify")
            self.agreements[p["id"]] = p["agreement"]
            for c in (a.phi, a.rho):
                if c is not None:
                    self._circuits[c.digest] = c
            if a.kind == "trade":
                t = a.terms
                self.trades[p["id"]] = TradeState(
                    id=p["id"], seller=a.seller, buyer=a.buyer, mediator=a.mediator,
                    price=t["price"], c_s=t["c_s"], c_b=t["c_b"], window=t["window"],
                    min_deposit=t["min_deposit"],
                    root=None if t.get("root") is None else bytes.fromhex(t["root"]),
                    clear=_clear_from_json(t.get("clear")),
                )
        elif k == "CommitmentPosted":
            t = self.trades[p["trade"]]
            t.root = bytes.fromhex(p["root"])
            t.clear = _clear_from_json(p["clear"])
        elif k == "KeyRevealed":
            t = self.trades[p["trade"]]
            t.key = bytes.fromhex(p["key"])
            t.reveal_tick = ev.tick
        elif k == "ComplaintFiled":
            if p["trade"] not in self.trades:
                raise CorruptLog(f"complaint on unknown trade {p['trade']}")
        elif k == "VerdictIssued":
            t = self.trades[p["trade"]]
            t.verdicts.append({"guilty": p["guilty"], "basis": p["basis"]})
            if p["basis"] == VALID_POM:
                for eid in list(t.payment) + ([t.deposit] if t.deposit else []):
                    e = self.escrows[eid]
                    self._release(eid, t.buyer, e.amount)
                t.payment.clear()
                t.deposit = None
                t.status = "upheld"
        elif k == "Settled":
            t = self.trades[p["trade"]]
            total = sum(self.escrows[e].amount for e in t.payment)
            if total != p["to_mediator"] + p["to_seller"]:
                raise CorruptLog(f"settlement of {t.id} does not drain the escrow")
            for eid in t.payment:
                self._release(eid, None, self.escrows[eid].amount)
            if p["to_mediator"]:
                self.balances[t.mediator] += p["to_mediator"]
            self.balances[t.seller] += p["to_seller"]
            if t.deposit:
                self._release(t.deposit, t.seller, self.escrows[t.deposit].amount)
            t.payment.clear()
            t.deposit = None
            t.status = "settled"
        else:
            raise CorruptLog(f"unknown event kind {k!r}")

    def _debit(self, acct: str, amount: int) -> None:
        if self.balances[acct] < amount or amount < 0:
            raise CorruptLog(f"{acct} cannot pay {amount}")
        self.balances[acct] -= amount

    def _release(self, eid: str, to: Optional[str], amount: int) -> None:
        e = self.escrows[eid]
        if e.released or e.amount != amount:
            raise CorruptLog(f"bad release of escrow {eid}")
        e.released = True
        if to is not None:
            self.balances[to] += amount

    # -- queries ------------------------------------------------------------

    def balance(self, acct: str) -> int:
        self._need_account(acct)
        return self.balances[acct]

    spendable = balance

    def escrowed(self) -> int:
        return sum(e.amount for e in self.escrows.values() if not e.released)

    def total_supply(self) -> int:
        return sum(self.balances.values()) + self.escrowed()

    def escrow(self, eid: str) -> Escrow:
        e = self._need_escrow(eid)
        return Escrow(e.id, e.owner, e.amount, e.contract)

    def agreement(self, aid: str) -> Agreement:
        if aid not in self.agreements:
            raise NoSuchTrade(f"no agreement {aid}")
        return Agreement.from_json(self.agreements[aid])

    def trade(self, tid: str) -> TradeState:
        if tid not in self.trades:
            raise NoSuchTrade(f"no trade {tid}")
        return self.trades[tid]

    def paid(self, tid: str) -> bool:
        t = self.trade(tid)
        return bool(t.payment) and sum(self.escrows[e].amount for e in t.payment) == t.due

    def circuit(self, digest: bytes) -> PredicateCircuit:
        return self._circuits[digest]

    def _need_account(self, acct: str) -> None:
        if acct not in self.balances:
            raise UnknownAccount(f"no account {acct!r}")

    def _need_escrow(self, eid) -> _EscrowState:
        eid = eid.id if isinstance(eid, Escrow) else eid
        if eid not in self.escrows:
            raise UnknownEscrow(f"no escrow {eid!r}")
        return self.escrows[eid]

    # -- accounts and funds -------------------------------------------------

    def open_account(self, acct: str, initial: int = 0) -> str:
        if not isinstance(acct, str) or not acct or len(acct.encode()) > MAX_ID_BYTES:
            raise ValueError("account id must be a nonempty string of at most 64 bytes")
        if initial < 0:
            raise ValueError("initial balance must be >= 0")
        if acct in self.balances:
            raise DuplicateAccount(f"account {acct!r} already open")
        self._emit("AccountOpened", {"account": acct, "initial": initial})
        return acct

    def transfer(self, src: str, dst: str, amount: int) -> None:
        self._need_account(src)
        self._need_account(dst)
        if amount < 0:
            raise ValueError("amount must be >= 0")
        if self.balances[src] < amount:
            raise InsufficientFunds(f"{src} has {self.balances[src]}, needs {amount}")
        self._emit("Transferred", {"from": src, "to": dst, "amount": amount})

    def freeze(self, owner: str, amount: int, contract: str) -> Escrow:
        """Move funds into contract custody.

        Escrows the buyer of an open trade places before the key is
        revealed count as that trade's payment.
        """
        self._need_account(owner)
        if amount <= 0:
            raise ValueError("escrow amount must be positive")
        if self.balances[owner] < amount:
            raise InsufficientFunds(f"{owner} has {self.balances[owner]}, needs {amount}")
        role = None
        t = self.trades.get(contract)
        if t is not None and owner == t.buyer and t.status == "open" and t.key is None:
            role = "payment"
        return self._freeze(owner, amount, contract, role)

    def _freeze(self, owner, amount, contract, role) -> Escrow:
        eid = f"E{len(self.escrows):06d}"
        payload = {"escrow": eid, "owner": owner, "amount": amount, "contract": contract}
        if role:
            payload["role"] = role
        self._emit("Frozen", payload)
        return self.escrow(eid)

    def unfreeze(self, escrow, to: str) -> None:
        e = self._need_escrow(escrow)
        self._need_account(to)
        if e.released:
            raise AlreadyReleased(f"escrow {e.id} already released")
        t = self.trades.get(e.contract)
        if t is not None and (e.id in t.payment or e.id == t.deposit) and t.key is not None:
            raise EscrowLocked(f"escrow {e.id} is bound to trade {t.id} until it resolves")
        self._emit("Unfrozen", {"escrow": e.id, "to": to, "escrow_amount": e.amount})

    def refund(self, tid: str) -> list[str]:
        """Return every live escrow of a trade whose key is still secret."""
        t = self.trade(tid)
        if t.key is not None:
            raise EscrowLocked(f"trade {tid} is past key reveal")
        released = []
        for eid in list(t.payment):
            e = self.escrows[eid]
            self._emit("Unfrozen", {"escrow": eid, "to": e.owner, "escrow_amount": e.amount,
                                    "reason": "refund"})
            released.append(eid)
        return released

    def advance_time(self, dt: int) -> int:
        if dt < 0:
            raise ValueError("time only moves forward")
        self.clock += dt
        return self.clock

    # -- agreements ---------------------------------------------------------

    def register_agreement(self, a: Agreement) -> str:
        for party in a.parties:
            self._need_account(party)
        if not a.hash_ok():
            raise HashMismatch("terms_hash does not bind the agreement fields")
        if a.kind == "trade":
            self._check_trade_terms(a)
        elif a.kind not in ("offer", "request"):
            raise InvalidTerms(f"unknown agreement kind {a.kind!r}")
        aid = f"A{len(self.agreements):06d}"
        self._emit("AgreementRegistered", {"id": aid, "agreement": a.to_json()})
        return aid

    def _check_trade_terms(self, a: Agreement) -> None:
        t = a.terms
        if len(a.parties) not in (2, 3) or len(set(a.parties)) != len(a.parties):
            raise InvalidTerms("trade needs distinct (seller, buyer) or (seller, mediator, buyer)")
        for name in ("price", "c_s", "c_b", "window", "min_deposit"):
            if not isinstance(t.get(name), int) or t[name] < 0:
                raise InvalidTerms(f"term {name!r} must be a non-negative integer")
        if t["price"] <= 0:
            raise InvalidTerms("price must be positive")
        if t["c_s"] > BPS or t["c_b"] > BPS:
            raise InvalidTerms("commission above 10000 bps")
        if a.mediator is None and (t["c_s"] or t["c_b"]):
            raise InvalidTerms("a trade without mediator carries no commission")
        if a.phi is None:
            raise InvalidTerms("trade agreement must carry the predicate circuit")
        if "offer" in t or "request" in t:
            self._check_against_listing(a)

    def _check_against_listing(self, a: Agreement) -> None:
        t = a.terms
        try:
            offer = self.agreement(t["offer"])
            req = self.agreement(t["request"])
        except (KeyError, NoSuchTrade) as exc:
            raise InvalidTerms(f"trade references a missing listing: {exc}") from None
        if offer.kind != "offer" or req.kind != "request":
            raise InvalidTerms("listing kinds do not match")
        if offer.parties != (a.seller, a.mediator) or req.parties != (a.buyer, a.mediator):
            raise InvalidTerms("listing parties do not match the trade")
        ask, budget = offer.terms["ask"], req.terms["budget"]
        if budget < ask or t["price"] != min(ask, budget):
            raise InvalidTerms("executed price must be min(ask, budget) with budget >= ask")
        if t["c_s"] != offer.terms["c_s"] or t["c_b"] != req.terms["c_b"]:
            raise InvalidTerms("commissions differ from the listings")
        if t.get("root") != offer.terms["root"] or t.get("clear") != offer.terms.get("clear"):
            raise InvalidTerms("committed root differs from the seller's offer")
        if a.phi_commitment != req.phi_commitment or a.phi_commitment != offer.phi_commitment:
            raise InvalidTerms("predicate differs from the buyer's request")
        if a.rho_digest != offer.rho_digest:
            raise InvalidTerms("regulation predicate differs from the seller's offer")

    # -- trade lifecycle ----------------------------------------------------

    def post_commitment(self, tid: str, seller: str, root: bytes, clear=None) -> None:
        t = self.trade(tid)
        if seller != t.seller:
            raise Unauthorized("only the seller commits to the package")
        if t.status != "open" or t.key is not None:
            raise TradeClosed(f"trade {tid} no longer accepts a commitment")
        self._emit("CommitmentPosted", {
            "trade": tid, "root": root.hex(),
            "clear": None if clear is None else [m.hex() for m in clear],
        })

    def reveal_key(self, tid: str, seller: str, key: bytes, deposit: int) -> Escrow:
        """Seller posts the decryption key and a deposit; opens the window."""
        t = self.trade(tid)
        if seller != t.seller:
            raise Unauthorized("only the seller reveals the key")
        if t.status != "open":
            raise TradeClosed(f"trade {tid} is {t.status}")
        if t.key is not None:
            raise AlreadyRevealed(f"key for {tid} already revealed")
        if t.root is None:
            raise InvalidTerms(f"trade {tid} has no committed package")
        if not self.paid(tid):
            raise NotPaid(f"buyer has not paid {t.due} into trade {tid}")
        if deposit < t.min_deposit:
            raise DepositTooLow(f"deposit {deposit} below {t.min_deposit}")
        if len(key) != 32:
            raise ValueError("key must be 32 bytes")
        if self.balances[seller] < deposit:
            raise InsufficientFunds(f"{seller} cannot post deposit {deposit}")
        esc = self._freeze(seller, deposit, tid, "deposit") if deposit else None
        self._emit("KeyRevealed", {"trade": tid, "key": key.hex(),
                                   "deposit": None if esc is None else esc.id})
        return esc

    def contract_circuit(self, tid: str) -> PredicateCircuit:
        """The circuit a trade's package commits to: phi, and rho when present."""
        a = self.agreement(tid)
        return conjoin(a.phi, a.rho)

    def submit_complaint(self, tid: str, complainant: str, proof: MisbehaviorProof,
                         cites: str = "phi") -> Verdict:
        t = self.trade(tid)
        if complainant != t.buyer:
            raise Unauthorized("only the buyer may complain")
        if t.status == "settled":
            raise AlreadySettled(f"trade {tid} already settled")
        if t.status != "open":
            raise TradeClosed(f"trade {tid} is {t.status}")
        if t.key is None:
            raise KeyNotRevealed(f"no key revealed for {tid}")
        if self.clock > t.deadline:
            raise DeadlineExpired(f"complaint window closed at tick {t.deadline}")
        if cites not in ("phi", "rho"):
            raise ValueError("a complaint cites phi or rho")
        self._emit("ComplaintFiled", {"trade": tid, "complainant": complainant, "cites": cites,
                                      "proof": proof.to_json()})
        try:
            valid = verify_pom(t.root, self.contract_circuit(tid), t.key, proof, t.clear)
        except (ValueError, TypeError, IndexError):
            valid = False
        if valid:
            verdict = Verdict(tid, t.seller, VALID_POM)
            refund = sum(self.escrows[e].amount for e in t.payment)
            forfeit = self.escrows[t.deposit].amount if t.deposit else 0
        else:
            verdict = Verdict(tid, None, INVALID_COMPLAINT)
            refund = forfeit = 0
        self._emit("VerdictIssued", {**verdict.to_json(), "refund": refund, "forfeit": forfeit})
        return verdict

    def settle(self, tid: str) -> Payouts:
        t = self.trade(tid)
        if t.status == "settled":
            raise AlreadySettled(f"trade {tid} already settled")
        if t.status == "upheld":
            raise ComplaintUpheld(f"complaint against {tid} was upheld")
        if t.status != "open":
            raise TradeClosed(f"trade {tid} is {t.status}")
        if t.key is None:
            raise KeyNotRevealed(f"no key revealed for {tid}")
        if self.clock <= t.deadline:
            raise WindowStillOpen(f"complaints accepted until tick {t.deadline}")
        pay = compute_payouts(t.price, t.c_s, t.c_b)
        deposit = self.escrows[t.deposit].amount if t.deposit else 0
        self._emit("Settled", {
            "trade": tid, "seller": t.seller, "buyer": t.buyer, "mediator": t.mediator,
            "price": t.price, "to_mediator": pay.to_mediator, "to_seller": pay.to_seller,
            "deposit_returned": deposit, "root": t.root.hex(),
        })
        return pay
