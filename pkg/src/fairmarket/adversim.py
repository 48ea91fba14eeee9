"""Scenario runner and fairness checks for scripted adversaries.

A scenario fixes accounts, data, terms, the strategy of each role and a
seed; running it twice gives byte-identical reports. The collusion suite
covers the honest baseline, each single malicious role and each pair.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .exchange import DataBlob, TwoPartyTerms, run_two_party
from .ledger import (
    BPS,
    INVALID_COMPLAINT,
    VALID_POM,
    Ledger,
    LedgerError,
    LedgerEvent,
    compute_payouts,
    default_deposit,
    dump_events,
)
from .mediated import MediatedTerms, run_mediated
from .predicate import (
    AllChunksContain,
    And,
    FieldMembership,
    HashEquals,
    NoChunkContains,
    Not,
    Or,
    PredicateCircuit,
    RowCountAtLeast,
    chain_digest,
    compile_spec,
    eval_circuit,
)
from .roles import Behavior, InfoFlow, Role, Strategy, TradeOutcome
from .tabular import MEDICAL_LAYOUT, medical_rows
from .tradegraph import GraphBuilder

__all__ = [
    "Behavior", "Role", "Strategy", "Scenario", "MalformedScenario", "TranscriptReport",
    "FairnessVerdict", "load_scenario", "parse_predicate", "run_scenario", "assert_fairness",
    "enumerate_collusion_suite", "mediator_blind", "trace_violations", "SUITE_CASES",
    "random_market",
]

ROLES = ("seller", "mediator", "buyer")


class MalformedScenario(ValueError):
    pass


# ---------------------------------------------------------------------------
# predicate specs in JSON

def parse_predicate(obj, data_digest: bytes | None = None):
    """JSON form of the predicate templates.

    ``{"rows_at_least": k}``, ``{"field_in": {"column": c, "allowed": [...]}}``,
    ``{"all_contain": text}``, ``{"none_contain": text}``,
    ``{"hash_equals": hex | "data"}``, ``{"and": [a, b]}``, ``{"or": [a, b]}``,
    ``{"not": a}``. ``"data"`` stands for the digest of the scenario's data.
    """
    if not isinstance(obj, dict) or len(obj) != 1:
        raise MalformedScenario(f"predicate must be a one-key object, got {obj!r}")
    (k, v), = obj.items()
    try:
        if k == "rows_at_least":
            return RowCountAtLeast(int(v))
        if k == "field_in":
            return FieldMembership(v["column"], frozenset(v["allowed"]))
        if k == "all_contain":
            return AllChunksContain(v.encode())
        if k == "none_contain":
            return NoChunkContains(v.encode())
        if k == "hash_equals":
            if v == "data":
                if data_digest is None:
                    raise MalformedScenario("no data to take a digest of")
                return HashEquals(data_digest)
            return HashEquals(bytes.fromhex(v))
        if k in ("and", "or"):
            a, b = v
            cls = And if k == "and" else Or
            return cls(parse_predicate(a, data_digest), parse_predicate(b, data_digest))
        if k == "not":
            return Not(parse_predicate(v, data_digest))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, MalformedScenario):
            raise
        raise MalformedScenario(f"bad {k!r} predicate: {exc}") from exc
    raise MalformedScenario(f"unknown predicate {k!r}")


# ---------------------------------------------------------------------------
# scenarios

@dataclass
class Scenario:
    """Everything a run depends on.

    ``mediator`` set to None gives a direct seller/buyer trade.
    ``data`` is ``{"kind": "medical", "rows": n, "capacity": m}`` or
    ``{"kind": "text", "text": "..."}``.
    """
    name: str = "scenario"
    seed: int = 0
    accounts: dict = field(default_factory=lambda: {"seller": 1000, "mediator": 0, "buyer": 1000})
    seller: str = "seller"
    mediator: Optional[str] = "mediator"
    buyer: str = "buyer"
    data: dict = field(default_factory=lambda: {"kind": "medical", "rows": 50, "capacity": 60})
    phi: dict = field(default_factory=lambda: {"and": [
        {"field_in": {"column": "class_of_disease",
                      "allowed": ["Diabetes", "Heart Ailments", "Psychological Issues"]}},
        {"rows_at_least": 40}]})
    rho: Optional[dict] = None
    rho_text: str = ""
    ask: int = 100
    budget: int = 100
    c_s: int = 500
    c_b: int = 1000
    window: int = 3
    deposit_bps: int = 1000
    strategies: dict = field(default_factory=lambda: {r: ["Honest"] for r in ROLES})

    FIELDS = ("name", "seed", "accounts", "seller", "mediator", "buyer", "data", "phi", "rho",
              "rho_text", "ask", "budget", "c_s", "c_b", "window", "deposit_bps", "strategies")

    def to_json(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.FIELDS}

    @classmethod
    def from_json(cls, obj) -> "Scenario":
        if not isinstance(obj, dict):
            raise MalformedScenario("scenario must be a JSON object")
        unknown = set(obj) - set(cls.FIELDS)
        if unknown:
            raise MalformedScenario(f"unknown scenario fields {sorted(unknown)}")
        s = cls(**copy.deepcopy(obj))
        s.validate()
        return s

    @property
    def mediated(self) -> bool:
        return self.mediator is not None

    def strategy(self, role: str) -> Strategy:
        names = self.strategies.get(role, ["Honest"])
        if isinstance(names, str):
            names = [names]
        return Strategy.of(role.capitalize(), *names)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise MalformedScenario(msg)

        need(isinstance(self.seed, int), "seed must be an integer")
        need(isinstance(self.accounts, dict) and all(
            isinstance(k, str) and isinstance(v, int) and v >= 0 for k, v in self.accounts.items()),
            "accounts must map names to non-negative integers")
        parties = [self.seller, self.buyer] + ([self.mediator] if self.mediated else [])
        for p in parties:
            need(p in self.accounts, f"party {p!r} has no account")
        need(len(set(parties)) == len(parties), "parties must be distinct")
        for k in ("ask", "budget", "window", "c_s", "c_b", "deposit_bps"):
            need(isinstance(getattr(self, k), int), f"{k} must be an integer")
        need(self.ask > 0 and self.budget > 0, "ask and budget must be positive")
        need(self.window >= 0, "window must be >= 0")
        need(0 <= self.c_s <= BPS and 0 <= self.c_b <= BPS, "commissions must be within [0, 10000] bps")
        need(0 <= self.deposit_bps <= BPS, "deposit_bps must be within [0, 10000]")
        need(isinstance(self.data, dict) and self.data.get("kind") in ("medical", "text"),
             "data.kind must be 'medical' or 'text'")
        need(isinstance(self.strategies, dict) and set(self.strategies) <= set(ROLES),
             "strategies must be keyed by seller/mediator/buyer")
        if not self.mediated:
            need(self.strategy("mediator").honest, "a direct trade has no mediator to deviate")
        try:
            for r in ROLES:
                self.strategy(r)
        except ValueError as exc:
            raise MalformedScenario(str(exc)) from exc
        parse_predicate(self.phi, b"\0" * 32)
        if self.rho is not None:
            parse_predicate(self.rho, b"\0" * 32)


def load_scenario(path, seed: int | None = None) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedScenario(f"cannot read scenario {path}: {exc}") from exc
    s = Scenario.from_json(obj)
    if seed is not None:
        s.seed = seed
    return s


# ---------------------------------------------------------------------------
# reports

@dataclass
class TranscriptReport:
    scenario: str
    seed: int
    mediated: bool
    outcome: TradeOutcome
    deltas: dict
    expected: dict           # to_seller / to_mediator at the executed price
    events: list             # LedgerEvent
    strategies: dict
    info: InfoFlow = field(repr=False, default_factory=InfoFlow)
    secrets: dict = field(repr=False, default_factory=dict)   # key + plaintext, never serialized

    @property
    def phase(self) -> str:
        return self.outcome.phase

    @property
    def verdicts(self) -> list:
        return self.outcome.verdicts

    def to_json(self) -> dict:
        o = self.outcome.to_json()
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "mediated": self.mediated,
            "phase": o["phase"],
            "trade_id": o["trade_id"],
            "price": o["price"],
            "deltas": dict(sorted(self.deltas.items())),
            "expected": self.expected,
            "verdicts": o["verdicts"],
            "buyer_has_key": o["buyer_has_key"],
            "buyer_valid_data": o["buyer_valid_data"],
            "buyer_phi": o["buyer_phi"],
            "live_escrow": o["live_escrow"],
            "steps": o["notes"],
            "strategies": self.strategies,
            "info_flow": o["info_flow"],
            "events": len(self.events),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def events_jsonl(self) -> str:
        return dump_events(self.events)


def _build_data(s: Scenario, rng: random.Random):
    d = s.data
    if d["kind"] == "medical":
        rows = medical_rows(rng, int(d.get("rows", 50)))
        chunks = MEDICAL_LAYOUT.pack(rows, int(d.get("capacity", len(rows) + 1)))
        return DataBlob(chunks), MEDICAL_LAYOUT, MEDICAL_LAYOUT.clear_masks()
    return DataBlob.from_bytes(str(d.get("text", "")).encode()), None, None


def _rho_breaker(blob: DataBlob, rho: PredicateCircuit | None, spec) -> DataBlob | None:
    """Data that still looks like ``blob`` but violates rho, if we can make one."""
    if rho is None or not isinstance(spec, NoChunkContains):
        return None
    chunks = list(blob.chunks)
    i = min(1, len(chunks) - 1)
    c = bytearray(chunks[i])
    n = len(spec.needle)
    at = 8 if 8 + n <= 24 else 0
    c[at:at + n] = spec.needle
    chunks[i] = bytes(c)
    bad = DataBlob(chunks)
    return None if eval_circuit(rho, bad.chunks) else bad


def _seller_key(seed: int) -> bytes:
    return hashlib.sha256(b"key:" + str(seed).encode()).digest()


def run_scenario(s: Scenario, builder: GraphBuilder | None = None) -> TranscriptReport:
    """Run one scenario on a fresh ledger. Same scenario, same report bytes."""
    s.validate()
    rng = random.Random(s.seed)
    try:
        blob, layout, clear = _build_data(s, rng)
    except (ValueError, TypeError) as exc:
        raise MalformedScenario(f"cannot build scenario data: {exc}") from exc
    digest = chain_digest(blob.chunks)
    n = len(blob.chunks)
    try:
        phi = compile_spec(parse_predicate(s.phi, digest), n, layout)
        rho_spec = None if s.rho is None else parse_predicate(s.rho, digest)
        rho = None if rho_spec is None else compile_spec(rho_spec, n, layout)
    except ValueError as exc:
        if isinstance(exc, MalformedScenario):
            raise
        raise MalformedScenario(f"predicate does not compile for this data: {exc}") from exc
    key = _seller_key(s.seed)

    ledger = Ledger()
    if builder is not None:
        ledger.subscribe(builder.apply)
    for acct in sorted(s.accounts):
        ledger.open_account(acct, s.accounts[acct])

    strat = {r: s.strategy(r) for r in ROLES}
    bad = _rho_breaker(blob, rho, rho_spec)
    wrong_rho = strat["seller"].does(Behavior.SELLER_WRONG_RHO)
    if s.mediated:
        terms = MediatedTerms(blob, phi, s.ask, s.budget, s.c_s, s.c_b, s.window, s.deposit_bps,
                              rho=rho, rho_text=s.rho_text, clear=clear, bad_rho_blob=bad,
                              seller=s.seller, mediator=s.mediator, buyer=s.buyer)
        out = run_mediated(strat["seller"], strat["mediator"], strat["buyer"], terms, ledger,
                           key=key, rng=rng)
        price = min(s.ask, s.budget)
        pay = compute_payouts(price, s.c_s, s.c_b)
    else:
        price = s.ask
        terms = TwoPartyTerms(price, bad if (wrong_rho and bad is not None) else blob, phi, key,
                              window=s.window, deposit=default_deposit(price, s.deposit_bps),
                              clear=clear, rho=rho, rho_text=s.rho_text)
        out = run_two_party(strat["seller"], strat["buyer"], terms, ledger, s.seller, s.buyer)
        pay = compute_payouts(price, 0, 0)

    deltas = {a: ledger.balance(a) - s.accounts[a] for a in s.accounts}
    return TranscriptReport(
        scenario=s.name, seed=s.seed, mediated=s.mediated, outcome=out, deltas=deltas,
        expected={"to_seller": pay.to_seller, "to_mediator": pay.to_mediator,
                  "buyer_due": pay.to_seller + pay.to_mediator},
        events=ledger.read_log(), strategies={r: strat[r].names() for r in ROLES},
        info=out.info or InfoFlow(),
        secrets={"key": key, "chunks": blob.chunks, "clear": clear,
                 "parties": {"seller": s.seller, "mediator": s.mediator, "buyer": s.buyer}},
    )


# ---------------------------------------------------------------------------
# fairness

@dataclass
class FairnessVerdict:
    passed: bool
    checks: dict          # name -> bool
    failures: list

    def __bool__(self) -> bool:
        return self.passed


def _secret_runs(chunks, clear, min_len: int = 8):
    """Contiguous encrypted-position plaintext runs worth searching for."""
    from .exchange import chunk_mask
    for i, c in enumerate(chunks):
        mask = chunk_mask(clear, i) or bytes(len(c))
        run = bytearray()
        for j, b in enumerate(c + b"\xff"):
            if j < len(c) and mask[j] == 0:
                run.append(b)
                continue
            if len(run) >= min_len and any(run):
                yield bytes(run)
            run = bytearray()


def mediator_blind(r: TranscriptReport) -> bool:
    """No key and no plaintext of encrypted bytes ever reached the mediator."""
    m = r.secrets.get("parties", {}).get("mediator")
    if m is None:
        return True
    if r.info.saw_secret(m) or r.info.contains(m, r.secrets["key"]):
        return False
    return not any(r.info.contains(m, run) for run in _secret_runs(r.secrets["chunks"], r.secrets["clear"]))


def _honest_roles(r: TranscriptReport) -> set:
    roles = {k for k, v in r.strategies.items() if v == ["Honest"]}
    if not r.mediated:
        roles.discard("mediator")
    return roles


def assert_fairness(r: TranscriptReport, honest_roles=None) -> FairnessVerdict:
    """Role fairness for each honest role, plus blindness and zero-sum."""
    honest = _honest_roles(r) if honest_roles is None else {
        (x.value if isinstance(x, Role) else str(x)).lower() for x in honest_roles}
    parties = r.secrets["parties"]
    o = r.outcome
    d = {role: r.deltas.get(acct, 0) for role, acct in parties.items() if acct is not None}
    checks = {}
    if "buyer" in honest:
        got_data = o.buyer_valid_data and bool(o.buyer_phi)
        checks["buyer"] = got_data != (d["buyer"] >= 0)
    if "seller" in honest:
        paid = o.phase == "Settled" and d["seller"] == r.expected["to_seller"]
        untouched = not o.buyer_has_key and d["seller"] == 0
        checks["seller"] = paid != untouched
    if "mediator" in honest and r.mediated:
        if o.phase == "Settled":
            checks["mediator"] = d["mediator"] == r.expected["to_mediator"]
        else:
            checks["mediator"] = d["mediator"] >= 0
    checks["mediator_blind"] = mediator_blind(r)
    checks["zero_sum"] = sum(r.deltas.values()) + o.live_escrow == 0
    checks["trace"] = not trace_violations(r.events)
    failures = sorted(k for k, v in checks.items() if not v)
    return FairnessVerdict(not failures, checks, failures)


# ---------------------------------------------------------------------------
# the collusion suite

# (suite id, strategies)
SUITE_CASES = (
    ("baseline", {}),
    ("malicious-seller", {"seller": ["SellerJunkData"]}),
    ("malicious-mediator", {"mediator": ["MediatorTamperPackage"]}),
    ("malicious-buyer", {"buyer": ["BuyerUnderpay"]}),
    ("seller+mediator", {"seller": ["SellerJunkData"], "mediator": ["MediatorSkipPhiCheck"]}),
    ("seller+buyer", {"seller": ["OffChain"], "buyer": ["OffChain"]}),
    ("mediator+buyer", {"mediator": ["MediatorSkipPhiCheck"], "buyer": ["BuyerFalseComplaint"]}),
)


def _derived_seed(seed: int, case: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}/{case}".encode()).digest()[:4], "big")


def enumerate_collusion_suite(base: Scenario) -> list[Scenario]:
    """Honest baseline plus the six adversary cases; only strategies and seed differ."""
    if not base.mediated:
        raise MalformedScenario("the collusion suite needs a mediated base scenario")
    if any(not base.strategy(r).honest for r in ROLES):
        raise MalformedScenario("the collusion suite starts from an all-honest scenario")
    out = []
    for case, strategies in SUITE_CASES:
        st = {r: list(strategies.get(r, ["Honest"])) for r in ROLES}
        out.append(replace(copy.deepcopy(base), name=f"{base.name}/{case}",
                           seed=_derived_seed(base.seed, case), strategies=st))
    return out


# ---------------------------------------------------------------------------
# step-order checking over a log

def trace_violations(events: list[LedgerEvent]) -> list[str]:
    """Every place a log breaks the protocol's step order; empty if none."""
    bad: list[str] = []
    agreements: dict[str, dict] = {}
    trades: dict[str, dict] = {}
    escrow_trade: dict[str, str] = {}

    def flag(ev, msg):
        bad.append(f"seq {ev.seq}: {msg}")

    for ev in events:
        p = ev.payload
        k = ev.kind
        if k == "AgreementRegistered":
            a = p["agreement"]
            agreements[p["id"]] = a
            if a["kind"] == "trade":
                terms = a["terms"]
                for ref in ("offer", "request"):
                    if ref in terms and terms[ref] not in agreements:
                        flag(ev, f"trade {p['id']} cites unknown {ref} {terms[ref]}")
                due = terms["price"] + terms["price"] * terms["c_b"] // BPS
                trades[p["id"]] = {"due": due, "paid": 0, "root": terms.get("root") is not None,
                                   "reveal": None, "window": terms["window"], "closed": None}
            continue
        tid = p.get("trade") or p.get("contract")
        if k == "Unfrozen":
            tid = escrow_trade.get(p["escrow"])
        t = trades.get(tid)
        if t is None:
            continue
        if t["closed"] and k != "Unfrozen":
            flag(ev, f"{k} after trade {tid} was {t['closed']}")
        if k == "Frozen":
            escrow_trade[p["escrow"]] = tid
            if p.get("role") == "payment":
                if t["reveal"] is not None:
                    flag(ev, f"payment into {tid} after key reveal")
                t["paid"] += p["amount"]
        elif k == "Unfrozen":
            if p.get("reason") == "refund":
                if t["reveal"] is not None:
                    flag(ev, f"refund of {tid} after key reveal")
                t["closed"] = t["closed"] or "refunded"
        elif k == "CommitmentPosted":
            if t["reveal"] is not None:
                flag(ev, f"commitment for {tid} after key reveal")
            t["root"] = True
        elif k == "KeyRevealed":
            if t["paid"] < t["due"]:
                flag(ev, f"key for {tid} revealed before payment ({t['paid']} of {t['due']})")
            if not t["root"]:
                flag(ev, f"key for {tid} revealed before any commitment")
            if t["reveal"] is not None:
                flag(ev, f"second key reveal for {tid}")
            t["reveal"] = ev.tick
        elif k == "ComplaintFiled":
            if t["reveal"] is None:
                flag(ev, f"complaint on {tid} before key reveal")
            elif ev.tick > t["reveal"] + t["window"]:
                flag(ev, f"complaint on {tid} after the window")
        elif k == "VerdictIssued":
            if p["basis"] == VALID_POM:
                t["closed"] = "upheld"
            elif p["basis"] != INVALID_COMPLAINT:
                flag(ev, f"unexpected verdict basis {p['basis']}")
        elif k == "Settled":
            if t["reveal"] is None:
                flag(ev, f"{tid} settled without a key")
            elif ev.tick <= t["reveal"] + t["window"]:
                flag(ev, f"{tid} settled inside the complaint window")
            t["closed"] = "settled"
    return bad


# ---------------------------------------------------------------------------
# many trades on one ledger

def random_market(rng: random.Random, trades: int = 5, builder: GraphBuilder | None = None) -> Ledger:
    """Run ``trades`` random trades (direct and mediated, some resales) on one ledger."""
    from .mediated import MediatedTerms as _MT

    ledger = Ledger()
    if builder is not None:
        ledger.subscribe(builder.apply)
    names = [f"p{i}" for i in range(rng.randrange(3, 7))]
    for nm in names:
        ledger.open_account(nm, rng.randrange(500, 5000))
    owned: list[tuple[str, DataBlob]] = []
    for _ in range(trades):
        if owned and rng.random() < 0.4:
            seller, blob = rng.choice(owned)
        else:
            seller = rng.choice(names)
            blob = DataBlob.from_bytes(rng.randbytes(rng.randrange(8, 200)))
        buyer = rng.choice([x for x in names if x != seller])
        phi = compile_spec(HashEquals(chain_digest(blob.chunks)), len(blob.chunks))
        price = rng.randrange(1, 200)
        key = rng.randbytes(32)
        behave = rng.choice(["Honest", "Honest", "Honest", "SellerJunkData", "BuyerUnderpay",
                             "BuyerFalseComplaint", "Abort"])
        s = Strategy.of("Seller", behave if behave in ("SellerJunkData", "Abort") else "Honest")
        b = Strategy.of("Buyer", behave if behave.startswith("Buyer") else "Honest")
        mediators = [x for x in names if x not in (seller, buyer)]
        try:
            if mediators and rng.random() < 0.5:
                m = rng.choice(mediators)
                terms = _MT(blob, phi, price, price + rng.randrange(0, 20), rng.randrange(0, 2000),
                            rng.randrange(0, 2000), rng.randrange(0, 4), seller=seller, mediator=m,
                            buyer=buyer)
                out = run_mediated(s, Strategy.of("Mediator", "Honest"), b, terms, ledger, key=key, rng=rng)
            else:
                terms = TwoPartyTerms(price, blob, phi, key, window=rng.randrange(0, 4))
                out = run_two_party(s, b, terms, ledger, seller, buyer)
        except (ValueError, LedgerError):
            # a party could not afford its side; the trade simply does not happen
            continue
        if out.phase == "Settled":
            owned.append((buyer, blob))
    return ledger
