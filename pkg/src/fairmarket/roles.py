"""Party strategies, the information-flow record and trade outcomes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .commitments import hash


class Role(str, enum.Enum):
    SELLER = "Seller"
    MEDIATOR = "Mediator"
    BUYER = "Buyer"


class Behavior(str, enum.Enum):
    HONEST = "Honest"
    SELLER_JUNK_DATA = "SellerJunkData"
    SELLER_WRONG_RHO = "SellerWrongRho"
    MEDIATOR_SKIP_PHI_CHECK = "MediatorSkipPhiCheck"
    MEDIATOR_TAMPER_PACKAGE = "MediatorTamperPackage"
    BUYER_UNDERPAY = "BuyerUnderpay"
    BUYER_FALSE_COMPLAINT = "BuyerFalseComplaint"
    # walk away before funds move
    ABORT = "Abort"
    # seller and buyer settle outside the system
    OFF_CHAIN = "OffChain"


_ALLOWED = {
    Role.SELLER: {Behavior.HONEST, Behavior.SELLER_JUNK_DATA, Behavior.SELLER_WRONG_RHO,
                  Behavior.ABORT, Behavior.OFF_CHAIN},
    Role.MEDIATOR: {Behavior.HONEST, Behavior.MEDIATOR_SKIP_PHI_CHECK, Behavior.MEDIATOR_TAMPER_PACKAGE},
    Role.BUYER: {Behavior.HONEST, Behavior.BUYER_UNDERPAY, Behavior.BUYER_FALSE_COMPLAINT,
                 Behavior.ABORT, Behavior.OFF_CHAIN},
}


@dataclass(frozen=True)
class Strategy:
    """Fixed deviation script for one role; several behaviors compose."""
    role: Role
    behaviors: frozenset = frozenset({Behavior.HONEST})

    def __post_init__(self):
        role = Role(self.role)
        bs = frozenset(Behavior(b) for b in self.behaviors) or frozenset({Behavior.HONEST})
        if len(bs) > 1:
            bs = bs - {Behavior.HONEST}
        bad = bs - _ALLOWED[role]
        if bad:
            raise ValueError(f"{role.value} cannot play {sorted(b.value for b in bad)}")
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "behaviors", bs)

    @classmethod
    def of(cls, role, *behaviors) -> "Strategy":
        return cls(Role(role), frozenset(behaviors))

    def does(self, b: Behavior) -> bool:
        return b in self.behaviors

    @property
    def honest(self) -> bool:
        return self.behaviors == {Behavior.HONEST}

    def names(self) -> list[str]:
        return sorted(b.value for b in self.behaviors)


@dataclass
class Observation:
    party: str
    kind: str       # ciphertext | clear_bytes | key | plaintext | terms
    label: str
    digest: str     # hex SHA-256 of the observed bytes

    def to_json(self) -> dict:
        return {"party": self.party, "kind": self.kind, "label": self.label, "digest": self.digest}


class InfoFlow:
    """Who was shown which bytes during a run.

    Raw payloads are kept in memory so byte-level leak checks can run;
    only digests go into reports.
    """

    SECRET_KINDS = ("key", "plaintext")

    def __init__(self):
        self.observations: list[Observation] = []
        self._raw: dict[str, list[bytes]] = {}

    def observe(self, party: str, kind: str, label: str, data: bytes) -> None:
        self.observations.append(Observation(party, kind, label, hash(data).hex()))
        self._raw.setdefault(party, []).append(bytes(data))

    def raw(self, party: str) -> list[bytes]:
        return list(self._raw.get(party, []))

    def kinds(self, party: str) -> set[str]:
        return {o.kind for o in self.observations if o.party == party}

    def saw_secret(self, party: str) -> bool:
        return bool(self.kinds(party) & set(self.SECRET_KINDS))

    def contains(self, party: str, needle: bytes) -> bool:
        return any(needle in blob for blob in self._raw.get(party, []))

    def to_json(self) -> list:
        return [o.to_json() for o in self.observations]


@dataclass
class TradeOutcome:
    phase: str
    deltas: dict[str, int]
    trade_id: Optional[str] = None
    price: int = 0
    verdicts: list = field(default_factory=list)
    buyer_has_key: bool = False
    buyer_valid_data: bool = False     # decrypted data consistent with commitment and predicate
    buyer_phi: Optional[bool] = None   # predicate value on what the buyer decoded
    live_escrow: int = 0
    notes: list = field(default_factory=list)
    info: Optional[InfoFlow] = None
    roles: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "phase": self.phase,
            "trade_id": self.trade_id,
            "price": self.price,
            "deltas": dict(sorted(self.deltas.items())),
            "verdicts": self.verdicts,
            "buyer_has_key": self.buyer_has_key,
            "buyer_valid_data": self.buyer_valid_data,
            "buyer_phi": self.buyer_phi,
            "live_escrow": self.live_escrow,
            "notes": self.notes,
            "roles": self.roles,
            "info_flow": [] if self.info is None else self.info.to_json(),
        }
