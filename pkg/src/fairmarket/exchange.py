"""Two-party fair exchange: encoded packages and proofs of misbehavior.

The seller encrypts every data chunk and every wire of the evaluation
transcript under one key and commits to all ciphertexts with a single
Merkle root. After the key is revealed, a buyer who finds the output wire
false, or any gate inconsistent with its operands, can point at the
offending leaves; the arbiter checks a handful of Merkle paths and one
gate without ever seeing the rest of the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .commitments import (
    WORD_SIZE,
    MerkleProof,
    decrypt_chunk,
    encrypt_chunk,
    merkle_levels,
    merkle_root,
    merkle_verify,
    prove_from_levels,
)
from .predicate import (
    TRUE,
    ArityMismatch,
    PredicateCircuit,
    eval_circuit,
    eval_transcript,
    gate_consistent,
)

BAD_OUTPUT = "BadOutput"
BAD_GATE = "BadGate"


class MalformedPackage(ValueError):
    pass


@dataclass(frozen=True)
class DataBlob:
    chunks: tuple[bytes, ...]

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(self.chunks))
        if not self.chunks:
            raise ValueError("a data blob needs at least one chunk")
        if any(len(c) != WORD_SIZE for c in self.chunks):
            raise ValueError("every chunk must be a 32-byte word")

    @classmethod
    def from_bytes(cls, data: bytes) -> "DataBlob":
        """Split raw bytes into zero-padded 32-byte chunks."""
        if not data:
            data = bytes(WORD_SIZE)
        pad = -len(data) % WORD_SIZE
        data = data + bytes(pad)
        return cls(tuple(data[i:i + WORD_SIZE] for i in range(0, len(data), WORD_SIZE)))


# (header mask, row mask) for selectively encrypted tables
ClearMasks = tuple[bytes, bytes]


def chunk_mask(clear: ClearMasks | None, index: int) -> bytes | None:
    if clear is None:
        return None
    return clear[0] if index == 0 else clear[1]


@dataclass(frozen=True)
class EncodedPackage:
    enc_chunks: tuple[bytes, ...]
    enc_wires: tuple[bytes, ...]
    circuit_digest: bytes
    root: bytes
    clear: ClearMasks | None = None

    @property
    def leaves(self) -> list[bytes]:
        return list(self.enc_chunks) + list(self.enc_wires)

    def to_json(self) -> dict:
        return {
            "num_chunks": len(self.enc_chunks),
            "leaves": [x.hex() for x in self.leaves],
            "circuit_digest": self.circuit_digest.hex(),
            "root": self.root.hex(),
            "clear": None if self.clear is None else [m.hex() for m in self.clear],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "EncodedPackage":
        try:
            leaves = [bytes.fromhex(x) for x in obj["leaves"]]
            n = int(obj["num_chunks"])
            clear = obj.get("clear")
            return cls(
                enc_chunks=tuple(leaves[:n]),
                enc_wires=tuple(leaves[n:]),
                circuit_digest=bytes.fromhex(obj["circuit_digest"]),
                root=bytes.fromhex(obj["root"]),
                clear=None if clear is None else (bytes.fromhex(clear[0]), bytes.fromhex(clear[1])),
            )
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise MalformedPackage(f"cannot parse package: {exc}") from exc


def encode_package(d: DataBlob, c: PredicateCircuit, key: bytes,
                   clear: ClearMasks | None = None) -> EncodedPackage:
    if len(d.chunks) != c.num_inputs:
        raise ArityMismatch(f"circuit takes {c.num_inputs} chunks, blob has {len(d.chunks)}")
    n = c.num_inputs
    wires = eval_transcript(c, d.chunks)
    enc_chunks = tuple(encrypt_chunk(key, i, x, chunk_mask(clear, i)) for i, x in enumerate(d.chunks))
    enc_wires = tuple(encrypt_chunk(key, n + g, w) for g, w in enumerate(wires))
    root = merkle_root(list(enc_chunks) + list(enc_wires))
    return EncodedPackage(enc_chunks, enc_wires, c.digest, root, clear)


def well_formed(pkg: EncodedPackage) -> bool:
    leaves = pkg.leaves
    if not leaves or any(len(x) != WORD_SIZE for x in leaves):
        return False
    if len(pkg.circuit_digest) != 32 or len(pkg.root) != 32:
        return False
    if pkg.clear is not None and any(len(m) != WORD_SIZE for m in pkg.clear):
        return False
    return merkle_root(leaves) == pkg.root


def verify_package(pkg: EncodedPackage, agreed_root: bytes, agreed_circuit_digest: bytes,
                   c: PredicateCircuit | None = None, agreed_clear: ClearMasks | None = None) -> bool:
    """Buyer's pre-key check: commitment and circuit binding, no decryption.

    When the circuit is supplied the leaf counts are checked against it.
    """
    if pkg.root != agreed_root or pkg.circuit_digest != agreed_circuit_digest:
        return False
    if pkg.clear != agreed_clear:
        return False
    if c is not None:
        if c.digest != agreed_circuit_digest:
            return False
        if len(pkg.enc_chunks) != c.num_inputs or len(pkg.enc_wires) != len(c.gates):
            return False
    return well_formed(pkg)


def decrypt_leaves(pkg: EncodedPackage, key: bytes) -> tuple[list[bytes], list[bytes]]:
    n = len(pkg.enc_chunks)
    chunks = [decrypt_chunk(key, i, x, chunk_mask(pkg.clear, i)) for i, x in enumerate(pkg.enc_chunks)]
    wires = [decrypt_chunk(key, n + g, x) for g, x in enumerate(pkg.enc_wires)]
    return chunks, wires


def decode(pkg: EncodedPackage, key: bytes, c: PredicateCircuit) -> tuple[DataBlob, bool]:
    chunks, _ = decrypt_leaves(pkg, key)
    return DataBlob(tuple(chunks)), eval_circuit(c, chunks)


@dataclass(frozen=True)
class ProofLeaf:
    index: int
    ciphertext: bytes
    path: MerkleProof

    def to_json(self) -> dict:
        return {"index": self.index, "ciphertext": self.ciphertext.hex(), "path": self.path.to_json()}

    @classmethod
    def from_json(cls, obj: dict) -> "ProofLeaf":
        return cls(int(obj["index"]), bytes.fromhex(obj["ciphertext"]), MerkleProof.from_json(obj["path"]))


@dataclass(frozen=True)
class MisbehaviorProof:
    kind: str
    gate: int | None
    leaves: tuple[ProofLeaf, ...]

    def to_json(self) -> dict:
        return {"kind": self.kind, "gate": self.gate, "leaves": [x.to_json() for x in self.leaves]}

    @classmethod
    def from_json(cls, obj: dict) -> "MisbehaviorProof":
        gate = obj.get("gate")
        return cls(str(obj["kind"]), None if gate is None else int(gate),
                   tuple(ProofLeaf.from_json(x) for x in obj["leaves"]))


def _operand_leaves(c: PredicateCircuit, gid: int) -> list[int]:
    """Leaf indices a BadGate proof for ``gid`` must open, output wire first."""
    n = c.num_inputs
    g = c.gates[gid]
    idx = [n + gid]
    if g.op == "INPUT":
        idx.append(g.index)
    else:
        for o in g.operands:
            if n + o not in idx:
                idx.append(n + o)
    return idx


def generate_pom(pkg: EncodedPackage, key: bytes, c: PredicateCircuit) -> MisbehaviorProof | None:
    """Proof that the committed package is inconsistent, or None if it is honest.

    A false output wire takes precedence; otherwise the first gate whose
    wire disagrees with its operands is reported.
    """
    n = c.num_inputs
    chunks, wires = decrypt_leaves(pkg, key)
    leaves = pkg.leaves
    levels = None

    def opened(indices):
        nonlocal levels
        if levels is None:
            levels = merkle_levels(leaves)
        return tuple(ProofLeaf(i, leaves[i], prove_from_levels(levels, i)) for i in indices)

    out = c.output
    if wires[out] != TRUE:
        return MisbehaviorProof(BAD_OUTPUT, None, opened([n + out]))
    for gid, g in enumerate(c.gates):
        if g.op == "INPUT":
            ops = [chunks[g.index]]
        else:
            ops = [wires[o] for o in g.operands]
        if not gate_consistent(c, gid, wires[gid], ops):
            return MisbehaviorProof(BAD_GATE, gid, opened(_operand_leaves(c, gid)))
    return None


def verify_pom(root: bytes, circuit: PredicateCircuit, key: bytes, proof: MisbehaviorProof,
               clear: ClearMasks | None = None) -> bool:
    """Arbiter-side check; touches only the leaves carried in the proof."""
    n = circuit.num_inputs
    total = n + len(circuit.gates)
    seen: dict[int, bytes] = {}
    for leaf in proof.leaves:
        if leaf.index in seen or leaf.index != leaf.path.leaf_index:
            return False
        if len(leaf.ciphertext) != WORD_SIZE:
            return False
        if not merkle_verify(root, leaf.ciphertext, leaf.path, leaf_count=total):
            return False
        seen[leaf.index] = leaf.ciphertext

    def plain(i):
        return decrypt_chunk(key, i, seen[i], None if i >= n else chunk_mask(clear, i))

    if proof.kind == BAD_OUTPUT:
        out = n + circuit.output
        if set(seen) != {out} or proof.gate is not None:
            return False
        return plain(out) != TRUE
    if proof.kind == BAD_GATE:
        gid = proof.gate
        if gid is None or not 0 <= gid < len(circuit.gates):
            return False
        need = _operand_leaves(circuit, gid)
        if set(seen) != set(need):
            return False
        g = circuit.gates[gid]
        if g.op == "INPUT":
            ops = [plain(g.index)]
        else:
            ops = [plain(n + o) for o in g.operands]
        return not gate_consistent(circuit, gid, plain(n + gid), ops)
    return False


def corrupt_leaf(pkg: EncodedPackage, index: int, byte: int | None = None, flip: int = 0x01) -> EncodedPackage:
    """Flip bits of one ciphertext leaf and recommit, as a cheating seller would.

    By default the first byte that is actually encrypted is flipped.
    """
    leaves = pkg.leaves
    n = len(pkg.enc_chunks)
    if byte is None:
        mask = chunk_mask(pkg.clear, index) if index < n else None
        byte = 0 if mask is None else next((i for i, m in enumerate(mask) if m == 0), 0)
    leaf = bytearray(leaves[index])
    leaf[byte] ^= flip
    leaves[index] = bytes(leaf)
    return EncodedPackage(tuple(leaves[:n]), tuple(leaves[n:]), pkg.circuit_digest, merkle_root(leaves), pkg.clear)


def forge_pom(pkg: EncodedPackage, c: PredicateCircuit) -> MisbehaviorProof:
    """A well-formed but false complaint: opens the genuine output leaf."""
    n = c.num_inputs
    idx = n + c.output
    leaves = pkg.leaves
    return MisbehaviorProof(BAD_OUTPUT, None, (ProofLeaf(idx, leaves[idx], prove_from_levels(merkle_levels(leaves), idx)),))


def complaint_cites(phi: PredicateCircuit, blob: DataBlob) -> str:
    """What a complaining buyer blames: phi if it fails on the data, else rho."""
    return "phi" if not eval_circuit(phi, blob.chunks) else "rho"


# ---------------------------------------------------------------------------
# two-party driver

PHASE_ORDER = ("Agreed", "Funded", "Delivered", "Revealed", "Settled")
_NEXT = {
    "Agreed": {"Funded", "Aborted"},
    "Funded": {"Delivered", "Aborted"},
    "Delivered": {"Revealed", "Aborted"},
    "Revealed": {"Settled", "Aborted"},
}


class PhaseError(RuntimeError):
    pass


@dataclass
class TwoPartyState:
    phase: str = "Agreed"
    agreement: str | None = None
    escrow: str | None = None
    root: bytes | None = None
    reveal_tick: int | None = None
    history: list = field(default_factory=lambda: ["Agreed"])

    def advance(self, phase: str) -> None:
        if phase not in _NEXT.get(self.phase, ()):
            raise PhaseError(f"cannot go from {self.phase} to {phase}")
        self.phase = phase
        self.history.append(phase)

    def abort(self) -> None:
        self.advance("Aborted")


@dataclass
class TwoPartyTerms:
    price: int
    blob: DataBlob
    circuit: PredicateCircuit
    key: bytes
    window: int = 3
    deposit: int | None = None          # defaults to floor(price / 10)
    clear: ClearMasks | None = None
    rho: PredicateCircuit | None = None
    rho_text: str = ""

    @property
    def seller_deposit(self) -> int:
        return self.price // 10 if self.deposit is None else self.deposit


def run_two_party(seller, buyer, terms: TwoPartyTerms, ledger, seller_id: str = "seller",
                  buyer_id: str = "buyer", info=None):
    """Drive Agreed -> Funded -> Delivered -> Revealed -> Settled/Aborted.

    ``seller`` and ``buyer`` are ``Strategy`` values. Returns a
    ``TradeOutcome`` carrying the state history in ``notes``.
    """
    from .ledger import Agreement, buyer_due
    from .predicate import conjoin
    from .roles import Behavior, InfoFlow, TradeOutcome

    info = info if info is not None else InfoFlow()
    parties = (seller_id, buyer_id)
    before = {p: ledger.balance(p) for p in parties}
    st = TwoPartyState()
    out = TradeOutcome(phase="Agreed", deltas={}, info=info, price=terms.price,
                       roles={"seller": seller.names(), "buyer": buyer.names()})

    def finish():
        out.phase = st.phase
        out.deltas = {p: ledger.balance(p) - before[p] for p in parties}
        out.notes = list(st.history)
        if st.agreement is not None:
            t = ledger.trade(st.agreement)
            out.verdicts = list(t.verdicts)
            out.live_escrow = sum(ledger.escrows[e].amount for e in t.payment) + (
                ledger.escrows[t.deposit].amount if t.deposit else 0)
        return out

    if seller.does(Behavior.OFF_CHAIN) or buyer.does(Behavior.OFF_CHAIN):
        # the pair deals outside the system; nothing reaches the ledger
        st.history.append("OffChain")
        out.phase = "OffChain"
        out.deltas = {p: 0 for p in parties}
        out.notes = list(st.history)
        return out

    a = Agreement.create(
        "trade", parties,
        {"price": terms.price, "c_s": 0, "c_b": 0, "window": terms.window,
         "min_deposit": terms.seller_deposit},
        phi=terms.circuit, rho=terms.rho, rho_text=terms.rho_text, created_at=ledger.clock)
    st.agreement = out.trade_id = ledger.register_agreement(a)

    if seller.does(Behavior.ABORT) or buyer.does(Behavior.ABORT):
        st.abort()
        return finish()

    # Fund
    due = buyer_due(terms.price, 0)
    pay = due - max(1, due // 10) if buyer.does(Behavior.BUYER_UNDERPAY) else due
    if pay > 0:
        st.escrow = ledger.freeze(buyer_id, pay, st.agreement).id
    st.advance("Funded")

    # Deliver
    contract = conjoin(terms.circuit, terms.rho)
    pkg = encode_package(terms.blob, contract, terms.key, terms.clear)
    if seller.does(Behavior.SELLER_JUNK_DATA):
        pkg = corrupt_leaf(pkg, min(1, len(pkg.enc_chunks) - 1))
    ledger.post_commitment(st.agreement, seller_id, pkg.root, pkg.clear)
    st.root = pkg.root
    for i, x in enumerate(pkg.leaves):
        info.observe(buyer_id, "ciphertext", f"leaf{i}", x)
    st.advance("Delivered")
    t = ledger.trade(st.agreement)
    if not verify_package(pkg, t.root, contract.digest, contract, t.clear):
        ledger.refund(st.agreement)
        st.abort()
        return finish()

    # Reveal: an honest seller only reveals into a fully paid escrow
    if not ledger.paid(st.agreement):
        ledger.advance_time(terms.window + 1)
        ledger.refund(st.agreement)
        st.abort()
        return finish()
    ledger.reveal_key(st.agreement, seller_id, terms.key, terms.seller_deposit)
    st.reveal_tick = ledger.clock
    st.advance("Revealed")
    info.observe(buyer_id, "key", "key", terms.key)
    out.buyer_has_key = True

    blob, ok = decode(pkg, terms.key, contract)
    info.observe(buyer_id, "plaintext", "data", b"".join(blob.chunks))
    proof = generate_pom(pkg, terms.key, contract)
    out.buyer_phi = ok
    out.buyer_valid_data = proof is None
    if proof is not None:
        ledger.submit_complaint(st.agreement, buyer_id, proof, cites=complaint_cites(terms.circuit, blob))
    elif buyer.does(Behavior.BUYER_FALSE_COMPLAINT):
        ledger.submit_complaint(st.agreement, buyer_id, forge_pom(pkg, contract))

    if ledger.trade(st.agreement).status == "upheld":
        st.abort()
        return finish()
    ledger.advance_time(terms.window + 1)
    ledger.settle(st.agreement)
    st.advance("Settled")
    return finish()
