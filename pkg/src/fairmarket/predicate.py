"""Fan-in-2 boolean circuits over 32-byte words.

A circuit is a list of gates in topological order; the last gate is the
output and must produce a boolean word (``FALSE`` or ``TRUE``). Word
valued gates are INPUT, CONST and HASH; every other op yields a boolean.

Logical operands (AND, OR, NOT) treat any nonzero word as true.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

from .commitments import WORD_SIZE, ZERO_WORD, hash

FALSE = ZERO_WORD
TRUE = bytes(WORD_SIZE - 1) + b"\x01"

OPS = ("INPUT", "CONST", "EQ", "AND", "OR", "NOT", "GE64", "CONTAINS", "HASHEQ", "HASH")
ARITY = {"INPUT": 0, "CONST": 0, "NOT": 1, "EQ": 2, "AND": 2, "OR": 2,
         "GE64": 2, "CONTAINS": 2, "HASHEQ": 2, "HASH": 2}
WORD_OPS = frozenset({"INPUT", "CONST", "HASH"})

# CONTAINS needle encoding: first byte is the bit length, bits follow
MAX_NEEDLE_BITS = (WORD_SIZE - 1) * 8


class CircuitError(ValueError):
    pass


class MalformedCircuit(CircuitError):
    pass


class ArityMismatch(CircuitError):
    pass


class UnsupportedSpec(CircuitError):
    pass


class EmptySet(CircuitError):
    pass


def as_bool(flag: bool) -> bytes:
    return TRUE if flag else FALSE


def u64_word(n: int) -> bytes:
    """Word holding ``n`` in its trailing 8 bytes (what GE64 reads)."""
    if not 0 <= n < 1 << 64:
        raise ValueError(f"{n} does not fit in 64 bits")
    return bytes(WORD_SIZE - 8) + n.to_bytes(8, "big")


def needle_word(bits: int, nbits: int) -> bytes:
    """Encode an ``nbits``-long bitstring for CONTAINS."""
    if not 0 <= nbits <= MAX_NEEDLE_BITS:
        raise ValueError(f"needle length {nbits} exceeds {MAX_NEEDLE_BITS} bits")
    if bits >> nbits:
        raise ValueError("needle has bits beyond its length")
    body = (bits << (MAX_NEEDLE_BITS - nbits)) if nbits else 0
    return bytes([nbits]) + body.to_bytes(WORD_SIZE - 1, "big")


def needle_from_bytes(s: bytes) -> bytes:
    return needle_word(int.from_bytes(s, "big"), 8 * len(s))


def _contains(hay: bytes, needle: bytes) -> bool:
    nbits = needle[0]
    if nbits == 0:
        return True
    if nbits > MAX_NEEDLE_BITS:
        return False
    want = int.from_bytes(needle[1:], "big") >> (MAX_NEEDLE_BITS - nbits)
    h = int.from_bytes(hay, "big")
    mask = (1 << nbits) - 1
    for shift in range(WORD_SIZE * 8 - nbits + 1):
        if (h >> shift) & mask == want:
            return True
    return False


def apply_op(op: str, a: bytes | None = None, b: bytes | None = None) -> bytes:
    """Evaluate a non-leaf gate on its operand words."""
    if op == "EQ":
        return as_bool(a == b)
    if op == "AND":
        return as_bool(a != ZERO_WORD and b != ZERO_WORD)
    if op == "OR":
        return as_bool(a != ZERO_WORD or b != ZERO_WORD)
    if op == "NOT":
        return as_bool(a == ZERO_WORD)
    if op == "GE64":
        return as_bool(int.from_bytes(a[-8:], "big") >= int.from_bytes(b[-8:], "big"))
    if op == "CONTAINS":
        return as_bool(_contains(a, b))
    if op == "HASHEQ":
        return as_bool(hash(a) == b)
    if op == "HASH":
        return hash(a + b)
    raise MalformedCircuit(f"not an operator gate: {op}")


@dataclass(frozen=True)
class Gate:
    op: str
    operands: tuple[int, ...] = ()
    index: int | None = None     # INPUT only
    value: bytes | None = None   # CONST only

    def to_json(self) -> list:
        if self.op == "INPUT":
            return ["INPUT", self.index]
        if self.op == "CONST":
            return ["CONST", self.value.hex()]
        return [self.op, *self.operands]

    @classmethod
    def from_json(cls, item: Sequence) -> "Gate":
        if not item or item[0] not in OPS:
            raise MalformedCircuit(f"bad gate record {item!r}")
        op = item[0]
        if op == "INPUT":
            return cls("INPUT", index=int(item[1]))
        if op == "CONST":
            return cls("CONST", value=bytes.fromhex(item[1]))
        return cls(op, tuple(int(x) for x in item[1:]))


@dataclass(frozen=True)
class PredicateCircuit:
    gates: tuple[Gate, ...]
    num_inputs: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        self.validate()

    def validate(self) -> None:
        if not self.gates:
            raise MalformedCircuit("circuit has no gates")
        if self.num_inputs < 0:
            raise MalformedCircuit("negative input count")
        for gid, g in enumerate(self.gates):
            if g.op not in OPS:
                raise MalformedCircuit(f"gate {gid}: unknown op {g.op}")
            if len(g.operands) != ARITY[g.op]:
                raise MalformedCircuit(f"gate {gid}: {g.op} takes {ARITY[g.op]} operands")
            for o in g.operands:
                if not 0 <= o < gid:
                    raise MalformedCircuit(f"gate {gid}: operand {o} is not an earlier gate")
            if g.op == "INPUT" and not (g.index is not None and 0 <= g.index < self.num_inputs):
                raise MalformedCircuit(f"gate {gid}: input index {g.index} out of range")
            if g.op == "CONST" and (g.value is None or len(g.value) != WORD_SIZE):
                raise MalformedCircuit(f"gate {gid}: constant must be a 32-byte word")
        out = self.gates[-1]
        if out.op in WORD_OPS and not (out.op == "CONST" and out.value in (TRUE, FALSE)):
            raise MalformedCircuit(f"output gate {out.op} does not produce a boolean word")

    @property
    def output(self) -> int:
        return len(self.gates) - 1

    def to_json(self) -> dict:
        return {"num_inputs": self.num_inputs, "gates": [g.to_json() for g in self.gates]}

    def serialize(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "PredicateCircuit":
        try:
            gates = tuple(Gate.from_json(g) for g in obj["gates"])
            return cls(gates, int(obj["num_inputs"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise MalformedCircuit(f"cannot parse circuit: {exc}") from exc

    @classmethod
    def parse(cls, text: str) -> "PredicateCircuit":
        return cls.from_json(json.loads(text))

    @cached_property
    def digest(self) -> bytes:
        return hash(self.serialize().encode("utf-8"))

    # alias matching the field name used in agreements
    @property
    def description_digest(self) -> bytes:
        return self.digest


def eval_transcript(c: PredicateCircuit, inputs: Sequence[bytes]) -> list[bytes]:
    """Wire value of every gate, in gate order."""
    if len(inputs) != c.num_inputs:
        raise ArityMismatch(f"circuit takes {c.num_inputs} inputs, got {len(inputs)}")
    wires: list[bytes] = []
    for g in c.gates:
        if g.op == "INPUT":
            w = inputs[g.index]
            if len(w) != WORD_SIZE:
                raise ArityMismatch(f"input {g.index} is not a 32-byte word")
        elif g.op == "CONST":
            w = g.value
        else:
            w = apply_op(g.op, *(wires[o] for o in g.operands))
        wires.append(w)
    return wires


def eval_circuit(c: PredicateCircuit, inputs: Sequence[bytes]) -> bool:
    return eval_transcript(c, inputs)[-1] == TRUE


def gate_consistent(c: PredicateCircuit, gid: int, wire: bytes, operand_words: Sequence[bytes]) -> bool:
    """Local check used by misbehavior proofs.

    ``operand_words`` is the input chunk for INPUT gates, empty for CONST,
    otherwise the operand wire values.
    """
    g = c.gates[gid]
    if g.op == "INPUT":
        return wire == operand_words[0]
    if g.op == "CONST":
        return wire == g.value
    return wire == apply_op(g.op, *operand_words)


def check_transcript(c: PredicateCircuit, inputs: Sequence[bytes], wires: Sequence[bytes]) -> list[int]:
    """Ids of gates whose wire disagrees with its operands."""
    bad = []
    for gid, g in enumerate(c.gates):
        if g.op == "INPUT":
            ops = [inputs[g.index]]
        else:
            ops = [wires[o] for o in g.operands]
        if not gate_consistent(c, gid, wires[gid], ops):
            bad.append(gid)
    return bad


class CircuitBuilder:
    """Append-only gate list with de-duplicated inputs and constants."""

    def __init__(self, num_inputs: int):
        self.num_inputs = num_inputs
        self.gates: list[Gate] = []
        self._inputs: dict[int, int] = {}
        self._consts: dict[bytes, int] = {}

    def _push(self, g: Gate) -> int:
        self.gates.append(g)
        return len(self.gates) - 1

    def input(self, i: int) -> int:
        if i not in self._inputs:
            self._inputs[i] = self._push(Gate("INPUT", index=i))
        return self._inputs[i]

    def const(self, w: bytes) -> int:
        if w not in self._consts:
            self._consts[w] = self._push(Gate("CONST", value=w))
        return self._consts[w]

    def op(self, name: str, *operands: int) -> int:
        return self._push(Gate(name, tuple(operands)))

    def all_of(self, ids: Sequence[int]) -> int:
        if not ids:
            return self.const(TRUE)
        acc = ids[0]
        for x in ids[1:]:
            acc = self.op("AND", acc, x)
        return acc

    def any_of(self, ids: Sequence[int]) -> int:
        if not ids:
            return self.const(FALSE)
        acc = ids[0]
        for x in ids[1:]:
            acc = self.op("OR", acc, x)
        return acc

    def build(self, out: int) -> PredicateCircuit:
        gates = list(self.gates)
        if out != len(gates) - 1:
            # output must be last; re-emit it through a boolean identity
            gates.append(Gate("AND", (out, out)))
        return PredicateCircuit(tuple(gates), self.num_inputs)


# ---------------------------------------------------------------------------
# predicate templates

@dataclass(frozen=True)
class HashEquals:
    digest: bytes


@dataclass(frozen=True)
class AllChunksContain:
    needle: bytes


@dataclass(frozen=True)
class FieldMembership:
    column: str
    allowed: frozenset

    def __init__(self, column: str, allowed):
        object.__setattr__(self, "column", column)
        object.__setattr__(self, "allowed", frozenset(allowed))


@dataclass(frozen=True)
class NoChunkContains:
    needle: bytes


@dataclass(frozen=True)
class RowCountAtLeast:
    k: int


@dataclass(frozen=True)
class And:
    left: "PredicateSpec"
    right: "PredicateSpec"


@dataclass(frozen=True)
class Or:
    left: "PredicateSpec"
    right: "PredicateSpec"


@dataclass(frozen=True)
class Not:
    inner: "PredicateSpec"


PredicateSpec = Union[HashEquals, AllChunksContain, NoChunkContains, FieldMembership, RowCountAtLeast, And, Or, Not]


def chain_digest(chunks: Sequence[bytes]) -> bytes:
    """File digest that a HASH/HASHEQ circuit can recompute.

    acc = c0, acc = H(acc || ci) for the remaining chunks, then H(acc).
    A one-chunk file therefore hashes to plain SHA-256 of the chunk.
    """
    acc = chunks[0]
    for c in chunks[1:]:
        acc = hash(acc + c)
    return hash(acc)


def _emit(b: CircuitBuilder, spec, layout) -> int:
    if isinstance(spec, HashEquals):
        if b.num_inputs < 1:
            raise UnsupportedSpec("HashEquals needs at least one chunk")
        if len(spec.digest) != WORD_SIZE:
            raise UnsupportedSpec("digest must be 32 bytes")
        acc = b.input(0)
        for i in range(1, b.num_inputs):
            acc = b.op("HASH", acc, b.input(i))
        return b.op("HASHEQ", acc, b.const(spec.digest))

    if isinstance(spec, AllChunksContain):
        if 8 * len(spec.needle) > MAX_NEEDLE_BITS:
            raise UnsupportedSpec(f"needle longer than {MAX_NEEDLE_BITS // 8} bytes")
        needle = b.const(needle_from_bytes(spec.needle))
        return b.all_of([b.op("CONTAINS", b.input(i), needle) for i in range(b.num_inputs)])

    if isinstance(spec, NoChunkContains):
        if 8 * len(spec.needle) > MAX_NEEDLE_BITS:
            raise UnsupportedSpec(f"needle longer than {MAX_NEEDLE_BITS // 8} bytes")
        needle = b.const(needle_from_bytes(spec.needle))
        return b.all_of([b.op("NOT", b.op("CONTAINS", b.input(i), needle)) for i in range(b.num_inputs)])

    if isinstance(spec, RowCountAtLeast):
        if spec.k < 0:
            raise UnsupportedSpec("row bound must be non-negative")
        if spec.k == 0:
            return b.const(TRUE)
        if layout is None:
            raise UnsupportedSpec("RowCountAtLeast needs a table layout")
        header = b.input(0)
        enough = b.op("GE64", header, b.const(u64_word(spec.k)))
        # declared count must fit in the chunks actually present
        overflow = b.op("GE64", header, b.const(u64_word(b.num_inputs)))
        return b.op("AND", enough, b.op("NOT", overflow))

    if isinstance(spec, FieldMembership):
        if not spec.allowed:
            raise EmptySet(f"allowed set for {spec.column!r} is empty")
        if layout is None:
            raise UnsupportedSpec("FieldMembership needs a table layout")
        return _emit_membership(b, spec, layout)

    if isinstance(spec, And):
        return b.op("AND", _emit(b, spec.left, layout), _emit(b, spec.right, layout))
    if isinstance(spec, Or):
        return b.op("OR", _emit(b, spec.left, layout), _emit(b, spec.right, layout))
    if isinstance(spec, Not):
        return b.op("NOT", _emit(b, spec.inner, layout))
    raise UnsupportedSpec(f"unsupported predicate template {type(spec).__name__}")


def _ranges(values: Sequence[int]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for v in sorted(set(values)):
        if out and out[-1][1] + 1 == v:
            out[-1] = (out[-1][0], v)
        else:
            out.append((v, v))
    return out


def _emit_membership(b: CircuitBuilder, spec: FieldMembership, layout) -> int:
    col = layout.column(spec.column)
    if col.offset + col.width != WORD_SIZE or col.width > 8:
        raise UnsupportedSpec(
            f"column {spec.column!r} must occupy the trailing bytes of a row (<= 8 wide)")
    codes = [layout.cell_code(spec.column, v) for v in spec.allowed]
    header = b.input(0)
    runs = [(b.const(u64_word(lo)), b.const(u64_word(hi + 1)) if hi + 1 < 1 << 64 else None)
            for lo, hi in _ranges(codes)]
    checks = []
    for r in range(1, b.num_inputs):
        row = b.input(r)
        hits = []
        for lo, hi in runs:
            at_least = b.op("GE64", row, lo)
            hits.append(at_least if hi is None else b.op("AND", at_least, b.op("NOT", b.op("GE64", row, hi))))
        member = b.any_of(hits)
        # rows past the declared count are padding
        present = b.op("GE64", header, b.const(u64_word(r)))
        checks.append(b.op("OR", b.op("NOT", present), member))
    return b.all_of(checks)


def compile_spec(spec, num_inputs: int, layout=None) -> PredicateCircuit:
    """Compile a predicate template for data of ``num_inputs`` chunks.

    Tabular templates need the ``TableLayout`` the data was packed with.
    """
    b = CircuitBuilder(num_inputs)
    return b.build(_emit(b, spec, layout))


def conjoin(phi: PredicateCircuit, rho: PredicateCircuit | None) -> PredicateCircuit:
    """Single circuit for ``phi AND rho``; this is what a package commits to."""
    if rho is None:
        return phi
    if rho.num_inputs != phi.num_inputs:
        raise ArityMismatch("predicates read different chunk counts")
    off = len(phi.gates)
    shifted = [Gate(g.op, tuple(o + off for o in g.operands), g.index, g.value) for g in rho.gates]
    out = Gate("AND", (phi.output, off + rho.output))
    return PredicateCircuit(phi.gates + tuple(shifted) + (out,), phi.num_inputs)


def clear_evaluable(c: PredicateCircuit, header_mask: bytes | None, row_mask: bytes | None) -> bool:
    """True if evaluating ``c`` on ciphertext gives the plaintext answer.

    Holds when every INPUT wire feeds only GE64 gates and the trailing
    eight bytes of every chunk are left in the clear.
    """
    tail = bytes(WORD_SIZE - 8) + b"\xff" * 8

    def covers(mask):
        return mask is not None and int.from_bytes(mask, "big") & int.from_bytes(tail, "big") == int.from_bytes(tail, "big")

    inputs = {gid for gid, g in enumerate(c.gates) if g.op == "INPUT"}
    if not inputs:
        return True
    if any(g.index == 0 for g in c.gates if g.op == "INPUT") and not covers(header_mask):
        return False
    if any(g.index > 0 for g in c.gates if g.op == "INPUT") and not covers(row_mask):
        return False
    for g in c.gates:
        if g.op != "GE64" and inputs.intersection(g.operands):
            return False
    return c.gates[-1].op != "INPUT"
