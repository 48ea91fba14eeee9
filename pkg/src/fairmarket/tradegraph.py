"""Trade graph G = (V, E, T) rebuilt from the ledger log.

Vertices are accounts, weighted edges are settled sales (weight = executed
price), tuples record (seller, mediator, buyer) of mediated trades.  Nothing
here is stored by any participant; it is all folded from events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .ledger import CorruptLog, Ledger, LedgerEvent

__all__ = [
    "TradeEdge", "TradeTuple", "TradeGraph", "GraphBuilder",
    "rebuild_from_log", "provenance_chain", "export_dot", "CorruptLog",
]


@dataclass(frozen=True)
class TradeEdge:
    seller: str
    buyer: str
    weight: int
    trade: str
    root: str       # hex data root
    tick: int = 0   # settlement tick

    def to_json(self) -> dict:
        return {"seller": self.seller, "buyer": self.buyer, "weight": self.weight,
                "trade": self.trade, "root": self.root, "tick": self.tick}


@dataclass(frozen=True)
class TradeTuple:
    seller: str
    mediator: str
    buyer: str
    trade: str

    def to_json(self) -> dict:
        return {"seller": self.seller, "mediator": self.mediator, "buyer": self.buyer,
                "trade": self.trade}


@dataclass
class TradeGraph:
    vertices: set = field(default_factory=set)
    edges: list = field(default_factory=list)      # multiset, in settlement order
    tuples: set = field(default_factory=set)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TradeGraph):
            return NotImplemented
        return (self.vertices == other.vertices and self.edges == other.edges
                and self.tuples == other.tuples)

    def is_subgraph_of(self, other: "TradeGraph") -> bool:
        return (self.vertices <= other.vertices and self.tuples <= other.tuples
                and other.edges[:len(self.edges)] == self.edges)

    def weight(self, seller: str, buyer: str) -> int:
        """Total weight over all parallel edges seller -> buyer."""
        return sum(e.weight for e in self.edges if (e.seller, e.buyer) == (seller, buyer))

    def to_json(self) -> dict:
        return {
            "vertices": sorted(self.vertices),
            "edges": [e.to_json() for e in sorted(self.edges, key=lambda e: e.trade)],
            "tuples": [t.to_json() for t in sorted(self.tuples, key=lambda t: t.trade)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"


class GraphBuilder:
    """Incremental fold; hand ``apply`` to ``Ledger.subscribe``."""

    def __init__(self):
        self.graph = TradeGraph()

    def apply(self, ev: LedgerEvent) -> None:
        g = self.graph
        p = ev.payload
        if ev.kind == "AccountOpened":
            g.vertices.add(p["account"])
        elif ev.kind == "Settled":
            # V' = V u {u, v}; accounts are already present, kept for prefix safety
            g.vertices.update((p["seller"], p["buyer"]))
            g.edges.append(TradeEdge(p["seller"], p["buyer"], p["price"], p["trade"], p["root"], ev.tick))
            if p.get("mediator"):
                g.vertices.add(p["mediator"])
                g.tuples.add(TradeTuple(p["seller"], p["mediator"], p["buyer"], p["trade"]))

    __call__ = apply


def rebuild_from_log(events: Iterable[LedgerEvent]) -> TradeGraph:
    """Replay the log (raising CorruptLog on gaps or bad events) and fold the graph."""
    events = list(events)
    Ledger.replay(events)
    b = GraphBuilder()
    for ev in events:
        b.apply(ev)
    return b.graph


def provenance_chain(graph: TradeGraph, root) -> list[TradeEdge]:
    """Every sale of the data with this root, in settlement order."""
    if isinstance(root, (bytes, bytearray)):
        root = bytes(root).hex()
    return [e for e in graph.edges if e.root == root]


def _q(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph: TradeGraph, name: Optional[str] = "trades") -> str:
    lines = [f"digraph {name} {{"]
    for v in sorted(graph.vertices):
        lines.append(f"  {_q(v)};")
    for e in sorted(graph.edges, key=lambda e: e.trade):
        lines.append(f"  {_q(e.seller)} -> {_q(e.buyer)} [label=\"{e.weight}\", trade={_q(e.trade)}];")
    for t in sorted(graph.tuples, key=lambda t: t.trade):
        lines.append(f"  {_q(t.seller)} -> {_q(t.mediator)} [style=dashed, trade={_q(t.trade)}];")
        lines.append(f"  {_q(t.mediator)} -> {_q(t.buyer)} [style=dashed, trade={_q(t.trade)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
