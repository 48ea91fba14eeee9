"""Fair data exchange over a simulated ledger, with and without a mediator."""

from .commitments import merkle_prove, merkle_root, merkle_verify
from .exchange import (
    DataBlob,
    EncodedPackage,
    MisbehaviorProof,
    decode,
    encode_package,
    generate_pom,
    run_two_party,
    verify_package,
    verify_pom,
)
from .ledger import CorruptLog, Ledger, LedgerEvent, compute_payouts
from .mediated import MediatedTerms, run_mediated
from .predicate import PredicateCircuit, compile_spec, eval_circuit
from .roles import Behavior, Role, Strategy
from .tradegraph import TradeGraph, export_dot, provenance_chain, rebuild_from_log
from .adversim import Scenario, assert_fairness, enumerate_collusion_suite, run_scenario

__version__ = "0.1.0"
