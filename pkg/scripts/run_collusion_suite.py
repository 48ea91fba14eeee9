"""Run the seven-case collusion suite and print one line per case.

    python3 scripts/run_collusion_suite.py [--seed N] [--out DIR]
"""

import argparse
import json
import sys
from pathlib import Path

from fairmarket.adversim import Scenario, assert_fairness, enumerate_collusion_suite, run_scenario


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=None, help="write each report here")
    args = ap.parse_args(argv)

    base = Scenario(name="medical", seed=args.seed, budget=120,
                    rho={"none_contain": "SSN:"}, rho_text="no social security numbers")
    ok = True
    for s in enumerate_collusion_suite(base):
        r = run_scenario(s)
        v = assert_fairness(r)
        ok &= v.passed
        deltas = " ".join(f"{k}={v:+d}" for k, v in sorted(r.deltas.items()))
        print(f"{s.name:32s} {r.phase:9s} {deltas:40s} {'fair' if v else 'UNFAIR ' + ','.join(v.failures)}")
        if args.out:
            d = args.out / s.name.replace("/", "_")
            d.mkdir(parents=True, exist_ok=True)
            (d / "report.json").write_text(r.dumps())
            (d / "events.jsonl").write_text(r.events_jsonl())
            (d / "scenario.json").write_text(json.dumps(s.to_json(), indent=2, sort_keys=True) + "\n")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
