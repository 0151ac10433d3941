"""Run every shipped scenario, replay it, and print the check roll-up."""

import argparse
from pathlib import Path

from roughmkv import harness
from roughmkv.config import load_scenario, scenario_names


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    worst = harness.EXIT_OK
    for name in scenario_names():
        cfg = load_scenario(name)
        res = harness.run(cfg, out_dir=Path(args.out) / name, threads=args.threads)
        rep = harness.replay(res.out_dir / harness.MANIFEST)
        failed = [c.name for c in res.checks if not c.passed]
        print(f"{name:<18} {cfg.gate.tag:<19} exit {res.exit_code}  replay verified {len(rep.verified)} files"
              + (f"  failing: {', '.join(failed)}" if failed else ""))
        worst = max(worst, res.exit_code)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
