"""Sweep the neighbour radius as a multiple of the auto-calibrated epsilon.

A scale of 0 leaves the graph empty, which reduces the objective to plain MT.

    python3 scripts/ablation_epsilon.py --scales 0,0.1,1,10 --parallel 4
"""

from __future__ import annotations

import argparse
from pathlib import Path

from lcmt.cli import SweepSpec, format_sweep_row, run_sweep, write_sweep_table
from lcmt.persistence import parse_config


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/two_moons.cfg")
    p.add_argument("--scales", default="0,0.1,1,10")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", default="runs/ablation_epsilon")
    args = p.parse_args(argv)

    spec = SweepSpec("graph.epsilon_scale", tuple(args.scales.split(",")),
                     tuple(int(s) for s in args.seeds.split(",")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(parse_config(args.config), spec, out, args.parallel)
    write_sweep_table(out / "sweep.csv", rows)
    for r in rows:
        print(format_sweep_row(r), " per seed:", " ".join(f"{e:.3f}" for e in r["teacher_errors"]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
