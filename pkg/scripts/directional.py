"""MT-only versus MT+LC on two moons, matched seeds.

Each seed trains the MT phase once, then continues from that checkpoint
with and without the clustering term, so both arms share the same start.

    python3 scripts/directional.py --seeds 0,1,2,3,4 --out runs/directional
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from lcmt.persistence import load_checkpoint, parse_config, with_overrides
from lcmt.trainer import run_training


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/two_moons.cfg")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", default="runs/directional")
    args = p.parse_args(argv)

    base = parse_config(args.config)
    mt_start = base.schedule.mt_only_epochs
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        root = Path(args.out) / f"seed{seed}"
        mt_cfg = with_overrides(base, [f"run.seed={seed}", "loss.lc_enabled=false",
                                       f"run.checkpoint_every={mt_start}"])
        mt = run_training(mt_cfg, out_dir=root / "mt")
        start = load_checkpoint(root / "mt" / f"ckpt_{mt_start:05d}.lcmt")
        lc_cfg = with_overrides(base, [f"run.seed={seed}"])
        lc = run_training(lc_cfg, out_dir=root / "mt_lc", resume=start)
        rows.append((seed, mt.teacher_error, lc.teacher_error, lc.outcome, lc.epsilon))
        print(f"seed {seed}: MT {mt.teacher_error:.4f}  MT+LC {lc.teacher_error:.4f} "
              f"({lc.outcome}, eps={lc.epsilon:.4g})")

    mt_err = np.array([r[1] for r in rows])
    lc_err = np.array([r[2] for r in rows])
    print(f"mean teacher error: MT {mt_err.mean():.4f}  MT+LC {lc_err.mean():.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
