"""Drive the clustering weight high and report how often the latent space collapses.

    python3 scripts/collapse.py --lambda2 1000 --epsilon-scale 10
"""

from __future__ import annotations

import argparse
from collections import Counter

from lcmt.persistence import parse_config, with_overrides
from lcmt.trainer import run_training


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/two_moons.cfg")
    p.add_argument("--lambda2", type=float, default=1000.0)
    p.add_argument("--epsilon-scale", type=float, default=10.0)
    p.add_argument("--seeds", default="0,1,2,3,4")
    args = p.parse_args(argv)

    base = parse_config(args.config)
    outcomes = Counter()
    for seed in (int(s) for s in args.seeds.split(",")):
        cfg = with_overrides(base, [f"run.seed={seed}", f"loss.lambda2={args.lambda2}",
                                    f"graph.epsilon_scale={args.epsilon_scale}"])
        r = run_training(cfg)
        last = r.history[-1] if r.history else None
        var = f"{last.feature_variance:.3g}" if last else "n/a"
        print(f"seed {seed}: {r.outcome} after {r.epochs_run} epochs, final feature variance {var}")
        outcomes[r.outcome] += 1
    print(", ".join(f"{k}={v}" for k, v in sorted(outcomes.items())))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
