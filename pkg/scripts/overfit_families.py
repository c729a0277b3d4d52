"""Overfit every model family on a small synthetic energy+force set.

Sanity experiment: each architecture should be able to memorize 64 structures
drawn from a smooth pair potential.  Prints per-family loss reduction and
step counts, and optionally dumps the loss curves as JSON.
"""

import argparse
import json
import sys
import time

from geomnets import training as tr
from geomnets.models import api

CONFIGS = {
    "schnet": {"family": "schnet", "hidden": 32, "layers": 2, "cutoff": 4.0},
    "dimenet": {
        "family": "dimenet",
        "hidden": 16,
        "layers": 1,
        "cutoff": 4.0,
        "sbf_l_max": 2,
        "sbf_n_max": 3,
    },
    "egnn": {"family": "egnn", "hidden": 32, "layers": 2, "cutoff": 4.0},
    "painn": {"family": "painn", "hidden": 16, "layers": 2, "cutoff": 4.0},
    "tfn": {
        "family": "tfn",
        "scalar_channels": 8,
        "vector_channels": 4,
        "tensor_channels": 2,
        "layers": 1,
        "cutoff": 4.0,
        "basis": {"count": 8},
        "radial_hidden": 8,
    },
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=64, help="structures to fit")
    parser.add_argument("--steps", type=int, default=2000, help="step budget per family")
    parser.add_argument("--target", type=float, default=0.05, help="stop at this loss ratio")
    parser.add_argument("--seed", type=int, default=20)
    parser.add_argument("--families", nargs="*", default=list(CONFIGS))
    parser.add_argument("--out", default=None, help="write loss curves as JSON")
    args = parser.parse_args(argv)

    confs = tr.synthetic_conformations(args.count, seed=args.seed, n_atoms=(4, 6))
    curves = {}
    for name in args.families:
        model = api.model_from_config(CONFIGS[name])
        schedule = tr.ScheduleSpec(8e-3, 1e-4, args.steps)
        started = time.perf_counter()
        _, hist = tr.train_energy_force(
            model,
            confs,
            schedule,
            seed=0,
            steps=args.steps,
            stop_loss_ratio=args.target,
        )
        elapsed = time.perf_counter() - started
        ratio = hist["train_loss"][-1] / hist["train_loss"][0]
        curves[name] = hist
        print(
            f"{name:8s} loss x{ratio:.4f} ({100 * (1 - ratio):.1f}% down) "
            f"in {len(hist['step'])} steps, {elapsed:.1f}s"
        )
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(curves, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
