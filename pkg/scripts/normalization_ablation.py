"""Compare training with and without target calibration.

Trains the same small model twice on a synthetic energy+force task, once with
per-atom mean calibration of the targets and once on raw outputs, then reports
the validation MAE gap between the two arms as JSON.
"""

import argparse
import json
import sys

from geomnets import training as tr
from geomnets.models import api


def run_arm(confs_train, confs_val, steps, seed, stats):
    model = api.model_from_config(
        {"family": "schnet", "hidden": 16, "layers": 2, "cutoff": 4.0}
    )
    schedule = tr.ScheduleSpec(lr_max=8e-3, lr_min=1e-4, total_steps=steps)
    params, hist = tr.train_energy_force(
        model, confs_train, schedule, seed=seed, steps=steps, stats=stats
    )
    metrics = tr.evaluate_energy_force(model, params, confs_val, stats=stats)
    return {
        "val_mae_energy": metrics["mae_energy"],
        "val_mae_force": metrics["mae_force"],
        "final_train_loss": hist["train_loss"][-1],
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=64, help="training structures")
    parser.add_argument("--val-count", type=int, default=16, help="validation structures")
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="write JSON here instead of stdout")
    args = parser.parse_args(argv)

    confs_train = tr.synthetic_conformations(args.count, seed=args.seed, n_atoms=(4, 6))
    confs_val = tr.synthetic_conformations(
        args.val_count, seed=args.seed + 1, n_atoms=(4, 6)
    )
    stats = tr.stats_from_conformations(confs_train)

    print("arm 1/2: calibrated targets", file=sys.stderr)
    with_norm = run_arm(confs_train, confs_val, args.steps, args.seed, stats)
    print("arm 2/2: raw targets", file=sys.stderr)
    without_norm = run_arm(confs_train, confs_val, args.steps, args.seed, None)

    payload = {
        "task": "synthetic_energy_force",
        "count": args.count,
        "steps": args.steps,
        "seed": args.seed,
        "energy_mean": stats.energy_mean,
        "force_mean": stats.force_mean,
        "with_normalization": with_norm,
        "without_normalization": without_norm,
        "gap": {
            key: without_norm[key] - with_norm[key]
            for key in ("val_mae_energy", "val_mae_force")
        },
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
