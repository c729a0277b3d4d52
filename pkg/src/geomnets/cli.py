"""Command-line front end.

Commands: train, eval, pretrain, check-equiv, build-graph.
Exit codes: 0 success, 1 property violation, 2 usage or config error,
3 numeric failure.  Progress goes to stderr, artifacts to files; the
GEOM_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import training as tr
from .errors import ContractError, NumericError, ParseError
from .geometry import Conformation, load_dataset, periodic_radius_graph, radius_graph
from .models import api
from .so3 import random_rotation
from . import tensor as T

ARTIFACT_VERSION = 1
SUPERVISED_TASKS = ("energy", "energy+force")


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """One experiment: data, model, objective, optimization, bookkeeping."""

    dataset: str
    model: dict
    task: str = "energy+force"
    seed: int = 0
    steps: int = 100
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    normalize: bool = False
    loss: str = "mse"
    energy_weight: float = 1.0
    force_weight: float = 1.0
    sigma: float = 0.04
    temperature: float = 0.1

    _FIELDS = (
        "dataset",
        "model",
        "task",
        "seed",
        "steps",
        "lr_max",
        "lr_min",
        "split",
        "normalize",
        "loss",
        "energy_weight",
        "force_weight",
        "sigma",
        "temperature",
    )

    def __post_init__(self):
        if self.task not in SUPERVISED_TASKS + tr.PRETRAIN_KINDS:
            raise ContractError(f"unknown task '{self.task}'")
        if self.steps < 1:
            raise ContractError("steps must be positive")
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise ContractError("split needs three non-negative fractions")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ContractError(f"split fractions sum to {sum(self.split)}, not 1")
        if self.loss not in ("mse", "mae"):
            raise ContractError(f"unknown loss '{self.loss}'")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - set(cls._FIELDS)
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in raw or "model" not in raw:
            raise ContractError("config needs 'dataset' and 'model' entries")
        kw = dict(raw)
        if "split" in kw:
            kw["split"] = tuple(float(f) for f in kw["split"])
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ContractError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> "RunConfig":
        kw = {name: getattr(self, name) for name in self._FIELDS}
        kw["seed"] = seed
        return RunConfig(**kw)

    def canonical(self) -> dict:
        out = {name: getattr(self, name) for name in self._FIELDS}
        out["split"] = list(self.split)
        return out


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_seed_override(cfg: RunConfig) -> RunConfig:
    raw = os.environ.get("GEOM_SEED")
    if raw is None:
        return cfg
    try:
        return cfg.with_seed(int(raw))
    except ValueError as exc:
        raise ContractError(f"GEOM_SEED must be an integer, got '{raw}'") from exc


def split_dataset(confs, fractions, seed):
    """Deterministic shuffled train/val/test split."""
    order = np.random.default_rng(seed).permutation(len(confs))
    n_train = int(round(fractions[0] * len(confs)))
    n_val = min(int(round(fractions[1] * len(confs))), len(confs) - n_train)
    picks = [order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]]
    return tuple([confs[i] for i in part] for part in picks)


# ---------------------------------------------------------------------------
# shared output helpers


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _progress(steps: int):
    every = max(1, steps // 10)

    def emit(step: int, value: float) -> None:
        if step % every == 0 or step == steps - 1:
            print(f"step {step} loss {value:.6g}", file=sys.stderr)

    return emit


# ---------------------------------------------------------------------------
# train / eval / pretrain


def cmd_train(args) -> int:
    cfg = apply_seed_override(RunConfig.from_file(args.config))
    if cfg.task not in SUPERVISED_TASKS:
        raise ContractError(f"train handles supervised tasks, not '{cfg.task}'")
    confs = load_dataset(cfg.dataset)
    train, val, _ = split_dataset(confs, cfg.split, cfg.seed)
    if not train:
        raise ContractError("training split is empty")
    model = api.model_from_config(cfg.model)
    stats = tr.stats_from_conformations(train) if cfg.normalize else None
    weights = tr.LossWeights(
        cfg.energy_weight, 0.0 if cfg.task == "energy" else cfg.force_weight
    )
    schedule = tr.ScheduleSpec(cfg.lr_max, cfg.lr_min, cfg.steps)
    started = time.perf_counter()
    params, history = tr.train_energy_force(
        model,
        train,
        schedule,
        seed=cfg.seed,
        weights=weights,
        reduction=cfg.loss,
        stats=stats,
        steps=cfg.steps,
        progress=_progress(cfg.steps),
    )
    held_out = val if val else train
    scores = tr.evaluate_energy_force(model, params, held_out, stats)
    os.makedirs(args.out, exist_ok=True)
    metrics = {
        "version": ARTIFACT_VERSION,
        "config_hash": config_hash(cfg),
        "step": history["step"],
        "train_loss": history["train_loss"],
        "val_mae_energy": scores["mae_energy"],
        "val_mae_force": scores["mae_force"],
        "wall_seconds": time.perf_counter() - started,
    }
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    T.save_checkpoint(os.path.join(args.out, "checkpoint.json"), params)
    print(os.path.join(args.out, "metrics.json"))
    return 0


def cmd_eval(args) -> int:
    cfg = apply_seed_override(RunConfig.from_file(args.config))
    if cfg.task not in SUPERVISED_TASKS:
        raise ContractError(f"eval handles supervised tasks, not '{cfg.task}'")
    confs = load_dataset(cfg.dataset)
    _, _, test = split_dataset(confs, cfg.split, cfg.seed)
    held_out = test if test else confs
    model = api.model_from_config(cfg.model)
    params = T.load_checkpoint(args.checkpoint)
    stats = None
    if cfg.normalize:
        train, _, _ = split_dataset(confs, cfg.split, cfg.seed)
        stats = tr.stats_from_conformations(train)
    scores = tr.evaluate_energy_force(model, params, held_out, stats)
    payload = {
        "config_hash": config_hash(cfg),
        "mae_energy": scores["mae_energy"],
        "mae_force": scores["mae_force"],
        "n_structures": len(held_out),
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_pretrain(args) -> int:
    cfg = apply_seed_override(RunConfig.from_file(args.config))
    if cfg.task not in tr.PRETRAIN_KINDS:
        raise ContractError(f"pretrain needs a self-supervised task, not '{cfg.task}'")
    confs = load_dataset(cfg.dataset)
    train, _, _ = split_dataset(confs, cfg.split, cfg.seed)
    if not train:
        raise ContractError("training split is empty")
    model = api.model_from_config(cfg.model)
    schedule = tr.ScheduleSpec(cfg.lr_max, cfg.lr_min, cfg.steps)
    started = time.perf_counter()
    params, history = tr.train_pretrain(
        model,
        cfg.task,
        train,
        schedule,
        seed=cfg.seed,
        steps=cfg.steps,
        sigma=cfg.sigma,
        temperature=cfg.temperature,
        progress=_progress(cfg.steps),
    )
    os.makedirs(args.out, exist_ok=True)
    metrics = {
        "version": ARTIFACT_VERSION,
        "config_hash": config_hash(cfg),
        "step": history["step"],
        "train_loss": history["train_loss"],
        "final_loss": history["train_loss"][-1],
        "wall_seconds": time.perf_counter() - started,
    }
    _write_json(os.path.join(args.out, "metrics.json"), metrics)
    T.save_checkpoint(os.path.join(args.out, "checkpoint.json"), params)
    print(os.path.join(args.out, "metrics.json"))
    return 0


# ---------------------------------------------------------------------------
# equivariance audit


def _dyadic_cluster(rng: np.random.Generator, cutoff: float) -> np.ndarray:
    """Positions on the 1/8 grid, well separated and clear of the cutoff."""
    n = int(rng.integers(4, 8))
    while True:
        pos = rng.integers(0, 25, (n, 3)) / 8.0
        dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        off = dist[~np.eye(n, dtype=bool)]
        if off.min() >= 0.9 and np.abs(off - cutoff).min() > 1e-6:
            return pos


def _energy_and_vectors(model, params, z, pos):
    from .models.common import build_batch

    conf = Conformation(z=z, pos=pos)
    batch = build_batch([conf], model.cutoff, model.needs_angles)
    tape = T.Tape()
    params_t = T.lift(params, tape)
    pos_t = tape.tensor(batch.pos)
    energy = float(model.energy(params_t, batch, pos_t).data.sum())
    vectors = None
    if model.has_vector_output:
        vectors = model.node_vectors(params_t, batch, pos_t).data
    return energy, vectors


def equivariance_claims(model, params, trials: int, seed: int) -> list[dict]:
    """Max deviations over random trials for every symmetry the family claims."""
    rng = np.random.default_rng(seed)
    invariant_family = not model.has_vector_output
    rot_tol = 1e-10 if invariant_family else 1e-8
    dev = {"rotation_energy": 0.0, "translation_energy": 0.0}
    if not invariant_family:
        dev["rotation_vectors"] = 0.0
        dev["translation_vectors"] = 0.0
    for t in range(trials):
        pos = _dyadic_cluster(rng, model.cutoff)
        z = rng.integers(1, 10, pos.shape[0])
        rot = random_rotation(int(rng.integers(2**31)))
        shift = rng.integers(-16, 17, 3) / 8.0
        e0, v0 = _energy_and_vectors(model, params, z, pos)
        e_rot, v_rot = _energy_and_vectors(model, params, z, pos @ rot.T)
        e_tr, v_tr = _energy_and_vectors(model, params, z, pos + shift)
        dev["rotation_energy"] = max(dev["rotation_energy"], abs(e_rot - e0))
        dev["translation_energy"] = max(dev["translation_energy"], abs(e_tr - e0))
        if not invariant_family:
            dev["rotation_vectors"] = max(
                dev["rotation_vectors"], np.abs(v_rot - v0 @ rot.T).max()
            )
            dev["translation_vectors"] = max(
                dev["translation_vectors"], np.abs(v_tr - v0).max()
            )
    tolerances = {
        "rotation_energy": rot_tol,
        "translation_energy": 0.0 if invariant_family else rot_tol,
        "rotation_vectors": rot_tol,
        "translation_vectors": rot_tol,
    }
    return [
        {"claim": name, "max_deviation": value, "tolerance": tolerances[name]}
        for name, value in dev.items()
    ]


def cmd_check_equiv(args) -> int:
    with open(args.config) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"config {args.config} is not valid JSON: {exc}") from exc
    model_cfg = raw.get("model", raw)
    model = api.model_from_config(model_cfg)
    seed = int(os.environ.get("GEOM_SEED", args.seed))
    params = model.init(seed)
    claims = equivariance_claims(model, params, args.trials, seed)
    failures = []
    for item in claims:
        tol = item["tolerance"] if args.tolerance is None else max(
            args.tolerance, item["tolerance"]
        )
        ok = item["max_deviation"] <= tol
        print(
            f"claim={model.family}.{item['claim']} "
            f"max_deviation={item['max_deviation']:.3e} tolerance={tol:.1e} "
            f"status={'ok' if ok else 'FAIL'}"
        )
        if not ok:
            failures.append(f"{model.family}.{item['claim']}")
    if failures:
        print(f"equivariance violation: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# graph construction


def _edge_records(conf: Conformation, cutoff: float, mode: str):
    name = conf.id
    if conf.lattice is None:
        edges = radius_graph(conf.pos, cutoff)
        for k in range(edges.src.size):
            yield {
                "id": name,
                "src": int(edges.src[k]),
                "dst": int(edges.dst[k]),
                "dist": float(edges.dist[k]),
                "shift": edges.shift[k].tolist(),
            }
        return
    if mode == "gathered":
        edges = periodic_radius_graph(conf, cutoff, "gathered")
        for k in range(edges.src.size):
            yield {
                "id": name,
                "src": int(edges.src[k]),
                "dst": int(edges.dst[k]),
                "dist": float(edges.dist[k]),
                "shift": edges.shift[k].tolist(),
            }
        return
    graph = periodic_radius_graph(conf, cutoff, "expanded")
    inv_lat = np.linalg.inv(conf.lattice)
    for k in range(graph.edges.src.size):
        src = int(graph.edges.src[k])
        node = int(graph.edges.dst[k])
        anchor = int(graph.image_of[node])
        frac = (graph.positions[node] - conf.pos[anchor]) @ inv_lat
        yield {
            "id": name,
            "src": src,
            "dst": anchor,
            "dist": float(graph.edges.dist[k]),
            "shift": [int(round(c)) for c in frac],
        }


def cmd_build_graph(args) -> int:
    confs = load_dataset(args.input)
    with open(args.output, "w") as fh:
        for conf in confs:
            for record in _edge_records(conf, args.cutoff, args.periodic):
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
                fh.write("\n")
    print(args.output)
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geomnets", description="geometric model training and auditing"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model on labeled conformations")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=".")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint on the held-out split")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(handler=cmd_eval)

    p_pre = sub.add_parser("pretrain", help="run a self-supervised objective")
    p_pre.add_argument("--config", required=True)
    p_pre.add_argument("--out", default=".")
    p_pre.set_defaults(handler=cmd_pretrain)

    p_chk = sub.add_parser("check-equiv", help="audit symmetry claims of a model")
    p_chk.add_argument("--config", required=True)
    p_chk.add_argument("--trials", type=int, default=50)
    p_chk.add_argument("--tolerance", type=float, default=None)
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.set_defaults(handler=cmd_check_equiv)

    p_bg = sub.add_parser("build-graph", help="emit cutoff edges as jsonl")
    p_bg.add_argument("--input", required=True)
    p_bg.add_argument("--output", required=True)
    p_bg.add_argument("--cutoff", type=float, required=True)
    p_bg.add_argument("--periodic", choices=("gathered", "expanded"), default="gathered")
    p_bg.set_defaults(handler=cmd_build_graph)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
