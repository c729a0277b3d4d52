"""Supervised and self-supervised training on conformations.

Forces always come from the energy head by differentiation, so every model
family trains through the same loop: lift parameters onto a tape, watch the
coordinates, differentiate the predicted energy for forces, then
differentiate the combined loss for the parameter update.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .geometry import Conformation
from .models import api
from .models.common import GraphBatch, build_batch
from .tensor import Tensor


# ---------------------------------------------------------------------------
# forces from the energy head


def force_from_energy(model, params: dict[str, np.ndarray], conf: Conformation):
    """Energy and forces for one conformation.

    `model` only needs `.energy(params, batch, pos) -> (G,)`, `.cutoff`, and
    `.needs_angles`, so test doubles work alongside real handles.  Forces are
    the negative coordinate gradient of the summed energy.
    """
    batch = build_batch([conf], model.cutoff, model.needs_angles)
    tape = T.Tape()
    params_t = T.lift(params, tape)
    pos = tape.tensor(batch.pos)
    energy = model.energy(params_t, batch, pos)
    (g,) = tape.gradient(T.sum_(energy), [pos])
    return float(energy.data.sum()), -g.data


# ---------------------------------------------------------------------------
# target normalization


@dataclass(frozen=True)
class NormalizationStats:
    """Affine output calibration: scale by the mean absolute force component
    and shift by the per-atom mean energy times the atom count."""

    energy_mean: float
    force_mean: float

    def __post_init__(self):
        if self.force_mean == 0.0:
            raise ContractError("force_mean must be nonzero to be invertible")


def stats_from_conformations(confs: Sequence[Conformation]) -> NormalizationStats:
    energies, n_atoms, comps = [], [], []
    for c in confs:
        if c.energy is None or c.forces is None:
            raise ContractError("normalization stats need labeled conformations")
        energies.append(c.energy)
        n_atoms.append(c.z.size)
        comps.append(np.abs(c.forces).ravel())
    em = float(np.sum(energies) / np.sum(n_atoms))
    fm = float(np.mean(np.concatenate(comps)))
    return NormalizationStats(energy_mean=em, force_mean=fm)


def apply_normalization(y, stats: NormalizationStats, n_atoms):
    """Model output -> physical energy.  Works on floats, arrays, Tensors."""
    return y * stats.force_mean + stats.energy_mean * n_atoms


def invert_normalization(y_phys, stats: NormalizationStats, n_atoms):
    """Physical energy -> model-space target; inverse of apply_normalization."""
    return (y_phys - stats.energy_mean * n_atoms) / stats.force_mean


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossWeights:
    energy: float = 1.0
    force: float = 1.0

    def __post_init__(self):
        if self.energy < 0 or self.force < 0:
            raise ContractError("loss weights must be non-negative")
        if self.energy == 0 and self.force == 0:
            raise ContractError("at least one loss weight must be positive")


def _reduce(diff: Tensor, reduction: str) -> Tensor:
    if reduction == "mse":
        return T.mean(diff * diff)
    if reduction == "mae":
        return T.mean(diff * Tensor(np.sign(diff.data)))
    raise ContractError(f"unknown reduction '{reduction}'")


def energy_force_loss(
    pred_energy: Tensor,
    true_energy: Tensor,
    pred_forces: Tensor,
    true_forces: Tensor,
    weights: LossWeights = LossWeights(),
    reduction: str = "mse",
) -> Tensor:
    """Weighted sum of an energy term (mean over graphs) and a force term
    (mean over all force components)."""
    loss_e = _reduce(pred_energy - true_energy, reduction)
    loss_f = _reduce(pred_forces - true_forces, reduction)
    return loss_e * weights.energy + loss_f * weights.force


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass(frozen=True)
class ScheduleSpec:
    """Half-cosine decay from lr_max at step 0 to lr_min at total_steps."""

    lr_max: float = 1e-3
    lr_min: float = 0.0
    total_steps: int = 1000

    def __post_init__(self):
        if self.lr_max <= 0 or self.lr_min < 0 or self.lr_min > self.lr_max:
            raise ContractError("need lr_max >= lr_min >= 0 and lr_max > 0")
        if self.total_steps < 1:
            raise ContractError("total_steps must be positive")


def cosine_lr(schedule: ScheduleSpec, step: int) -> float:
    t = min(max(step, 0), schedule.total_steps) / schedule.total_steps
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + np.cos(np.pi * t))


@dataclass
class OptimizerState:
    """Adam moments with bias correction."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: dict[str, np.ndarray], **kw) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def adam_step(
    state: OptimizerState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
) -> dict[str, np.ndarray]:
    """One update; mutates `state`, returns fresh parameter arrays."""
    state.step += 1
    t = state.step
    out = {}
    for key, p in params.items():
        g = grads[key]
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = state.m[key] / (1.0 - state.beta1**t)
        v_hat = state.v[key] / (1.0 - state.beta2**t)
        out[key] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------------------
# synthetic labeled data


def pairwise_potential(pos: np.ndarray, depth=1.0, width=1.5, r0=1.2):
    """Morse-style pair potential with analytic forces.

    E = sum_{i<j} depth * ((1 - exp(-width (d - r0)))^2 - 1)
    """
    n = pos.shape[0]
    energy = 0.0
    forces = np.zeros_like(pos)
    for i in range(n):
        for j in range(i + 1, n):
            rij = pos[i] - pos[j]
            d = np.linalg.norm(rij)
            ex = np.exp(-width * (d - r0))
            energy += depth * ((1.0 - ex) ** 2 - 1.0)
            dEdd = 2.0 * depth * width * (1.0 - ex) * ex
            f = -dEdd * rij / d
            forces[i] += f
            forces[j] -= f
    return energy, forces


def synthetic_conformations(
    count: int,
    seed: int,
    n_atoms: tuple[int, int] = (6, 10),
    min_dist: float = 0.9,
    z_max: int = 9,
) -> list[Conformation]:
    """Random clusters labeled with the analytic pair potential."""
    rng = np.random.default_rng(seed)
    confs = []
    for idx in range(count):
        n = int(rng.integers(n_atoms[0], n_atoms[1] + 1))
        side = 2.2 * n ** (1.0 / 3.0)
        pos = np.zeros((n, 3))
        placed = 0
        while placed < n:
            cand = rng.uniform(0.0, side, 3)
            if placed == 0 or np.linalg.norm(pos[:placed] - cand, axis=1).min() >= min_dist:
                pos[placed] = cand
                placed += 1
        z = rng.integers(1, z_max + 1, n)
        energy, forces = pairwise_potential(pos)
        confs.append(Conformation(z=z, pos=pos, energy=energy, forces=forces, id=f"syn{idx}"))
    return confs


# ---------------------------------------------------------------------------
# supervised loop


def _targets(confs: Sequence[Conformation]):
    e = np.array([c.energy for c in confs], dtype=np.float64)
    f = np.concatenate([c.forces for c in confs], axis=0)
    if np.isnan(e).any() or np.isnan(f).any():
        raise ContractError("labels contain NaN")
    return e, f


def _predict(model, params_t, batch, tape, stats, n_per_graph):
    pos = tape.tensor(batch.pos)
    raw = model.energy(params_t, batch, pos)
    if stats is not None:
        energy = apply_normalization(raw, stats, Tensor(n_per_graph.astype(np.float64)))
    else:
        energy = raw
    (g,) = tape.gradient(T.sum_(energy), [pos])
    return energy, -g


def train_energy_force(
    model,
    confs: Sequence[Conformation],
    schedule: ScheduleSpec,
    seed: int = 0,
    weights: LossWeights = LossWeights(),
    reduction: str = "mse",
    stats: NormalizationStats | None = None,
    steps: int | None = None,
    stop_loss_ratio: float | None = None,
    params: dict[str, np.ndarray] | None = None,
    progress=None,
):
    """Full-batch Adam on energy + force matching.

    Stops early once the loss falls below stop_loss_ratio times the first
    step's loss.  Returns (params, history) with history carrying parallel
    step and train_loss lists.
    """
    if steps is None:
        steps = schedule.total_steps
    batch = build_batch(confs, model.cutoff, model.needs_angles)
    n_per_graph = np.bincount(batch.node_graph, minlength=batch.n_graphs)
    e_true, f_true = _targets(confs)
    e_true_t, f_true_t = Tensor(e_true), Tensor(f_true)
    if params is None:
        params = model.init(seed)
    state = OptimizerState.create(params)
    history = {"step": [], "train_loss": []}
    first_loss = None
    for step in range(steps):
        tape = T.Tape()
        params_t = T.lift(params, tape)
        energy, forces = _predict(model, params_t, batch, tape, stats, n_per_graph)
        loss = energy_force_loss(energy, e_true_t, forces, f_true_t, weights, reduction)
        keys = sorted(params)
        grads = tape.gradient(loss, [params_t[k] for k in keys])
        params = adam_step(state, params, dict(zip(keys, (g.data for g in grads))), cosine_lr(schedule, step))
        value = float(loss.data)
        history["step"].append(step)
        history["train_loss"].append(value)
        if progress is not None:
            progress(step, value)
        if first_loss is None:
            first_loss = value
        if stop_loss_ratio is not None and value <= stop_loss_ratio * first_loss:
            break
    return params, history


def evaluate_energy_force(
    model,
    params: dict[str, np.ndarray],
    confs: Sequence[Conformation],
    stats: NormalizationStats | None = None,
) -> dict[str, float]:
    """Physical-unit mean absolute errors over a labeled set."""
    batch = build_batch(confs, model.cutoff, model.needs_angles)
    n_per_graph = np.bincount(batch.node_graph, minlength=batch.n_graphs)
    e_true, f_true = _targets(confs)
    tape = T.Tape()
    params_t = T.lift(params, tape)
    energy, forces = _predict(model, params_t, batch, tape, stats, n_per_graph)
    return {
        "mae_energy": float(np.mean(np.abs(energy.data - e_true))),
        "mae_force": float(np.mean(np.abs(forces.data - f_true))),
    }


# ---------------------------------------------------------------------------
# self-supervised objectives

MASK_FRACTION = 0.15
MASK_TOKEN = 0
N_ELEMENT_CLASSES = 118
PRETRAIN_KINDS = ("type", "distance", "angle", "denoise", "contrastive")


def _mask_indices(rng: np.random.Generator, count: int) -> np.ndarray:
    if count == 0:
        raise ContractError("empty mask set: nothing to predict")
    k = max(1, int(round(MASK_FRACTION * count)))
    return np.sort(rng.choice(count, size=k, replace=False))


def _cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    shift = Tensor(np.max(logits.data, axis=1, keepdims=True))
    lse = T.log(T.sum_(T.exp(logits - shift), axis=1)) + T.reshape(shift, (targets.size,))
    onehot = np.zeros(logits.data.shape)
    onehot[np.arange(targets.size), targets] = 1.0
    picked = T.sum_(logits * Tensor(onehot), axis=1)
    return T.mean(lse - picked)


def _edge_distances(batch: GraphBatch) -> np.ndarray:
    rel = batch.pos[batch.dst] + batch.shift_offset - batch.pos[batch.src]
    return np.linalg.norm(rel, axis=1)


def masked_pretrain_loss(
    kind: str,
    model,
    params_t: dict[str, Tensor],
    batch: GraphBatch,
    pos: Tensor,
    seed: int,
) -> Tensor:
    """Masked-prediction objectives over a batch.

    type:     mask 15% of atoms (at least one) by pointing them at embedding
              row 0, then classify the true element from node features.
    distance: regress true lengths of a 15% edge subset from endpoint features.
    angle:    regress true interior angles of a 15% triplet subset.
    """
    rng = np.random.default_rng(seed)
    if kind == "type":
        masked = _mask_indices(rng, batch.n_nodes)
        z_masked = batch.z.copy()
        z_masked[masked] = MASK_TOKEN
        h = model.node_scalars(params_t, dataclasses.replace(batch, z=z_masked), pos)
        logits = T.matmul(T.gather(h, masked), params_t["type_head.w"])
        return _cross_entropy(logits, batch.z[masked] - 1)
    if kind == "distance":
        picked = _mask_indices(rng, batch.n_edges)
        h = model.node_scalars(params_t, batch, pos)
        rep = T.concat([T.gather(h, batch.src[picked]), T.gather(h, batch.dst[picked])], axis=1)
        pred = T.mlp_apply(_head_spec(model, 2), params_t, rep, "dist_head")
        target = Tensor(_edge_distances(batch)[picked][:, None])
        return T.mean((pred - target) * (pred - target))
    if kind == "angle":
        if batch.angles is None:
            raise ContractError("angle pretraining needs a batch built with angles")
        picked = _mask_indices(rng, batch.angles.n_triplets)
        h = model.node_scalars(params_t, batch, pos)
        out_e = batch.angles.out_edge[picked]
        in_e = batch.angles.in_edge[picked]
        rep = T.concat(
            [
                T.gather(h, batch.dst[out_e]),
                T.gather(h, batch.src[out_e]),
                T.gather(h, batch.dst[in_e]),
            ],
            axis=1,
        )
        pred = T.mlp_apply(_head_spec(model, 3), params_t, rep, "angle_head")
        target = Tensor(batch.angles.angle[picked][:, None])
        return T.mean((pred - target) * (pred - target))
    raise ContractError(f"unknown masked pretraining kind '{kind}'")


def _head_spec(model, arity: int) -> T.MlpSpec:
    d = model.scalar_width
    return T.MlpSpec((arity * d, d, 1))


def denoise_pretrain_loss(
    model,
    params_t: dict[str, Tensor],
    confs,
    sigma: float = 0.04,
    seed: int = 0,
    noise=None,
) -> Tensor:
    """Predict the Gaussian displacement applied to each atom.

    Only families with an equivariant vector output can express the target;
    scalar-only families raise.  Accepts one conformation or a sequence.
    Pass `noise` explicitly (array, or list matching the sequence) to probe
    invariance under joint rigid motion of structure and noise.
    """
    if not getattr(model, "has_vector_output", False):
        raise ContractError(f"family '{model.family}' has no vector output for denoising")
    if isinstance(confs, Conformation):
        confs = [confs]
        noise = None if noise is None else [noise]
    if noise is None:
        rng = np.random.default_rng(seed)
        noise = [rng.normal(0.0, sigma, c.pos.shape) for c in confs]
    views = [
        Conformation(z=c.z, pos=c.pos + n, lattice=c.lattice) for c, n in zip(confs, noise)
    ]
    batch = build_batch(views, model.cutoff, model.needs_angles)
    pos = params_t[next(iter(params_t))].tape.tensor(batch.pos)
    pred = model.node_vectors(params_t, batch, pos)
    diff = pred - Tensor(np.concatenate(noise, axis=0))
    return T.mean(diff * diff)


def info_nce_loss(anchors: Tensor, positives: Tensor, temperature: float = 0.1) -> Tensor:
    """Cosine-similarity contrastive loss with in-batch negatives.

    Row i of `anchors` is matched against row i of `positives`; all other
    rows act as negatives.  Rows must have nonzero norm.
    """
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    if anchors.data.shape != positives.data.shape or anchors.data.ndim != 2:
        raise ContractError("anchors and positives must be matching 2-d batches")
    for side in (anchors, positives):
        if (np.linalg.norm(side.data, axis=1) == 0.0).any():
            raise ContractError("zero-norm embedding row has no direction")
    a = anchors / T.norm(anchors, axis=1, keepdims=True)
    b = positives / T.norm(positives, axis=1, keepdims=True)
    logits = T.matmul(a, T.transpose2(b)) * (1.0 / temperature)
    n = logits.data.shape[0]
    return _cross_entropy(logits, np.arange(n))


def _pooled_embedding(model, params_t, confs, noise_list=None) -> Tensor:
    views = []
    for i, conf in enumerate(confs):
        if noise_list is not None:
            conf = Conformation(z=conf.z, pos=conf.pos + noise_list[i], lattice=conf.lattice)
        views.append(conf)
    batch = build_batch(views, model.cutoff, model.needs_angles)
    pos = params_t[next(iter(params_t))].tape.tensor(batch.pos)
    h = model.node_scalars(params_t, batch, pos)
    sums = T.scatter_sum(h, batch.node_graph, batch.n_graphs)
    counts = np.bincount(batch.node_graph, minlength=batch.n_graphs).astype(np.float64)
    return sums * Tensor(1.0 / counts[:, None])


def contrastive_pretrain_loss(
    model,
    params_t: dict[str, Tensor],
    confs: Sequence[Conformation],
    sigma: float = 0.04,
    temperature: float = 0.1,
    seed: int = 0,
    noise: Sequence[np.ndarray] | None = None,
) -> Tensor:
    """Match each structure's pooled embedding to a jittered view of itself."""
    if len(confs) < 2:
        raise ContractError("contrastive loss needs at least two structures")
    if noise is None:
        rng = np.random.default_rng(seed)
        noise = [rng.normal(0.0, sigma, c.pos.shape) for c in confs]
    anchors = _pooled_embedding(model, params_t, confs)
    positives = _pooled_embedding(model, params_t, confs, noise)
    return info_nce_loss(anchors, positives, temperature)


def train_pretrain(
    model,
    kind: str,
    confs: Sequence[Conformation],
    schedule: ScheduleSpec,
    seed: int = 0,
    steps: int | None = None,
    sigma: float = 0.04,
    temperature: float = 0.1,
    stop_loss_ratio: float | None = None,
    progress=None,
):
    """Adam over one self-supervised objective; returns (params, history)."""
    if kind not in PRETRAIN_KINDS:
        raise ContractError(f"unknown pretraining kind '{kind}'")
    if steps is None:
        steps = schedule.total_steps
    params = model.init(seed)
    if kind in ("type", "distance", "angle"):
        params.update(api.init_pretrain_heads(model, seed + 1))
    need_angles = model.needs_angles or kind == "angle"
    base_batch = build_batch(confs, model.cutoff, need_angles) if kind != "denoise" else None
    # corruption is drawn once: the loop trains against a fixed corrupted view
    # of the dataset rather than resampling noise per step
    noise_rng = np.random.default_rng(seed + 2)
    fixed_noise = [noise_rng.normal(0.0, sigma, c.pos.shape) for c in confs]
    state = OptimizerState.create(params)
    history = {"step": [], "train_loss": []}
    first_loss = None
    for step in range(steps):
        tape = T.Tape()
        params_t = T.lift(params, tape)
        if kind in ("type", "distance", "angle"):
            pos = tape.tensor(base_batch.pos)
            loss = masked_pretrain_loss(kind, model, params_t, base_batch, pos, seed + step)
        elif kind == "denoise":
            loss = denoise_pretrain_loss(model, params_t, confs, sigma, noise=fixed_noise)
        else:
            loss = contrastive_pretrain_loss(
                model, params_t, confs, sigma, temperature, noise=fixed_noise
            )
        keys = sorted(params)
        grads = tape.gradient(loss, [params_t[k] for k in keys])
        params = adam_step(state, params, dict(zip(keys, (g.data for g in grads))), cosine_lr(schedule, step))
        value = float(loss.data)
        history["step"].append(step)
        history["train_loss"].append(value)
        if progress is not None:
            progress(step, value)
        if first_loss is None:
            first_loss = value
        if stop_loss_ratio is not None and value <= stop_loss_ratio * first_loss:
            break
    return params, history
