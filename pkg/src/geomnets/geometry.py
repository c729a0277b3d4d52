"""Structures, cutoff graphs (open and periodic) and dataset serialization.

Edge conventions used everywhere downstream:
  * an edge row (src, dst, shift) means node `src`, sitting in the anchor
    cell, observes a neighbor: atom `dst` displaced by `shift @ lattice`
  * rel_vec = pos[dst] + shift @ lattice - pos[src], dist = |rel_vec|
  * edges are kept when 0 < dist <= cutoff (the boundary is inclusive)
  * rows are sorted by (src, dst, shift), so construction is deterministic
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError, ShapeError

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
RESIDUE_TYPE = {code: 21 + i for i, code in enumerate(AMINO_ACIDS)}


@dataclass
class Conformation:
    """One structure: atomic numbers, positions, optional cell and labels."""

    z: np.ndarray
    pos: np.ndarray
    lattice: np.ndarray | None = None
    energy: float | None = None
    forces: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=np.float64)
        if self.z.ndim != 1 or self.z.size == 0:
            raise ContractError("z must be a non-empty 1-D integer array")
        if (self.z < 1).any() or (self.z > 118).any():
            raise ContractError("atomic numbers must lie in 1..118")
        if self.pos.shape != (self.z.size, 3):
            raise ShapeError(f"pos shape {self.pos.shape} does not match {self.z.size} atoms")
        if not np.isfinite(self.pos).all():
            raise ContractError("positions must be finite")
        if self.lattice is not None:
            self.lattice = np.asarray(self.lattice, dtype=np.float64)
            if self.lattice.shape != (3, 3):
                raise ShapeError("lattice must be 3x3")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=np.float64)
            if self.forces.shape != self.pos.shape:
                raise ShapeError("forces must match positions in shape")
        if self.energy is not None:
            self.energy = float(self.energy)

    @property
    def n_atoms(self) -> int:
        return self.z.size


@dataclass
class EdgeList:
    """Directed cutoff edges over one structure."""

    src: np.ndarray
    dst: np.ndarray
    dist: np.ndarray
    rel_vec: np.ndarray
    shift: np.ndarray
    num_nodes: int
    cutoff: float

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.dist = np.asarray(self.dist, dtype=np.float64)
        self.rel_vec = np.asarray(self.rel_vec, dtype=np.float64).reshape(-1, 3)
        self.shift = np.asarray(self.shift, dtype=np.int64).reshape(-1, 3)

    @property
    def n_edges(self) -> int:
        return self.src.size


@dataclass
class PeriodicGraph:
    """Expanded periodic graph: anchor atoms plus materialized images."""

    edges: EdgeList
    z: np.ndarray
    positions: np.ndarray
    image_of: np.ndarray
    n_anchor: int


@dataclass
class AngleIndex:
    """Two-hop triplets: edge (k -> j) feeding edge (j -> i).

    `in_edge` indexes the k->j row, `out_edge` the j->i row; `angle` is the
    interior angle at the shared middle node j, in [0, pi].
    """

    in_edge: np.ndarray
    out_edge: np.ndarray
    angle: np.ndarray

    @property
    def n_triplets(self) -> int:
        return self.in_edge.size


def _sorted_edges(src, dst, shift, rel, dist, num_nodes, cutoff) -> EdgeList:
    order = np.lexsort((shift[:, 2], shift[:, 1], shift[:, 0], dst, src))
    return EdgeList(src[order], dst[order], dist[order], rel[order], shift[order], num_nodes, cutoff)


def radius_graph(pos, cutoff: float) -> EdgeList:
    """All ordered pairs with 0 < dist <= cutoff, no periodicity."""
    if cutoff <= 0:
        raise ContractError("cutoff must be positive")
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    rel = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(rel, axis=-1)
    keep = (dist > 0.0) & (dist <= cutoff)
    np.fill_diagonal(keep, False)
    src, dst = np.nonzero(keep)
    shift = np.zeros((src.size, 3), dtype=np.int64)
    return _sorted_edges(src, dst, shift, rel[src, dst], dist[src, dst], n, cutoff)


def _shift_ranges(lattice: np.ndarray, cutoff: float) -> tuple[int, int, int]:
    vol = abs(np.linalg.det(lattice))
    if vol < 1e-12:
        raise ContractError("lattice is degenerate (near-zero volume)")
    counts = []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        spacing = vol / np.linalg.norm(np.cross(lattice[j], lattice[k]))
        counts.append(int(math.ceil(cutoff / spacing)))
    return tuple(counts)


def _enumerate_shifts(lattice: np.ndarray, cutoff: float) -> np.ndarray:
    na, nb, nc = _shift_ranges(lattice, cutoff)
    return np.array(
        list(itertools.product(range(-na, na + 1), range(-nb, nb + 1), range(-nc, nc + 1))),
        dtype=np.int64,
    )


def periodic_radius_graph(conf: Conformation, cutoff: float, mode: str = "gathered"):
    """Cutoff graph under periodic boundary conditions.

    gathered: images keep the anchor atom's index; returns an EdgeList whose
    shift column records which image was seen.
    expanded: images become fresh nodes with copied types; returns a
    PeriodicGraph. Every edge keeps the anchor node as its src endpoint and
    no image-image edge is ever produced.
    """
    if cutoff <= 0:
        raise ContractError("cutoff must be positive")
    if conf.lattice is None:
        raise ContractError("conformation has no lattice")
    if mode not in ("gathered", "expanded"):
        raise ContractError(f"unknown mode '{mode}'")
    pos, lat = conf.pos, conf.lattice
    n = conf.n_atoms
    shifts = _enumerate_shifts(lat, cutoff)
    offsets = shifts.astype(np.float64) @ lat

    if mode == "gathered":
        rows = []
        for s, off in zip(shifts, offsets):
            rel = (pos[None, :, :] + off) - pos[:, None, :]
            dist = np.linalg.norm(rel, axis=-1)
            keep = (dist > 0.0) & (dist <= cutoff)
            if not s.any():
                np.fill_diagonal(keep, False)
            src, dst = np.nonzero(keep)
            if src.size:
                rows.append((src, dst, np.tile(s, (src.size, 1)), rel[src, dst], dist[src, dst]))
        if rows:
            src = np.concatenate([r[0] for r in rows])
            dst = np.concatenate([r[1] for r in rows])
            shift = np.concatenate([r[2] for r in rows])
            rel = np.concatenate([r[3] for r in rows])
            dist = np.concatenate([r[4] for r in rows])
        else:
            src = dst = np.zeros(0, dtype=np.int64)
            shift = np.zeros((0, 3), dtype=np.int64)
            rel = np.zeros((0, 3))
            dist = np.zeros(0)
        return _sorted_edges(src, dst, shift, rel, dist, n, cutoff)

    # expanded: anchors first, then one copy of every atom per nonzero shift
    image_shifts = shifts[np.any(shifts != 0, axis=1)]
    all_pos = [pos]
    image_of = [np.arange(n)]
    for off in image_shifts.astype(np.float64) @ lat:
        all_pos.append(pos + off)
        image_of.append(np.arange(n))
    all_pos = np.concatenate(all_pos, axis=0)
    image_of = np.concatenate(image_of)
    z_all = conf.z[image_of]

    rel = all_pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(rel, axis=-1)
    keep = (dist > 0.0) & (dist <= cutoff)
    src, dst = np.nonzero(keep)
    edges = _sorted_edges(
        src,
        dst,
        np.zeros((src.size, 3), dtype=np.int64),
        rel[src, dst],
        dist[src, dst],
        all_pos.shape[0],
        cutoff,
    )
    return PeriodicGraph(edges, z_all, all_pos, image_of, n)


def build_angle_index(edges: EdgeList) -> AngleIndex:
    """All two-hop triplets (k -> j, j -> i) with k not the physical i.

    The receiving row e = (src=i, dst=j) pairs with every row f =
    (src=j, dst=k) except the exact reverse image of e. The angle at j is
    between the vectors j->k and j->i.
    """
    in_rows, out_rows, angles = [], [], []
    by_src: dict[int, list[int]] = {}
    for idx in range(edges.n_edges):
        by_src.setdefault(int(edges.src[idx]), []).append(idx)
    for e in range(edges.n_edges):
        middle = int(edges.dst[e])
        for f in by_src.get(middle, ()):
            if int(edges.dst[f]) == int(edges.src[e]) and np.array_equal(
                edges.shift[f], -edges.shift[e]
            ):
                continue
            to_k = edges.rel_vec[f]
            to_i = -edges.rel_vec[e]
            cosang = np.dot(to_k, to_i) / (edges.dist[f] * edges.dist[e])
            angles.append(math.acos(min(1.0, max(-1.0, cosang))))
            in_rows.append(f)
            out_rows.append(e)
    return AngleIndex(
        np.asarray(in_rows, dtype=np.int64),
        np.asarray(out_rows, dtype=np.int64),
        np.asarray(angles, dtype=np.float64),
    )


def backbone_graph(residues, ca_positions, cutoff: float) -> tuple[Conformation, EdgeList]:
    """Residue-level graph at alpha-carbon coordinates.

    One-letter residue codes map alphabetically to synthetic node types
    21..40, clear of the real-element range used by small molecules.
    """
    codes = list(residues)
    types = []
    for i, c in enumerate(codes):
        if c not in RESIDUE_TYPE:
            raise ContractError(f"unknown residue code '{c}' at position {i}")
        types.append(RESIDUE_TYPE[c])
    conf = Conformation(np.asarray(types), np.asarray(ca_positions, dtype=np.float64))
    return conf, radius_graph(conf.pos, cutoff)


# ---------------------------------------------------------------------------
# dataset serialization (one JSON object per line)


def _conf_to_record(conf: Conformation) -> dict:
    return {
        "id": conf.id,
        "z": conf.z.tolist(),
        "pos": conf.pos.tolist(),
        "lattice": None if conf.lattice is None else conf.lattice.tolist(),
        "energy": conf.energy,
        "forces": None if conf.forces is None else conf.forces.tolist(),
    }


def _record_to_conf(rec: dict) -> Conformation:
    return Conformation(
        z=np.asarray(rec["z"]),
        pos=np.asarray(rec["pos"], dtype=np.float64),
        lattice=rec.get("lattice"),
        energy=rec.get("energy"),
        forces=rec.get("forces"),
        id=rec.get("id", ""),
    )


def save_dataset(path, confs) -> None:
    with open(path, "w") as fh:
        for conf in confs:
            fh.write(json.dumps(_conf_to_record(conf), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list[Conformation]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            try:
                out.append(_record_to_conf(rec))
            except (KeyError, ContractError, ShapeError, TypeError) as exc:
                raise ParseError(f"bad record: {exc}", line=lineno) from exc
    return out
