"""Vector-frame equivariant models and per-edge orthonormal frames.

Two stacks: one updates coordinates directly with gated difference vectors
(messages see squared distances only), the other carries multi-channel
3-vectors next to scalars and keeps equivariance by combining vectors
strictly linearly or through invariant gates.

Edge frames orthonormalize (difference, cross product, their cross); the
middle axis is a pseudovector, which makes scalarized components along it
flip sign under point reflection while the other two stay put.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..errors import ContractError, ShapeError
from ..geometry import EdgeList
from ..tensor import MlpSpec, Tensor, init_mlp, mlp_apply
from .common import EMBED_ROWS, GraphBatch, edge_vectors, embed_nodes, readout
from .invariant import RadialBasisSpec, radial_basis

# ---------------------------------------------------------------------------
# coordinate-updating stack


@dataclass(frozen=True)
class EgnnSpec:
    hidden: int = 32
    layers: int = 3
    update_coords: bool = True
    readout_mode: str = "sum"

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1:
            raise ContractError("hidden width and layer count must be positive")

    def message_mlp(self) -> MlpSpec:
        return MlpSpec((2 * self.hidden + 1, self.hidden, self.hidden))

    def gate_mlp(self) -> MlpSpec:
        return MlpSpec((self.hidden, self.hidden, 1))

    def update_mlp(self) -> MlpSpec:
        return MlpSpec((2 * self.hidden, self.hidden, self.hidden))


def init_egnn(spec: EgnnSpec, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {"embed": T.glorot_uniform(rng, EMBED_ROWS, spec.hidden)}
    for i in range(spec.layers):
        params.update(init_mlp(spec.message_mlp(), rng, f"layer{i}.msg"))
        params.update(init_mlp(spec.gate_mlp(), rng, f"layer{i}.gate"))
        params.update(init_mlp(spec.update_mlp(), rng, f"layer{i}.upd"))
    params["head.w"] = T.glorot_uniform(rng, spec.hidden, 1)
    return params


def egnn_layer_at(
    spec: EgnnSpec,
    params: dict,
    prefix: str,
    h: Tensor,
    x: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    shift: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """One block: message from (h_i, h_j, squared distance), gated coordinate
    update along the difference vector, then the node update network."""
    if h.ndim != 2 or h.shape[1] != spec.hidden:
        raise ShapeError(f"node features {h.shape} do not match hidden={spec.hidden}")
    if x.shape != (h.shape[0], 3):
        raise ShapeError(f"positions {x.shape} do not match node count {h.shape[0]}")
    n = h.shape[0]
    x_j = T.gather(x, dst)
    if shift is not None:
        x_j = x_j + Tensor(shift)
    diff = T.gather(x, src) - x_j
    d2 = T.sum_(diff * diff, axis=1, keepdims=True)
    m = mlp_apply(
        spec.message_mlp(),
        params,
        T.concat([T.gather(h, src), T.gather(h, dst), d2], axis=1),
        f"{prefix}.msg",
    )
    if spec.update_coords:
        gate = mlp_apply(spec.gate_mlp(), params, m, f"{prefix}.gate")
        x = x + T.scatter_sum(diff * gate, src, n)
    agg = T.scatter_sum(m, src, n)
    h = mlp_apply(spec.update_mlp(), params, T.concat([h, agg], axis=1), f"{prefix}.upd")
    return h, x


def egnn_layer(
    spec: EgnnSpec, params: dict, h: Tensor, x: Tensor, edges: EdgeList
) -> tuple[Tensor, Tensor]:
    return egnn_layer_at(spec, params, "layer", h, x, edges.src, edges.dst)


def egnn_forward(
    spec: EgnnSpec, params: dict, batch: GraphBatch, pos: Tensor
) -> tuple[Tensor, Tensor]:
    h = embed_nodes(params["embed"], batch.z)
    x = pos
    for i in range(spec.layers):
        h, x = egnn_layer_at(
            spec, params, f"layer{i}", h, x, batch.src, batch.dst, batch.shift_offset
        )
    return h, x


def egnn_energy(spec: EgnnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    h, _ = egnn_forward(spec, params, batch, pos)
    return readout(params["head.w"], h, batch.node_graph, batch.n_graphs, spec.readout_mode)


def egnn_node_features(spec: EgnnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    h, _ = egnn_forward(spec, params, batch, pos)
    return h


def egnn_node_vectors(spec: EgnnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    """Coordinate displacement accumulated over the stack (equivariant)."""
    _, x = egnn_forward(spec, params, batch, pos)
    return x - pos


# ---------------------------------------------------------------------------
# scalar + multi-channel-vector stack


@dataclass(frozen=True)
class PainnSpec:
    channels: int = 32
    layers: int = 3
    basis: RadialBasisSpec = field(
        default_factory=lambda: RadialBasisSpec(kind="bessel", count=20)
    )
    readout_mode: str = "sum"

    def __post_init__(self):
        if self.channels < 1 or self.layers < 1:
            raise ContractError("channel and layer counts must be positive")

    def message_mlp(self) -> MlpSpec:
        return MlpSpec((self.channels, self.channels, 3 * self.channels))

    def update_mlp(self) -> MlpSpec:
        return MlpSpec((2 * self.channels, self.channels, 3 * self.channels))


def init_painn(spec: PainnSpec, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    f = spec.channels
    params = {"embed": T.glorot_uniform(rng, EMBED_ROWS, f)}
    for i in range(spec.layers):
        params.update(init_mlp(spec.message_mlp(), rng, f"layer{i}.phi"))
        # bias-free so the filter (and thus every message) vanishes at the cutoff
        params[f"layer{i}.filt.w"] = T.glorot_uniform(rng, spec.basis.count, 3 * f)
        params[f"layer{i}.upd.u"] = T.glorot_uniform(rng, f, f)
        params[f"layer{i}.upd.v"] = T.glorot_uniform(rng, f, f)
        params.update(init_mlp(spec.update_mlp(), rng, f"layer{i}.upd"))
    params["head.w"] = T.glorot_uniform(rng, f, 1)
    params["vec_head.mix"] = T.glorot_uniform(rng, f, 1)
    return params


def _channel_mix(v: Tensor, w: Tensor) -> Tensor:
    """(N, F, 3) x (F, F') -> (N, F', 3), mixing channels per component."""
    return T.transpose2(T.matmul(T.transpose2(v), w))


def painn_layer_at(
    spec: PainnSpec,
    params: dict,
    prefix: str,
    s: Tensor,
    v: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    rel: Tensor,
    dist: Tensor,
) -> tuple[Tensor, Tensor]:
    f = spec.channels
    n = s.shape[0]
    if s.ndim != 2 or s.shape[1] != f:
        raise ShapeError(f"scalar features {s.shape} do not match channels={f}")
    if v.shape != (n, f, 3):
        raise ShapeError(f"vector features {v.shape} do not match ({n}, {f}, 3)")

    # message block: invariant gates from (filter(d) * phi(s_j)) split three ways
    if rel.shape[0]:
        rbf = radial_basis(spec.basis, dist)
        gates = T.matmul(rbf, params[f"{prefix}.filt.w"]) * mlp_apply(
            spec.message_mlp(), params, T.gather(s, dst), f"{prefix}.phi"
        )
        g_ss, g_sv, g_vv = gates[:, 0:f], gates[:, f : 2 * f], gates[:, 2 * f : 3 * f]
        unit = rel / T.reshape(dist, (-1, 1))
        dv = T.gather(v, dst) * T.reshape(g_vv, (-1, f, 1)) + T.reshape(
            unit, (-1, 1, 3)
        ) * T.reshape(g_sv, (-1, f, 1))
        s = s + T.scatter_sum(g_ss, src, n)
        v = v + T.reshape(T.scatter_sum(T.reshape(dv, (-1, 3 * f)), src, n), (n, f, 3))

    # update block: node-local, vectors enter only via norms and dot products
    u_mix = _channel_mix(v, params[f"{prefix}.upd.u"])
    v_mix = _channel_mix(v, params[f"{prefix}.upd.v"])
    v_norm = T.norm(v_mix, axis=2, eps=1e-12)
    b = mlp_apply(spec.update_mlp(), params, T.concat([s, v_norm], axis=1), f"{prefix}.upd")
    b_ss, b_sv, b_vv = b[:, 0:f], b[:, f : 2 * f], b[:, 2 * f : 3 * f]
    dot = T.sum_(u_mix * v_mix, axis=2)
    s = s + b_ss + b_sv * dot
    v = v + u_mix * T.reshape(b_vv, (n, f, 1))
    return s, v


def painn_layer(
    spec: PainnSpec, params: dict, s: Tensor, v: Tensor, edges: EdgeList
) -> tuple[Tensor, Tensor]:
    return painn_layer_at(
        spec, params, "layer", s, v, edges.src, edges.dst, Tensor(edges.rel_vec), Tensor(edges.dist)
    )


def painn_forward(
    spec: PainnSpec, params: dict, batch: GraphBatch, pos: Tensor
) -> tuple[Tensor, Tensor]:
    rel, dist = edge_vectors(pos, batch)
    s = embed_nodes(params["embed"], batch.z)
    v = Tensor(np.zeros((batch.n_nodes, spec.channels, 3)))
    for i in range(spec.layers):
        s, v = painn_layer_at(spec, params, f"layer{i}", s, v, batch.src, batch.dst, rel, dist)
    return s, v


def painn_energy(spec: PainnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    s, _ = painn_forward(spec, params, batch, pos)
    return readout(params["head.w"], s, batch.node_graph, batch.n_graphs, spec.readout_mode)


def painn_node_features(spec: PainnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    s, _ = painn_forward(spec, params, batch, pos)
    return s


def painn_node_vectors(spec: PainnSpec, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
    _, v = painn_forward(spec, params, batch, pos)
    return T.reshape(_channel_mix(v, params["vec_head.mix"]), (batch.n_nodes, 3))


# ---------------------------------------------------------------------------
# per-edge orthonormal frames and scalarization


@dataclass(frozen=True)
class EdgeFrame:
    """Right-handed orthonormal triple; e2 is a pseudovector (cross product)."""

    e1: np.ndarray
    e2: np.ndarray
    e3: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        basis = np.stack([self.e1, self.e2, self.e3])
        if np.abs(basis @ basis.T - np.eye(3)).max() > 1e-10:
            raise ContractError("frame is not orthonormal")
        if np.abs(np.cross(self.e1, self.e2) - self.e3).max() > 1e-10:
            raise ContractError("frame is not right-handed")


def build_edge_frame(x_i, x_j, centered: bool = True) -> EdgeFrame:
    """Frame from a position pair: normalized difference, normalized cross
    product, and their cross.

    `centered` documents the caller's promise that positions are given
    relative to the system centroid (the cross product is origin-sensitive).
    A collinear pair (cross norm < 1e-10) cannot support this construction;
    the frame is then completed deterministically by one Gram-Schmidt step
    on the unit axis with the smallest |e1| component and flagged degenerate.
    """
    x_i = np.asarray(x_i, dtype=np.float64).reshape(3)
    x_j = np.asarray(x_j, dtype=np.float64).reshape(3)
    diff = x_i - x_j
    d = np.linalg.norm(diff)
    if d < 1e-12:
        raise ContractError("coincident points have no frame")
    e1 = diff / d
    cross = np.cross(x_i, x_j)
    norm = np.linalg.norm(cross)
    degenerate = norm < 1e-10
    if degenerate:
        axis = np.zeros(3)
        axis[np.argmin(np.abs(e1))] = 1.0
        raw = axis - (axis @ e1) * e1
        e2 = raw / np.linalg.norm(raw)
    else:
        e2 = cross / norm
    return EdgeFrame(e1, e2, np.cross(e1, e2), degenerate)


def scalarize(r, frame: EdgeFrame) -> np.ndarray:
    """Project a vector onto the frame axes; invariant under co-rotation."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    return np.array([frame.e1 @ r, frame.e2 @ r, frame.e3 @ r])
