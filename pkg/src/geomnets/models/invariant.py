"""Distance- and angle-based message passing (rotation-invariant features).

Two stacks live here. The first passes messages gated by a learned radial
filter over each edge. The second additionally aggregates over two-hop
paths, expanding (incoming distance, interior angle) pairs in a 2-D basis
built from spherical Bessel functions and zonal harmonics.

Both produce per-node invariant scalars; energies come from sum pooling and
a bias-free linear head. Smooth cutoff behavior is obtained by multiplying
every message by the cosine envelope of the edge it depends on, so an edge
appearing at the cutoff contributes exactly zero at first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..geometry import AngleIndex
from ..tensor import MlpSpec, Tensor, init_mlp, mlp_apply
from .common import EMBED_ROWS, GraphBatch, edge_vectors, embed_nodes, readout

# ---------------------------------------------------------------------------
# radial bases


@dataclass(frozen=True)
class RadialBasisSpec:
    """Distance expansion: evenly spaced gaussians or a sinc-like series."""

    kind: str = "gaussian"
    count: int = 16
    cutoff: float = 5.0
    envelope: str = "cosine"

    def __post_init__(self):
        if self.kind not in ("gaussian", "bessel"):
            raise ContractError(f"unknown radial basis '{self.kind}'")
        if self.kind == "gaussian" and self.count < 2:
            raise ContractError("gaussian basis needs at least two centers")
        if self.count < 1:
            raise ContractError("basis needs at least one function")
        if self.cutoff <= 0:
            raise ContractError("cutoff must be positive")
        if self.envelope not in ("cosine", "none"):
            raise ContractError(f"unknown envelope '{self.envelope}'")


def cosine_envelope(d: Tensor, cutoff: float) -> Tensor:
    """Smooth switch (cos(pi d / cutoff) + 1) / 2; value and slope 0 at the cutoff."""
    return (T.cos(d * (math.pi / cutoff)) + 1.0) * 0.5


def _check_distances(d: Tensor, cutoff: float) -> None:
    if d.size and (d.data <= 0.0).any():
        raise ContractError("distances must be positive")
    if d.size and (d.data > cutoff).any():
        raise ContractError("distance beyond the basis cutoff")


def radial_basis(spec: RadialBasisSpec, d: Tensor) -> Tensor:
    """Expand distances (E,) into (E, count); differentiable."""
    _check_distances(d, spec.cutoff)
    col = T.reshape(d, (-1, 1))
    if spec.kind == "gaussian":
        centers = np.linspace(0.0, spec.cutoff, spec.count)
        gamma = 1.0 / (centers[1] - centers[0]) ** 2
        delta = col - Tensor(centers)
        out = T.exp(delta * delta * (-gamma))
    else:
        freqs = np.arange(1, spec.count + 1) * (math.pi / spec.cutoff)
        out = T.sin(T.mul(col, Tensor(freqs))) / col * math.sqrt(2.0 / spec.cutoff)
    if spec.envelope == "cosine":
        out = out * T.reshape(cosine_envelope(d, spec.cutoff), (-1, 1))
    return out


# ---------------------------------------------------------------------------
# spherical Bessel functions, their roots, and the 2-D basis

def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


def _jl_series_coeffs(l: int, terms: int = 9) -> list[float]:
    coeffs = []
    for k in range(terms):
        coeffs.append((-1.0) ** k / (2.0**k * math.factorial(k) * _double_factorial(2 * l + 2 * k + 1)))
    return coeffs


def _jl_closed(l: int, x: Tensor) -> Tensor:
    s, c = T.sin(x), T.cos(x)
    inv = T.div(1.0, x)
    if l == 0:
        return s * inv
    i2 = inv * inv
    if l == 1:
        return s * i2 - c * inv
    i3 = i2 * inv
    if l == 2:
        return s * (i3 * 3.0 - inv) - c * (i2 * 3.0)
    i4 = i3 * inv
    if l == 3:
        return s * (i4 * 15.0 - i2 * 6.0) - c * (i3 * 15.0 - inv)
    i5 = i4 * inv
    if l == 4:
        return s * (i5 * 105.0 - i3 * 45.0 + inv) - c * (i4 * 105.0 - i2 * 10.0)
    if l == 5:
        i6 = i5 * inv
        return s * (i6 * 945.0 - i4 * 420.0 + i2 * 15.0) - c * (i5 * 945.0 - i3 * 105.0 + inv)
    raise ContractError(f"spherical bessel order {l} not supported")


def _jl_series(l: int, x: Tensor) -> Tensor:
    x2 = x * x
    acc = None
    for k, coef in enumerate(_jl_series_coeffs(l)):
        term = T.power(x, float(l)) if l else Tensor(np.ones(x.shape))
        term = term * coef
        if k:
            term = term * T.power(x2, float(k))
        acc = term if acc is None else acc + term
    return acc


def spherical_jl(l: int, x: Tensor) -> Tensor:
    """Order-l spherical Bessel function of the first kind, x > 0.

    Small arguments switch to a truncated series; the closed form loses
    precision below x ~ 0.5 through cancellation.
    """
    small = x.data < 0.5
    if not small.any():
        return _jl_closed(l, x)
    if small.all():
        return _jl_series(l, x)
    mask = Tensor(small.astype(np.float64))
    safe = x + mask  # keeps 1/x bounded exactly where the closed form is masked out
    return mask * _jl_series(l, x) + (1.0 - mask) * _jl_closed(l, safe)


def _jl_np(l: int, x: float) -> float:
    return float(spherical_jl(l, Tensor(np.array([x]))).data[0])


@lru_cache(maxsize=None)
def bessel_roots(l: int, count: int) -> np.ndarray:
    """First `count` positive roots of j_l, found by scan plus bisection."""
    if count < 1:
        raise ContractError("need at least one root")
    roots = []
    step = 0.05
    x = step
    prev = _jl_np(l, x)
    while len(roots) < count:
        x_next = x + step
        cur = _jl_np(l, x_next)
        if prev == 0.0:
            roots.append(x)
        elif prev * cur < 0.0:
            lo, hi = x, x_next
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if _jl_np(l, lo) * _jl_np(l, mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            roots.append(0.5 * (lo + hi))
        x, prev = x_next, cur
        if x > 1000.0:
            raise ContractError("root scan ran away")
    return np.asarray(roots)


_ZONAL_NORM = [math.sqrt((2 * l + 1) / (4.0 * math.pi)) for l in range(6)]


def _legendre(l: int, c: Tensor) -> Tensor:
    if l == 0:
        return Tensor(np.ones(c.shape))
    if l == 1:
        return c
    c2 = c * c
    if l == 2:
        return c2 * 1.5 - 0.5
    if l == 3:
        return (c2 * 2.5 - 1.5) * c
    if l == 4:
        return c2 * c2 * (35.0 / 8.0) - c2 * (30.0 / 8.0) + 3.0 / 8.0
    raise ContractError(f"legendre degree {l} not supported")


def zonal_harmonic(l: int, cos_angle: Tensor) -> Tensor:
    """Degree-l harmonic along the polar axis, as a polynomial in cos(angle)."""
    return _legendre(l, cos_angle) * _ZONAL_NORM[l]


def spherical_basis_rows(
    l_max: int, n_max: int, cutoff: float, d: Tensor, cos_angle: Tensor
) -> Tensor:
    """2-D (distance, angle) expansion, (rows, (l_max+1)*n_max), degree-major.

    Entry (l, n) is sqrt(2 / (cutoff^3 j_{l+1}(z_ln)^2)) j_l(z_ln d/cutoff)
    times the degree-l zonal harmonic of the angle. Differentiable in both
    inputs; the angle enters only through its cosine.
    """
    if not (0 <= l_max <= 4):
        raise ContractError("degree cap for the 2-D basis is 0..4")
    if n_max < 1:
        raise ContractError("n_max must be positive")
    _check_distances(d, cutoff)
    cols = []
    for l in range(l_max + 1):
        roots = bessel_roots(l, n_max)
        ang = T.reshape(zonal_harmonic(l, cos_angle), (-1, 1))
        for n in range(n_max):
            z = roots[n]
            norm_const = math.sqrt(2.0 / (cutoff**3 * _jl_np(l + 1, z) ** 2))
            radial = spherical_jl(l, d * (z / cutoff)) * norm_const
            cols.append(T.reshape(radial, (-1, 1)) * ang)
    return T.concat(cols, axis=1)


def spherical_basis_2d(l_max: int, n_max: int, d: float, cutoff: float, angle: float) -> np.ndarray:
    """Point evaluation of the 2-D basis at one (distance, angle) pair."""
    if not (0.0 <= angle <= math.pi + 1e-12):
        raise ContractError("angle must lie in [0, pi]")
    rows = spherical_basis_rows(
        l_max,
        n_max,
        cutoff,
        Tensor(np.array([d])),
        Tensor(np.array([math.cos(angle)])),
    )
    return rows.data[0]


# ---------------------------------------------------------------------------
# edge-filtered stack (single hop)


@dataclass(frozen=True)
class SchNetSpec:
    hidden: int = 64
    layers: int = 3
    basis: RadialBasisSpec = field(default_factory=RadialBasisSpec)
    readout_mode: str = "sum"

    def __post_init__(self):
        if self.hidden < 1 or self.layers < 1:
            raise ContractError("hidden width and layer count must be positive")

    def filter_mlp(self) -> MlpSpec:
        return MlpSpec((self.basis.count, self.hidden, self.hidden))


def init_schnet(spec: SchNetSpec, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {"embed": T.glorot_uniform(rng, EMBED_ROWS, spec.hidden)}
    for i in range(spec.layers):
        params.update(init_mlp(spec.filter_mlp(), rng, f"layer{i}.filter"))
        params[f"layer{i}.win"] = T.glorot_uniform(rng, spec.hidden, spec.hidden)
        params[f"layer{i}.wout"] = T.glorot_uniform(rng, spec.hidden, spec.hidden)
    params["head.w"] = T.glorot_uniform(rng, spec.hidden, 1)
    return params


def schnet_layer(
    spec: SchNetSpec,
    params: dict[str, Tensor],
    prefix: str,
    h: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    rbf: Tensor,
    env: Tensor,
) -> Tensor:
    """One residual interaction: h_i <- h_i + sum_j filter(d_ij) * (W h_j) W'.

    The filter network output is multiplied by the envelope so a message
    fades to zero as its edge reaches the cutoff; with all-zero filter
    weights the update is exactly the identity.
    """
    filt = mlp_apply(spec.filter_mlp(), params, rbf, f"{prefix}.filter")
    filt = filt * T.reshape(env, (-1, 1))
    msg = T.matmul(T.gather(h, dst), params[f"{prefix}.win"]) * filt
    agg = T.scatter_sum(msg, src, h.shape[0])
    return h + T.matmul(agg, params[f"{prefix}.wout"])


def schnet_node_features(
    spec: SchNetSpec, params: dict[str, Tensor], batch: GraphBatch, pos: Tensor
) -> Tensor:
    _, dist = edge_vectors(pos, batch)
    rbf = radial_basis(spec.basis, dist)
    env = cosine_envelope(dist, spec.basis.cutoff)
    h = embed_nodes(params["embed"], batch.z)
    for i in range(spec.layers):
        h = schnet_layer(spec, params, f"layer{i}", h, batch.src, batch.dst, rbf, env)
    return h


def schnet_energy(
    spec: SchNetSpec, params: dict[str, Tensor], batch: GraphBatch, pos: Tensor
) -> Tensor:
    h = schnet_node_features(spec, params, batch, pos)
    return readout(params["head.w"], h, batch.node_graph, batch.n_graphs, spec.readout_mode)


# ---------------------------------------------------------------------------
# two-hop directional stack


@dataclass(frozen=True)
class DimeNetSpec:
    hidden: int = 32
    blocks: int = 2
    basis: RadialBasisSpec = field(default_factory=lambda: RadialBasisSpec(kind="bessel", count=8))
    sbf_l_max: int = 2
    sbf_n_max: int = 3
    readout_mode: str = "sum"

    def __post_init__(self):
        if self.hidden < 1 or self.blocks < 1:
            raise ContractError("hidden width and block count must be positive")
        if not (0 <= self.sbf_l_max <= 3):
            raise ContractError("sbf degree cap is 0..3")
        if self.sbf_n_max < 1:
            raise ContractError("sbf needs at least one radial order")

    @property
    def sbf_width(self) -> int:
        return (self.sbf_l_max + 1) * self.sbf_n_max

    def embed_mlp(self) -> MlpSpec:
        return MlpSpec((2 * self.hidden + self.basis.count, self.hidden, self.hidden))

    def block_mlp(self) -> MlpSpec:
        return MlpSpec((self.hidden + self.basis.count + self.sbf_width, self.hidden, self.hidden))

    def out_mlp(self) -> MlpSpec:
        return MlpSpec((self.hidden, self.hidden, self.hidden))


def init_dimenet(spec: DimeNetSpec, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {"embed": T.glorot_uniform(rng, EMBED_ROWS, spec.hidden)}
    params.update(init_mlp(spec.embed_mlp(), rng, "m0"))
    for i in range(spec.blocks):
        params.update(init_mlp(spec.block_mlp(), rng, f"block{i}"))
    params.update(init_mlp(spec.out_mlp(), rng, "edge_out"))
    params["head.w"] = T.glorot_uniform(rng, spec.hidden, 1)
    return params


def dimenet_layer(
    spec: DimeNetSpec,
    params: dict[str, Tensor],
    prefix: str,
    m: Tensor,
    rbf: Tensor,
    sbf_rows: Tensor,
    env_in: Tensor,
    angles: AngleIndex,
    n_edges: int,
) -> Tensor:
    """Replace each edge message by its two-hop aggregation.

    For the receiving edge (j -> i), every incoming edge (k -> j) except the
    reverse contributes one network evaluation of (message, distance
    expansion of d_ji, 2-D expansion of (d_kj, angle at j)), weighted by the
    incoming edge's envelope. Edges with no incoming paths become zero.
    """
    if angles.n_triplets == 0:
        return Tensor(np.zeros((n_edges, spec.hidden)))
    inp = T.concat(
        [T.gather(m, angles.out_edge), T.gather(rbf, angles.out_edge), sbf_rows], axis=1
    )
    term = mlp_apply(spec.block_mlp(), params, inp, prefix)
    term = term * T.reshape(env_in, (-1, 1))
    return T.scatter_sum(term, angles.out_edge, n_edges)


def _triplet_geometry(
    rel: Tensor, dist: Tensor, angles: AngleIndex
) -> tuple[Tensor, Tensor]:
    """Incoming-edge lengths and interior-angle cosines, differentiably."""
    to_k = T.gather(rel, angles.in_edge)
    to_i = T.gather(rel, angles.out_edge) * -1.0
    d_in = T.gather(dist, angles.in_edge)
    d_out = T.gather(dist, angles.out_edge)
    cos_angle = T.sum_(to_k * to_i, axis=1) / (d_in * d_out)
    return d_in, cos_angle


def dimenet_messages(
    spec: DimeNetSpec, params: dict[str, Tensor], batch: GraphBatch, pos: Tensor
) -> tuple[Tensor, Tensor]:
    if batch.angles is None:
        raise ContractError("batch was built without angle triplets")
    rel, dist = edge_vectors(pos, batch)
    rbf = radial_basis(spec.basis, dist)
    h = embed_nodes(params["embed"], batch.z)
    m = mlp_apply(
        spec.embed_mlp(),
        params,
        T.concat([T.gather(h, batch.dst), T.gather(h, batch.src), rbf], axis=1),
        "m0",
    )
    if batch.angles.n_triplets:
        d_in, cos_angle = _triplet_geometry(rel, dist, batch.angles)
        sbf_rows = spherical_basis_rows(
            spec.sbf_l_max, spec.sbf_n_max, spec.basis.cutoff, d_in, cos_angle
        )
        env_in = cosine_envelope(d_in, spec.basis.cutoff)
    else:
        sbf_rows = Tensor(np.zeros((0, spec.sbf_width)))
        env_in = Tensor(np.zeros(0))
    for i in range(spec.blocks):
        m = dimenet_layer(
            spec, params, f"block{i}", m, rbf, sbf_rows, env_in, batch.angles, batch.n_edges
        )
    return m, dist


def dimenet_node_features(
    spec: DimeNetSpec, params: dict[str, Tensor], batch: GraphBatch, pos: Tensor
) -> Tensor:
    m, dist = dimenet_messages(spec, params, batch, pos)
    env = T.reshape(cosine_envelope(dist, spec.basis.cutoff), (-1, 1))
    per_edge = mlp_apply(spec.out_mlp(), params, m, "edge_out") * env
    return T.scatter_sum(per_edge, batch.src, batch.n_nodes)


def dimenet_energy(
    spec: DimeNetSpec, params: dict[str, Tensor], batch: GraphBatch, pos: Tensor
) -> Tensor:
    h = dimenet_node_features(spec, params, batch, pos)
    return readout(params["head.w"], h, batch.node_graph, batch.n_graphs, spec.readout_mode)
