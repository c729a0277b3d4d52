"""One handle per model family: construction from a config dict, parameter
init, and the energy / per-node scalar / per-node vector entry points that
training, pretraining, and the CLI share.

The `leaky` family is a deliberately broken negative control: it adds raw
coordinates into the scalar head, so every symmetry check must flag it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..tensor import Tensor
from . import invariant, spherical, vector
from .common import GraphBatch, readout

FAMILIES = ("schnet", "dimenet", "tfn", "se3attn", "egnn", "painn", "leaky")


@dataclass(frozen=True)
class ModelHandle:
    """Family tag plus its spec; all entry points dispatch on the tag."""

    family: str
    spec: Any

    @property
    def cutoff(self) -> float:
        if self.family in ("schnet", "dimenet", "leaky"):
            return self.spec.basis.cutoff
        if self.family in ("tfn", "se3attn"):
            return self.spec.radial.cutoff
        if self.family == "painn":
            return self.spec.basis.cutoff
        raise ContractError("egnn carries no basis; build the handle via model_from_config")

    @property
    def needs_angles(self) -> bool:
        return self.family == "dimenet"

    @property
    def scalar_width(self) -> int:
        if self.family in ("schnet", "dimenet", "egnn", "leaky"):
            return self.spec.hidden
        if self.family in ("tfn", "se3attn"):
            return self.spec.scalar_channels
        return self.spec.channels

    @property
    def has_vector_output(self) -> bool:
        return self.family in ("tfn", "se3attn", "egnn", "painn")

    def init(self, seed: int) -> dict[str, np.ndarray]:
        if self.family in ("schnet", "leaky"):
            params = invariant.init_schnet(self.spec, seed)
            if self.family == "leaky":
                rng = np.random.default_rng(seed + 1)
                params["leak.w"] = T.glorot_uniform(rng, 3, self.spec.hidden)
            return params
        if self.family == "dimenet":
            return invariant.init_dimenet(self.spec, seed)
        if self.family in ("tfn", "se3attn"):
            return spherical.init_steerable(self.spec, seed)
        if self.family == "egnn":
            return vector.init_egnn(self.spec, seed)
        return vector.init_painn(self.spec, seed)

    def node_scalars(self, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
        if self.family == "schnet":
            return invariant.schnet_node_features(self.spec, params, batch, pos)
        if self.family == "leaky":
            h = invariant.schnet_node_features(self.spec, params, batch, pos)
            return h + T.matmul(pos, params["leak.w"])
        if self.family == "dimenet":
            return invariant.dimenet_node_features(self.spec, params, batch, pos)
        if self.family in ("tfn", "se3attn"):
            return spherical.steerable_node_scalars(self.spec, params, batch, pos)
        if self.family == "egnn":
            return vector.egnn_node_features(self.spec, params, batch, pos)
        return vector.painn_node_features(self.spec, params, batch, pos)

    def energy(self, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
        if self.family == "schnet":
            return invariant.schnet_energy(self.spec, params, batch, pos)
        if self.family == "dimenet":
            return invariant.dimenet_energy(self.spec, params, batch, pos)
        if self.family in ("tfn", "se3attn"):
            return spherical.steerable_energy(self.spec, params, batch, pos)
        if self.family == "egnn":
            return vector.egnn_energy(self.spec, params, batch, pos)
        if self.family == "painn":
            return vector.painn_energy(self.spec, params, batch, pos)
        h = self.node_scalars(params, batch, pos)
        return readout(params["head.w"], h, batch.node_graph, batch.n_graphs, "sum")

    def node_vectors(self, params: dict, batch: GraphBatch, pos: Tensor) -> Tensor:
        if self.family in ("tfn", "se3attn"):
            return spherical.steerable_node_vectors(self.spec, params, batch, pos)
        if self.family == "egnn":
            return vector.egnn_node_vectors(self.spec, params, batch, pos)
        if self.family == "painn":
            return vector.painn_node_vectors(self.spec, params, batch, pos)
        raise ContractError(f"family '{self.family}' has no equivariant vector output")


def model_from_config(config: dict) -> ModelHandle:
    """Build a handle from the JSON-style config mapping.

    Common keys: family, hidden, layers, cutoff, basis {kind, count, envelope}.
    Steerable families read scalar/vector/tensor channel counts instead of
    hidden; egnn honors update_coords.
    """
    if "family" not in config:
        raise ContractError("model config needs a 'family' key")
    family = config["family"]
    if family not in FAMILIES:
        raise ContractError(f"unknown model family '{family}'")
    cutoff = float(config.get("cutoff", 5.0))
    basis_cfg = dict(config.get("basis", {}))
    basis_cfg.setdefault("cutoff", cutoff)

    def basis(default_kind: str, default_count: int) -> invariant.RadialBasisSpec:
        return invariant.RadialBasisSpec(
            kind=basis_cfg.get("kind", default_kind),
            count=int(basis_cfg.get("count", default_count)),
            cutoff=float(basis_cfg["cutoff"]),
            envelope=basis_cfg.get("envelope", "cosine"),
        )

    hidden = int(config.get("hidden", 32))
    layers = int(config.get("layers", 2))
    if family in ("schnet", "leaky"):
        spec = invariant.SchNetSpec(hidden=hidden, layers=layers, basis=basis("gaussian", 16))
    elif family == "dimenet":
        spec = invariant.DimeNetSpec(
            hidden=hidden,
            blocks=layers,
            basis=basis("bessel", 8),
            sbf_l_max=int(config.get("sbf_l_max", 2)),
            sbf_n_max=int(config.get("sbf_n_max", 3)),
        )
    elif family in ("tfn", "se3attn"):
        spec = spherical.SteerableModelSpec(
            family=family,
            scalar_channels=int(config.get("scalar_channels", 8)),
            vector_channels=int(config.get("vector_channels", 4)),
            tensor_channels=int(config.get("tensor_channels", 2)),
            layers=layers,
            radial=basis("gaussian", 8),
            radial_hidden=int(config.get("radial_hidden", 8)),
        )
    elif family == "egnn":
        spec = vector.EgnnSpec(
            hidden=hidden,
            layers=layers,
            update_coords=bool(config.get("update_coords", True)),
        )
        return _EgnnHandle(family=family, spec=spec, _cutoff=cutoff)
    else:
        spec = vector.PainnSpec(channels=hidden, layers=layers, basis=basis("bessel", 16))
    return ModelHandle(family=family, spec=spec)


@dataclass(frozen=True)
class _EgnnHandle(ModelHandle):
    """EGNN has no radial basis, so the graph cutoff rides on the handle."""

    _cutoff: float = 5.0

    @property
    def cutoff(self) -> float:
        return self._cutoff


def init_pretrain_heads(handle: ModelHandle, seed: int) -> dict[str, np.ndarray]:
    """Heads for the self-supervised objectives, keyed apart from the trunk."""
    rng = np.random.default_rng(seed)
    d = handle.scalar_width
    params = {"type_head.w": T.glorot_uniform(rng, d, 118)}
    params.update(T.init_mlp(T.MlpSpec((2 * d, d, 1)), rng, "dist_head"))
    params.update(T.init_mlp(T.MlpSpec((3 * d, d, 1)), rng, "angle_head"))
    return params
