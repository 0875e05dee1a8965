"""Supervised training of the coordinate transformation network.

The model is a small tanh MLP (x, y) -> (xi, eta), optionally conditioned on
a per-shape feature vector for family training.  The loss weights boundary
pairs more heavily (lambda, default 10) so mapped boundary points stay on the
reference-square edges.  After training the map is audited: root-mean-square
errors over interior and boundary pairs, the largest normal deviation of
mapped boundary points from their reference edge, and the fraction of
audited points with positive Jacobian determinant.  A mapping is usable for
PDE solving only when that fraction is exactly 1 and the normal deviation is
below 0.5% of the reference-domain size.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import net
from .errors import ConfigurationError, DivergenceError, GateError
from .geometry import DomainSpec, PointPairSet, sample_domain

Array = np.ndarray

REFERENCE_SIZE = 2.0  # edge length of [-1, 1]^2
GATE_EMAX_FRACTION = 0.005


@dataclass
class MappingModel:
    """Trained transformation with queryable Jacobian and Hessian fields.

    Physical inputs are min-max normalised (per-axis affine, fitted on the
    training pairs) before entering the network, so elongated domains do not
    saturate the tanh units; Jacobians and Hessians chain through the affine
    factors.
    """

    mlp: net.Mlp
    feature_dim: int = 0
    family_ranges: dict = field(default_factory=dict)
    features: Array = None    # active feature vector for feature_dim > 0
    in_shift: Array = None    # (2,) affine input normalisation
    in_scale: Array = None    # (2,)

    def __post_init__(self):
        if self.mlp.layer_dims[-1] != 2:
            raise ConfigurationError("mapping output dimension must be 2")
        if self.mlp.layer_dims[0] != 2 + self.feature_dim:
            raise ConfigurationError("mapping input dim must be 2 + feature_dim")
        if self.in_shift is None:
            self.in_shift = np.zeros(2)
        if self.in_scale is None:
            self.in_scale = np.ones(2)
        self.in_shift = np.asarray(self.in_shift, dtype=float)
        self.in_scale = np.asarray(self.in_scale, dtype=float)

    def with_features(self, features: Array) -> "MappingModel":
        return MappingModel(self.mlp, self.feature_dim, self.family_ranges,
                            np.asarray(features, dtype=float),
                            self.in_shift, self.in_scale)

    def _inputs(self, pts: Array) -> Array:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        pts = (pts - self.in_shift) * self.in_scale
        if self.feature_dim == 0:
            return pts
        if self.features is None:
            raise ConfigurationError("feature-conditioned mapping needs with_features()")
        feats = np.broadcast_to(self.features, (len(pts), self.feature_dim))
        return np.concatenate([pts, feats], axis=1)

    def map(self, pts: Array) -> Array:
        return net.forward(self.mlp, self._inputs(pts))

    def bundle(self, pts: Array) -> net.EvalBundle:
        """Value/Jacobian/Hessian with respect to the raw (x, y) inputs."""
        full = net.forward_bundle(self.mlp, self._inputs(pts))
        s = self.in_scale
        jac = full.jacobian[:, :, :2] * s[None, None, :]
        hess = full.hessian[:, :, :2, :2] * (s[:, None] * s[None, :])[None, None]
        return net.EvalBundle(full.value, jac, hess)

    def jacobian(self, pts: Array) -> Array:
        return self.bundle(pts).jacobian

    def hessian(self, pts: Array) -> Array:
        return self.bundle(pts).hessian


@dataclass
class MappingMetrics:
    rmse_in: float
    rmse_bd: float
    e_max: float
    det_ratio: float
    train_seconds: float = 0.0

    def csv_row(self, case: str) -> str:
        from .geometry import fmt
        return ",".join([case, fmt(self.rmse_in), fmt(self.rmse_bd), fmt(self.e_max),
                         fmt(self.det_ratio), fmt(self.train_seconds)])


METRICS_HEADER = "case,rmse_in,rmse_bd,e_max,det_ratio,seconds"


@dataclass
class MapTrainConfig:
    epochs: int = 5000
    lr0: float = 1e-3
    lr_min: float = 1e-5
    hidden: tuple = (128, 128)
    activation: str = "tanh"
    seed: int = 0
    lam: float = 10.0
    log_every: int = 50


def mapping_loss(model: MappingModel, pairs: PointPairSet, lam: float):
    """Mean squared interior error + lambda * mean squared boundary error."""
    if lam <= 0:
        raise ConfigurationError("boundary weight lambda must be positive")
    in_mask = ~pairs.is_boundary
    if not in_mask.any() or not pairs.is_boundary.any():
        raise ConfigurationError("pairs must contain interior and boundary points")
    pred = model.map(pairs.physical)
    err = np.sum((pred - pairs.reference) ** 2, axis=1)
    return float(err[in_mask].mean() + lam * err[pairs.is_boundary].mean())


def train_mapping(pairs: PointPairSet, lam: float = 10.0,
                  config: MapTrainConfig = None, features: Array = None,
                  feature_dim: int = 0, family_ranges: dict = None):
    """Minimise the boundary-weighted pair loss with Adam + cosine schedule.

    `features` is an (n, F) per-pair conditioning block for family training.
    Returns the model and a per-epoch loss history (logged every
    `config.log_every` epochs).
    """
    config = config or MapTrainConfig()
    if lam <= 0:
        raise ConfigurationError("boundary weight lambda must be positive")
    in_mask = ~pairs.is_boundary
    bd_mask = pairs.is_boundary
    if not in_mask.any() or not bd_mask.any():
        raise ConfigurationError("pairs must contain interior and boundary points")

    lo = pairs.physical.min(axis=0)
    hi = pairs.physical.max(axis=0)
    in_shift = 0.5 * (lo + hi)
    in_scale = 2.0 / np.maximum(hi - lo, 1e-12)
    inputs = (pairs.physical - in_shift) * in_scale
    if feature_dim:
        if features is None or features.shape != (len(inputs), feature_dim):
            raise ConfigurationError("feature block must be (n_pairs, feature_dim)")
        inputs = np.concatenate([inputs, features], axis=1)
    target = pairs.reference

    dims = [2 + feature_dim, *config.hidden, 2]
    mlp = net.init_mlp(dims, config.activation, seed=config.seed)
    state = net.AdamState.for_params(mlp.flat_params())
    history = []
    last_good = [w.copy() for w in mlp.flat_params()]
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        params = net.param_nodes(mlp)
        pred = net.forward_graph(params, config.activation, inputs)
        err = net.nsum(net.mul(pred - net.Node(target), pred - net.Node(target)), axis=1)
        loss = net.nmean(net.getitem(err, in_mask)) \
            + net.mul(net.nmean(net.getitem(err, bd_mask)), lam)
        lval = float(loss.val)
        if not np.isfinite(lval):
            mlp.set_flat_params(last_good)
            raise DivergenceError("mapping loss became non-finite",
                                  diagnostics={"epoch": epoch, "history": history})
        grads = net.backprop_scalar(loss, params)
        lr = net.cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)
        mlp.set_flat_params(net.adam_step(mlp.flat_params(), grads, state, lr))
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            history.append((epoch, lval))
            last_good = [w.copy() for w in mlp.flat_params()]
    seconds = time.perf_counter() - t0
    model = MappingModel(mlp, feature_dim, family_ranges or {},
                         in_shift=in_shift, in_scale=in_scale)
    return model, {"loss": history, "seconds": seconds}


def eval_metrics(model: MappingModel, pairs: PointPairSet,
                 normals: Array = None, det_points: Array = None,
                 train_seconds: float = 0.0) -> MappingMetrics:
    """RMSE over interior/boundary pairs, max normal deviation, det ratio.

    The normal deviation projects the mapping error of each boundary point
    on its reference-edge outward normal, so tangential sliding along the
    edge is not penalised.
    """
    normals = pairs.ref_normals if normals is None else normals
    if normals is None or not len(normals):
        raise ConfigurationError("boundary normals are required for e_max")
    pred = model.map(pairs.physical)
    diff = pred - pairs.reference
    sq = np.sum(diff ** 2, axis=1)
    in_mask = ~pairs.is_boundary
    bd_mask = pairs.is_boundary
    rmse_in = float(np.sqrt(sq[in_mask].mean()))
    rmse_bd = float(np.sqrt(sq[bd_mask].mean()))
    e_max = float(np.max(np.abs(np.sum(normals[bd_mask] * diff[bd_mask], axis=1))))
    pts = det_points if det_points is not None else pairs.physical[in_mask]
    ratio = det_ratio(model, pts)
    return MappingMetrics(rmse_in, rmse_bd, e_max, ratio, train_seconds)


def jacobian_field(model: MappingModel, pts: Array):
    """Per-point 2x2 Jacobians and their determinants."""
    jac = model.jacobian(pts)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    return jac, det


def det_ratio(model: MappingModel, pts: Array) -> float:
    """Fraction of points with strictly positive Jacobian determinant."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) == 0:
        raise ConfigurationError("det_ratio needs a non-empty point set")
    _, det = jacobian_field(model, pts)
    return float(np.count_nonzero(det > 0) / len(det))


def audit_points(spec: DomainSpec, pairs: PointPairSet, spacing: float) -> Array:
    """Training interior points plus a fresh grid at half the spacing."""
    fresh = sample_domain(spec, spacing / 2.0).interior
    return np.concatenate([pairs.physical[~pairs.is_boundary], fresh])


def gate_mapping(model: MappingModel, metrics: MappingMetrics):
    """Refuse mappings that fold or miss the boundary; gate before solving."""
    if metrics.det_ratio < 1.0:
        raise GateError(f"mapping folds: det ratio {metrics.det_ratio:.4f} < 1")
    if metrics.e_max >= GATE_EMAX_FRACTION * REFERENCE_SIZE:
        raise GateError(f"boundary deviation {metrics.e_max:.2e} exceeds "
                        f"{GATE_EMAX_FRACTION * REFERENCE_SIZE:.0e}")


def save_mapping(path, model: MappingModel):
    net.save_mlp(path, model.mlp)
    sidecar = {"feature_dim": model.feature_dim,
               "family_ranges": {k: list(v) for k, v in model.family_ranges.items()},
               "in_shift": model.in_shift.tolist(),
               "in_scale": model.in_scale.tolist()}
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_mapping(path) -> MappingModel:
    mlp = net.load_mlp(path)
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        sidecar = {}
    return MappingModel(
        mlp, sidecar.get("feature_dim", 0),
        {k: tuple(v) for k, v in sidecar.get("family_ranges", {}).items()},
        in_shift=np.asarray(sidecar.get("in_shift", [0.0, 0.0])),
        in_scale=np.asarray(sidecar.get("in_scale", [1.0, 1.0])))
