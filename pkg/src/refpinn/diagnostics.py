"""Loss-imbalance metrics, the boundary-weight sweep and timing breakdowns.

The per-epoch ratios diagnose the competition between the PDE and boundary
loss terms: R_loss compares their numerical scale, R_grad the Euclidean
norms of their parameter gradients.  Complex domains drive both far from 1,
which is the failure mode the coordinate transformation removes.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from . import net
from .errors import ConfigurationError
from .pinn import RunReport

Array = np.ndarray


def loss_ratio(l_u: float, l_b: float) -> float:
    """R_loss = L_u / L_b; an exactly zero boundary loss yields inf."""
    if l_b == 0.0:
        return float("inf")
    return l_u / l_b


def grad_norm_ratio(l_u_node, l_b_node, params) -> float:
    """Ratio of parameter-gradient norms of the two recorded loss terms."""
    gu = net.backprop_scalar(l_u_node, params)
    gb = net.backprop_scalar(l_b_node, params)
    nu, nb = net.grad_norm(gu), net.grad_norm(gb)
    if nb == 0.0:
        return float("inf")
    return nu / nb


@dataclass
class ImbalanceTrace:
    epochs: list = field(default_factory=list)
    r_loss: list = field(default_factory=list)
    r_grad: list = field(default_factory=list)
    bc_share: list = field(default_factory=list)

    @classmethod
    def from_report(cls, report: RunReport) -> "ImbalanceTrace":
        return cls(list(report.epochs), list(report.r_loss),
                   list(report.r_grad), list(report.bc_share))

    def csv_rows(self):
        rows = ["epoch,r_loss,r_grad,bc_share"]
        for i, ep in enumerate(self.epochs):
            from .geometry import fmt
            rows.append("%d,%s,%s,%s" % (ep, fmt(self.r_loss[i]),
                                         fmt(self.r_grad[i]), fmt(self.bc_share[i])))
        return rows


DEFAULT_LAMBDA_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass
class SweepRow:
    lam: float
    rmse_in: float
    rmse_bd: float
    e_max: float
    l2_rel: float
    gate_ok: bool = True


SWEEP_HEADER = "lambda,rmse_in,rmse_bd,e_max,l2_rel,gate_ok"


def lambda_sweep(run_case, lambda_values=DEFAULT_LAMBDA_GRID, seeds=(0, 1, 2)):
    """Seed-averaged mapping/solution metrics per boundary weight.

    `run_case(lam, seed)` returns a dict with rmse_in, rmse_bd, e_max,
    l2_rel and gate_ok; rows whose mapping failed the fold-free gate are
    flagged and excluded from trend statistics by the caller.
    """
    if len(seeds) < 3:
        raise ConfigurationError("the sweep protocol averages over >= 3 seeds")
    if min(lambda_values) < 1.0 or max(lambda_values) > 100.0:
        raise ConfigurationError("lambda grid must lie inside [1, 100]")
    rows = []
    for lam in lambda_values:
        per_seed = [run_case(lam, seed) for seed in seeds]
        ok = all(r.get("gate_ok", True) for r in per_seed)
        rows.append(SweepRow(
            lam=lam,
            rmse_in=float(np.mean([r["rmse_in"] for r in per_seed])),
            rmse_bd=float(np.mean([r["rmse_bd"] for r in per_seed])),
            e_max=float(np.mean([r["e_max"] for r in per_seed])),
            l2_rel=float(np.mean([r["l2_rel"] for r in per_seed])),
            gate_ok=ok,
        ))
    return rows


def sweep_csv(rows):
    out = [SWEEP_HEADER]
    for r in rows:
        from .geometry import fmt
        out.append("%s,%s,%s,%s,%s,%d" % (fmt(r.lam), fmt(r.rmse_in), fmt(r.rmse_bd),
                                          fmt(r.e_max), fmt(r.l2_rel), int(r.gate_ok)))
    return out


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (no ties expected on sweep grids)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = np.argsort(np.argsort(x)).astype(float)
    ry = np.argsort(np.argsort(y)).astype(float)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx ** 2).sum() * (ry ** 2).sum()))
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


@dataclass
class TimingSummary:
    forward_ms: tuple      # (mean, std)
    loss_ms: tuple
    backward_ms: tuple
    total_ms: tuple

    def row(self, method: str, pct_increase: float = float("nan")) -> str:
        from .geometry import fmt
        return ",".join([method, fmt(self.forward_ms[0]), fmt(self.loss_ms[0]),
                         fmt(self.backward_ms[0]), fmt(self.total_ms[0]),
                         fmt(pct_increase)])


TIMING_HEADER = "method,forward,loss,backward,total,pct_increase"


def timing_breakdown(report: RunReport, discard: int = 10) -> TimingSummary:
    """Mean and std of the per-epoch phase timings after warm-up.

    Requires a run logged every epoch with at least 100 retained samples;
    flags traces whose clock resolution is too coarse to resolve a phase.
    """
    def cut(xs):
        kept = [x for e, x in zip(report.epochs, xs) if e >= discard]
        if len(kept) < 100:
            raise ConfigurationError(
                "timing breakdown needs >= 100 post-warm-up epochs logged every epoch")
        return kept

    phases = {}
    for name, xs in (("forward", report.wall_ms_forward),
                     ("loss", report.wall_ms_loss),
                     ("backward", report.wall_ms_backward),
                     ("total", report.wall_ms_total)):
        kept = cut(xs)
        if all(x == 0.0 for x in kept):
            raise ConfigurationError(f"clock resolution too coarse for phase {name!r}")
        phases[name] = (float(statistics.mean(kept)), float(statistics.pstdev(kept)))
    return TimingSummary(phases["forward"], phases["loss"],
                         phases["backward"], phases["total"])


def pct_increase(base: TimingSummary, other: TimingSummary) -> float:
    return 100.0 * (other.total_ms[0] - base.total_ms[0]) / base.total_ms[0]
