"""Experiment runner: geometry generation, mapping training, solver runs,
sweeps, diagnostics and report rendering.

Every run is determined by (config, seed); `--deterministic` zeroes the
wall-clock columns of trace.csv so reruns are byte-identical.  Exit codes
are stable for scripting: 0 success, 2 configuration error, 3 quality-gate
refusal, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, diagnostics
from . import geometry as geo
from . import mapping as mapping_mod
from . import net, oracle, pde, pinn
from .config import parse_config
from .errors import (ConfigurationError, DivergenceError, DomainError,
                     GateError)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", default="out", help="output directory")


def _shape_args(p: argparse.ArgumentParser):
    p.add_argument("--shape", default=None,
                   help="square | perturbed | u | s | t | vessel")
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("--A", type=float, default=None, dest="amp")
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--length", type=float, default=None)
    p.add_argument("--deform", type=float, default=None)
    p.add_argument("--editing", default=None)


def _shape_params(args, cfg):
    params = {}
    for key, val in (("A", args.amp), ("omega", args.omega),
                     ("length", args.length), ("deform", args.deform)):
        if val is None:
            val = cfg.get(f"geometry.{key}")
        if val is not None:
            params[key] = float(val)
    return params


def _resolve(args, cfg, attr, key, default):
    val = getattr(args, attr, None)
    if val is not None:
        return val
    if key in cfg:
        return cfg[key]
    return default


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args, cfg) -> int:
    out = _ensure_out(args)
    shape = _resolve(args, cfg, "shape", "geometry.shape", None)
    if shape is None:
        raise ConfigurationError("gen needs --shape")
    spec = bench.make_spec(shape, _shape_params(args, cfg))
    spacing = float(_resolve(args, cfg, "spacing", "geometry.spacing",
                             bench.DEFAULT_SPACING[spec.kind]))
    editing = _resolve(args, cfg, "editing", "geometry.editing",
                       geo.DEFAULT_EDITING[spec.kind])
    cloud = geo.sample_domain(spec, spacing)
    path = os.path.join(out, f"pairs_{spec.kind}.csv")
    try:
        pairs = geo.make_pairs(spec, cloud, editing)
        geo.write_pairs_csv(path, pairs)
        print(f"wrote {path} ({len(pairs.physical)} pairs, "
              f"{int(pairs.is_boundary.sum())} boundary)")
    except ConfigurationError as exc:
        # no usable editing map (e.g. strongly perturbed squares); the cloud
        # itself still serves the diagnostics workflows
        with open(path, "w") as fh:
            fh.write(geo.PAIRS_HEADER + "\n")
            for p in cloud.interior:
                fh.write("%s,%s,nan,nan,0,0.0,0.0\n" % (geo.fmt(p[0]), geo.fmt(p[1])))
            for i, p in enumerate(cloud.boundary):
                fh.write("%s,%s,nan,nan,1,%s,%s\n"
                         % (geo.fmt(p[0]), geo.fmt(p[1]),
                            geo.fmt(cloud.normals[i, 0]), geo.fmt(cloud.normals[i, 1])))
        print(f"editing unavailable ({exc}); wrote cloud-only {path}")
    return 0


# ---------------------------------------------------------------------------
# train-map
# ---------------------------------------------------------------------------

def _vessel_family(n_shapes: int = 8, seed: int = 0):
    rng = np.random.default_rng(seed)
    lengths = np.linspace(*geo.VESSEL_LENGTH_RANGE, n_shapes)
    deforms = rng.uniform(*geo.VESSEL_DEFORM_RANGE, n_shapes)
    return [geo.DomainSpec("vessel2d", {"length": float(a), "deform": float(b)})
            for a, b in zip(lengths, deforms)]


def cmd_train_map(args, cfg) -> int:
    out = _ensure_out(args)
    seed = args.seed if args.seed is not None else int(cfg.get("mapping.seed", 0))
    lam = float(_resolve(args, cfg, "lam", "mapping.lambda", 10.0))
    epochs = int(_resolve(args, cfg, "epochs", "mapping.epochs", 30000))
    mcfg = mapping_mod.MapTrainConfig(epochs=epochs, seed=seed)

    family = _resolve(args, cfg, "family", "mapping.family", None)
    if family:
        if bench.canonical_shape(family) != "vessel2d":
            raise ConfigurationError("family training is defined for the vessel family")
        specs = _vessel_family(seed=seed)
        spacing = float(_resolve(args, cfg, "spacing", "geometry.spacing", 0.4))
        blocks, feats = [], []
        for sp in specs:
            prs = geo.make_pairs(sp, geo.sample_domain(sp, spacing), "radial")
            blocks.append(prs)
            feats.append(np.broadcast_to(geo.vessel_features(sp),
                                         (len(prs.physical), 2)))
        pairs = geo.PointPairSet(
            physical=np.concatenate([b.physical for b in blocks]),
            reference=np.concatenate([b.reference for b in blocks]),
            is_boundary=np.concatenate([b.is_boundary for b in blocks]),
            ref_normals=np.concatenate([b.ref_normals for b in blocks]),
        )
        features = np.concatenate(feats)
        ranges = {"length": geo.VESSEL_LENGTH_RANGE, "deform": geo.VESSEL_DEFORM_RANGE}
        model, hist = mapping_mod.train_mapping(
            pairs, lam, mcfg, features=features, feature_dim=2, family_ranges=ranges)
        metrics = mapping_mod.eval_metrics(
            model.with_features(geo.vessel_features(specs[0])), blocks[0],
            train_seconds=hist["seconds"])
        case_name = "vessel-family"
        map_path = os.path.join(out, "map_vessel_family.bin")
    else:
        if args.pairs:
            pairs = geo.read_pairs_csv(args.pairs)
            spec = None
            case_name = os.path.basename(args.pairs)
        else:
            shape = _resolve(args, cfg, "shape", "geometry.shape", None)
            if shape is None:
                raise ConfigurationError("train-map needs --shape or --pairs")
            spec = bench.make_spec(shape, _shape_params(args, cfg))
            spacing = float(_resolve(args, cfg, "spacing", "geometry.spacing",
                                     bench.DEFAULT_SPACING[spec.kind]))
            editing = _resolve(args, cfg, "editing", "geometry.editing",
                               geo.DEFAULT_EDITING[spec.kind])
            pairs = geo.make_pairs(spec, geo.sample_domain(spec, spacing), editing)
            case_name = spec.kind
        model, hist = mapping_mod.train_mapping(pairs, lam, mcfg)
        det_points = None
        if spec is not None:
            det_points = mapping_mod.audit_points(spec, pairs, spacing)
        metrics = mapping_mod.eval_metrics(model, pairs, det_points=det_points,
                                           train_seconds=hist["seconds"])
        map_path = os.path.join(out, f"map_{case_name}.bin")

    metrics_path = os.path.join(out, "map_metrics.csv")
    new_file = not os.path.exists(metrics_path)
    with open(metrics_path, "a") as fh:
        if new_file:
            fh.write(mapping_mod.METRICS_HEADER + "\n")
        fh.write(metrics.csv_row(case_name) + "\n")
    print(f"{case_name}: rmse_in={metrics.rmse_in:.3e} rmse_bd={metrics.rmse_bd:.3e} "
          f"e_max={metrics.e_max:.3e} det_ratio={metrics.det_ratio} "
          f"({metrics.train_seconds:.1f}s)")
    try:
        mapping_mod.gate_mapping(model, metrics)
    except GateError:
        if not args.force:
            raise
        print("gate failed; saving anyway (--force)")
    mapping_mod.save_mapping(map_path, model)
    print(f"wrote {map_path}")
    return 0


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _load_mapper(args, case: bench.BenchCase):
    if args.exact_map:
        return case.wrap_mapper(geo.analytic_forward_map(case.spec, case.editing))
    if args.map:
        model = mapping_mod.load_mapping(args.map)
        if model.feature_dim:
            model = model.with_features(geo.vessel_features(case.spec))
        return case.wrap_mapper(model)
    return None


def _write_run(run_dir, case, config, report, field_pts, field_vals):
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "report.json"), "w") as fh:
        payload = {
            "case": case.name,
            "mode": report.mode,
            "seed": report.seed,
            "epochs": config.epochs,
            "aborted": report.aborted,
            "final": {k: v for k, v in report.final.items()
                      if isinstance(v, (int, float, str, dict))},
        }
        json.dump(payload, fh, indent=1, default=float)
    with open(os.path.join(run_dir, "trace.csv"), "w") as fh:
        fh.write("\n".join(report.trace_rows(config.deterministic)) + "\n")
    ncomp = field_vals.shape[1]
    header = "x,y," + ",".join(["u", "v", "p"][:ncomp])
    with open(os.path.join(run_dir, "field.csv"), "w") as fh:
        fh.write(header + "\n")
        for i in range(len(field_pts)):
            row = [geo.fmt(field_pts[i, 0]), geo.fmt(field_pts[i, 1])]
            row += [geo.fmt(v) for v in field_vals[i]]
            fh.write(",".join(row) + "\n")


def cmd_solve(args, cfg) -> int:
    out = _ensure_out(args)
    shape = _resolve(args, cfg, "shape", "geometry.shape", None)
    if shape is None:
        raise ConfigurationError("solve needs --shape")
    pde_kind = _resolve(args, cfg, "pde", "pinn.pde", None)
    pde_params = {}
    for key in ("k", "a1", "a2", "re", "u_max"):
        val = getattr(args, key if key != "re" else "re", None)
        if val is None:
            val = cfg.get(f"pinn.{key}")
        if val is not None:
            pde_params[key] = float(val)
    case = bench.make_case(shape, pde_kind, _shape_params(args, cfg), pde_params,
                           spacing=args.spacing,
                           epochs=args.epochs or cfg.get("pinn.epochs"))
    mode = pinn.canonical_mode(_resolve(args, cfg, "mode", "pinn.mode", "baseline"))
    seed = args.seed if args.seed is not None else int(cfg.get("pinn.seed", 0))

    config = pinn.SolverConfig(
        mode=mode,
        epochs=int(case.epochs),
        seed=seed,
        rff=bool(_resolve(args, cfg, "rff", "pinn.rff", False)),
        deterministic=args.deterministic,
        store_method=_resolve(args, cfg, "store_method", "pinn.store_method", "fd"),
        store_precision=_resolve(args, cfg, "store_precision",
                                 "pinn.store_precision", "f64"),
    )
    if _resolve(args, cfg, "gradnorm", "pinn.gradnorm", False):
        config.weights.gradnorm_enabled = True

    mapper = _load_mapper(args, case)
    if mode != "baseline" and mapper is None:
        raise ConfigurationError(f"mode {mode!r} needs --map PATH or --exact-map")
    if mode != "baseline" and args.map and not args.force:
        pairs = case.pairs()
        model = mapping_mod.load_mapping(args.map)
        if model.feature_dim:
            model = model.with_features(geo.vessel_features(case.spec))
        metrics = mapping_mod.eval_metrics(model, pairs)
        mapping_mod.gate_mapping(model, metrics)

    cloud = case.cloud()
    trial_map = case.analytic_map() if mode == "hard" else None
    reference = case.reference()
    mlp, report = pinn.train_pinn(case.problem(), cloud, config, mapper=mapper,
                                  trial_map=trial_map, reference=reference)
    ctx = pinn.build_context(case.problem(), cloud, config, mapper=mapper,
                             trial_map=trial_map)
    preds = pinn.predict(ctx, mlp)
    if preds.ndim == 1:
        preds = preds[:, None]
    run_dir = os.path.join(out, f"run_{case.name}_{mode}_seed{seed}")
    _write_run(run_dir, case, config, report, cloud.interior * case.length_scale,
               preds)
    ckpt = os.path.join(run_dir, "solution.bin")
    net.save_mlp(ckpt, mlp)
    msg = f"{case.name} [{mode}] seed={seed}: "
    if "l2_rel" in report.final:
        msg += f"l2_rel={report.final['l2_rel']:.4f} "
    msg += f"L_u={report.final['l_u']:.3e} ({report.final['seconds']:.0f}s)"
    print(msg)
    print(f"wrote {run_dir}")
    if report.aborted:
        raise DivergenceError("training diverged; partial report written")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args, cfg) -> int:
    out = _ensure_out(args)
    seeds = list(range(int(_resolve(args, cfg, "seeds", "sweep.seeds", 3))))
    if args.re_grid:
        return _re_sweep(args, cfg, out, seeds)
    lam_grid = args.lam_grid or cfg.get("sweep.lambda") or \
        list(diagnostics.DEFAULT_LAMBDA_GRID)
    if isinstance(lam_grid, str):
        lam_grid = [float(x) for x in lam_grid.split(",")]
    lam_grid = [float(x) for x in np.atleast_1d(lam_grid)]

    case = bench.make_case(_resolve(args, cfg, "shape", "geometry.shape", "s"),
                           "poisson")
    map_epochs = int(_resolve(args, cfg, "map_epochs", "sweep.map_epochs", 12000))
    solve_epochs = int(_resolve(args, cfg, "epochs", "sweep.epochs", 1500))
    spacing = args.spacing or cfg.get("sweep.spacing") or 0.15
    reference = case.reference()

    def run_one(lam, seed):
        pairs = case.pairs(spacing)
        mcfg = mapping_mod.MapTrainConfig(epochs=map_epochs, seed=seed)
        model, hist = mapping_mod.train_mapping(pairs, lam, mcfg)
        metrics = mapping_mod.eval_metrics(model, pairs, train_seconds=hist["seconds"])
        gate_ok = metrics.det_ratio >= 1.0
        scfg = pinn.SolverConfig(mode="hard", epochs=solve_epochs, seed=seed)
        _, rep = pinn.train_pinn(case.problem(), case.cloud(spacing), scfg,
                                 mapper=model, trial_map=case.analytic_map(),
                                 reference=reference)
        return {"rmse_in": metrics.rmse_in, "rmse_bd": metrics.rmse_bd,
                "e_max": metrics.e_max, "l2_rel": rep.final.get("l2_rel", float("nan")),
                "gate_ok": gate_ok}

    rows = diagnostics.lambda_sweep(run_one, lam_grid, seeds)
    path = os.path.join(out, "sweep.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(diagnostics.sweep_csv(rows)) + "\n")
    print(f"wrote {path}")
    _render_sweep_figure(rows, os.path.join(out, "sweep.svg"))
    return 0


def _re_sweep(args, cfg, out, seeds) -> int:
    re_grid = [float(x) for x in str(args.re_grid).split(",")]
    rows = ["re,seed,l2_rel,l2_rel_p,residual_rms"]
    for re in re_grid:
        for seed in seeds[:1]:
            case = bench.make_case("vessel", "ns2d",
                                   {"deform": args.deform or 0.0,
                                    "length": args.length or 10.0},
                                   {"re": re}, epochs=args.epochs or 4000)
            scfg = pinn.SolverConfig(mode="hard", epochs=case.epochs, seed=seed,
                                     log_every=50)
            _, rep = pinn.train_pinn(case.problem(), case.cloud(), scfg,
                                     mapper=case.analytic_map(),
                                     trial_map=case.analytic_map(),
                                     reference=case.reference())
            rows.append("%s,%d,%s,%s,%s" % (
                geo.fmt(re), seed, geo.fmt(rep.final.get("l2_rel", float("nan"))),
                geo.fmt(rep.final.get("l2_rel_p", float("nan"))),
                geo.fmt(rep.final["residual_rms"].get("continuity", float("nan")))))
    path = os.path.join(out, "re_sweep.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

PERTURBED_LADDER = ((0.0, 0.0), (0.1, 3.0), (0.15, 5.0), (0.25, 11.0))


def cmd_diagnose(args, cfg) -> int:
    out = _ensure_out(args)
    epochs = int(_resolve(args, cfg, "epochs", "diagnose.epochs", 3000))
    seed = args.seed if args.seed is not None else 0
    rows = ["case,A,omega,l2_rel,r_loss_final,r_loss_max"]
    for amp, omega in PERTURBED_LADDER:
        shape = "square" if amp == 0 else "perturbed"
        case = bench.make_case(shape, "poisson",
                               {"A": amp, "omega": omega} if amp else {})
        scfg = pinn.SolverConfig(mode="baseline", epochs=epochs, seed=seed,
                                 deterministic=args.deterministic)
        _, rep = pinn.train_pinn(case.problem(), case.cloud(), scfg,
                                 reference=case.reference())
        trace = diagnostics.ImbalanceTrace.from_report(rep)
        tag = f"A{amp}_w{int(omega)}"
        with open(os.path.join(out, f"imbalance_{tag}.csv"), "w") as fh:
            fh.write("\n".join(trace.csv_rows()) + "\n")
        finite = [r for r in rep.r_loss if np.isfinite(r)]
        rows.append("%s,%s,%s,%s,%s,%s" % (
            tag, geo.fmt(amp), geo.fmt(omega),
            geo.fmt(rep.final.get("l2_rel", float("nan"))),
            geo.fmt(rep.r_loss[-1]),
            geo.fmt(max(finite) if finite else float("inf"))))
        print(rows[-1])
    with open(os.path.join(out, "imbalance_summary.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _render_sweep_figure(rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lam = [r.lam for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    panels = [("rmse_in", [r.rmse_in for r in rows]),
              ("rmse_bd", [r.rmse_bd for r in rows]),
              ("e_max", [r.e_max for r in rows]),
              ("l2_rel", [r.l2_rel for r in rows])]
    for ax, (name, ys) in zip(axes.ravel(), panels):
        ax.plot(lam, ys, "o-")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("boundary weight")
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    print(f"wrote {path}")


def cmd_report(args, cfg) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    root = args.dir or args.out
    run_dirs = sorted(
        d for d in (os.path.join(root, x) for x in os.listdir(root))
        if os.path.isdir(d) and os.path.exists(os.path.join(d, "report.json")))
    if not run_dirs:
        print(f"no runs under {root}")
    rows = ["run,case,mode,seed,l2_rel,l_u_final,l_b_final,seconds"]
    fig, ax = plt.subplots(figsize=(8, 5))
    fig2, ax2 = plt.subplots(figsize=(8, 5))
    for d in run_dirs:
        with open(os.path.join(d, "report.json")) as fh:
            rep = json.load(fh)
        final = rep.get("final", {})
        rows.append("%s,%s,%s,%s,%s,%s,%s,%s" % (
            os.path.basename(d), rep.get("case"), rep.get("mode"), rep.get("seed"),
            geo.fmt(final.get("l2_rel", float("nan"))),
            geo.fmt(final.get("l_u", float("nan"))),
            geo.fmt(final.get("l_b", float("nan"))),
            geo.fmt(final.get("seconds", float("nan")))))
        trace = np.genfromtxt(os.path.join(d, "trace.csv"), delimiter=",",
                              names=True)
        label = f"{rep.get('case')}/{rep.get('mode')}"
        ax.plot(trace["epoch"], trace["L_u"], label=label + " L_u")
        with np.errstate(all="ignore"):
            ax2.plot(trace["epoch"], trace["R_loss"], label=label)
    summary = os.path.join(root, "summary.csv")
    with open(summary, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {summary}")
    for a, f, name in ((ax, fig, "loss_curves.svg"), (ax2, fig2, "ratio_curves.svg")):
        a.set_yscale("log")
        a.set_xlabel("epoch")
        a.grid(True, alpha=0.3)
        if run_dirs:
            a.legend(fontsize=7)
        f.tight_layout()
        p = os.path.join(root, name)
        f.savefig(p)
        print(f"wrote {p}")
    plt.close(fig)
    plt.close(fig2)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refpinn",
        description="coordinate-transformed physics-informed solvers on "
                    "irregular 2D domains")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a domain and export point pairs")
    _add_common(p)
    _shape_args(p)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train-map", help="train the coordinate transformation")
    _add_common(p)
    _shape_args(p)
    p.add_argument("--pairs", help="pair-set CSV instead of generating")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="boundary supervision weight (default 10)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--family", default=None,
                   help="train one shared model over a shape family (vessel)")
    p.add_argument("--force", action="store_true",
                   help="save even if the quality gate fails")
    p.set_defaults(fn=cmd_train_map)

    p = sub.add_parser("solve", help="train a PINN in one of the four modes")
    _add_common(p)
    _shape_args(p)
    p.add_argument("--pde", default=None, help="poisson|laplace|helmholtz|ns2d")
    p.add_argument("--mode", default=None,
                   help="baseline | transform | chainrule | hard")
    p.add_argument("--map", default=None, help="mapping checkpoint path")
    p.add_argument("--exact-map", action="store_true", dest="exact_map",
                   help="use the closed-form editing map as the mapping")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--a1", type=float, default=None)
    p.add_argument("--a2", type=float, default=None)
    p.add_argument("--re", type=float, default=None)
    p.add_argument("--rff", action="store_true", default=None)
    p.add_argument("--gradnorm", action="store_true", default=None)
    p.add_argument("--store-precision", dest="store_precision", default=None,
                   help="chainrule storage: f64 | f32 | mm")
    p.add_argument("--store-method", dest="store_method", default=None,
                   help="chainrule tables: fd | exact")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("sweep", help="boundary-weight or Reynolds sweeps")
    _add_common(p)
    _shape_args(p)
    p.add_argument("--lambda", dest="lam_grid", default=None,
                   help="comma list of boundary weights")
    p.add_argument("--re", dest="re_grid", default=None,
                   help="comma list of Reynolds numbers")
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--map-epochs", dest="map_epochs", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("diagnose", help="loss-imbalance family diagnostics")
    _add_common(p)
    p.add_argument("--family", default="perturbed")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("report", help="merge run reports, render figures")
    _add_common(p)
    p.add_argument("--dir", default=None, help="directory of runs (default --out)")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config) if getattr(args, "config", None) else {}
        return args.fn(args, cfg)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except GateError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
