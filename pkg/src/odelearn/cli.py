"""Batch experiment driver.

Subcommands: generate, train, imde, sweep, compare, report. Each takes a
single JSON or TOML config document (--config); tabular output is CSV with
a header row, human summaries go to stdout. Exit codes: 0 success, 2 bad
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    ConvergenceFailure,
    DivergenceError,
    OracleFailure,
    SingularMatrixError,
)
from .fields import LinearField
from .imde import (
    NONLINEAR_VARIANTS,
    linear_imde_series,
    nonlinear_imde_terms,
    numeric_imde,
)
from .metrics import field_error, fit_loglog_slope
from .models import init_model, load_model
from .steppers import mode_from_config
from .systems import (
    BenchmarkSystem,
    EpisodeDataset,
    builtin,
    generate,
    load_dataset,
    save_dataset,
    split_episodes,
)
from .training import AdaptiveConfig, LossConfig, train

_MISSING = object()


def _take(cfg, key, default=_MISSING):
    if key in cfg:
        return cfg[key]
    if default is _MISSING:
        raise ConfigError(f"missing required config key '{key}'")
    return default


def _reject_unknown(cfg, allowed, where="config"):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def load_config(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _resolve_system(spec):
    if isinstance(spec, str):
        return builtin(spec)
    if isinstance(spec, dict):
        _reject_unknown(spec, {"a", "b", "name", "domain", "dt"}, "system")
        a = np.asarray(_take(spec, "a"), dtype=float)
        b = spec.get("b")
        field = LinearField(a, b, name=spec.get("name", "inline"))
        domain = np.asarray(
            spec.get("domain", [[-1.0, 1.0]] * field.dim), dtype=float
        )
        return BenchmarkSystem(
            field.name, field, domain, float(spec.get("dt", 0.1)), 1.0
        )
    raise ConfigError(f"cannot interpret system spec {spec!r}")


def _sampling_from_config(spec, system):
    if spec is None:
        return None
    _reject_unknown(spec, {"kind", "points", "x0", "low", "high"}, "sampling")
    kind = _take(spec, "kind")
    if kind == "uniform":
        return ("uniform", system.domain)
    if kind == "listed":
        return ("listed", np.asarray(_take(spec, "points"), dtype=float))
    if kind == "scaled":
        return (
            "scaled",
            np.asarray(_take(spec, "x0"), dtype=float),
            float(spec.get("low", -0.2)),
            float(spec.get("high", 0.2)),
        )
    raise ConfigError(f"unknown sampling kind '{kind}'")


def _subsample_pairs(dataset, max_pairs):
    if max_pairs is None or dataset.n_episodes <= max_pairs:
        return dataset
    idx = np.linspace(0, dataset.n_episodes - 1, int(max_pairs)).astype(int)
    return EpisodeDataset(dataset.episodes[idx], dataset.dt, dataset.metadata)


def _model_from_config(spec, dim, seed):
    spec = dict(spec or {"kind": "mlp"})
    _reject_unknown(spec, {"kind", "hidden", "checkpoint"}, "model")
    if "checkpoint" in spec:
        return load_model(spec["checkpoint"])
    return init_model(
        spec.get("kind", "mlp"), dim, hidden=int(spec.get("hidden", 32)), seed=seed
    )


def _schedule_from_config(spec):
    spec = dict(spec or {})
    _reject_unknown(spec, {"kind", "lr", "lr_end"}, "schedule")
    kind = spec.get("kind", "exp_decay")
    lr = float(spec.get("lr", 0.01))
    lr_end = float(spec.get("lr_end", 1e-4))
    return (kind, lr, lr_end)


def _adaptive_from_config(spec):
    if spec in (None, False):
        return None
    if spec is True:
        return AdaptiveConfig()
    _reject_unknown(spec, {"c", "check_every", "l_max"}, "adaptive")
    return AdaptiveConfig(
        c=float(spec.get("c", 1.0)),
        check_every=int(spec.get("check_every", 10)),
        l_max=int(spec.get("l_max", 20)),
    )


def _loss_config(cfg, dt):
    return LossConfig(
        dt=dt,
        tableau=cfg.get("tableau", "implicit_euler"),
        mode=mode_from_config(
            cfg.get("mode", "fixed_point"), cfg.get("iterations", 1)
        ),
        m_steps=int(cfg.get("m_steps", 1)),
        substeps=int(cfg.get("substeps", 1)),
    )


def _test_points(system, spec, seed=7919):
    """Evaluation points: trajectory grids for dynamical test sets, or
    uniform draws from the sampling box."""
    spec = dict(spec or {})
    _reject_unknown(
        spec, {"kind", "n_trajectories", "dt", "horizon", "n_points"}, "test"
    )
    kind = spec.get("kind", "points" if spec.get("n_points") else "trajectories")
    if kind == "points":
        n = int(spec.get("n_points", 400))
        rng = np.random.default_rng(seed)
        return rng.uniform(
            system.domain[:, 0], system.domain[:, 1], size=(n, system.dim)
        )
    n_traj = int(spec.get("n_trajectories", 10))
    test_dt = float(spec.get("dt", 0.01))
    horizon = float(spec.get("horizon", system.horizon))
    steps = max(1, int(round(horizon / test_dt)))
    ds = generate(system, n_traj, steps, test_dt, seed=seed)
    return ds.episodes.reshape(-1, system.dim)


def _imde_reference(system, cfg, dt):
    """Field representing the scheme's IMDE for Error(f, f_h) columns."""
    mode = mode_from_config(cfg.get("mode", "fixed_point"), cfg.get("iterations", 1))
    tableau = cfg.get("tableau", "implicit_euler")
    h = dt / int(cfg.get("substeps", 1))
    if isinstance(system.field, LinearField):
        return linear_imde_series(
            system.field.a, system.field.c, h=h, tableau=tableau, mode=mode, order=5
        ).as_field()
    variant = None
    if tableau == "implicit_euler":
        from .steppers import FixedPoint, NewtonRaphson

        if isinstance(mode, NewtonRaphson) and mode.iterations == 1:
            variant = "implicit_euler_newton_L1"
        elif isinstance(mode, FixedPoint) and mode.iterations == 2:
            variant = "implicit_euler_fp_L2"
    if variant is not None:
        return nonlinear_imde_terms(system.field, variant, h=h)
    return numeric_imde(system.field, tableau, mode, h, depth=3)


# ---------------------------------------------------------------------------
# subcommands

_GENERATE_KEYS = {
    "system", "n_episodes", "n_steps", "dt", "split_m", "sampling", "seed",
    "out", "substeps_per_step", "paper_scale",
}


def cmd_generate(cfg, args):
    _reject_unknown(cfg, _GENERATE_KEYS)
    system = _resolve_system(_take(cfg, "system"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    dataset = generate(
        system,
        int(_take(cfg, "n_episodes")),
        int(_take(cfg, "n_steps")),
        float(_take(cfg, "dt")),
        sampling=_sampling_from_config(cfg.get("sampling"), system),
        seed=seed,
        substeps=int(cfg.get("substeps_per_step", 100)),
    )
    if cfg.get("split_m"):
        dataset = split_episodes(dataset, int(cfg["split_m"]))
    out = args.out or _take(cfg, "out")
    save_dataset(dataset, out)
    print(
        f"generated {dataset.n_episodes} episodes x {dataset.n_steps + 1} states "
        f"(dt={dataset.dt}) -> {out}"
    )
    return 0


_TRAIN_KEYS = {
    "system", "dataset", "generate", "model", "tableau", "mode", "iterations",
    "adaptive", "substeps", "m_steps", "epochs", "schedule", "seed",
    "evaluate", "out_dir", "paper_scale",
}


def _prepare_training_data(cfg, seed):
    system = None
    if cfg.get("system") is not None:
        system = _resolve_system(cfg["system"])
    if cfg.get("dataset"):
        dataset = load_dataset(cfg["dataset"])
    else:
        if system is None:
            raise ConfigError("config needs either 'dataset' or 'system'")
        gen = dict(_take(cfg, "generate"))
        _reject_unknown(
            gen,
            {"n_episodes", "n_steps", "horizon", "dt", "split_m", "sampling",
             "max_pairs", "seed"},
            "generate",
        )
        dt = float(_take(gen, "dt"))
        if "n_steps" in gen:
            n_steps = int(gen["n_steps"])
        else:
            n_steps = max(1, int(round(float(_take(gen, "horizon")) / dt)))
        dataset = generate(
            system,
            int(_take(gen, "n_episodes")),
            n_steps,
            dt,
            sampling=_sampling_from_config(gen.get("sampling"), system),
            seed=int(gen.get("seed", seed)),
        )
        if gen.get("split_m"):
            dataset = split_episodes(dataset, int(gen["split_m"]))
        dataset = _subsample_pairs(dataset, gen.get("max_pairs"))
    return system, dataset


def _run_training(cfg, seed):
    system, dataset = _prepare_training_data(cfg, seed)
    config = _loss_config(cfg, dataset.dt)
    model = _model_from_config(cfg.get("model"), dataset.dim, seed)
    adaptive = _adaptive_from_config(cfg.get("adaptive"))
    model, report = train(
        model,
        dataset,
        config,
        epochs=int(cfg.get("epochs", 2000)),
        schedule=_schedule_from_config(cfg.get("schedule")),
        adaptive=adaptive,
    )
    return system, dataset, model, report


def cmd_train(cfg, args):
    _reject_unknown(cfg, _TRAIN_KEYS)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    system, dataset, model, report = _run_training(cfg, seed)
    out_dir = Path(args.out or cfg.get("out_dir", "run"))
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / "model.json")
    report.write_csv(out_dir / "curve.csv")
    summary = {
        "final_loss": report.final_loss,
        "epochs": len(report.losses),
        "total_field_evals": report.total_evals,
        "total_jacobian_evals": report.jacobian_eval_counts[-1]
        if report.jacobian_eval_counts
        else 0,
        "l_schedule": report.l_schedule,
        "seconds": report.seconds,
        "seed": seed,
    }
    if cfg.get("evaluate") is not None and system is not None:
        ev = dict(cfg["evaluate"])
        _reject_unknown(ev, {"test", "imde"}, "evaluate")
        pts = _test_points(system, ev.get("test"))
        summary["error_vs_truth"] = field_error(model, system.field, pts)
        if ev.get("imde", True):
            ref = _imde_reference(system, cfg, dataset.dt)
            sub = pts[:: max(1, len(pts) // 500)]
            summary["error_vs_imde"] = field_error(model, ref, sub)
    (out_dir / "report.json").write_text(
        json.dumps({**summary, "history": report.to_dict()}, indent=2),
        encoding="utf-8",
    )
    print(f"trained {len(report.losses)} epochs, final loss {report.final_loss:.3e}")
    for key in ("error_vs_truth", "error_vs_imde"):
        if key in summary:
            print(f"{key.replace('_', ' ')}: {summary[key]:.6e}")
    print(f"artifacts in {out_dir}")
    return 0


_IMDE_KEYS = {
    "system", "tableau", "mode", "iterations", "dt", "substeps", "order",
    "points", "depth", "out", "paper_scale",
}


def cmd_imde(cfg, args):
    _reject_unknown(cfg, _IMDE_KEYS)
    system = _resolve_system(_take(cfg, "system"))
    dt = float(_take(cfg, "dt"))
    h = dt / int(cfg.get("substeps", 1))
    tableau = cfg.get("tableau", "implicit_euler")
    mode = mode_from_config(cfg.get("mode", "fixed_point"), cfg.get("iterations", 0))
    rows = []
    if isinstance(system.field, LinearField):
        order = int(cfg.get("order", 3))
        result = linear_imde_series(
            system.field.a, system.field.c, h=h, tableau=tableau, mode=mode,
            order=order,
        )
        dim = system.dim
        header = ["equation"] + [f"coef_x{j+1}" for j in range(dim)] + ["offset"]
        for i in range(dim):
            rows.append(
                [f"dx{i+1}/dt"]
                + [repr(v) for v in result.a_h[i]]
                + [repr(float(result.c_h[i]))]
            )
    else:
        ref = _imde_reference(system, cfg, dt)
        pts_spec = cfg.get("points")
        if pts_spec is None:
            rng = np.random.default_rng(11)
            pts = rng.uniform(
                system.domain[:, 0], system.domain[:, 1], size=(8, system.dim)
            )
        else:
            pts = np.asarray(pts_spec, dtype=float)
        vals = np.asarray(ref(pts))
        dim = system.dim
        header = [f"x{j+1}" for j in range(dim)] + [f"f{j+1}" for j in range(dim)]
        for x, v in zip(pts, vals):
            rows.append([repr(float(c)) for c in x] + [repr(float(c)) for c in v])
    out = args.out or cfg.get("out")
    lines = [",".join(header)] + [",".join(map(str, r)) for r in rows]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)
    return 0


_SWEEP_KEYS = {
    "system", "model", "tableau", "mode", "iterations", "substeps", "m_steps",
    "grid", "data", "epochs", "schedule", "replicates", "seed", "test",
    "imde_reference", "out", "paper_scale",
}


def _sweep_cell(payload):
    """One (grid point, replicate) training run; executed in a worker."""
    cfg, system_spec, dt, substeps, rep_seed = payload
    system = _resolve_system(system_spec)
    data_cfg = dict(cfg.get("data") or {})
    horizon = float(data_cfg.get("horizon", system.horizon))
    n_steps = int(data_cfg.get("n_steps", max(1, round(horizon / dt))))
    dataset = generate(
        system,
        int(data_cfg.get("n_episodes", 12)),
        n_steps,
        dt,
        seed=rep_seed,
    )
    if data_cfg.get("split_m", 1):
        dataset = split_episodes(dataset, int(data_cfg.get("split_m", 1)))
    dataset = _subsample_pairs(dataset, data_cfg.get("max_pairs"))
    run_cfg = dict(cfg)
    run_cfg["substeps"] = substeps
    config = _loss_config(run_cfg, dt)
    model = _model_from_config(cfg.get("model"), system.dim, rep_seed)
    model, report = train(
        model,
        dataset,
        config,
        epochs=int(cfg.get("epochs", 2000)),
        schedule=_schedule_from_config(cfg.get("schedule")),
    )
    pts = _test_points(system, cfg.get("test"))
    err_truth = field_error(model, system.field, pts)
    err_imde = float("nan")
    if cfg.get("imde_reference", "auto") != "none":
        ref = _imde_reference(system, run_cfg, dt)
        sub = pts[:: max(1, len(pts) // 400)]
        err_imde = field_error(model, ref, sub)
    return {
        "dt": dt,
        "s": substeps,
        "h": dt / substeps,
        "seed": rep_seed,
        "error_truth": err_truth,
        "error_imde": err_imde,
        "final_loss": report.final_loss,
        "evals": report.total_evals,
        "seconds": report.seconds,
    }


def _grid_points(cfg):
    grid = dict(_take(cfg, "grid"))
    _reject_unknown(grid, {"kind", "values", "dt", "substeps"}, "grid")
    kind = grid.get("kind", "dt")
    values = [float(v) for v in _take(grid, "values")]
    if kind == "dt":
        s = int(grid.get("substeps", 1))
        return [(v, s) for v in values]
    if kind == "s":
        dt = float(_take(grid, "dt"))
        return [(dt, int(v)) for v in values]
    raise ConfigError("grid kind must be 'dt' or 's'")


def cmd_sweep(cfg, args):
    _reject_unknown(cfg, _SWEEP_KEYS)
    seed0 = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    replicates = int(cfg.get("replicates", 3))
    points = _grid_points(cfg)
    system_spec = _take(cfg, "system")
    payloads = [
        (cfg, system_spec, dt, s, seed0 + 1000 * rep)
        for dt, s in points
        for rep in range(replicates)
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_sweep_cell, payloads))
    else:
        rows = [_sweep_cell(p) for p in payloads]
    out = args.out or cfg.get("out", "sweep.csv")
    fields = [
        "dt", "s", "h", "seed", "error_truth", "error_imde", "final_loss",
        "evals", "seconds",
    ]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    # aggregate per grid point
    hs, means, sds, imde_means = [], [], [], []
    for dt, s in points:
        vals = [r["error_truth"] for r in rows if r["dt"] == dt and r["s"] == s]
        ivals = [
            r["error_imde"]
            for r in rows
            if r["dt"] == dt and r["s"] == s and np.isfinite(r["error_imde"])
        ]
        hs.append(dt / s)
        means.append(float(np.mean(vals)))
        sds.append(float(np.std(vals)))
        imde_means.append(float(np.mean(ivals)) if ivals else float("nan"))
    slope = fit_loglog_slope(hs, means) if len(hs) >= 2 else float("nan")
    summary = {
        "h": hs,
        "error_truth_mean": means,
        "error_truth_sd": sds,
        "error_imde_mean": imde_means,
        "slope": slope,
    }
    Path(str(out) + ".summary.json").write_text(
        json.dumps(summary, indent=2), encoding="utf-8"
    )
    for i, h in enumerate(hs):
        line = f"h={h:g}: Error(f,truth)={means[i]:.4e} +- {sds[i]:.1e}"
        if np.isfinite(imde_means[i]):
            line += f"  Error(f,imde)={imde_means[i]:.4e}"
        print(line)
    print(f"log-log slope of Error(f, truth) vs h: {slope:.3f}")
    print(f"rows -> {out}")
    return 0


_COMPARE_KEYS = {
    "system", "model", "tableau", "substeps", "m_steps", "dt", "data",
    "fixed_iterations", "adaptive", "epochs", "schedule", "replicates",
    "seed", "test", "imde_reference", "out", "paper_scale",
}


def _compare_cell(payload):
    cfg, system_spec, variant, rep_seed = payload
    system = _resolve_system(system_spec)
    dt = float(cfg["dt"])
    data_cfg = dict(cfg.get("data") or {})
    horizon = float(data_cfg.get("horizon", system.horizon))
    n_steps = int(data_cfg.get("n_steps", max(1, round(horizon / dt))))
    dataset = generate(
        system, int(data_cfg.get("n_episodes", 12)), n_steps, dt, seed=rep_seed
    )
    if data_cfg.get("split_m", 1):
        dataset = split_episodes(dataset, int(data_cfg.get("split_m", 1)))
    dataset = _subsample_pairs(dataset, data_cfg.get("max_pairs"))
    adaptive_cfg = dict(cfg.get("adaptive") or {})
    l_init = int(adaptive_cfg.pop("l_init", 1))
    run_cfg = dict(cfg)
    if variant == "adaptive":
        run_cfg["iterations"] = l_init
        adaptive = _adaptive_from_config(adaptive_cfg or True)
    else:
        run_cfg["iterations"] = int(cfg.get("fixed_iterations", 5))
        adaptive = None
    run_cfg.setdefault("mode", "fixed_point")
    config = _loss_config(run_cfg, dt)
    model = _model_from_config(cfg.get("model"), system.dim, rep_seed)
    model, report = train(
        model,
        dataset,
        config,
        epochs=int(cfg.get("epochs", 2000)),
        schedule=_schedule_from_config(cfg.get("schedule")),
        adaptive=adaptive,
    )
    pts = _test_points(system, cfg.get("test"))
    ref_cfg = dict(run_cfg)
    ref_cfg["mode"] = "exact"
    sub = pts[:: max(1, len(pts) // 300)]
    err_imde = float("nan")
    if cfg.get("imde_reference", "auto") != "none":
        system2 = _resolve_system(system_spec)
        ref = numeric_imde(
            system2.field,
            run_cfg.get("tableau", "implicit_euler"),
            mode_from_config("exact"),
            dt / int(run_cfg.get("substeps", 1)),
            depth=3,
        )
        err_imde = field_error(model, ref, sub)
    return {
        "replicate_seed": rep_seed,
        "variant": variant,
        "final_loss": report.final_loss,
        "error_truth": field_error(model, system.field, pts),
        "error_imde": err_imde,
        "evals": report.total_evals,
        "jacobian_evals": report.jacobian_eval_counts[-1]
        if report.jacobian_eval_counts
        else 0,
        "final_L": report.l_per_epoch[-1],
        "seconds": report.seconds,
    }


def cmd_compare(cfg, args):
    _reject_unknown(cfg, _COMPARE_KEYS)
    seed0 = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    replicates = int(cfg.get("replicates", 3))
    system_spec = _take(cfg, "system")
    _take(cfg, "dt")
    payloads = [
        (cfg, system_spec, variant, seed0 + 1000 * rep)
        for rep in range(replicates)
        for variant in ("adaptive", "fixed")
    ]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_compare_cell, payloads))
    else:
        rows = [_compare_cell(p) for p in payloads]
    out = args.out or cfg.get("out", "compare.csv")
    fields = [
        "replicate_seed", "variant", "final_loss", "error_truth", "error_imde",
        "evals", "jacobian_evals", "final_L", "seconds",
    ]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    summary = {}
    for variant in ("adaptive", "fixed"):
        sel = [r for r in rows if r["variant"] == variant]
        summary[variant] = {
            key: {
                "mean": float(np.mean([r[key] for r in sel])),
                "sd": float(np.std([r[key] for r in sel])) if len(sel) > 1 else None,
            }
            for key in ("error_truth", "error_imde", "evals", "seconds")
        }
        stats = summary[variant]
        sd = stats["error_truth"]["sd"]
        sd_txt = f" +- {sd:.2e}" if sd is not None else ""
        print(
            f"{variant:8s}: Error(f,truth)={stats['error_truth']['mean']:.4e}"
            f"{sd_txt}  evals={stats['evals']['mean']:.3e}"
            f"  seconds={stats['seconds']['mean']:.1f}"
        )
    ratio = summary["fixed"]["evals"]["mean"] / summary["adaptive"]["evals"]["mean"]
    err_ratio = (
        summary["adaptive"]["error_imde"]["mean"]
        / summary["fixed"]["error_imde"]["mean"]
    )
    summary["eval_ratio_fixed_over_adaptive"] = ratio
    summary["error_imde_ratio_adaptive_over_fixed"] = err_ratio
    Path(str(out) + ".summary.json").write_text(
        json.dumps(summary, indent=2), encoding="utf-8"
    )
    print(f"field-eval ratio (fixed / adaptive): {ratio:.2f}")
    print(f"Error(f, f_h) ratio (adaptive / fixed): {err_ratio:.2f}")
    print(f"rows -> {out}")
    return 0


def cmd_report(cfg, args):
    paths = []
    for spec in args.inputs:
        p = Path(spec)
        if p.is_dir():
            paths.extend(sorted(p.glob("**/*.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise ConfigError(f"no such run input: {p}")
    paths = [p for p in paths if not str(p).endswith("curve.csv")]
    if not paths:
        raise ConfigError("no result CSV files found in the given inputs")
    merged = []
    for p in paths:
        with open(p, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                row["source"] = str(p)
                merged.append(row)
    fieldnames = sorted({k for row in merged for k in row})
    out = args.out or "report.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(merged)
    # recompute grouped summaries for numeric columns
    grouped = {}
    for row in merged:
        key = tuple(
            row.get(k, "") for k in ("source", "variant", "dt", "s") if k in row
        )
        grouped.setdefault(key, []).append(row)
    lines = ["| group | column | mean | sd | n |", "|---|---|---|---|---|"]
    for key, rows_ in sorted(grouped.items()):
        for col in fieldnames:
            vals = []
            for r in rows_:
                try:
                    vals.append(float(r[col]))
                except (KeyError, TypeError, ValueError):
                    pass
            if len(vals) == len(rows_) and vals:
                mean = float(np.mean(vals))
                sd = float(np.std(vals))
                lines.append(
                    f"| {' / '.join(map(str, key))} | {col} | {mean:.6e} "
                    f"| {sd:.2e} | {len(vals)} |"
                )
    md = "\n".join(lines) + "\n"
    Path(str(out) + ".md").write_text(md, encoding="utf-8")
    print(f"merged {len(merged)} rows from {len(paths)} files -> {out}")
    return 0


# ---------------------------------------------------------------------------

_PAPER_SCALE_DEFAULTS = {
    "epochs": 100000,
    "replicates": 5,
}


def _apply_paper_scale(cfg):
    overlay = dict(cfg.pop("paper_scale", {}))
    merged = dict(cfg)
    for key, value in {**_PAPER_SCALE_DEFAULTS, **overlay}.items():
        merged[key] = value
    model = dict(merged.get("model") or {})
    model.setdefault("hidden", 128)
    merged["model"] = model
    data = dict(merged.get("data") or {})
    data.pop("max_pairs", None)
    if "data" in merged:
        merged["data"] = data
    return merged


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="odelearn",
        description="Learn ODE right-hand sides through unrolled implicit "
        "Runge-Kutta schemes and verify them against inverse modified "
        "equations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": cmd_generate,
        "train": cmd_train,
        "imde": cmd_imde,
        "sweep": cmd_sweep,
        "compare": cmd_compare,
        "report": cmd_report,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name, help=fn.__doc__)
        if name == "report":
            p.add_argument("inputs", nargs="+", help="run dirs or CSV files")
        else:
            p.add_argument("--config", required=True, help="JSON or TOML config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--paper-scale", action="store_true")
        p.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            cfg = {}
        else:
            cfg = load_config(args.config)
            if args.paper_scale:
                cfg = _apply_paper_scale(cfg)
            else:
                cfg.pop("paper_scale", None)
        return commands[args.command](cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except (
        DivergenceError,
        SingularMatrixError,
        ConvergenceFailure,
        OracleFailure,
    ) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
