"""Command-line pipeline: simulate data, fit stage one in parallel, fit
stage two or the single-chain baseline, impute paths, discretize, and
summarize.

Configuration is a flat ``key=value`` file; command-line flags override
file values; the fully resolved config is dumped next to every command's
outputs so any run can be reproduced bit-exactly from it.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import ctds as ctds_mod
from . import diagnostics as diag
from . import fmm as fmm_mod
from . import rsf as rsf_mod
from . import scenarios
from .probdist import MixtureErrorParams, MvnParams, SpdFactor, substream
from .stage1 import ChainConfig, load_draws, run_parallel, save_draws
from .stage2 import (
    HyperPriors,
    load_stage2_output,
    run_full_hierarchy,
    run_stage2,
    save_stage2_output,
)

__all__ = ["main", "ConfigError", "DataError"]


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# --- config handling ------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """File values override defaults; explicit CLI flags override both."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in ("seed", "iterations", "burnin", "thin", "workers", "out"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key, val in (getattr(args, "set", None) or {}).items():
        cfg[key] = val
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    return cfg


def dump_effective_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.txt"), "w") as fh:
        for key in sorted(cfg):
            fh.write(f"{key}={cfg[key]}\n")


def _int(cfg, key):
    try:
        return int(cfg[key])
    except (ValueError, TypeError):
        raise ConfigError(f"config key {key} must be an integer, got {cfg[key]!r}")


def _float(cfg, key):
    try:
        return float(cfg[key])
    except (ValueError, TypeError):
        raise ConfigError(f"config key {key} must be a number, got {cfg[key]!r}")


def _chain_config(cfg) -> ChainConfig:
    try:
        return ChainConfig(
            iterations=_int(cfg, "iterations"),
            burnin=_int(cfg, "burnin"),
            thin=_int(cfg, "thin"),
            seed=_int(cfg, "seed"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _hyper(cfg, p: int) -> HyperPriors:
    from .probdist import WishartParams

    mu0_var = _float(cfg, "mu0_var")
    nu = _float(cfg, "wishart_dof")
    s_diag = _float(cfg, "wishart_scale")
    if nu < p:
        raise ConfigError(f"wishart_dof {nu} must be >= dimension {p}")
    return HyperPriors(
        mu0=MvnParams(np.zeros(p), SpdFactor.from_diagonal(np.full(p, mu0_var))),
        wishart=WishartParams(
            scale=SpdFactor.from_diagonal(np.full(p, 1.0 / (s_diag * nu))), dof=nu
        ),
    )


# --- data loading ---------------------------------------------------------


def _load_rasters(cfg) -> list[rsf_mod.RasterGrid]:
    paths = [p.strip() for p in str(cfg["rasters"]).split(",") if p.strip()]
    if not paths:
        raise ConfigError("config key 'rasters' is empty")
    grids = []
    for path in paths:
        if not os.path.exists(path):
            raise DataError(f"raster file not found: {path}")
        try:
            grids.append(rsf_mod.read_ascii_grid(path))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}")
    return grids


def _load_telemetry(cfg) -> list[rsf_mod.PointSet]:
    path = str(cfg["telemetry"])
    if not os.path.exists(path):
        raise DataError(f"telemetry file not found: {path}")
    try:
        return rsf_mod.read_telemetry(path)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}")


def _build_models(cfg):
    """Build the per-individual models named by config key ``model``."""
    kind = str(cfg["model"])
    prior_var = _float(cfg, "prior_var")
    if kind == "rsf":
        grids = _load_rasters(cfg)
        telemetry = _load_telemetry(cfg)
        design = rsf_mod.make_rsf_design(grids)
        prior = MvnParams(
            np.zeros(design.p), SpdFactor.from_diagonal(np.full(design.p, prior_var))
        )
        models = []
        for ps in telemetry:
            try:
                y = rsf_mod.bin_counts(ps, grids[0])
            except ValueError as exc:
                raise DataError(str(exc))
            models.append(rsf_mod.make_rsf_model(y, design, prior, ps.individual_id))
        return models, [ps.individual_id for ps in telemetry]
    if kind == "ctds":
        grids = _load_rasters(cfg)
        paths_dir = str(cfg["paths"])
        manifests = sorted(glob.glob(os.path.join(paths_dir, "*.json")))
        if not manifests:
            raise DataError(f"no path draw manifests found in {paths_dir}")
        p = 1 + len(grids)
        prior = MvnParams(np.zeros(p), SpdFactor.from_diagonal(np.full(p, prior_var)))
        models, ids = [], []
        for man in manifests:
            iid = os.path.splitext(os.path.basename(man))[0]
            try:
                pool = fmm_mod.load_path_draws(paths_dir, iid)
                models.append(
                    ctds_mod.make_ctds_model(pool, grids, grids[0], prior)
                )
            except (ValueError, FileNotFoundError) as exc:
                raise DataError(f"individual {iid}: {exc}")
            ids.append(iid)
        return models, ids
    raise ConfigError(f"unknown model kind {kind!r} (expected rsf or ctds)")


def _write_summaries(out, out_dir: str) -> None:
    draws, names = diag.stage2_parameter_table(out)
    summaries = diag.summarize(draws, names)
    diag.write_summary_csv(summaries, os.path.join(out_dir, "summary.csv"))
    diag.write_interval_csv(summaries, os.path.join(out_dir, "intervals.csv"))


# --- commands -------------------------------------------------------------


def cmd_simulate_rsf(args) -> int:
    cfg = resolve_config(
        args,
        {
            "seed": 0,
            "individuals": 20,
            "mean_fixes": 30,
            "grid_size": 40,
            "out": None,
        },
    )
    out_dir = str(cfg["out"])
    sc = scenarios.simulate_rsf_scenario(
        seed=_int(cfg, "seed"),
        n_individuals=_int(cfg, "individuals"),
        mean_fixes=_int(cfg, "mean_fixes"),
        grid_size=_int(cfg, "grid_size"),
    )
    scenarios.write_rsf_scenario(sc, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"simulate-rsf: {len(sc.telemetry)} individuals -> {out_dir}")
    return 0


def cmd_simulate_ctds(args) -> int:
    cfg = resolve_config(
        args,
        {
            "seed": 0,
            "individuals": 18,
            "target_transitions": 450,
            "grid_size": 30,
            "obs_per_individual": 150,
            "out": None,
        },
    )
    out_dir = str(cfg["out"])
    sc = scenarios.simulate_ctds_scenario(
        seed=_int(cfg, "seed"),
        n_individuals=_int(cfg, "individuals"),
        target_transitions=_int(cfg, "target_transitions"),
        grid_size=_int(cfg, "grid_size"),
        obs_per_individual=_int(cfg, "obs_per_individual"),
    )
    scenarios.write_ctds_scenario(sc, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"simulate-ctds: {len(sc.telemetry)} individuals -> {out_dir}")
    return 0


def cmd_impute_paths(args) -> int:
    cfg = resolve_config(
        args,
        {
            "seed": 0,
            "iterations": 4000,
            "burnin": 1000,
            "thin": 1,
            "telemetry": None,
            "paths_m": 50,
            "grid_points": 2000,
            "error_sd1": 0.6,
            "error_sd2": 0.15,
            "mixture_p": 0.5,
            "rotation_angle": np.pi / 2,
            "out": None,
        },
    )
    out_dir = str(cfg["out"])
    telemetry = _load_telemetry(cfg)
    os.makedirs(out_dir, exist_ok=True)
    m = _int(cfg, "paths_m")
    for j, ps in enumerate(telemetry):
        if ps.times is None:
            raise DataError(f"individual {ps.individual_id}: telemetry lacks times")
        est = fmm_mod.FunctionalMovementModel(
            base_cov=np.diag(
                [_float(cfg, "error_sd1") ** 2, _float(cfg, "error_sd2") ** 2]
            ),
            mixture_p=_float(cfg, "mixture_p"),
            rotation_angle=_float(cfg, "rotation_angle"),
            iterations=_int(cfg, "iterations"),
            burnin=_int(cfg, "burnin"),
            seed=_int(cfg, "seed") + j,
        )
        est.fit(ps.times, ps.points, individual_id=ps.individual_id)
        grid = np.linspace(ps.times.min(), ps.times.max(), _int(cfg, "grid_points"))
        fmm_mod.save_path_draws(est.sample_paths(grid, m), out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"impute-paths: {len(telemetry)} individuals, M={m} -> {out_dir}")
    return 0


def cmd_discretize(args) -> int:
    cfg = resolve_config(
        args, {"paths": None, "rasters": None, "out": None, "seed": 0}
    )
    out_dir = str(cfg["out"])
    grids = _load_rasters(cfg)
    paths_dir = str(cfg["paths"])
    manifests = sorted(glob.glob(os.path.join(paths_dir, "*.json")))
    if not manifests:
        raise DataError(f"no path draw manifests found in {paths_dir}")
    os.makedirs(out_dir, exist_ok=True)
    for man in manifests:
        iid = os.path.splitext(os.path.basename(man))[0]
        pool = fmm_mod.load_path_draws(paths_dir, iid)
        end_time = float(pool.times[-1])
        for mi in range(pool.n_paths):
            try:
                cp = ctds_mod.discretize_path(pool.times, pool.draws[mi], grids[0])
            except ValueError as exc:
                raise DataError(f"individual {iid}, realization {mi}: {exc}")
            pairs = ctds_mod.extract_pairs(cp, end_time)
            design = ctds_mod.make_ctds_design(pairs, grids, grids[0])
            ctds_mod.write_ctds_csv(
                design, os.path.join(out_dir, f"{iid}_{mi}.csv")
            )
    dump_effective_config(cfg, out_dir)
    print(f"discretize: {len(manifests)} individuals -> {out_dir}")
    return 0


_FIT_DEFAULTS = {
    "seed": 0,
    "iterations": 20000,
    "burnin": 5000,
    "thin": 1,
    "workers": 1,
    "model": None,
    "prior_var": 100.0,
    "out": None,
}


def cmd_fit_stage1(args) -> int:
    cfg = resolve_config(args, {**_FIT_DEFAULTS, "telemetry": "", "rasters": "", "paths": ""})
    out_dir = str(cfg["out"])
    models, ids = _build_models(cfg)
    t0 = time.perf_counter()
    pool = run_parallel(models, _chain_config(cfg), workers=_int(cfg, "workers"), ids=ids)
    elapsed = time.perf_counter() - t0
    save_draws(pool, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"fit-stage1: {len(pool)} individuals in {elapsed:.2f}s -> {out_dir}")
    return 0


_HYPER_DEFAULTS = {"mu0_var": 100.0, "wishart_dof": 3.0, "wishart_scale": 1.0}


def cmd_fit_stage2(args) -> int:
    cfg = resolve_config(
        args,
        {
            "seed": 0,
            "iterations": 20000,
            "burnin": 5000,
            "thin": 1,
            "pools": None,
            "out": None,
            **_HYPER_DEFAULTS,
        },
    )
    out_dir = str(cfg["out"])
    try:
        pools = load_draws(str(cfg["pools"]))
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc))
    hyper = _hyper(cfg, pools[0].p)
    t0 = time.perf_counter()
    out = run_stage2(
        pools, hyper, _chain_config(cfg), substream(_int(cfg, "seed"), 1_000_000)
    )
    elapsed = time.perf_counter() - t0
    save_stage2_output(out, out_dir)
    _write_summaries(out, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"fit-stage2: {out.n_draws} draws in {elapsed:.2f}s -> {out_dir}")
    return 0


def cmd_fit_full(args) -> int:
    cfg = resolve_config(
        args,
        {**_FIT_DEFAULTS, "telemetry": "", "rasters": "", "paths": "", **_HYPER_DEFAULTS},
    )
    out_dir = str(cfg["out"])
    models, _ = _build_models(cfg)
    hyper = _hyper(cfg, models[0].dim_beta)
    t0 = time.perf_counter()
    out = run_full_hierarchy(
        models, hyper, _chain_config(cfg), substream(_int(cfg, "seed"), 2_000_000)
    )
    elapsed = time.perf_counter() - t0
    save_stage2_output(out, out_dir)
    _write_summaries(out, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"fit-full: {out.n_draws} draws in {elapsed:.2f}s -> {out_dir}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = resolve_config(args, {"in": None, "out": None, "seed": 0})
    out_dir = str(cfg["out"])
    try:
        out = load_stage2_output(str(cfg["in"]))
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc))
    os.makedirs(out_dir, exist_ok=True)
    _write_summaries(out, out_dir)
    dump_effective_config(cfg, out_dir)
    print(f"diagnose: wrote summary.csv and intervals.csv -> {out_dir}")
    return 0


# --- entry point ----------------------------------------------------------


class _SetAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        current = getattr(namespace, self.dest) or {}
        for item in values:
            if "=" not in item:
                raise argparse.ArgumentError(self, f"expected key=value, got {item!r}")
            key, val = item.split("=", 1)
            current[key] = val
        setattr(namespace, self.dest, current)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiermove",
        description="Two-stage hierarchical movement-model fitting pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate-rsf": cmd_simulate_rsf,
        "simulate-ctds": cmd_simulate_ctds,
        "impute-paths": cmd_impute_paths,
        "discretize": cmd_discretize,
        "fit-stage1": cmd_fit_stage1,
        "fit-stage2": cmd_fit_stage2,
        "fit-full": cmd_fit_full,
        "diagnose": cmd_diagnose,
    }
    for name, func in commands.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--burnin", type=int)
        sp.add_argument("--thin", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out")
        sp.add_argument(
            "--set", nargs="+", action=_SetAction, metavar="KEY=VALUE",
            help="override any config key",
        )
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
