"""Batch front-end: JSON experiment configs in, JSON/CSV reports out.

No interactive steering: a config file fully determines a run, every report
embeds the resolved config plus backend checksums, and reruns with
``reproducible: true`` are byte-identical. Exit codes are part of the
interface:

* 0: success;
* 2: a mathematically meaningful refusal (gap condition failed, curvature
  changes sign, eigenvalue numerically zero), with the violated hypothesis
  named by a stable tag in the error report;
* 1: anything else (bad config, solver breakdown, internal errors).

Config schema (unknown keys are errors)::

    {
      "task": "spectrum|eval|derivative|certify|maximize|optimize|sweep",
      "backend": {"kind": "torus_fd", "grid": [16,16,16],
                  "edges": [6.2831853, ...], "curvature": "6 + 2*sin(x1)"}
               | {"kind": "sphere3_spectral", "degree_cutoff": 4}
               | {"kind": "synthetic", "path": "arrays.npz"},
      "factor": "exp(0.2*cos(x2))",        # constant or expression
      "k": 1,
      "deformation": {"w_field": "sin(x1)"}   # or {"h": "..."}
      "sampler": {"band_limit": 2, "amplitude": 0.5},
      "num_samples": 200,
      "sweep": {"axis": "scale|sampler_seed|deformation_step",
                "values": [...]} ,
      "tolerances": {"solver_tol": ..., "cluster_tol": ..., "sign_tol": ...,
                     "cert_tol": ..., "opt_tol": ...},
      "optimize": {"max_iter": 500, "opt_tol": 1e-6},
      "seed": 0,
      "reproducible": true
    }

Field expressions use the closed-form grammar (sums/products of sin, cos,
exp of linear coordinate forms; coordinates x1..x3 on the torus, x1..x4 on
the sphere embedding). Tolerance environment overrides:
``CONFSPEC_SOLVER_TOL``, ``CONFSPEC_CLUSTER_TOL``, ``CONFSPEC_SIGN_TOL``,
``CONFSPEC_CERT_TOL``, ``CONFSPEC_OPT_TOL``.

Sweep CSV columns (stable):

* scale axis: index, scale, lambda_k, mass, F_k
* sampler_seed axis: index, seed, status, lambda_k, mass, F_k
* deformation_step axis: index, t, lambda_k, mass, F_k, quotient_F,
  quotient_lambda
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConstructionError,
    HypothesisViolationError,
    SignConditionError,
    ToolkitError,
)
from .extremal import (
    OptimizeOptions,
    certify_extremal,
    construct_maximizer,
    necessary_condition_residual,
    optimize_F1,
)
from .functional import SamplerSpec, eval_F, sample_factor, sup_estimate
from .geometry import (
    ConformalFactor,
    build_sphere3_class,
    build_synthetic_class,
    build_torus_class,
    factor_mass,
    make_factor,
    normalize_factor,
)
from .perturbation import fd_oracle, one_sided_F_derivatives, zero_mean_generator
from .spectral import SolveOptions, solve_pencil

_TASKS = ("spectrum", "eval", "derivative", "certify", "maximize", "optimize", "sweep")

_SCHEMA = {
    "task": None,
    "backend": {"kind", "grid", "edges", "curvature", "degree_cutoff", "path"},
    "factor": None,
    "k": None,
    "deformation": {"w_field", "h"},
    "sampler": {"band_limit", "amplitude"},
    "num_samples": None,
    "sweep": {"axis", "values", "count"},
    "tolerances": {"solver_tol", "cluster_tol", "sign_tol", "cert_tol", "opt_tol"},
    "optimize": {"max_iter", "opt_tol", "max_restarts"},
    "seed": None,
    "reproducible": None,
}

_ENV_TOLERANCES = {
    "CONFSPEC_SOLVER_TOL": "solver_tol",
    "CONFSPEC_CLUSTER_TOL": "cluster_tol",
    "CONFSPEC_SIGN_TOL": "sign_tol",
    "CONFSPEC_CERT_TOL": "cert_tol",
    "CONFSPEC_OPT_TOL": "opt_tol",
}


class ConfigError(ToolkitError):
    """The experiment config is malformed."""


def validate_config(raw: dict) -> dict:
    """Strict validation: unknown keys anywhere are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key, value in raw.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            for sub in value:
                if sub not in allowed:
                    raise ConfigError(f"unknown config key {key!r}.{sub!r}")
    task = raw.get("task")
    if task not in _TASKS:
        raise ConfigError(f"task must be one of {_TASKS}, got {task!r}")
    if "backend" not in raw:
        raise ConfigError("config requires a backend section")
    resolved = {
        "task": task,
        "backend": dict(raw["backend"]),
        "factor": raw.get("factor", 1.0),
        "k": int(raw.get("k", 1)),
        "deformation": dict(raw.get("deformation", {})),
        "sampler": dict(raw.get("sampler", {})),
        "num_samples": int(raw.get("num_samples", 100)),
        "sweep": dict(raw.get("sweep", {})),
        "tolerances": dict(raw.get("tolerances", {})),
        "optimize": dict(raw.get("optimize", {})),
        "seed": int(raw.get("seed", 0)),
        "reproducible": bool(raw.get("reproducible", True)),
    }
    for env_name, tol_name in _ENV_TOLERANCES.items():
        if env_name in os.environ:
            resolved["tolerances"][tol_name] = float(os.environ[env_name])
    return resolved


def build_backend(spec: dict):
    kind = spec.get("kind")
    if kind == "torus_fd":
        grid = spec.get("grid", [16, 16, 16])
        edges = spec.get("edges", [2 * np.pi] * 3)
        curvature = spec.get("curvature", 6.0)
        return build_torus_class(grid, edges, curvature)
    if kind == "sphere3_spectral":
        return build_sphere3_class(spec.get("degree_cutoff", 4))
    if kind == "synthetic":
        path = spec.get("path")
        if path is None:
            raise ConfigError("synthetic backend requires 'path' to an .npz file")
        data = np.load(path)
        return build_synthetic_class(
            data["stiffness"], data["dv"], data["curvature"], int(data["dim"])
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def _solve_options(config: dict) -> SolveOptions:
    tol = config["tolerances"]
    kwargs = {}
    for name in ("solver_tol", "cluster_tol", "sign_tol"):
        if name in tol:
            kwargs[name] = float(tol[name])
    return replace(SolveOptions(reproducible=config["reproducible"]), **kwargs)


def backend_checksums(cls) -> dict:
    data = {
        "backend": cls.backend_tag,
        "n_nodes": int(cls.n_nodes),
        "n_dof": int(cls.n_dof),
        "sum_dv": float(cls.dv.sum()),
        "dim": int(cls.dim),
    }
    if "grid" in cls.meta:
        data["grid"] = list(cls.meta["grid"])
    if "degree_cutoff" in cls.meta:
        data["degree_cutoff"] = int(cls.meta["degree_cutoff"])
    return data


def _deformation_direction(cls, mu, spec: dict):
    if "h" in spec:
        return cls.node_field(spec["h"])
    if "w_field" in spec:
        return zero_mean_generator(cls, mu, spec["w_field"])
    raise ConfigError("derivative task requires deformation.h or deformation.w_field")


def _run_task(config: dict, cls, opts: SolveOptions) -> dict:
    task = config["task"]
    k = config["k"]

    if task == "spectrum":
        mu = make_factor(cls, config["factor"])
        spectrum = solve_pencil(cls, mu, k, opts)
        return {
            "eigenvalues": [float(x) for x in spectrum.eigenvalues],
            "clusters": [
                {"lo": c.lo, "hi": c.hi, "size": c.size} for c in spectrum.clusters
            ],
            "max_residual": float(spectrum.residuals.max()),
            "solver_path": spectrum.meta["path"],
        }

    if task == "eval":
        mu = make_factor(cls, config["factor"])
        return eval_F(cls, mu, k, opts).to_dict()

    if task == "derivative":
        mu = normalize_factor(cls, make_factor(cls, config["factor"]))
        direction = _deformation_direction(cls, mu, config["deformation"])
        report = one_sided_F_derivatives(cls, mu, direction, k, opts)
        return report.to_dict()

    if task == "certify":
        mu = normalize_factor(cls, make_factor(cls, config["factor"]))
        if k == 1:
            # first-order necessary condition: a sign-changing background
            # curvature rules out extremal factors for the first eigenvalue
            if cls.curvature.min() < 0 < cls.curvature.max():
                raise SignConditionError(
                    "background curvature changes sign; no extremal factor "
                    "for F^1 exists"
                )
        cert_tol = float(config["tolerances"].get("cert_tol", 1e-8))
        cert = certify_extremal(cls, mu, k, cert_tol, opts)
        return cert.to_dict()

    if task == "maximize":
        result = construct_maximizer(cls, opts)
        report = result.to_dict()
        condition = necessary_condition_residual(cls, result.mu_max, result.Lambda1)
        report["necessary_condition"] = condition.to_dict()
        return report

    if task == "optimize":
        mu_init = make_factor(cls, config["factor"])
        opt_kwargs = {}
        if "opt_tol" in config["tolerances"]:
            opt_kwargs["opt_tol"] = float(config["tolerances"]["opt_tol"])
        for name in ("max_iter", "opt_tol", "max_restarts"):
            if name in config["optimize"]:
                cast = int if name in ("max_iter", "max_restarts") else float
                opt_kwargs[name] = cast(config["optimize"][name])
        result = optimize_F1(cls, mu_init, OptimizeOptions(**opt_kwargs), opts)
        report = result.to_dict()
        report["trace"] = report["trace"][-5:]  # last iterations only
        return report

    raise ConfigError(f"task {task!r} is not a scalar task")


def _run_sweep(config: dict, cls, opts: SolveOptions, out_dir: Path):
    axis = config["sweep"].get("axis")
    k = config["k"]
    rows = []
    if axis == "scale":
        values = config["sweep"].get("values")
        if not values:
            raise ConfigError("scale sweep requires sweep.values")
        base = make_factor(cls, config["factor"])
        header = ["index", "scale", "lambda_k", "mass", "F_k"]
        for index, scale in enumerate(values):
            fval = eval_F(cls, ConformalFactor(float(scale) * base.mu), k, opts)
            rows.append([index, float(scale), fval.lambda_k, fval.mass, fval.value])
    elif axis == "sampler_seed":
        count = int(config["sweep"].get("count", config["num_samples"]))
        spec = SamplerSpec(
            band_limit=int(config["sampler"].get("band_limit", 2)),
            amplitude=float(config["sampler"].get("amplitude", 0.5)),
        )
        header = ["index", "seed", "status", "lambda_k", "mass", "F_k"]
        estimate = sup_estimate(
            cls, k, spec, num_samples=count, seed=config["seed"], opts=opts
        )
        for record in estimate.trace:
            rows.append(
                [
                    record.index,
                    record.index,
                    record.status,
                    record.lambda_k,
                    record.mass,
                    record.value,
                ]
            )
    elif axis == "deformation_step":
        values = config["sweep"].get("values")
        if not values:
            raise ConfigError("deformation_step sweep requires sweep.values")
        mu = normalize_factor(cls, make_factor(cls, config["factor"]))
        direction = _deformation_direction(cls, mu, config["deformation"])
        h_arr = direction.h if hasattr(direction, "h") else direction
        base = eval_F(cls, mu, k, opts)
        header = ["index", "t", "lambda_k", "mass", "F_k", "quotient_F", "quotient_lambda"]
        for index, t_val in enumerate(values):
            t_val = float(t_val)
            mu_t = ConformalFactor(mu.mu * (1.0 + t_val * h_arr))
            fval = eval_F(cls, mu_t, k, opts)
            rows.append(
                [
                    index,
                    t_val,
                    fval.lambda_k,
                    fval.mass,
                    fval.value,
                    (fval.value - base.value) / t_val,
                    (fval.lambda_k - base.lambda_k) / t_val,
                ]
            )
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if x is None else repr(x) if isinstance(x, float) else x for x in row])
    return {"rows": len(rows), "columns": header, "csv": csv_path.name}


def run(config: dict, out_dir) -> int:
    """Execute one validated config; writes report.json (and sweep.csv)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"version": __version__, "config": config}
    code = 0
    try:
        cls = build_backend(config["backend"])
        report["backend_checksums"] = backend_checksums(cls)
        opts = _solve_options(config)
        if config["task"] == "sweep":
            report["result"] = _run_sweep(config, cls, opts, out_dir)
        else:
            report["result"] = _run_task(config, cls, opts)
    except HypothesisViolationError as exc:
        report["error"] = {
            "type": type(exc).__name__,
            "message": str(exc),
            "hypothesis_tag": exc.hypothesis_tag,
        }
        code = 2
    except ToolkitError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = 1

    with open(out_dir / "report.json", "w") as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="confspec",
        description="Batch runner for conformal-Laplacian spectrum experiments",
    )
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument(
        "--reproducible",
        action="store_true",
        help="force deterministic solves and byte-stable reports",
    )
    parser.add_argument(
        "--threads", type=int, default=None, help="cap BLAS/LAPACK thread count"
    )
    args = parser.parse_args(argv)

    try:
        with open(args.config) as handle:
            raw = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1

    try:
        config = validate_config(raw)
    except (ConfigError, ConstructionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.seed is not None:
        config["seed"] = args.seed
    if args.reproducible:
        config["reproducible"] = True

    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return run(config, args.out)
    return run(config, args.out)


if __name__ == "__main__":
    sys.exit(main())
