"""Command line front end: simulate / tune / sample / bench / truncstudy / diag.

Every value a subcommand consumes can come from a flat key-value config file
(--config); flags override the file, the file overrides built-in defaults.
Each run that writes an output also writes a JSON manifest beside it with the
fully resolved config, the seed, and library versions, and any run can be
replayed from its manifest alone via argv_from_manifest.

Exit codes: 0 success, 2 usage error, 1 numerical failure in the libraries.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np
import scipy

from .datasets import read_dataset, write_dataset
from .debias import EstimatorConfig, LikelihoodEstimator, MonotonicityError
from .diagnostics import (
    MATRIX_CLASSES,
    bench_expm,
    ess,
    truncation_study,
    write_rows_csv,
)
from .expm import FlopMeter
from .reaction import builtin_model
from .sampler import (
    GammaPrior,
    LogNormalPrior,
    Prior,
    multistart,
    read_trace,
    sample_chain,
    write_trace,
)
from .simulate import sample_dataset
from .statespace import SeedPathError
from .tuning import (
    estimate_sigma_zeta,
    grid_select,
    laplace_covariance,
    map_estimate,
    tune_estimator,
    tuned_config_from_text,
    tuned_config_to_text,
)

__all__ = ["main", "argv_from_manifest"]

_NUMERICAL_ERRORS = (
    SeedPathError,
    MonotonicityError,
    RuntimeError,
    FloatingPointError,
    ZeroDivisionError,
    ValueError,
    np.linalg.LinAlgError,
    OSError,
)


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# small coercion helpers: values may arrive typed (flag) or as strings (file)


def _as_int(v) -> int:
    return int(str(v))


def _as_float(v) -> float:
    return float(str(v))

def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _floats(v) -> list:
    if isinstance(v, (list, tuple)):
        return [float(x) for x in v]
    return [float(x) for x in str(v).split(",") if x.strip()]


def _ints(v) -> list:
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).split(",") if x.strip()]


def _strs(v) -> list:
    if isinstance(v, (list, tuple)):
        return [str(x) for x in v]
    return [x.strip() for x in str(v).split(",") if x.strip()]


def _read_flat(text: str) -> dict:
    pairs = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"malformed config line: {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


# ---------------------------------------------------------------------------
# parser construction; defaults live outside argparse so a config file can
# slot in between the defaults and explicitly supplied flags

_DEFAULTS: dict = {}


def _add(parser, command: str, *names, default=None, **kwargs):
    action = parser.add_argument(*names, default=argparse.SUPPRESS, **kwargs)
    _DEFAULTS[command][action.dest] = default
    return action


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctmcinfer",
        description="inference for countable-state CTMCs via monotone "
                    "matrix-exponential approximations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def new_command(name, help_text):
        _DEFAULTS[name] = {}
        p = sub.add_parser(name, help=help_text)
        _add(p, name, "--config", help="flat key=value config file")
        # provenance marker so manifest replays keep the original
        # flag-vs-file override decisions
        _add(p, name, "--provided", help=argparse.SUPPRESS)
        return p

    def model_flags(p, name):
        _add(p, name, "--model", help="built-in model name")
        _add(p, name, "--c", help="number of servers (mmc only)")
        _add(p, name, "--upper-bounds",
             help="comma-separated per-species caps")

    def estimator_flags(p, name):
        _add(p, name, "--mode", default="auto",
             help="ia, ra, or auto (default auto)")
        _add(p, name, "--method", default="skeletoid",
             help="skeletoid, uniformization_seq, or uniformization_global")
        _add(p, name, "--qbar",
             help="global rate floor for uniformization_global")

    def prior_flags(p, name):
        _add(p, name, "--prior", default="lognormal",
             help="lognormal or gamma, iid over parameters")
        _add(p, name, "--prior-mu", default=0.0, type=float)
        _add(p, name, "--prior-sigma", default=1.0, type=float)
        _add(p, name, "--prior-shape", default=1.0, type=float)
        _add(p, name, "--prior-rate", default=1.0, type=float)

    p = new_command("simulate", "draw a dataset from a built-in model")
    model_flags(p, "simulate")
    _add(p, "simulate", "--theta", help="comma-separated rate parameters")
    _add(p, "simulate", "--x0", help="comma-separated initial state")
    _add(p, "simulate", "--tend", type=float, help="horizon for a regular grid")
    _add(p, "simulate", "--dt", type=float, help="grid spacing")
    _add(p, "simulate", "--times", help="explicit comma-separated times")
    _add(p, "simulate", "--seed", default=0, type=int)
    _add(p, "simulate", "-o", "--out", help="output dataset CSV")

    p = new_command("tune", "tune estimator sequences and debiasing laws")
    model_flags(p, "tune")
    estimator_flags(p, "tune")
    prior_flags(p, "tune")
    _add(p, "tune", "--data", help="dataset CSV")
    _add(p, "tune", "--theta-init", help="starting parameters, comma-separated")
    _add(p, "tune", "--p-min", default=0.9, type=float,
         help="offset threshold for the quick path")
    _add(p, "tune", "--grid", action="store_true", default=False,
         help="full noise-floor and proposal-scale grid search")
    _add(p, "tune", "--no-map", action="store_true", default=False,
         help="tune at --theta-init instead of the posterior mode")
    _add(p, "tune", "--n-draws", default=100, type=int,
         help="draws for the noise measurement")
    _add(p, "tune", "--short-run", default=200, type=int,
         help="chain length per proposal-scale candidate")
    _add(p, "tune", "--eps", default=1e-8, type=float)
    _add(p, "tune", "--seed", default=0, type=int)
    _add(p, "tune", "-o", "--out", help="output tuned-config file")

    p = new_command("sample", "run the pseudo-marginal sampler")
    model_flags(p, "sample")
    estimator_flags(p, "sample")
    prior_flags(p, "sample")
    _add(p, "sample", "--data", help="dataset CSV")
    _add(p, "sample", "--tuned-config", help="file written by tune")
    _add(p, "sample", "-n", "--n", default=1000, type=int,
         help="iterations per chain")
    _add(p, "sample", "--chains", default=1, type=int)
    _add(p, "sample", "--seed", default=0, type=int)
    _add(p, "sample", "--burnin", default=0.1, type=float,
         help="fraction discarded in the printed summary")
    _add(p, "sample", "--theta-init", help="comma-separated start point")
    _add(p, "sample", "--proposal-scale", default=0.1, type=float,
         help="isotropic proposal std dev when no tuned covariance")
    _add(p, "sample", "--threads",
         help="worker threads for multiple chains "
              "(default: CTMCINFER_THREADS or 1)")
    _add(p, "sample", "-o", "--out", help="output trace CSV")

    p = new_command("bench", "accuracy and FLOP study on random generators")
    _add(p, "bench", "--class", "--classes", dest="classes",
         default=",".join(MATRIX_CLASSES),
         help="comma-separated matrix classes")
    _add(p, "bench", "--dim", default="100", help="comma-separated dimensions")
    _add(p, "bench", "--t", default="1.0", help="comma-separated horizons")
    _add(p, "bench", "--eps", default="1e-2,1e-4,1e-6,1e-8",
         help="comma-separated accuracy requests")
    _add(p, "bench", "--methods", default="skeletoid,uniformization")
    _add(p, "bench", "--reps", default=3, type=int)
    _add(p, "bench", "--max-row-nnz", default=10, type=int,
         help="sparse-class off-diagonal cap per row")
    _add(p, "bench", "--seed", default=0, type=int)
    _add(p, "bench", "-o", "--out", help="output CSV")

    p = new_command("truncstudy", "per-observation truncation error vs level")
    model_flags(p, "truncstudy")
    _add(p, "truncstudy", "--data", help="dataset CSV")
    _add(p, "truncstudy", "--theta", help="comma-separated rate parameters")
    _add(p, "truncstudy", "--k", default=14.0, type=float,
         help="accuracy exponent for the study")
    _add(p, "truncstudy", "--r-stop", default=30, type=int)
    _add(p, "truncstudy", "-o", "--out", help="output CSV")

    p = new_command("diag", "summarize trace files")
    _add(p, "diag", "--trace", help="comma-separated trace CSVs")
    _add(p, "diag", "--burnin", default=0.1, type=float)
    _add(p, "diag", "-o", "--out", help="optional summary CSV")

    return parser


# ---------------------------------------------------------------------------
# manifests


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("ctmcinfer")
    except Exception:
        return "unknown"


def _git_hash():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True,
            timeout=10,
        )
        return out.stdout.strip() if out.returncode == 0 else None
    except Exception:
        return None


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def _write_manifest(out_path, command: str, resolved: dict) -> Path:
    manifest = {
        "command": command,
        "config": _jsonable(resolved),
        "seed": resolved.get("seed"),
        "versions": {
            "ctmcinfer": _package_version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "git_hash": _git_hash(),
    }
    path = Path(out_path).with_suffix(".manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def argv_from_manifest(manifest: dict, **overrides) -> list:
    """Rebuild the argv of a recorded run, optionally overriding config keys."""
    cfg = dict(manifest["config"])
    cfg.update(overrides)
    argv = [manifest["command"]]
    for key in sorted(cfg):
        value = cfg[key]
        if value is None or key == "config":
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
            continue
        argv.extend([flag, str(value)])
    return argv


# ---------------------------------------------------------------------------
# shared pieces


def _require(cfg: dict, key: str):
    value = cfg.get(key)
    if value is None:
        raise _UsageError(f"--{key.replace('_', '-')} is required")
    return value


def _model(cfg: dict):
    name = _require(cfg, "model")
    params = {}
    if cfg.get("c") is not None:
        params["c"] = _as_int(cfg["c"])
    if cfg.get("upper_bounds") is not None:
        params["upper_bounds"] = tuple(_ints(cfg["upper_bounds"]))
    try:
        return builtin_model(str(name), **params)
    except (TypeError, ValueError) as exc:
        raise _UsageError(str(exc)) from exc


def _build_prior(cfg: dict, dim: int) -> Prior:
    kind = str(cfg.get("prior", "lognormal"))
    if kind == "lognormal":
        marginal = LogNormalPrior(_as_float(cfg.get("prior_mu", 0.0)),
                                  _as_float(cfg.get("prior_sigma", 1.0)))
    elif kind == "gamma":
        marginal = GammaPrior(_as_float(cfg.get("prior_shape", 1.0)),
                              _as_float(cfg.get("prior_rate", 1.0)))
    else:
        raise _UsageError(f"unknown prior {kind!r}")
    return Prior.iid(marginal, dim)


def _estimator_config(cfg: dict, provided: set, tuned=None) -> EstimatorConfig:
    """Estimator settings from tuned file and flags; explicit flags win."""
    if tuned is not None:
        base = tuned.to_estimator_config()
        mode = str(cfg["mode"]) if "mode" in provided else base.mode
        method = str(cfg["method"]) if "method" in provided else base.method
        q_bar = base.q_bar_global
    else:
        mode = str(cfg.get("mode", "auto"))
        method = str(cfg.get("method", "skeletoid"))
        q_bar = None
        base = None
    if cfg.get("qbar") is not None:
        q_bar = _as_float(cfg["qbar"])
    if method == "uniformization_global":
        if q_bar is None or not math.isfinite(q_bar) or q_bar >= 0:
            raise _UsageError(
                "uniformization_global needs a finite negative --qbar"
            )
    else:
        q_bar = None
    if base is not None:
        return EstimatorConfig(
            mode=mode, method=method, sequence=base.sequence, law=base.law,
            sequences=base.sequences, laws=base.laws, q_bar_global=q_bar,
        )
    return EstimatorConfig(mode=mode, method=method, q_bar_global=q_bar)


def _schedule(cfg: dict) -> list:
    if cfg.get("times") is not None:
        return _floats(cfg["times"])
    if cfg.get("tend") is None or cfg.get("dt") is None:
        raise _UsageError("either --times or both --tend and --dt are required")
    tend = _as_float(cfg["tend"])
    dt = _as_float(cfg["dt"])
    if dt <= 0 or tend <= 0:
        raise _UsageError("--tend and --dt must be positive")
    n = int(math.floor(tend / dt + 1e-9))
    return [i * dt for i in range(n + 1)]


def _chain_paths(out: Path, n_chains: int) -> list:
    if n_chains == 1:
        return [out]
    return [out.with_name(f"{out.stem}_chain{i + 1}{out.suffix}")
            for i in range(n_chains)]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(cfg: dict, provided: set) -> int:
    net = _model(cfg)
    theta = _floats(_require(cfg, "theta"))
    x0 = _ints(_require(cfg, "x0"))
    schedule = _schedule(cfg)
    seed = _as_int(cfg.get("seed", 0))
    out = Path(_require(cfg, "out"))

    rng = np.random.default_rng(seed)
    dataset = sample_dataset(net, theta, x0, schedule, rng, seed=seed)
    write_dataset(dataset, out)
    _write_manifest(out, "simulate", cfg)
    print(f"wrote {len(dataset.times)} rows "
          f"({dataset.n_observations} transitions) to {out}")
    return 0


def _cmd_tune(cfg: dict, provided: set) -> int:
    net = _model(cfg)
    dataset = read_dataset(_require(cfg, "data"))
    theta_init = np.asarray(_floats(_require(cfg, "theta_init")))
    out = Path(_require(cfg, "out"))
    seed = _as_int(cfg.get("seed", 0))
    eps = _as_float(cfg.get("eps", 1e-8))

    base_config = _estimator_config(cfg, provided)
    estimator = LikelihoodEstimator(net, dataset, base_config)
    prior = _build_prior(cfg, net.param_dim)

    if _as_bool(cfg.get("no_map", False)):
        theta = theta_init
    else:
        theta = map_estimate(estimator, prior, theta_init, eps=eps)

    if _as_bool(cfg.get("grid", False)):
        v_hat = laplace_covariance(estimator, prior, theta)
        tuned = grid_select(
            net, dataset, prior, theta, v_hat, base_config,
            n_draws=_as_int(cfg.get("n_draws", 100)),
            short_run=_as_int(cfg.get("short_run", 200)),
            seed=seed, eps=eps,
        )
    else:
        tuned = tune_estimator(estimator, theta,
                               p_min=_as_float(cfg.get("p_min", 0.9)), eps=eps)
        noisy = LikelihoodEstimator(net, dataset, tuned.to_estimator_config())
        sigma_zeta = estimate_sigma_zeta(
            noisy, theta, n_draws=_as_int(cfg.get("n_draws", 100)), seed=seed,
        )
        from dataclasses import replace

        tuned = replace(tuned, sigma_zeta=sigma_zeta)

    with open(out, "w") as fh:
        fh.write(tuned_config_to_text(tuned))
    _write_manifest(out, "tune", cfg)
    print(f"tuned {tuned.mode}/{tuned.method} p_min={tuned.p_min} "
          f"sigma_zeta={tuned.sigma_zeta:.4g} -> {out}")
    return 0


def _cmd_sample(cfg: dict, provided: set) -> int:
    net = _model(cfg)
    dataset = read_dataset(_require(cfg, "data"))
    out = Path(_require(cfg, "out"))
    seed = _as_int(cfg.get("seed", 0))
    n_samples = _as_int(cfg.get("n", 1000))
    n_chains = _as_int(cfg.get("chains", 1))
    burnin = _as_float(cfg.get("burnin", 0.1))

    tuned = None
    if cfg.get("tuned_config") is not None:
        with open(cfg["tuned_config"]) as fh:
            tuned = tuned_config_from_text(fh.read())
    est_config = _estimator_config(cfg, provided, tuned)
    estimator = LikelihoodEstimator(net, dataset, est_config)
    prior = _build_prior(cfg, net.param_dim)

    if tuned is not None and tuned.proposal_cov is not None \
            and "proposal_scale" not in provided:
        proposal_cov = np.asarray(tuned.proposal_cov, dtype=float)
    else:
        proposal_cov = _as_float(cfg.get("proposal_scale", 0.1)) ** 2

    theta_init = None
    if cfg.get("theta_init") is not None:
        theta_init = np.asarray(_floats(cfg["theta_init"]))

    threads = cfg.get("threads")
    if threads is None:
        threads = os.environ.get("CTMCINFER_THREADS", "1")
    threads = max(1, _as_int(threads))

    if n_chains == 1:
        traces = [sample_chain(estimator, prior, proposal_cov, n_samples,
                               seed, theta_init=theta_init, meter=FlopMeter(),
                               config_snapshot=_jsonable(cfg))]
    else:
        traces = multistart(estimator, prior, proposal_cov, n_samples,
                            n_chains, seed, theta_init=theta_init,
                            n_threads=threads, config_snapshot=_jsonable(cfg))

    paths = _chain_paths(out, n_chains)
    for trace, path in zip(traces, paths):
        write_trace(trace, path)
    _write_manifest(out, "sample", cfg)

    for i, (trace, path) in enumerate(zip(traces, paths)):
        kept = trace.after_burnin(burnin)
        means = ", ".join(f"{m:.4g}" for m in kept.mean(axis=0))
        print(f"chain {i + 1}: accept={trace.acceptance_rate:.3f} "
              f"ess={ess(kept):.1f} mean=[{means}] "
              f"gflops={trace.cum_gflops[-1]:.3f} -> {path}")
    return 0


def _cmd_bench(cfg: dict, provided: set) -> int:
    classes = _strs(cfg.get("classes", ",".join(MATRIX_CLASSES)))
    unknown = set(classes) - set(MATRIX_CLASSES)
    if unknown:
        raise _UsageError(f"unknown matrix classes: {sorted(unknown)}")
    out = Path(_require(cfg, "out"))
    rows = bench_expm(
        classes=classes,
        dims=_ints(cfg.get("dim", "100")),
        ts=_floats(cfg.get("t", "1.0")),
        epsilons=_floats(cfg.get("eps", "1e-2,1e-4,1e-6,1e-8")),
        reps=_as_int(cfg.get("reps", 3)),
        seed=_as_int(cfg.get("seed", 0)),
        methods=tuple(_strs(cfg.get("methods", "skeletoid,uniformization"))),
        max_row_nnz=_as_int(cfg.get("max_row_nnz", 10)),
    )
    write_rows_csv(rows, out)
    _write_manifest(out, "bench", cfg)
    print(f"wrote {len(rows)} bench rows to {out}")
    return 0


def _cmd_truncstudy(cfg: dict, provided: set) -> int:
    net = _model(cfg)
    dataset = read_dataset(_require(cfg, "data"))
    theta = _floats(_require(cfg, "theta"))
    out = Path(_require(cfg, "out"))
    rows = truncation_study(
        net, theta, list(dataset.intervals()),
        k=_as_float(cfg.get("k", 14.0)),
        r_stop=_as_int(cfg.get("r_stop", 30)),
    )
    write_rows_csv(rows, out)
    _write_manifest(out, "truncstudy", cfg)
    print(f"wrote {len(rows)} truncation rows to {out}")
    return 0


def _cmd_diag(cfg: dict, provided: set) -> int:
    paths = _strs(_require(cfg, "trace"))
    burnin = _as_float(cfg.get("burnin", 0.1))
    rows = []
    for path in paths:
        trace = read_trace(path)
        kept = trace.after_burnin(burnin)
        row = {
            "trace": path,
            "iterations": trace.n_iterations,
            "acceptance_rate": trace.acceptance_rate,
            "ess": ess(kept),
            "gflops": trace.cum_gflops[-1],
        }
        for j, mean in enumerate(kept.mean(axis=0)):
            row[f"mean_theta_{j + 1}"] = mean
        for j, sd in enumerate(kept.std(axis=0, ddof=1)):
            row[f"sd_theta_{j + 1}"] = sd
        rows.append(row)
        print(f"{path}: n={row['iterations']} "
              f"accept={row['acceptance_rate']:.3f} ess={row['ess']:.1f} "
              f"gflops={row['gflops']:.3f}")
    if cfg.get("out") is not None:
        out = Path(cfg["out"])
        write_rows_csv(rows, out)
        _write_manifest(out, "diag", cfg)
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "tune": _cmd_tune,
    "sample": _cmd_sample,
    "bench": _cmd_bench,
    "truncstudy": _cmd_truncstudy,
    "diag": _cmd_diag,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    command = args.command
    provided = {k: v for k, v in vars(args).items() if k != "command"}

    try:
        resolved = dict(_DEFAULTS[command])
        config_path = provided.pop("config", None)
        if config_path is not None:
            with open(config_path) as fh:
                file_pairs = _read_flat(fh.read())
            unknown = set(file_pairs) - set(resolved)
            if unknown:
                raise _UsageError(
                    f"unknown config keys for {command}: {sorted(unknown)}"
                )
            resolved.update(file_pairs)
        resolved.update(provided)
        if "provided" in provided:
            provided_keys = set(_strs(provided["provided"]))
        else:
            provided_keys = set(provided)
        provided_keys.discard("provided")
        resolved["provided"] = ",".join(sorted(provided_keys))
        return _HANDLERS[command](resolved, provided_keys)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
