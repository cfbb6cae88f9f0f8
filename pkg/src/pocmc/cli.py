"""Experiment driver: config-file orchestration of all the modules.

One JSON config per run; subcommands pick the block they need.  Every
artifact embeds the full config and the effective seed so that a run can be
replayed byte-identically.  Exit codes: 0 ok, 2 config error, 3 numerical
guard tripped, 4 acceptance-style check failed (verify / smp-check).

Set ``POCMC_THREADS`` to cap the BLAS/OpenMP thread pools before numpy
spins up (read at process start).
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    if "POCMC_THREADS" in os.environ:
        os.environ.setdefault(_var, os.environ["POCMC_THREADS"])

import numpy as np

from . import hjb, smp
from .chain import ControlPath, simulate_physical, substream, _BROWNIAN
from .errors import CflViolation, ConfigError, NoConvergence, PocmcError, StepTooLarge
from .filtering import integrate_filter, oracle_filter_openloop
from .model import load_model

_FMT = "%.17g"


def _fmt(x):
    return _FMT % float(x)


def _fail_config(message):
    raise ConfigError(message)


def _require(cfg, key, kind=None, positive=False, path="config"):
    if key not in cfg:
        _fail_config(f"{path}: missing key '{key}'")
    val = cfg[key]
    if kind is not None and not isinstance(val, kind):
        names = "/".join(k.__name__ for k in
                         (kind if isinstance(kind, tuple) else (kind,)))
        _fail_config(f"{path}.{key}: expected {names}, got {type(val).__name__}")
    if positive and not val > 0:
        _fail_config(f"{path}.{key}: must be positive, got {val}")
    return val


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        _fail_config(f"config file {path} does not exist")
    except json.JSONDecodeError as exc:
        _fail_config(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}")


def _load_model_from(cfg, config_dir):
    rel = Path(_require(cfg, "model", str))
    path = rel if rel.is_absolute() else config_dir / rel
    if not path.exists():
        _fail_config(f"config.model: file {path} does not exist")
    return load_model(path), str(path)


def _dt_divides(dt, horizon, path):
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        _fail_config(f"{path}: dt={dt} must divide horizon={horizon}")
    return int(n)


def _write_json(out_dir, name, payload, config, seed):
    payload = dict(payload)
    payload["replay"] = {"config": config, "seed": seed}
    target = out_dir / name
    with open(target, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return target


def _control_from_config(block, model, horizon, dt, out_dir_unused=None):
    spec = block.get("control", {"constant": model.controls[0]})
    if "constant" in spec:
        return ControlPath.constant(model.control_index(spec["constant"]), horizon, dt)
    if "switches" in spec:
        times = [float(s["t"]) for s in spec["switches"]]
        labels = [model.control_index(s["control"]) for s in spec["switches"]]
        return ControlPath.from_times(times, labels, horizon, dt)
    _fail_config("control: need 'constant' or 'switches'")


def cmd_validate(config, config_dir, out_dir, seed):
    model, model_path = _load_model_from(config, config_dir)
    n = model.n_states
    audit = {
        "model_file": model_path,
        "n_states": n,
        "d_obs": model.d_obs,
        "controls": list(model.controls),
        "k0": model.k0,
        "k_intensity": model.k_intensity,
        "n_max_rate": n * model.max_offdiag_rate(),
        "intensity_slack": model.k_intensity - n * model.max_offdiag_rate(),
        "horizon": model.horizon,
        "discount": model.discount,
    }
    _write_json(out_dir, "validate_report.json", audit, config, seed)
    print(f"model ok: N={n}, K0={model.k0}, K={model.k_intensity} "
          f">= N*max(q)={audit['n_max_rate']}")
    return 0


def cmd_simulate(config, config_dir, out_dir, seed):
    model, _ = _load_model_from(config, config_dir)
    block = _require(config, "simulate", dict)
    n_paths = _require(block, "n_paths", int, positive=True, path="simulate")
    dt = float(_require(block, "dt", (int, float), positive=True, path="simulate"))
    horizon = block.get("horizon", model.horizon)
    if horizon is None:
        _fail_config("simulate: infinite-horizon model needs an explicit horizon")
    n_steps = _dt_divides(dt, horizon, "simulate")
    control = _control_from_config(block, model, horizon, dt)
    x0_dist = np.asarray(block.get("x0_dist", [1.0 / model.n_states] * model.n_states))
    d = model.d_obs
    with open(out_dir / "paths.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t", "state", "control"]
                        + [f"W_{k + 1}" for k in range(d)])
        for p in range(n_paths):
            chain_path, w_inc, ctrl = simulate_physical(
                seed, model, control, x0_dist, horizon, dt, path_index=p)
            w_cum = np.vstack([np.zeros(d), np.cumsum(w_inc, axis=0)])
            for k in range(n_steps + 1):
                t = min(k * dt, horizon)
                a_label = model.controls[ctrl.index_at(t)]
                writer.writerow([p, _fmt(t), chain_path.state_at(t) + 1, a_label]
                                + [_fmt(w) for w in w_cum[k]])
    _write_json(out_dir, "simulate_report.json",
                {"n_paths": n_paths, "dt": dt, "horizon": horizon}, config, seed)
    print(f"wrote {n_paths} paths to {out_dir / 'paths.csv'}")
    return 0


def cmd_filter(config, config_dir, out_dir, seed):
    model, _ = _load_model_from(config, config_dir)
    block = _require(config, "filter", dict)
    dt = float(_require(block, "dt", (int, float), positive=True, path="filter"))
    horizon = block.get("horizon", model.horizon)
    if horizon is None:
        _fail_config("filter: infinite-horizon model needs an explicit horizon")
    n_steps = _dt_divides(dt, horizon, "filter")
    scheme = block.get("scheme", "robust")
    x0 = np.asarray(_require(block, "x0", list, path="filter"), dtype=float)
    control = _control_from_config(block, model, horizon, dt)
    rng = substream(seed, 0, _BROWNIAN)
    obs = rng.standard_normal((n_steps, model.d_obs)) * np.sqrt(dt)
    fpath = integrate_filter(obs, control, x0, scheme, model)
    n = model.n_states
    with open(out_dir / "filter.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"rho_{i + 1}" for i in range(n)]
                        + [f"pi_{i + 1}" for i in range(n)] + ["mass"])
        pi = fpath.pi
        mass = fpath.mass
        for k, t in enumerate(fpath.times):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in fpath.rho[k]]
                            + [_fmt(v) for v in pi[k]] + [_fmt(mass[k])])
    payload = {"scheme": scheme, "dt": dt, "horizon": horizon}
    if block.get("oracle_chains"):
        est = oracle_filter_openloop(obs, control, x0, int(block["oracle_chains"]),
                                     seed + 1, model)
        idx = np.linspace(0, n_steps, 11).astype(int)
        payload["oracle_comparison"] = {
            "checkpoints": [float(fpath.times[i]) for i in idx],
            "max_abs_gap": float(np.abs(fpath.rho[idx] - est.rho[idx]).max()),
            "max_se": float(est.se[idx].max()),
            "n_chains": est.n_chains,
        }
    _write_json(out_dir, "filter_report.json", payload, config, seed)
    print(f"wrote filter path to {out_dir / 'filter.csv'}")
    return 0


def _grid_from_block(block, model):
    length = float(block.get("L", 2.0))
    dx = float(_require(block, "dx", (int, float), positive=True, path="hjb"))
    return hjb.SpatialGrid(model.n_states, length, dx)


def _dump_values(out_dir, values, model):
    coords = values.grid.coords()
    stationary = values.times is None
    with open(out_dir / "values.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ([] if stationary else ["t"]) \
            + [f"x_{i + 1}" for i in range(model.n_states)] + ["value", "control"]
        writer.writerow(header)
        if stationary:
            for node in range(values.grid.n_nodes):
                writer.writerow([_fmt(c) for c in coords[node]]
                                + [_fmt(values.values[node]),
                                   model.controls[values.controls[node]]])
        else:
            for layer in range(len(values.times) - 1):
                for node in range(values.grid.n_nodes):
                    writer.writerow([_fmt(values.times[layer])]
                                    + [_fmt(c) for c in coords[node]]
                                    + [_fmt(values.values[layer, node]),
                                       model.controls[values.controls[layer, node]]])


def _dump_policy_csv(out_dir, policy, model):
    coords = policy.grid.coords()
    stationary = policy.layer_times is None
    with open(out_dir / "policy.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ([] if stationary else ["t"]) \
            + [f"x_{i + 1}" for i in range(model.n_states)] + ["control"]
        writer.writerow(header)
        for layer in range(policy.table.shape[0]):
            prefix = [] if stationary else [_fmt(policy.layer_times[layer])]
            for node in range(policy.grid.n_nodes):
                writer.writerow(prefix + [_fmt(c) for c in coords[node]]
                                + [model.controls[policy.table[layer, node]]])


def _policy_payload(policy):
    return {
        "grid": {"n_dims": policy.grid.n_dims, "L": policy.grid.length,
                 "dx": policy.grid.dx},
        "layer_times": None if policy.layer_times is None
        else [float(t) for t in policy.layer_times],
        "labels": list(policy.labels),
        "table": policy.table.tolist(),
    }


def load_policy(path):
    with open(path) as fh:
        doc = json.load(fh)["policy"]
    grid = hjb.SpatialGrid(doc["grid"]["n_dims"], doc["grid"]["L"], doc["grid"]["dx"])
    layer_times = doc["layer_times"]
    return hjb.FeedbackPolicy(
        grid,
        None if layer_times is None else np.asarray(layer_times, dtype=float),
        np.asarray(doc["table"], dtype=np.int64),
        tuple(doc["labels"]),
    )


def cmd_solve_hjb(config, config_dir, out_dir, seed):
    model, _ = _load_model_from(config, config_dir)
    block = _require(config, "hjb", dict)
    grid = _grid_from_block(block, model)
    mode = block.get("mode", "parabolic" if model.horizon is not None else "elliptic")
    if mode == "parabolic":
        n_time_steps = _require(block, "n_time_steps", int, positive=True, path="hjb")
        values = hjb.solve_parabolic(model, grid, n_time_steps)
    elif mode == "elliptic":
        values = hjb.solve_elliptic(model, grid,
                                    tolerance=float(block.get("tolerance", 1e-9)))
    else:
        _fail_config(f"hjb.mode: unknown mode {mode!r}")
    _dump_values(out_dir, values, model)
    policy = hjb.extract_policy(values)
    _dump_policy_csv(out_dir, policy, model)
    _write_json(out_dir, "policy.json", {"policy": _policy_payload(policy)},
                config, seed)
    _write_json(out_dir, "solver_report.json", dict(values.report), config, seed)
    print(f"solved ({mode}): report {values.report}")
    return 0


def cmd_verify(config, config_dir, out_dir, seed):
    model, _ = _load_model_from(config, config_dir)
    block = _require(config, "verify", dict)
    grid = _grid_from_block(_require(config, "hjb", dict), model)
    hjb_block = config["hjb"]
    if model.horizon is not None:
        values = hjb.solve_parabolic(model, grid, _require(hjb_block, "n_time_steps",
                                                           int, path="hjb"))
    else:
        values = hjb.solve_elliptic(model, grid)
    policy = hjb.extract_policy(values)
    x0 = np.asarray(_require(block, "x0", list, path="verify"), dtype=float)
    n_paths = _require(block, "n_paths", int, positive=True, path="verify")
    dt = float(block.get("dt", 1e-3))
    challengers = [c for c in block.get("challengers", [])]
    report = hjb.verify_optimality(model, values, policy, x0, challengers,
                                   n_paths, rng_seed=seed, dt=dt,
                                   horizon=block.get("horizon"))
    _write_json(out_dir, "verify_report.json", report, config, seed)
    print(f"verify: pass={report['pass']} closed-loop="
          f"{report['closed_loop']['estimate']:.6g} value={report['value_at_x0']:.6g}")
    return 0 if report["pass"] else 4


def cmd_smp_check(config, config_dir, out_dir, seed):
    model, _ = _load_model_from(config, config_dir)
    block = _require(config, "smp", dict)
    n_samples = _require(block, "n_samples", int, positive=True, path="smp")
    dt = float(_require(block, "dt", (int, float), positive=True, path="smp"))
    horizon = block.get("horizon", model.horizon)
    if horizon is None:
        _fail_config("smp: needs a finite horizon")
    n_steps = _dt_divides(dt, horizon, "smp")
    tolerance = float(_require(block, "tolerance", (int, float), path="smp"))
    x0 = np.asarray(_require(block, "x0", list, path="smp"), dtype=float)
    basis_degree = int(block.get("basis_degree", 2))
    from .filtering import integrate_filter_batch
    if "policy_file" in block:
        policy = load_policy(config_dir / block["policy_file"]
                             if not Path(block["policy_file"]).is_absolute()
                             else block["policy_file"])
        out = hjb.run_closed_loop_batch(seed, model, policy, x0, n_samples, dt,
                                        horizon=horizon, store_paths=True)
        rho_paths, dw, control_idx = out["states"], out["dw"], out["controls"]
    else:
        control = _control_from_config(block, model, horizon, dt)
        dw = np.empty((n_samples, n_steps, model.d_obs))
        for p in range(n_samples):
            dw[p] = substream(seed, p, _BROWNIAN).standard_normal(
                (n_steps, model.d_obs)) * np.sqrt(dt)
        rho_paths = integrate_filter_batch(dw, control, x0, "robust", model)
        control_idx = np.broadcast_to(control.values, (n_samples, n_steps))
    adjoint = smp.solve_adjoint(model, control_idx, rho_paths, dw, dt,
                                basis_degree=basis_degree)
    report = smp.check_max_principle(adjoint, control_idx, rho_paths, model,
                                     tolerance)
    _write_json(out_dir, "smp_report.json", report, config, seed)
    print(f"smp-check: pass={report['pass']} violation_fraction="
          f"{report['violation_fraction']:.4f}")
    return 0 if report["pass"] else 4


_COMMANDS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "solve-hjb": cmd_solve_hjb,
    "verify": cmd_verify,
    "smp-check": cmd_smp_check,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pocmc",
        description="Partially observed controlled Markov chains: simulation, "
                    "filtering, dynamic programming, verification.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config seed (64-bit unsigned)")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        config_dir = Path(args.config).resolve().parent
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        out_dir = Path(args.out or config.get("output_dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](config, config_dir, out_dir, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CflViolation, StepTooLarge, NoConvergence) as exc:
        detail = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, CflViolation):
            detail["dt_max"] = exc.dt_max
        if isinstance(exc, NoConvergence):
            detail["residuals"] = exc.residuals[-10:]
        print(json.dumps(detail), file=sys.stderr)
        return 3
    except PocmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
