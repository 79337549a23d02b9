"""Command-line pipeline: simulate, regress, constrain-fit, build-rom,
infer, coarsen, converge.

Every command reads a JSON config file (``--config``); ``--seed`` and
``--out`` override the corresponding config fields. All numeric outputs are
deterministic given (config, seed). Exit codes: 0 success, 2 config error,
3 numerical failure (blow-up or singular factorization), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bayes_uq, energy_constraints, ldo_features, rom, rsw_dynamics, sysid_regression
from .core_grid import Grid, read_snapshots, write_snapshots
from .errors import (
    BlowUpError,
    ConfigError,
    DegenerateDirectionsError,
    DeimSelectionError,
    LdoKitError,
    NonFiniteStateError,
    SnapshotFormatError,
)

DEFAULTS = {
    "grid": {"nx": 100, "ny": 100, "dx": 1.0},
    "dynamics": {
        "F": 1000.0,
        "epsilon": 0.05,
        # The nominal step 0.2/dx^2 is unstable for forward Euler at the
        # default parameters; the shipped default must survive its own runs.
        "dt": 2.5e-5,
        "n_steps": 5000,
        "record_every": 1,
        "scheme": "euler",
    },
    "basis": {"kind": "quadratic"},
    "ic": {"kind": "gaussian_bump", "seed": 0, "amplitude": 0.75, "offset": 1.0},
}


def _get(cfg: dict, path: str, typ, default=None, required=False):
    node = cfg
    parts = path.split(".")
    for i, key in enumerate(parts):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"{path}: missing required field")
            return default
        node = node[key]
    if typ is float and isinstance(node, int) and not isinstance(node, bool):
        node = float(node)
    if not isinstance(node, typ) or isinstance(node, bool) and typ is not bool:
        raise ConfigError(f"{path}: expected {typ.__name__}, got {type(node).__name__}")
    return node


def _positive(cfg, path, typ, default=None, required=False):
    val = _get(cfg, path, typ, default, required)
    if val is not None and not val > 0:
        raise ConfigError(f"{path}: must be positive, got {val}")
    return val


def load_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))  # deep copy
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root: expected a JSON object")
        for key, val in user.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
    return cfg


def _grid(cfg) -> Grid:
    nx = _get(cfg, "grid.nx", int, required=True)
    ny = _get(cfg, "grid.ny", int, required=True)
    dx = _positive(cfg, "grid.dx", float, required=True)
    if nx < 5 or ny < 5:
        raise ConfigError(f"grid.nx/grid.ny: must be at least 5, got {nx}x{ny}")
    return Grid(nx, ny, dx)


def _params(cfg) -> rsw_dynamics.RswParams:
    return rsw_dynamics.RswParams(
        _positive(cfg, "dynamics.F", float, required=True),
        _positive(cfg, "dynamics.epsilon", float, required=True),
    )


def _basis(cfg) -> ldo_features.BasisSpec:
    kind = _get(cfg, "basis.kind", str, "quadratic")
    if kind not in ("quadratic", "diffop"):
        raise ConfigError(f"basis.kind: must be 'quadratic' or 'diffop', got {kind!r}")
    return ldo_features.BasisSpec(kind)


def _initial_condition(cfg, grid):
    kind = _get(cfg, "ic.kind", str, required=True)
    if kind == "gaussian_bump":
        kwargs = {
            "amplitude": _get(cfg, "ic.amplitude", float, 0.75),
            "offset": _get(cfg, "ic.offset", float, 1.0),
        }
        width = _get(cfg, "ic.width", float)
        if width is not None:
            kwargs["width"] = width
    elif kind == "fourier_random":
        kwargs = {
            "seed": _get(cfg, "ic.seed", int, 0),
            "n_modes": _get(cfg, "ic.n_modes", int, 4),
            "amplitude": _get(cfg, "ic.amplitude", float, 0.1),
            "eta_offset": _get(cfg, "ic.offset", float, 1.0),
        }
    else:
        raise ConfigError(f"ic.kind: unknown kind {kind!r}")
    return rsw_dynamics.make_initial_condition(grid, kind, **kwargs)


def _out_path(args, cfg, path_str: str) -> Path:
    out_dir = Path(args.out if args.out is not None else _get(cfg, "paths.out_dir", str, "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / path_str


def _subspace(cfg, params, basis, dx):
    which = _get(cfg, "constrain.directions", str, "demo")
    if which == "demo":
        return energy_constraints.demo_subspace(params, basis, dx)
    if which == "full":
        return energy_constraints.energy_nullspace_basis(params, basis, dx)
    raise ConfigError(f"constrain.directions: expected 'demo' or 'full', got {which!r}")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args, cfg) -> int:
    grid = _grid(cfg)
    params = _params(cfg)
    dt = _positive(cfg, "dynamics.dt", float, required=True)
    n_steps = _positive(cfg, "dynamics.n_steps", int, required=True)
    record_every = _positive(cfg, "dynamics.record_every", int, 1)
    scheme = _get(cfg, "dynamics.scheme", str, "euler")
    if scheme not in ("euler", "rk4"):
        raise ConfigError(f"dynamics.scheme: expected 'euler' or 'rk4', got {scheme!r}")
    ic = _initial_condition(cfg, grid)
    coeff_path = _get(cfg, "simulate.coefficients", str)
    lam = _get(cfg, "simulate.lambda", list)
    meta = {
        "ic": cfg.get("ic"),
        "F": params.F,
        "epsilon": params.epsilon,
        "scheme": scheme,
    }
    if coeff_path is not None:
        coeffs = ldo_features.load_coefficients(coeff_path)
        meta["dynamics"] = "ldo_file"
        sset = ldo_features.integrate_ldo(coeffs, ic, dt, n_steps, record_every, meta)
    elif lam is not None:
        basis = _basis(cfg)
        sub = _subspace(cfg, params, basis, grid.dx)
        if len(lam) != sub.k:
            raise ConfigError(f"simulate.lambda: expected {sub.k} coordinates, got {len(lam)}")
        coeffs = energy_constraints.perturbed_ldo(sub, [float(x) for x in lam])
        meta["dynamics"] = "perturbed_ldo"
        meta["lambda"] = [float(x) for x in lam]
        sset = ldo_features.integrate_ldo(coeffs, ic, dt, n_steps, record_every, meta)
    else:
        meta["dynamics"] = "rsw"
        sset = rsw_dynamics.integrate_rsw(ic, params, dt, n_steps, record_every, scheme, meta)
    out = _out_path(args, cfg, _get(cfg, "simulate.output", str, "snapshots.ldos"))
    write_snapshots(sset, out)
    print(f"wrote {len(sset)} snapshots to {out}")
    return 0


def cmd_regress(args, cfg) -> int:
    inputs = _get(cfg, "regress.inputs", list, required=True)
    if not inputs:
        raise ConfigError("regress.inputs: need at least one snapshot file")
    sets = [read_snapshots(p) for p in inputs]
    basis = _basis(cfg)
    method = _get(cfg, "regress.method", str, "least_squares")
    stride = _positive(cfg, "regress.sample_stride", int, 1)
    tstride = _positive(cfg, "regress.time_stride", int, 1)
    system = sysid_regression.assemble_regression(sets, basis, stride, tstride)
    reference = None
    if _get(cfg, "regress.reference", bool, False):
        reference = ldo_features.rsw_reference_coefficients(_params(cfg), sets[0].grid.dx, basis)
    if method == "least_squares":
        report = sysid_regression.least_squares_fit(system, reference)
    elif method == "lasso":
        weight = _positive(cfg, "regress.lasso_weight", float, required=True)
        report = sysid_regression.lasso_fit(system, weight, reference=reference)
    elif method == "lasso_cv":
        folds = _positive(cfg, "regress.cv_folds", int, 5)
        seed = args.seed if args.seed is not None else _get(cfg, "regress.cv_seed", int, 0)
        report = sysid_regression.lasso_cv(system, folds=folds, seed=seed, reference=reference)
    else:
        raise ConfigError(f"regress.method: unknown method {method!r}")
    out = _out_path(args, cfg, _get(cfg, "regress.output", str, "fit.json"))
    payload = {
        "method": report.method,
        "residual_norm": report.residual_norm,
        "max_abs_coef_error": report.max_abs_coef_error,
        "metadata": report.metadata,
        "basis": basis.to_dict(),
        "p": report.coefficients.p.tolist(),
    }
    _write_json(out, payload)
    coeff_out = _out_path(args, cfg, _get(cfg, "regress.coefficients_output", str, "coefficients.json"))
    ldo_features.save_coefficients(report.coefficients, coeff_out)
    if reference is not None:
        csv_out = _out_path(args, cfg, _get(cfg, "regress.comparison_csv", str, "coefficients.csv"))
        with open(csv_out, "w") as fh:
            fh.write("index,true,fitted\n")
            flat_ref = reference.p.ravel()
            flat_fit = report.coefficients.p.ravel()
            for i, (a, b) in enumerate(zip(flat_ref, flat_fit)):
                fh.write(f"{i},{a!r},{b!r}\n")
    print(f"{report.method}: residual={report.residual_norm:.6g}"
          + (f", max coef error={report.max_abs_coef_error:.6g}" if reference is not None else ""))
    return 0


def cmd_constrain_fit(args, cfg) -> int:
    inputs = _get(cfg, "constrain.inputs", list, required=True)
    if not inputs:
        raise ConfigError("constrain.inputs: need at least one snapshot file")
    sets = [read_snapshots(p) for p in inputs]
    basis = _basis(cfg)
    if basis.kind != "quadratic":
        raise ConfigError("constrain: requires basis.kind == 'quadratic'")
    params = _params(cfg)
    sub = _subspace(cfg, params, basis, sets[0].grid.dx)
    stride = _positive(cfg, "constrain.sample_stride", int, 1)
    tstride = _positive(cfg, "constrain.time_stride", int, 1)
    report = sysid_regression.constrained_fit(sets, sub, stride, tstride)
    out = _out_path(args, cfg, _get(cfg, "constrain.output", str, "lambda.json"))
    _write_json(out, {
        "lambda": [float(x) for x in report.coefficients],
        "labels": report.metadata["labels"],
        "residual_norm": report.residual_norm,
        "metadata": {k: v for k, v in report.metadata.items() if k != "labels"},
    })
    print("lambda =", [round(float(x), 6) for x in report.coefficients])
    return 0


def cmd_build_rom(args, cfg) -> int:
    input_path = _get(cfg, "rom.input", str, required=True)
    snaps = read_snapshots(input_path)
    m = _positive(cfg, "rom.m", int, required=True)
    d = _positive(cfg, "rom.d", int, required=True)
    coeff_path = _get(cfg, "rom.coefficients", str)
    if coeff_path is not None:
        coeffs = ldo_features.load_coefficients(coeff_path)
    else:
        coeffs = ldo_features.rsw_reference_coefficients(_params(cfg), snaps.grid.dx, _basis(cfg))
    model = rom.build_rom(snaps, coeffs, m, d)
    out = _out_path(args, cfg, _get(cfg, "rom.output", str, "rom"))
    rom.save_rom(model, out)
    indices_out = _out_path(args, cfg, _get(cfg, "rom.indices_output", str, "deim_indices.json"))
    _write_json(indices_out, {"indices": [int(i) for i in model.deim_indices]})
    full_flops, rom_flops = rom.flop_estimate(
        snaps.grid.n_cells, coeffs.basis.q, n_modes=m, n_deim=d
    )
    print(f"built rom m={m} d={d}; per-step flops full={full_flops} rom={rom_flops} "
          f"ratio={full_flops / rom_flops:.1f}")
    return 0


def _coarsen_spec(cfg, section: str) -> bayes_uq.CoarsenSpec | None:
    node = cfg.get(section, {}).get("coarsen") if section == "infer" else cfg.get(section)
    if node is None:
        return None
    if not isinstance(node, dict):
        raise ConfigError(f"{section}.coarsen: expected an object")
    sx = _positive(node, "sx", int, required=True)
    sy = _positive(node, "sy", int, required=True)
    st = _positive(node, "st", int, required=True)
    return bayes_uq.CoarsenSpec(sx, sy, st)


def cmd_coarsen(args, cfg) -> int:
    input_path = _get(cfg, "coarsen.input", str, required=True)
    traj = read_snapshots(input_path)
    spec = bayes_uq.CoarsenSpec(
        _positive(cfg, "coarsen.sx", int, required=True),
        _positive(cfg, "coarsen.sy", int, required=True),
        _positive(cfg, "coarsen.st", int, required=True),
    )
    variable = _get(cfg, "coarsen.variable", str, "eta")
    if variable not in ("u", "v", "eta"):
        raise ConfigError(f"coarsen.variable: expected u/v/eta, got {variable!r}")
    coarse = bayes_uq.coarsen(traj, spec, variable)
    out = _out_path(args, cfg, _get(cfg, "coarsen.output", str, "coarse.npz"))
    np.savez(
        out,
        data=coarse,
        sx=spec.sx,
        sy=spec.sy,
        st=spec.st,
        variable=variable,
        dx=traj.grid.dx,
        dt=traj.dt,
    )
    print(f"coarse observable shape {coarse.shape} written to {out}")
    return 0


def cmd_infer(args, cfg) -> int:
    truth_path = _get(cfg, "infer.truth", str, required=True)
    variable = _get(cfg, "infer.observable", str, "eta")
    if variable not in ("u", "v", "eta"):
        raise ConfigError(f"infer.observable: expected u/v/eta, got {variable!r}")
    obs_spec = _coarsen_spec(cfg, "infer")
    grid = _grid(cfg)
    params = _params(cfg)
    basis = _basis(cfg)
    dt = _positive(cfg, "dynamics.dt", float, required=True)
    ic = _initial_condition(cfg, grid)
    sub = _subspace(cfg, params, basis, grid.dx)
    if str(truth_path).endswith(".npz"):
        archive = np.load(truth_path)
        truth_obs = archive["data"]
        if obs_spec is None:
            obs_spec = bayes_uq.CoarsenSpec(int(archive["sx"]), int(archive["sy"]), int(archive["st"]))
    else:
        truth_traj = read_snapshots(truth_path)
        truth_obs = bayes_uq.extract_observable(truth_traj, variable)
        if obs_spec is not None:
            truth_obs = bayes_uq.coarsen_array(truth_obs, obs_spec)
    sigma = _positive(cfg, "infer.sigma", float, required=True)
    n_samples = _positive(cfg, "infer.n_samples", int, required=True)
    prior_mean = _get(cfg, "infer.prior_mean", list, [0.0] * sub.k)
    prior_std = _get(cfg, "infer.prior_std", list, [30.0] * sub.k)
    seed = args.seed if args.seed is not None else _get(cfg, "infer.seed", int, 0)
    forward = _get(cfg, "infer.forward", str, "full_ldo")
    mcfg = bayes_uq.McmcConfig(
        n_samples=n_samples,
        proposal_std=_positive(cfg, "infer.proposal_std", float, 2.0),
        prior_mean=tuple(float(x) for x in prior_mean),
        prior_std=tuple(float(x) for x in prior_std),
        seed=seed,
        forward=forward,
        n_steps=_positive(cfg, "dynamics.n_steps", int, required=True),
        record_every=_positive(cfg, "dynamics.record_every", int, 1),
    )
    rom_model = None
    if forward == "rom":
        rom_path = _get(cfg, "infer.rom_file", str, required=True)
        rom_model = rom.load_rom(rom_path)
    samples = bayes_uq.metropolis_chain(
        sub, truth_obs, obs_spec, bayes_uq.LikelihoodParams(sigma), mcfg, ic, dt,
        rom=rom_model, variable=variable,
    )
    csv_out = _out_path(args, cfg, _get(cfg, "infer.output_csv", str, "posterior.csv"))
    bayes_uq.save_posterior_csv(samples, csv_out)
    summary_out = _out_path(args, cfg, _get(cfg, "infer.summary", str, "posterior_summary.json"))
    echo = {"sigma": sigma, "seed": seed, "forward": forward,
            "n_steps": mcfg.n_steps, "record_every": mcfg.record_every}
    bayes_uq.save_posterior_summary(samples, summary_out, echo)
    s = samples.summary()
    print(f"acceptance={s['acceptance_rate']:.3f} mean={s['posterior_mean']} std={s['posterior_std']}")
    return 0


def cmd_converge(args, cfg) -> int:
    grid = _grid(cfg)
    params = _params(cfg)
    ic = _initial_condition(cfg, grid)
    dt0 = _positive(cfg, "converge.dt0", float, required=True)
    horizon = _positive(cfg, "converge.horizon_time", float, required=True)
    levels = _positive(cfg, "converge.levels", int, required=True)
    scheme = _get(cfg, "converge.scheme", str, "euler")
    if scheme not in ("euler", "rk4"):
        raise ConfigError(f"converge.scheme: expected 'euler' or 'rk4', got {scheme!r}")
    if levels < 3:
        raise ConfigError("converge.levels: need at least 3")
    result = rsw_dynamics.convergence_study(ic, params, dt0, horizon, levels, scheme)
    out = _out_path(args, cfg, _get(cfg, "converge.output_csv", str, "convergence.csv"))
    with open(out, "w") as fh:
        fh.write("dt,l2_error\n")
        for dt, err in result.rows:
            fh.write(f"{dt!r},{err!r}\n")
    summary_out = _out_path(args, cfg, _get(cfg, "converge.summary", str, "convergence.json"))
    _write_json(summary_out, {"slope": result.slope, "scheme": scheme,
                              "rows": [[dt, err] for dt, err in result.rows]})
    print(f"{scheme} slope vs dt: {result.slope:.4f}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "regress": cmd_regress,
    "constrain-fit": cmd_constrain_fit,
    "build-rom": cmd_build_rom,
    "infer": cmd_infer,
    "coarsen": cmd_coarsen,
    "converge": cmd_converge,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldokit",
        description="Local dynamic operator learning, reduction, and calibration pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override configured RNG seed")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and "ic" in cfg:
            cfg["ic"]["seed"] = args.seed
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BlowUpError, DeimSelectionError, DegenerateDirectionsError,
            NonFiniteStateError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, SnapshotFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, LdoKitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
