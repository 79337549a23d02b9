"""Observables, error metric, likelihood, and Metropolis sampling over the
perturbation coordinates of a local operator.

A candidate coordinate vector is scored by forward-integrating its operator
(directly, or through a reduced model acting as a surrogate), extracting an
observable trajectory (one state variable, optionally block-averaged in
space and time), and measuring the space-time RMS distance to a fixed truth
observable. Candidates whose simulation blows up get zero likelihood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core_grid import VARIABLES, SnapshotSet, StateField
from .energy_constraints import PerturbationSubspace, perturbed_ldo
from .errors import BlowUpError
from .ldo_features import integrate_ldo
from .rom import RomModel, integrate_rom


@dataclass(frozen=True)
class CoarsenSpec:
    """Non-overlapping block sizes: sx, sy grid points and st snapshots."""

    sx: int
    sy: int
    st: int

    def __post_init__(self):
        if min(self.sx, self.sy, self.st) < 1:
            raise ValueError("block sizes must be >= 1")


def coarsen_array(arr: np.ndarray, spec: CoarsenSpec) -> np.ndarray:
    """Block means of a (T, ny, nx) trajectory; shapes must divide evenly."""
    t, ny, nx = arr.shape
    for size, block, name in ((t, spec.st, "st"), (ny, spec.sy, "sy"), (nx, spec.sx, "sx")):
        if size % block != 0:
            raise ValueError(
                f"coarsen block {name}={block} must divide the corresponding extent {size}"
            )
    return arr.reshape(t // spec.st, spec.st, ny // spec.sy, spec.sy, nx // spec.sx, spec.sx).mean(
        axis=(1, 3, 5)
    )


def extract_observable(traj: SnapshotSet, variable: str = "eta") -> np.ndarray:
    """The (T, ny, nx) trajectory of one state variable."""
    return traj.data[:, VARIABLES.index(variable)]


def coarsen(traj: SnapshotSet, spec: CoarsenSpec, variable: str = "eta") -> np.ndarray:
    """Space-time block average of one variable: local means over
    non-overlapping sx*sy*st boxes."""
    return coarsen_array(extract_observable(traj, variable), spec)


def rms_error(truth: np.ndarray, model: np.ndarray, dx: float, dt: float) -> float:
    """Discrete space-time L2 distance sqrt(sum |diff|^2 dx^2 dt).

    ``dx`` and ``dt`` are the cell sizes of the trajectories as given, so the
    same formula serves fine and coarsened observables.
    """
    truth = np.asarray(truth)
    model = np.asarray(model)
    if truth.shape != model.shape:
        raise ValueError(f"trajectory shapes differ: {truth.shape} vs {model.shape}")
    return float(np.sqrt(np.sum((truth - model) ** 2) * dx * dx * dt))


@dataclass(frozen=True)
class LikelihoodParams:
    """Scale of the Gaussian likelihood over the RMS error."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def log_likelihood(eps: float, params: LikelihoodParams) -> float:
    """Unnormalized Gaussian log-likelihood -0.5*(eps/sigma)^2."""
    if eps < 0:
        raise ValueError("rms error must be nonnegative")
    return -0.5 * (eps / params.sigma) ** 2


@dataclass(frozen=True)
class McmcConfig:
    n_samples: int
    proposal_std: float
    prior_mean: tuple[float, ...]
    prior_std: tuple[float, ...]
    seed: int = 0
    forward: str = "full_ldo"
    n_steps: int = 500
    record_every: int = 1

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not np.all(np.asarray(self.proposal_std) > 0):
            raise ValueError("proposal_std must be positive")
        if not np.all(np.asarray(self.prior_std) > 0):
            raise ValueError("prior_std must be positive")
        if self.forward not in ("full_ldo", "rom"):
            raise ValueError(f"unknown forward model {self.forward!r}")
        object.__setattr__(self, "prior_mean", tuple(float(x) for x in np.atleast_1d(self.prior_mean)))
        object.__setattr__(self, "prior_std", tuple(float(x) for x in np.atleast_1d(self.prior_std)))


@dataclass
class PosteriorSamples:
    coords: np.ndarray
    log_likelihoods: np.ndarray
    accepted: np.ndarray
    acceptance_rate: float
    config: McmcConfig | None = None

    def summary(self) -> dict:
        return {
            "n_samples": int(self.coords.shape[0]),
            "acceptance_rate": self.acceptance_rate,
            "posterior_mean": [float(x) for x in self.coords.mean(axis=0)],
            "posterior_std": [float(x) for x in self.coords.std(axis=0)],
        }


def metropolis_sample(log_target, x0, proposal_std, n_samples: int, rng) -> PosteriorSamples:
    """Random-walk Metropolis with symmetric per-coordinate Gaussian steps.

    Generic over the target; the calibration chain and the synthetic-target
    sanity checks both go through this loop.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=np.float64)).copy()
    k = x.size
    step = np.broadcast_to(np.asarray(proposal_std, dtype=np.float64), (k,))
    lp = float(log_target(x))
    coords = np.empty((n_samples, k))
    logps = np.empty(n_samples)
    accepted = np.zeros(n_samples, dtype=bool)
    for i in range(n_samples):
        prop = x + step * rng.normal(size=k)
        lp_prop = float(log_target(prop))
        u = rng.uniform()
        if u < np.exp(min(0.0, lp_prop - lp)):
            x, lp = prop, lp_prop
            accepted[i] = True
        coords[i] = x
        logps[i] = lp
    return PosteriorSamples(coords, logps, accepted, float(accepted.mean()))


def _expected_observable_shape(grid, cfg: McmcConfig, obs_spec: CoarsenSpec | None):
    t = cfg.n_steps // cfg.record_every
    if obs_spec is None:
        return (t, grid.ny, grid.nx)
    return (t // obs_spec.st, grid.ny // obs_spec.sy, grid.nx // obs_spec.sx)


def metropolis_chain(
    subspace: PerturbationSubspace,
    truth_observable: np.ndarray,
    obs_spec: CoarsenSpec | None,
    lik: LikelihoodParams,
    cfg: McmcConfig,
    ic: StateField,
    dt: float,
    rom: RomModel | None = None,
    variable: str = "eta",
) -> PosteriorSamples:
    """Sample the posterior over subspace coordinates given one observable.

    The target is the Gaussian prior times the RMS-error likelihood; the
    forward model per candidate is a full operator integration or a reduced
    surrogate built for the base operator. Simulations that blow up are
    treated as zero likelihood (always rejected). Fully seeded.
    """
    k = subspace.k
    prior_mean = np.asarray(cfg.prior_mean, dtype=np.float64)
    prior_std = np.asarray(cfg.prior_std, dtype=np.float64)
    if prior_mean.size != k or prior_std.size != k:
        raise ValueError(f"prior must have {k} coordinates")
    if cfg.forward == "rom" and rom is None:
        raise ValueError("forward='rom' requires a reduced model")
    truth_observable = np.asarray(truth_observable, dtype=np.float64)
    expected = _expected_observable_shape(ic.grid, cfg, obs_spec)
    if truth_observable.shape != expected:
        raise ValueError(
            f"truth observable shape {truth_observable.shape} does not match "
            f"expected {expected} for this configuration"
        )
    dx_eff = ic.grid.dx
    dt_eff = dt * cfg.record_every
    if obs_spec is not None:
        dx_eff *= np.sqrt(obs_spec.sx * obs_spec.sy)
        dt_eff *= obs_spec.st

    def loglik(lam: np.ndarray) -> float:
        coeffs = perturbed_ldo(subspace, lam)
        try:
            if cfg.forward == "rom":
                _, traj = integrate_rom(rom, ic, dt, cfg.n_steps, cfg.record_every, coeffs=coeffs)
            else:
                traj = integrate_ldo(coeffs, ic, dt, cfg.n_steps, cfg.record_every)
        except BlowUpError:
            return -np.inf
        obs = extract_observable(traj, variable)
        if obs_spec is not None:
            obs = coarsen_array(obs, obs_spec)
        return log_likelihood(rms_error(truth_observable, obs, dx_eff, dt_eff), lik)

    def log_prior(lam: np.ndarray) -> float:
        return float(-0.5 * np.sum(((lam - prior_mean) / prior_std) ** 2))

    rng = np.random.default_rng(cfg.seed)
    x = prior_mean.copy()
    ll = loglik(x)
    lp = ll + log_prior(x)
    step = np.broadcast_to(np.asarray(cfg.proposal_std, dtype=np.float64), (k,))
    coords = np.empty((cfg.n_samples, k))
    lls = np.empty(cfg.n_samples)
    accepted = np.zeros(cfg.n_samples, dtype=bool)
    for i in range(cfg.n_samples):
        prop = x + step * rng.normal(size=k)
        ll_prop = loglik(prop)
        lp_prop = ll_prop + log_prior(prop)
        u = rng.uniform()
        if u < np.exp(min(0.0, lp_prop - lp)):
            x, lp, ll = prop, lp_prop, ll_prop
            accepted[i] = True
        coords[i] = x
        lls[i] = ll
    return PosteriorSamples(coords, lls, accepted, float(accepted.mean()), cfg)


def save_posterior_csv(samples: PosteriorSamples, path) -> None:
    k = samples.coords.shape[1]
    with open(str(path), "w") as fh:
        cols = ",".join(f"lambda{i + 1}" for i in range(k))
        fh.write(f"index,{cols},log_likelihood,accepted\n")
        for i in range(samples.coords.shape[0]):
            vals = ",".join(repr(float(x)) for x in samples.coords[i])
            ll = repr(float(samples.log_likelihoods[i]))
            fh.write(f"{i},{vals},{ll},{int(samples.accepted[i])}\n")


def save_posterior_summary(samples: PosteriorSamples, path, config_echo: dict | None = None) -> None:
    payload = samples.summary()
    if config_echo is not None:
        payload["config"] = config_echo
    with open(str(path), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
