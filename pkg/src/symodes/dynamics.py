"""Benchmark systems, trajectory generation, noise, smoothing, derivatives.

The registry holds five autonomous systems with their published data
conventions (initial-condition samplers, sampling rate, split sizes, noise
model, sparsity threshold).  Trajectories are integrated with fixed-step RK4
at a fine internal step and recorded at the coarser sampling interval; noisy
observations are optionally denoised per dimension by a squared-exponential
Gaussian-process smoother before derivatives are estimated with second-order
finite differences.

Randomness is reproducible by construction: every trajectory owns an RNG
stream seeded by SeedSequence((master_seed, trajectory_index)), with the
initial condition drawn first and the noise second, so datasets are
bit-identical across runs, machines, and degrees of parallelism.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import __version__ as _tool_version
from .expressions import parse, to_string
from .integrate import rk4_final, rk4_flow_jvp, rk4_record
from .library import build_library, canonicalize, m_theta
from .symmetry import DEFAULT_FLOW_STEPS, Generator

INTERNAL_DT = 0.002


def split_rng(master_seed, *path):
    """Independent generator for a seed path, e.g. (master, trajectory)."""
    entropy = (int(master_seed),) + tuple(int(x) for x in path)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class NoiseSpec:
    """Observation noise model.

    additive_relative: x + N(0, (sigma * std_i)^2) with std_i the per-
    dimension standard deviation of that trajectory's clean states.
    multiplicative: x * (1 + N(0, sigma^2)) elementwise.
    """

    kind: str
    sigma: float

    def __post_init__(self):
        if self.kind not in ("additive_relative", "multiplicative", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def apply(self, clean, rng):
        if self.kind == "none" or self.sigma == 0.0:
            return clean.copy()
        if self.kind == "additive_relative":
            scale = self.sigma * clean.std(axis=0)
            return clean + rng.normal(size=clean.shape) * scale
        return clean * (1.0 + rng.normal(scale=self.sigma, size=clean.shape))


@dataclass
class Trajectory:
    t0: float
    dt: float
    states: np.ndarray                 # (T, d) observed (possibly noisy)
    clean_states: np.ndarray = None    # (T, d) noise-free, if known
    smoothed: np.ndarray = None        # (T, d) denoised states
    derivs: np.ndarray = None          # (T, d) estimated time derivatives
    seed: int = None

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def n_samples(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    def regression_states(self):
        return self.smoothed if self.smoothed is not None else self.states


@dataclass(frozen=True)
class DataSpec:
    """Published data-generation conventions for one system."""

    n_train: int
    n_val: int
    n_test: int
    n_samples: int
    dt: float
    noise: NoiseSpec
    threshold: float
    internal_dt: float = INTERNAL_DT


@dataclass(frozen=True)
class OdeSystem:
    name: str
    dim: int
    rhs: tuple                       # Expr per dimension
    generators: tuple                # known exact symmetry generators
    sampler: str
    data: DataSpec
    library_degree: int = 2
    library_exponentials: bool = False

    def library(self):
        return build_library(self.dim, self.library_degree,
                             self.library_exponentials)

    def truth_matrix(self, lib=None):
        """True coefficients W with rhs = W Theta; raises if not in span."""
        return m_theta(lib or self.library(), self.rhs)

    def truth_term_sets(self, lib=None):
        lib = lib or self.library()
        out = []
        for comp in self.rhs:
            coeffs = canonicalize(comp, lib)
            assert coeffs is not None, f"{self.name}: rhs outside its library"
            out.append(frozenset(coeffs))
        return out

    def oracle(self, lib=None):
        return SystemOracle(self, lib)


class SystemOracle:
    """Batch-evaluated dynamics of a registry system."""

    def __init__(self, system, lib=None):
        self.system = system
        self.dim = system.dim
        self.lib = lib or system.library()
        self.W = system.truth_matrix(self.lib)

    def h(self, X):
        return self.lib.evaluate(X) @ self.W.T

    def h_jacobian(self, X):
        return np.einsum("ip,...pj->...ij", self.W, self.lib.jacobian(X))

    def flow(self, X, tau, steps=DEFAULT_FLOW_STEPS):
        return rk4_final(self.h, np.atleast_2d(np.asarray(X, float)),
                         tau, steps)

    def flow_jvp(self, X, U, tau, steps=DEFAULT_FLOW_STEPS):
        return rk4_flow_jvp(self.h, self.h_jacobian,
                            np.atleast_2d(np.asarray(X, float)),
                            np.atleast_2d(np.asarray(U, float)), tau, steps)


def _system(name, dim, rhs, generators, sampler, data, degree=2,
            exponentials=False):
    rhs = tuple(parse(r, dim) for r in rhs)
    sys = OdeSystem(name=name, dim=dim, rhs=rhs, generators=tuple(generators),
                    sampler=sampler, data=data, library_degree=degree,
                    library_exponentials=exponentials)
    # registration gate: the truth must canonicalize into the default library
    sys.truth_term_sets()
    return sys


SYSTEMS = {}

SYSTEMS["oscillator"] = _system(
    "oscillator", 2,
    ("-0.1*x1 - x2", "x1 - 0.1*x2"),
    [Generator.linear([[0.0, 1.0], [-1.0, 0.0]], label="rotation")],
    "annulus",
    DataSpec(n_train=50, n_val=10, n_test=10, n_samples=100, dt=0.2,
             noise=NoiseSpec("additive_relative", 0.2), threshold=0.05))

SYSTEMS["growth"] = _system(
    "growth", 2,
    ("-0.3*x1 + 0.1*x2^2", "x2"),
    [Generator.linear([[2.0, 0.0], [0.0, 1.0]], label="scaling")],
    "box_0.2_1",
    DataSpec(n_train=100, n_val=20, n_test=20, n_samples=100, dt=0.02,
             noise=NoiseSpec("multiplicative", 0.05), threshold=0.05))

SYSTEMS["lotka_volterra"] = _system(
    "lotka_volterra", 2,
    ("2/3 - (4/3)*exp(x2)", "-1 + exp(x1)"),
    [],
    "log_lv",
    DataSpec(n_train=200, n_val=20, n_test=20, n_samples=10000, dt=0.002,
             noise=NoiseSpec("additive_relative", 0.99), threshold=0.15),
    exponentials=True)

SYSTEMS["glycolytic"] = _system(
    "glycolytic", 2,
    ("0.75 - 0.1*x1 - x1*x2^2", "0.1*x1 - x2 + x1*x2^2"),
    [],
    "box_0.5_1",
    DataSpec(n_train=10, n_val=2, n_test=2, n_samples=10000, dt=0.002,
             noise=NoiseSpec("additive_relative", 0.2), threshold=0.075),
    degree=3)

_seir_L = np.zeros((4, 4))
_seir_L[3, :] = 1.0
SYSTEMS["seir"] = _system(
    "seir", 4,
    ("0.15 - 0.6*x1*x3", "0.6*x1*x3 - x2", "x2 - 0.5*x3", "-0.15 + 0.5*x3"),
    [Generator.linear(_seir_L, label="population_shift")],
    "box_0_1",
    DataSpec(n_train=50, n_val=10, n_test=10, n_samples=100, dt=0.2,
             noise=NoiseSpec("additive_relative", 0.05), threshold=0.05))


def get_system(name):
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(
            f"unknown system {name!r}; known: {sorted(SYSTEMS)}")


# -- initial conditions -------------------------------------------------------

LV_H_WINDOW = (3.0, 4.5)
LV_MAX_DRAWS = 100_000


def _lv_hamiltonian(x):
    return (np.exp(x[..., 0]) - x[..., 0]
            + 1.333 * np.exp(x[..., 1]) - 0.667 * x[..., 1])


def sample_initial(system, rng):
    """One initial condition from the system's published sampler."""
    s = system.sampler
    if s == "annulus":
        r = rng.uniform(0.5, 2.0)
        th = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([r * np.cos(th), r * np.sin(th)])
    if s.startswith("box_"):
        lo, hi = (float(v) for v in s.split("_")[1:])
        return rng.uniform(lo, hi, size=system.dim)
    if s == "log_lv":
        for _ in range(LV_MAX_DRAWS):
            x = np.log(rng.uniform(0.0, 1.0, size=2))
            hval = _lv_hamiltonian(x)
            if LV_H_WINDOW[0] <= hval <= LV_H_WINDOW[1]:
                return x
        raise RuntimeError(
            f"no initial condition accepted after {LV_MAX_DRAWS} draws")
    raise ValueError(f"unknown sampler {s!r}")


# -- integration ---------------------------------------------------------------


def rk4_integrate(rhs, x0, dt_internal, n_internal, stride, t0=0.0):
    """Integrate one initial condition, recording every stride-th state.

    rhs maps (..., d) to (..., d).  Returns a clean Trajectory with
    dt = dt_internal * stride.  Non-finite states abort with the internal
    step index.
    """
    states = rk4_record(rhs, np.asarray(x0, dtype=float), dt_internal,
                        n_internal, stride)
    return Trajectory(t0=t0, dt=dt_internal * stride, states=states.copy(),
                      clean_states=states)


def add_noise(traj, noise, rng):
    """New trajectory whose observed states carry the given noise."""
    if traj.clean_states is None:
        raise ValueError("add_noise needs clean states")
    noisy = noise.apply(traj.clean_states, rng)
    return replace(traj, states=noisy)


# -- Gaussian-process smoothing ------------------------------------------------


@dataclass(frozen=True)
class GpSmoothConfig:
    """Squared-exponential smoother with grid-searched hyperparameters.

    Lengthscales are multiples of the sampling interval; signal and noise
    scales are multiples of the series standard deviation.  The noise grid is
    deliberately two-point: a near-zero scale so that clean series are
    reproduced essentially unchanged, and a conservative scale at 0.7 of the
    series std so that heavily contaminated series are smoothed aggressively.
    Hyperparameters maximize the log marginal likelihood on an evenly spaced
    subsample of at most max_train points; the posterior mean is then
    evaluated on the full grid from at most max_inducing conditioning points.
    """

    lengthscale_factors: tuple = (5.0, 10.0, 20.0, 50.0, 100.0)
    signal_factors: tuple = (1.0,)
    noise_factors: tuple = (1e-4, 0.7)
    max_train: int = 500
    max_inducing: int = 2000
    jitter: float = 1e-8


def _even_subset(n, k):
    if n <= k:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, k).round().astype(int))


def _se_kernel(ta, tb, ell):
    diff = ta[:, None] - tb[None, :]
    return np.exp(-0.5 * (diff / ell) ** 2)


def _chol_with_jitter(K, scale, jitter):
    for jit in (0.0, jitter, 1e-4):
        try:
            return scipy.linalg.cho_factor(
                K + jit * scale * np.eye(K.shape[0]), lower=True), jit
        except scipy.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "kernel matrix not positive definite even with jitter 1e-4")


def gp_smooth_series(t, y, cfg=GpSmoothConfig()):
    """Posterior-mean smoothing of one scalar series; returns (mean, info)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    sd = float(y.std())
    if sd == 0.0 or n < 3:
        return y.copy(), {"degenerate": True}
    dt = float(t[1] - t[0])
    idx = _even_subset(n, cfg.max_train)
    ts, ys = t[idx], y[idx]
    mu = float(ys.mean())
    yc = ys - mu
    m = len(idx)
    best = None
    for lf in cfg.lengthscale_factors:
        ell = lf * dt
        K1 = _se_kernel(ts, ts, ell)
        for sf in cfg.signal_factors:
            for nf in cfg.noise_factors:
                sig2 = (sf * sd) ** 2
                K = sig2 * K1 + ((nf * sd) ** 2) * np.eye(m)
                try:
                    cho, _ = _chol_with_jitter(K, sig2, cfg.jitter)
                except np.linalg.LinAlgError:
                    continue
                alpha = scipy.linalg.cho_solve(cho, yc)
                lml = (-0.5 * float(yc @ alpha)
                       - float(np.log(np.diag(cho[0])).sum())
                       - 0.5 * m * np.log(2.0 * np.pi))
                if best is None or lml > best[0]:
                    best = (lml, ell, sf * sd, nf * sd)
    if best is None:
        raise np.linalg.LinAlgError("no hyperparameter candidate factorized")
    _, ell, sig, noise = best
    ind = _even_subset(n, cfg.max_inducing)
    ti, yi = t[ind], y[ind]
    mu_i = float(yi.mean())
    K = sig ** 2 * _se_kernel(ti, ti, ell) + noise ** 2 * np.eye(len(ind))
    cho, jit = _chol_with_jitter(K, sig ** 2, cfg.jitter)
    alpha = scipy.linalg.cho_solve(cho, yi - mu_i)
    mean = sig ** 2 * _se_kernel(t, ti, ell) @ alpha + mu_i
    info = {"lengthscale": ell, "signal": sig, "noise": noise,
            "lml": best[0], "jitter": jit, "n_train": m,
            "n_inducing": len(ind)}
    return mean, info


def gp_smooth(traj, cfg=GpSmoothConfig()):
    """Trajectory with the smoothed field filled in, one GP per dimension."""
    out = np.empty_like(traj.states)
    t = traj.times
    for i in range(traj.dim):
        out[:, i], _ = gp_smooth_series(t, traj.states[:, i], cfg)
    return replace(traj, smoothed=out)


# -- derivative estimation -----------------------------------------------------


def estimate_derivatives(values, dt):
    """Second-order finite-difference time derivatives along axis 0.

    Interior points use central differences; the ends use one-sided
    second-order stencils.  Two samples fall back to a first-order difference
    with a warning.
    """
    x = np.asarray(values, dtype=float)
    T = x.shape[0]
    if T < 2:
        raise ValueError("need at least two samples to differentiate")
    if T == 2:
        warnings.warn("only two samples: falling back to first-order "
                      "differences", stacklevel=2)
        d = (x[1] - x[0]) / dt
        return np.stack([d, d])
    out = np.empty_like(x)
    out[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt)
    out[-1] = (3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * dt)
    return out


def differentiate_trajectory(traj):
    """Fill derivs from the smoothed states (or raw states as fallback)."""
    return replace(traj, derivs=estimate_derivatives(traj.regression_states(),
                                                     traj.dt))


# -- datasets ------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Dataset:
    system: str
    dim: int
    seed: int
    dt: float
    noise: NoiseSpec
    splits: dict                     # split name -> list of Trajectory
    threshold: float
    meta: dict = field(default_factory=dict)

    @property
    def train(self):
        return self.splits["train"]

    @property
    def val(self):
        return self.splits["val"]

    @property
    def test(self):
        return self.splits["test"]

    def regression_arrays(self, split="train"):
        """Stacked (X, dX) over a split, from smoothed states + derivatives."""
        X = np.concatenate([tr.regression_states() for tr in
                            self.splits[split]])
        dX = np.concatenate([tr.derivs for tr in self.splits[split]])
        return X, dX

    def stacked_states(self, split="train"):
        return np.concatenate([tr.regression_states() for tr in
                               self.splits[split]])


def make_dataset(system, seed, noise=None, n_samples=None, dt=None,
                 counts=None, smooth_splits=("train", "val"),
                 smooth_cfg=GpSmoothConfig(), internal_dt=None):
    """Generate a full train/val/test dataset for one registry system.

    Any of the published conventions can be overridden.  Trajectory j (in
    global order train, val, test) draws its initial condition and then its
    noise from split_rng(seed, j); integration runs batched per split, which
    is arithmetic-identical to integrating one trajectory at a time.
    """
    if isinstance(system, str):
        system = get_system(system)
    spec = system.data
    noise = noise if noise is not None else spec.noise
    n_samples = n_samples or spec.n_samples
    dt = dt or spec.dt
    internal_dt = internal_dt or spec.internal_dt
    counts = counts or (spec.n_train, spec.n_val, spec.n_test)
    stride = int(round(dt / internal_dt))
    if abs(stride * internal_dt - dt) > 1e-12:
        raise ValueError(
            f"dt={dt} is not a multiple of the internal step {internal_dt}")
    oracle = system.oracle()
    splits = {}
    offset = 0
    for split, count in zip(SPLIT_NAMES, counts):
        rngs = [split_rng(seed, offset + j) for j in range(count)]
        x0 = np.array([sample_initial(system, rng) for rng in rngs])
        if count == 0:
            splits[split] = []
            continue
        recorded = rk4_record(oracle.h, x0, internal_dt,
                              (n_samples - 1) * stride, stride)
        trajs = []
        for j in range(count):
            clean = recorded[:, j, :]
            tr = Trajectory(t0=0.0, dt=dt, states=clean.copy(),
                            clean_states=clean, seed=offset + j)
            tr = add_noise(tr, noise, rngs[j])
            if split in smooth_splits:
                tr = gp_smooth(tr, smooth_cfg)
                tr = differentiate_trajectory(tr)
            trajs.append(tr)
        splits[split] = trajs
        offset += count
    return Dataset(system=system.name, dim=system.dim, seed=int(seed), dt=dt,
                   noise=noise, splits=splits, threshold=spec.threshold,
                   meta={"n_samples": n_samples, "internal_dt": internal_dt,
                         "counts": tuple(counts)})


# -- serialization -------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def save_dataset(ds, outdir, extra_meta=None):
    """Directory with manifest.json and one CSV per trajectory.

    CSV columns: t, x1..xd, then xs1..xsd when smoothed states exist, then
    dx1..dxd when derivatives exist.  Floats are written with shortest
    round-trip formatting, so reloading is bit-exact.
    """
    import os
    os.makedirs(outdir, exist_ok=True)
    manifest = {
        "format": "symodes-dataset",
        "format_version": 1,
        "tool_version": _tool_version,
        "system": ds.system,
        "dim": ds.dim,
        "seed": ds.seed,
        "dt": ds.dt,
        "threshold": ds.threshold,
        "noise": {"kind": ds.noise.kind, "sigma": ds.noise.sigma},
        "splits": {k: len(v) for k, v in ds.splits.items()},
        "meta": {k: list(v) if isinstance(v, tuple) else v
                 for k, v in ds.meta.items()},
    }
    if extra_meta:
        manifest.update(extra_meta)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for split, trajs in ds.splits.items():
        for j, tr in enumerate(trajs):
            path = os.path.join(outdir, f"{split}_{j:03d}.csv")
            cols = [f"x{i+1}" for i in range(tr.dim)]
            if tr.smoothed is not None:
                cols += [f"xs{i+1}" for i in range(tr.dim)]
            if tr.derivs is not None:
                cols += [f"dx{i+1}" for i in range(tr.dim)]
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t"] + cols)
                times = tr.times
                for k in range(tr.n_samples):
                    row = [times[k]]
                    row.extend(tr.states[k])
                    if tr.smoothed is not None:
                        row.extend(tr.smoothed[k])
                    if tr.derivs is not None:
                        row.extend(tr.derivs[k])
                    w.writerow([_fmt(v) for v in row])


def load_dataset(indir):
    import os
    with open(os.path.join(indir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "symodes-dataset":
        raise ValueError(f"{indir} does not look like a dataset directory")
    dim = manifest["dim"]
    splits = {}
    for split, count in manifest["splits"].items():
        trajs = []
        for j in range(count):
            path = os.path.join(indir, f"{split}_{j:03d}.csv")
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            header, data = rows[0], np.array(rows[1:], dtype=float)
            t = data[:, 0]
            states = data[:, 1:1 + dim]
            smoothed = derivs = None
            if f"xs1" in header:
                c = header.index("xs1")
                smoothed = data[:, c:c + dim]
            if f"dx1" in header:
                c = header.index("dx1")
                derivs = data[:, c:c + dim]
            dt = float(t[1] - t[0]) if len(t) > 1 else manifest["dt"]
            trajs.append(Trajectory(t0=float(t[0]), dt=dt, states=states,
                                    smoothed=smoothed, derivs=derivs))
        splits[split] = trajs
    noise = NoiseSpec(manifest["noise"]["kind"], manifest["noise"]["sigma"])
    meta = dict(manifest.get("meta", {}))
    return Dataset(system=manifest["system"], dim=dim, seed=manifest["seed"],
                   dt=manifest["dt"], noise=noise, splits=splits,
                   threshold=manifest["threshold"], meta=meta)
