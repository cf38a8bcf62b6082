"""Windowed supervised datasets built from simulator trajectories.

A sample pairs a lookback window of observed channels plus actuations with
the lookforward window of future observed channels.  Both windows are stored
flat and step-major: column = step * width + channel, so a single channel of
a sample is the strided slice ``row[channel::width]``.  Targets are future
states, never residuals, and stay in raw physical units; only inputs are
normalized, with per-channel statistics fit on the training split alone.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, CsvParseError, DomainError, ShapeError
from .numerics import RngState
from .simulators import (
    Trajectory,
    default_params,
    generate_actuation,
    simulate,
)

MANIFEST_FORMAT_VERSION = 1
TARGET_CONVENTION = "future states, raw units"


@dataclass
class WindowedDataset:
    inputs: np.ndarray           # (N, lb * d_in)
    targets: np.ndarray          # (N, lf * d_out)
    lb: int
    lf: int
    input_names: tuple           # d_in channel names (states ++ actions)
    target_names: tuple          # d_out channel names (states)
    stats: object = None         # NormalizationStats once normalized
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("inputs and targets must be 2-D")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError("inputs and targets must have equal row counts")
        if self.inputs.shape[1] != self.lb * len(self.input_names):
            raise ShapeError("input width != lb * len(input_names)")
        if self.targets.shape[1] != self.lf * len(self.target_names):
            raise ShapeError("target width != lf * len(target_names)")
        self.input_names = tuple(self.input_names)
        self.target_names = tuple(self.target_names)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def d_in(self):
        return len(self.input_names)

    @property
    def d_out(self):
        return len(self.target_names)


@dataclass
class RegimeSpec:
    """How to excite a system and how much data to record."""

    amplitude: float
    hold: int
    n_traj: int
    steps: int
    noise_sigma: float = 0.01
    seed: int = 0
    init_jitter: float = 0.1   # unactuated systems: initial-angle spread

    def __post_init__(self):
        if self.amplitude <= 0:
            raise DomainError(f"amplitude must be > 0, got {self.amplitude}")
        if self.hold < 1 or self.n_traj < 1 or self.steps < 1:
            raise DomainError("hold, n_traj, steps must all be >= 1")
        if self.noise_sigma < 0 or self.init_jitter < 0:
            raise DomainError("noise_sigma and init_jitter must be >= 0")


@dataclass
class NormalizationStats:
    mean: np.ndarray   # (d_in,)
    std: np.ndarray    # (d_in,) floored at 1e-8

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        self.mean.flags.writeable = False    # stats are frozen after fit
        self.std.flags.writeable = False


def window(traj, lb, lf):
    """Cut one trajectory into all its (lookback, lookforward) samples."""
    if lb < 1 or lf < 1:
        raise DomainError(f"lb and lf must be >= 1, got {lb}, {lf}")
    steps = traj.states.shape[0]
    if steps < lb + lf:
        raise DomainError(
            f"trajectory length {steps} < lb + lf = {lb + lf}")
    n = steps - lb - lf + 1
    full = np.hstack([traj.states, traj.actions])
    in_idx = np.arange(lb)[None, :] + np.arange(n)[:, None]
    tgt_idx = np.arange(lf)[None, :] + lb + np.arange(n)[:, None]
    inputs = full[in_idx].reshape(n, lb * full.shape[1])
    targets = traj.states[tgt_idx].reshape(n, lf * traj.states.shape[1])
    return WindowedDataset(
        inputs, targets, lb, lf,
        tuple(traj.state_names) + tuple(traj.action_names),
        tuple(traj.state_names),
        meta={"dt": traj.dt})


def concat(datasets):
    """Stack windowed datasets that share shape and channel names."""
    if not datasets:
        raise DomainError("nothing to concatenate")
    first = datasets[0]
    for ds in datasets[1:]:
        if (ds.lb, ds.lf, ds.input_names, ds.target_names) != \
                (first.lb, first.lf, first.input_names, first.target_names):
            raise ShapeError("datasets disagree on window shape or channels")
    return WindowedDataset(
        np.vstack([ds.inputs for ds in datasets]),
        np.vstack([ds.targets for ds in datasets]),
        first.lb, first.lf, first.input_names, first.target_names,
        meta=dict(first.meta))


def regime_trajectories(system, spec, params=None):
    """Yield the trajectories of one excitation regime, one per child stream.

    Actuated systems draw a fresh actuation sequence per trajectory, the
    free-fall double pendulum instead jitters its initial angles by up to
    ``spec.init_jitter`` so that trajectories differ.  Observation noise
    draws from the same per-trajectory stream.  Bit-reproducible for equal
    seeds.
    """
    if params is None:
        params = default_params(system)
    root = RngState(spec.seed)
    for i in range(spec.n_traj):
        traj_rng = root.child(i)
        if system == "double_pendulum":
            actions = np.zeros((spec.steps, 0))
            jitter = traj_rng.uniform(size=4, low=-spec.init_jitter,
                                      high=spec.init_jitter)
            jitter[1] = 0.0   # start at rest
            jitter[3] = 0.0
            init = tuple(np.array([np.pi / 2, 0.0, np.pi / 2, 0.0]) + jitter)
        else:
            actions = generate_actuation(traj_rng, spec.steps, spec.amplitude,
                                         spec.hold)
            init = None
        yield simulate(system, params, actions, spec.noise_sigma, traj_rng,
                       init_state=init)


def build_regime(system, spec, lb=10, lf=10, params=None):
    """Generate trajectories under one excitation regime and window them all."""
    parts = [window(traj, lb, lf)
             for traj in regime_trajectories(system, spec, params)]
    out = concat(parts)
    out.meta.update({"system": system, "regime": asdict(spec),
                     "lb": lb, "lf": lf,
                     "target_convention": TARGET_CONVENTION})
    return out


def desk_regimes(system, data_seed=0):
    """Desk-scale (interpolation, extrapolation) regime pair for a system.

    Budgets target ~6000 interpolation windows (split 5000 train / 1000 val)
    and 5000 extrapolation windows at lb = lf = 10.  Pendulum extrapolates in
    actuation amplitude (0.5 -> 2.0), the backlash motor in actuation
    frequency (hold shrunk 10x), and the free-fall double pendulum has no
    actuation axis, so its held-out set is fresh trajectories under new seeds.
    """
    if system == "pendulum":
        interp = RegimeSpec(amplitude=0.5, hold=5, n_traj=12, steps=519,
                            noise_sigma=0.01, seed=data_seed)
        extrap = RegimeSpec(amplitude=2.0, hold=5, n_traj=10, steps=519,
                            noise_sigma=0.01, seed=data_seed + 5000)
    elif system == "backlash":
        interp = RegimeSpec(amplitude=1.0, hold=100, n_traj=12, steps=519,
                            noise_sigma=0.01, seed=data_seed)
        extrap = RegimeSpec(amplitude=1.0, hold=10, n_traj=10, steps=519,
                            noise_sigma=0.01, seed=data_seed + 5000)
    elif system == "double_pendulum":
        interp = RegimeSpec(amplitude=1.0, hold=1, n_traj=12, steps=519,
                            noise_sigma=0.01, seed=data_seed)
        extrap = RegimeSpec(amplitude=1.0, hold=1, n_traj=10, steps=519,
                            noise_sigma=0.01, seed=data_seed + 5000)
    else:
        raise ConfigError(f"unknown system {system!r}")
    return interp, extrap


def split(ds, fractions, rng):
    """Disjoint, exhaustive, seed-deterministic row partition."""
    f_train, f_val = fractions
    if f_train < 0 or f_val < 0 or abs(f_train + f_val - 1.0) > 1e-9:
        raise DomainError(f"fractions must be >= 0 and sum to 1, got {fractions}")
    perm = rng.permutation(ds.n)
    n_train = int(round(f_train * ds.n))
    idx_train, idx_val = perm[:n_train], perm[n_train:]

    def take(idx):
        return WindowedDataset(ds.inputs[idx], ds.targets[idx], ds.lb, ds.lf,
                               ds.input_names, ds.target_names, ds.stats,
                               dict(ds.meta))
    return take(idx_train), take(idx_val)


def fit_stats(train):
    """Per-channel mean/std over every step of every training input window."""
    if train.n == 0:
        raise DomainError("cannot fit normalization stats on an empty dataset")
    d_in = train.d_in
    view = train.inputs.reshape(train.n * train.lb, d_in)
    mean = view.mean(axis=0)
    std = np.maximum(view.std(axis=0), 1e-8)
    return NormalizationStats(mean, std)


def apply_stats(ds, stats):
    d_in = ds.d_in
    view = ds.inputs.reshape(ds.n * ds.lb, d_in) if ds.n else ds.inputs
    normed = ((view - stats.mean) / stats.std).reshape(ds.inputs.shape)
    return WindowedDataset(normed, ds.targets, ds.lb, ds.lf,
                           ds.input_names, ds.target_names, stats,
                           dict(ds.meta))


def normalize_fit_apply(train, *others):
    """Fit stats on train inputs, apply to all; targets stay raw.

    Returns ``(datasets, stats)`` with ``datasets[0]`` the normalized train
    set, followed by the others in call order.
    """
    stats = fit_stats(train)
    return [apply_stats(ds, stats) for ds in (train,) + others], stats


# ---------------------------------------------------------------------------
# CSV: the trajectory exchange format (also the ingestion path for real
# hardware logs).  Header `t,<states...>,<actions...>`; action column names
# start with "u"; values at 17 significant digits so floats round-trip.

def csv_export(obj, path):
    if isinstance(obj, Trajectory):
        _traj_to_csv(obj, path)
    elif isinstance(obj, WindowedDataset):
        _windowed_to_csv(obj, path)
    else:
        raise ConfigError(f"cannot export {type(obj).__name__} as CSV")


def _traj_to_csv(traj, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *traj.state_names, *traj.action_names])
        for i in range(traj.states.shape[0]):
            row = [i * traj.dt, *traj.states[i], *traj.actions[i]]
            writer.writerow([f"{v:.17g}" for v in row])


def _windowed_to_csv(ds, path):
    header = [f"x{s}_{name}" for s in range(ds.lb) for name in ds.input_names]
    header += [f"y{s}_{name}" for s in range(ds.lf) for name in ds.target_names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = np.concatenate([ds.inputs[i], ds.targets[i]])
            writer.writerow([f"{v:.17g}" for v in row])


def csv_ingest(path):
    """Read a trajectory CSV back; exact inverse of the export."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if not header or header[0] != "t":
            raise CsvParseError("missing column 't' (must be first)", line=1)
        names = header[1:]
        if not names:
            raise CsvParseError("no state channels in header", line=1)
        n_actions = 0
        for name in reversed(names):
            if name.startswith("u"):
                n_actions += 1
            else:
                break
        state_names = names[:len(names) - n_actions]
        action_names = names[len(names) - n_actions:]
        for name in state_names:
            if name.startswith("u"):
                raise CsvParseError(
                    f"state column {name!r} located among action columns", line=1)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"expected {len(header)} fields, found {len(row)}",
                    line=line_no)
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvParseError(str(exc), line=line_no) from None
    if len(rows) < 2:
        raise CsvParseError("need at least 2 data rows to recover dt")
    data = np.asarray(rows)
    dt = data[1, 0] - data[0, 0]
    if dt <= 0:
        raise CsvParseError("time column must be strictly increasing")
    d = len(state_names)
    return Trajectory(data[:, 1:1 + d], data[:, 1 + d:], dt,
                      tuple(state_names), tuple(action_names))


# ---------------------------------------------------------------------------
# Manifests: enough structured metadata to re-create a dataset exactly.

def dataset_manifest(ds, stats=None):
    doc = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "n": ds.n,
        "lb": ds.lb,
        "lf": ds.lf,
        "input_names": list(ds.input_names),
        "target_names": list(ds.target_names),
        "target_convention": TARGET_CONVENTION,
        "meta": {k: v for k, v in ds.meta.items() if k != "dt"},
    }
    if "dt" in ds.meta:
        doc["dt"] = ds.meta["dt"]
    if stats is not None:
        doc["normalization"] = {"mean": stats.mean.tolist(),
                                "std": stats.std.tolist()}
    return doc


def write_manifest(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported manifest format_version {doc.get('format_version')!r}")
    return doc
