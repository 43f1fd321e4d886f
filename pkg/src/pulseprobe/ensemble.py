"""Seeded Monte Carlo ensembles: record generation plus parallel filtering.

Each trajectory derives an independent Philox stream from
(master_seed, trajectory index), so results are reproducible regardless of
batching or worker scheduling.  Draw order per trajectory: one uniform for
the truth sample (sampled-truth policy only), then the per-step noise block
(two uniforms per step for counting: jump decision and channel choice; one
Gaussian per step for homodyne).

Trajectories are evolved in vectorized batches.  Record generation keeps
the truth as a pure state by unraveling the unobserved side channel as
hidden jumps (the observed record statistics marginalize correctly); the
filters condition on the observed record only, exactly as the filter
equations prescribe.  Accumulation happens in fixed trajectory order, so an
ensemble is a pure function of its spec, byte for byte.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import hilbert
from .dynamics import (
    JUMP_PROB_MAX,
    JUMP_PROB_WARN,
    CascadeEngine,
    ModelConfig,
    _counting_pure_state_ok,
    standard_normals,
    trajectory_rng,
)
from .errors import ConfigError, IntegrationError
from .inference import FilterBank, Hypothesis, validate_hypotheses
from .records import MeasurementRecord

OUTPUT_KINDS = frozenset({"qe_curve", "posterior_samples", "records", "state_series"})


@dataclass(frozen=True)
class TruthPolicy:
    """How the true model is chosen per trajectory."""

    kind: str = "sampled"          # 'sampled' (from priors) | 'fixed'
    label: str | None = None       # required for 'fixed'

    def __post_init__(self):
        if self.kind not in ("sampled", "fixed"):
            raise ConfigError(f"truth policy must be 'sampled' or 'fixed', got {self.kind!r}")
        if self.kind == "fixed" and not self.label:
            raise ConfigError("fixed truth policy needs a hypothesis label")


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything that determines an ensemble run (and hence its output)."""

    base: ModelConfig
    hypotheses: tuple
    truth: TruthPolicy = TruthPolicy()
    n_trajectories: int = 1
    master_seed: int = 0
    outputs: frozenset = frozenset({"qe_curve"})
    batch_size: int = 256
    config_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        object.__setattr__(self, "outputs", frozenset(self.outputs))
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        unknown = self.outputs - OUTPUT_KINDS
        if unknown:
            raise ConfigError(f"unknown outputs {sorted(unknown)}; allowed: {sorted(OUTPUT_KINDS)}")
        validate_hypotheses(self.base, self.hypotheses)
        labels = [h.label for h in self.hypotheses]
        if self.truth.kind == "fixed" and self.truth.label not in labels:
            raise ConfigError(f"fixed truth label {self.truth.label!r} is not among hypotheses {labels}")


@dataclass
class TrajectoryOutcome:
    """Single-trajectory result: the record and the posterior time series."""

    index: int
    truth_label: str
    record: MeasurementRecord
    times: np.ndarray
    labels: tuple
    posteriors: np.ndarray            # (n_steps + 1, n_hypotheses)
    error_probabilities: np.ndarray   # (n_steps + 1,)
    cavity_photons: np.ndarray | None = None
    excited_population: np.ndarray | None = None


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_error: np.ndarray
    se_error: np.ndarray
    n_trajectories: int
    labels: tuple
    truth_labels: tuple
    final_posteriors: np.ndarray | None = None
    mean_cavity_photons: np.ndarray | None = None
    mean_excited: np.ndarray | None = None
    records: list | None = None
    metadata: dict = field(default_factory=dict)


class _CountingTruth:
    """Pure-state truth batch with observed forward jumps and hidden side jumps."""

    def __init__(self, config: ModelConfig, batch: int, uniforms: np.ndarray, positions: np.ndarray):
        self.engine = CascadeEngine(config)
        self.kernel = self.engine.kernel
        self.dt = config.dt
        self.kappa = config.kappa
        ket = hilbert.joint_ket(config.field, config.atom_init, config.layout).reshape(config.cavity_dim, 3)
        self.state = np.broadcast_to(ket, (batch,) + ket.shape).copy()
        self.uniforms = uniforms              # (batch, n_steps, 2)
        self.positions = positions            # global batch positions of the members
        self.max_step_probability = 0.0

    def step(self, i: int) -> np.ndarray:
        """Advance one step; returns the per-member click mask."""
        eng, kern = self.engine, self.kernel
        z = eng.forward_ket(self.state, i)
        p0 = kern.norm_sq_ket(z) * self.dt
        if self.kappa:
            p1 = (self.kappa * kern.excited_ket(self.state)) * self.dt
            ptot = p0 + p1
        else:
            ptot = p0
        pmax = float(ptot.max())
        self.max_step_probability = max(self.max_step_probability, pmax)
        if pmax > JUMP_PROB_MAX:
            bad = self.positions[np.flatnonzero(ptot > JUMP_PROB_MAX)]
            raise IntegrationError(
                f"jump probability {pmax:.3g} exceeds {JUMP_PROB_MAX} at step {i} "
                f"for batch positions {bad.tolist()}; reduce dt"
            )
        u = self.uniforms[:, i, :]
        jump = u[:, 0] < ptot
        clicked = jump & (u[:, 1] * ptot < p0)
        hidden = jump & ~clicked
        nxt = eng.nojump_step_ket(self.state, i)
        if clicked.any():
            nxt[clicked] = z[clicked]
        if hidden.any():
            nxt[hidden] = kern.side_ket(self.state[hidden])
        norms = kern.norm_sq_ket(nxt)
        if not (norms > 0.0).all():
            bad = self.positions[np.flatnonzero(~(norms > 0.0))]
            raise IntegrationError(f"truth state norm collapsed at step {i} for positions {bad.tolist()}")
        self.state = nxt / np.sqrt(norms)[:, None, None]
        return clicked

    def photons(self) -> np.ndarray:
        return self.kernel.photons_ket(self.state)

    def excited(self) -> np.ndarray:
        return self.kernel.excited_ket(self.state)


class _HomodyneTruth:
    """Density-matrix truth batch emitting homodyne increments."""

    def __init__(self, config: ModelConfig, batch: int, normals: np.ndarray, positions: np.ndarray):
        self.engine = CascadeEngine(config)
        self.kernel = self.engine.kernel
        self.dt = config.dt
        ket = hilbert.joint_ket(config.field, config.atom_init, config.layout).reshape(config.cavity_dim, 3)
        rho = np.einsum("ns,mt->nsmt", ket, ket.conj())
        self.state = np.broadcast_to(rho, (batch,) + rho.shape).copy()
        self.normals = normals                # (batch, n_steps)
        self.positions = positions
        self.max_step_probability = 0.0

    def step(self, i: int) -> np.ndarray:
        eng, kern = self.engine, self.kernel
        rate = eng.flux_mat(self.state, i)
        self.max_step_probability = max(self.max_step_probability, float(rate.max()) * self.dt)
        dy = eng.dy_mean_mat(self.state, i) * self.dt + math.sqrt(self.dt) * self.normals[:, i]
        self.state = eng.homodyne_step_mat(self.state, i, dy)
        tr = kern.trace_mat(self.state)
        if not (tr > 0.0).all():
            bad = self.positions[np.flatnonzero(~(tr > 0.0))]
            raise IntegrationError(f"homodyne truth trace collapsed at step {i} for positions {bad.tolist()}")
        self.state = self.state / tr[:, None, None, None, None]
        return dy

    def photons(self) -> np.ndarray:
        return self.kernel.photons_mat(self.state)

    def excited(self) -> np.ndarray:
        return self.kernel.excited_mat(self.state)


def _sample_truths(spec: EnsembleSpec, indices) -> tuple[list, list]:
    """Per-index truth label and the RNG left positioned at the noise block."""
    labels = [h.label for h in spec.hypotheses]
    priors = np.cumsum([h.prior for h in spec.hypotheses])
    out_labels = []
    rngs = []
    for index in indices:
        rng = trajectory_rng(spec.master_seed, index)
        if spec.truth.kind == "sampled":
            u = rng.random()
            out_labels.append(labels[min(int(np.searchsorted(priors, u, side="right")), len(labels) - 1)])
        else:
            out_labels.append(spec.truth.label)
        rngs.append(rng)
    return out_labels, rngs


@dataclass
class _BatchResult:
    indices: np.ndarray
    truth_labels: list
    qe_sum: np.ndarray
    qe_sq_sum: np.ndarray
    finals: np.ndarray
    nph_sum: np.ndarray | None
    pe_sum: np.ndarray | None
    max_step_probability: float
    click_steps: list | None      # counting records, per member
    increments: np.ndarray | None  # homodyne records, (batch, n_steps)
    series: np.ndarray | None      # (n_steps + 1, batch, m) when requested


def _run_batch(spec: EnsembleSpec, indices, keep_series: bool = False) -> _BatchResult:
    base = spec.base
    scheme = base.detection.scheme
    n = base.grid.n_steps
    B = len(indices)
    hyp_by_label = {h.label: h for h in spec.hypotheses}
    truth_labels, rngs = _sample_truths(spec, indices)

    want_states = "state_series" in spec.outputs or keep_series
    want_records = "records" in spec.outputs or keep_series

    groups: dict[str, np.ndarray] = {}
    for pos, label in enumerate(truth_labels):
        groups.setdefault(label, []).append(pos)
    truths = {}
    for label, positions in groups.items():
        positions = np.asarray(positions, dtype=np.int64)
        config = hyp_by_label[label].resolve(base)
        if scheme == "counting":
            noise = np.stack([rngs[p].random((n, 2)) for p in positions])
            truths[label] = _CountingTruth(config, positions.size, noise, indices_of(indices, positions))
        else:
            noise = np.stack([standard_normals(rngs[p], n) for p in positions])
            truths[label] = _HomodyneTruth(config, positions.size, noise, indices_of(indices, positions))
        groups[label] = positions

    bank = FilterBank(base, spec.hypotheses, batch=B)
    m = len(spec.hypotheses)
    priors = np.array([h.prior for h in spec.hypotheses])

    qe_sum = np.zeros(n + 1)
    qe_sq_sum = np.zeros(n + 1)
    nph_sum = np.zeros(n + 1) if want_states else None
    pe_sum = np.zeros(n + 1) if want_states else None
    series = np.empty((n + 1, B, m)) if keep_series else None
    clicks: list[list[int]] | None = [[] for _ in range(B)] if (scheme == "counting" and want_records) else None
    increments = np.empty((B, n)) if (scheme == "homodyne" and want_records) else None

    p0 = np.broadcast_to(priors, (B, m))
    qe0 = 1.0 - priors.max()
    qe_sum[0] = B * qe0
    qe_sq_sum[0] = B * qe0 * qe0
    if keep_series:
        series[0] = p0
    if want_states:
        for label, positions in groups.items():
            nph_sum[0] += float(truths[label].photons().sum())
            pe_sum[0] += float(truths[label].excited().sum())

    for i in range(n):
        if scheme == "counting":
            clicked = np.zeros(B, dtype=bool)
            for label, positions in groups.items():
                clicked[positions] = truths[label].step(i)
            if clicks is not None:
                for pos in np.flatnonzero(clicked):
                    clicks[pos].append(i)
            bank.advance_counting(clicked)
        else:
            dy = np.zeros(B)
            for label, positions in groups.items():
                dy[positions] = truths[label].step(i)
            if increments is not None:
                increments[:, i] = dy
            bank.advance_homodyne(dy)
        post = bank.posteriors_array()
        qe = 1.0 - post.max(axis=-1)
        qe_sum[i + 1] = qe.sum()
        qe_sq_sum[i + 1] = (qe * qe).sum()
        if keep_series:
            series[i + 1] = post
        if want_states:
            for label, positions in groups.items():
                nph_sum[i + 1] += float(truths[label].photons().sum())
                pe_sum[i + 1] += float(truths[label].excited().sum())

    return _BatchResult(
        indices=np.asarray(indices, dtype=np.int64),
        truth_labels=truth_labels,
        qe_sum=qe_sum,
        qe_sq_sum=qe_sq_sum,
        finals=bank.posteriors_array(),
        nph_sum=nph_sum,
        pe_sum=pe_sum,
        max_step_probability=max(t.max_step_probability for t in truths.values()),
        click_steps=clicks,
        increments=increments,
        series=series,
    )


def indices_of(indices, positions: np.ndarray) -> np.ndarray:
    return np.asarray([indices[p] for p in positions], dtype=np.int64)


def _record_for(spec: EnsembleSpec, index: int, batch: _BatchResult, pos: int) -> MeasurementRecord:
    base = spec.base
    if base.detection.scheme == "counting":
        return MeasurementRecord(
            scheme="counting",
            dt=base.dt,
            t_final=base.t_final,
            n_steps=base.grid.n_steps,
            seed=spec.master_seed,
            stream_index=index,
            config_hash=spec.config_hash,
            click_steps=np.asarray(batch.click_steps[pos], dtype=np.int64),
        )
    return MeasurementRecord(
        scheme="homodyne",
        dt=base.dt,
        t_final=base.t_final,
        n_steps=base.grid.n_steps,
        seed=spec.master_seed,
        stream_index=index,
        phase=base.detection.phase,
        config_hash=spec.config_hash,
        increments=batch.increments[pos],
    )


def run_trajectory(spec: EnsembleSpec, index: int) -> TrajectoryOutcome:
    """One seeded trajectory: sample the truth, generate the record, filter it."""
    batch = _run_batch(spec, [int(index)], keep_series=True)
    series = batch.series[:, 0, :]
    return TrajectoryOutcome(
        index=int(index),
        truth_label=batch.truth_labels[0],
        record=_record_for(spec, int(index), batch, 0),
        times=spec.base.grid.times(),
        labels=tuple(h.label for h in spec.hypotheses),
        posteriors=series,
        error_probabilities=1.0 - series.max(axis=1),
        cavity_photons=batch.nph_sum,
        excited_population=batch.pe_sum,
    )


def _batch_worker(args) -> _BatchResult:
    spec, chunk = args
    return _run_batch(spec, chunk)


def run_ensemble(spec: EnsembleSpec, threads: int | None = None, progress=None) -> EnsembleResult:
    """Average the readout error over n_trajectories independent runs.

    The reduction is performed in trajectory-index order whatever the worker
    count, so the result is deterministic for a given spec.
    """
    start = time.monotonic()
    n = spec.base.grid.n_steps
    total = spec.n_trajectories
    chunks = [list(range(lo, min(lo + spec.batch_size, total))) for lo in range(0, total, spec.batch_size)]
    if threads is None or threads < 1:
        threads = 1

    results: list[_BatchResult] = []
    if threads == 1 or len(chunks) == 1:
        for chunk in chunks:
            results.append(_run_batch(spec, chunk))
            if progress is not None:
                progress(sum(len(c) for c in chunks[: len(results)]), total)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for done, res in enumerate(pool.map(_batch_worker, [(spec, c) for c in chunks])):
                results.append(res)
                if progress is not None:
                    progress(sum(len(c) for c in chunks[: done + 1]), total)

    qe_sum = np.zeros(n + 1)
    qe_sq = np.zeros(n + 1)
    finals = np.empty((total, len(spec.hypotheses)))
    truth_labels: list[str] = []
    nph = np.zeros(n + 1) if "state_series" in spec.outputs else None
    pe = np.zeros(n + 1) if "state_series" in spec.outputs else None
    records: list | None = [] if "records" in spec.outputs else None
    p_max = 0.0
    for batch in results:
        qe_sum += batch.qe_sum
        qe_sq += batch.qe_sq_sum
        finals[batch.indices] = batch.finals
        truth_labels.extend(batch.truth_labels)
        p_max = max(p_max, batch.max_step_probability)
        if nph is not None:
            nph += batch.nph_sum
            pe += batch.pe_sum
        if records is not None:
            for pos, index in enumerate(batch.indices):
                records.append(_record_for(spec, int(index), batch, pos))

    if p_max > JUMP_PROB_WARN:
        warnings.warn(
            f"max per-step detection probability {p_max:.3g} exceeds {JUMP_PROB_WARN}; "
            f"suggested dt <= {JUMP_PROB_WARN * spec.base.dt / p_max:.3e}",
            stacklevel=2,
        )

    mean = qe_sum / total
    if total > 1:
        var = np.maximum(qe_sq - qe_sum**2 / total, 0.0) / (total - 1)
        se = np.sqrt(var / total)
    else:
        se = np.zeros(n + 1)

    return EnsembleResult(
        times=spec.base.grid.times(),
        mean_error=mean,
        se_error=se,
        n_trajectories=total,
        labels=tuple(h.label for h in spec.hypotheses),
        truth_labels=tuple(truth_labels),
        final_posteriors=finals if "posterior_samples" in spec.outputs else None,
        mean_cavity_photons=None if nph is None else nph / total,
        mean_excited=None if pe is None else pe / total,
        records=records,
        metadata={
            "master_seed": spec.master_seed,
            "n_trajectories": total,
            "scheme": spec.base.detection.scheme,
            "rng": "philox4x64 keyed by (master_seed, index); normals via inverse CDF",
            "max_step_probability": p_max,
            "wall_time_s": time.monotonic() - start,
        },
    )


def mean_conditioned_state(
    config: ModelConfig,
    n_trajectories: int,
    master_seed: int,
    checkpoint_times,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ensemble mean of the measurement-conditioned state at checkpoints.

    Returns (mean_states, sigma_mc, checkpoint_times): the elementwise mean
    of the normalized conditioned states over trajectories, and per
    checkpoint the Monte Carlo standard error aggregated in Frobenius norm.
    Used to verify that both unravelings average back to the deterministic
    master equation.
    """
    scheme = config.detection.scheme
    if scheme == "counting" and not _counting_pure_state_ok(config):
        raise ConfigError("counting ensemble means require a pure-state-preserving config (kappa == 0)")
    grid = config.grid
    n = grid.n_steps
    check = np.asarray(np.round(np.asarray(checkpoint_times, dtype=float) / config.dt), dtype=np.int64)
    if check.size == 0 or check.min() < 0 or check.max() > n:
        raise ConfigError("checkpoint times must lie on the grid")
    dim = config.cavity_dim * 3
    acc = np.zeros((check.size, dim, dim), dtype=complex)
    acc2 = np.zeros((check.size, dim, dim))

    for lo in range(0, n_trajectories, batch_size):
        idx = list(range(lo, min(lo + batch_size, n_trajectories)))
        B = len(idx)
        rngs = [trajectory_rng(master_seed, k) for k in idx]
        if scheme == "counting":
            noise = np.stack([r.random((n, 2)) for r in rngs])
            truth = _CountingTruth(config, B, noise, np.asarray(idx))
        else:
            noise = np.stack([standard_normals(r, n) for r in rngs])
            truth = _HomodyneTruth(config, B, noise, np.asarray(idx))

        def grab(slot_mask: np.ndarray) -> None:
            if not slot_mask.any():
                return
            if scheme == "counting":
                flat = truth.state.reshape(B, dim)
                dense = np.einsum("bi,bj->bij", flat, flat.conj())
            else:
                dense = truth.state.reshape(B, dim, dim)
            for slot in np.flatnonzero(slot_mask):
                acc[slot] += dense.sum(axis=0)
                acc2[slot] += (np.abs(dense) ** 2).sum(axis=0)

        grab(check == 0)
        for i in range(n):
            truth.step(i)
            grab(check == i + 1)

    mean = acc / n_trajectories
    var = np.maximum(acc2 - np.abs(acc) ** 2 / n_trajectories, 0.0) / max(n_trajectories - 1, 1)
    sigma = np.sqrt(var.sum(axis=(1, 2)) / n_trajectories)
    return mean, sigma, check * config.dt
