"""Bayesian filter bank over candidate initial states or physical parameters.

One unnormalized conditional state is propagated per hypothesis, all driven
by the same measurement record.  The trace of each state times the
accumulated rescaling factors is the record likelihood p(D|h), so Bayes'
rule reduces to bookkeeping: posteriors are softmax of
log(prior) + accumulated log rescales + log trace.

Click steps apply the jump update in place of the no-click drift (the two
events are exclusive alternatives of the same time step), so a filter whose
hypothesis matches the truth reproduces the truth's conditioned state
exactly.  Filters whose trace hits exactly zero observed an impossible
event and are dead: posterior zero, never revived.

A bank holds a whole batch of independent trajectories at once; the public
single-record API is the batch-of-one case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hilbert
from .dynamics import CascadeEngine, ModelConfig, _counting_pure_state_ok
from .errors import AllFiltersDeadError, ConfigError
from .hilbert import FieldSpec
from .records import MeasurementRecord

PRIOR_SUM_TOL = 1e-12
# Trace window outside which an unnormalized filter state is rescaled to
# trace one, folding log(scale) into its likelihood accumulator.
RESCALE_LO = 1e-6
RESCALE_HI = 1e6


@dataclass(frozen=True)
class Hypothesis:
    """A candidate model: initial atomic state and/or parameter overrides."""

    label: str
    prior: float
    atom_init: str | None = None
    gamma: float | None = None
    kappa: float | None = None
    detuning: float | None = None
    field: FieldSpec | None = None

    def __post_init__(self):
        if not 0.0 < self.prior <= 1.0:
            raise ConfigError(f"hypothesis {self.label!r} prior must be in (0, 1], got {self.prior}")

    def resolve(self, base: ModelConfig) -> ModelConfig:
        changes = {
            name: value
            for name in ("atom_init", "gamma", "kappa", "detuning", "field")
            if (value := getattr(self, name)) is not None
        }
        return base.replace(**changes) if changes else base


def validate_hypotheses(base: ModelConfig, hypotheses) -> None:
    if len(hypotheses) < 1:
        raise ConfigError("at least one hypothesis is required")
    labels = [h.label for h in hypotheses]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"hypothesis labels must be unique, got {labels}")
    total = sum(h.prior for h in hypotheses)
    if abs(total - 1.0) > PRIOR_SUM_TOL:
        raise ConfigError(f"priors must sum to 1 within {PRIOR_SUM_TOL}, got {total!r}")
    for h in hypotheses:
        h.resolve(base)  # raises if the override is inconsistent with the shared truncation


class _Filter:
    """Batched unnormalized conditional state for one hypothesis."""

    def __init__(self, hypothesis: Hypothesis, base: ModelConfig, batch: int):
        self.hypothesis = hypothesis
        self.config = hypothesis.resolve(base)
        self.engine = CascadeEngine(self.config)
        scheme = base.detection.scheme
        self.pure = scheme == "counting" and _counting_pure_state_ok(self.config)
        ket = hilbert.joint_ket(self.config.field, self.config.atom_init, self.config.layout)
        ket = ket.reshape(self.config.cavity_dim, 3)
        if self.pure:
            self.state = np.broadcast_to(ket, (batch,) + ket.shape).copy()
        else:
            rho = np.einsum("ns,mt->nsmt", ket, ket.conj())
            self.state = np.broadcast_to(rho, (batch,) + rho.shape).copy()
        self.log_weight = np.full(batch, np.log(hypothesis.prior))
        self.dead = np.zeros(batch, dtype=bool)

    def _trace(self) -> np.ndarray:
        k = self.engine.kernel
        return k.norm_sq_ket(self.state) if self.pure else k.trace_mat(self.state)

    def _bookkeep(self) -> None:
        tr = self._trace()
        bad = ~(tr > 0.0) | ~np.isfinite(tr)
        if bad.any():
            self.dead |= bad
            self.state[bad] = 0.0
        live = ~self.dead
        rescale = live & ((tr < RESCALE_LO) | (tr > RESCALE_HI))
        if rescale.any():
            factor = tr[rescale]
            self.log_weight[rescale] += np.log(factor)
            denom = np.sqrt(factor) if self.pure else factor
            self.state[rescale] /= denom.reshape((-1,) + (1,) * (self.state.ndim - 1))

    def advance_counting(self, i: int, clicked: np.ndarray) -> None:
        eng = self.engine
        pre = self.state
        if self.pure:
            nxt = eng.nojump_step_ket(pre, i)
            if clicked.any():
                nxt[clicked] = eng.forward_ket(pre[clicked], i)
        else:
            nxt = eng.nojump_step_mat(pre, i)
            if clicked.any():
                nxt[clicked] = eng.jump_mat(pre[clicked], i)
        self.state = nxt
        self._bookkeep()

    def advance_homodyne(self, i: int, dy: np.ndarray) -> None:
        self.state = self.engine.homodyne_step_mat(self.state, i, dy)
        self._bookkeep()

    def log_likelihood(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            ll = self.log_weight + np.log(self._trace())
        ll[self.dead] = -np.inf
        return ll

    def hermiticity_defect(self) -> float:
        if self.pure:
            return 0.0
        k = self.engine.kernel
        tr = np.maximum(k.trace_mat(self.state), 1e-300)
        return float((k.hermiticity_defect_mat(self.state) / tr).max())


class FilterBank:
    """Per-hypothesis unnormalized states advancing over one shared record.

    ``batch`` independent trajectories are filtered simultaneously; the
    single-record API uses ``batch == 1``.
    """

    def __init__(self, base: ModelConfig, hypotheses, batch: int = 1):
        validate_hypotheses(base, hypotheses)
        self.base = base
        self.hypotheses = tuple(hypotheses)
        self.batch = int(batch)
        self.filters = [_Filter(h, base, self.batch) for h in self.hypotheses]
        self.step_index = 0
        self.n_steps = base.grid.n_steps

    @property
    def labels(self) -> tuple:
        return tuple(h.label for h in self.hypotheses)

    def _as_mask(self, clicked) -> np.ndarray:
        mask = np.asarray(clicked, dtype=bool)
        return np.broadcast_to(mask, (self.batch,)).copy() if mask.ndim == 0 else mask

    def advance_counting(self, clicked) -> None:
        if self.step_index >= self.n_steps:
            raise ConfigError("filter bank already consumed the whole grid")
        mask = self._as_mask(clicked)
        for f in self.filters:
            f.advance_counting(self.step_index, mask)
        self.step_index += 1

    def advance_homodyne(self, dy) -> None:
        if self.step_index >= self.n_steps:
            raise ConfigError("filter bank already consumed the whole grid")
        dy = np.broadcast_to(np.asarray(dy, dtype=float), (self.batch,))
        for f in self.filters:
            f.advance_homodyne(self.step_index, dy)
        self.step_index += 1

    def log_likelihoods(self) -> np.ndarray:
        """(batch, n_hypotheses) array of log p(D|h) + log prior, up to a shared offset."""
        return np.stack([f.log_likelihood() for f in self.filters], axis=-1)

    def posteriors_array(self) -> np.ndarray:
        ll = self.log_likelihoods()
        best = ll.max(axis=-1, keepdims=True)
        extinct = ~np.isfinite(best[..., 0])
        if extinct.any():
            raise AllFiltersDeadError(
                f"record impossible under every hypothesis for trajectories {np.flatnonzero(extinct).tolist()}"
            )
        p = np.exp(ll - best)
        return p / p.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------- public API

def filter_init(base: ModelConfig, hypotheses) -> FilterBank:
    """Bank of unit-trace initial states with log likelihoods seeded at log prior."""
    return FilterBank(base, hypotheses, batch=1)


def _check_time(bank: FilterBank, t: float) -> None:
    expected = bank.step_index * bank.base.dt
    if abs(t - expected) > 1e-9 * max(1.0, abs(expected)) + 1e-12:
        raise ConfigError(f"bank is synchronized at t={expected}, got step at t={t}")


def filter_step_counting(bank: FilterBank, t: float, clicked: bool) -> FilterBank:
    _check_time(bank, t)
    bank.advance_counting(bool(clicked))
    return bank


def filter_step_homodyne(bank: FilterBank, t: float, dy: float) -> FilterBank:
    _check_time(bank, t)
    bank.advance_homodyne(float(dy))
    return bank


def posteriors(bank: FilterBank) -> np.ndarray:
    """Posterior probabilities over hypotheses, stably normalized to sum exactly near 1."""
    return bank.posteriors_array()[0] if bank.batch == 1 else bank.posteriors_array()


def error_probability(posterior_vector) -> float:
    """Readout error: one minus the largest posterior."""
    p = np.asarray(posterior_vector, dtype=float)
    return float(1.0 - p.max(axis=-1))


@dataclass
class FilterRun:
    """Posterior time series produced by replaying one record through a bank."""

    times: np.ndarray
    labels: tuple
    posteriors: np.ndarray        # (n_steps + 1, n_hypotheses)
    error_probabilities: np.ndarray
    log_likelihoods: np.ndarray   # final (n_hypotheses,)


def run_filter(base: ModelConfig, hypotheses, record: MeasurementRecord) -> FilterRun:
    """Drive a fresh bank over a stored record, emitting the posterior series."""
    grid = base.grid
    if record.n_steps != grid.n_steps or abs(record.dt - base.dt) > 1e-12 * base.dt:
        raise ConfigError(
            f"record grid (dt={record.dt}, n={record.n_steps}) does not match "
            f"config grid (dt={base.dt}, n={grid.n_steps})"
        )
    if record.scheme != base.detection.scheme:
        raise ConfigError(f"record scheme {record.scheme!r} does not match config {base.detection.scheme!r}")
    if record.scheme == "homodyne" and abs(record.phase - base.detection.phase) > 1e-12:
        raise ConfigError(f"record phase {record.phase} does not match config phase {base.detection.phase}")

    bank = FilterBank(base, hypotheses, batch=1)
    m = len(bank.hypotheses)
    series = np.empty((grid.n_steps + 1, m))
    series[0] = [h.prior for h in bank.hypotheses]
    if record.scheme == "counting":
        clicked = record.clicked_mask()
        for i in range(grid.n_steps):
            bank.advance_counting(bool(clicked[i]))
            series[i + 1] = bank.posteriors_array()[0]
    else:
        for i in range(grid.n_steps):
            bank.advance_homodyne(float(record.increments[i]))
            series[i + 1] = bank.posteriors_array()[0]
    qe = 1.0 - series.max(axis=1)
    return FilterRun(
        times=grid.times(),
        labels=bank.labels,
        posteriors=series,
        error_probabilities=qe,
        log_likelihoods=bank.log_likelihoods()[0],
    )
