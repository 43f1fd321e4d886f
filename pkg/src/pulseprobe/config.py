"""Flat key-value configuration files and their resolution to model objects.

The format is one ``key = value`` pair per line, ``#`` comments allowed.
Keys use dotted paths; hypotheses are indexed (``hypotheses.0.label``).
``validate-config`` prints every resolved key including defaults, so any
run is reproducible from its echoed configuration alone.

Schema (defaults in parentheses):

    gamma (1.0)                 forward coupling / decay rate, sets the time unit
    kappa (0.0)                 unobserved side-loss rate
    detuning (0.0)              excited-level detuning
    cavity_dim (auto)           Fock truncation; default derived from the field
    atom_init (1)               initial atomic level: 0 | 1 | e
    field.kind (fock)           fock | coherent
    field.n (1)                 Fock occupation (field.kind = fock)
    field.alpha                 coherent amplitude, complex accepted (field.kind = coherent)
    pulse.kind (gaussian)       gaussian | flattop | sampled
    pulse.center (5.0)          gaussian center
    pulse.width (1.0)           gaussian width (std of |u|^2)
    pulse.start / pulse.stop    flattop support
    pulse.file                  sampled envelope path (time, real[, imag] columns)
    dt (0.001)                  integrator step
    t_final (10.0)              window end; must be an integer number of steps
    detection.scheme (counting) counting | homodyne
    detection.phase (0.0)       homodyne local-oscillator phase
    cutoff_epsilon (1e-8)       remaining-norm cutoff for the coupling
    validate_every (0)          positivity-check cadence, 0 disables
    hypotheses.<i>.label        filter bank entries (optional; needed for inference)
    hypotheses.<i>.prior
    hypotheses.<i>.atom_init    plus optional overrides: gamma, kappa, detuning,
    hypotheses.<i>.field.*      field.kind / field.n / field.alpha
    truth (sampled)             sampled | fixed:<label>
    n_trajectories (1)
    master_seed (0)
    outputs (qe_curve)          comma list: qe_curve, posterior_samples, records, state_series
    batch_size (256)
"""

from __future__ import annotations

import dataclasses
import hashlib
import re

from .dynamics import DetectionSpec, ModelConfig
from .ensemble import EnsembleSpec, TruthPolicy
from .errors import ConfigError
from .hilbert import FieldSpec
from .inference import Hypothesis
from .pulses import PulseShape

_MODEL_KEYS = {
    "gamma", "kappa", "detuning", "cavity_dim", "atom_init",
    "field.kind", "field.n", "field.alpha",
    "pulse.kind", "pulse.center", "pulse.width", "pulse.start", "pulse.stop", "pulse.file",
    "dt", "t_final", "detection.scheme", "detection.phase",
    "cutoff_epsilon", "validate_every",
}
_ENSEMBLE_KEYS = {"truth", "n_trajectories", "master_seed", "outputs", "batch_size"}
_HYP_KEY = re.compile(r"^hypotheses\.(\d+)\.(.+)$")
_HYP_FIELDS = {"label", "prior", "atom_init", "gamma", "kappa", "detuning", "field.kind", "field.n", "field.alpha"}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines into a dict, rejecting unknown keys."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        m = _HYP_KEY.match(key)
        if m:
            if m.group(2) not in _HYP_FIELDS:
                raise ConfigError(f"line {lineno}: unknown hypothesis field {m.group(2)!r}")
        elif key not in _MODEL_KEYS | _ENSEMBLE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        pairs[key] = value
    return pairs


def load_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _to_float(pairs, key, default=None) -> float | None:
    if key not in pairs:
        return default
    try:
        return float(pairs[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {pairs[key]!r}") from exc


def _to_int(pairs, key, default=None) -> int | None:
    if key not in pairs:
        return default
    try:
        return int(pairs[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {pairs[key]!r}") from exc


def _to_complex(pairs, key) -> complex:
    try:
        return complex(pairs[key].replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"{key} must be a real or complex number, got {pairs[key]!r}") from exc


def _field_from(pairs: dict[str, str], prefix: str) -> FieldSpec | None:
    kind = pairs.get(f"{prefix}.kind")
    has_any = any(k.startswith(prefix + ".") for k in pairs)
    if not has_any:
        return None
    kind = kind or "fock"
    if kind == "fock":
        return FieldSpec.fock(_to_int(pairs, f"{prefix}.n", 1))
    if kind == "coherent":
        if f"{prefix}.alpha" not in pairs:
            raise ConfigError(f"{prefix}.kind = coherent requires {prefix}.alpha")
        return FieldSpec.coherent(_to_complex(pairs, f"{prefix}.alpha"))
    raise ConfigError(f"{prefix}.kind must be 'fock' or 'coherent', got {kind!r}")


def _pulse_from(pairs: dict[str, str]) -> PulseShape:
    kind = pairs.get("pulse.kind", "gaussian")
    if kind == "gaussian":
        return PulseShape.gaussian(_to_float(pairs, "pulse.center", 5.0), _to_float(pairs, "pulse.width", 1.0))
    if kind == "flattop":
        if "pulse.start" not in pairs or "pulse.stop" not in pairs:
            raise ConfigError("pulse.kind = flattop requires pulse.start and pulse.stop")
        return PulseShape.flattop(_to_float(pairs, "pulse.start"), _to_float(pairs, "pulse.stop"))
    if kind == "sampled":
        if "pulse.file" not in pairs:
            raise ConfigError("pulse.kind = sampled requires pulse.file")
        return PulseShape.from_file(pairs["pulse.file"])
    raise ConfigError(f"pulse.kind must be gaussian, flattop, or sampled, got {kind!r}")


def resolve_model(pairs: dict[str, str]) -> ModelConfig:
    field = _field_from(pairs, "field") or FieldSpec.fock(1)
    return ModelConfig(
        pulse=_pulse_from(pairs),
        field=field,
        atom_init=pairs.get("atom_init", "1"),
        gamma=_to_float(pairs, "gamma", 1.0),
        kappa=_to_float(pairs, "kappa", 0.0),
        detuning=_to_float(pairs, "detuning", 0.0),
        cavity_dim=_to_int(pairs, "cavity_dim", None),
        dt=_to_float(pairs, "dt", 1e-3),
        t_final=_to_float(pairs, "t_final", 10.0),
        detection=DetectionSpec(
            scheme=pairs.get("detection.scheme", "counting"),
            phase=_to_float(pairs, "detection.phase", 0.0),
        ),
        cutoff_epsilon=_to_float(pairs, "cutoff_epsilon", 1e-8),
        validate_every=_to_int(pairs, "validate_every", 0),
    )


def resolve_hypotheses(pairs: dict[str, str]) -> tuple[Hypothesis, ...]:
    slots: dict[int, dict[str, str]] = {}
    for key, value in pairs.items():
        m = _HYP_KEY.match(key)
        if m:
            slots.setdefault(int(m.group(1)), {})[m.group(2)] = value
    hypotheses = []
    for i in sorted(slots):
        sub = slots[i]
        if "label" not in sub or "prior" not in sub:
            raise ConfigError(f"hypotheses.{i} needs at least label and prior")
        hypotheses.append(
            Hypothesis(
                label=sub["label"],
                prior=float(sub["prior"]),
                atom_init=sub.get("atom_init"),
                gamma=float(sub["gamma"]) if "gamma" in sub else None,
                kappa=float(sub["kappa"]) if "kappa" in sub else None,
                detuning=float(sub["detuning"]) if "detuning" in sub else None,
                field=_field_from(sub, "field"),
            )
        )
    return tuple(hypotheses)


def resolve_ensemble(pairs: dict[str, str], model: ModelConfig) -> EnsembleSpec | None:
    """Build the ensemble spec when hypotheses are present; None otherwise."""
    hypotheses = resolve_hypotheses(pairs)
    if not hypotheses:
        for key in sorted((_ENSEMBLE_KEYS & pairs.keys()) - {"master_seed"}):
            raise ConfigError(f"{key} requires at least one hypothesis")
        return None
    truth_raw = pairs.get("truth", "sampled")
    if truth_raw == "sampled":
        truth = TruthPolicy("sampled")
    elif truth_raw.startswith("fixed:"):
        truth = TruthPolicy("fixed", truth_raw.split(":", 1)[1].strip())
    else:
        raise ConfigError(f"truth must be 'sampled' or 'fixed:<label>', got {truth_raw!r}")
    outputs = frozenset(
        tok.strip() for tok in pairs.get("outputs", "qe_curve").split(",") if tok.strip()
    )
    spec = EnsembleSpec(
        base=model,
        hypotheses=hypotheses,
        truth=truth,
        n_trajectories=_to_int(pairs, "n_trajectories", 1),
        master_seed=_to_int(pairs, "master_seed", 0),
        outputs=outputs,
        batch_size=_to_int(pairs, "batch_size", 256),
    )
    return dataclasses.replace(spec, config_hash=config_hash_for(model, spec))


def master_seed_from(pairs: dict[str, str]) -> int:
    return _to_int(pairs, "master_seed", 0)


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v).strip("()")
    return str(v)


def resolved_items(model: ModelConfig, spec: EnsembleSpec | None = None) -> list[tuple[str, str]]:
    """Canonical echo of every setting, defaults included."""
    items: list[tuple[str, str]] = [
        ("gamma", _fmt_value(model.gamma)),
        ("kappa", _fmt_value(model.kappa)),
        ("detuning", _fmt_value(model.detuning)),
        ("cavity_dim", str(model.cavity_dim)),
        ("atom_init", model.atom_init),
        ("field.kind", model.field.kind),
    ]
    if model.field.kind == "fock":
        items.append(("field.n", str(model.field.n)))
    elif model.field.kind == "coherent":
        items.append(("field.alpha", _fmt_value(model.field.alpha)))
    items.append(("pulse.kind", model.pulse.kind))
    if model.pulse.kind == "gaussian":
        items += [("pulse.center", _fmt_value(model.pulse.center)), ("pulse.width", _fmt_value(model.pulse.width))]
    elif model.pulse.kind == "flattop":
        items += [("pulse.start", _fmt_value(model.pulse.start)), ("pulse.stop", _fmt_value(model.pulse.stop))]
    else:
        items.append(("pulse.points", str(len(model.pulse.sample_times))))
    items += [
        ("dt", _fmt_value(model.dt)),
        ("t_final", _fmt_value(model.t_final)),
        ("detection.scheme", model.detection.scheme),
        ("detection.phase", _fmt_value(model.detection.phase)),
        ("cutoff_epsilon", _fmt_value(model.cutoff_epsilon)),
        ("validate_every", str(model.validate_every)),
    ]
    if spec is not None:
        for i, h in enumerate(spec.hypotheses):
            items.append((f"hypotheses.{i}.label", h.label))
            items.append((f"hypotheses.{i}.prior", _fmt_value(h.prior)))
            for name in ("atom_init", "gamma", "kappa", "detuning"):
                value = getattr(h, name)
                if value is not None:
                    items.append((f"hypotheses.{i}.{name}", _fmt_value(value)))
            if h.field is not None:
                items.append((f"hypotheses.{i}.field.kind", h.field.kind))
                if h.field.kind == "fock":
                    items.append((f"hypotheses.{i}.field.n", str(h.field.n)))
                else:
                    items.append((f"hypotheses.{i}.field.alpha", _fmt_value(h.field.alpha)))
        truth = spec.truth.kind if spec.truth.kind == "sampled" else f"fixed:{spec.truth.label}"
        items += [
            ("truth", truth),
            ("n_trajectories", str(spec.n_trajectories)),
            ("master_seed", str(spec.master_seed)),
            ("outputs", ",".join(sorted(spec.outputs))),
            ("batch_size", str(spec.batch_size)),
        ]
    return items


def config_hash_for(model: ModelConfig, spec: EnsembleSpec | None = None) -> str:
    text = "\n".join(f"{k} = {v}" for k, v in resolved_items(model, spec))
    return hashlib.sha256(text.encode()).hexdigest()[:12]
