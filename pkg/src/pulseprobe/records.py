"""Self-describing text serialization of measurement records.

A record carries everything a filter needs to replay a measurement run:
the detection scheme, the shared time grid, the RNG provenance, and either
the click step indices (counting) or the per-step signal increments dY
(homodyne).  Floats are written with 17 significant digits so that a
save/load round trip is bit exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FORMAT_HEADER = "# pulseprobe measurement record v1"


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass(frozen=True)
class MeasurementRecord:
    scheme: str                      # 'counting' | 'homodyne'
    dt: float
    t_final: float
    n_steps: int
    seed: int
    stream_index: int = 0
    phase: float = 0.0
    config_hash: str = ""
    click_steps: np.ndarray | None = field(default=None)   # counting: sorted step indices
    increments: np.ndarray | None = field(default=None)    # homodyne: dY per step

    def __post_init__(self):
        if self.scheme not in ("counting", "homodyne"):
            raise ConfigError(f"unknown detection scheme {self.scheme!r}")
        if self.scheme == "counting":
            steps = np.asarray(self.click_steps if self.click_steps is not None else [], dtype=np.int64)
            if steps.size and (steps.min() < 0 or steps.max() >= self.n_steps):
                raise ConfigError("click steps must lie on the grid within [0, t_final)")
            object.__setattr__(self, "click_steps", steps)
            object.__setattr__(self, "increments", None)
        else:
            inc = np.asarray(self.increments, dtype=float)
            if inc.shape != (self.n_steps,):
                raise ConfigError(f"homodyne record needs {self.n_steps} increments, got shape {inc.shape}")
            object.__setattr__(self, "increments", inc)
            object.__setattr__(self, "click_steps", None)

    @property
    def click_times(self) -> np.ndarray:
        if self.scheme != "counting":
            raise ConfigError("click_times is only defined for counting records")
        return self.click_steps * self.dt

    def clicked_mask(self) -> np.ndarray:
        """Boolean per-step click indicator (counting only)."""
        mask = np.zeros(self.n_steps, dtype=bool)
        mask[self.click_steps] = True
        return mask

    def save(self, path) -> None:
        lines = [FORMAT_HEADER]
        lines.append(f"scheme = {self.scheme}")
        lines.append(f"dt = {_fmt(self.dt)}")
        lines.append(f"t_final = {_fmt(self.t_final)}")
        lines.append(f"n_steps = {self.n_steps}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"stream_index = {self.stream_index}")
        lines.append(f"phase = {_fmt(self.phase)}")
        lines.append(f"config_hash = {self.config_hash or '-'}")
        if self.scheme == "counting":
            lines.append(f"events = {self.click_steps.size}")
            lines.extend(str(int(s)) for s in self.click_steps)
        else:
            lines.append(f"events = {self.n_steps}")
            lines.extend(_fmt(x) for x in self.increments)
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MeasurementRecord":
        with open(path, "r", encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or lines[0] != FORMAT_HEADER:
            raise ConfigError(f"{path} is not a pulseprobe record file")
        header: dict[str, str] = {}
        idx = 1
        while idx < len(lines):
            key, sep, value = lines[idx].partition("=")
            if not sep:
                break
            header[key.strip()] = value.strip()
            idx += 1
            if key.strip() == "events":
                break
        try:
            scheme = header["scheme"]
            n_events = int(header["events"])
            kwargs = dict(
                scheme=scheme,
                dt=float(header["dt"]),
                t_final=float(header["t_final"]),
                n_steps=int(header["n_steps"]),
                seed=int(header["seed"]),
                stream_index=int(header["stream_index"]),
                phase=float(header["phase"]),
                config_hash="" if header["config_hash"] == "-" else header["config_hash"],
            )
        except KeyError as exc:
            raise ConfigError(f"record file {path} is missing header field {exc}") from exc
        data = lines[idx:]
        if len(data) != n_events:
            raise ConfigError(f"record file {path} announces {n_events} events but contains {len(data)}")
        if scheme == "counting":
            kwargs["click_steps"] = np.array([int(x) for x in data], dtype=np.int64)
        else:
            kwargs["increments"] = np.array([float(x) for x in data], dtype=float)
        return cls(**kwargs)
