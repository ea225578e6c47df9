"""Uniform-grid observable records with unit metadata."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import units
from .errors import ConfigError

CSV_FORMAT = "%.12g"


@dataclass
class TimeSeries:
    """Named observable channels sampled on a uniform time grid.

    Attributes
    ----------
    times : numpy.ndarray
        Sample times in atomic units, strictly increasing and uniform.
    channels : dict of str to numpy.ndarray
        Real-valued records, one per observable, each matching times in
        length.  Insertion order is the on-disk column order.
    meta : dict of str to str
        Free-form metadata (units, provenance) carried into the CSV
        header as comment lines.
    """

    times: np.ndarray
    channels: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise ConfigError("times must be a non-empty 1-d array")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ConfigError("times must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1e-300):
                raise ConfigError("times must be uniformly spaced")
        object.__setattr__(self, "times", t)
        cleaned = {}
        for name, values in self.channels.items():
            v = np.asarray(values, dtype=np.float64)
            if v.shape != t.shape:
                raise ConfigError(
                    f"channel {name!r} has {v.shape[0] if v.ndim == 1 else v.shape} "
                    f"samples, expected {t.size}"
                )
            cleaned[str(name)] = v
        object.__setattr__(self, "channels", cleaned)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def times_fs(self) -> np.ndarray:
        return units.au_to_fs(self.times)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def to_csv(self, path) -> None:
        """Write t_fs plus all channels, 12 significant digits."""
        names = list(self.channels)
        with open(path, "w") as fh:
            for key, value in self.meta.items():
                fh.write(f"# {key}: {value}\n")
            fh.write(",".join(["t_fs"] + names) + "\n")
            cols = [self.times_fs()] + [self.channels[n] for n in names]
            for row in zip(*cols):
                fh.write(",".join(CSV_FORMAT % v for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        meta: dict[str, str] = {}
        header: list[str] | None = None
        rows: list[list[float]] = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    key, _, value = body.partition(":")
                    meta[key.strip()] = value.strip()
                    continue
                if header is None:
                    header = [c.strip() for c in line.split(",")]
                    if not header or header[0] != "t_fs":
                        raise ConfigError(f"expected a t_fs leading column in {path}")
                    continue
                rows.append([float(c) for c in line.split(",")])
        if header is None or not rows:
            raise ConfigError(f"no data rows in {path}")
        data = np.array(rows, dtype=np.float64)
        if data.shape[1] != len(header):
            raise ConfigError(f"ragged rows in {path}")
        channels = {name: data[:, i + 1] for i, name in enumerate(header[1:])}
        return cls(times=units.fs_to_au(data[:, 0]), channels=channels, meta=meta)
