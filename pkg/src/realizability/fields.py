"""Sampled symmetric-matrix conductivity fields and their CSV/JSON export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _upper_labels(d: int) -> list[str]:
    return [f"sigma_{i + 1}{j + 1}" for i in range(d) for j in range(i, d)]


@dataclass
class TensorConductivityField:
    """Symmetric ``d x d`` samples at the cell midpoints of a box.

    ``sigma`` has shape ``grid + (d, d)``.
    """

    lo: np.ndarray
    hi: np.ndarray
    axes: list
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.sigma.shape[-1]

    @property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def summary(self) -> dict:
        """Worst symmetry defect, smallest eigenvalue and largest condition number."""
        S = self.sigma.reshape(-1, self.dimension, self.dimension)
        asym = float(np.max(np.abs(S - np.swapaxes(S, -1, -2)))) if len(S) else 0.0
        ev = np.linalg.eigvalsh(S)
        return {
            "max_asymmetry": asym,
            "min_eigenvalue": float(ev[:, 0].min()),
            "max_condition": float(np.max(ev[:, -1] / ev[:, 0])) if ev[:, 0].min() > 0 else float("inf"),
        }

    def header(self) -> dict:
        return {
            "box": [np.asarray(self.lo).tolist(), np.asarray(self.hi).tolist()],
            "grid": [len(a) for a in self.axes],
            "entries": _upper_labels(self.dimension),
            **self.meta,
        }

    def write(self, csv_path, json_path=None) -> None:
        d = self.dimension
        pts = self.points.reshape(-1, len(self.axes))
        S = self.sigma.reshape(-1, d, d)
        iu = np.triu_indices(d)
        with open(Path(csv_path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{i + 1}" for i in range(pts.shape[1])] + _upper_labels(d))
            for xi, si in zip(pts, S):
                wr.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in si[iu]])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.header(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, csv_path, json_path) -> "TensorConductivityField":
        head = json.loads(Path(json_path).read_text())
        shape = tuple(head["grid"])
        k = len(shape)
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        n_entries = data.shape[1] - k
        d = int(round((np.sqrt(8 * n_entries + 1) - 1) / 2))
        pts = data[:, :k].reshape(shape + (k,))
        axes = [pts[(0,) * a + (slice(None),) + (0,) * (k - a - 1)][:, a] for a in range(k)]
        S = np.zeros((len(data), d, d))
        iu = np.triu_indices(d)
        S[:, iu[0], iu[1]] = data[:, k:]
        S[:, iu[1], iu[0]] = data[:, k:]
        meta = {key: v for key, v in head.items() if key not in ("box", "grid", "entries")}
        return cls(np.array(head["box"][0]), np.array(head["box"][1]), axes, S.reshape(shape + (d, d)), meta)
