"""Named-tensor store with npz persistence and shape verification.

On disk: a flat npz archive of float32 tensors plus a `__manifest__` entry
holding the UTF-8 JSON architecture description. In memory everything is
float64 for gradient-check headroom.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .transforms import ValidationError

MANIFEST_KEY = "__manifest__"


class WeightStore:
    """Mutable mapping of tensor name -> float64 array, with a manifest."""

    def __init__(self, tensors: dict | None = None, manifest: dict | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        self.manifest = dict(manifest or {})
        for name, value in (tensors or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value) -> None:
        self._tensors[name] = np.asarray(value, dtype=float)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        return ((k, self._tensors[k]) for k in self.names())

    def copy(self) -> "WeightStore":
        return WeightStore({k: v.copy() for k, v in self._tensors.items()},
                           manifest=self.manifest)

    def verify_shapes(self, expected: dict[str, tuple]) -> None:
        missing = sorted(set(expected) - set(self._tensors))
        extra = sorted(set(self._tensors) - set(expected))
        if missing or extra:
            raise ValidationError(
                f"weight names do not match architecture (missing={missing}, extra={extra})"
            )
        for name, shape in expected.items():
            got = self._tensors[name].shape
            if tuple(got) != tuple(shape):
                raise ValidationError(
                    f"tensor {name!r} has shape {got}, architecture requires {tuple(shape)}"
                )

    def save(self, path) -> None:
        path = Path(path)
        payload = {k: v.astype(np.float32) for k, v in self._tensors.items()}
        payload[MANIFEST_KEY] = np.frombuffer(
            json.dumps(self.manifest, sort_keys=True).encode(), dtype=np.uint8
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path, expected_shapes: dict[str, tuple] | None = None) -> "WeightStore":
        path = Path(path)
        try:
            archive = np.load(path)
        except OSError as exc:
            raise OSError(f"cannot read weight file {path}: {exc}") from exc
        manifest = {}
        tensors = {}
        for name in archive.files:
            if name == MANIFEST_KEY:
                manifest = json.loads(bytes(archive[name]).decode())
            else:
                tensors[name] = archive[name].astype(float)
        store = cls(tensors, manifest=manifest)
        if expected_shapes is not None:
            store.verify_shapes(expected_shapes)
        return store


def init_store(shapes: dict[str, tuple], seed: int = 0,
               manifest: dict | None = None, scale: float = 1.0) -> WeightStore:
    """He-style random init: weights ~ N(0, 2/fan_in), biases zero.

    Names are initialized in sorted order so the result depends only on the
    seed and the shape set.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore(manifest=manifest)
    for name in sorted(shapes):
        shape = tuple(shapes[name])
        if len(shape) == 1:  # biases
            store[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            store[name] = rng.normal(scale=scale * np.sqrt(2.0 / max(fan_in, 1)),
                                     size=shape)
    return store
