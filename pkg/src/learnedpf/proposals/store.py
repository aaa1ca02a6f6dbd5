"""Flat name -> array registry of learnable tensors, with checkpoint I/O."""

from __future__ import annotations

import hashlib
from collections.abc import MutableMapping

import numpy as np

from ..errors import StoreError

FORMAT_KEY = "__learnedpf_format__"
FORMAT_VERSION = 1


class ParamStore(MutableMapping):
    """Learnable tensors addressed by stable names.

    Time-unrolled families embed the step in the name (``mean.t3.l0.W``);
    shared tensors carry no time index (``cov.C``).
    """

    def __init__(self, arrays=None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, value in (arrays or {}).items():
            self[name] = value

    def __getitem__(self, name):
        try:
            return self._arrays[name]
        except KeyError:
            raise StoreError(f"no parameter named {name!r}") from None

    def __setitem__(self, name, value):
        if name == FORMAT_KEY:
            raise StoreError(f"{FORMAT_KEY} is reserved")
        value = np.asarray(value, dtype=float)
        old = self._arrays.get(name)
        if old is not None and old.shape != value.shape:
            raise StoreError(f"shape change for {name!r}: {old.shape} -> {value.shape}")
        self._arrays[name] = value

    def __delitem__(self, name):
        del self._arrays[name]

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __repr__(self):
        return f"ParamStore({len(self)} tensors, {self.size} values)"

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self._arrays.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._arrays):
            a = np.ascontiguousarray(self._arrays[name])
            h.update(name.encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        """Write an ``.npz`` container (row-major float64 arrays plus a format tag)."""
        payload = {k: np.ascontiguousarray(v) for k, v in self._arrays.items()}
        payload[FORMAT_KEY] = np.array(FORMAT_VERSION)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with np.load(path, allow_pickle=False) as data:
            if FORMAT_KEY not in data.files:
                raise StoreError(f"{path}: not a parameter checkpoint")
            version = int(data[FORMAT_KEY])
            if version != FORMAT_VERSION:
                raise StoreError(f"{path}: unsupported checkpoint version {version}")
            return cls({k: data[k] for k in data.files if k != FORMAT_KEY})
