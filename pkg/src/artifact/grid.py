"""Rectangular lattices with a Dirichlet mask and the fields sampled on them."""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .fileio import atomic_write_text

__all__ = ["GridDomain", "GridFunction"]


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Uniform lattice ``origin + h * index`` with a boolean mask for Omega.

    Nodes outside the mask carry the Dirichlet value 0. The outermost layer
    of nodes must lie outside the mask so that every forward difference of a
    masked node reads an existing node.
    """

    shape: tuple
    h: float
    mask: np.ndarray
    origin: tuple = None
    require_connected: bool = True

    def __post_init__(self):
        shape = tuple(int(k) for k in self.shape)
        if not 1 <= len(shape) <= 3:
            raise ValueError("grids must have dimension 1, 2 or 3")
        if not self.h > 0:
            raise ValueError("h must be positive")
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"mask shape {mask.shape} does not match {shape}")
        mask.setflags(write=False)
        origin = tuple(float(o) for o in (self.origin if self.origin is not None else (0.0,) * len(shape)))
        if len(origin) != len(shape):
            raise ValueError("origin has the wrong dimension")
        if not mask.any():
            raise ValueError("mask is empty")
        if _touches_boundary(mask):
            raise ValueError("mask must be False on the outermost node layer")
        if self.require_connected and ndimage.label(mask)[1] != 1:
            raise ValueError("mask is not connected")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", origin)

    # -- constructors ------------------------------------------------------

    @classmethod
    def box(cls, n: int, N: int, lo: float = 0.0, hi: float = 1.0, pred=None, **kw) -> "GridDomain":
        """Nodes ``lo + i h`` for i = 0..N on every axis, h = (hi - lo) / N.

        The mask is the set of interior nodes, intersected with ``pred(points)``
        when a predicate is given.
        """
        h = (hi - lo) / N
        shape = (N + 1,) * n
        mask = np.zeros(shape, dtype=bool)
        mask[(slice(1, -1),) * n] = True
        dom = cls(shape, h, mask, (lo,) * n, require_connected=False)
        if pred is not None:
            mask &= np.asarray(pred(dom.points()), dtype=bool)
        return cls(shape, h, mask, (lo,) * n, **kw)

    @classmethod
    def cells(cls, n: int, N: int, lo: float = 0.0, hi: float = 1.0, **kw) -> "GridDomain":
        """Cell centres of an N^n subdivision of [lo, hi]^n, padded by one dead layer."""
        h = (hi - lo) / N
        shape = (N + 2,) * n
        mask = np.zeros(shape, dtype=bool)
        mask[(slice(1, -1),) * n] = True
        return cls(shape, h, mask, (lo - 0.5 * h,) * n, **kw)

    def with_mask(self, mask, **kw) -> "GridDomain":
        return GridDomain(self.shape, self.h, mask, self.origin, **kw)

    # -- geometry ------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def axes(self):
        return [o + self.h * np.arange(k) for o, k in zip(self.origin, self.shape)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def radius(self, center=None) -> np.ndarray:
        c = np.zeros(self.n) if center is None else np.asarray(center, dtype=float)
        return np.linalg.norm(self.points() - c, axis=-1)

    def mask_hash(self) -> str:
        return hashlib.sha256(repr(self.shape).encode() + np.packbits(self.mask).tobytes()).hexdigest()

    def header(self) -> dict:
        return {
            "dims": list(self.shape),
            "h": self.h,
            "origin": list(self.origin),
            "mask_sha256": self.mask_hash(),
            "mask_packbits": base64.b64encode(np.packbits(self.mask).tobytes()).decode(),
        }

    @classmethod
    def from_header(cls, hdr: dict) -> "GridDomain":
        shape = tuple(hdr["dims"])
        bits = np.frombuffer(base64.b64decode(hdr["mask_packbits"]), dtype=np.uint8)
        mask = np.unpackbits(bits)[: int(np.prod(shape))].reshape(shape).astype(bool)
        dom = cls(shape, hdr["h"], mask, tuple(hdr["origin"]), require_connected=False)
        if dom.mask_hash() != hdr["mask_sha256"]:
            raise ValueError("mask hash mismatch")
        return dom


def _touches_boundary(mask) -> bool:
    for ax in range(mask.ndim):
        first = np.take(mask, 0, axis=ax)
        last = np.take(mask, -1, axis=ax)
        if first.any() or last.any():
            return True
    return False


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a scalar field at every node of ``domain``."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.domain.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, domain: GridDomain, fn, masked: bool = True) -> "GridFunction":
        vals = np.asarray(fn(domain.points()), dtype=float)
        vals = np.broadcast_to(vals, domain.shape)
        return cls(domain, np.where(domain.mask, vals, 0.0) if masked else vals)

    @classmethod
    def constant(cls, domain: GridDomain, c: float, masked: bool = True) -> "GridFunction":
        return cls.from_callable(domain, lambda x: np.full(x.shape[:-1], float(c)), masked)

    @classmethod
    def zeros(cls, domain: GridDomain) -> "GridFunction":
        return cls(domain, np.zeros(domain.shape))

    def masked(self) -> np.ndarray:
        """Values with the Dirichlet zero imposed off the mask."""
        return np.where(self.domain.mask, self.values, 0.0)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            return GridFunction(self.domain, self.values * other.values)
        return GridFunction(self.domain, self.values * other)

    __rmul__ = __mul__

    # -- serialization -------------------------------------------------------

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "k", "value"])
        idx = np.indices(self.domain.shape).reshape(self.domain.n, -1).T
        for row, v in zip(idx, self.values.ravel()):
            trip = list(row) + [0] * (3 - len(row))
            w.writerow([*trip, repr(float(v))])
        return buf.getvalue()

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` (index triplet, value) and ``<stem>.json`` (grid header)."""
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        hdr_path = stem.with_suffix(".json")
        atomic_write_text(csv_path, self.to_csv_text())
        atomic_write_text(hdr_path, json.dumps(self.domain.header(), indent=1, sort_keys=True) + "\n")
        return csv_path, hdr_path

    @classmethod
    def load(cls, stem) -> "GridFunction":
        stem = Path(stem)
        with open(stem.with_suffix(".json")) as fh:
            dom = GridDomain.from_header(json.load(fh))
        vals = np.empty(dom.shape)
        with open(stem.with_suffix(".csv"), newline="") as fh:
            rows = csv.reader(fh)
            next(rows)
            for r in rows:
                vals[tuple(int(t) for t in r[: dom.n])] = float(r[3])
        return cls(dom, vals)
