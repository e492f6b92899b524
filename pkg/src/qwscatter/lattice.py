"""C^2-valued fields on finite integer windows and weighted sequence norms."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, WindowError

SUPPORTED_P = (1, 2, np.inf)
SUPPORTED_SIGMA = (0, 1, 2)


class Outside(enum.Enum):
    ZERO = "zero"
    FREE_EXTENSION = "free-extension"


@dataclass(frozen=True)
class Spinor:
    up: complex
    down: complex

    def norm2(self) -> float:
        return abs(self.up) ** 2 + abs(self.down) ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.up, self.down], dtype=complex)


class SpinorField:
    """A map ``[x_min, x_max] -> C^2`` stored as an ``(n, 2)`` complex array.

    Reads outside the window return zero. With ``Outside.FREE_EXTENSION``
    the evolution routines grow the window instead of raising when the
    light cone reaches its edge.
    """

    __slots__ = ("_x_min", "_values", "_outside")

    def __init__(self, x_min, values, outside=Outside.ZERO):
        values = np.array(values, dtype=complex)
        if values.ndim != 2 or values.shape[1] != 2 or values.shape[0] == 0:
            raise WindowError(f"values must have shape (n, 2) with n >= 1, got {values.shape}")
        values.setflags(write=False)
        self._x_min = int(x_min)
        self._values = values
        self._outside = Outside(outside)

    @classmethod
    def zeros(cls, window, outside=Outside.ZERO):
        lo, hi = window
        return cls(lo, np.zeros((hi - lo + 1, 2), dtype=complex), outside)

    @classmethod
    def delta(cls, window, x, spinor=(1.0, 0.0), outside=Outside.ZERO):
        lo, hi = window
        if not lo <= x <= hi:
            raise WindowError(f"site {x} outside window {window}")
        vals = np.zeros((hi - lo + 1, 2), dtype=complex)
        vals[x - lo] = spinor
        return cls(lo, vals, outside)

    @property
    def window(self) -> tuple[int, int]:
        return self._x_min, self._x_min + len(self._values) - 1

    @property
    def x_min(self) -> int:
        return self._x_min

    @property
    def x_max(self) -> int:
        return self._x_min + len(self._values) - 1

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def outside(self) -> Outside:
        return self._outside

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def __len__(self):
        return len(self._values)

    def __getitem__(self, x) -> np.ndarray:
        if self.x_min <= x <= self.x_max:
            return self._values[x - self.x_min].copy()
        return np.zeros(2, dtype=complex)

    def spinor(self, x) -> Spinor:
        up, down = self[x]
        return Spinor(complex(up), complex(down))

    def support(self):
        """Smallest interval holding every nonzero entry, or None."""
        nz = np.flatnonzero(np.any(self._values != 0, axis=1))
        if nz.size == 0:
            return None
        return self.x_min + int(nz[0]), self.x_min + int(nz[-1])

    def with_values(self, values) -> "SpinorField":
        return SpinorField(self.x_min, values, self._outside)

    def restrict(self, window) -> "SpinorField":
        """Read this field on another window (zero outside the old one)."""
        lo, hi = window
        out = np.zeros((hi - lo + 1, 2), dtype=complex)
        a, b = max(lo, self.x_min), min(hi, self.x_max)
        if a <= b:
            out[a - lo : b - lo + 1] = self._values[a - self.x_min : b - self.x_min + 1]
        return SpinorField(lo, out, self._outside)

    def _check_same(self, other):
        if not isinstance(other, SpinorField):
            return NotImplemented
        if self.window != other.window:
            raise WindowError(f"window mismatch: {self.window} vs {other.window}")
        return None

    def __add__(self, other):
        bad = self._check_same(other)
        if bad is NotImplemented:
            return bad
        return self.with_values(self._values + other._values)

    def __sub__(self, other):
        bad = self._check_same(other)
        if bad is NotImplemented:
            return bad
        return self.with_values(self._values - other._values)

    def __mul__(self, c):
        return self.with_values(self._values * c)

    __rmul__ = __mul__

    def vdot(self, other) -> complex:
        """<self, other>, antilinear in self."""
        self._check_same(other)
        return complex(np.vdot(self._values, other._values))

    def __eq__(self, other):
        if not isinstance(other, SpinorField):
            return NotImplemented
        return self.window == other.window and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash((self.window, self._values.tobytes()))

    def __repr__(self):
        return f"SpinorField(window={self.window}, outside={self._outside.value})"

    # JSON array of {x, up_re, up_im, down_re, down_im}
    def to_records(self):
        return [
            {
                "x": int(x),
                "up_re": float(v[0].real),
                "up_im": float(v[0].imag),
                "down_re": float(v[1].real),
                "down_im": float(v[1].imag),
            }
            for x, v in zip(self.sites, self._values)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records())

    @classmethod
    def from_records(cls, records, window=None):
        if not records and window is None:
            raise WindowError("empty record list needs an explicit window")
        xs = [int(r["x"]) for r in records]
        if window is None:
            window = (min(xs), max(xs))
        lo, hi = window
        vals = np.zeros((hi - lo + 1, 2), dtype=complex)
        for r in records:
            x = int(r["x"])
            if not lo <= x <= hi:
                raise WindowError(f"record at x={x} outside window {window}")
            vals[x - lo] = (
                complex(r["up_re"], r.get("up_im", 0.0)),
                complex(r["down_re"], r.get("down_im", 0.0)),
            )
        return cls(lo, vals)

    @classmethod
    def from_json(cls, text, window=None):
        return cls.from_records(json.loads(text), window)


@dataclass(frozen=True)
class NormSpec:
    p: float = 2
    sigma: int = 0

    def __post_init__(self):
        if self.p not in SUPPORTED_P or self.sigma not in SUPPORTED_SIGMA:
            raise ConfigurationError(
                f"unsupported norm (p={self.p}, sigma={self.sigma}); p in {{1, 2, inf}}, sigma in {{0, 1, 2}}"
            )


def bracket(x):
    """Japanese bracket <x> = sqrt(1 + x^2)."""
    x = np.asarray(x, dtype=float)
    out = np.sqrt(1.0 + x * x)
    return float(out) if out.ndim == 0 else out


def weighted_norm(u: SpinorField, spec: NormSpec = NormSpec()) -> float:
    if not isinstance(spec, NormSpec):
        spec = NormSpec(*spec)
    pointwise = np.sqrt(np.sum(np.abs(u.values) ** 2, axis=1))
    w = bracket(u.sites) ** spec.sigma
    if spec.p == np.inf:
        return float(np.max(w * pointwise))
    if spec.p == 1:
        return float(np.sum(w * pointwise))
    return float(np.sqrt(np.sum((w * pointwise) ** 2)))


def sup_norm(u: SpinorField) -> float:
    return weighted_norm(u, NormSpec(np.inf, 0))


def l1_norm(u: SpinorField) -> float:
    return weighted_norm(u, NormSpec(1, 0))


def l2_norm(u: SpinorField) -> float:
    return weighted_norm(u, NormSpec(2, 0))
