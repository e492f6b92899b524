"""Coin parameterization, validation, gauge reduction and profile ingestion.

A coin is ``C = e^{i theta} [[beta, conj(alpha)], [-alpha, conj(beta)]]``
with ``|alpha|^2 + |beta|^2 = 1``. A :class:`CoinField` is a finitely
supported perturbation of the constant coin ``C_{alpha0, rho0, 0}``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import IngestionError, ValidationError
from .lattice import SpinorField, bracket

NORM_TOL = 1e-12
# tolerance for beta moduli typed into profile documents; rescaled to exact
BETA_INGEST_TOL = 1e-6
TAIL_MASS_TOL = 1e-10


def _wrap_angle(theta):
    """Representative of theta in (-pi, pi]."""
    t = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    t = np.where(t == -np.pi, np.pi, t)
    return float(t) if t.ndim == 0 else t


@dataclass(frozen=True)
class CoinPoint:
    alpha: complex
    theta: float = 0.0
    beta: complex | None = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        alpha = complex(self.alpha)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", float(self.theta))
        if self.beta is None:
            r2 = 1.0 - abs(alpha) ** 2
            object.__setattr__(self, "beta", complex(np.sqrt(max(r2, 0.0))))
        else:
            object.__setattr__(self, "beta", complex(self.beta))
        if not self.validate:
            return
        if abs(alpha) >= 1.0:
            raise ValidationError(f"|alpha| = {abs(alpha)!r} >= 1", assumption="|alpha(x)| < 1")
        defect = abs(abs(alpha) ** 2 + abs(self.beta) ** 2 - 1.0)
        if defect > NORM_TOL:
            raise ValidationError(
                f"|alpha|^2 + |beta|^2 - 1 = {defect:.3e} exceeds {NORM_TOL}",
                assumption="coin normalization",
            )

    @property
    def rho(self) -> float:
        return float(np.sqrt(max(1.0 - abs(self.alpha) ** 2, 0.0)))


def coin_matrix(p: CoinPoint) -> np.ndarray:
    a, b = p.alpha, p.beta
    return np.exp(1j * p.theta) * np.array([[b, np.conj(a)], [-a, np.conj(b)]], dtype=complex)


def coin_matrices(alpha, beta, theta) -> np.ndarray:
    """Vectorized coin matrices, shape ``(n, 2, 2)``."""
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    ph = np.exp(1j * np.asarray(theta, dtype=float))
    out = np.empty(alpha.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = ph * beta
    out[..., 0, 1] = ph * np.conj(alpha)
    out[..., 1, 0] = -ph * alpha
    out[..., 1, 1] = ph * np.conj(beta)
    return out


class CoinField:
    """Position-dependent coin equal to the free coin outside a finite support."""

    def __init__(self, alpha0, entries=None, *, validate=True, metadata=None):
        alpha0 = complex(alpha0)
        if validate and not 0.0 < abs(alpha0) < 1.0:
            raise ValidationError(
                f"far-field |alpha0| = {abs(alpha0)!r} must lie in (0, 1)",
                assumption="0 < |alpha0| < 1",
            )
        pts = {}
        for x, p in (entries or {}).items():
            if not isinstance(p, CoinPoint):
                p = CoinPoint(*p, validate=validate) if isinstance(p, tuple) else CoinPoint(p, validate=validate)
            pts[int(x)] = p
        self.alpha0 = alpha0
        self.entries = dict(sorted(pts.items()))
        self.validated = validate
        self.metadata = dict(metadata or {})

    @property
    def rho0(self) -> float:
        return float(np.sqrt(1.0 - abs(self.alpha0) ** 2))

    @property
    def delta0(self) -> float:
        """Width of the analyticity strip: rho0 cosh(delta0) = 1."""
        return float(np.arccosh(1.0 / self.rho0))

    @property
    def support(self):
        if not self.entries:
            return None
        xs = list(self.entries)
        return xs[0], xs[-1]

    def is_free(self) -> bool:
        return all(
            p.alpha == self.alpha0 and _wrap_angle(p.theta) == 0.0 and p.beta == self.rho0
            for p in self.entries.values()
        )

    def _lookup(self, xs, attr, default):
        xs = np.atleast_1d(np.asarray(xs, dtype=int))
        out = np.full(xs.shape, default, dtype=complex if attr != "theta" else float)
        for i, x in enumerate(xs):
            p = self.entries.get(int(x))
            if p is not None:
                out[i] = getattr(p, attr)
        return out

    def alpha(self, xs):
        return self._lookup(xs, "alpha", self.alpha0)

    def beta(self, xs):
        return self._lookup(xs, "beta", self.rho0)

    def theta(self, xs):
        return self._lookup(xs, "theta", 0.0)

    def rho(self, xs):
        return np.sqrt(np.maximum(1.0 - np.abs(self.alpha(xs)) ** 2, 0.0))

    def matrices(self, xs) -> np.ndarray:
        return coin_matrices(self.alpha(xs), self.beta(xs), self.theta(xs))

    def has_real_beta(self, tol=0.0) -> bool:
        return all(abs(p.beta.imag) <= tol and p.beta.real >= 0 for p in self.entries.values())

    def reflected(self) -> "CoinField":
        """Coin of the mirrored transfer problem.

        If phi solves phi(x+1) = T_lam(x) phi(x) for this coin then
        sigma_1 phi(-x) solves the same equation for the returned coin,
        whose entries are alpha'(x) = -conj(alpha(-x-1)), theta'(x) = theta(-x-1).
        """
        ents = {}
        for x, p in self.entries.items():
            a = -np.conj(p.alpha)
            ents[-x - 1] = CoinPoint(a, p.theta, np.sqrt(max(1.0 - abs(a) ** 2, 0.0)), validate=self.validated)
        return CoinField(-np.conj(self.alpha0), ents, validate=self.validated)

    def to_dict(self) -> dict:
        return {
            "alpha0": {"re": self.alpha0.real, "im": self.alpha0.imag},
            "entries": [
                {
                    "x": x,
                    "alpha": {"re": p.alpha.real, "im": p.alpha.imag},
                    "theta": p.theta,
                    "beta": {"re": p.beta.real, "im": p.beta.imag},
                }
                for x, p in self.entries.items()
            ],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __repr__(self):
        return f"CoinField(alpha0={self.alpha0!r}, support={self.support})"


def perturbation_norm(field: CoinField, sigma: int = 0) -> float:
    """Weighted l^1 size of the perturbation: sum <x>^sigma (|alpha - alpha0| + |theta|)."""
    total = 0.0
    for x, p in field.entries.items():
        total += bracket(x) ** sigma * (abs(p.alpha - field.alpha0) + abs(_wrap_angle(p.theta)))
    return float(total)


class GaugePhase:
    """Diagonal gauge G with g_up(x) = -B(x), g_down(x) = -B(x+1)."""

    def __init__(self, b: dict):
        self.b = {int(x): float(v) for x, v in sorted(b.items())}

    def B(self, xs):
        xs = np.atleast_1d(np.asarray(xs, dtype=int))
        out = np.zeros(xs.shape)
        for y, by in self.b.items():
            # B(x) = sum_{0<=y<x} b(y) for x >= 1, -sum_{x<=y<0} b(y) for x <= -1
            out += np.where((y >= 0) & (xs > y), by, 0.0)
            out -= np.where((y < 0) & (xs <= y), by, 0.0)
        return out

    def is_identity(self) -> bool:
        return all(v == 0.0 for v in self.b.values())

    def phases(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=int)
        return np.stack([np.exp(-1j * self.B(xs)), np.exp(-1j * self.B(xs + 1))], axis=-1)

    def apply(self, u: SpinorField) -> SpinorField:
        return u.with_values(u.values * self.phases(u.sites))

    def apply_inverse(self, u: SpinorField) -> SpinorField:
        return u.with_values(u.values * np.conj(self.phases(u.sites)))


def gauge_reduce(field: CoinField):
    """Return (coin with beta = rho real, gauge G) such that U = G^{-1} U_reduced G."""
    b = {}
    ents = {}
    for x, p in field.entries.items():
        ang = float(np.mod(np.angle(p.beta), 2 * np.pi)) if p.beta != 0 else 0.0
        if ang >= 2 * np.pi:
            ang = 0.0
        b[x] = ang
        ents[x] = CoinPoint(p.alpha, p.theta, abs(p.beta), validate=field.validated)
    reduced = CoinField(field.alpha0, ents, validate=field.validated, metadata=field.metadata)
    return reduced, GaugePhase(b)


# ---------------------------------------------------------------------------
# profile ingestion

_COMPLEX = {
    "type": "object",
    "properties": {"re": {"type": "number"}, "im": {"type": "number"}},
    "required": ["re"],
}

PROFILE_SCHEMA = {
    "type": "object",
    "properties": {
        "alpha0": _COMPLEX,
        "preset": {"enum": ["free", "single-defect", "barrier", "random-decay", "power-tail"]},
        "params": {"type": "object"},
        "entries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "x": {"type": "integer"},
                    "alpha": _COMPLEX,
                    "theta": {"type": "number"},
                    "beta": _COMPLEX,
                },
                "required": ["x", "alpha"],
            },
        },
    },
    "required": ["alpha0"],
}


def _cplx(d):
    return complex(d["re"], d.get("im", 0.0))


def _expand_preset(name, alpha0, params, validate_site):
    ents = {}
    meta = {"preset": name}
    if name == "free":
        return ents, meta
    if name == "single-defect":
        s = float(params.get("strength", 0.3))
        x0 = int(params.get("site", 0))
        phase = float(params.get("phase", 0.0))
        theta = float(params.get("theta", 0.0))
        ents[x0] = (alpha0 + s * np.exp(1j * phase), theta)
    elif name == "barrier":
        s = float(params.get("strength", 0.2))
        left = int(params.get("left", -2))
        right = int(params.get("right", 2))
        for x in range(left, right + 1):
            ents[x] = (alpha0 + s, float(params.get("theta", 0.0)))
    elif name == "random-decay":
        amp = float(params.get("amplitude", 0.1))
        rate = float(params.get("decay", 0.5))
        sigma = int(params.get("sigma", 2))
        rng = np.random.Generator(np.random.PCG64(int(params.get("seed", 0))))
        # cut where the discarded weighted tail sum_{|x|>R} <x>^sigma 2 amp e^{-rate|x|} < tol
        radius = 0
        while True:
            xs = np.arange(radius + 1, radius + 4000)
            tail = 2 * np.sum(bracket(xs) ** sigma * 2 * amp * np.exp(-rate * xs))
            if tail < TAIL_MASS_TOL:
                break
            radius += 1
        meta.update(truncation_radius=radius, discarded_tail_mass=float(tail), sigma=sigma)
        for x in range(-radius, radius + 1):
            env = amp * np.exp(-rate * abs(x))
            da = env * np.exp(2j * np.pi * rng.random()) * rng.random()
            ents[x] = (alpha0 + da, env * (2 * rng.random() - 1))
    elif name == "power-tail":
        # alpha(x) - alpha0 = amp <x>^{-power}; the infinite profile has a finite
        # sigma-norm iff power - sigma > 1, the stored one is cut at ``radius``
        amp = float(params.get("amplitude", 0.1))
        power = float(params.get("power", 2.5))
        radius = int(params.get("radius", 200))
        meta.update(tail_power=power, truncation_radius=radius)
        for x in range(-radius, radius + 1):
            ents[x] = (alpha0 + amp * bracket(x) ** (-power), 0.0)
    for x, (a, _) in ents.items():
        validate_site(x, a)
    return ents, meta


def load_coin_profile(document) -> CoinField:
    """Build a validated CoinField from profile JSON (text, bytes or parsed dict)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"profile is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(document, PROFILE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise IngestionError(f"profile schema violation at {list(exc.path)}: {exc.message}") from exc

    alpha0 = _cplx(document["alpha0"])
    if not 0.0 < abs(alpha0) < 1.0:
        raise IngestionError(f"|alpha0| = {abs(alpha0)!r} must lie in (0, 1)", site=None, assumption="0 < |alpha0| < 1")

    def check_site(x, a):
        if abs(a) >= 1.0:
            raise IngestionError(f"|alpha({x})| = {abs(a)!r} >= 1", site=x, assumption="|alpha(x)| < 1")

    raw, meta = _expand_preset(document.get("preset", "free"), alpha0, document.get("params", {}), check_site)
    points = {x: CoinPoint(a, th) for x, (a, th) in raw.items()}
    for e in document.get("entries", []):
        x = int(e["x"])
        a = _cplx(e["alpha"])
        check_site(x, a)
        beta = None
        if "beta" in e:
            beta = _cplx(e["beta"])
            target = np.sqrt(1.0 - abs(a) ** 2)
            if abs(abs(beta) - target) > BETA_INGEST_TOL:
                raise IngestionError(f"|alpha|^2 + |beta|^2 != 1 at x={x}", site=x, assumption="coin normalization")
            beta = target * np.exp(1j * np.angle(beta)) if beta != 0 else target
        try:
            points[x] = CoinPoint(a, float(e.get("theta", 0.0)), beta)
        except ValidationError as exc:
            raise IngestionError(str(exc), site=x, assumption=exc.assumption) from exc
    return CoinField(alpha0, points, metadata=meta)


def free_field(alpha0=1 / np.sqrt(2)) -> CoinField:
    return CoinField(alpha0)


def single_defect(alpha0=1 / np.sqrt(2), strength=0.3, site=0, theta=0.0) -> CoinField:
    return CoinField(alpha0, {site: CoinPoint(alpha0 + strength, theta)})
