"""Analytic distribution families and the textual spec grammar.

Grammar (whitespace-insensitive)::

    exp(rate) | normal(mu, sd) | uniform(a, b) | point(x)
    shift(x, inner) | neg(inner) | mix(w1: d1, w2: d2, ...)

Every family splits into an atomic part (``atoms()``) and a continuous part
with sub-probability CDF ``cont_cdf`` / survival ``cont_sf``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DivergentMoment, ValidationError


class Family:
    """Base class of analytic increment laws."""

    def atoms(self) -> list[tuple[float, float]]:
        return []

    @property
    def cont_mass(self) -> float:
        return 1.0 - sum(w for _, w in self.atoms())

    def cont_cdf(self, x):
        raise NotImplementedError

    def cont_sf(self, x):
        return self.cont_mass - self.cont_cdf(x)

    def cont_support(self, eps: float) -> tuple[float, float]:
        """Interval carrying all but ``eps`` of the continuous mass."""
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def mgf(self, lam: float) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def tilt(self, lam: float) -> "Family | None":
        """Law ``e^{lam x} F(dx) / mgf(lam)`` if it stays in the catalogue, else None."""
        return None

    def expect(self, fn) -> float:
        """``E fn(X)`` by quadrature over the continuous part plus the atoms."""
        total = sum(w * float(fn(np.array([x]))[0]) for x, w in self.atoms())
        if self.cont_mass > 0:
            lo, hi = self.cont_support(1e-13)
            edges = np.linspace(lo, hi, 20001)
            masses = np.diff(np.asarray(self.cont_cdf(edges), dtype=float))
            mids = 0.5 * (edges[1:] + edges[:-1])
            total += float(np.sum(masses * fn(mids)))
        return total


@dataclass(frozen=True)
class Point(Family):
    x: float

    def atoms(self):
        return [(float(self.x), 1.0)]

    def cont_cdf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def cont_support(self, eps):
        return (self.x, self.x)

    def mean(self):
        return float(self.x)

    def mgf(self, lam):
        return math.exp(lam * self.x)

    def sample(self, rng, size):
        return np.full(size, float(self.x))

    def tilt(self, lam):
        return self

    def __str__(self):
        return f"point({self.x:g})"


@dataclass(frozen=True)
class Exponential(Family):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValidationError(f"exp rate must be positive, got {self.rate}")

    def cont_cdf(self, x):
        return -np.expm1(-self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))

    def cont_sf(self, x):
        return np.exp(-self.rate * np.maximum(np.asarray(x, dtype=float), 0.0))

    def cont_support(self, eps):
        return (0.0, -math.log(eps) / self.rate)

    def mean(self):
        return 1.0 / self.rate

    def mgf(self, lam):
        if lam >= self.rate:
            raise DivergentMoment(f"mgf of exp({self.rate:g}) diverges at lambda={lam:g}")
        return self.rate / (self.rate - lam)

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    def tilt(self, lam):
        self.mgf(lam)
        return Exponential(self.rate - lam)

    def __str__(self):
        return f"exp({self.rate:g})"


@dataclass(frozen=True)
class Normal(Family):
    mu: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValidationError(f"normal sd must be positive, got {self.sd}")

    def cont_cdf(self, x):
        return stats.norm.cdf(x, self.mu, self.sd)

    def cont_sf(self, x):
        return stats.norm.sf(x, self.mu, self.sd)

    def cont_support(self, eps):
        z = -stats.norm.ppf(eps / 2)
        return (self.mu - z * self.sd, self.mu + z * self.sd)

    def mean(self):
        return float(self.mu)

    def mgf(self, lam):
        return math.exp(lam * self.mu + 0.5 * (lam * self.sd) ** 2)

    def sample(self, rng, size):
        return rng.normal(self.mu, self.sd, size)

    def tilt(self, lam):
        return Normal(self.mu + lam * self.sd**2, self.sd)

    def __str__(self):
        return f"normal({self.mu:g},{self.sd:g})"


@dataclass(frozen=True)
class Uniform(Family):
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValidationError(f"uniform needs a < b, got ({self.a}, {self.b})")

    def cont_cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def cont_support(self, eps):
        return (self.a, self.b)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def mgf(self, lam):
        if lam == 0:
            return 1.0
        return (math.exp(lam * self.b) - math.exp(lam * self.a)) / (lam * (self.b - self.a))

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, size)

    def __str__(self):
        return f"uniform({self.a:g},{self.b:g})"


@dataclass(frozen=True)
class Shift(Family):
    x: float
    inner: Family

    def atoms(self):
        return [(a + self.x, w) for a, w in self.inner.atoms()]

    def cont_cdf(self, x):
        return self.inner.cont_cdf(np.asarray(x, dtype=float) - self.x)

    def cont_sf(self, x):
        return self.inner.cont_sf(np.asarray(x, dtype=float) - self.x)

    def cont_support(self, eps):
        lo, hi = self.inner.cont_support(eps)
        return (lo + self.x, hi + self.x)

    def mean(self):
        return self.inner.mean() + self.x

    def mgf(self, lam):
        return math.exp(lam * self.x) * self.inner.mgf(lam)

    def sample(self, rng, size):
        return self.inner.sample(rng, size) + self.x

    def tilt(self, lam):
        t = self.inner.tilt(lam)
        return None if t is None else Shift(self.x, t)

    def __str__(self):
        return f"shift({self.x:g},{self.inner})"


@dataclass(frozen=True)
class Neg(Family):
    """Law of ``-Y`` for ``Y ~ inner``."""

    inner: Family

    def atoms(self):
        return [(-a, w) for a, w in self.inner.atoms()]

    def cont_cdf(self, x):
        return self.inner.cont_sf(-np.asarray(x, dtype=float))

    def cont_sf(self, x):
        return self.inner.cont_cdf(-np.asarray(x, dtype=float))

    def cont_support(self, eps):
        lo, hi = self.inner.cont_support(eps)
        return (-hi, -lo)

    def mean(self):
        return -self.inner.mean()

    def mgf(self, lam):
        return self.inner.mgf(-lam)

    def sample(self, rng, size):
        return -self.inner.sample(rng, size)

    def tilt(self, lam):
        t = self.inner.tilt(-lam)
        return None if t is None else Neg(t)

    def __str__(self):
        return f"neg({self.inner})"


@dataclass(frozen=True)
class Mixture(Family):
    weights: tuple[float, ...]
    components: tuple[Family, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or len(w) == 0:
            raise ValidationError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"mixture weights must be >= 0 and sum to 1, got {list(w)}")

    def atoms(self):
        out: dict[float, float] = {}
        for w, c in zip(self.weights, self.components):
            for x, a in c.atoms():
                out[x] = out.get(x, 0.0) + w * a
        return sorted(out.items())

    def cont_cdf(self, x):
        return sum(w * c.cont_cdf(x) for w, c in zip(self.weights, self.components))

    def cont_sf(self, x):
        return sum(w * c.cont_sf(x) for w, c in zip(self.weights, self.components))

    def cont_support(self, eps):
        spans = [c.cont_support(eps) for c in self.components if c.cont_mass > 0]
        if not spans:
            return (0.0, 0.0)
        return (min(s[0] for s in spans), max(s[1] for s in spans))

    def mean(self):
        return sum(w * c.mean() for w, c in zip(self.weights, self.components))

    def mgf(self, lam):
        return sum(w * c.mgf(lam) for w, c in zip(self.weights, self.components) if w > 0)

    def sample(self, rng, size):
        idx = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights) / sum(self.weights))
        out = np.empty(size)
        for k, c in enumerate(self.components):
            sel = idx == k
            if sel.any():
                out[sel] = c.sample(rng, int(sel.sum()))
        return out

    def tilt(self, lam):
        parts = [c.tilt(lam) for c in self.components]
        if any(p is None for p in parts):
            return None
        phis = np.array([c.mgf(lam) for c in self.components])
        w = np.asarray(self.weights) * phis
        return Mixture(tuple(w / w.sum()), tuple(parts))

    def __str__(self):
        inner = ", ".join(f"{w:g}:{c}" for w, c in zip(self.weights, self.components))
        return f"mix({inner})"


# --- parser -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z_]+)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(.))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = []
        for m in _TOKEN.finditer(text):
            name, num, sym = m.groups()
            if name:
                self.toks.append(("name", name))
            elif num:
                self.toks.append(("num", float(num)))
            elif sym and not sym.isspace():
                self.toks.append(("sym", sym))
        self.pos = 0

    def _next(self):
        if self.pos >= len(self.toks):
            raise ValidationError(f"unexpected end of distribution spec {self.text!r}")
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def _expect(self, sym):
        kind, val = self._next()
        if kind != "sym" or val != sym:
            raise ValidationError(f"expected {sym!r} in distribution spec {self.text!r}")

    def _num(self):
        kind, val = self._next()
        if kind != "num":
            raise ValidationError(f"expected a number in {self.text!r}")
        return val

    def parse(self) -> Family:
        fam = self._family()
        if self.pos != len(self.toks):
            raise ValidationError(f"trailing input in distribution spec {self.text!r}")
        return fam

    def _family(self) -> Family:
        kind, name = self._next()
        if kind != "name":
            raise ValidationError(f"expected a family name in {self.text!r}")
        name = name.lower()
        self._expect("(")
        if name == "exp":
            fam = Exponential(self._num())
        elif name == "normal":
            mu = self._num()
            self._expect(",")
            fam = Normal(mu, self._num())
        elif name == "uniform":
            a = self._num()
            self._expect(",")
            fam = Uniform(a, self._num())
        elif name == "point":
            fam = Point(self._num())
        elif name == "shift":
            x = self._num()
            self._expect(",")
            fam = Shift(x, self._family())
        elif name == "neg":
            fam = Neg(self._family())
        elif name == "mix":
            ws, cs = [], []
            while True:
                ws.append(self._num())
                self._expect(":")
                cs.append(self._family())
                kind, val = self._next()
                if kind == "sym" and val == ")":
                    return Mixture(tuple(ws), tuple(cs))
                if kind != "sym" or val != ",":
                    raise ValidationError(f"expected ',' or ')' in {self.text!r}")
        else:
            raise ValidationError(f"unknown distribution family {name!r}")
        self._expect(")")
        return fam


def parse_family(text: str) -> Family:
    """Parse a distribution spec such as ``"mix(0.5: exp(2), 0.5: neg(exp(1)))"``."""
    if not isinstance(text, str) or not text.strip():
        raise ValidationError(f"empty distribution spec {text!r}")
    return _Parser(text).parse()
