"""JSON model configuration.

Schema (all keys optional unless marked)::

    {
      "states": ["a", "b"],                 # labels, default "1".."m"
      "Q": [[0, 2], [0.5, 0]],              # or "P"; one of the two is required
      "distributions": {                    # per-cell specs, 1-based "i,j" keys
        "1,2": "exp(1)", "2,1": "exp(2)"
      },                                    # or an m x m list (null for empty cells)
                                            # or a single string for every cell
      "grid": {"window": [-10, 60], "step": 0.01},
      "tolerances": {"perron": 1e-10, "truncation": 1e-8},
      "seed": 0,
      "renewal": {"h": 1.0},                # slab length for limit checks
      "simulate": {"paths": 200, "steps": 2000, "start": 1},
      "solve": {"z": [{"kind": "exp", "rate": 1.0}]},
      "lindley": {"t": [0, 1, 2, 3], "paths": 100000},
      "branching": {"M": [[2]], "lifetimes": ["exp(1)"]},
      "perpetuity": {"values": [0.5, 1.5], "p": [[0.5, 0.5], [0.5, 0.5]], "B": "point(1)"}
    }

Forcing functions ``z`` for ``solve`` are listed per state (one entry applies to all):
``{"kind": "exp", "rate": r, "scale": c}`` is ``c e^{-r t}`` on ``t >= 0``;
``{"kind": "indicator", "lo": a, "hi": b, "scale": c}`` is ``c 1[a, b)``;
``{"kind": "zero"}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .families import parse_family
from .kernel import Dist, SemiMarkovKernel

DEFAULT_WINDOW = (-10.0, 60.0)
DEFAULT_STEP = 1e-2


class ConfigError(ValidationError):
    """Validation failure carrying the config line it refers to."""

    module = "config"

    def __init__(self, msg: str, path: str = "<config>", line: int = 1):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {msg}")


def _line_of(text: str, needle: str, after: int = 1) -> int:
    """First line number ``>= after`` containing ``needle`` (``after`` if absent)."""
    lines = text.splitlines()
    for k in range(max(after, 1) - 1, len(lines)):
        if needle in lines[k]:
            return k + 1
    return after


@dataclass
class ModelSpec:
    states: list[str]
    weights: np.ndarray
    weight_key: str
    specs: list[list[str | None]]
    window: tuple[float, float] = DEFAULT_WINDOW
    step: float = DEFAULT_STEP
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    sections: dict = field(default_factory=dict)
    path: str = "<config>"
    text: str = ""

    @property
    def m(self) -> int:
        return len(self.states)

    def fail(self, msg: str, needle: str | None = None):
        line = _line_of(self.text, needle) if needle else 1
        raise ConfigError(msg, self.path, line)

    def kernel(self) -> SemiMarkovKernel:
        """The semi-Markov kernel on the configured grid."""
        m = self.m
        dists = [[None] * m for _ in range(m)]
        for i in range(m):
            for j in range(m):
                s = self.specs[i][j]
                if self.weights[i, j] > 0:
                    try:
                        dists[i][j] = Dist.from_family(parse_family(s), self.step)
                    except ValidationError as exc:
                        self.fail(f"cell ({i + 1},{j + 1}): {exc}", f'"{i + 1},{j + 1}"')
        try:
            return SemiMarkovKernel(self.weights, dists, self.step)
        except ValidationError as exc:
            self.fail(str(exc), f'"{self.weight_key}"')

    def section(self, name: str) -> dict:
        sec = self.sections.get(name)
        if sec is None:
            return {}
        if not isinstance(sec, dict):
            self.fail(f"section '{name}' must be an object", f'"{name}"')
        return sec


def _matrix(raw, key: str, text: str, path: str) -> np.ndarray:
    line = _line_of(text, f'"{key}"')
    try:
        W = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' must be a numeric matrix", path, line)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] == 0:
        raise ConfigError(f"'{key}' must be a square matrix, got shape {W.shape}", path, line)
    if not np.all(np.isfinite(W)) or np.any(W < 0):
        raise ConfigError(f"'{key}' entries must be finite and nonnegative", path, line)
    return W


def _specs(raw, W: np.ndarray, text: str, path: str) -> list[list[str | None]]:
    m = W.shape[0]
    out: list[list[str | None]] = [[None] * m for _ in range(m)]
    dline = _line_of(text, '"distributions"')
    if raw is None:
        raw = {}
    if isinstance(raw, str):
        out = [[raw] * m for _ in range(m)]
    elif isinstance(raw, list):
        if len(raw) != m or any(not isinstance(r, list) or len(r) != m for r in raw):
            raise ConfigError(f"'distributions' must be a {m}x{m} list", path, dline)
        out = [[None if s is None else str(s) for s in r] for r in raw]
    elif isinstance(raw, dict):
        default = raw.get("default")
        for key, s in raw.items():
            if key == "default":
                continue
            mt = re.fullmatch(r"\s*(\d+)\s*,\s*(\d+)\s*", key)
            if not mt:
                raise ConfigError(f"bad cell key '{key}' (expected \"i,j\")", path,
                                  _line_of(text, f'"{key}"', dline))
            i, j = int(mt.group(1)), int(mt.group(2))
            if not (1 <= i <= m and 1 <= j <= m):
                raise ConfigError(f"cell ({i},{j}) outside a {m}-state model", path,
                                  _line_of(text, f'"{key}"', dline))
            out[i - 1][j - 1] = None if s is None else str(s)
        if default is not None:
            out = [[s if s is not None else str(default) for s in r] for r in out]
    else:
        raise ConfigError("'distributions' must be an object, a list or a string", path, dline)
    for i in range(m):
        for j in range(m):
            if W[i, j] > 0 and out[i][j] is None:
                raise ConfigError(f"missing distribution for cell ({i + 1},{j + 1})", path, dline)
    return out


def _window(raw, text: str, path: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in raw)
    except (TypeError, ValueError):
        raise ConfigError("grid.window must be [a, b]", path, _line_of(text, '"window"'))
    if not a < b:
        raise ConfigError(f"grid.window needs a < b, got [{a:g}, {b:g}]", path, _line_of(text, '"window"'))
    return a, b


def parse_config(text: str, path: str = "<config>") -> ModelSpec:
    """Parse and validate a JSON model config."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", path, exc.lineno)
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", path, 1)
    sections = {k: data[k] for k in ("renewal", "simulate", "solve", "lindley", "branching", "perpetuity") if k in data}
    key = "Q" if "Q" in data else "P" if "P" in data else None
    if key is None:
        if sections.get("branching") is not None or sections.get("perpetuity") is not None:
            W, key, specs = np.ones((1, 1)), "Q", [[None]]
        else:
            raise ConfigError("config needs a 'Q' or 'P' matrix", path, 1)
    else:
        W = _matrix(data[key], key, text, path)
        specs = _specs(data.get("distributions"), W, text, path)
    m = W.shape[0]
    states = data.get("states") or [str(k + 1) for k in range(m)]
    if len(states) != m:
        raise ConfigError(f"{len(states)} state labels for a {m}x{m} matrix", path,
                          _line_of(text, '"states"'))
    grid = data.get("grid") or {}
    window = _window(grid.get("window", DEFAULT_WINDOW), text, path)
    step = grid.get("step", DEFAULT_STEP)
    if not isinstance(step, (int, float)) or not step > 0:
        raise ConfigError("grid.step must be a positive number", path, _line_of(text, '"step"'))
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer", path, _line_of(text, '"seed"'))
    return ModelSpec([str(s) for s in states], W, key, specs, window, float(step),
                     dict(data.get("tolerances") or {}), seed, sections, path, text)


def load_config(path) -> ModelSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path), 1)
    return parse_config(text, str(path))


def forcing_function(cfg: ModelSpec):
    """``z(i, t)`` from the ``solve.z`` section."""
    zs = cfg.section("solve").get("z", [{"kind": "exp", "rate": 1.0}])
    if isinstance(zs, dict):
        zs = [zs]
    if len(zs) == 1:
        zs = zs * cfg.m
    if len(zs) != cfg.m:
        cfg.fail(f"solve.z needs 1 or {cfg.m} entries", '"z"')
    parts = []
    for k, z in enumerate(zs):
        kind = z.get("kind")
        c = float(z.get("scale", 1.0))
        if kind == "exp":
            r = float(z.get("rate", 1.0))
            if not r > 0:
                cfg.fail(f"solve.z[{k}]: rate must be positive", '"rate"')
            parts.append(lambda t, r=r, c=c: np.where(t >= 0, c * np.exp(-r * np.maximum(t, 0)), 0.0))
        elif kind == "indicator":
            lo, hi = float(z.get("lo", 0.0)), float(z.get("hi", 1.0))
            parts.append(lambda t, lo=lo, hi=hi, c=c: np.where((t >= lo) & (t < hi), c, 0.0))
        elif kind == "zero":
            parts.append(lambda t: np.zeros_like(t))
        else:
            cfg.fail(f"solve.z[{k}]: unknown kind {kind!r}", '"kind"')

    def z(i, t):
        return parts[i](np.asarray(t, dtype=float))

    return z
