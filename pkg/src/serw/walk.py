"""Senile reinforced random walk on Z^d: model description and one-step kernel.

Moves are indexed ``0 .. 2d-1``; move ``k`` is the unit vector along axis
``k // 2`` with sign ``+`` for even ``k`` and ``-`` for odd ``k``.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._validation import ConfigError, check_positive_int, check_real
from .tails import TailSpec, sample

PERTURBATIONS = ("none", "deterministic", "iid", "independent")


@dataclass(frozen=True)
class ScaleRule:
    """Per-step scale multiplier ``s_n = n ** exponent`` for independent (model III) noise."""

    exponent: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "exponent", check_real(self.exponent, "scale exponent", low=0.0))

    def __call__(self, n):
        return float(n) ** self.exponent

    def scales(self, n):
        n = np.asarray(n, dtype=float)
        return n**self.exponent


@dataclass(frozen=True)
class ModelSpec:
    """Which walk to run.

    ``perturbation`` selects the escape boost added at each step: ``none``,
    ``deterministic`` (model I, boost ``delta``), ``iid`` (model II, boost
    ``delta * xi`` with xi i.i.d. from ``tail``) or ``independent`` (model III,
    ``xi`` additionally multiplied by ``scale_rule(m)``).

    ``reinforced=False`` replaces the reinforcement ``f(m) = m`` by ``f = 0``,
    giving the simple symmetric walk; it exists as a calibration hook.
    """

    dimension: int = 1
    delta: float = 0.0
    perturbation: str = "none"
    tail: Optional[TailSpec] = None
    scale_rule: Optional[ScaleRule] = None
    reinforced: bool = True

    def __post_init__(self):
        check_positive_int(self.dimension, "dimension")
        delta = check_real(self.delta, "delta", low=0.0, high=0.5, high_open=True)
        object.__setattr__(self, "delta", delta)
        if self.perturbation not in PERTURBATIONS:
            raise ConfigError(f"unknown perturbation {self.perturbation!r}")
        if (self.perturbation == "none") != (delta == 0.0):
            raise ConfigError("perturbation 'none' must be used exactly when delta == 0")
        if self.is_stochastic:
            if not isinstance(self.tail, TailSpec):
                raise ConfigError(f"{self.perturbation} perturbation needs a TailSpec")
        elif self.tail is not None:
            raise ConfigError("tail is only meaningful for stochastic perturbations")
        if self.perturbation == "independent":
            if self.scale_rule is None:
                object.__setattr__(self, "scale_rule", ScaleRule())
        elif self.scale_rule is not None:
            raise ConfigError("scale_rule only applies to the independent perturbation")

    # convenience constructors
    @classmethod
    def unperturbed(cls, dimension=1, **kw):
        return cls(dimension, 0.0, "none", **kw)

    @classmethod
    def deterministic(cls, dimension, delta, **kw):
        return cls(dimension, delta, "deterministic", **kw)

    @classmethod
    def iid(cls, dimension, delta, tail, **kw):
        return cls(dimension, delta, "iid", tail, **kw)

    @classmethod
    def independent(cls, dimension, delta, tail, scale_rule=None, **kw):
        return cls(dimension, delta, "independent", tail, scale_rule or ScaleRule(), **kw)

    @property
    def is_stochastic(self):
        return self.perturbation in ("iid", "independent")

    @property
    def n_moves(self):
        return 2 * self.dimension

    def with_delta(self, delta):
        """Same model family at another perturbation strength."""
        if delta == 0.0:
            return replace(self, delta=0.0, perturbation="none", tail=None, scale_rule=None)
        if self.perturbation == "none":
            return replace(self, delta=delta, perturbation="deterministic")
        return replace(self, delta=delta)

    def reinforcement_continue(self, m):
        """Unperturbed probability of re-traversing an edge crossed ``m`` times in a row."""
        d2 = 2.0 * self.dimension
        if not self.reinforced:
            return np.full_like(np.asarray(m, dtype=float), 1.0 / d2)
        m = np.asarray(m, dtype=float)
        return (1.0 + m) / (d2 + m)

    def reinforcement_escape(self, m):
        """``1 - reinforcement_continue(m)`` without cancellation."""
        d2 = 2.0 * self.dimension
        m = np.asarray(m, dtype=float)
        if not self.reinforced:
            return np.full_like(m, (d2 - 1.0) / d2)
        return (d2 - 1.0) / (d2 + m)

    def to_dict(self):
        out = {
            "dimension": self.dimension,
            "perturbation": self.perturbation,
            "delta": self.delta,
        }
        if self.tail is not None:
            out["tail"] = self.tail.to_dict()
        if self.scale_rule is not None:
            out["scale_rule"] = {"exponent": self.scale_rule.exponent}
        if not self.reinforced:
            out["reinforced"] = False
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        tail = data.pop("tail", None)
        rule = data.pop("scale_rule", None)
        unknown = set(data) - {"dimension", "perturbation", "delta", "reinforced"}
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        delta = data.get("delta", 0.0)
        kind = data.get("perturbation", "deterministic" if delta else "none")
        return cls(
            dimension=data.get("dimension", 1),
            delta=delta,
            perturbation=kind,
            tail=TailSpec.from_dict(tail) if tail is not None else None,
            scale_rule=ScaleRule(**rule) if rule is not None else None,
            reinforced=data.get("reinforced", True),
        )


def move_vector(k, dimension):
    v = [0] * dimension
    v[k // 2] = 1 if k % 2 == 0 else -1
    return tuple(v)


def move_index(vector):
    for axis, c in enumerate(vector):
        if c:
            return 2 * axis + (0 if c > 0 else 1)
    raise ValueError(f"{vector} is not a unit move")


@dataclass(frozen=True)
class WalkState:
    position: tuple
    last_edge: Optional[tuple] = None
    m: int = 0
    step_count: int = 0

    @classmethod
    def origin(cls, dimension):
        return cls((0,) * dimension)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(int(c) for c in self.position))
        if self.step_count == 0:
            if self.last_edge is not None or self.m != 0:
                raise ValueError("a walk that has not moved has no last edge")
            return
        if self.last_edge is None:
            raise ValueError("last_edge is required once the walk has moved")
        if not 1 <= self.m <= self.step_count:
            raise ValueError(f"need 1 <= m <= step_count, got m={self.m}, n={self.step_count}")
        a, b = (tuple(int(c) for c in p) for p in self.last_edge)
        if self.position not in (a, b):
            raise ValueError("position must be an endpoint of last_edge")
        if sum(abs(x - y) for x, y in zip(a, b)) != 1 or len(a) != len(self.position):
            raise ValueError("last_edge must join two adjacent lattice points")
        object.__setattr__(self, "last_edge", tuple(sorted((a, b))))

    @property
    def dimension(self):
        return len(self.position)

    def continue_move(self):
        """Index of the move that re-traverses ``last_edge``."""
        a, b = self.last_edge
        other = a if b == self.position else b
        return move_index(tuple(o - p for o, p in zip(other, self.position)))


def transition_probabilities(state, model, xi=None):
    """Probabilities of the ``2d`` unit moves from ``state``.

    ``xi`` is the realised noise variate (already scaled for model III) and must
    be given exactly when the model is stochastic and the walk has moved.
    """
    d2 = model.n_moves
    if state.dimension != model.dimension:
        raise ValueError("state and model dimensions differ")
    if model.is_stochastic and state.step_count >= 1:
        if xi is None or xi < 0:
            raise ValueError("stochastic models need a non-negative xi after the first step")
    elif xi is not None:
        raise ValueError("xi is only accepted for stochastic models after the first step")

    if state.step_count == 0:
        return np.full(d2, 1.0 / d2)
    eps = model.delta * xi if model.is_stochastic else model.delta
    p = max(float(model.reinforcement_continue(state.m)) - eps, 0.0)
    probs = np.full(d2, (1.0 - p) / (d2 - 1))
    probs[state.continue_move()] = p
    return probs


def _choose(u, p, cont, d2):
    if u < p:
        return cont
    k = min(int((u - p) / (1.0 - p) * (d2 - 1)), d2 - 2)
    return k if k < cont else k + 1


def step(state, model, rng):
    """Advance one step. ``rng`` needs a ``random()`` method.

    Stochastic models consume one uniform for ``xi`` (after the first step)
    and then one for the move.
    """
    d2 = model.n_moves
    if state.step_count == 0:
        k = min(int(rng.random() * d2), d2 - 1)
        same = False
    else:
        xi = None
        if model.is_stochastic:
            xi = sample(model.tail, state.m, rng, model.scale_rule)
        eps = model.delta * xi if model.is_stochastic else model.delta
        p = max(float(model.reinforcement_continue(state.m)) - eps, 0.0)
        cont = state.continue_move()
        k = _choose(rng.random(), p, cont, d2)
        same = k == cont

    dv = move_vector(k, model.dimension)
    new = tuple(a + b for a, b in zip(state.position, dv))
    if same:
        return WalkState(new, state.last_edge, state.m + 1, state.step_count + 1)
    return WalkState(new, (state.position, new), 1, state.step_count + 1)
