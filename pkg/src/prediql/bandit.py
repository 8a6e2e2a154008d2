"""Thompson sampling over prompting strategies with discounted Beta posteriors."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"
DEFAULT_GAMMA = 0.95
ARG_MODES = ("known", "real", "nulls")


class BanditError(ValueError):
    pass


@dataclass(frozen=True)
class Arm:
    id: str
    include_schema: bool
    arg_mode: str
    depth: int
    top_k: int

    def __post_init__(self):
        if self.arg_mode not in ARG_MODES:
            raise BanditError(f"arg_mode must be one of {ARG_MODES}, got {self.arg_mode!r}")
        if self.depth not in (1, 2, 3):
            raise BanditError(f"arm depth must be 1, 2 or 3, got {self.depth}")
        if self.top_k not in (0, 3, 5):
            raise BanditError(f"arm top_k must be 0, 3 or 5, got {self.top_k}")

    @property
    def depth_limit(self) -> int:
        """Validator depth bound: the root field plus ``depth`` nested levels."""
        return self.depth + 1


DEFAULT_ARMS: tuple[Arm, ...] = (
    Arm("schema_min_known", True, "known", 1, 3),
    Arm("schema_min_real", True, "real", 1, 3),
    Arm("schema_mod_known", True, "known", 2, 5),
    Arm("noschema_min_known", False, "known", 1, 3),
    Arm("noschema_min_real", False, "real", 1, 0),
    Arm("schema_min_nulls", True, "nulls", 1, 3),
    Arm("schema_deep_known", True, "known", 3, 5),
    Arm("schema_deep_real", True, "real", 3, 5),
)


@dataclass
class ArmPosterior:
    s: float = 0.0  # discounted success mass
    f: float = 0.0  # discounted failure mass

    @property
    def alpha(self) -> float:
        return 1.0 + self.s

    @property
    def beta(self) -> float:
        return 1.0 + self.f

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


@dataclass
class BanditState:
    arms: list[Arm]
    posteriors: dict[str, ArmPosterior]
    gamma: float
    rng_seed: int
    decay_all: bool = False
    rng: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    def arm(self, arm_id: str) -> Arm:
        for a in self.arms:
            if a.id == arm_id:
                return a
        raise BanditError(f"unknown arm {arm_id!r}")

    def snapshot(self) -> "BanditState":
        return copy.deepcopy(self)


def init_bandit(arms, gamma: float = DEFAULT_GAMMA, seed: int = 0, decay_all: bool = False) -> BanditState:
    arms = list(arms)
    if not arms:
        raise BanditError("at least one arm is required")
    if not 0.0 < gamma <= 1.0:
        raise BanditError(f"discount must lie in (0, 1], got {gamma}")
    ids = [a.id for a in arms]
    if len(set(ids)) != len(ids):
        raise BanditError("arm ids must be unique")
    return BanditState(arms, {a.id: ArmPosterior() for a in arms}, gamma, seed, decay_all)


def select_arm(state: BanditState) -> str:
    """Draw once from every posterior and play the argmax (lowest index wins ties)."""
    draws = [state.rng.beta(state.posteriors[a.id].alpha, state.posteriors[a.id].beta) for a in state.arms]
    return state.arms[int(np.argmax(draws))].id


def update(state: BanditState, arm_id: str, reward: int) -> BanditState:
    """Discount then credit the played arm in place; returns ``state``.

    With ``decay_all`` every arm is discounted on each update instead of only
    the played one.
    """
    if arm_id not in state.posteriors:
        raise BanditError(f"unknown arm {arm_id!r}")
    if reward not in (0, 1):
        raise BanditError(f"reward must be 0 or 1, got {reward!r}")
    g = state.gamma
    targets = state.posteriors.values() if state.decay_all else [state.posteriors[arm_id]]
    for p in targets:
        p.s *= g
        p.f *= g
    p = state.posteriors[arm_id]
    p.s += reward
    p.f += 1 - reward
    return state


def reward_signal(outcome, coverage_delta: bool) -> int:
    """1 iff HTTP 200, no GraphQL errors, and the episode covered a new node."""
    ok = outcome.http_status == 200 and not outcome.graphql_errors
    return int(ok and bool(coverage_delta))


def arm_stats(state: BanditState) -> list[tuple[str, float, float, float]]:
    rows = [(a.id, state.posteriors[a.id].s, state.posteriors[a.id].f, state.posteriors[a.id].mean) for a in state.arms]
    # stable sort keeps declaration order among equal means
    return sorted(rows, key=lambda r: -r[3])
