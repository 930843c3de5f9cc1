"""Guessing strategies and selection-bias estimators.

A guesser predicts each assignment just before it is made. The expected
proportion of correct guesses under the optimal strategy (pick whichever
arm is currently favored by the coin, fair coin on ties) equals

    SB_n = 1/2 + (1/n) sum_m E|p_m - 1/2|,

so recording |p_m - 1/2| during simulation gives a zero-extra-variance
estimate of SB_n alongside the raw guess-counting one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariates import PatientProfile
from .errors import ConfigError
from .imbalance import ImbalanceState
from .procedures import PermutedBlockState, ProcedureConfig, assignment_probability


@dataclass(frozen=True)
class Guesser:
    """kind 'optimal' follows the coin; 'margin_subset' balances a chosen
    weighted set of margins; 'random' is the fair-coin floor."""

    kind: str
    subset: tuple[int, ...] | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("optimal", "margin_subset", "random"):
            raise ConfigError(f"unknown guesser kind {self.kind!r}")
        if self.kind == "margin_subset":
            if not self.subset:
                raise ConfigError("margin_subset needs a nonempty covariate subset")
            if self.weights is not None and len(self.weights) != len(self.subset):
                raise ConfigError("one weight per subset entry")

    @staticmethod
    def optimal() -> "Guesser":
        return Guesser(kind="optimal")

    @staticmethod
    def margin_subset(subset, weights=None) -> "Guesser":
        subset = tuple(int(j) for j in subset)
        if weights is None:
            weights = (1.0 / len(subset),) * len(subset) if subset else None
        else:
            weights = tuple(float(w) for w in weights)
        return Guesser(kind="margin_subset", subset=subset, weights=weights)

    @staticmethod
    def random() -> "Guesser":
        return Guesser(kind="random")


def guess(guesser: Guesser, config: ProcedureConfig, state: ImbalanceState,
          profile: PatientProfile, rng: np.random.Generator,
          aux: PermutedBlockState | None = None) -> int:
    """Predict the next assignment; returns the guessed arm (1 or 2)."""
    if guesser.kind == "random":
        return 1 if rng.random() < 0.5 else 2
    if guesser.kind == "optimal":
        score = assignment_probability(config, state, aux, profile) - 0.5
    else:
        score = 0.0
        for j, w in zip(guesser.subset, guesser.weights):
            level = profile.levels.levels[j]
            score -= w * float(state.d_margin[j][level - 1])
    if score > 0:
        return 1
    if score < 0:
        return 2
    return 1 if rng.random() < 0.5 else 2


@dataclass
class GuessTally:
    n: int = 0
    correct: int = 0
    sum_abs_pm_half: float = 0.0

    def record(self, guessed_arm: int, actual_arm: int, p_m: float) -> None:
        self.n += 1
        self.correct += int(guessed_arm == actual_arm)
        self.sum_abs_pm_half += abs(p_m - 0.5)

    def merge(self, other: "GuessTally") -> "GuessTally":
        return GuessTally(
            n=self.n + other.n,
            correct=self.correct + other.correct,
            sum_abs_pm_half=self.sum_abs_pm_half + other.sum_abs_pm_half,
        )


@dataclass(frozen=True)
class SBEstimate:
    sb: float
    smith_u: float
    sb_rao_blackwell: float


def sb_estimate(tally: GuessTally) -> SBEstimate:
    """Selection-bias summaries from a tally.

    sb is the raw fraction guessed correctly; sb_rao_blackwell replaces
    each guess outcome by its conditional expectation 1/2 + |p_m - 1/2|
    (exact for the optimal guesser, an upper bound otherwise)."""
    if tally.n <= 0:
        raise ConfigError("empty tally")
    if tally.correct > tally.n:
        raise ConfigError("tally has more correct guesses than guesses")
    sb = tally.correct / tally.n
    return SBEstimate(
        sb=sb,
        smith_u=2.0 * sb - 1.0,
        sb_rao_blackwell=0.5 + tally.sum_abs_pm_half / tally.n,
    )
