"""Multinomial Naive Bayes over CFC-derived token multisets.

Three token modes: raw displacements, displacement n-grams, and the
occurrence counts of band-filtered n-grams.  All likelihood arithmetic is
carried in log space; raw likelihoods underflow to zero long before the
log-space posteriors lose meaning.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyClassError, UntrainedModelError
from .features import (
    DEFAULT_BAND,
    FeatureSet,
    displacement_sequence,
    frequency_band,
    histogram,
    sample_ngrams,
)

GOOD = "good"
BAD = "bad"

DEFAULT_ALPHA = 1.0
DEFAULT_MIN_FEATURES = 5


@dataclass(frozen=True)
class TokenMode:
    """raw | ngram(n) | frequency(n, lo, hi)"""

    kind: str
    n: int | None = None
    lo: int | None = None
    hi: int | None = None

    def __post_init__(self):
        if self.kind not in ("raw", "ngram", "frequency"):
            raise ValueError(f"unknown mode kind {self.kind!r}")
        if self.kind in ("ngram", "frequency") and (self.n is None or self.n < 1):
            raise ValueError(f"{self.kind} mode requires n >= 1")

    @classmethod
    def raw(cls) -> "TokenMode":
        return cls("raw")

    @classmethod
    def ngram(cls, n: int) -> "TokenMode":
        return cls("ngram", n=n)

    @classmethod
    def frequency(cls, n: int, lo: int = DEFAULT_BAND[0], hi: int = DEFAULT_BAND[1]) -> "TokenMode":
        return cls("frequency", n=n, lo=lo, hi=hi)

    def describe(self) -> str:
        if self.kind == "raw":
            return "raw"
        if self.kind == "ngram":
            return f"ngram(n={self.n})"
        return f"frequency(n={self.n}, band=[{self.lo},{self.hi}])"


@dataclass(frozen=True)
class BayesModel:
    mode: TokenMode
    smoothing_alpha: float
    class_priors: dict[str, float]
    token_counts: dict[str, Counter]
    class_totals: dict[str, int]
    vocab_size: int

    def conditional_log(self, token, label: str) -> float:
        """log P(token | class) with additive smoothing over the shared
        vocabulary; finite for tokens never seen in training."""
        count = self.token_counts[label].get(token, 0)
        return math.log(
            (count + self.smoothing_alpha)
            / (self.class_totals[label] + self.smoothing_alpha * self.vocab_size)
        )


@dataclass(frozen=True)
class Verdict:
    sample_id: str
    log_likelihood_good: float
    log_likelihood_bad: float
    prob_good: float              # normalized posterior
    prob_bad: float
    feature_count: int
    label: str                    # "good" | "bad" | "abstain"


@dataclass(frozen=True)
class Evaluation:
    verdicts: tuple[Verdict, ...]
    true_positive: int            # malware labeled bad
    false_positive: int           # goodware labeled bad
    true_negative: int
    false_negative: int
    abstained: int


def tokenize(fs: FeatureSet, mode: TokenMode, selector="jcc") -> Counter:
    """Token multiset of one sample under the given mode."""
    if mode.kind == "raw":
        return Counter(displacement_sequence(fs, selector))
    grams = sample_ngrams(fs, mode.n, selector)
    if mode.kind == "ngram":
        return Counter(grams)
    banded = frequency_band(histogram(grams), mode.lo, mode.hi)
    return Counter(banded.values())


def train(
    good_samples: Sequence[Counter],
    bad_samples: Sequence[Counter],
    alpha: float = DEFAULT_ALPHA,
    mode: TokenMode = TokenMode.raw(),
) -> BayesModel:
    """Accumulate per-class token counts; priors follow sample proportions."""
    if not good_samples or not bad_samples:
        raise EmptyClassError("both classes need at least one sample")
    if alpha <= 0:
        raise ValueError("smoothing alpha must be > 0")
    counts = {GOOD: Counter(), BAD: Counter()}
    for sample in good_samples:
        counts[GOOD].update(sample)
    for sample in bad_samples:
        counts[BAD].update(sample)
    vocab = set(counts[GOOD]) | set(counts[BAD])
    if not vocab:
        raise EmptyClassError("training samples carry no tokens")
    total = len(good_samples) + len(bad_samples)
    return BayesModel(
        mode=mode,
        smoothing_alpha=alpha,
        class_priors={GOOD: len(good_samples) / total, BAD: len(bad_samples) / total},
        token_counts=counts,
        class_totals={label: sum(c.values()) for label, c in counts.items()},
        vocab_size=len(vocab),
    )


def classify(
    model: BayesModel,
    tokens: Counter,
    sample_id: str = "",
    min_features: int = DEFAULT_MIN_FEATURES,
) -> Verdict:
    """Log posterior per class, normalized by log-sum-exp; samples with
    fewer than min_features tokens abstain instead of guessing."""
    if model.vocab_size < 1:
        raise UntrainedModelError("model has an empty vocabulary")
    feature_count = sum(tokens.values())
    loglik = {}
    for label in (GOOD, BAD):
        ll = math.log(model.class_priors[label])
        for token, count in tokens.items():
            ll += count * model.conditional_log(token, label)
        loglik[label] = ll
    peak = max(loglik.values())
    norm = sum(math.exp(ll - peak) for ll in loglik.values())
    prob_good = math.exp(loglik[GOOD] - peak) / norm
    prob_bad = math.exp(loglik[BAD] - peak) / norm
    if feature_count < min_features:
        label = "abstain"
    else:
        label = GOOD if loglik[GOOD] >= loglik[BAD] else BAD
    return Verdict(
        sample_id=sample_id,
        log_likelihood_good=loglik[GOOD],
        log_likelihood_bad=loglik[BAD],
        prob_good=prob_good,
        prob_bad=prob_bad,
        feature_count=feature_count,
        label=label,
    )


def evaluate(
    model: BayesModel,
    labeled_samples: Iterable[tuple[str, Counter, str]],
    min_features: int = DEFAULT_MIN_FEATURES,
) -> Evaluation:
    """Verdict table plus confusion counts; malware ("bad") is the
    positive class and abstentions stay out of the confusion matrix."""
    verdicts = []
    tp = fp = tn = fn = abstained = 0
    for sample_id, tokens, true_label in labeled_samples:
        v = classify(model, tokens, sample_id=sample_id, min_features=min_features)
        verdicts.append(v)
        if v.label == "abstain":
            abstained += 1
        elif v.label == BAD:
            if true_label == BAD:
                tp += 1
            else:
                fp += 1
        else:
            if true_label == GOOD:
                tn += 1
            else:
                fn += 1
    return Evaluation(
        verdicts=tuple(verdicts),
        true_positive=tp,
        false_positive=fp,
        true_negative=tn,
        false_negative=fn,
        abstained=abstained,
    )
