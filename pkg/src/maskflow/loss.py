"""Reward-weighted NLL objective over a pluggable token scorer.

The scorers here are deliberately tiny: they exist to make the loss
algebra checkable in closed form, not to model language. Real-model
scoring lives outside this package.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .model import MaskDataset, MaskSample
from .protocol import render_sample_prompt, render_sample_target


def tokenize(text: str) -> tuple[str, ...]:
    """Whitespace split; the token granularity every shipped scorer uses."""
    return tuple(text.split())


@runtime_checkable
class TokenScorer(Protocol):
    def score(self, context: Sequence[str], token: str) -> float:
        """Probability of `token` following `context`, in (0, 1]."""
        ...

    def vocabulary(self) -> frozenset[str] | None:
        """Declared vocabulary, or None when any token is scoreable."""
        ...


@dataclass(frozen=True)
class UniformScorer:
    """Every vocabulary token gets probability 1/|V| regardless of context."""

    vocab: frozenset[str]

    def __post_init__(self) -> None:
        if not self.vocab:
            raise ValueError("uniform scorer needs a non-empty vocabulary")

    def score(self, context: Sequence[str], token: str) -> float:
        if token not in self.vocab:
            raise ValueError(f"token {token!r} is outside the vocabulary")
        return 1.0 / len(self.vocab)

    def vocabulary(self) -> frozenset[str]:
        return self.vocab


@dataclass(frozen=True)
class UnigramScorer:
    """Add-one smoothed unigram frequencies fit on a text corpus.

    With counts c(t) over vocabulary V, p(t) = (c(t) + 1) / (N + |V|),
    which sums to exactly 1 over V. Unseen tokens score the floor
    1 / (N + |V|), so nothing scoreable ever gets probability 0.
    """

    counts: dict[str, int] = field(hash=False)
    total: int

    @classmethod
    def fit(cls, texts: Iterable[str]) -> "UnigramScorer":
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(tokenize(text))
        if not counts:
            raise ValueError("unigram scorer needs at least one token of text")
        return cls(counts=dict(counts), total=sum(counts.values()))

    def score(self, context: Sequence[str], token: str) -> float:
        denominator = self.total + len(self.counts)
        return (self.counts.get(token, 0) + 1) / denominator

    def vocabulary(self) -> frozenset[str]:
        return frozenset(self.counts)


@dataclass(frozen=True)
class OracleScorer:
    """Probability 1 on everything; the zero-loss reference point."""

    def score(self, context: Sequence[str], token: str) -> float:
        return 1.0

    def vocabulary(self) -> None:
        return None


def sequence_nll(scorer: TokenScorer, sample: MaskSample) -> float:
    """-sum of ln p over the target tokens; the context is never scored."""
    context = list(tokenize(render_sample_prompt(sample)))
    terms: list[float] = []
    for token in tokenize(render_sample_target(sample)):
        probability = scorer.score(context, token)
        if not 0.0 < probability <= 1.0:
            raise ValueError(
                f"scorer broke its contract: p={probability!r} "
                f"for token {token!r}"
            )
        terms.append(-math.log(probability))
        context.append(token)
    return math.fsum(terms)


@dataclass(frozen=True)
class LossReport:
    per_sample_nll: tuple[float, ...]
    objective: float
    sample_count: int
    reward_weighted: bool

    def __post_init__(self) -> None:
        if self.sample_count != len(self.per_sample_nll):
            raise ValueError("sample_count must match per_sample_nll")
        if self.objective < 0.0:
            raise ValueError("objective cannot be negative")


def objective(scorer: TokenScorer, dataset: MaskDataset) -> LossReport:
    """Mean over samples of reward x sequence_nll.

    fsum keeps the reduction exact, so the result is independent of
    sample order and of how a caller might shard the dataset.
    """
    if not dataset.samples:
        raise ValueError("objective needs a non-empty dataset")
    nlls = tuple(sequence_nll(scorer, sample) for sample in dataset.samples)
    weighted = math.fsum(
        sample.reward * nll for sample, nll in zip(dataset.samples, nlls)
    )
    return LossReport(
        per_sample_nll=nlls,
        objective=weighted / len(nlls),
        sample_count=len(nlls),
        reward_weighted=True,
    )


def loss_report_to_record(report: LossReport) -> dict:
    return {
        "per_sample_nll": list(report.per_sample_nll),
        "objective": report.objective,
        "sample_count": report.sample_count,
        "reward_weighted": report.reward_weighted,
    }


def loss_report_from_record(record: dict) -> LossReport:
    return LossReport(
        per_sample_nll=tuple(float(x) for x in record["per_sample_nll"]),
        objective=float(record["objective"]),
        sample_count=int(record["sample_count"]),
        reward_weighted=bool(record["reward_weighted"]),
    )


def write_loss_report(path: str | Path, report: LossReport) -> None:
    from .records import canonical_line

    Path(path).write_text(canonical_line(loss_report_to_record(report)))


def read_loss_report(path: str | Path) -> LossReport:
    import json

    return loss_report_from_record(json.loads(Path(path).read_text()))


def report_table(report: LossReport) -> str:
    """Fixed-width table for terminal display."""
    rows = [
        ("samples", str(report.sample_count)),
        ("objective", f"{report.objective:.6f}"),
        ("mean nll", f"{math.fsum(report.per_sample_nll) / report.sample_count:.6f}"),
        ("reward weighted", "yes" if report.reward_weighted else "no"),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value}" for name, value in rows)
