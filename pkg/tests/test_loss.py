"""Loss algebra: closed forms, invariants, and the toy scorer family."""

import math
import random

import pytest

from maskflow.loss import (
    LossReport,
    OracleScorer,
    UniformScorer,
    UnigramScorer,
    loss_report_from_record,
    loss_report_to_record,
    objective,
    read_loss_report,
    report_table,
    sequence_nll,
    tokenize,
    write_loss_report,
)
from maskflow.model import (
    Action,
    ActionKind,
    MaskDataset,
    MaskSample,
    MaskVariant,
    MASK_TOKEN,
    DEFAULT_MASK_INSTRUCTION,
    NAIVE_SFT_INSTRUCTION,
    Provenance,
)


def make_sample(target_text, reward=1, task_id="t"):
    """Single-step sample whose target is a thought with the given text."""
    return MaskSample(
        task_id=task_id,
        variant=MaskVariant.INSTRUCT,
        target_index=1,
        prefix=(),
        mask_token=MASK_TOKEN,
        suffix=(),
        instruction=DEFAULT_MASK_INSTRUCTION,
        target=Action(1, ActionKind.THOUGHT, target_text),
        target_steps=None,
        reward=reward,
        flags=(1,),
    )


def make_dataset(samples):
    return MaskDataset(
        samples=tuple(samples),
        provenance=Provenance("test", "0" * 64, 0),
    )


class FixedScorer:
    """Returns a scripted probability for each target token in turn."""

    def __init__(self, probabilities):
        self.probabilities = list(probabilities)
        self.calls = 0

    def score(self, context, token):
        p = self.probabilities[self.calls % len(self.probabilities)]
        self.calls += 1
        return p

    def vocabulary(self):
        return None


# ------------------------------------------------------------
# sequence_nll closed forms
# ------------------------------------------------------------

def test_tokenize_is_whitespace_split():
    assert tokenize("a  b\nc\t d") == ("a", "b", "c", "d")
    assert tokenize("") == ()
    assert tokenize("   ") == ()


def test_oracle_scorer_gives_zero_loss():
    sample = make_sample("any three tokens")
    assert sequence_nll(OracleScorer(), sample) == 0.0


def test_uniform_vocab4_three_tokens_closed_form():
    # target renders as "<thought>p q r</thought>", whitespace-split into
    # three tokens; each costs ln 4 under a uniform 4-word vocabulary
    sample = make_sample("p q r")
    target_tokens = set(tokenize("<thought>p q r</thought>"))
    assert len(target_tokens) == 3
    vocab = frozenset(target_tokens | {"filler"})
    assert len(vocab) == 4
    nll = sequence_nll(UniformScorer(vocab), sample)
    assert abs(nll - 3 * math.log(4)) < 1e-12


def test_empty_target_is_exactly_zero():
    empty = MaskSample(
        task_id="t",
        variant=MaskVariant.NAIVE_SFT,
        target_index=0,
        prefix=(),
        mask_token="",
        suffix=(),
        instruction=NAIVE_SFT_INSTRUCTION,
        target=None,
        target_steps=(),
        reward=1,
        flags=(),
    )
    scorer = FixedScorer([0.5])
    assert sequence_nll(scorer, empty) == 0.0
    assert scorer.calls == 0


def test_single_token_target_costs_one_term():
    sample = make_sample("")  # renders "<thought></thought>", one token
    scorer = FixedScorer([0.5])
    nll = sequence_nll(scorer, sample)
    assert scorer.calls == 1
    assert nll == pytest.approx(math.log(2))


def test_scored_context_grows_left_to_right():
    seen = []

    class SpyScorer:
        def score(self, context, token):
            seen.append((len(context), token))
            return 1.0

        def vocabulary(self):
            return None

    sample = make_sample("alpha beta")
    sequence_nll(SpyScorer(), sample)
    lengths = [n for n, _ in seen]
    assert lengths == sorted(lengths)
    assert lengths[-1] == lengths[0] + len(seen) - 1
    assert [t for _, t in seen] == list(tokenize("<thought>alpha beta</thought>"))


def test_contract_violations_raise():
    sample = make_sample("x")
    with pytest.raises(ValueError):
        sequence_nll(FixedScorer([0.0]), sample)
    with pytest.raises(ValueError):
        sequence_nll(FixedScorer([1.5]), sample)
    with pytest.raises(ValueError):
        sequence_nll(FixedScorer([-0.25]), sample)


def test_monotonicity_lower_probability_costs_more():
    sample = make_sample("w x y z")
    losses = [
        sequence_nll(FixedScorer([p]), sample)
        for p in (1.0, 0.9, 0.5, 0.1, 0.01)
    ]
    assert losses == sorted(losses)
    assert losses[0] == 0.0


def test_longer_targets_never_cost_less():
    rng = random.Random(5)
    for _ in range(25):
        p = rng.uniform(0.05, 1.0)
        words = ["tok%d" % i for i in range(rng.randint(1, 8))]
        short = make_sample(" ".join(words))
        long = make_sample(" ".join(words + ["extra"]))
        assert (
            sequence_nll(FixedScorer([p]), long)
            >= sequence_nll(FixedScorer([p]), short)
        )


# ------------------------------------------------------------
# Scorer family properties
# ------------------------------------------------------------

def test_uniform_scorer_sums_to_one():
    vocab = frozenset("abcdefg")
    scorer = UniformScorer(vocab)
    total = math.fsum(scorer.score((), t) for t in scorer.vocabulary())
    assert abs(total - 1.0) < 1e-9


def test_uniform_scorer_rejects_unknown_token():
    scorer = UniformScorer(frozenset({"a"}))
    with pytest.raises(ValueError):
        scorer.score((), "b")
    with pytest.raises(ValueError):
        UniformScorer(frozenset())


def test_unigram_fit_counts_and_sums_to_one():
    scorer = UnigramScorer.fit(["the cat sat", "the cat", "the"])
    assert scorer.vocabulary() == frozenset({"the", "cat", "sat"})
    # counts 3,2,1 with add-one smoothing over N=6, |V|=3
    assert scorer.score((), "the") == pytest.approx(4 / 9)
    assert scorer.score((), "cat") == pytest.approx(3 / 9)
    assert scorer.score((), "sat") == pytest.approx(2 / 9)
    total = math.fsum(scorer.score((), t) for t in scorer.vocabulary())
    assert abs(total - 1.0) < 1e-9


def test_unigram_floor_for_unseen_tokens():
    scorer = UnigramScorer.fit(["a b c"])
    floor = scorer.score((), "unseen")
    assert floor == pytest.approx(1 / 6)
    assert min(scorer.score((), t) for t in scorer.vocabulary()) > floor


def test_unigram_rejects_empty_corpus():
    with pytest.raises(ValueError):
        UnigramScorer.fit([])
    with pytest.raises(ValueError):
        UnigramScorer.fit(["   "])


def test_unigram_prefers_frequent_tokens():
    texts = ["count the books", "count the chairs", "count everything"]
    unigram = UnigramScorer.fit(texts)
    uniform = UniformScorer(unigram.vocabulary())
    frequent = unigram.score((), "count")
    rare = unigram.score((), "everything")
    assert frequent > rare
    assert uniform.score((), "count") == uniform.score((), "everything")


# ------------------------------------------------------------
# objective
# ------------------------------------------------------------

def test_all_rewards_zero_gives_exactly_zero():
    samples = [make_sample("a b c", reward=0) for _ in range(5)]
    for scorer in (OracleScorer(), FixedScorer([0.01]), FixedScorer([0.7])):
        report = objective(scorer, make_dataset(samples))
        assert report.objective == 0.0
        assert report.reward_weighted


def test_plain_mean_when_all_rewards_one():
    dataset = make_dataset([make_sample("a"), make_sample("b c")])
    report = objective(FixedScorer([0.5]), dataset)
    mean_nll = math.fsum(report.per_sample_nll) / 2
    assert report.objective == pytest.approx(mean_nll, abs=1e-12)


def test_mixed_rewards_hand_computation():
    # nll 2.0 with reward 1, nll 4.0 with reward 0 -> objective 1.0
    one = make_sample(" ".join(["t"] * 2), reward=1)   # 2 steps at ln(e^-1)
    zero = make_sample(" ".join(["t"] * 4), reward=0)
    # FixedScorer(1/e): each target token costs exactly 1; rendered thought
    # text "<thought>t ... t</thought>" has (n words) tokens
    scorer = FixedScorer([1 / math.e])
    n_one = len(tokenize("<thought>" + "t " * 1 + "t</thought>"))
    assert n_one == 2
    report = objective(scorer, make_dataset([one, zero]))
    assert report.per_sample_nll[0] == pytest.approx(2.0, abs=1e-12)
    assert report.per_sample_nll[1] == pytest.approx(4.0, abs=1e-12)
    assert report.objective == pytest.approx(1.0, abs=1e-12)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        objective(OracleScorer(), make_dataset([]))


def test_decomposition_identity():
    rng = random.Random(11)
    for _ in range(20):
        a = [
            make_sample(
                " ".join("w%d" % rng.randint(0, 30) for _ in range(rng.randint(1, 6))),
                reward=rng.randint(0, 1),
            )
            for _ in range(rng.randint(1, 5))
        ]
        b = [
            make_sample(
                " ".join("v%d" % rng.randint(0, 30) for _ in range(rng.randint(1, 6))),
                reward=rng.randint(0, 1),
            )
            for _ in range(rng.randint(1, 5))
        ]
        scorer = FixedScorer([rng.uniform(0.1, 1.0)])
        whole = objective(scorer, make_dataset(a + b)).objective
        scorer_a = FixedScorer(scorer.probabilities)
        scorer_b = FixedScorer(scorer.probabilities)
        part_a = objective(scorer_a, make_dataset(a)).objective
        part_b = objective(scorer_b, make_dataset(b)).objective
        merged = (len(a) * part_a + len(b) * part_b) / (len(a) + len(b))
        assert abs(whole - merged) < 1e-12


def test_objective_order_independent():
    samples = [make_sample("x y z", reward=i % 2) for i in range(7)]
    forward = objective(FixedScorer([0.3]), make_dataset(samples)).objective
    backward = objective(FixedScorer([0.3]), make_dataset(samples[::-1])).objective
    assert forward == backward


def test_report_validation():
    with pytest.raises(ValueError):
        LossReport(per_sample_nll=(1.0,), objective=1.0, sample_count=2,
                   reward_weighted=True)
    with pytest.raises(ValueError):
        LossReport(per_sample_nll=(1.0,), objective=-0.5, sample_count=1,
                   reward_weighted=True)


# ------------------------------------------------------------
# Serialization and display
# ------------------------------------------------------------

def test_report_record_round_trip(tmp_path):
    dataset = make_dataset([make_sample("a b"), make_sample("c", reward=0)])
    report = objective(FixedScorer([0.25]), dataset)
    assert loss_report_from_record(loss_report_to_record(report)) == report
    path = tmp_path / "loss.json"
    write_loss_report(path, report)
    assert read_loss_report(path) == report


def test_report_table_mentions_the_numbers():
    report = LossReport(
        per_sample_nll=(2.0, 4.0), objective=3.0, sample_count=2,
        reward_weighted=True,
    )
    table = report_table(report)
    assert "3.000000" in table
    assert "2" in table
    assert "yes" in table
