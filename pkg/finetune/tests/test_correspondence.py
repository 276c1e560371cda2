"""Cross-checks against the dataset producer, skipped when it is absent.

The packages share only the dwim/v1 file format. These tests pin that this
consumer renders the same bytes and computes the same loss values as the
producer does over one file, so either side can be swapped out.
"""

import pytest
import torch

maskflow_records = pytest.importorskip("maskflow.records")
maskflow_protocol = pytest.importorskip("maskflow.protocol")
maskflow_loss = pytest.importorskip("maskflow.loss")
maskflow_model = pytest.importorskip("maskflow.model")

from conftest import FIXTURE

from masktune.data import WhitespaceVocab, load_dataset, tokenize
from masktune.modeling import build_base_model
from masktune.training import batch_loss, collate, encode_example


class ModelScorer:
    """Adapts the causal model to the producer's token-scorer interface."""

    def __init__(self, model, vocab: WhitespaceVocab) -> None:
        self.model = model
        self.ids = vocab.to_obj()
        self.bos = vocab.BOS

    def score(self, context, token: str) -> float:
        ids = [self.bos] + [self.ids[t] for t in context]
        with torch.no_grad():
            logits = self.model(torch.tensor([ids], dtype=torch.long))
        probabilities = torch.softmax(logits[0, -1], dim=-1)
        return float(probabilities[self.ids[token]])

    def vocabulary(self):
        return None


@pytest.fixture(scope="module")
def pair():
    samples = maskflow_records.load_samples(FIXTURE)
    examples = load_dataset(FIXTURE)
    assert len(samples) == len(examples) == 12
    return samples, examples


@pytest.fixture(scope="module")
def scorer_setup(pair):
    _, examples = pair
    vocab = WhitespaceVocab.fit(examples)
    longest = max(len(encode_example(e, vocab)[0]) for e in examples)
    torch.manual_seed(11)
    model = build_base_model("tiny-causal", len(vocab), max_seq_len=longest)
    model.double()
    model.eval()
    return model, vocab, ModelScorer(model, vocab)


def test_tokenizers_agree(pair):
    _, examples = pair
    for example in examples:
        assert tuple(tokenize(example.prompt)) == maskflow_loss.tokenize(
            example.prompt
        )
        assert tuple(tokenize(example.completion)) == maskflow_loss.tokenize(
            example.completion
        )


def test_rendering_matches_the_producer_byte_for_byte(pair):
    samples, examples = pair
    for sample, example in zip(samples, examples):
        assert example.task_id == sample.task_id
        assert example.prompt == maskflow_protocol.render_sample_prompt(sample)
        assert example.completion == maskflow_protocol.render_sample_target(sample)
        assert example.reward == sample.reward


def test_per_example_loss_matches_the_producer_nll(pair, scorer_setup):
    samples, examples = pair
    model, vocab, scorer = scorer_setup
    device = torch.device("cpu")
    for sample, example in zip(samples, examples):
        producer = maskflow_loss.sequence_nll(scorer, sample)
        ids, labels = collate([example], vocab, device)
        with torch.no_grad():
            consumer = float(batch_loss(model, ids, labels))
        assert producer == pytest.approx(consumer, abs=1e-6)


def test_batch_objective_matches_the_producer_objective(pair, scorer_setup):
    # Rewards are all 1 in the fixture, so the producer's reward-weighted
    # objective is the plain mean this trainer descends.
    samples, examples = pair
    model, vocab, scorer = scorer_setup
    dataset = maskflow_model.MaskDataset(
        samples=samples,
        provenance=maskflow_model.Provenance(
            generator_mode="instruct_masking", config_digest="", seed=0
        ),
    )
    report = maskflow_loss.objective(scorer, dataset)
    ids, labels = collate(list(examples), vocab, torch.device("cpu"))
    with torch.no_grad():
        consumer = float(batch_loss(model, ids, labels))
    assert report.reward_weighted
    assert report.objective == pytest.approx(consumer, abs=1e-6)
