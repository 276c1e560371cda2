import pytest
import torch
from torch import nn

from masktune.lora import LoRALinear, adapter_parameters, adapter_state, apply_lora
from masktune.modeling import ModelConfig, TinyCausalLM, build_base_model


def small_model(vocab_size: int = 13, max_seq_len: int = 16) -> TinyCausalLM:
    torch.manual_seed(0)
    return TinyCausalLM(
        ModelConfig(
            vocab_size=vocab_size,
            d_model=16,
            n_heads=2,
            n_layers=2,
            d_ff=32,
            max_seq_len=max_seq_len,
        )
    )


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="heads"):
        ModelConfig(vocab_size=10, d_model=10, n_heads=4)


def test_unknown_base_model_names_the_alternatives():
    with pytest.raises(ValueError) as excinfo:
        build_base_model("gpt-99", vocab_size=10, max_seq_len=8)
    assert "tiny-causal" in str(excinfo.value)
    assert "base_model" in str(excinfo.value)


def test_build_base_model_fills_vocab_and_length():
    model = build_base_model("tiny-causal", vocab_size=21, max_seq_len=48)
    assert model.config.vocab_size == 21
    assert model.config.max_seq_len == 48
    assert model.lm_head.out_features == 21


def test_forward_shape_is_batch_length_vocab():
    model = small_model(vocab_size=13)
    ids = torch.zeros((2, 5), dtype=torch.long)
    logits = model(ids)
    assert logits.shape == (2, 5, 13)


def test_forward_rejects_too_long_sequences():
    model = small_model(max_seq_len=8)
    ids = torch.zeros((1, 9), dtype=torch.long)
    with pytest.raises(ValueError, match="shorten the samples"):
        model(ids)


def test_attention_is_causal():
    # Changing a later token must not change earlier positions' logits.
    model = small_model()
    model.eval()
    a = torch.tensor([[3, 4, 5, 6]])
    b = torch.tensor([[3, 4, 5, 7]])
    with torch.no_grad():
        assert torch.equal(model(a)[:, :3], model(b)[:, :3])


def test_lora_linear_validates_rank_and_alpha():
    base = nn.Linear(4, 4)
    with pytest.raises(ValueError):
        LoRALinear(base, rank=0, alpha=16.0)
    with pytest.raises(ValueError):
        LoRALinear(base, rank=4, alpha=0.0)


def test_lora_starts_as_the_identity_wrapper():
    # lora_b is zero-initialized, so the wrapped layer must match the base
    # exactly until training moves it.
    torch.manual_seed(1)
    base = nn.Linear(8, 6)
    wrapped = LoRALinear(base, rank=4, alpha=16.0)
    x = torch.randn(3, 8)
    with torch.no_grad():
        assert torch.equal(wrapped(x), base(x))


def test_lora_freezes_the_base_weights():
    base = nn.Linear(8, 6)
    wrapped = LoRALinear(base, rank=4, alpha=16.0)
    assert not wrapped.base.weight.requires_grad
    assert not wrapped.base.bias.requires_grad
    assert wrapped.lora_a.requires_grad
    assert wrapped.lora_b.requires_grad


def test_apply_lora_wraps_projections_and_lm_head():
    model = apply_lora(small_model(), rank=2, alpha=4.0)
    for block in model.blocks:
        assert isinstance(block.attn.q_proj, LoRALinear)
        assert isinstance(block.attn.k_proj, LoRALinear)
        assert isinstance(block.attn.v_proj, LoRALinear)
        assert isinstance(block.attn.o_proj, LoRALinear)
        # The feed-forward stays untouched.
        assert not isinstance(block.mlp[0], LoRALinear)
    assert isinstance(model.lm_head, LoRALinear)


def test_apply_lora_leaves_only_adapter_params_trainable():
    model = apply_lora(small_model(), rank=2, alpha=4.0)
    trainable = [n for n, p in model.named_parameters() if p.requires_grad]
    assert trainable
    assert all("lora_a" in n or "lora_b" in n for n in trainable)
    assert sum(1 for _ in adapter_parameters(model)) == len(trainable)


def test_apply_lora_preserves_base_outputs():
    plain = small_model()
    plain.eval()
    ids = torch.tensor([[3, 4, 5]])
    with torch.no_grad():
        before = plain(ids).clone()
    wrapped = apply_lora(plain, rank=2, alpha=4.0)
    wrapped.eval()
    with torch.no_grad():
        after = wrapped(ids)
    assert torch.equal(before, after)


def test_adapter_state_holds_only_lora_factors():
    model = apply_lora(small_model(), rank=2, alpha=4.0)
    state = adapter_state(model)
    assert state
    assert all("lora_a" in key or "lora_b" in key for key in state)


def test_gradients_reach_lora_b_but_not_lora_a_at_init():
    # With lora_b zero the loss is flat in lora_a, so its gradient is exactly
    # zero on the first backward pass while lora_b already gets signal.
    model = apply_lora(small_model(), rank=2, alpha=4.0)
    ids = torch.tensor([[3, 4, 5, 6]])
    logits = model(ids)
    loss = logits.logsumexp(dim=-1).sum() - logits[0, :, 3].sum()
    loss.backward()
    head = model.lm_head
    assert head.lora_b.grad is not None
    assert head.lora_b.grad.abs().max() > 0
    assert head.lora_a.grad is not None
    assert torch.all(head.lora_a.grad == 0)
