import numpy as np
import pytest
import torch
from scipy import stats

from trajgpt import gmm
from trajgpt.batching import collate, infill_instance, next_visit_instance
from trajgpt.model import LengthError, TrajGPT, Variant, causal_mask, joint_nll_loss
from trajgpt.preprocess import SpecialToken, TimeScaling
from trajgpt.reframe import reframe_with_mask

from conftest import random_sequence, tiny_config


def _batch(rng, vocab, n=4, length=9):
    seqs = [random_sequence(rng, length, vocab) for _ in range(n)]
    return collate([next_visit_instance(s) for s in seqs])


def test_causal_mask_pad_keys():
    pad = torch.tensor([[False, False, True]])
    m = causal_mask(3, pad)[0, 0]
    assert m.tolist() == [[True, False, False], [True, True, False], [True, True, True]]
    # a PAD query still sees itself, PAD keys are hidden from later queries
    m = causal_mask(4, torch.tensor([[False, True, False, False]]))[0, 0]
    assert m[2].tolist() == [True, False, True, False]


@pytest.mark.parametrize("variant", list(Variant))
def test_output_shapes(variant, rng, vocab):
    model = TrajGPT(tiny_config(), len(vocab), variant).eval()
    b = _batch(rng, vocab)
    out = model(b)
    assert out.region_logits.shape == (4, 8, len(vocab))
    if variant is Variant.REGRESSION:
        assert out.travel.shape == (4, 8)
    else:
        out.travel.validate()
        assert out.duration.means.shape == (4, 8, 3)


def test_future_inputs_do_not_move_past_outputs(rng, vocab, tiny_model):
    b = _batch(rng, vocab)
    ref = tiny_model(b)
    i = 3
    b.ids[:, i + 1:] = torch.randint(5, len(vocab), b.ids[:, i + 1:].shape)
    b.arrival[:, i + 1:] += 3.0
    b.xy[:, i + 1:] += 777.0
    b.tgt_ids[:, i + 1:] = 5
    b.tgt_arrival[:, i + 1:] += 1.0
    out = tiny_model(b)
    assert torch.equal(out.region_logits[:, : i + 1], ref.region_logits[:, : i + 1])
    assert torch.equal(out.travel.means[:, : i + 1], ref.travel.means[:, : i + 1])
    assert torch.equal(out.duration.scales[:, : i + 1], ref.duration.scales[:, : i + 1])


def test_trailing_padding_is_invisible(rng, vocab, tiny_model):
    short = random_sequence(rng, 5, vocab)
    long = random_sequence(rng, 9, vocab)
    alone = tiny_model(collate([next_visit_instance(short)]))
    padded = tiny_model(collate([next_visit_instance(short), next_visit_instance(long)]))
    assert torch.allclose(alone.region_logits[0], padded.region_logits[0, :4], atol=1e-6)
    assert torch.allclose(alone.travel.means[0], padded.travel.means[0, :4], atol=1e-6)


def test_temporal_heads_use_teacher_forced_target(rng, vocab, tiny_model):
    b = _batch(rng, vocab)
    ref = tiny_model(b)
    other = b.tgt_ids.clone()
    other[:, 2] = torch.where(other[:, 2] == 5, 6, 5)
    out = tiny_model(b, target_ids=other)
    assert torch.equal(out.region_logits, ref.region_logits)
    assert not torch.allclose(out.travel.means[:, 2], ref.travel.means[:, 2])
    assert torch.equal(out.travel.means[:, 3], ref.travel.means[:, 3])
    # the travel head ignores the target arrival, the duration head does not
    later = b.tgt_arrival.clone() + 0.5
    out = tiny_model(b, target_arrival=later)
    assert torch.equal(out.travel.means, ref.travel.means)
    assert not torch.allclose(out.duration.means, ref.duration.means)


def test_independence_heads_ignore_target(rng, vocab):
    model = TrajGPT(tiny_config(), len(vocab), Variant.INDEPENDENCE).eval()
    b = _batch(rng, vocab)
    ref = model(b)
    out = model(b, target_ids=torch.full_like(b.tgt_ids, 5), target_arrival=b.tgt_arrival + 9)
    assert torch.equal(out.travel.means, ref.travel.means)
    assert torch.equal(out.duration.means, ref.duration.means)


def test_length_limit(rng, vocab):
    model = TrajGPT(tiny_config(max_seq_len=6), len(vocab))
    with pytest.raises(LengthError):
        model(_batch(rng, vocab, length=8))


def test_bad_head_split():
    with pytest.raises(ValueError):
        tiny_config(n_heads=7)


def test_joint_loss_matches_independent_oracle(rng, vocab, tiny_model):
    seq = random_sequence(rng, 8, vocab)
    inst = infill_instance(reframe_with_mask(seq, [0, 1, 1, 0, 1, 0, 0, 0]))
    b = collate([inst], TimeScaling())
    with torch.no_grad():
        out = tiny_model(b)
        loss = joint_nll_loss(tiny_model, b)
    logp = torch.log_softmax(out.region_logits[0].double(), -1).numpy()
    total, n = 0.0, 0
    for p in range(b.ids.shape[1]):
        if not b.loss_mask[0, p]:
            continue
        n += 1
        total -= logp[p, int(b.tgt_ids[0, p])]
        if b.temporal_mask[0, p]:
            for params, y in ((out.travel, b.tgt_travel), (out.duration, b.tgt_duration)):
                w, mu, sd = (t[0, p].double().numpy() for t in (params.weights, params.means, params.scales))
                total -= np.log(np.sum(w * stats.norm.pdf(float(y[0, p]), mu, sd)))
    # predictions start after SEP; the SEP-> first answer and the ANS targets count
    assert n == len(inst.tokens) - inst.predict_from
    assert float(loss.total) == pytest.approx(total / n, rel=1e-4)


def test_regression_loss_is_squared_error(rng, vocab):
    model = TrajGPT(tiny_config(), len(vocab), Variant.REGRESSION).eval()
    b = _batch(rng, vocab, n=2)
    with torch.no_grad():
        out = model(b)
        loss = joint_nll_loss(model, b)
    m = b.temporal_mask
    se = ((out.travel[m] - b.tgt_travel[m].float()) ** 2).sum() + \
        ((out.duration[m] - b.tgt_duration[m].float()) ** 2).sum()
    assert float(loss.travel + loss.duration) == pytest.approx(float(se) / loss.n_positions, rel=1e-5)


def test_autograd_matches_finite_differences(rng, vocab):
    torch.manual_seed(1)
    model = TrajGPT(tiny_config(n_layers=2), len(vocab)).double().eval()
    b = _batch(rng, vocab, n=2, length=6)
    loss = joint_nll_loss(model, b).total
    params = [p for p in model.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    g = torch.Generator().manual_seed(0)
    direction = [torch.randn(p.shape, generator=g, dtype=p.dtype) for p in params]
    analytic = sum(float((d * gr).sum()) for d, gr in zip(direction, grads) if gr is not None)
    h = 1e-6
    with torch.no_grad():
        for p, d in zip(params, direction):
            p.add_(h * d)
        up = float(joint_nll_loss(model, b).total)
        for p, d in zip(params, direction):
            p.sub_(2 * h * d)
        down = float(joint_nll_loss(model, b).total)
    assert (up - down) / (2 * h) == pytest.approx(analytic, rel=1e-3)


def test_special_token_ids_fixed():
    assert [int(t) for t in SpecialToken] == [0, 1, 2, 3, 4]
    assert gmm.EPS == 1e-4
