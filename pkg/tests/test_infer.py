import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from trajgpt.checkpoint import Checkpoint
from trajgpt.infer import Decode, DecodeMode, infill, parse_partial, predict_next_visit
from trajgpt.model import TrajGPT, Variant
from trajgpt.preprocess import SpecialToken
from trajgpt.types import BLANK, SEP, TokenKind, visit_token

from conftest import grid_vocab, random_sequence, tiny_config


@pytest.fixture(scope="module")
def ckpt():
    torch.manual_seed(0)
    vocab = grid_vocab()
    return Checkpoint(TrajGPT(tiny_config(), len(vocab)).eval(), vocab)


def _partial(seq, blanks):
    toks = []
    for i, v in enumerate(seq.visits):
        toks.append(BLANK if i in blanks else visit_token(v))
    return toks


def test_predict_next_visit_contract(ckpt, rng):
    ctx = random_sequence(rng, 6, ckpt.vocab)
    a = predict_next_visit(ctx, ckpt)
    b = predict_next_visit(ctx, ckpt)
    assert a.visit == b.visit
    assert a.visit.arrival >= ctx.visits[-1].departure
    assert a.visit.departure >= a.visit.arrival
    assert a.visit.region >= 5
    assert (a.visit.x, a.visit.y) == ckpt.vocab.centroid(a.visit.region)
    assert a.region_probs.shape == (len(ckpt.vocab),)
    assert a.region_probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        predict_next_visit([], ckpt)


def test_sampling_is_seeded(ckpt, rng):
    ctx = random_sequence(rng, 6, ckpt.vocab)
    draws = [predict_next_visit(ctx, ckpt, Decode(DecodeMode.SAMPLE, s)).visit for s in range(12)]
    again = [predict_next_visit(ctx, ckpt, Decode(DecodeMode.SAMPLE, s)).visit for s in range(12)]
    assert draws == again
    assert len({v.region for v in draws}) > 1


def test_infill_two_blanks(ckpt, rng):
    seq = random_sequence(rng, 7, ckpt.vocab)
    res = infill(_partial(seq, {2, 4}), ckpt, max_per_blank=3)
    assert res.n_ans == 2
    assert len(res.blanks) == 2
    first, last = seq.visits[0], seq.visits[-1]
    assert res.visits[0] == first and res.visits[-1] == last
    assert len(res.visits) == 5 + sum(b.n_visits for b in res.blanks)


def test_infill_greedy_is_pure(ckpt, rng):
    seq = random_sequence(rng, 5, ckpt.vocab)
    p = _partial(seq, {2})
    assert infill(p, ckpt).to_json() == infill(p, ckpt).to_json()


class _AlwaysAns(TrajGPT):
    def region_logits(self, h, allowed):
        out = torch.full((*h.shape[:-1], self.vocab_size), -1e9)
        out[..., int(SpecialToken.ANS)] = 0.0
        return out


def test_always_ans_checkpoint_fills_nothing(rng):
    vocab = grid_vocab()
    ck = Checkpoint(_AlwaysAns(tiny_config(), len(vocab)).eval(), vocab)
    seq = random_sequence(rng, 5, vocab)
    res = infill(_partial(seq, {1, 3}), ck)
    assert res.visits == [seq.visits[0], seq.visits[2], seq.visits[4]]
    assert res.n_ans == 2 and res.consistent


def test_forced_close_and_overrun_flags(ckpt, rng):
    seq = random_sequence(rng, 4, ckpt.vocab)
    res = infill(_partial(seq, {2}), ckpt, max_per_blank=1)
    assert res.blanks[0].n_visits <= 1
    if res.blanks[0].n_visits == 1:
        assert res.blanks[0].forced_close
        gen = res.visits[2]
        assert res.blanks[0].overruns_next_visit == (gen.departure > seq.visits[3].arrival)


def test_regression_variant_decodes(rng):
    vocab = grid_vocab()
    torch.manual_seed(2)
    ck = Checkpoint(TrajGPT(tiny_config(), len(vocab), Variant.REGRESSION).eval(), vocab)
    ctx = random_sequence(rng, 4, vocab)
    v = predict_next_visit(ctx, ck).visit
    assert v.arrival >= ctx.visits[-1].departure and v.departure >= v.arrival


def test_bad_partials_rejected(ckpt, rng):
    seq = random_sequence(rng, 4, ckpt.vocab)
    with pytest.raises(ValueError):
        infill([visit_token(v) for v in seq.visits], ckpt)
    with pytest.raises(ValueError):
        infill([BLANK] + [visit_token(v) for v in seq.visits], ckpt)
    with pytest.raises(ValueError):
        infill([visit_token(seq.visits[0]), BLANK, SEP], ckpt)


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_generation_invariants_property(ckpt, seed, cap):
    r = np.random.default_rng(seed)
    seq = random_sequence(r, int(r.integers(3, 10)), ckpt.vocab)
    blanks = {i for i in range(1, len(seq)) if r.random() < 0.4} or {1}
    blanks = {i for i in blanks if i - 1 not in blanks}
    res = infill(_partial(seq, blanks), ckpt, Decode(DecodeMode.SAMPLE, seed), max_per_blank=cap)
    assert res.n_ans == len(blanks)
    assert len(res.generated) <= len(blanks) * (cap + 1)
    gen = [t.visit for t in res.generated if t.kind is TokenKind.VISIT]
    assert all(v.departure >= v.arrival for v in gen)


def test_parse_partial():
    agent, toks = parse_partial({"agent": "z", "visits": [
        {"region": 5, "arrival": 0, "departure": 10}, {"blank": True},
        {"region": 6, "arrival": 50, "departure": 60}]})
    assert agent == "z"
    assert [t.kind for t in toks] == [TokenKind.VISIT, TokenKind.BLANK, TokenKind.VISIT]
