import numpy as np
import pytest
import torch
from hypothesis import settings, strategies as st

from trajgpt.encoders import EncoderConfig
from trajgpt.model import ModelConfig, TrajGPT
from trajgpt.preprocess import N_SPECIAL, RegionVocabulary
from trajgpt.types import Visit, VisitSequence

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

N_REGIONS = 12


def tiny_config(**kw) -> ModelConfig:
    enc = EncoderConfig(s2v_scales=4, t2v_dim=4, region_emb_dim=8, s2v_max=20_000.0)
    base = dict(n_layers=2, n_heads=2, ff_dim=16, gmm_components=3, dropout=0.0, encoder=enc,
                batch_size=16, max_seq_len=128)
    return ModelConfig(**{**base, **kw})


def grid_vocab(n: int = N_REGIONS, cell: float = 1000.0) -> RegionVocabulary:
    return RegionVocabulary(cell, (0.0, 0.0), tuple((k % 4, k // 4) for k in range(n)))


def random_sequence(rng: np.random.Generator, n: int, vocab: RegionVocabulary | None = None,
                    agent: str = "a") -> VisitSequence:
    vocab = vocab or grid_vocab()
    t = int(rng.integers(0, 86_400))
    visits = []
    for _ in range(n):
        region = int(rng.integers(N_SPECIAL, len(vocab)))
        x, y = vocab.centroid(region)
        t += int(rng.integers(0, 3_600))
        stay = int(rng.integers(0, 6 * 3_600))
        visits.append(Visit(region, t, t + stay, x, y))
        t += stay
    return VisitSequence(agent, tuple(visits))


@st.composite
def visit_sequences(draw, min_len=3, max_len=64, n_regions=N_REGIONS):
    n = draw(st.integers(min_len, max_len))
    gaps = draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n))
    stays = draw(st.lists(st.integers(0, 50_000), min_size=n, max_size=n))
    regions = draw(st.lists(st.integers(N_SPECIAL, N_SPECIAL + n_regions - 1), min_size=n, max_size=n))
    t, visits = 0, []
    for g, s, r in zip(gaps, stays, regions):
        t += g
        visits.append(Visit(r, t, t + s, float(r), float(-r)))
        t += s
    return VisitSequence("h", tuple(visits))


@pytest.fixture
def vocab():
    return grid_vocab()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model(vocab):
    torch.manual_seed(0)
    return TrajGPT(tiny_config(), len(vocab)).eval()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
