import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajgpt.preprocess import (
    N_SPECIAL, ConfigurationError, ExtentError, ParseError, PreprocessConfig, RawPoint,
    RegionVocabulary, SplitMode, SplitSpec, StayPoint, detect_stay_points, discretize,
    normalize_times, parse_plt, preprocess, project, read_geolife, read_points_csv,
    repair_overlaps, rolling_windows, split, split_agents,
)
from trajgpt.types import Visit, VisitSequence

from conftest import random_sequence

HEADER = "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n"


def _epoch_seconds(y, mo, d, h, mi, s):
    # calendar arithmetic oracle, independent of timestamp()
    days = dt.date(y, mo, d).toordinal() - dt.date(1970, 1, 1).toordinal()
    return days * 86_400 + h * 3600 + mi * 60 + s


def test_parse_plt_timestamp_matches_calendar_oracle():
    text = HEADER + "39.984702,116.318417,0,492,39744.1201851852,2008-10-23,02:53:04\n"
    (p,) = parse_plt(text)
    assert p.t == _epoch_seconds(2008, 10, 23, 2, 53, 4)
    assert (p.lat, p.lon) == (39.984702, 116.318417)
    # the serial-day column (days since 1899-12-30) agrees to within a second
    assert abs((39744.1201851852 - 25569) * 86_400 - p.t) < 1


def test_parse_plt_rejects_bad_rows():
    with pytest.raises(ParseError):
        parse_plt(HEADER + "39.9,116.3,0,492,39744.1\n")
    with pytest.raises(ParseError):
        parse_plt(HEADER + "39.9,116.3,0,492,39744.1,2008-13-40,02:53:04\n")


def test_read_geolife_layout(tmp_path):
    traj = tmp_path / "Data" / "000" / "Trajectory"
    traj.mkdir(parents=True)
    (traj / "b.plt").write_text(HEADER + "39.9,116.3,0,0,0,2008-10-23,03:00:00\n")
    (traj / "a.plt").write_text(HEADER + "39.9,116.3,0,0,0,2008-10-23,02:00:00\n")
    traces = read_geolife(tmp_path)
    assert list(traces) == ["000"]
    assert [p.t for p in traces["000"]] == sorted(p.t for p in traces["000"])


def test_read_points_csv(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("agent,lat,lon,t\nb,1,2,20\nb,1,2,10\na,0,0,5\n")
    traces = read_points_csv(path)
    assert list(traces) == ["a", "b"]
    assert [p.t for p in traces["b"]] == [10, 20]


def test_project_known_offsets():
    ref = (40.0, 116.0)
    pts = [RawPoint(40.001, 116.0, 0), RawPoint(40.0, 116.001, 0)]
    xy = project(pts, ref)
    meter_per_deg = 6_371_000 * math.pi / 180
    assert xy[0] == pytest.approx([0.0, meter_per_deg / 1000], rel=1e-9)
    assert xy[1] == pytest.approx([meter_per_deg / 1000 * math.cos(math.radians(40)), 0.0], rel=1e-9)


def test_project_extent_error():
    with pytest.raises(ExtentError):
        project([RawPoint(50.0, 116.0, 0)], (40.0, 116.0))


def test_stay_point_hand_trace():
    # 0..3 within 50 m for 15 min, then a jump, then a short dwell
    xy = np.array([[0, 0], [10, 0], [0, 10], [5, 5], [1000, 0], [1010, 0]], float)
    t = [0, 300, 600, 900, 1000, 1200]
    stays = detect_stay_points(xy, t, radius=50, min_dur=600)
    assert stays == [StayPoint(3.75, 3.75, 0, 900)]


def test_stay_point_min_duration_boundary():
    xy = np.zeros((2, 2))
    assert len(detect_stay_points(xy, [0, 600], 10, 600)) == 1
    assert detect_stay_points(xy, [0, 599], 10, 600) == []


def test_repair_overlaps_truncates():
    stays, n = repair_overlaps([StayPoint(0, 0, 0, 100), StayPoint(1, 1, 50, 200)])
    assert n == 1
    assert stays[0].departure == 50


def test_vocabulary_ids_and_json(tmp_path):
    vocab = RegionVocabulary.build([(2500, 10), (10, 10), (10, 1300), (20, 20)], 1200.0)
    assert vocab.cells == ((0, 0), (0, 1), (2, 0))
    assert [vocab.lookup(10, 10), vocab.lookup(10, 1300), vocab.lookup(2500, 0)] == [5, 6, 7]
    assert vocab.lookup(-5000, 0) == vocab.unk_id == 4
    assert vocab.centroid(6) == (600.0, 1800.0)
    vocab.save(tmp_path / "v.json")
    assert RegionVocabulary.load(tmp_path / "v.json") == vocab
    assert len(vocab) == N_SPECIAL + 3


def test_discretize_unknown_cells_map_to_unk():
    stays = {"a": [StayPoint(10, 10, 0, 10)], "b": [StayPoint(5000, 5000, 0, 10)]}
    vocab, seqs = discretize(stays, 1000.0, vocab_agents=["a"])
    assert [s.visits[0].region for s in seqs] == [5, 4]


def test_normalize_times_rebases_to_zero(rng):
    seqs = [random_sequence(rng, 5, agent=str(k)) for k in range(3)]
    out, scaling = normalize_times(seqs)
    assert min(s.visits[0].arrival for s in out) == 0
    assert scaling.epoch == min(s.visits[0].arrival for s in seqs)
    assert out[0].visits[0].arrival + scaling.epoch == seqs[0].visits[0].arrival


@given(st.integers(10, 200), st.integers(0, 2**31))
def test_split_agents_partition(n, seed):
    agents = [f"u{k}" for k in range(n)]
    parts = split_agents(agents, (0.8, 0.1, 0.1), seed)
    members = parts["train"] + parts["valid"] + parts["test"]
    assert sorted(members) == sorted(agents)
    assert len(parts["valid"]) == int(n * 0.1 + 1e-9) and len(parts["test"]) == int(n * 0.1 + 1e-9)
    assert split_agents(reversed(agents), (0.8, 0.1, 0.1), seed) == parts


def test_split_agents_too_few():
    with pytest.raises(ConfigurationError):
        split_agents(["a", "b", "c"])


def test_split_spec_validation():
    with pytest.raises(ConfigurationError):
        SplitSpec(ratios=(0.5, 0.2, 0.2))
    with pytest.raises(ConfigurationError):
        SplitSpec(window=1)


def test_rolling_windows(rng):
    seq = random_sequence(rng, 10)
    wins = rolling_windows(seq, 4)
    assert len(wins) == 7
    assert all(len(w) == 4 for w in wins)
    assert wins[3].visits == seq.visits[3:7]
    assert [len(w) for w in rolling_windows(seq, 50)] == [10]


def test_chronological_split_orders_by_time(rng):
    seqs = [random_sequence(rng, 12, agent=f"a{k}") for k in range(3)]
    parts = split(seqs, SplitSpec(SplitMode.CHRONOLOGICAL, window=4))
    last = lambda ws: [w.visits[-1].arrival for w in ws]
    assert max(last(parts["train"])) <= min(last(parts["valid"]) + last(parts["test"]))
    assert len(parts["train"]) + len(parts["valid"]) + len(parts["test"]) == 3 * 9


def test_preprocess_end_to_end():
    base = 1_224_000_000
    traces = {}
    for k in range(2):
        pts = []
        # dwell at home, move, dwell at work
        for i in range(8):
            pts.append(RawPoint(40.0, 116.0 + 0.00001 * i, base + 120 * i))
        for i in range(8):
            pts.append(RawPoint(40.03, 116.02, base + 3600 + 120 * i))
        traces[f"u{k}"] = pts
    seqs, vocab, scaling = preprocess(traces, PreprocessConfig(ref=(40.0, 116.0)))
    assert len(seqs) == 2
    assert [len(s) for s in seqs] == [2, 2]
    assert seqs[0].visits[0].arrival == 0 and scaling.epoch == base
    assert seqs[0].visits[0].region != seqs[0].visits[1].region
