import math

import numpy as np
import pytest

from cavprobe.errors import AllReplicatesUnreliable, DimensionMismatch, EmptySampleList
from cavprobe.probe import Cav, TrainerConfig
from cavprobe.sampler import ConceptSpec, build_split
from cavprobe.synth import SynthConcept, SynthConfig, generate
from cavprobe.tcav import (
    Direction,
    ProtocolConfig,
    TcavResult,
    family_size,
    project,
    run_protocol,
    run_protocol_full,
    summarize,
    tcav_score,
)


def cav(w, b=0.0):
    return Cav("c", np.asarray(w, dtype=float), b, 1.0)


def test_projection_and_score():
    c = cav([1.0, -1.0], 0.5)
    assert project(c, [2.0, 1.0]) == 1.5
    assert tcav_score(c, [[2.0, 1.0], [0.0, 0.5], [0.0, 3.0]]) == pytest.approx(1 / 3)
    with pytest.raises(EmptySampleList):
        tcav_score(c, np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        project(c, [1.0, 2.0, 3.0])


def test_zero_projection_is_not_positive():
    assert tcav_score(cav([1.0]), [[0.0], [1.0]]) == 0.5


def test_summarize_frozen_case():
    r = summarize("gender=female", "rock", [0.52, 0.55, 0.50, 0.53, 0.54], 5, m=1, alpha=0.05)
    assert r.t_statistic == pytest.approx(3.2549338848269399, rel=1e-13)
    assert r.p_raw == pytest.approx(0.031229813927076561, rel=1e-11)
    assert r.significant and r.direction is Direction.POSITIVE
    r4 = summarize("gender=female", "rock", [0.52, 0.55, 0.50, 0.53, 0.54], 5, m=4, alpha=0.05)
    assert r4.p_bonferroni == pytest.approx(4 * r.p_raw)
    assert not r4.significant and r4.direction is Direction.NULL
    assert r4.ci_high - r4.ci_low > r.ci_high - r.ci_low


def test_summarize_degenerate_cases():
    flat = summarize("c", "g", [0.5] * 10, 10, m=1, alpha=0.05)
    assert flat.degenerate and flat.ci_low == flat.ci_high == 0.5 and not flat.significant
    ones = summarize("c", "g", [1.0] * 10, 10, m=1, alpha=0.05)
    assert ones.degenerate and ones.significant and ones.direction is Direction.POSITIVE
    single = summarize("c", "g", [0.7], 3, m=1, alpha=0.05)
    assert single.p_raw is None and not single.significant and single.n_unreliable == 2


def test_result_round_trip():
    r = summarize("c", "g", [0.1, 0.3, 0.2, 0.25], 6, m=2, alpha=0.05)
    assert TcavResult.from_dict(r.to_dict()) == r


def test_family_size():
    assert family_size(3, 12) == 36
    assert family_size(0, 5) == 1


@pytest.fixture(scope="module")
def world():
    cfg = SynthConfig(dimension=16, genres=tuple((g, 60) for g in ("a", "b", "c")))
    ds, _ = generate(cfg)
    split = build_split(ds, ConceptSpec("gender", "female", seed=3))
    return ds, split


def test_protocol_shapes(world):
    ds, split = world
    cfg = ProtocolConfig(replicates=20)
    run = run_protocol_full(ds, split, ["a", "b", "c"], cfg)
    assert len(run.results) == 3 and len(run.replicates) == 20
    assert all(r.m == 3 and r.n_replicates == 20 for r in run.results)
    assert len(run.score_matrix()) == 20
    for r in run.results:
        assert all(0.0 <= s <= 1.0 for s in r.scores)
        assert r.test_pool_size == len(split.test_pool(r.genre))


def test_protocol_thread_invariance(world):
    ds, split = world
    a = run_protocol(ds, split, ["a", "b"], ProtocolConfig(replicates=15, threads=1))
    b = run_protocol(ds, split, ["a", "b"], ProtocolConfig(replicates=15, threads=4))
    assert a == b


def test_protocol_explicit_m(world):
    ds, split = world
    res = run_protocol(ds, split, ["a"], ProtocolConfig(replicates=5), m=36)
    assert res[0].m == 36
    assert res[0].p_bonferroni == pytest.approx(min(1.0, 36 * res[0].p_raw))


def test_all_unreliable_raises():
    cfg = SynthConfig(dimension=16, genres=(("a", 60),), signal_strength=0.0)
    ds, _ = generate(cfg)
    split = build_split(ds, ConceptSpec("gender", "female"))
    run_cfg = ProtocolConfig(replicates=3, trainer=TrainerConfig(reliability_threshold=0.99))
    with pytest.raises(AllReplicatesUnreliable):
        run_protocol(ds, split, ["a"], run_cfg)


def test_unknown_genre_pool(world):
    ds, split = world
    with pytest.raises(EmptySampleList):
        run_protocol(ds, split, ["zzz"], ProtocolConfig(replicates=2))


def test_no_signal_world_fails_gate():
    cfg = SynthConfig(dimension=16, genres=(("a", 60), ("b", 60)), signal_strength=0.0,
                      concepts=(SynthConcept("gender", "female", 2),))
    ds, _ = generate(cfg)
    split = build_split(ds, ConceptSpec("gender", "female"))
    run_cfg = ProtocolConfig(replicates=30)
    try:
        run = run_protocol_full(ds, split, ["a", "b"], run_cfg)
    except AllReplicatesUnreliable:
        return
    assert run.n_unreliable >= 25


def test_protocol_config_validation():
    for bad in (dict(replicates=0), dict(fraction=0.0), dict(alpha=1.0), dict(threads=0)):
        with pytest.raises(ValueError):
            ProtocolConfig(**bad)
    assert "threads" not in ProtocolConfig(threads=3).to_dict()
    assert math.isclose(ProtocolConfig().fraction, 0.25)
