import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaydof.alignment import (BeamformerSet, cj_beamformers, numerical_rank,
                                random_unitary, verify_alignment, zero_forcing_decode,
                                zf_filter)
from relaydof.channels import GatingWindow, complex_normal
from relaydof.errors import RankDeficient
from relaydof.klk import (ExtensionPlan, build_cancellation_system, choose_extension_plan,
                          draw_gated_channels, effective_extended_channel, klk_trial,
                          random_precoders, solve_relay_gains)

WINDOW = GatingWindow(0.05, 3.0)
PLAN = choose_extension_plan(3, 3, 1)
# the same beam counts without cancelled streams, on invertible channels
FULL_RANK_PLAN = ExtensionPlan(3, 3, 1, 1, N1=0, N2=2, N3=1, N=3, regime="align")
seeds = st.integers(0, 2**32 - 1)


def _effective(seed):
    rng = np.random.default_rng(seed)
    ch, _ = draw_gated_channels(3, 3, PLAN.N, WINDOW, rng)
    C = random_precoders(3, PLAN.N, PLAN.N1, rng)
    relay = solve_relay_gains(build_cancellation_system(ch, PLAN.N1, C), PLAN, ch, C, seed=rng)
    return effective_extended_channel(ch, relay), C


def test_beam_counts_and_unit_norm():
    G, _ = _effective(0)
    beams = cj_beamformers(G, PLAN, seed=1)
    assert [b.shape[1] for b in beams.beams] == [2, 1, 1]
    for b in beams.beams:
        assert np.allclose(np.linalg.norm(b, axis=0), 1.0)


def test_beams_deterministic_and_scale_invariant():
    G, _ = _effective(3)
    a = cj_beamformers(G, PLAN, seed=5)
    b = cj_beamformers(G, PLAN, seed=5)
    c = cj_beamformers((2.5 - 1j) * G, PLAN, seed=5)
    for x, y, z in zip(a.beams, b.beams, c.beams):
        assert np.array_equal(x, y)
        assert np.allclose(x, z, atol=1e-9)


def test_cancel_only_regime_is_trivially_decodable():
    plan = choose_extension_plan(3, 7, 1)
    rng = np.random.default_rng(0)
    ch, _ = draw_gated_channels(3, 7, 1, WINDOW, rng)
    C = random_precoders(3, 1, 1, rng)
    relay = solve_relay_gains(build_cancellation_system(ch, 1, C), plan, ch, C, seed=rng)
    G = effective_extended_channel(ch, relay)
    beams = cj_beamformers(G, plan)
    rep = verify_alignment(G, beams, plan, C)
    assert rep.interference_rank == [0, 0, 0] and rep.passed and rep.all_aligned


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_construction_aligns_on_invertible_channels(seed):
    # the product construction is exact whenever the ratio maps are true inverses
    rng = np.random.default_rng(seed)
    G = complex_normal(rng, (3, 3, 3, 3))
    beams = cj_beamformers(G, FULL_RANK_PLAN, seed=rng)
    rep = verify_alignment(G, beams, FULL_RANK_PLAN, np.zeros((3, 3, 0), complex))
    assert rep.all_aligned and rep.passed
    assert rep.interference_rank == [1, 2, 2]


def test_random_beams_break_alignment_budget():
    rng = np.random.default_rng(1)
    G = complex_normal(rng, (3, 3, 3, 3))
    beams = BeamformerSet([random_unitary(rng, 3)[:, :2], random_unitary(rng, 3)[:, :1],
                           random_unitary(rng, 3)[:, :1]])
    rep = verify_alignment(G, beams, FULL_RANK_PLAN, np.zeros((3, 3, 0), complex))
    assert not rep.all_aligned and not rep.passed


def test_report_consistency_on_effective_channels():
    for seed in range(10):
        G, C = _effective(seed)
        rep = verify_alignment(G, cj_beamformers(G, PLAN, seed=seed), PLAN, C)
        for k in range(3):
            if rep.aligned[k]:
                assert rep.interference_rank[k] <= rep.alignment_budget[k]
            if rep.decodable[k]:
                assert rep.interference_rank[k] <= rep.free_dims[k]
                assert rep.stacked_rank[k] == rep.desired_count[k] + rep.interference_rank[k]


def test_decodable_draws_recover_symbols_noiselessly():
    passed = 0
    for seed in range(15):
        res = klk_trial(PLAN, WINDOW, [30.0], seed=seed)
        if res.alignment is not None and res.alignment.passed:
            passed += 1
            assert res.noiseless_error <= 1e-8
    assert passed / 15 >= 0.95


def test_zf_examples():
    est = zero_forcing_decode(np.array([1 + 2j, -3.0]), np.eye(2))
    assert np.allclose(est, [1 + 2j, -3.0])
    rng = np.random.default_rng(0)
    D, Q = complex_normal(rng, (5, 2)), complex_normal(rng, (5, 3))
    s, i = complex_normal(rng, 2), complex_normal(rng, 3)
    assert np.allclose(zero_forcing_decode(D @ s + Q @ i, D, Q), s, atol=1e-10)
    with pytest.raises(RankDeficient):
        zf_filter(D, np.hstack([Q, D[:, :1]]))
    with pytest.raises(RankDeficient):
        zf_filter(complex_normal(rng, (2, 2)), complex_normal(rng, (2, 1)))


def test_numerical_rank():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.outer([1, 2, 3], [1, 1])) == 1
    assert numerical_rank(np.zeros((3, 0))) == 0
