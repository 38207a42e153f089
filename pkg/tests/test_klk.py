from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaydof.alignment import BeamformerSet
from relaydof.channels import GatingWindow, complex_normal
from relaydof.errors import DesiredGainDegenerate, NoNontrivialSolution
from relaydof.klk import (ExtendedChannels, ExtensionPlan, _noiseless_check,
                          build_cancellation_system, choose_extension_plan, cross_residual,
                          draw_gated_channels, effective_extended_channel,
                          identity_precoders, isotropic_tx_cov, klk_trial,
                          max_cancellable_symbols, per_user_dof_bounds, random_precoders,
                          relay_received_covariance, simulate_klk_transmission,
                          solve_relay_gains)

WINDOW = GatingWindow(0.05, 3.0)
seeds = st.integers(0, 2**32 - 1)


def _oracle_G(ch: ExtendedChannels, gains: np.ndarray) -> np.ndarray:
    """Explicit sum over relays of diagonal extended channels."""
    K, L, N = ch.K, ch.L, ch.N
    G = np.zeros((K, K, N, N), dtype=complex)
    for k in range(K):
        for i in range(K):
            for j in range(L):
                G[k, i] += ch.hop2_matrix(k, j) @ gains[j] @ ch.hop1_matrix(j, i)
    return G


@pytest.mark.parametrize("K,L,N,expected", [(3, 6, 2, 1), (2, 3, 1, 1), (2, 2, 1, 0)])
def test_max_cancellable_examples(K, L, N, expected):
    assert max_cancellable_symbols(K, L, N) == expected


def test_max_cancellable_monotone():
    for K in range(2, 6):
        for N in range(1, 6):
            vals = [max_cancellable_symbols(K, L, N) for L in range(K, 40)]
            assert vals == sorted(vals)
        for L in range(K, 40):
            vals = [max_cancellable_symbols(K, L, N) for N in range(1, 8)]
            assert vals == sorted(vals)
        assert max_cancellable_symbols(K, K * (K - 1) + 1, 1) >= 1


@pytest.mark.parametrize("K,L,n,expected", [
    (3, 7, 1, (1, 0, 0, 1)),
    (3, 6, 1, (1, 0, 0, 2)),
    (3, 3, 1, (2, 2, 1, 6)),
])
def test_extension_plan_examples(K, L, n, expected):
    p = choose_extension_plan(K, L, n)
    assert (p.N1, p.N2, p.N3, p.N) == expected
    assert p.feasible


def test_extension_plan_third_regime_T():
    for K in range(3, 6):
        for L in range(K, K * (K - 1)):
            p = choose_extension_plan(K, L, 1)
            assert p.T == (K - 1) * (K - 2) - 1 and p.regime == "align"


def test_extension_plan_rejects():
    with pytest.raises(ValueError):
        choose_extension_plan(3, 2)
    with pytest.raises(ValueError):
        choose_extension_plan(3, 3, 0)


def test_per_user_dof_bounds():
    d0, di, b0, bi = per_user_dof_bounds(choose_extension_plan(3, 3, 1))
    assert (d0, di) == (Fraction(4, 6), Fraction(3, 6))
    assert (b0, bi) == (Fraction(5, 20), Fraction(2, 20))
    assert b0 <= d0 and bi <= di
    sums = []
    for n in (1, 2, 3, 4, 10, 100, 1000):
        d0, di, _, _ = per_user_dof_bounds(choose_extension_plan(3, 3, n))
        assert 0 < d0 <= 1 and 0 < di <= 1
        sums.append(d0 + 2 * di)
    assert sums == sorted(sums) and sums[-1] < Fraction(9, 4)
    assert float(sums[-1]) > 2.24
    with pytest.raises(ValueError):
        per_user_dof_bounds(choose_extension_plan(3, 7, 1))


@pytest.mark.parametrize("K,L,N,N1,shape", [(3, 6, 2, 1, (12, 24)), (2, 3, 1, 1, (2, 3))])
def test_system_shape(K, L, N, N1, shape):
    ch, _ = draw_gated_channels(K, L, N, WINDOW, seed=0)
    assert build_cancellation_system(ch, N1).shape == shape


def test_system_zero_channels():
    ch = ExtendedChannels(np.zeros((2, 6, 3), complex), np.zeros((2, 3, 6), complex))
    assert not build_cancellation_system(ch, 1).any()


@settings(max_examples=25, deadline=None)
@given(seed=seeds, cfg=st.sampled_from([(2, 3, 1, 1), (3, 6, 2, 1), (3, 4, 3, 1)]))
def test_system_rows_match_explicit_interference(seed, cfg):
    K, L, N, N1 = cfg
    rng = np.random.default_rng(seed)
    ch, _ = draw_gated_channels(K, L, N, WINDOW, rng)
    C = random_precoders(K, N, N1, rng)
    gains = complex_normal(rng, (L, N, N))
    y = build_cancellation_system(ch, N1, C) @ gains.ravel()
    G = _oracle_G(ch, gains)
    expected = np.concatenate([(G[k, i] @ C[i]).T.ravel()
                               for k in range(K) for i in range(K) if i != k])
    assert np.allclose(np.sort_complex(y), np.sort_complex(expected), atol=1e-12)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(expected), rel=1e-12)


@pytest.mark.parametrize("K,L,N,N1", [(2, 3, 1, 1), (3, 6, 2, 1), (3, 3, 6, 2)])
def test_null_dimension_generic(K, L, N, N1):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        ch, _ = draw_gated_channels(K, L, N, WINDOW, rng)
        S = build_cancellation_system(ch, N1, random_precoders(K, N, N1, rng))
        assert L * N * N - np.linalg.matrix_rank(S) == L * N * N - K * (K - 1) * N1 * N


def test_solver_residual_and_power():
    plan = choose_extension_plan(3, 6, 1)
    rng = np.random.default_rng(4)
    ch, _ = draw_gated_channels(3, 6, 2, WINDOW, rng)
    C = random_precoders(3, 2, 1, rng)
    relay = solve_relay_gains(build_cancellation_system(ch, 1, C), plan, ch, C, seed=rng)
    G = effective_extended_channel(ch, relay)
    assert cross_residual(G, C) <= 1e-9
    R = relay_received_covariance(ch, isotropic_tx_cov(3, 2, 1.0))
    g = relay.scaled
    power = np.einsum("jtu,juv,jtv->j", g, R, g.conj()).real
    assert power.max() == pytest.approx(2.0, rel=1e-12)


def test_solver_scalar_case():
    plan = choose_extension_plan(2, 3, 1)
    ch, _ = draw_gated_channels(2, 3, 1, WINDOW, seed=9)
    C = identity_precoders(2, 1, 1)
    relay = solve_relay_gains(build_cancellation_system(ch, 1, C), plan, ch, C, seed=1)
    G = effective_extended_channel(ch, relay)
    assert abs(G[0, 1, 0, 0]) <= 1e-10 * np.abs(G).max()
    assert abs(G[1, 0, 0, 0]) <= 1e-10 * np.abs(G).max()


def test_solver_no_solution_beyond_bound():
    plan = ExtensionPlan.custom(3, 6, N=2, N1=2)
    rng = np.random.default_rng(0)
    ch, _ = draw_gated_channels(3, 6, 2, WINDOW, rng)
    C = random_precoders(3, 2, 2, rng)
    with pytest.raises(NoNontrivialSolution):
        solve_relay_gains(build_cancellation_system(ch, 2, C), plan, ch, C, seed=rng)


def test_identity_precoders_kill_desired_gain():
    # with e_s columns every per-slot block is square, so desired gains vanish too
    plan = choose_extension_plan(3, 6, 1)
    ch, _ = draw_gated_channels(3, 6, 2, WINDOW, seed=0)
    C = identity_precoders(3, 2, 1)
    S = build_cancellation_system(ch, 1, C)
    assert 24 - np.linalg.matrix_rank(S) == 12
    with pytest.raises(DesiredGainDegenerate):
        solve_relay_gains(S, plan, ch, C, seed=0)


def test_effective_channel_examples():
    h1 = np.array([[[2.0 + 1j, -1.0]]])      # (N=1, L=1, K=2)
    h2 = np.array([[[0.5], [3.0j]]])          # (N=1, K=2, L=1)
    ch = ExtendedChannels(h1, h2)
    G = effective_extended_channel(ch, np.ones((1, 1, 1)))
    for k in range(2):
        for i in range(2):
            assert G[k, i, 0, 0] == h2[0, k, 0] * h1[0, 0, i]
    assert not effective_extended_channel(ch, np.zeros((1, 1, 1))).any()


@settings(max_examples=25, deadline=None)
@given(seed=seeds, c=st.floats(0.01, 100))
def test_effective_channel_oracle_and_scaling(seed, c):
    rng = np.random.default_rng(seed)
    ch, _ = draw_gated_channels(3, 4, 3, WINDOW, rng)
    gains = complex_normal(rng, (4, 3, 3))
    G = effective_extended_channel(ch, gains)
    assert np.allclose(G, _oracle_G(ch, gains), atol=1e-12)
    assert np.allclose(effective_extended_channel(ch, c * gains), c * G, rtol=1e-12)


def test_noiseless_decode_invariant_to_gain_scaling():
    plan = choose_extension_plan(3, 6, 1)
    rng = np.random.default_rng(2)
    ch, _ = draw_gated_channels(3, 6, 2, WINDOW, rng)
    C = random_precoders(3, 2, 1, rng)
    relay = solve_relay_gains(build_cancellation_system(ch, 1, C), plan, ch, C, seed=rng)
    beams = BeamformerSet([np.zeros((2, 0), complex)] * 3)
    X, pw = list(C), np.ones(3) * 2
    for c in (1.0, 1e-3, 1e3):
        G = effective_extended_channel(ch, c * relay.gains)
        assert _noiseless_check(G, beams, X, pw, np.random.default_rng(0)) <= 1e-8


def test_trial_reports_failure_without_raising():
    plan = ExtensionPlan.custom(3, 6, N=2, N1=2)
    res = klk_trial(plan, WINDOW, [20.0], seed=0)
    assert res.rates is None and res.failure.startswith("NoNontrivialSolution")


def test_simulation_sanity():
    plan = choose_extension_plan(2, 3, 1)
    snr = [10.0, 20.0, 30.0, 40.0]
    rep = simulate_klk_transmission(plan, WINDOW, snr, 60, seed=5)
    assert rep.failures == 0 and rep.samples.shape == (60, 4, 2)
    assert np.all(np.diff(rep.user_rates, axis=0) > 0)
    assert rep.extras["max_residual"] <= 1e-9
    assert rep.extras["max_noiseless_error"] <= 1e-8
    again = simulate_klk_transmission(plan, WINDOW, snr, 60, seed=5, workers=2)
    assert np.array_equal(rep.samples, again.samples)
