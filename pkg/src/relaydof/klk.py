"""
Amplify-and-forward interference cancellation for K-L-K two-hop networks.

Extended channels are kept per time slot rather than as block-diagonal
matrices: ``hop1`` has shape ``(N, L, K)`` (slot, relay, source) and
``hop2`` has shape ``(N, K, L)`` (slot, destination, relay). The extended
matrix ``Hbar_{ji,1}`` is ``diag(hop1[:, j, i])``.

Relay gains ``Gamma_j`` are dense ``N x N`` matrices stacked into an
array of shape ``(L, N, N)``. Unknowns in the cancellation system are
ordered relay-major, then row, then column of ``Gamma_j``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .alignment import (AlignmentReport, BeamformerSet, cj_beamformers,
                        interference_basis, random_unitary, verify_alignment,
                        zero_forcing_decode, zf_filter)
from .channels import (GatingWindow, NetworkTopology, PowerBudget, as_rng,
                       complex_normal, draw_channels, gate_slot, nullspace_basis,
                       spawn_seeds)
from .errors import (DesiredGainDegenerate, NoNontrivialSolution, RankDeficient,
                     SingularEffectiveChannel)
from .metrics import RateReport, db_to_linear

NULL_TOL = 1e-10


def max_cancellable_symbols(K: int, L: int, N: int) -> int:
    """Largest ``N1`` whose cross interference the relays can null."""
    if K < 2 or L < K or N < 1:
        raise ValueError(f"need K >= 2, L >= K, N >= 1; got K={K}, L={L}, N={N}")
    return min((L * N * N - 1) // (K * (K - 1) * N), N)


@dataclass(frozen=True)
class ExtensionPlan:
    """Symbol-extension parameters of one scheme instance.

    Per user: ``N1`` cancelled streams, plus ``N2`` beamformed streams for
    user 0 and ``N3`` for each other user, over ``N`` slots.
    """

    K: int
    L: int
    n: int
    T: int
    N1: int
    N2: int
    N3: int
    N: int
    regime: str = "custom"

    @classmethod
    def custom(cls, K: int, L: int, N: int, N1: int, N2: int = 0, N3: int = 0):
        return cls(K=K, L=L, n=1, T=0, N1=N1, N2=N2, N3=N3, N=N)

    @property
    def streams(self) -> list[int]:
        return [self.N1 + self.N2] + [self.N1 + self.N3] * (self.K - 1)

    @property
    def feasible(self) -> bool:
        return (self.N1 <= max_cancellable_symbols(self.K, self.L, self.N)
                and self.N >= self.N1 + max(self.N2, self.N3))


def choose_extension_plan(K: int, L: int, n: int = 1) -> ExtensionPlan:
    if K < 2 or L < K:
        raise ValueError(f"need L >= K >= 2, got K={K}, L={L}")
    if n < 1:
        raise ValueError(f"scheme index n must be positive, got {n}")
    full = K * (K - 1)
    if L > full:
        plan = ExtensionPlan(K, L, n, 0, N1=1, N2=0, N3=0, N=1, regime="cancel")
    elif L == full:
        plan = ExtensionPlan(K, L, n, 0, N1=n, N2=0, N3=0, N=n + 1, regime="cancel-extended")
    else:
        T = (K - 1) * (K - 2) - 1
        N2, N3 = (n + 1) ** T, n ** T
        num, den = (N2 + N3) * L - 1, full - L
        N1 = num // den
        N = -(-num // den) + N2 + N3
        plan = ExtensionPlan(K, L, n, T, N1=N1, N2=N2, N3=N3, N=N, regime="align")
    assert plan.feasible, plan
    return plan


def per_user_dof_bounds(plan: ExtensionPlan) -> tuple[Fraction, Fraction, Fraction, Fraction]:
    """Exact per-user DoF of a partial-alignment plan and the closed-form lower bounds.

    Returns ``(d_0, d_other, bound_0, bound_other)``.
    """
    if plan.regime != "align":
        raise ValueError(f"per-user bounds apply to the alignment regime, got {plan.regime!r}")
    K, L, N2, N3 = plan.K, plan.L, plan.N2, plan.N3
    full = K * (K - 1)
    den = full * (N2 + N3) + (full - L - 1)
    b1 = Fraction(full * N2 + L * N3 - (full + L + 1), den)
    bi = Fraction(L * N2 + full * N3 - (full + L + 1), den)
    return (Fraction(plan.N1 + N2, plan.N), Fraction(plan.N1 + N3, plan.N), b1, bi)


@dataclass
class ExtendedChannels:
    hop1: np.ndarray
    hop2: np.ndarray

    @property
    def N(self) -> int:
        return self.hop1.shape[0]

    @property
    def L(self) -> int:
        return self.hop1.shape[1]

    @property
    def K(self) -> int:
        return self.hop1.shape[2]

    def hop1_matrix(self, j: int, i: int) -> np.ndarray:
        return np.diag(self.hop1[:, j, i])

    def hop2_matrix(self, k: int, j: int) -> np.ndarray:
        return np.diag(self.hop2[:, k, j])


def draw_gated_channels(K: int, L: int, N: int, window: GatingWindow, seed=None,
                        distribution: str = "rayleigh",
                        max_draws: int = 10_000) -> tuple[ExtendedChannels, int]:
    """Draw ``N`` slots of both hops, skipping slots that fail the gate.

    Returns the channels and the number of rejected slots.
    """
    rng = as_rng(seed)
    topo = NetworkTopology.klk(K, L)
    hop1, hop2, rejected = [], [], 0
    while len(hop1) < N:
        H1, H2 = draw_channels(topo, distribution, rng, window=window)
        if gate_slot((H1, H2), window):
            hop1.append(H1)
            hop2.append(H2)
        else:
            rejected += 1
            if rejected > max_draws:
                raise RuntimeError("gating window rejects almost every slot")
    return ExtendedChannels(np.array(hop1), np.array(hop2)), rejected


def identity_precoders(K: int, N: int, N1: int) -> np.ndarray:
    return np.broadcast_to(np.eye(N, N1, dtype=complex), (K, N, N1)).copy()


def random_precoders(K: int, N: int, N1: int, seed=None) -> np.ndarray:
    """Orthonormal ``N x N1`` precoders for the cancelled streams, one per source."""
    rng = as_rng(seed)
    return np.array([random_unitary(rng, N)[:, :N1] for _ in range(K)])


def build_cancellation_system(channels: ExtendedChannels, N1: int,
                              precoders: np.ndarray | None = None) -> np.ndarray:
    """Linear map from stacked relay gains to cross interference.

    One row per ``(k, i != k, s < N1, t < N)``; its null vectors give
    ``sum_j Hbar_{kj,2} Gamma_j Hbar_{ji,1} c_i^{(s)} = 0``, where
    ``c_i^{(s)}`` is column ``s`` of source ``i``'s cancelled-stream
    precoder (identity columns when `precoders` is None).
    """
    hop1, hop2 = channels.hop1, channels.hop2
    N, L, K = hop1.shape
    if hop2.shape != (N, K, L):
        raise ValueError(f"hop shapes disagree: {hop1.shape} vs {hop2.shape}")
    if not 1 <= N1 <= N:
        raise ValueError(f"need 1 <= N1 <= N, got N1={N1}, N={N}")
    if precoders is None:
        precoders = identity_precoders(K, N, N1)
    if precoders.shape != (K, N, N1):
        raise ValueError(f"precoders must have shape {(K, N, N1)}, got {precoders.shape}")
    eye = np.eye(N)
    blocks = []
    for k in range(K):
        for i in range(K):
            if i == k:
                continue
            # a[j, u, s] = h_{ji,1}[u] c_i[u, s]
            a = hop1[:, :, i].T[:, :, None] * precoders[i][None, :, :]
            for s in range(N1):
                M = np.einsum("tj,ju,tv->tjvu", hop2[:, k, :], a[:, :, s], eye)
                blocks.append(M.reshape(N, L * N * N))
    return np.vstack(blocks)


@dataclass
class RelayGainSet:
    """Relay gain matrices ``scale * gains[j]``."""

    gains: np.ndarray
    scale: float = 1.0

    @property
    def scaled(self) -> np.ndarray:
        return self.scale * self.gains


def effective_extended_channel(channels: ExtendedChannels,
                               gains: RelayGainSet | np.ndarray) -> np.ndarray:
    """``G[k, i] = sum_j Hbar_{kj,2} Gamma_j Hbar_{ji,1}``, shape ``(K, K, N, N)``."""
    Gam = gains.scaled if isinstance(gains, RelayGainSet) else np.asarray(gains)
    return np.einsum("tkj,jtu,uji->kitu", channels.hop2, Gam, channels.hop1)


def cross_residual(G: np.ndarray, precoders: np.ndarray) -> float:
    """Largest cancelled-stream leakage relative to ``max ||G_ki||_F``."""
    K = G.shape[0]
    ref = max(np.linalg.norm(G[k, i]) for k in range(K) for i in range(K))
    worst = max(np.linalg.norm(G[k, i] @ precoders[i], axis=0).max()
                for k in range(K) for i in range(K) if i != k)
    return float(worst / ref) if ref > 0 else 0.0


def relay_received_covariance(channels: ExtendedChannels,
                              tx_cov: np.ndarray) -> np.ndarray:
    """Covariance of each relay's received block, shape ``(L, N, N)``.

    `tx_cov` has shape ``(K, N, N)``; receiver noise is unit variance.
    """
    h = channels.hop1
    R = np.einsum("tji,itu,uji->jtu", h, tx_cov, h.conj())
    return R + np.eye(channels.N)[None]


def relay_power_scale(gains: np.ndarray, channels: ExtendedChannels,
                      tx_cov: np.ndarray, P: float) -> float:
    """Common factor putting the busiest relay at block power ``N P``."""
    R = relay_received_covariance(channels, tx_cov)
    power = np.einsum("jtu,juv,jtv->j", gains, R, gains.conj()).real
    return float(np.sqrt(channels.N * P / power.max()))


def isotropic_tx_cov(K: int, N: int, P: float) -> np.ndarray:
    return np.broadcast_to(P * np.eye(N, dtype=complex), (K, N, N)).copy()


def solve_relay_gains(system: np.ndarray, plan: ExtensionPlan,
                      channels: ExtendedChannels, precoders: np.ndarray,
                      budget: PowerBudget = PowerBudget(1.0),
                      eps_des: float = 1e-3, seed=None,
                      max_retries: int = 20) -> RelayGainSet:
    """Pick relay gains from the null space of the cancellation system.

    Random unit combinations of the null basis are tried until every
    cancelled stream keeps a desired gain of at least ``eps_des`` times the
    largest effective-channel norm. The returned scale gives the busiest
    relay block power ``N P`` for isotropic source inputs of power ``P``
    per slot.
    """
    Z = nullspace_basis(system, NULL_TOL)
    if Z.shape[1] == 0:
        raise NoNontrivialSolution(
            f"cancellation system {system.shape} has no null space "
            f"(N1={plan.N1} exceeds the cancellable bound)")
    rng = as_rng(seed)
    L, N, K = channels.L, channels.N, channels.K
    for _ in range(max_retries):
        coef = complex_normal(rng, Z.shape[1])
        gains = (Z @ (coef / np.linalg.norm(coef))).reshape(L, N, N)
        G = effective_extended_channel(channels, gains)
        ref = max(np.linalg.norm(G[k, i]) for k in range(K) for i in range(K))
        desired = min(np.linalg.norm(G[k, k] @ precoders[k], axis=0).min() for k in range(K))
        if ref > 0 and desired >= eps_des * ref:
            scale = relay_power_scale(gains, channels, isotropic_tx_cov(K, N, budget.P),
                                      budget.P)
            return RelayGainSet(gains, scale)
    raise DesiredGainDegenerate(
        f"{max_retries} null-space draws all left a desired stream below {eps_des:g}")


@dataclass
class KlkTrial:
    """Outcome of one K-L-K trial; ``rates`` has shape ``(n_snr, K)``."""

    rates: np.ndarray | None = None
    failure: str | None = None
    null_dim: int = 0
    residual: float = float("nan")
    noiseless_error: float = float("nan")
    alignment: AlignmentReport | None = None
    rejected_slots: int = 0
    extras: dict = field(default_factory=dict)


BeamBuilder = Callable[[np.ndarray, ExtensionPlan, np.random.Generator], BeamformerSet]


def _default_beams(G, plan, rng):
    return cj_beamformers(G, plan, seed=rng)


def klk_trial(plan: ExtensionPlan, window: GatingWindow, snr_db, seed,
              beam_builder: BeamBuilder | None = None, noise_scale: float = 1.0,
              eps_des: float = 1e-3, beam_retries: int = 10) -> KlkTrial:
    """Solve relay gains on gated channels and evaluate per-user ZF rates."""
    rng = as_rng(seed)
    K, L, N, N1 = plan.K, plan.L, plan.N, plan.N1
    out = KlkTrial()
    try:
        channels, out.rejected_slots = draw_gated_channels(K, L, N, window, rng)
        C = random_precoders(K, N, N1, rng)
        system = build_cancellation_system(channels, N1, C)
        relay = solve_relay_gains(system, plan, channels, C, eps_des=eps_des, seed=rng)
        out.null_dim = L * N * N - int(np.linalg.matrix_rank(system))
        G = effective_extended_channel(channels, relay.gains)
        out.residual = cross_residual(G, C)

        need_beams = plan.N2 + plan.N3 > 0
        if need_beams:
            build = beam_builder or _default_beams
            for _ in range(beam_retries):
                beams = build(G, plan, rng)
                report = verify_alignment(G, beams, plan, C)
                if report.passed:
                    break
            out.alignment = report
            if not report.passed:
                raise RankDeficient("no decodable beam set within the retry budget")
        else:
            beams = BeamformerSet([np.zeros((N, 0), complex) for _ in range(K)])
            out.alignment = verify_alignment(G, beams, plan, C)

        X = [np.hstack([C[i], beams[i]]) for i in range(K)]
        pw = np.array([N / X[i].shape[1] for i in range(K)])
        out.rates = _klk_rates(channels, relay.gains, G, C, beams, X, pw,
                               db_to_linear(snr_db), noise_scale)
        out.noiseless_error = _noiseless_check(G, beams, X, pw, rng)
    except (NoNontrivialSolution, DesiredGainDegenerate, SingularEffectiveChannel,
            RankDeficient) as exc:
        out.failure = f"{type(exc).__name__}: {exc}"
        out.rates = None
    return out


def _klk_rates(channels, gains, G, C, beams, X, pw, Ps, noise_scale):
    K, N = G.shape[0], G.shape[2]
    rates = np.zeros((len(Ps), K))
    # AF noise shape at each destination before the common relay scale
    Hk = channels.hop2
    af = np.einsum("tkj,jtu,jvu,vkj->ktv", Hk, gains, gains.conj(), Hk.conj())
    for p_idx, P in enumerate(Ps):
        tx_cov = np.array([P * (X[i] * pw[i]) @ X[i].conj().T for i in range(K)])
        c = relay_power_scale(gains, channels, tx_cov, P)
        for k in range(K):
            D = c * G[k, k] @ X[k] * np.sqrt(P * pw[k])
            I_cols = [c * G[k, i] @ beams[i] * np.sqrt(P * pw[i]) for i in range(K) if i != k]
            I_all = np.hstack(I_cols) if I_cols else np.zeros((N, 0), complex)
            Q = interference_basis(I_all, scale=np.linalg.norm(D, 2))
            W = zf_filter(D, Q)
            R = noise_scale ** 2 * (c ** 2 * af[k] + np.eye(N))
            noise = np.einsum("su,uv,sv->s", W, R, W.conj()).real
            leak = sum(P * pw[i] * np.sum(np.abs(W @ (c * G[k, i] @ C[i])) ** 2, axis=1)
                       for i in range(K) if i != k)
            sinr = 1.0 / np.maximum(noise + leak, np.finfo(float).tiny)
            rates[p_idx, k] = np.sum(np.log2(1 + sinr)) / N
    return rates


def _noiseless_check(G, beams, X, pw, rng) -> float:
    """Max symbol error of ZF decoding with all noise switched off."""
    K, N = G.shape[0], G.shape[2]
    syms = [complex_normal(rng, X[i].shape[1]) for i in range(K)]
    worst = 0.0
    for k in range(K):
        y = sum(G[k, i] @ X[i] @ (np.sqrt(pw[i]) * syms[i]) for i in range(K))
        D = G[k, k] @ X[k] * np.sqrt(pw[k])
        I_cols = [G[k, i] @ beams[i] for i in range(K) if i != k]
        I_all = np.hstack(I_cols) if I_cols else np.zeros((N, 0), complex)
        Q = interference_basis(I_all, scale=np.linalg.norm(D, 2))
        est = zero_forcing_decode(y, D, Q)
        worst = max(worst, float(np.max(np.abs(est - syms[k]))))
    return worst


def _run_trial(args):
    return klk_trial(*args)


def simulate_klk_transmission(plan: ExtensionPlan, window: GatingWindow, snr_db,
                              trials: int, seed: int = 0,
                              beam_builder: BeamBuilder | None = None,
                              noise_scale: float = 1.0, eps_des: float = 1e-3,
                              workers: int = 1) -> RateReport:
    """Monte Carlo per-user rates of the cancellation/alignment scheme.

    Trial ``t`` uses the seed derived from ``(seed, t)`` so results do not
    depend on `workers`. Failed trials are dropped and counted.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    args = [(plan, window, snr_db, ss, beam_builder, noise_scale, eps_des)
            for ss in spawn_seeds(seed, trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_trial, args, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_run_trial(a) for a in args]
    ok = [r for r in results if r.failure is None]
    samples = np.array([r.rates for r in ok]).reshape(-1, snr_db.size, plan.K)
    failures = [r.failure for r in results if r.failure is not None]
    report = RateReport(scheme="klk", K=plan.K, L=plan.L, snr_db=snr_db,
                        samples=samples, trials=trials, failures=len(failures), seed=seed)
    report.extras = {
        "plan": plan,
        "failure_reasons": failures,
        "max_residual": max((r.residual for r in ok), default=float("nan")),
        "max_noiseless_error": max((r.noiseless_error for r in ok), default=float("nan")),
        "rejected_slots": sum(r.rejected_slots for r in results),
        "alignment_pass_rate": _rate([r.alignment.passed for r in results if r.alignment]),
        "alignment_aligned_rate": _rate([r.alignment.all_aligned for r in results
                                         if r.alignment]),
    }
    if samples.shape[0] and snr_db.size >= 3 and np.ptp(snr_db) >= 20:
        report.fit(seed=seed)
    return report


def _rate(flags) -> float:
    return float(np.mean(flags)) if flags else float("nan")
