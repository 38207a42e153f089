"""
Transmit beamforming over the effective K-user channels left after relay
cancellation, plus rank-based verification and a zero-forcing receiver.

Effective channels are stored as one array ``G`` of shape ``(K, K, N, N)``
with ``G[k, i]`` the extended channel from source ``i`` to destination
``k`` (zero-based, so user 0 is the user with the larger beam set).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .channels import as_rng, complex_normal
from .errors import RankDeficient, SingularEffectiveChannel

RANK_TOL = 1e-9


@dataclass
class BeamformerSet:
    """Unit-norm beam columns, ``beams[0]`` is ``N x N2``, the rest ``N x N3``."""

    beams: list[np.ndarray]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.beams[i]

    def __len__(self) -> int:
        return len(self.beams)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary (QR with phase correction)."""
    Q, R = np.linalg.qr(complex_normal(rng, (n, n)))
    d = np.diag(R)
    return Q * (d / np.abs(d))


def numerical_rank(A: np.ndarray, scale: float | None = None,
                   tol: float = RANK_TOL) -> int:
    """Rank counting singular values above ``tol * scale``.

    `scale` defaults to the largest singular value of `A` itself; pass a
    common scale when comparing ranks of several blocks.
    """
    A = np.atleast_2d(A)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    ref = s[0] if scale is None else scale
    if ref == 0:
        return 0
    return int(np.sum(s > tol * ref))


def _unit_columns(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise SingularEffectiveChannel("beam construction produced a zero column")
    return A / norms


def _ratio_map(G_dst: np.ndarray, G_src: np.ndarray, min_rank: int) -> np.ndarray:
    """``pinv(G_dst) @ G_src`` after checking `G_dst` keeps `min_rank`."""
    if numerical_rank(G_dst) < min_rank:
        raise SingularEffectiveChannel(
            f"effective channel rank below {min_rank}; cannot form ratio map")
    return np.linalg.pinv(G_dst) @ G_src


def cj_beamformers(G: np.ndarray, plan, seed=None) -> BeamformerSet:
    """Product-construction beams for the partial-alignment regime.

    Receiver 0 aligns users ``1..K-1`` through ``V_i = S_i B`` with
    ``S_i = G[0,i]^+ G[0,1]``. Every other receiver ``k`` needs the maps
    ``T_ki = G[k,0]^+ G[k,i] S_i`` (``i`` not in ``{0, k}``) to push ``B``
    into ``span(V_0)``. The first map in lexicographic ``(k, i)`` order is
    absorbed exactly through ``B = T_0^+ A'``; the remaining ``plan.T``
    maps ``T_j T_0^+`` generate

        V_0 = {prod_j (T_j T_0^+)^{a_j} w : a in {0..n}^T}
        A'  = {prod_j (T_j T_0^+)^{a_j} w : a in {0..n-1}^T}

    with products applied in index order. The generator ``w`` is the
    all-ones vector rotated by a seeded Haar unitary. Pseudo-inverses act
    on the non-cancelled subspace because every cross channel annihilates
    the cancelled-stream precoder of its source.
    """
    K, _, N, _ = G.shape
    n, T = plan.n, plan.T
    if plan.N2 + plan.N3 == 0:
        empty = np.zeros((N, 0), dtype=complex)
        return BeamformerSet([empty.copy() for _ in range(K)])
    if K < 3:
        raise ValueError("the alignment regime needs K >= 3")
    rng = as_rng(seed)
    min_rank = N - plan.N1

    S = [np.eye(N, dtype=complex)] * K
    for i in range(2, K):
        S[i] = _ratio_map(G[0, i], G[0, 1], min_rank)
    maps = []
    for k in range(1, K):
        for i in range(1, K):
            if i != k:
                maps.append(_ratio_map(G[k, 0], G[k, i], min_rank) @ S[i])
    T0_pinv = np.linalg.pinv(maps[0])
    gens = [Tj @ T0_pinv for Tj in maps[1:]]
    assert len(gens) == T, (len(gens), T)

    w = random_unitary(rng, N) @ np.ones(N, dtype=complex) / np.sqrt(N)

    def span(top: int) -> np.ndarray:
        cols = []
        for alpha in itertools.product(range(top + 1), repeat=T):
            v = w
            for Tj, a in zip(gens, alpha):
                v = np.linalg.matrix_power(Tj, a) @ v
            cols.append(v)
        return np.column_stack(cols) if cols else np.zeros((N, 0), complex)

    V0 = span(n)
    B = T0_pinv @ span(n - 1)
    beams = [_unit_columns(V0)] + [_unit_columns(S[i] @ B) for i in range(1, K)]
    if beams[0].shape[1] != plan.N2 or beams[1].shape[1] != plan.N3:
        raise ValueError("plan beam counts disagree with the construction")
    return BeamformerSet(beams)


@dataclass
class AlignmentReport:
    """Per-destination rank bookkeeping.

    ``decodable`` requires the interference to fit in the ``N - desired``
    free dimensions and the stacked receive basis to have full rank;
    ``aligned`` additionally asks for the tighter alignment budget (``N3``
    at destination 0, ``N2`` elsewhere). ``passed`` is the conjunction of
    ``decodable`` over all destinations.
    """

    desired_count: list[int] = field(default_factory=list)
    desired_rank: list[int] = field(default_factory=list)
    interference_rank: list[int] = field(default_factory=list)
    stacked_rank: list[int] = field(default_factory=list)
    alignment_budget: list[int] = field(default_factory=list)
    free_dims: list[int] = field(default_factory=list)
    decodable: list[bool] = field(default_factory=list)
    aligned: list[bool] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.decodable)

    @property
    def all_aligned(self) -> bool:
        return all(self.aligned)


def stream_matrices(cancel_precoders, beams: BeamformerSet) -> list[np.ndarray]:
    """Per-source transmit matrices ``[C_i | V_i]``."""
    return [np.hstack([C, V]) for C, V in zip(cancel_precoders, beams.beams)]


def verify_alignment(G: np.ndarray, beams: BeamformerSet, plan,
                     cancel_precoders, tol: float = RANK_TOL) -> AlignmentReport:
    K, _, N, _ = G.shape
    scale = max(np.linalg.norm(G[k, i], 2) for k in range(K) for i in range(K))
    X = stream_matrices(cancel_precoders, beams)
    rep = AlignmentReport()
    for k in range(K):
        desired = G[k, k] @ X[k]
        interf = [G[k, i] @ beams[i] for i in range(K) if i != k]
        interf = np.hstack(interf) if interf else np.zeros((N, 0), complex)
        d = desired.shape[1]
        r_int = numerical_rank(interf, scale, tol)
        r_des = numerical_rank(desired, scale, tol)
        r_all = numerical_rank(np.hstack([desired, interf]), scale, tol)
        budget = plan.N3 if k == 0 else plan.N2
        rep.desired_count.append(d)
        rep.desired_rank.append(r_des)
        rep.interference_rank.append(r_int)
        rep.stacked_rank.append(r_all)
        rep.alignment_budget.append(budget)
        rep.free_dims.append(N - d)
        rep.decodable.append(r_int <= N - d and r_des == d and r_all == d + r_int)
        rep.aligned.append(r_int <= budget)
    return rep


def interference_basis(A: np.ndarray, scale: float | None = None,
                       tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the numerically nonzero column span of `A`."""
    if A.size == 0:
        return np.zeros((A.shape[0], 0), dtype=complex)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    ref = s[0] if scale is None else scale
    return U[:, s > tol * ref] if ref > 0 else U[:, :0]


def zf_filter(desired_basis: np.ndarray, interference_basis: np.ndarray,
              tol: float = RANK_TOL) -> np.ndarray:
    """Rows that extract the desired coefficients and null the interference."""
    B = np.hstack([desired_basis, interference_basis])
    d = desired_basis.shape[1]
    if B.shape[1] > B.shape[0] or numerical_rank(B, tol=tol) < B.shape[1]:
        raise RankDeficient(
            f"stacked basis of {B.shape[1]} columns in dimension {B.shape[0]} "
            "is rank deficient")
    return np.linalg.pinv(B)[:d]


def zero_forcing_decode(received: np.ndarray, desired_basis: np.ndarray,
                        interference_basis: np.ndarray | None = None,
                        tol: float = RANK_TOL) -> np.ndarray:
    """Least-squares symbol estimates after projecting out interference."""
    received = np.asarray(received)
    desired_basis = np.atleast_2d(np.asarray(desired_basis))
    if interference_basis is None:
        interference_basis = np.zeros((desired_basis.shape[0], 0), dtype=complex)
    return zf_filter(desired_basis, np.asarray(interference_basis), tol) @ received
