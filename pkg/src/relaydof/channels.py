"""
Shared complex linear algebra, channel generation and slot gating.

Matrices are plain ``numpy`` complex arrays. Per-hop channels follow the
``y = H x + z`` convention, so the hop from a layer of ``K_m`` nodes to a
layer of ``K_{m+1}`` nodes is a ``K_{m+1} x K_m`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSingularValues

#: Relative gap below which two singular values count as tied.
SV_TIE_TOL = 1e-10

DISTRIBUTIONS = ("rayleigh", "uniform-annulus")


@dataclass(frozen=True)
class NetworkTopology:
    """Layer sizes ``K_1, ..., K_{M+1}`` of an ``M``-hop relay network."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("a topology needs at least two layers")
        if any(k < 1 for k in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[0] != sizes[-1]:
            raise ValueError(
                f"source and destination layers differ: {sizes[0]} != {sizes[-1]}")

    @classmethod
    def klk(cls, K: int, L: int) -> "NetworkTopology":
        if L < K:
            raise ValueError(f"K-L-K networks need L >= K, got K={K}, L={L}")
        return cls((K, L, K))

    @classmethod
    def khop(cls, K: int) -> "NetworkTopology":
        if K % 2:
            raise ValueError(f"K is even is required for K-hop networks, got K={K}")
        return cls((K,) * (K + 1))

    @property
    def K(self) -> int:
        return self.layer_sizes[0]

    @property
    def hops(self) -> int:
        return len(self.layer_sizes) - 1

    def hop_shapes(self) -> list[tuple[int, int]]:
        s = self.layer_sizes
        return [(s[m + 1], s[m]) for m in range(self.hops)]


@dataclass(frozen=True)
class GatingWindow:
    g_min: float
    g_max: float

    def __post_init__(self):
        if not (0 < self.g_min < self.g_max < np.inf):
            raise ValueError(
                f"gating window needs 0 < g_min < g_max < inf, got "
                f"({self.g_min}, {self.g_max})")


@dataclass(frozen=True)
class PowerBudget:
    """Per-node transmit power, linear scale."""

    P: float

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError(f"power must be positive, got {self.P}")


@dataclass(frozen=True)
class CanonicalSvd:
    """``H = U @ diag(s) @ V^H`` with descending ``s`` and fixed phases."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.conj().T


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence or an existing Generator."""
    return np.random.default_rng(seed)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _annulus(rng, shape, g_min, g_max):
    mag = rng.uniform(g_min, g_max, size=shape)
    phase = rng.uniform(0.0, 2 * np.pi, size=shape)
    return mag * np.exp(1j * phase)


def draw_channels(topology: NetworkTopology, distribution: str = "rayleigh",
                  seed=None, slots: int | None = None,
                  window: GatingWindow | None = None) -> list[np.ndarray]:
    """Draw one channel matrix per hop.

    Parameters
    ----------
    topology : NetworkTopology
    distribution : {"rayleigh", "uniform-annulus"}
        ``rayleigh`` gives CN(0, 1) entries; ``uniform-annulus`` gives a
        magnitude uniform on ``[g_min, g_max]`` of `window` and a uniform
        phase.
    seed : anything accepted by ``numpy.random.default_rng``
    slots : int, optional
        When given, every hop is returned as an array of shape
        ``(slots, rows, cols)`` holding independent time instances.

    Returns
    -------
    list of ndarray
        ``[H_1, ..., H_M]``.
    """
    if distribution not in DISTRIBUTIONS:
        raise ValueError(
            f"unsupported distribution {distribution!r}; choose from {DISTRIBUTIONS}")
    rng = as_rng(seed)
    if distribution == "uniform-annulus":
        window = window or GatingWindow(0.1, 10.0)
    out = []
    for rows, cols in topology.hop_shapes():
        shape = (rows, cols) if slots is None else (slots, rows, cols)
        if distribution == "rayleigh":
            out.append(complex_normal(rng, shape))
        else:
            out.append(_annulus(rng, shape, window.g_min, window.g_max))
    return out


def gate_slot(H_set: Iterable[np.ndarray], window: GatingWindow) -> bool:
    """True iff every entry magnitude lies in ``[g_min, g_max]``."""
    for H in H_set:
        mag = np.abs(np.asarray(H))
        if np.any(mag < window.g_min) or np.any(mag > window.g_max):
            return False
    return True


def extend_channel(h: Sequence[complex]) -> np.ndarray:
    """Symbol-extended channel ``diag(h[1], ..., h[N])``."""
    h = np.asarray(h, dtype=complex).ravel()
    if h.size == 0:
        raise ValueError("cannot extend an empty channel sequence")
    return np.diag(h)


def svd_canonical(H: np.ndarray, tie_tol: float = SV_TIE_TOL) -> CanonicalSvd:
    """SVD of a square matrix under a deterministic phase convention.

    Singular values are strictly descending and, for every right singular
    vector, the entry of largest magnitude is real and positive (the first
    such entry on exact magnitude ties). The matching left vector absorbs
    the same phase so the product is unchanged.

    Raises
    ------
    DegenerateSingularValues
        If two singular values are closer than ``tie_tol * s_max``.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"svd_canonical needs a square matrix, got shape {H.shape}")
    U, s, Vh = np.linalg.svd(H)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    if s.size > 1 and np.any(np.abs(np.diff(s)) <= tie_tol * scale):
        raise DegenerateSingularValues(
            f"singular values tie within {tie_tol:g} relative: {s}")
    V = Vh.conj().T
    idx = np.argmax(np.abs(V), axis=0)
    lead = V[idx, np.arange(V.shape[1])]
    phase = lead / np.abs(lead)
    V = V / phase
    U = U / phase
    return CanonicalSvd(U=U, s=s, V=V)


def nullspace_basis(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical null space of `A`.

    A direction ``v`` is null when ``||A v|| <= tol * ||A||_F * ||v||``.
    Returns an array of shape ``(A.shape[1], d)``; ``d`` may be zero.
    """
    A = np.atleast_2d(np.asarray(A))
    if A.size == 0:
        raise ValueError("nullspace_basis needs a nonempty matrix")
    n = A.shape[1]
    _, s, Vh = np.linalg.svd(A, full_matrices=True)
    cutoff = tol * np.linalg.norm(A)
    rank = int(np.sum(s > cutoff))
    return Vh[rank:].conj().T.reshape(n, n - rank)


def determinant_and_cofactor(H: np.ndarray, i: int, j: int) -> tuple[complex, complex]:
    """Determinant of `H` and the cofactor ``C_ij`` (zero-based indices)."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"need a square matrix, got shape {H.shape}")
    K = H.shape[0]
    if not (0 <= i < K and 0 <= j < K):
        raise IndexError(f"cofactor index ({i}, {j}) out of range for {K}x{K}")
    minor = np.delete(np.delete(H, i, axis=0), j, axis=1)
    minor_det = np.linalg.det(minor) if minor.size else 1.0
    return complex(np.linalg.det(H)), complex((-1) ** (i + j) * minor_det)


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent per-trial seeds derived from ``(seed, trial index)``."""
    return [np.random.SeedSequence([int(seed), t]) for t in range(n)]
