"""
Opportunistic channel pairing for the K-user K-hop network.

Stage ``m`` of the pairing maps a first-hop channel ``H = U S V^H`` to

    F_m(H) = U P^{m-1} S P^{m-1,T} V^H    (m odd)
    F_m(H) = V P^{m-1} S P^{m-1,T} U^H    (m even)

with ``P`` the cyclic shift, so ``F_K(H) ... F_1(H) = |det H| I`` for even
``K``. Relays wait until the next-hop channel lands in the same quantizer
cell as the block they hold; the first hop is the reference.
"""

from __future__ import annotations

from collections import defaultdict, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .channels import (CanonicalSvd, GatingWindow, SV_TIE_TOL, as_rng,
                       complex_normal, spawn_seeds, svd_canonical)
from .errors import DegenerateSingularValues
from .metrics import RateReport, db_to_linear


def cyclic_permutation(K: int) -> np.ndarray:
    """``P`` with ``diag(P S P^T)`` the one-step cyclic shift of ``diag(S)``."""
    return np.roll(np.eye(K, dtype=int), 1, axis=1)


def _is_scaled_unitary(s: np.ndarray) -> bool:
    return s[0] == 0 or np.ptp(s) <= SV_TIE_TOL * s[0]


@dataclass
class PairingStageResult:
    m: int
    F: np.ndarray
    svd: CanonicalSvd | None
    permuted_sigma: np.ndarray


def pairing_stage(H: np.ndarray, m: int) -> PairingStageResult:
    """Evaluate ``F_m(H)``.

    A scaled unitary ``H`` (all singular values equal) is accepted even
    though its SVD is not unique, because every choice gives the same
    ``F_m``. Partial ties raise :class:`DegenerateSingularValues`.
    """
    H = np.asarray(H, dtype=complex)
    K = H.shape[0]
    if H.shape != (K, K):
        raise ValueError(f"pairing needs a square channel, got {H.shape}")
    if not 1 <= m <= K:
        raise ValueError(f"stage index must lie in 1..{K}, got {m}")
    s = np.linalg.svd(H, compute_uv=False)
    if _is_scaled_unitary(s):
        # H = s W with W unitary: odd stages give H, even stages H^H.
        sigma = np.full(K, s[0])
        F = H.copy() if m % 2 else H.conj().T.copy()
        return PairingStageResult(m, F, None, sigma)
    svd = svd_canonical(H)
    shifted = np.roll(svd.s, -(m - 1))
    if m == 1:
        F = H.copy()
    elif m % 2:
        F = (svd.U * shifted) @ svd.V.conj().T
    else:
        F = (svd.V * shifted) @ svd.U.conj().T
    return PairingStageResult(m, F, svd, shifted)


def F(H: np.ndarray, m: int) -> np.ndarray:
    return pairing_stage(H, m).F


def chain_product(mats) -> np.ndarray:
    """``A_K ... A_1`` for ``mats = [A_1, ..., A_K]``."""
    mats = list(mats)
    out = np.eye(mats[0].shape[1], dtype=complex)
    for A in mats:
        out = A @ out
    return out


def verify_scaled_identity(H: np.ndarray) -> tuple[float, float]:
    """``(|det H|, ||F_K...F_1 - |det H| I||_F / max(|det H|, eps))``."""
    H = np.asarray(H, dtype=complex)
    K = H.shape[0]
    if K % 2:
        raise ValueError(f"K is even is required, got K={K}")
    lam = float(np.prod(np.linalg.svd(H, compute_uv=False)))
    prod = chain_product(F(H, m) for m in range(1, K + 1))
    resid = np.linalg.norm(prod - lam * np.eye(K)) / max(lam, np.finfo(float).eps)
    return lam, float(resid)


def invert_pairing_stage(H_m: np.ndarray, m: int) -> np.ndarray:
    """The first-hop channel ``H`` with ``F_m(H) = H_m``."""
    H_m = np.asarray(H_m, dtype=complex)
    K = H_m.shape[0]
    if not 1 <= m <= K:
        raise ValueError(f"stage index must lie in 1..{K}, got {m}")
    if m == 1:
        return H_m.copy()
    s = np.linalg.svd(H_m, compute_uv=False)
    if _is_scaled_unitary(s):
        return H_m.copy() if m % 2 else H_m.conj().T.copy()
    svd = svd_canonical(H_m)
    # position i of F_m carries the singular value of sorted index (i+m-1) mod K
    idx = (np.arange(K) + m - 1) % K
    left, right = svd.U[:, idx], svd.V[:, idx]
    if m % 2:
        return (left * svd.s) @ right.conj().T
    return (right * svd.s) @ left.conj().T


@dataclass(frozen=True)
class QuantizedBin:
    delta: float
    key: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def representative(self) -> np.ndarray:
        re, im = (np.array(k, dtype=float) for k in self.key)
        K = int(round(np.sqrt(re.size)))
        return self.delta * (re + 1j * im).reshape(K, K)

    def admitted(self, window: GatingWindow) -> bool:
        K = int(round(np.sqrt(len(self.key[0]))))
        norm = np.linalg.norm(self.representative)
        return window.g_min * K <= norm <= window.g_max * K


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_channel(H: np.ndarray, delta: float) -> QuantizedBin:
    """Nearest point of ``delta (Z^{KxK} + j Z^{KxK})``, ties away from zero."""
    if not delta > 0:
        raise ValueError(f"quantizer pitch must be positive, got {delta}")
    H = np.asarray(H, dtype=complex)
    re = _round_half_away(H.real / delta).astype(np.int64).ravel()
    im = _round_half_away(H.imag / delta).astype(np.int64).ravel()
    return QuantizedBin(float(delta), (tuple(re.tolist()), tuple(im.tolist())))


def af_noise_power(gains, H_list) -> float:
    """Accumulated AF noise power ``E||z_AF||^2`` for unit-variance noise.

    ``gains`` are ``gamma_2..gamma_K`` and ``H_list`` is ``H_1..H_K``.
    """
    gains = np.asarray(gains, dtype=float)
    K = len(H_list)
    if gains.size != K - 1:
        raise ValueError(f"need {K - 1} gains for {K} hops, got {gains.size}")
    total = 0.0
    for i in range(2, K + 1):
        g2 = np.prod(gains[i - 2:] ** 2)
        total += g2 * np.linalg.norm(chain_product(H_list[i - 1:])) ** 2
    return float(total)


def total_quantization_error(H_actual, H_ideal) -> np.ndarray:
    """``prod(F_m + D_m) - prod(F_m)`` with the first-hop error forced to zero."""
    H_actual, H_ideal = list(H_actual), list(H_ideal)
    if len(H_actual) != len(H_ideal):
        raise ValueError("actual and ideal chains differ in length")
    shapes = {np.shape(A) for A in H_actual + H_ideal}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent hop shapes {shapes}")
    actual = [H_ideal[0]] + H_actual[1:]
    return chain_product(actual) - chain_product(H_ideal)


def first_order_quantization_error(H_actual, H_ideal) -> np.ndarray:
    """Linear term ``sum_i D_i prod_{j != i} F_j`` of the error expansion."""
    H_actual, H_ideal = list(H_actual), list(H_ideal)
    K = len(H_ideal)
    out = np.zeros_like(np.asarray(H_ideal[0], dtype=complex))
    for i in range(1, K):
        mats = list(H_ideal)
        mats[i] = np.asarray(H_actual[i]) - np.asarray(H_ideal[i])
        out = out + chain_product(mats)
    return out


def sinr_bounds(gains, H: np.ndarray, delta_tot: np.ndarray, af_power: float,
                P: float, literal: bool = False) -> tuple[float, float]:
    """Quantization-aware SINR lower bound and its ``delta -> 0`` closed form.

    ``delta_tot`` is the error matrix exactly as it multiplies ``x_1`` in
    the received signal. With ``literal=True`` the closed form carries the
    extra leading ``1 +``.
    """
    G = float(np.prod(np.abs(np.asarray(gains, dtype=float))))
    det = abs(np.linalg.det(np.asarray(H, dtype=complex)))
    err = float(np.linalg.norm(delta_tot))
    K = np.shape(H)[0]
    num = max(G * det - err, 0.0)
    lower = num ** 2 * P / (1 + err ** 2 * K * P + af_power)
    closed = G ** 2 * det ** 2 * P / (1 + af_power)
    if literal:
        closed += 1.0
    return float(lower), float(closed)


def relay_gains(H_list, P: float) -> np.ndarray:
    """Per-layer gains keeping every relay at transmit power at most ``P``.

    Sources send independent unit-power symbols scaled to power ``P``;
    gain ``gamma_m`` is set from the busiest node's received power.
    """
    K = H_list[0].shape[0]
    R = P * np.eye(K, dtype=complex)
    gains = []
    for H in H_list[:-1]:
        Ry = H @ R @ H.conj().T + np.eye(K)
        g2 = P / np.max(np.real(np.diag(Ry)))
        gains.append(np.sqrt(g2))
        R = g2 * Ry
    return np.array(gains)


def destination_sinr(gains, H_list, P: float) -> np.ndarray:
    """Exact per-destination SINR treating cross terms as noise."""
    K = H_list[0].shape[0]
    A = np.prod(gains) * chain_product(H_list)
    noise = np.zeros((K, K), dtype=complex)
    for g, H in zip(gains, H_list[:-1]):
        noise = g ** 2 * (H @ noise @ H.conj().T + np.eye(K))
    noise = H_list[-1] @ noise @ H_list[-1].conj().T + np.eye(K)
    sig = np.abs(np.diag(A)) ** 2 * P
    cross = (np.sum(np.abs(A) ** 2, axis=1) - np.abs(np.diag(A)) ** 2) * P
    return sig / (cross + np.real(np.diag(noise)))


def _check_khop(K: int, delta: float) -> None:
    if K < 2 or K % 2:
        raise ValueError(f"K is even is required for the K-hop scheme, got K={K}")
    if not delta > 0:
        raise ValueError(f"quantizer pitch must be positive, got {delta}")


def cell_sample(rep: np.ndarray, delta: float, rng) -> np.ndarray:
    """Uniform point of the quantizer cell centred at `rep`."""
    shape = rep.shape
    return rep + delta * (rng.uniform(-0.5, 0.5, shape) + 1j * rng.uniform(-0.5, 0.5, shape))


@dataclass
class GenieTrial:
    rates: np.ndarray | None = None
    lower_rates: np.ndarray | None = None
    closed_rates: np.ndarray | None = None
    delta_tot: float = float("nan")
    rejected: int = 0
    failure: str | None = None


def genie_trial(K: int, delta: float, window: GatingWindow, snr_db, seed,
                max_draws: int = 10_000) -> GenieTrial:
    """One paired transmission with every hop drawn inside the bin of ``H_1``."""
    rng = as_rng(seed)
    out = GenieTrial()
    for _ in range(max_draws):
        H = complex_normal(rng, (K, K))
        b = quantize_channel(H, delta)
        if b.admitted(window):
            break
        out.rejected += 1
    else:
        out.failure = "gating rejected every draw"
        return out
    try:
        rep = b.representative
        H_list = [H] + [F(cell_sample(rep, delta, rng), m) for m in range(2, K + 1)]
        ideal = [F(H, m) for m in range(1, K + 1)]
    except DegenerateSingularValues as exc:
        out.failure = f"DegenerateSingularValues: {exc}"
        return out
    D = total_quantization_error(H_list, ideal)
    out.delta_tot = float(np.linalg.norm(D))
    Ps = db_to_linear(snr_db)
    exact, lower, closed = (np.zeros((Ps.size, K)) for _ in range(3))
    for p, P in enumerate(Ps):
        g = relay_gains(H_list, P)
        af = af_noise_power(g, H_list)
        lo, cl = sinr_bounds(g, H, np.prod(g) * D, af, P)
        exact[p] = np.log2(1 + destination_sinr(g, H_list, P))
        lower[p] = np.log2(1 + lo)
        closed[p] = np.log2(1 + cl)
    out.rates, out.lower_rates, out.closed_rates = exact, lower, closed
    return out


def _run_genie(args):
    return genie_trial(*args)


def simulate_khop_genie(K: int, delta: float, window: GatingWindow, snr_db,
                        trials: int, seed: int = 0, workers: int = 1) -> RateReport:
    """Monte Carlo rates of the paired scheme with bin matching realised directly.

    The fitted slope uses the exact per-destination SINR; the quantization
    lower bound and its closed form are kept in ``extras``.
    """
    _check_khop(K, delta)
    snr_db = np.asarray(snr_db, dtype=float)
    args = [(K, delta, window, snr_db, ss) for ss in spawn_seeds(seed, trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            res = list(ex.map(_run_genie, args, chunksize=max(1, trials // (4 * workers))))
    else:
        res = [_run_genie(a) for a in args]
    ok = [r for r in res if r.failure is None]
    shape = (-1, snr_db.size, K)
    report = RateReport(scheme="khop-genie", K=K, L=K, snr_db=snr_db,
                        samples=np.array([r.rates for r in ok]).reshape(shape),
                        trials=trials, failures=len(res) - len(ok), seed=seed)
    lower = np.array([r.lower_rates for r in ok]).reshape(shape)
    closed = np.array([r.closed_rates for r in ok]).reshape(shape)
    report.extras = {
        "delta": delta,
        "lower_bound_samples": lower,
        "closed_form_samples": closed,
        "delta_tot": np.array([r.delta_tot for r in ok]),
        "rejected_draws": sum(r.rejected for r in res),
        "failure_reasons": [r.failure for r in res if r.failure],
    }
    if ok and snr_db.size >= 3 and np.ptp(snr_db) >= 20:
        report.fit(seed=seed)
        for name, arr in (("lower_bound", lower), ("closed_form", closed)):
            sub = RateReport(report.scheme, K, K, snr_db, arr, trials).fit(seed=seed)
            report.extras[f"{name}_slope"] = (sub.slope, sub.slope_hw)
    return report


def median_delta_tot(K: int, delta: float, draws: int, seed: int = 0,
                     window: GatingWindow = GatingWindow(0.05, 3.0)) -> float:
    """Median ``||Delta_tot||_F`` of the genie-paired chain at pitch `delta`."""
    vals = []
    for ss in spawn_seeds(seed, draws):
        r = genie_trial(K, delta, window, [0.0], ss)
        if r.failure is None:
            vals.append(r.delta_tot)
    return float(np.median(vals))


# ---------------------------------------------------------------------------
# queued matching


def k2_delta_tot_bound(b: QuantizedBin) -> float:
    """Worst-case ``||Delta_tot||_F`` over a 2x2 quantizer cell.

    For ``K = 2``, ``F_2(H) = phi(H) adj(H)`` with ``phi = conj(det H)/|det H|``,
    and ``adj`` is a Frobenius isometry. For ``H, H'`` in a cell of Frobenius
    radius ``r`` around ``c``, with ``E = H' - H`` and ``||E|| <= 2r``:

        ||F_2(H') - F_2(H)|| <= 2r + |phi' - phi| ||H||
        |phi' - phi|         <= min(2, 2 |det H' - det H| / |det H|)
        |det H' - det H|     <= 2r ||H|| + 2r^2

    using ``||H|| <= ||c|| + r`` and ``|det H| >= |det c| - r||c|| - r^2/2``.
    Finally ``||Delta_tot|| <= ||F_2(H') - F_2(H)|| ||H||``.
    """
    c = b.representative
    if c.shape != (2, 2):
        raise ValueError("the cell bound is derived for K = 2 only")
    r = 2 * b.delta / np.sqrt(2)
    f_hi = np.linalg.norm(c) + r
    d_lo = abs(np.linalg.det(c)) - r * np.linalg.norm(c) - r * r / 2
    phase = 2.0
    if d_lo > 0:
        phase = min(phase, 2 * (2 * r * f_hi + 2 * r * r) / d_lo)
    return float((2 * r + phase * f_hi) * f_hi)


def invert_pairing_stage_batch(H_m: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`invert_pairing_stage` over a stack ``(B, K, K)``.

    Returns the inverted stack and a mask of valid entries; matrices with
    tied singular values (including scaled unitaries) are flagged invalid.
    """
    H_m = np.asarray(H_m, dtype=complex)
    K = H_m.shape[-1]
    if not 1 <= m <= K:
        raise ValueError(f"stage index must lie in 1..{K}, got {m}")
    U, s, Vh = np.linalg.svd(H_m)
    gaps = np.abs(np.diff(s, axis=-1))
    ok = np.all(gaps > SV_TIE_TOL * s[..., :1], axis=-1)
    if m == 1:
        return H_m.copy(), ok
    V = Vh.conj().swapaxes(-1, -2)
    idx = (np.arange(K) + m - 1) % K
    left, right = U[..., idx], V[..., idx]
    if m % 2:
        out = (left * s[..., None, :]) @ right.conj().swapaxes(-1, -2)
    else:
        out = (right * s[..., None, :]) @ left.conj().swapaxes(-1, -2)
    return out, ok


def _bin_codes(H: np.ndarray, delta: float) -> np.ndarray:
    """Integer lattice codes of a stack, shape ``(B, 2, K*K)``."""
    B = H.shape[0]
    re = _round_half_away(H.real / delta).reshape(B, -1)
    im = _round_half_away(H.imag / delta).reshape(B, -1)
    return np.stack([re, im], axis=1).astype(np.int64)


def _code_key(code: np.ndarray) -> tuple:
    return (tuple(code[0].tolist()), tuple(code[1].tolist()))


@dataclass
class LayerQueue:
    """Per-bin FIFO buffers at one relay layer."""

    capacity: int = 1024
    buffers: dict = field(default_factory=lambda: defaultdict(deque))
    enqueued: int = 0
    forwarded: int = 0
    dropped: int = 0
    pending: int = 0

    def push(self, key, block) -> bool:
        self.enqueued += 1
        q = self.buffers[key]
        if len(q) >= self.capacity:
            self.dropped += 1
            return False
        q.append(block)
        self.pending += 1
        return True

    def pop(self, key):
        q = self.buffers.get(key)
        if not q:
            return None
        self.forwarded += 1
        self.pending -= 1
        block = q.popleft()
        if not q:
            del self.buffers[key]
        return block

    def conserved(self) -> bool:
        """Counter identity plus a recount of what the buffers actually hold."""
        held = sum(len(q) for q in self.buffers.values())
        return (held == self.pending
                and self.enqueued == self.forwarded + self.pending + self.dropped)


@dataclass
class Block:
    t0: int
    key: tuple
    hops: list
    t_done: int = -1


def simulate_khop_queued(K: int, delta: float, window: GatingWindow, snr_db,
                         horizon: int, seed: int = 0, capacity: int = 1024) -> RateReport:
    """Time-stepped matching of blocks through per-bin relay queues.

    At every step each hop draws a fresh channel. Sources inject a block
    when the first-hop bin is admitted; layer ``m`` forwards the oldest
    block of bin ``b`` when the stage-inverted hop-``m`` channel falls in
    ``b``. Delivered blocks carry their realised hop matrices.
    """
    _check_khop(K, delta)
    snr_db = np.asarray(snr_db, dtype=float)
    rng = as_rng(seed)
    queues = [LayerQueue(capacity) for _ in range(K - 1)]
    delivered: list[Block] = []
    conserved = True
    injected = 0
    norm_lo, norm_hi = window.g_min * K, window.g_max * K
    chunk = 8192
    for t0 in range(0, horizon, chunk):
        n = min(chunk, horizon - t0)
        Hs = complex_normal(rng, (n, K, K, K))
        # bin codes per hop: hop 1 directly, later hops after stage inversion
        codes, valid = [_bin_codes(Hs[:, 0], delta)], [None]
        for m in range(2, K + 1):
            inv, ok = invert_pairing_stage_batch(Hs[:, m - 1], m)
            codes.append(_bin_codes(inv, delta))
            valid.append(ok)
        rep_norm = delta * np.linalg.norm(codes[0].reshape(n, -1), axis=1)
        admit = (rep_norm >= norm_lo) & (rep_norm <= norm_hi)
        for step in range(n):
            t = t0 + step
            # later layers first so a block advances at most one hop per step
            for m in range(K, 1, -1):
                if not valid[m - 1][step]:
                    continue
                key = _code_key(codes[m - 1][step])
                blk = queues[m - 2].pop(key)
                if blk is None:
                    continue
                blk.hops.append(Hs[step, m - 1])
                if m == K:
                    blk.t_done = t
                    delivered.append(blk)
                else:
                    queues[m - 1].push(key, blk)
            if admit[step]:
                key = _code_key(codes[0][step])
                injected += 1
                queues[0].push(key, Block(t, key, [Hs[step, 0]]))
            # no block is created or lost between layers
            conserved &= injected == len(delivered) + sum(q.pending + q.dropped
                                                          for q in queues)
        conserved &= all(q.conserved() for q in queues)
    if not delivered:
        raise RuntimeError(
            f"no block delivered within horizon {horizon}; the pitch {delta} is too fine")

    Ps = db_to_linear(snr_db)
    samples = np.zeros((len(delivered), Ps.size, K))
    residuals, bounds = [], []
    for n, blk in enumerate(delivered):
        H = blk.hops[0]
        lam = abs(np.linalg.det(H))
        residuals.append(float(np.linalg.norm(chain_product(blk.hops) - lam * np.eye(K))))
        qb = QuantizedBin(delta, blk.key)
        bounds.append(k2_delta_tot_bound(qb) if K == 2 else float("inf"))
        for p, P in enumerate(Ps):
            g = relay_gains(blk.hops, P)
            samples[n, p] = np.log2(1 + destination_sinr(g, blk.hops, P))
    report = RateReport(scheme="khop-queued", K=K, L=K, snr_db=snr_db, samples=samples,
                        trials=len(delivered), failures=0, seed=seed)
    report.extras = {
        "delta": delta,
        "horizon": horizon,
        "injected": injected,
        "delivered": len(delivered),
        "throughput": len(delivered) / horizon,
        "conserved": bool(conserved),
        "queues": [(q.enqueued, q.forwarded, q.pending, q.dropped) for q in queues],
        "residuals": np.array(residuals),
        "bounds": np.array(bounds),
        "match_delay_mean": float(np.mean([b.t_done - b.t0 for b in delivered])),
    }
    if snr_db.size >= 3 and np.ptp(snr_db) >= 20:
        report.fit(seed=seed)
    return report


def simulate_khop(K: int, delta: float, window: GatingWindow, snr_db, trials: int,
                  mode: str = "genie", seed: int = 0, horizon: int = 100_000,
                  workers: int = 1) -> RateReport:
    if mode == "genie":
        return simulate_khop_genie(K, delta, window, snr_db, trials, seed, workers)
    if mode == "queued":
        return simulate_khop_queued(K, delta, window, snr_db, horizon, seed)
    raise ValueError(f"mode must be 'genie' or 'queued', got {mode!r}")


def distribution_symmetry_check(samples: int, m: int, seed: int = 0, K: int = 2) -> dict:
    """Compare ``F_m(H)`` with fresh Rayleigh draws.

    Reports the largest relative Frobenius-norm mismatch, a pooled two-sample
    KS test over all real and imaginary parts, and per-entry KS p-values.
    """
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    if not 1 <= m <= K:
        raise ValueError(f"stage index must lie in 1..{K}, got {m}")
    rng = as_rng(seed)
    Hs = complex_normal(rng, (samples, K, K))
    fresh = complex_normal(rng, (samples, K, K))
    Fm = np.array([F(H, m) for H in Hs])
    norm_err = np.abs(np.linalg.norm(Fm, axis=(1, 2)) - np.linalg.norm(Hs, axis=(1, 2)))
    norm_err /= np.linalg.norm(Hs, axis=(1, 2))

    def parts(A):
        return np.concatenate([A.real.reshape(samples, -1), A.imag.reshape(samples, -1)], axis=1)

    a, b = parts(Fm), parts(fresh)
    pooled = stats.ks_2samp(a.ravel(), b.ravel())
    per_entry = [stats.ks_2samp(a[:, c], b[:, c]).pvalue for c in range(a.shape[1])]
    return {
        "K": K,
        "m": m,
        "samples": samples,
        "max_norm_error": float(norm_err.max()),
        "ks_statistic": float(pooled.statistic),
        "ks_pvalue": float(pooled.pvalue),
        "entry_pvalues": per_entry,
    }
