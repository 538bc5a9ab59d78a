"""Closed-form grouped-alignment transceivers.

The construction works per provider/receiver cell pair: all users of the
provider cell solve one stacked linear system so their interference at the
receiver's base station collapses into a common d_s-dimensional subspace,
after which zero-forcing decoders remove everything in closed form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentFailure,
    ContractViolation,
    DegenerateChannel,
    InfeasibleConfig,
    RankDeficient,
)
from .linalg import (
    chordal_distance_sq,
    herm_inv_sqrt,
    matrix_rank,
    orthonormalize,
    full_svd,
)
from .system import ChannelRealization, SystemConfig

ALIGN_TOL = 1e-8


def log_scale(log_base) -> float:
    """Multiplier converting nats to the requested rate unit."""
    if log_base in ("e", None):
        return 1.0
    if log_base in (2, "2"):
        return 1.0 / math.log(2.0)
    raise ContractViolation(f"unsupported log base {log_base!r}")


def rate_logdet(M: np.ndarray, scale: float, log_base="e") -> float:
    """log det(I + scale * M M^H) evaluated through Hermitian eigenvalues."""
    gram = M @ M.conj().T
    ev = np.linalg.eigvalsh((gram + gram.conj().T) / 2.0)
    ev = np.clip(ev.real, 0.0, None)
    return float(np.sum(np.log1p(scale * ev))) * log_scale(log_base)


@dataclass
class TransceiverSet:
    """All per-cell and per-user filters for one assignment on one realization."""

    assignment: object
    inner: dict          # cell k -> (L*N_U, d_s) joint precoder
    patterns: dict       # (i, k) -> (N_U, d_s) semi-unitary precoder pattern
    precoders: dict      # (i, k) -> power-scaled precoder sqrt(P/d_s) * pattern
    decoders: dict       # (i, k) -> (N_B, d_s) semi-unitary zero-forcing decoder
    aligned: dict        # provider cell -> aligned-interference basis at its receiver


def stack_alignment_matrix(ch: ChannelRealization, provider: int, receiver: int) -> np.ndarray:
    """Block system whose null space aligns all provider-cell users at the receiver.

    Row block j pins user j+1's image to user 0's image:
    [H_1 .. -H_{j+1} .. 0]. Shape (L-1)N_B x L N_U; empty for L = 1.
    """
    if provider == receiver:
        raise ContractViolation("a cell cannot align interference to itself")
    L, N_B, N_U = ch.H.shape[0], ch.H.shape[3], ch.H.shape[4]
    A = np.zeros(((L - 1) * N_B, L * N_U), dtype=complex)
    for j in range(L - 1):
        A[j * N_B:(j + 1) * N_B, 0:N_U] = ch.H[0, provider, receiver]
        A[j * N_B:(j + 1) * N_B, (j + 1) * N_U:(j + 2) * N_U] = -ch.H[j + 1, provider, receiver]
    return A


def inner_precoder(A: np.ndarray, d_s: int) -> np.ndarray:
    """d_s orthonormal null-space directions of the stacked alignment system.

    Deterministic: the right singular vectors belonging to the d_s smallest
    singular values, ties resolved by index.
    """
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n, dtype=complex)[:, :d_s]
    _, s, Vh = full_svd(A)
    null_dim = n - matrix_rank(s)
    if null_dim < d_s:
        raise InfeasibleConfig(
            f"alignment system null space has dimension {null_dim} < d_s={d_s}"
        )
    return Vh[n - d_s:, :].conj().T


def user_pattern(V_in: np.ndarray, i: int, n_user_antennas: int) -> np.ndarray:
    """Semi-unitary pattern of user i: orthonormalized slice of the joint precoder."""
    block = V_in[i * n_user_antennas:(i + 1) * n_user_antennas, :]
    try:
        return orthonormalize(block)
    except RankDeficient as exc:
        raise DegenerateChannel(f"user {i} precoder slice is rank deficient") from exc


def full_precoder(pattern: np.ndarray, P: float, d_s: int) -> np.ndarray:
    """Uniform power loading: sqrt(P/d_s) times the pattern."""
    return math.sqrt(P / d_s) * pattern


def aligned_interference_basis(
    ch: ChannelRealization,
    provider: int,
    receiver: int,
    V_in: np.ndarray,
    tol: float = ALIGN_TOL,
) -> np.ndarray:
    """Orthonormal basis of the common interference span at the receiver.

    Verifies that every provider-cell user lands in the same subspace and
    raises :class:`AlignmentFailure` otherwise (numerical breakdown).
    """
    L, N_U = ch.H.shape[0], ch.H.shape[4]
    try:
        basis = orthonormalize(ch.H[0, provider, receiver] @ V_in[0:N_U, :])
        for i in range(1, L):
            image = ch.H[i, provider, receiver] @ V_in[i * N_U:(i + 1) * N_U, :]
            dist = chordal_distance_sq(basis, orthonormalize(image))
            if dist > tol:
                raise AlignmentFailure(
                    f"user {i} of cell {provider} misaligned at cell {receiver}: "
                    f"chordal distance^2 {dist:.3e}"
                )
    except RankDeficient as exc:
        raise DegenerateChannel("aligned interference image is rank deficient") from exc
    return basis


def select_null_basis(F: np.ndarray, d_s: int) -> np.ndarray:
    """Deterministic d_s-dimensional left-null basis of an interference stack.

    Picks the left singular vectors of the d_s smallest singular values. When
    the stack is rank deficient beyond its generic rank the pick is still the
    canonical one, with a warning.
    """
    m = F.shape[0]
    U, s, _ = full_svd(F)
    rank = matrix_rank(s)
    null_dim = m - rank
    if null_dim < d_s:
        raise InfeasibleConfig(
            f"interference stack leaves a {null_dim}-dimensional null space, need {d_s}"
        )
    if rank < min(F.shape) and null_dim > d_s:
        warnings.warn(
            f"interference stack unexpectedly rank deficient ({rank} < {min(F.shape)}); "
            f"using canonical smallest-singular-value directions",
            RuntimeWarning,
        )
    return U[:, m - d_s:]


def zf_decoder(
    ch: ChannelRealization,
    assignment,
    patterns: dict,
    aligned: dict,
    i: int,
    k: int,
    d_s: int,
) -> np.ndarray:
    """Zero-forcing decoder for user (i, k) under perfect pattern knowledge.

    Nulls, in order: same-cell interference from other users, per-user
    interference from every cell that is neither k nor k's provider, and the
    aligned subspace contributed by the provider.
    """
    L, K = ch.H.shape[0], ch.H.shape[1]
    prov = assignment.provider(k)
    blocks = []
    for j in range(L):
        if j != i:
            blocks.append(ch.H[j, k, k] @ patterns[(j, k)])
    for l in range(K):
        if l == k or l == prov:
            continue
        for m in range(L):
            blocks.append(ch.H[m, l, k] @ patterns[(m, l)])
    blocks.append(aligned[prov])
    return select_null_basis(np.concatenate(blocks, axis=1), d_s)


def build_potentials(
    ch: ChannelRealization, cfg: SystemConfig, pairs=None
) -> dict:
    """Inner precoders for candidate (provider, receiver) pairs.

    With pairs=None every ordered pair is computed, which is what the
    matching and centralized schemes consume.
    """
    if pairs is None:
        pairs = [(p, r) for p in range(cfg.K) for r in range(cfg.K) if p != r]
    return {
        (p, r): inner_precoder(stack_alignment_matrix(ch, p, r), cfg.d_s)
        for (p, r) in pairs
    }


def build_transceivers(
    ch: ChannelRealization,
    cfg: SystemConfig,
    assignment,
    potentials: dict | None = None,
) -> TransceiverSet:
    """Complete transceiver set for a strict assignment on one realization."""
    if not assignment.is_strict(cfg.K):
        raise ContractViolation("transceiver construction needs a strict assignment")
    receiver_of = assignment.receivers()
    inner = {}
    for k in range(cfg.K):
        r = receiver_of[k]
        if potentials is not None and (k, r) in potentials:
            inner[k] = potentials[(k, r)]
        else:
            inner[k] = inner_precoder(stack_alignment_matrix(ch, k, r), cfg.d_s)
    patterns = {
        (i, k): user_pattern(inner[k], i, cfg.N_U)
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    precoders = {
        key: full_precoder(pat, cfg.P, cfg.d_s) for key, pat in patterns.items()
    }
    aligned = {
        k: aligned_interference_basis(ch, k, receiver_of[k], inner[k])
        for k in range(cfg.K)
    }
    decoders = {
        (i, k): zf_decoder(ch, assignment, patterns, aligned, i, k, cfg.d_s)
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    return TransceiverSet(
        assignment=assignment,
        inner=inner,
        patterns=patterns,
        precoders=precoders,
        decoders=decoders,
        aligned=aligned,
    )


def user_rate(
    ch: ChannelRealization,
    tset: TransceiverSet,
    i: int,
    k: int,
    cfg: SystemConfig,
    log_base="e",
) -> tuple[float, np.ndarray]:
    """Achievable rate of user (i, k) and its effective channel.

    Uses the effective-channel form: the decoder output channel composed
    with the uniform-power outer scaling. Numerically equal to evaluating
    the plain log-det rate on decoder, direct channel and full precoder.
    """
    U = tset.decoders[(i, k)]
    slice_ik = tset.inner[k][i * cfg.N_U:(i + 1) * cfg.N_U, :]
    H_eff = U.conj().T @ ch.H[i, k, k] @ slice_ik
    V_out = math.sqrt(cfg.P / cfg.d_s) * herm_inv_sqrt(slice_ik.conj().T @ slice_ik)
    rate = rate_logdet(H_eff @ V_out, 1.0 / cfg.sigma2, log_base)
    return rate, H_eff


def rate_from_link(
    U: np.ndarray, H_direct: np.ndarray, V_full: np.ndarray, sigma2: float, log_base="e"
) -> float:
    """Plain per-user rate log det(I + (1/sigma2) (U^H H V)(U^H H V)^H)."""
    return rate_logdet(U.conj().T @ H_direct @ V_full, 1.0 / sigma2, log_base)


def effective_link_gains(
    ch: ChannelRealization, tset: TransceiverSet, i: int, k: int
) -> np.ndarray:
    """Eigenvalues of (U^H H pattern)(...)^H: rate at power P is
    sum(log1p(P/(d_s sigma2) * gains)), handy for sweeping SNR on one build."""
    M0 = tset.decoders[(i, k)].conj().T @ ch.H[i, k, k] @ tset.patterns[(i, k)]
    gram = M0 @ M0.conj().T
    return np.clip(np.linalg.eigvalsh((gram + gram.conj().T) / 2.0).real, 0.0, None)


@dataclass(frozen=True)
class AlignmentReport:
    """Worst-case leakage and desired-link conditioning over all users."""

    max_iui_residual: float
    max_ici_residual: float
    min_desired_sv: float      # smallest d_s-th singular value of U^H H V over users
    min_desired_ratio: float   # min over users of sigma_{d_s} / sigma_1

    @property
    def max_residual(self) -> float:
        return max(self.max_iui_residual, self.max_ici_residual)


def verify_alignment(
    ch: ChannelRealization, tset: TransceiverSet, cfg: SystemConfig
) -> AlignmentReport:
    """Measure every interference-nulling condition and the desired-link rank."""
    K, L = cfg.K, cfg.L
    max_iui = 0.0
    max_ici = 0.0
    min_sv = math.inf
    min_ratio = math.inf
    for k in range(K):
        for i in range(L):
            U = tset.decoders[(i, k)]
            for l in range(K):
                for m in range(L):
                    if (m, l) == (i, k):
                        continue
                    resid = float(
                        np.linalg.norm(U.conj().T @ ch.H[m, l, k] @ tset.precoders[(m, l)])
                    )
                    if l == k:
                        max_iui = max(max_iui, resid)
                    else:
                        max_ici = max(max_ici, resid)
            s = np.linalg.svd(
                U.conj().T @ ch.H[i, k, k] @ tset.precoders[(i, k)], compute_uv=False
            )
            min_sv = min(min_sv, float(s[cfg.d_s - 1]))
            min_ratio = min(min_ratio, float(s[cfg.d_s - 1] / s[0]))
    return AlignmentReport(
        max_iui_residual=max_iui,
        max_ici_residual=max_ici,
        min_desired_sv=min_sv,
        min_desired_ratio=min_ratio,
    )
