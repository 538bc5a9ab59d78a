"""System configuration, feasibility checks and random channel generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, InfeasibleConfig
from .linalg import complex_gaussian


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and powers of a K-cell interfering MIMO uplink cluster.

    K cells, L users per cell, N_B antennas per base station, N_U antennas
    per user, d_s streams per user. All users share the transmit power P and
    all base stations the noise power sigma2 (both linear).
    """

    K: int
    L: int
    N_B: int
    N_U: int
    d_s: int
    P: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if self.K < 3:
            raise ContractViolation("need at least 3 cells")
        if self.L < 1 or self.d_s < 1 or self.N_B < 1 or self.N_U < 1:
            raise ContractViolation("counts must be positive")
        if self.P <= 0 or self.sigma2 <= 0:
            raise ContractViolation("powers must be positive")

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.P / self.sigma2)

    @property
    def snr(self) -> float:
        return self.P / self.sigma2

    @property
    def user_count(self) -> int:
        return self.K * self.L

    def at_snr_db(self, snr_db: float) -> "SystemConfig":
        """Same system with transmit power set so that P/sigma2 hits snr_db."""
        return replace(self, P=self.sigma2 * 10.0 ** (snr_db / 10.0))

    def user_index(self, i: int, k: int) -> int:
        """Flat index of user (i, k) in (cell, user) order."""
        return k * self.L + i


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of the two alignment feasibility inequalities plus derived limits."""

    user_antennas_ok: bool       # L*N_U >= (L-1)*N_B + d_s
    bs_antennas_ok: bool         # N_B >= ((K-1)L + 1) d_s
    worst_case: bool             # both inequalities tight (minimum antennas)
    max_streams: int             # largest supportable d_s for these antennas
    min_user_antennas: int       # smallest N_U supporting d_s at minimal N_B
    max_users_per_cell: int | None
    max_cells: int

    @property
    def feasible(self) -> bool:
        return self.user_antennas_ok and self.bs_antennas_ok


def validate_feasibility(cfg: SystemConfig) -> FeasibilityReport:
    """Check whether the grouped alignment supports d_s streams per user."""
    K, L, N_B, N_U, d_s = cfg.K, cfg.L, cfg.N_B, cfg.N_U, cfg.d_s
    user_ok = L * N_U >= (L - 1) * N_B + d_s
    bs_ok = N_B >= ((K - 1) * L + 1) * d_s
    min_nb = ((K - 1) * L + 1) * d_s
    min_nu = -(-((L - 1) * N_B + d_s) // L)  # ceil over integers
    worst = N_B == min_nb and N_U == min_nu
    max_streams = min(L * N_U - (L - 1) * N_B, N_B // ((K - 1) * L + 1))
    min_user_antennas = ((L - 1) * (K - 1) + 1) * d_s
    if N_B > N_U:
        max_users = min((N_B - d_s) // (N_B - N_U), (N_B - d_s) // ((K - 1) * d_s))
    else:
        max_users = None  # first constraint vacuous when users match BS antennas
    max_cells = (N_B - d_s) // (L * d_s) + 1
    return FeasibilityReport(
        user_antennas_ok=user_ok,
        bs_antennas_ok=bs_ok,
        worst_case=worst,
        max_streams=max_streams,
        min_user_antennas=min_user_antennas,
        max_users_per_cell=max_users,
        max_cells=max_cells,
    )


def require_feasible(cfg: SystemConfig) -> FeasibilityReport:
    report = validate_feasibility(cfg)
    if not report.feasible:
        raise InfeasibleConfig(
            f"(K,L,N_B,N_U,d_s)=({cfg.K},{cfg.L},{cfg.N_B},{cfg.N_U},{cfg.d_s}) "
            f"violates the alignment dimension conditions"
        )
    return report


@dataclass(frozen=True)
class ChannelRealization:
    """One quasi-static channel draw.

    H has shape (L, K, K, N_B, N_U); H[i, k, l] is the channel from user
    (i, k) to base station l, already scaled by sqrt(eta). eta has shape
    (L, K, K) with eta[i, k, k] = 1 on direct links.
    """

    H: np.ndarray
    eta: np.ndarray

    def link(self, i: int, k: int, l: int) -> np.ndarray:
        return self.H[i, k, l]


def trial_rng(seed: int, trial_index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based substream: independent of call order across trials."""
    return np.random.default_rng([seed, trial_index, stream])


def draw_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Rayleigh-fading draw: unit direct-link path loss, uniform cross-link loss."""
    K, L = cfg.K, cfg.L
    Hbar = complex_gaussian(rng, (L, K, K, cfg.N_B, cfg.N_U))
    eta = rng.uniform(0.0, 1.0, size=(L, K, K))
    for k in range(K):
        eta[:, k, k] = 1.0
    H = np.sqrt(eta)[..., None, None] * Hbar
    return ChannelRealization(H=H, eta=eta)


def load_run_config(path: str) -> dict:
    """Read a run configuration file (JSON).

    Recognized keys: K, L, N_B, N_U, d_s, snr_db (scalar or [start, step, end]),
    seed, trials. Unknown keys are rejected to catch typos.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    allowed = {"K", "L", "N_B", "N_U", "d_s", "snr_db", "seed", "trials"}
    unknown = set(raw) - allowed
    if unknown:
        raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
    return raw
