"""Monte-Carlo experiment driver.

Runs seeded trials end to end (channel draw, assignment, transceivers,
optional quantized feedback, rates and residual interference), aggregates
them over sweep grids and emits deterministic CSV. Two non-alignment
baselines are included for comparison curves, plus the closed-form backhaul
overhead accounting per assignment scheme.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import assignment as asg
from . import feedback as fb
from . import gia
from .errors import ContractViolation, DegenerateChannel
from .linalg import complex_gaussian, orthonormalize
from .system import (
    ChannelRealization,
    SystemConfig,
    draw_channels,
    require_feasible,
    trial_rng,
)

ASSIGNMENT_SCHEMES = (
    "fixed",
    "one_sided",
    "two_sided",
    "centralized_sum",
    "centralized_min",
    "worst_sum",
    "worst_min",
    "rb",
    "fdma",
)

CSV_COLUMNS = (
    "variable",
    "value",
    "scheme",
    "r_sum",
    "r_sum_stderr",
    "r_min",
    "r_min_stderr",
    "rinr_db",
    "bound_db",
    "trials",
    "resamples",
)


@dataclass(frozen=True)
class SchemeSpec:
    """How one curve is produced: assignment rule plus feedback setup."""

    assignment: str = "fixed"
    bit_alloc: str = "none"        # none | dba | eba
    bits_budget: int = 0
    codebook_seed: int = 1
    c_coeff: float = 1.0
    proposer: str = "receivers"
    explicit_bit_limit: int = 12   # above this, random-codebook search is emulated

    def __post_init__(self):
        if self.assignment not in ASSIGNMENT_SCHEMES:
            raise ContractViolation(f"unknown assignment scheme {self.assignment!r}")
        if self.bit_alloc not in ("none", "dba", "eba"):
            raise ContractViolation(f"unknown bit allocation {self.bit_alloc!r}")

    @property
    def label(self) -> str:
        if self.bit_alloc == "none":
            return self.assignment
        return f"{self.assignment}+{self.bit_alloc}"


@dataclass
class TrialResult:
    """Everything measured on one channel realization."""

    scheme: str
    trial_index: int
    user_rates: dict
    cell_rates: dict
    sum_rate: float
    min_cell_rate: float
    assignment: asg.Assignment | None = None
    rinr_per_cell: dict | None = None
    bound_per_cell: dict | None = None
    bits: np.ndarray | None = None
    stability: dict = field(default_factory=dict)
    resamples: int = 0

    @property
    def rinr_total(self) -> float | None:
        if self.rinr_per_cell is None:
            return None
        return sum(self.rinr_per_cell.values())

    @property
    def bound_total(self) -> float | None:
        if self.bound_per_cell is None:
            return None
        return sum(self.bound_per_cell.values())


def residual_covariance(
    ch: ChannelRealization,
    decoders: dict,
    tx_patterns: dict,
    i: int,
    k: int,
    cfg: SystemConfig,
) -> np.ndarray:
    """Covariance of all non-desired signals after the decoder, noise-normalized."""
    U = decoders[(i, k)]
    scale = cfg.P / (cfg.d_s * cfg.sigma2)
    C = np.zeros((cfg.d_s, cfg.d_s), dtype=complex)
    for l in range(cfg.K):
        for j in range(cfg.L):
            if (j, l) == (i, k):
                continue
            X = U.conj().T @ ch.H[j, l, k] @ tx_patterns[(j, l)]
            C += scale * (X @ X.conj().T)
    return C


def throughput(
    ch: ChannelRealization,
    decoders: dict,
    tx_patterns: dict,
    i: int,
    k: int,
    cfg: SystemConfig,
    log_base="e",
) -> float:
    """Rate of user (i, k) treating residual interference as noise.

    Evaluated as logdet(I + C + A) - logdet(I + C) with A the desired-signal
    covariance and C the residual covariance; both arguments are Hermitian
    positive definite, which keeps the evaluation stable. With perfect
    feedback C vanishes on the desired links and this reduces to the
    alignment rate.
    """
    U = decoders[(i, k)]
    S = U.conj().T @ ch.H[i, k, k] @ tx_patterns[(i, k)]
    A = (cfg.P / (cfg.d_s * cfg.sigma2)) * (S @ S.conj().T)
    C = residual_covariance(ch, decoders, tx_patterns, i, k, cfg)
    eye = np.eye(cfg.d_s)

    def _logdet(Mh):
        ev = np.linalg.eigvalsh((Mh + Mh.conj().T) / 2.0)
        return float(np.sum(np.log(np.clip(ev.real, 1e-300, None))))

    return (_logdet(eye + C + A) - _logdet(eye + C)) * gia.log_scale(log_base)


@lru_cache(maxsize=128)
def _cached_codebook(M: int, N: int, B: int, user_key: int, seed: int) -> fb.Codebook:
    rng = np.random.default_rng([seed, 101, user_key, B])
    return fb.generate_codebook(M, N, B, rng)


def _quantize_patterns(
    patterns: dict, alloc: fb.BitAllocation, cfg: SystemConfig, scheme: SchemeSpec, trial_index: int
) -> tuple[dict, dict]:
    """Quantize every pattern at its allocated bit count.

    Explicit codebook search below the limit; calibrated emulation above it.
    Codebooks are fixed per (user, bit count) across trials, as offline books
    would be.
    """
    q, dist = {}, {}
    for k in range(cfg.K):
        for i in range(cfg.L):
            bits = alloc.of_user(cfg, i, k)
            user_key = cfg.user_index(i, k)
            V = patterns[(i, k)]
            if bits <= scheme.explicit_bit_limit:
                cb = _cached_codebook(cfg.N_U, cfg.d_s, bits, user_key, scheme.codebook_seed)
                _, V_hat, d = fb.quantize(V, cb)
            else:
                rng = np.random.default_rng([scheme.codebook_seed, 211, trial_index, user_key])
                V_hat, d = fb.model_quantize(V, bits, rng)
            q[(i, k)] = V_hat
            dist[(i, k)] = d
    return q, dist


def _choose_assignment(
    ch: ChannelRealization, cfg: SystemConfig, scheme: SchemeSpec, potentials: dict
):
    """Returns (strict assignment, preference profile or None, stability verdicts)."""
    stability = {}
    if scheme.assignment == "fixed":
        return asg.fixed_cyclic(cfg.K), None, stability
    if scheme.assignment == "one_sided":
        prefs = asg.build_preferences(ch, cfg, potentials, two_sided=False)
        weak, _ = asg.fca_match(prefs)
        if cfg.K <= 6:
            stability["one_sided"] = asg.is_stable(weak, prefs, "one_sided")
        return asg.breaking_step(weak, prefs), prefs, stability
    if scheme.assignment == "two_sided":
        prefs = asg.build_preferences(ch, cfg, potentials, two_sided=True)
        matched, _ = asg.gale_shapley(prefs, scheme.proposer)
        if matched.lone is None:
            stability["two_sided"] = asg.is_stable(matched, prefs, "two_sided")
        return asg.breaking_step(matched, prefs), prefs, stability
    objective = "sum_rate" if scheme.assignment.endswith("_sum") else "min_cell_rate"
    sense = "worst" if scheme.assignment.startswith("worst") else "best"
    chosen, _ = asg.centralized_search(
        ch, cfg, objective=objective, sense=sense, potentials=potentials
    )
    return chosen, None, stability


def _evaluate_trial(
    ch: ChannelRealization,
    cfg: SystemConfig,
    scheme: SchemeSpec,
    trial_index: int,
    rng: np.random.Generator,
    resamples: int,
    log_base,
) -> TrialResult:
    if scheme.assignment == "rb":
        result = baseline_rb(ch, cfg, rng, log_base)
    elif scheme.assignment == "fdma":
        result = baseline_fdma(ch, cfg, log_base)
    else:
        if scheme.assignment == "fixed":
            # the ring only ever uses the K successor pairs
            pairs = [(k, (k + 1) % cfg.K) for k in range(cfg.K)]
            potentials = gia.build_potentials(ch, cfg, pairs)
        else:
            potentials = gia.build_potentials(ch, cfg)
        chosen, _, stability = _choose_assignment(ch, cfg, scheme, potentials)
        tset = gia.build_transceivers(ch, cfg, chosen, potentials)
        if scheme.bit_alloc == "none":
            user_rates = {
                (i, k): gia.user_rate(ch, tset, i, k, cfg, log_base)[0]
                for k in range(cfg.K)
                for i in range(cfg.L)
            }
            result = _pack_result(scheme, trial_index, user_rates, cfg, chosen)
        else:
            result = _limited_feedback_stage(ch, cfg, scheme, trial_index, tset, log_base)
        result.stability = stability
    result.resamples = resamples
    result.trial_index = trial_index
    return result


def _limited_feedback_stage(
    ch: ChannelRealization,
    cfg: SystemConfig,
    scheme: SchemeSpec,
    trial_index: int,
    tset: gia.TransceiverSet,
    log_base,
) -> TrialResult:
    if cfg.N_U <= cfg.d_s:
        raise ContractViolation(
            "limited feedback needs N_U > d_s: with square patterns there is "
            "nothing to quantize"
        )
    chosen = tset.assignment
    receiver_of = chosen.receivers()
    lam = {}
    lam_flat = np.empty(cfg.user_count)
    for k in range(cfg.K):
        r = receiver_of[k]
        for i in range(cfg.L):
            _, lam1 = fb.omega_matrix(ch.H[i, k, r], tset.patterns[(i, k)])
            lam[(i, k)] = lam1
            lam_flat[cfg.user_index(i, k)] = lam1
    if scheme.bit_alloc == "dba":
        alloc = fb.dba_allocate(lam_flat, scheme.bits_budget, cfg.d_s, cfg.N_U)
    else:
        alloc = fb.eba_allocate(scheme.bits_budget, cfg.user_count)
    q_patterns, dist = _quantize_patterns(tset.patterns, alloc, cfg, scheme, trial_index)
    q_decoders = {
        (i, k): fb.quantized_decoder(ch, chosen, q_patterns, tset.patterns, i, k, cfg.d_s)
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    user_rates = {
        (i, k): throughput(ch, q_decoders, q_patterns, i, k, cfg, log_base)
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    rinr_cell, _ = fb.rinr(ch, chosen, q_patterns, q_decoders, cfg)
    bound_cell = fb.rinr_upper_bound(
        ch,
        chosen,
        tset.patterns,
        cfg,
        mode="deterministic",
        dist_sq=dist,
        lambda1=lam,
        c_coeff=scheme.c_coeff,
    )
    result = _pack_result(scheme, trial_index, user_rates, cfg, chosen)
    result.rinr_per_cell = rinr_cell
    result.bound_per_cell = bound_cell
    result.bits = alloc.bits
    return result


def _pack_result(scheme, trial_index, user_rates, cfg, chosen=None) -> TrialResult:
    cell_rates = {
        k: sum(user_rates[(i, k)] for i in range(cfg.L)) for k in range(cfg.K)
    }
    return TrialResult(
        scheme=scheme.label,
        trial_index=trial_index,
        user_rates=user_rates,
        cell_rates=cell_rates,
        sum_rate=sum(user_rates.values()),
        min_cell_rate=min(cell_rates.values()),
        assignment=chosen,
    )


def run_trial(
    cfg: SystemConfig,
    scheme: SchemeSpec,
    trial_index: int,
    seed: int = 0,
    log_base="e",
) -> TrialResult:
    """One fully seeded trial; a degenerate draw is resampled once."""
    require_feasible(cfg)
    last = None
    for attempt in range(2):
        rng = trial_rng(seed, trial_index, stream=attempt)
        ch = draw_channels(cfg, rng)
        try:
            return _evaluate_trial(ch, cfg, scheme, trial_index, rng, attempt, log_base)
        except DegenerateChannel as exc:
            last = exc
    raise DegenerateChannel(
        f"trial {trial_index} (seed {seed}, scheme {scheme.label}) failed twice: {last}"
    )


def baseline_rb(
    ch: ChannelRealization, cfg: SystemConfig, rng: np.random.Generator, log_base="e"
) -> TrialResult:
    """Random subspace precoders with matched-filter receivers (no alignment)."""
    patterns = {}
    for k in range(cfg.K):
        for i in range(cfg.L):
            patterns[(i, k)] = orthonormalize(complex_gaussian(rng, (cfg.N_U, cfg.d_s)))
    decoders = {
        (i, k): orthonormalize(ch.H[i, k, k] @ patterns[(i, k)])
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    user_rates = {
        (i, k): throughput(ch, decoders, patterns, i, k, cfg, log_base)
        for k in range(cfg.K)
        for i in range(cfg.L)
    }
    return _pack_result(SchemeSpec(assignment="rb"), 0, user_rates, cfg)


def baseline_fdma(ch: ChannelRealization, cfg: SystemConfig, log_base="e") -> TrialResult:
    """Orthogonal sharing: each user gets 1/(KL) of the band, eigen-beamforms
    its top d_s modes and spends its full power there (noise scales with the
    band fraction, hence the KL power boost)."""
    n_share = cfg.user_count
    boost = n_share * cfg.P / (cfg.d_s * cfg.sigma2)
    user_rates = {}
    for k in range(cfg.K):
        for i in range(cfg.L):
            Hd = ch.H[i, k, k]
            ev = np.linalg.eigvalsh(Hd.conj().T @ Hd).real
            top = np.clip(ev[::-1][: cfg.d_s], 0.0, None)
            user_rates[(i, k)] = (
                float(np.sum(np.log1p(boost * top))) * gia.log_scale(log_base) / n_share
            )
    return _pack_result(SchemeSpec(assignment="fdma"), 0, user_rates, cfg)


@dataclass(frozen=True)
class OverheadReport:
    """Backhaul cost of one scheme, complex coefficients and bits kept apart."""

    scheme: str
    before_cc: int
    assignment_bits: tuple[int, int] | None  # (min, max); equal when exact
    after_cc: int
    after_bits: int


def backhaul_overhead(scheme: str, cfg: SystemConfig, B: int = 0, N_C: int = 1) -> OverheadReport:
    """Closed-form backhaul accounting for a K-cell cluster."""
    K, L, N_U, N_B, d_s = cfg.K, cfg.L, cfg.N_U, cfg.N_B, cfg.d_s
    if scheme == "one_sided":
        bits = 4 * (K + (N_C - 1))
        return OverheadReport(scheme, 0, (bits, bits), K * L * N_U * d_s, (K - 1) * B)
    if scheme == "two_sided":
        return OverheadReport(
            scheme,
            K * (K - 1) * L * N_U * d_s,
            (4 * K, 4 * (K * K - K + 1)),
            0,
            (K - 1) * B,
        )
    if scheme == "centralized":
        before = (K - 1) ** 2 * L * N_U * d_s + (K - 1) * L * N_U * N_B
        return OverheadReport(scheme, before, (0, 0), (K - 1) * L * N_U * d_s, (K - 1) * B)
    if scheme == "fixed":
        return OverheadReport(scheme, 0, None, K * L * N_U * d_s, 0)
    raise ContractViolation(f"no overhead row for scheme {scheme!r}")


@dataclass(frozen=True)
class Aggregate:
    r_sum: float
    r_sum_stderr: float
    r_min: float
    r_min_stderr: float
    rinr_db: float | None
    bound_db: float | None
    trials: int
    resamples: int


def _mean_stderr(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / math.sqrt(arr.size))


def aggregate_metrics(results) -> Aggregate:
    """Sample means with standard errors; interference reported in dB of the
    mean sum-cluster level."""
    if not results:
        raise ContractViolation("cannot aggregate zero trials")
    r_sum, se_sum = _mean_stderr([r.sum_rate for r in results])
    r_min, se_min = _mean_stderr([r.min_cell_rate for r in results])
    rinr_db = bound_db = None
    if all(r.rinr_total is not None for r in results):
        mean_rinr = float(np.mean([r.rinr_total for r in results]))
        rinr_db = 10.0 * math.log10(mean_rinr) if mean_rinr > 0 else -math.inf
        mean_bound = float(np.mean([r.bound_total for r in results]))
        bound_db = 10.0 * math.log10(mean_bound) if mean_bound > 0 else -math.inf
    return Aggregate(
        r_sum=r_sum,
        r_sum_stderr=se_sum,
        r_min=r_min,
        r_min_stderr=se_min,
        rinr_db=rinr_db,
        bound_db=bound_db,
        trials=len(results),
        resamples=sum(r.resamples for r in results),
    )


@dataclass(frozen=True)
class SweepSpec:
    """Grid definition for one experiment."""

    variable: str               # "snr_db" | "B"
    grid: tuple
    trials: int
    schemes: tuple
    seed: int = 0
    log_base: str = "e"

    def __post_init__(self):
        if self.variable not in ("snr_db", "B"):
            raise ContractViolation(f"unknown sweep variable {self.variable!r}")
        if not self.grid or self.trials < 1:
            raise ContractViolation("sweep needs a nonempty grid and at least one trial")
        if self.variable == "B" and any(s.bit_alloc == "none" for s in self.schemes):
            raise ContractViolation("a bit-budget sweep needs schemes with dba or eba allocation")


def run_sweep(spec: SweepSpec, cfg: SystemConfig, out_path: str | None = None) -> list:
    """Evaluate every (grid point, scheme) cell and return CSV-shaped rows."""
    rows = []
    for value in spec.grid:
        for scheme in spec.schemes:
            point_cfg = cfg.at_snr_db(value) if spec.variable == "snr_db" else cfg
            point_scheme = (
                replace(scheme, bits_budget=int(value)) if spec.variable == "B" else scheme
            )
            results = [
                run_trial(point_cfg, point_scheme, t, spec.seed, spec.log_base)
                for t in range(spec.trials)
            ]
            agg = aggregate_metrics(results)
            rows.append(
                {
                    "variable": spec.variable,
                    "value": value,
                    "scheme": point_scheme.label,
                    "r_sum": agg.r_sum,
                    "r_sum_stderr": agg.r_sum_stderr,
                    "r_min": agg.r_min,
                    "r_min_stderr": agg.r_min_stderr,
                    "rinr_db": agg.rinr_db,
                    "bound_db": agg.bound_db,
                    "trials": agg.trials,
                    "resamples": agg.resamples,
                }
            )
    if out_path is not None:
        write_csv(rows, out_path)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_csv(rows, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    except OSError as exc:
        raise ContractViolation(f"cannot write results to {path}: {exc}") from exc
