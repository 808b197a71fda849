"""Stochastic pulse-by-pulse simulation of the interference benchmark.

The chain per gated pulse: Poisson pair generation (truncated), photon
routing with demultiplexer crosstalk, per-photon channel and coupler
survival, an exact interference draw for the survivors (probabilities
from the `fock` oracle), and finally dark counts OR-ed onto each
threshold detector.

Photons from different pairs of the same pulse are mutually
distinguishable: each pair interferes only internally. Pairs are
independently heralded wavepackets, so a gate with n pairs composes n
independent per-pair click draws. The per-pair click distributions are
exact oracle outputs, which makes the comparison against the closed-form
visibility budget a real cross-check rather than a restatement.

Determinism contract: every public run takes a seed, derives one child
generator per (point, batch) through named SeedSequence spawn keys, and
merges batch counts by commutative addition. Results are bit-for-bit
stable under any worker count; the HOMBENCH_THREADS environment variable
changes speed only.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import fock
from .analytics import (
    CalibrationError,
    amplitude_overlap,
    budget_from_config,
    car_peak_pair_rate,
    indistinguishability,
    invert_car,
    visibility_prediction,
)
from .fitting import FitResult, fit_dip
from .model import ExperimentConfig, validate

SAMPLERS = ("multinomial", "per-gate")

# Pattern vector order everywhere in this module: (no click, B only, A only,
# both). Index arithmetic relies on it.
_P00, _P01, _P10, _P11 = 0, 1, 2, 3


class InsufficientStatisticsError(RuntimeError):
    """A counting run cannot resolve its target quantity.

    `gates_needed` carries an estimate of the gate count that would.
    """

    def __init__(self, message: str, gates_needed: int):
        super().__init__(message)
        self.gates_needed = gates_needed


@dataclass(frozen=True)
class GateRecord:
    """Click outcome of one gated pulse."""

    gate_index: int
    click_a: bool
    click_b: bool


@dataclass(frozen=True)
class ScanPoint:
    """Aggregated counts at one delay setting."""

    delay_ps: float
    gates: int
    coincidences: int
    singles_a: int
    singles_b: int


@dataclass(frozen=True)
class CarResult:
    """Coincidence-to-accidental measurement summary."""

    matched_coincidences: int
    unmatched_coincidences: tuple[int, ...]
    car: float
    p_estimate: float
    gates: int
    singles_a: int
    singles_b: int


@dataclass(frozen=True)
class SweepRow:
    """One pair-rate setting of a visibility sweep."""

    pairs_per_pulse: float
    scan: tuple[ScanPoint, ...]
    fit: FitResult | None
    predicted_visibility: float
    error: str | None = None


def thread_cap() -> int:
    """Worker count for batched runs; HOMBENCH_THREADS overrides."""
    raw = os.environ.get("HOMBENCH_THREADS")
    if raw is None:
        return min(32, os.cpu_count() or 1)
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap < 1:
        raise ValueError(
            f"HOMBENCH_THREADS must be a positive integer (got {raw!r})"
        )
    return cap


def _as_seedseq(seed: int | np.random.SeedSequence) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def _child(base: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=base.entropy, spawn_key=tuple(base.spawn_key) + key
    )


def _rng(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seq))


def folded_poisson(mean: float, max_n: int) -> np.ndarray:
    """Poisson pmf truncated at max_n with the tail folded into the top bin."""
    if mean < 0.0:
        raise ValueError(f"mean must be >= 0 (got {mean!r})")
    pmf = np.array(
        [math.exp(-mean) * mean**n / math.factorial(n) for n in range(max_n + 1)]
    )
    pmf[max_n] += 1.0 - pmf.sum()
    return pmf


def sample_pair_count(p: float, rng: np.random.Generator, max_pairs: int = 3) -> int:
    """One truncated-Poisson pair count; the tail folds into max_pairs."""
    if p < 0.0:
        raise ValueError(f"p must be >= 0 (got {p!r})")
    return int(min(rng.poisson(p), max_pairs))


def _vec(pattern: dict[tuple[bool, bool], float]) -> np.ndarray:
    return np.array(
        [
            pattern[(False, False)],
            pattern[(False, True)],
            pattern[(True, False)],
            pattern[(True, True)],
        ]
    )


@lru_cache(maxsize=1024)
def _pair_click_dist(
    kind: str, kappa: float, t_eff: float, r_eff: float
) -> tuple[float, float, float, float]:
    """Click-pattern distribution of one surviving pair arrangement.

    kinds: "cross" (one photon per input arm, overlap kappa), "same_s" /
    "same_i" (both photons in one arm after a crosstalk event), "single_s"
    / "single_i" (lone survivor). All probabilities come from the exact
    oracle.
    """
    u = fock.splitter_unitary(t_eff, r_eff)
    if kind == "cross":
        state: fock.State | fock.Occupation = fock.temporal_decompose(kappa, 1, 1)
    elif kind == "same_s":
        state = (1, 1, 0, 0)
    elif kind == "same_i":
        state = (0, 0, 1, 1)
    elif kind == "single_s":
        state = (1, 0, 0, 0)
    elif kind == "single_i":
        state = (0, 0, 1, 0)
    else:
        raise ValueError(f"unknown pair arrangement {kind!r}")
    return tuple(_vec(fock.click_pattern_probs(state, u)))


def _pair_pattern_probs(config: ExperimentConfig, kappa: float) -> np.ndarray:
    """Marginal click-pattern distribution of a single generated pair.

    Enumerates crosstalk routing (each photon swaps arms with probability
    1/extinction_ratio), per-photon survival in the landed arm's channel
    plus the coupler, and the exact interference of whatever survived.
    """
    xi = config.source.extinction_ratio
    leak = 1.0 / xi
    surv = config.splitter.survival
    u_by_port = {
        "s": config.channel_s.transmittance * surv,
        "i": config.channel_i.transmittance * surv,
    }
    t_eff, r_eff = config.splitter.effective_t, config.splitter.effective_r

    pi = np.zeros(4)
    for leak_s, leak_i in ((0, 0), (0, 1), (1, 0), (1, 1)):
        w = (leak if leak_s else 1.0 - leak) * (leak if leak_i else 1.0 - leak)
        port_s = "i" if leak_s else "s"  # arm the signal photon lands in
        port_i = "s" if leak_i else "i"
        u_a, u_b = u_by_port[port_s], u_by_port[port_i]
        for surv_s in (0, 1):
            for surv_i in (0, 1):
                ws = w * (u_a if surv_s else 1.0 - u_a) * (
                    u_b if surv_i else 1.0 - u_b
                )
                if ws == 0.0:
                    continue
                if surv_s and surv_i:
                    if port_s == port_i:
                        kind = "same_s" if port_s == "s" else "same_i"
                    else:
                        kind = "cross"
                elif surv_s:
                    kind = "single_s" if port_s == "s" else "single_i"
                elif surv_i:
                    kind = "single_s" if port_i == "s" else "single_i"
                else:
                    pi[_P00] += ws
                    continue
                pi += ws * np.array(_pair_click_dist(kind, kappa, t_eff, r_eff))
    return pi


def _compose_gate_pmf(
    pair_probs: np.ndarray,
    pair_count_pmf: np.ndarray,
    dark_a: float,
    dark_b: float,
) -> np.ndarray:
    """Gate-level click-pattern pmf from independent pairs plus darks.

    Pairs are independent given their number n, so the per-gate no-click
    probabilities are mixtures of n-th powers of the per-pair ones; darks
    multiply in as one more independent veto per detector.
    """
    x_a = pair_probs[_P00] + pair_probs[_P01]  # pair leaves A silent
    x_b = pair_probs[_P00] + pair_probs[_P10]
    x_0 = pair_probs[_P00]
    powers = np.arange(pair_count_pmf.size)
    e_a = float(pair_count_pmf @ x_a**powers)
    e_b = float(pair_count_pmf @ x_b**powers)
    e_0 = float(pair_count_pmf @ x_0**powers)

    p00 = (1.0 - dark_a) * (1.0 - dark_b) * e_0
    p01 = (1.0 - dark_a) * e_a - p00
    p10 = (1.0 - dark_b) * e_b - p00
    p11 = 1.0 - p00 - p01 - p10
    pmf = np.clip(np.array([p00, p01, p10, p11]), 0.0, None)
    return pmf / pmf.sum()


def gate_pattern_distribution(
    config: ExperimentConfig, kappa: float | None = None
) -> np.ndarray:
    """Exact per-gate click-pattern pmf (no click, B only, A only, both).

    This is the distribution the per-gate sampler draws from implicitly
    and the multinomial sampler draws from directly; unit tests hold the
    empirical gate simulation to it.
    """
    validate(config)
    if kappa is None:
        kappa = amplitude_overlap(config.delay_ps, config.wavepacket.sigma_ps)
    pair_probs = _pair_pattern_probs(config, kappa)
    pair_count_pmf = folded_poisson(
        config.source.mean_pairs_per_pulse, config.source.max_pairs
    )
    return _compose_gate_pmf(
        pair_probs,
        pair_count_pmf,
        config.detector_a.dark_prob_per_gate,
        config.detector_b.dark_prob_per_gate,
    )


def simulate_gate(
    config: ExperimentConfig, rng: np.random.Generator, gate_index: int = 0
) -> GateRecord:
    """Simulate one gated pulse through the literal staged mechanism.

    Reference implementation: the batched samplers collapse these stages
    into precomputed distributions, and tests pin their agreement.
    """
    kappa = amplitude_overlap(config.delay_ps, config.wavepacket.sigma_ps)
    leak = 1.0 / config.source.extinction_ratio
    surv = config.splitter.survival
    u_by_port = {
        "s": config.channel_s.transmittance * surv,
        "i": config.channel_i.transmittance * surv,
    }
    t_eff, r_eff = config.splitter.effective_t, config.splitter.effective_r

    click_a = click_b = False
    n = sample_pair_count(
        config.source.mean_pairs_per_pulse, rng, config.source.max_pairs
    )
    for _ in range(n):
        port_s = "i" if rng.random() < leak else "s"
        port_i = "s" if rng.random() < leak else "i"
        surv_s = rng.random() < u_by_port[port_s]
        surv_i = rng.random() < u_by_port[port_i]
        if surv_s and surv_i:
            if port_s == port_i:
                kind = "same_s" if port_s == "s" else "same_i"
            else:
                kind = "cross"
        elif surv_s:
            kind = "single_s" if port_s == "s" else "single_i"
        elif surv_i:
            kind = "single_s" if port_i == "s" else "single_i"
        else:
            continue
        dist = _pair_click_dist(kind, kappa, t_eff, r_eff)
        pattern = int(np.searchsorted(np.cumsum(dist), rng.random(), side="right"))
        click_a |= pattern in (_P10, _P11)
        click_b |= pattern in (_P01, _P11)
    if rng.random() < config.detector_a.dark_prob_per_gate:
        click_a = True
    if rng.random() < config.detector_b.dark_prob_per_gate:
        click_b = True
    return GateRecord(gate_index, click_a, click_b)


def _simulate_batch(
    rng: np.random.Generator,
    n_gates: int,
    p: float,
    max_pairs: int,
    pattern_cum: np.ndarray,
    dark_a: float,
    dark_b: float,
) -> tuple[int, int, int]:
    """Vectorized per-gate sampling; returns (coincidences, singles_a, singles_b).

    Pattern uniforms are drawn for every gate and pair slot, active or
    not, so the stream layout is fixed and the result depends only on the
    batch generator's seed.
    """
    n = np.minimum(rng.poisson(p, n_gates), max_pairs)
    click_a = np.zeros(n_gates, dtype=bool)
    click_b = np.zeros(n_gates, dtype=bool)
    for slot in range(max_pairs):
        pat = np.searchsorted(pattern_cum, rng.random(n_gates), side="right")
        active = slot < n
        click_a |= active & ((pat == _P10) | (pat == _P11))
        click_b |= active & ((pat == _P01) | (pat == _P11))
    click_a |= rng.random(n_gates) < dark_a
    click_b |= rng.random(n_gates) < dark_b
    return (
        int((click_a & click_b).sum()),
        int(click_a.sum()),
        int(click_b.sum()),
    )


def run_dip_scan(
    config: ExperimentConfig,
    delays: list[float],
    gates_per_point: int,
    seed: int | np.random.SeedSequence,
    sampler: str = "multinomial",
    batch_size: int = 1 << 20,
) -> list[ScanPoint]:
    """Coincidence scan over delay settings.

    sampler = "multinomial" draws each point's pattern counts in one exact
    multinomial from the per-gate pmf (distributionally identical to
    simulating every gate, any gate count in O(1)); "per-gate" simulates
    gates in vectorized batches and exercises the stochastic chain itself.
    Deterministic for a given (config, seed, sampler) at any thread count.
    """
    validate(config)
    if gates_per_point < 1:
        raise ValueError(f"gates_per_point must be >= 1 (got {gates_per_point!r})")
    if not delays:
        raise ValueError("delays must be non-empty")
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS} (got {sampler!r})")
    base = _as_seedseq(seed)

    points: list[ScanPoint] = []
    if sampler == "multinomial":
        for i, delay in enumerate(delays):
            cfg = replace(config, delay_ps=float(delay))
            pmf = gate_pattern_distribution(cfg)
            counts = _rng(_child(base, i)).multinomial(gates_per_point, pmf)
            points.append(
                ScanPoint(
                    delay_ps=float(delay),
                    gates=gates_per_point,
                    coincidences=int(counts[_P11]),
                    singles_a=int(counts[_P10] + counts[_P11]),
                    singles_b=int(counts[_P01] + counts[_P11]),
                )
            )
        return points

    p = config.source.mean_pairs_per_pulse
    max_pairs = config.source.max_pairs
    dark_a = config.detector_a.dark_prob_per_gate
    dark_b = config.detector_b.dark_prob_per_gate
    tasks = []
    for i, delay in enumerate(delays):
        cfg = replace(config, delay_ps=float(delay))
        kappa = amplitude_overlap(cfg.delay_ps, cfg.wavepacket.sigma_ps)
        cum = np.cumsum(_pair_pattern_probs(cfg, kappa))
        start = 0
        batch = 0
        while start < gates_per_point:
            size = min(batch_size, gates_per_point - start)
            tasks.append((i, batch, size, cum))
            start += size
            batch += 1

    totals = {i: [0, 0, 0] for i in range(len(delays))}

    def run_task(task):
        i, batch, size, cum = task
        return i, _simulate_batch(
            _rng(_child(base, i, batch)), size, p, max_pairs, cum, dark_a, dark_b
        )

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        for i, (coinc, sa, sb) in pool.map(run_task, tasks):
            totals[i][0] += coinc
            totals[i][1] += sa
            totals[i][2] += sb

    for i, delay in enumerate(delays):
        coinc, sa, sb = totals[i]
        points.append(
            ScanPoint(
                delay_ps=float(delay),
                gates=gates_per_point,
                coincidences=coinc,
                singles_a=sa,
                singles_b=sb,
            )
        )
    return points


def _car_pattern_distribution(config: ExperimentConfig) -> np.ndarray:
    """Per-slot click-pattern pmf for direct pair monitoring.

    The coincidence-to-accidental measurement taps the two channels
    straight into the detectors (no interference coupler in the path) and
    resolves clicks in single pulse slots with a time tagger. Two
    consequences for the model:

    * detector A sees the signal channel and detector B the idler channel,
      with only the channel efficiencies applied (crosstalk still swaps
      photons between the channels);
    * the dark probability for one slot is the configured per-gate value
      divided by the gate divider: the same dark rate, resolved in a
      pulse-period window instead of a whole gate.
    """
    leak = 1.0 / config.source.extinction_ratio
    eta_s = config.channel_s.transmittance
    eta_i = config.channel_i.transmittance
    divider = config.timing.gate_divider
    dark_a = config.detector_a.dark_prob_per_gate / divider
    dark_b = config.detector_b.dark_prob_per_gate / divider

    pi = np.zeros(4)
    for leak_s, leak_i in ((0, 0), (0, 1), (1, 0), (1, 1)):
        w = (leak if leak_s else 1.0 - leak) * (leak if leak_i else 1.0 - leak)
        # Channel each photon lands in: A reads the signal channel.
        s_in_a = not leak_s
        i_in_a = bool(leak_i)
        miss_a = (1.0 - eta_s if s_in_a else 1.0) * (1.0 - eta_s if i_in_a else 1.0)
        miss_b = (1.0 - eta_i if not s_in_a else 1.0) * (
            1.0 - eta_i if not i_in_a else 1.0
        )
        pi += w * np.array(
            [
                miss_a * miss_b,
                miss_a * (1.0 - miss_b),
                (1.0 - miss_a) * miss_b,
                (1.0 - miss_a) * (1.0 - miss_b),
            ]
        )
    pair_count_pmf = folded_poisson(
        config.source.mean_pairs_per_pulse, config.source.max_pairs
    )
    return _compose_gate_pmf(pi, pair_count_pmf, dark_a, dark_b)


def _sample_distinct(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """k distinct uniform indices from range(n), randomly ordered.

    Rejection with top-up: collisions are negligible for k << n, and the
    loop is deterministic for a given generator state.
    """
    if k > n:
        raise ValueError(f"cannot draw {k} distinct values from {n}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    found = np.unique(rng.integers(0, n, size=k + max(8, k // 8)))
    while found.size < k:
        extra = rng.integers(0, n, size=k)
        found = np.union1d(found, extra)
    return rng.permutation(found)[:k]


def run_car(
    config: ExperimentConfig,
    gates: int,
    n_offset_slots: int = 10,
    seed: int | np.random.SeedSequence = 0,
    batch_size: int = 1 << 22,
) -> CarResult:
    """Coincidence-to-accidental ratio from a matched/offset slot histogram.

    Matched coincidences are same-gate A and B clicks. Accidentals are
    estimated from A clicks at gate g paired with B clicks at gate g + k
    for k = 1 .. n_offset_slots, pooled over offsets. The configured delay
    must park the interferometer far off the dip (overlap below 1e-6) so
    that matched counting is interference-free.

    The sampler is sparse and exact: per batch, pattern counts are drawn
    from the per-slot pmf and the clicking gates are placed uniformly
    without replacement (gate outcomes are exchangeable), so arbitrarily
    large gate counts cost only the clicks they produce.

    See `_car_pattern_distribution` for the detection geometry and the
    per-slot dark-count convention.
    """
    validate(config)
    if gates < 1:
        raise ValueError(f"gates must be >= 1 (got {gates!r})")
    if n_offset_slots < 1:
        raise ValueError(f"n_offset_slots must be >= 1 (got {n_offset_slots!r})")
    if gates <= n_offset_slots:
        raise ValueError("gates must exceed n_offset_slots")
    overlap = indistinguishability(config.delay_ps, config.wavepacket.sigma_ps)
    if overlap >= 1e-6:
        raise ValueError(
            f"delay {config.delay_ps} ps leaves overlap {overlap:.3g}; "
            f"park the delay off the dip (overlap < 1e-6) for CAR runs"
        )

    pmf = _car_pattern_distribution(config)
    q_a = pmf[_P10] + pmf[_P11]
    q_b = pmf[_P01] + pmf[_P11]
    offsets = np.arange(1, n_offset_slots + 1)
    expected_acc = float(q_a * q_b * (gates * n_offset_slots - offsets.sum()))
    if expected_acc < 100.0:
        needed = math.ceil(100.0 / max(q_a * q_b * n_offset_slots, 1e-300)) + (
            n_offset_slots
        )
        raise InsufficientStatisticsError(
            f"expected {expected_acc:.1f} accidental coincidences over "
            f"{gates} gates; at least 100 are needed (about {needed} gates)",
            gates_needed=needed,
        )

    base = _as_seedseq(seed)
    matched = 0
    singles_a = 0
    singles_b = 0
    a_chunks: list[np.ndarray] = []
    b_chunks: list[np.ndarray] = []
    start = 0
    batch = 0
    while start < gates:
        size = min(batch_size, gates - start)
        rng = _rng(_child(base, batch))
        c = rng.multinomial(size, pmf)
        clicking = int(c[_P01] + c[_P10] + c[_P11])
        pos = _sample_distinct(rng, size, clicking) + start
        both = pos[: c[_P11]]
        a_only = pos[c[_P11]: c[_P11] + c[_P10]]
        b_only = pos[c[_P11] + c[_P10]:]
        a_chunks.extend((both, a_only))
        b_chunks.extend((both, b_only))
        matched += int(c[_P11])
        singles_a += int(c[_P10] + c[_P11])
        singles_b += int(c[_P01] + c[_P11])
        start += size
        batch += 1

    a_pos = np.sort(np.concatenate(a_chunks)) if a_chunks else np.empty(0, np.int64)
    b_pos = np.sort(np.concatenate(b_chunks)) if b_chunks else np.empty(0, np.int64)
    unmatched = []
    for k in offsets:
        unmatched.append(
            int(np.intersect1d(a_pos, b_pos - k, assume_unique=True).size)
        )
    total_unmatched = sum(unmatched)
    if total_unmatched == 0:
        needed = math.ceil(100.0 / max(q_a * q_b * n_offset_slots, 1e-300)) + (
            n_offset_slots
        )
        raise InsufficientStatisticsError(
            f"no accidental coincidences in {gates} gates; "
            f"about {needed} gates are needed",
            gates_needed=needed,
        )

    matched_rate = matched / gates
    accidental_rate = total_unmatched / float((gates - offsets).sum())
    car = matched_rate / accidental_rate

    divider = config.timing.gate_divider
    try:
        p_estimate = invert_car(
            max(car, 1.0),
            config.channel_s.transmittance,
            config.channel_i.transmittance,
            config.detector_a.dark_prob_per_gate / divider,
            config.detector_b.dark_prob_per_gate / divider,
        )
    except CalibrationError:
        # Observed CAR above the model maximum (possible in the tails of
        # low statistics): report the peak-rate point estimate.
        p_estimate = car_peak_pair_rate(
            config.channel_s.transmittance,
            config.channel_i.transmittance,
            config.detector_a.dark_prob_per_gate / divider,
            config.detector_b.dark_prob_per_gate / divider,
        )
    return CarResult(
        matched_coincidences=matched,
        unmatched_coincidences=tuple(unmatched),
        car=car,
        p_estimate=p_estimate,
        gates=gates,
        singles_a=singles_a,
        singles_b=singles_b,
    )


def run_visibility_sweep(
    config: ExperimentConfig,
    p_values: list[float],
    gates_per_point: int,
    seed: int | np.random.SeedSequence,
    delays: list[float] | None = None,
    sampler: str = "multinomial",
) -> list[SweepRow]:
    """Dip scan and fit at each pair rate; fit failures stay per-row.

    Each row gets an independent child seed, a full scan, a lineshape fit,
    and the closed-form visibility prediction for overlay.
    """
    validate(config)
    if not p_values:
        raise ValueError("p_values must be non-empty")
    if delays is None:
        delays = np.linspace(-6.0, 6.0, 21).tolist()
    base = _as_seedseq(seed)
    rows: list[SweepRow] = []
    for j, p in enumerate(p_values):
        cfg = replace(
            config, source=replace(config.source, mean_pairs_per_pulse=float(p))
        )
        predicted = visibility_prediction(budget_from_config(cfg))
        points = run_dip_scan(
            cfg, delays, gates_per_point, _child(base, j), sampler=sampler
        )
        try:
            fit = fit_dip(points, cfg.splitter)
            rows.append(SweepRow(float(p), tuple(points), fit, predicted))
        except ValueError as exc:
            rows.append(SweepRow(float(p), tuple(points), None, predicted, str(exc)))
    return rows
