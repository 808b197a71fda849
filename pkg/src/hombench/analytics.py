"""Closed-form predictions for the two-photon interference benchmark.

Everything here is a pure function of scalar inputs: the Gaussian
indistinguishability factor, the coincidence-dip lineshape, the visibility
noise budget, and an analytic coincidence-to-accidental ratio (CAR) model
with its inverse. The Monte Carlo engine in `simulate` must agree with
these formulas; the agreement tests are the core physics check of the
package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import BeamSplitter, ExperimentConfig


class NoAccidentalsError(ValueError):
    """The accidental-coincidence probability is exactly zero.

    CAR is then undefined (infinite); callers that want to display the
    condition should catch this instead of receiving a float infinity.
    """


class CalibrationError(ValueError):
    """A requested operating point cannot be reached by any parameter value."""


def indistinguishability(delta_tau_ps: float, sigma_ps: float) -> float:
    """Temporal-mode overlap probability exp(-dt^2 / (2 sigma^2)).

    `sigma_ps` is the 1/e half-width of the photon field. The returned
    value is the squared wavefunction overlap I = kappa^2, i.e. the
    probability weight with which the delayed photon still occupies the
    matched temporal mode.
    """
    if not (sigma_ps > 0.0 and math.isfinite(sigma_ps)):
        raise ValueError(f"sigma_ps must be finite and > 0 (got {sigma_ps!r})")
    x = delta_tau_ps / sigma_ps
    return math.exp(-0.5 * x * x)


def amplitude_overlap(delta_tau_ps: float, sigma_ps: float) -> float:
    """Field-amplitude overlap kappa = exp(-dt^2 / (4 sigma^2)).

    kappa^2 equals `indistinguishability` for the same arguments.
    """
    if not (sigma_ps > 0.0 and math.isfinite(sigma_ps)):
        raise ValueError(f"sigma_ps must be finite and > 0 (got {sigma_ps!r})")
    x = delta_tau_ps / sigma_ps
    return math.exp(-0.25 * x * x)


@dataclass(frozen=True)
class DipModelParams:
    """Parameters of the coincidence-dip lineshape.

    baseline is the coincidence level far from the dip; visibility is the
    normalized dip depth. The nominal visibility range is [0, 1]; values up
    to 1.02 are tolerated so that fits of noisy near-unity data are not
    clipped. The splitter is a fixed instrument property, never fitted.
    """

    baseline: float
    visibility: float
    sigma_ps: float
    splitter: BeamSplitter

    def __post_init__(self) -> None:
        if not (self.baseline >= 0.0 and math.isfinite(self.baseline)):
            raise ValueError(f"baseline must be finite and >= 0 (got {self.baseline!r})")
        if not (0.0 <= self.visibility <= 1.02):
            raise ValueError(
                f"visibility must be in [0, 1.02] (got {self.visibility!r})"
            )
        if not (self.sigma_ps > 0.0 and math.isfinite(self.sigma_ps)):
            raise ValueError(f"sigma_ps must be finite and > 0 (got {self.sigma_ps!r})")


def splitter_dip_factor(splitter: BeamSplitter) -> float:
    """Imbalance prefactor 2TR / (T^2 + R^2) of the dip depth."""
    t, r = splitter.transmittance, splitter.reflectance
    denom = t * t + r * r
    if denom <= 0.0:
        raise ValueError("splitter with T = R = 0 has no dip lineshape")
    return 2.0 * t * r / denom


def dip_model(delta_tau_ps: float, params: DipModelParams) -> float:
    """Expected coincidence level at a given relative delay.

    N(dt) = baseline * (1 - (2TR / (T^2 + R^2)) * V * exp(-dt^2 / (2 sigma^2)))

    The minimum sits at zero delay; the curve rises to the baseline as the
    two wavepackets stop overlapping.
    """
    factor = splitter_dip_factor(params.splitter)
    overlap = indistinguishability(delta_tau_ps, params.sigma_ps)
    return params.baseline * (1.0 - factor * params.visibility * overlap)


@dataclass(frozen=True)
class VisibilityBudget:
    """Noise terms that bound the observable dip visibility.

    efficiency is the single end-to-end detection probability used by the
    symmetric-arm reduction; dark_prob is the per-window dark probability
    D*t of one detector; extinction_ratio is the demultiplexer crosstalk
    power ratio (linear).
    """

    pairs_per_pulse: float
    efficiency: float
    dark_prob: float
    extinction_ratio: float


def visibility_prediction(budget: VisibilityBudget) -> float:
    """Visibility after multi-pair, dark-count, and crosstalk penalties.

    V = 1 - (2 p eta + 4 D t + eta / xi) / (eta + 3 p eta + 4 D t + eta / xi)

    The three numerator terms are the spurious-coincidence channels: a
    second pair in the same pulse, two dark counts or a dark count paired
    with a photon, and a photon leaking through the demultiplexer into the
    wrong arm.
    """
    p = budget.pairs_per_pulse
    eta = budget.efficiency
    dt = budget.dark_prob
    xi = budget.extinction_ratio
    if p < 0.0 or eta < 0.0 or dt < 0.0 or xi < 1.0:
        raise ValueError("budget terms out of range (p, eta, dark >= 0; xi >= 1)")
    leak = eta / xi
    denom = eta + 3.0 * p * eta + 4.0 * dt + leak
    if denom <= 0.0:
        raise ValueError("visibility budget is 0/0 for an all-zero configuration")
    return 1.0 - (2.0 * p * eta + 4.0 * dt + leak) / denom


def car_prediction(
    p: float,
    eta_s: float,
    eta_i: float,
    dark_a: float,
    dark_b: float,
) -> float:
    """Analytic coincidence-to-accidental ratio for direct pair monitoring.

    Singles probabilities per counting window:

        q_x = 1 - exp(-p eta_x) + dark_x

    Accidental coincidences are uncorrelated singles, q_s * q_i; true
    coincidences keep only the leading single-pair term p eta_s eta_i.
    CAR = (true + accidental) / accidental, which is >= 1 and tends to 1
    when the source is off.

    The dark probabilities must describe the same counting window the
    coincidences are resolved in (for gated counting with a fast time
    tagger that is one pulse slot, not one gate).
    """
    if p < 0.0 or not (0.0 <= eta_s <= 1.0 and 0.0 <= eta_i <= 1.0):
        raise ValueError("p must be >= 0 and efficiencies in [0, 1]")
    if not (0.0 <= dark_a < 1.0 and 0.0 <= dark_b < 1.0):
        raise ValueError("dark probabilities must be in [0, 1)")
    q_s = -math.expm1(-p * eta_s) + dark_a
    q_i = -math.expm1(-p * eta_i) + dark_b
    accidental = q_s * q_i
    if accidental == 0.0:
        raise NoAccidentalsError(
            "no accidental channel: both singles probabilities are zero"
        )
    true = p * eta_s * eta_i
    return (true + accidental) / accidental


def car_peak_pair_rate(eta_s: float, eta_i: float, dark_a: float, dark_b: float) -> float:
    """Pair rate at which the analytic CAR is maximal.

    In the linear regime (p eta << 1) the CAR rises like p / (dark_a dark_b)
    and falls like 1/p once photon singles dominate darks; the crossover is
    at p* = sqrt(dark_a dark_b / (eta_s eta_i)).
    """
    if eta_s <= 0.0 or eta_i <= 0.0:
        raise ValueError("efficiencies must be > 0 to locate the CAR peak")
    return math.sqrt(dark_a * dark_b / (eta_s * eta_i))


def invert_car(
    car: float,
    eta_s: float,
    eta_i: float,
    dark_a: float,
    dark_b: float,
    p_max: float = 0.5,
) -> float:
    """Solve car_prediction for the pair rate on the falling branch.

    The analytic CAR is not monotone in p: it peaks near
    p* = sqrt(dark_a dark_b / (eta_s eta_i)) and decreases beyond it. This
    inversion returns the solution with p >= p*, the branch a bright pair
    source operates on. Raises CalibrationError when the requested CAR
    exceeds the achievable maximum or falls below the value at `p_max`.
    """
    if car < 1.0:
        raise ValueError(f"CAR must be >= 1 (got {car!r})")
    p_lo = car_peak_pair_rate(eta_s, eta_i, dark_a, dark_b)
    car_lo = car_prediction(p_lo, eta_s, eta_i, dark_a, dark_b)
    if car > car_lo:
        raise CalibrationError(
            f"CAR {car:g} exceeds the model maximum {car_lo:g} at p = {p_lo:g}"
        )
    car_hi = car_prediction(p_max, eta_s, eta_i, dark_a, dark_b)
    if car < car_hi:
        raise CalibrationError(
            f"CAR {car:g} is below the value {car_hi:g} at the p = {p_max:g} "
            f"search bound"
        )
    p_hi = p_max
    for _ in range(200):
        mid = 0.5 * (p_lo + p_hi)
        if car_prediction(mid, eta_s, eta_i, dark_a, dark_b) >= car:
            p_lo = mid
        else:
            p_hi = mid
    return 0.5 * (p_lo + p_hi)


def visibility_from_counts(
    n_dip: float, n_baseline: float, splitter: BeamSplitter
) -> float:
    """Two-point visibility estimator, the algebraic inverse of dip_model.

    V = (1 - n_dip / n_baseline) * (T^2 + R^2) / (2 T R)
    """
    if n_baseline == 0:
        raise ZeroDivisionError("baseline count is zero; visibility undefined")
    return (1.0 - n_dip / n_baseline) / splitter_dip_factor(splitter)


def calibrate_eta(
    target_v: float,
    p: float,
    dark_prob: float,
    extinction_ratio: float,
    tolerance: float = 1e-12,
) -> float:
    """Efficiency that makes the visibility budget hit `target_v`, by bisection.

    The budget is monotone increasing in the efficiency whenever the dark
    term is nonzero (more signal dilutes a fixed noise floor), so bisection
    over (0, 1] is exact. Raises CalibrationError when the target is above
    the ceiling at full efficiency, or when dark_prob is zero (the budget
    is then scale-invariant in the efficiency and has no solution).
    """
    if not (0.0 < target_v < 1.0):
        raise CalibrationError(f"target visibility must be in (0, 1) (got {target_v!r})")

    def v_at(eta: float) -> float:
        return visibility_prediction(
            VisibilityBudget(p, eta, dark_prob, extinction_ratio)
        )

    lo, hi = 0.0, 1.0
    v_hi = v_at(hi)
    if target_v > v_hi:
        raise CalibrationError(
            f"target visibility {target_v:g} is above the achievable maximum "
            f"{v_hi:.6g} at full efficiency"
        )
    if dark_prob == 0.0:
        # Without a dark floor the budget does not depend on eta at all
        # (every term scales with eta), so there is nothing to calibrate.
        raise CalibrationError(
            "visibility budget is independent of efficiency when dark_prob = 0"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if v_at(mid) < target_v:
            lo = mid
        else:
            hi = mid
        if hi - lo < tolerance * max(hi, 1e-6):
            break
    eta = 0.5 * (lo + hi)
    if abs(v_at(eta) - target_v) > 1e-9:
        raise CalibrationError(
            f"bisection failed to reach visibility {target_v:g} (best {v_at(eta):.9g})"
        )
    return eta


def budget_from_config(config: ExperimentConfig) -> VisibilityBudget:
    """Reduce a two-arm, two-detector config to the symmetric budget.

    The budget formula carries a single efficiency and a single dark
    probability, so the two channels and the two detectors are averaged.
    Exact when the config is symmetric; a stated approximation otherwise.
    """
    eta = 0.5 * (config.channel_s.transmittance + config.channel_i.transmittance)
    dark = 0.5 * (
        config.detector_a.dark_prob_per_gate + config.detector_b.dark_prob_per_gate
    )
    return VisibilityBudget(
        pairs_per_pulse=config.source.mean_pairs_per_pulse,
        efficiency=eta,
        dark_prob=dark,
        extinction_ratio=config.source.extinction_ratio,
    )
