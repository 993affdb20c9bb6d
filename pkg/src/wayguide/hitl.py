"""Human-in-the-loop personalization of audio feedback parameters.

Audio parameters are tuned per user with CMA-ES: each generation asks for
seven candidate parameter sets, each candidate guides one turn toward a
target, turns are scored by normalized average heading error over their
first five seconds, and the scores drive the rank-based update. The
search runs in a normalized [0, 1]^3 space mapped affinely onto the legal
parameter boxes.

A deterministic SimulatedUser stands in for human participants: a
first-order turner with dead time whose responsiveness peaks at a
preferred parameter vector, giving the search a unique interior optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioParams

POPULATION = 7
PARENTS = 3
DIMENSION = 3
INITIAL_SIGMA = 0.25
SCORE_WINDOW = 5.0

# (low, high) per genotype component, in AudioParams field order.
PARAM_BOUNDS = ((0.5, 11.0), (0.0, 0.8), (0.5, 2.0))


def _cma_constants() -> dict[str, float | np.ndarray]:
    n, lam, mu = DIMENSION, POPULATION, PARENTS
    raw = np.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mueff = 1.0 / np.sum(weights**2)
    cs = (mueff + 2) / (n + mueff + 5)
    return {
        "weights": weights,
        "mueff": mueff,
        "cs": cs,
        "ds": 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs,
        "cc": (4 + mueff / n) / (n + 4 + 2 * mueff / n),
        "c1": 2 / ((n + 1.3) ** 2 + mueff),
        "cmu": min(
            1 - 2 / ((n + 1.3) ** 2 + mueff),
            2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff),
        ),
        "chin": math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2)),
    }


CMA = _cma_constants()


def params_from_genotype(genotype: np.ndarray) -> AudioParams:
    """Maps a normalized [0, 1]^3 point onto the legal parameter boxes."""
    values = [
        lo + float(g) * (hi - lo) for g, (lo, hi) in zip(genotype, PARAM_BOUNDS)
    ]
    return AudioParams(rate=values[0], pitch_range=values[1], scaling=values[2])


def genotype_from_params(params: AudioParams) -> np.ndarray:
    """Inverse of params_from_genotype."""
    values = (params.rate, params.pitch_range, params.scaling)
    return np.array(
        [(v - lo) / (hi - lo) for v, (lo, hi) in zip(values, PARAM_BOUNDS)]
    )


@dataclass(eq=False)
class CmaState:
    """CMA-ES search state over the normalized parameter space.

    Attributes:
        mean: Distribution mean in [0, 1]^3.
        cov: Covariance matrix, symmetric positive-definite.
        sigma: Step size.
        generation: Completed tell() count.
        p_sigma: Step-size evolution path.
        p_c: Covariance evolution path.
        pending: Genotypes issued by the last ask() awaiting their tell().
    """

    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    generation: int = 0
    p_sigma: np.ndarray = field(default_factory=lambda: np.zeros(DIMENSION))
    p_c: np.ndarray = field(default_factory=lambda: np.zeros(DIMENSION))
    pending: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.cov) <= 0):
            raise ValueError("covariance must be positive-definite")


def initial_cma_state(
    sigma0: float = INITIAL_SIGMA, start: AudioParams | None = None
) -> CmaState:
    """Fresh search state centered on the generic parameters by default."""
    mean = genotype_from_params(start if start is not None else AudioParams())
    return CmaState(mean=mean, cov=np.eye(DIMENSION), sigma=sigma0)


def _cov_roots(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(C^1/2, C^-1/2) via the symmetric eigendecomposition."""
    eigvals, basis = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 1e-20)
    root = basis @ np.diag(np.sqrt(eigvals)) @ basis.T
    inv_root = basis @ np.diag(1.0 / np.sqrt(eigvals)) @ basis.T
    return root, inv_root


def ask(state: CmaState, rng: np.random.Generator | int) -> list[AudioParams]:
    """Samples one generation of seven candidate parameter sets.

    Samples are drawn from N(mean, sigma^2 * cov), clipped to [0, 1]^3,
    and mapped onto the legal parameter boxes. The clipped genotypes are
    recorded on the state so the matching tell() can validate and
    consume them.

    Args:
        state: Current search state; its pending slot is overwritten.
        rng: Generator or seed; fixes the candidates bit-for-bit.

    Returns:
        Seven AudioParams candidates.
    """
    rng = np.random.default_rng(rng)
    root, _ = _cov_roots(state.cov)
    steps = rng.standard_normal((POPULATION, DIMENSION)) @ root.T
    genotypes = np.clip(state.mean + state.sigma * steps, 0.0, 1.0)
    state.pending = genotypes
    return [params_from_genotype(g) for g in genotypes]


def tell(
    state: CmaState, scored: list[tuple[AudioParams, float]]
) -> CmaState:
    """Applies one rank-based CMA-ES update from scored candidates.

    Args:
        state: State whose ask() produced the candidates; its pending
            slot is consumed.
        scored: Exactly seven (params, score) pairs in ask() order;
            lower scores are better.

    Returns:
        The next-generation state.

    Raises:
        ValueError: If there is no pending generation, the count is not
            seven, or a candidate does not match the pending genotypes.
    """
    if state.pending is None:
        raise ValueError("tell() without a pending ask()")
    if len(scored) != POPULATION:
        raise ValueError(f"expected {POPULATION} scored candidates")
    for i, (params, _) in enumerate(scored):
        if not np.allclose(
            genotype_from_params(params), state.pending[i], atol=1e-9
        ):
            raise ValueError(f"candidate {i} does not match the pending ask()")

    genotypes = state.pending
    scores = np.array([s for _, s in scored])
    order = np.argsort(scores, kind="stable")[:PARENTS]
    weights = CMA["weights"]
    cs, ds, cc = CMA["cs"], CMA["ds"], CMA["cc"]
    c1, cmu, mueff, chin = CMA["c1"], CMA["cmu"], CMA["mueff"], CMA["chin"]

    steps = (genotypes[order] - state.mean) / state.sigma
    step_w = weights @ steps
    mean = state.mean + state.sigma * step_w

    _, inv_root = _cov_roots(state.cov)
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(
        cs * (2 - cs) * mueff
    ) * (inv_root @ step_w)
    generation = state.generation + 1
    correction = math.sqrt(1 - (1 - cs) ** (2 * generation))
    h_sigma = float(
        np.linalg.norm(p_sigma) / correction < (1.4 + 2 / (DIMENSION + 1)) * chin
    )
    p_c = (1 - cc) * state.p_c + h_sigma * math.sqrt(
        cc * (2 - cc) * mueff
    ) * step_w

    rank_one = np.outer(p_c, p_c) + (1 - h_sigma) * cc * (2 - cc) * state.cov
    rank_mu = (weights[:, None] * steps).T @ steps
    cov = (1 - c1 - cmu) * state.cov + c1 * rank_one + cmu * rank_mu
    cov = (cov + cov.T) / 2

    sigma = state.sigma * math.exp(
        (cs / ds) * (np.linalg.norm(p_sigma) / chin - 1)
    )
    state.pending = None
    return CmaState(
        mean=mean,
        cov=cov,
        sigma=sigma,
        generation=generation,
        p_sigma=p_sigma,
        p_c=p_c,
    )


@dataclass(frozen=True)
class TurnTrial:
    """One guided turn: the candidate used and the resulting error trace.

    Attributes:
        params: Audio parameters active during the turn.
        times: Sample times in seconds from turn onset, increasing from 0.
        errors: Signed heading error in degrees at each sample time.
        initial_error: Signed heading error at onset; nonzero.
    """

    params: AudioParams
    times: np.ndarray
    errors: np.ndarray
    initial_error: float

    def __post_init__(self) -> None:
        if self.initial_error == 0:
            raise ValueError("initial error must be nonzero")
        if len(self.times) != len(self.errors) or len(self.times) < 2:
            raise ValueError("trace needs matching times and errors")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase from 0")


def score_turn(trial: TurnTrial) -> float:
    """Normalized average heading error over the first five seconds.

    The absolute error is integrated by the trapezoid rule over
    [0, 5 s] (interpolating the value at exactly 5 s), averaged, and
    divided by the absolute initial error, so turns of different
    magnitudes are comparable.

    Args:
        trial: The turn to score; its trace must span at least 5 s.

    Returns:
        Unitless normalized error; 1.0 means no progress, 0 immediate.

    Raises:
        ValueError: If the trace is shorter than the scoring window.
    """
    if trial.times[-1] < SCORE_WINDOW:
        raise ValueError("trace must span the 5 s scoring window")
    inside = trial.times <= SCORE_WINDOW
    times = np.append(trial.times[inside], SCORE_WINDOW)
    magnitudes = np.append(
        np.abs(trial.errors[inside]),
        abs(np.interp(SCORE_WINDOW, trial.times, trial.errors)),
    )
    mean_error = np.trapezoid(magnitudes, times) / SCORE_WINDOW
    return float(mean_error / abs(trial.initial_error))


@dataclass(frozen=True)
class SimulatedUser:
    """Deterministic user model for desk-scale personalization tests.

    A first-order turner: after a reaction delay it turns toward zero
    error at a rate proportional to the remaining error, capped at
    max_turn_rate. The proportional gain is the base gain scaled by a
    product of Gaussian bumps over the normalized audio parameters,
    peaking at the preferred vector — responsiveness (and thus score)
    has a unique interior optimum there. This is a test fixture, not a
    model of human behavior.

    Attributes:
        preferred: Normalized parameter vector where response peaks.
        reaction_delay: Dead time before the turn starts, seconds.
        max_turn_rate: Turn rate cap in degrees per second.
        base_gain: Error-feedback gain at the preferred vector, 1/s.
        gain_width: Bump width per normalized parameter axis.
        heading_noise: Heading jitter in degrees per sqrt(second).
    """

    preferred: np.ndarray
    reaction_delay: float = 0.35
    max_turn_rate: float = 120.0
    base_gain: float = 2.2
    gain_width: float = 0.35
    heading_noise: float = 1.5

    def gain(self, params: AudioParams) -> float:
        """Error-feedback gain for a parameter set, peaking at preferred."""
        genotype = genotype_from_params(params)
        bumps = np.exp(
            -((genotype - self.preferred) ** 2) / (2 * self.gain_width**2)
        )
        return self.base_gain * float(np.prod(bumps))


def simulate_turn(
    user: SimulatedUser,
    params: AudioParams,
    initial_error: float,
    duration: float,
    rng: np.random.Generator,
    dt: float = 0.02,
) -> TurnTrial:
    """Simulates one guided turn and returns its error trace.

    Args:
        user: The user model.
        params: Audio parameters guiding the turn.
        initial_error: Signed heading error at onset, degrees.
        duration: Simulated length in seconds; at least the 5 s scoring
            window.
        rng: Noise source; fixes the trace.
        dt: Integration step in seconds.

    Returns:
        The completed trial.
    """
    duration = max(duration, SCORE_WINDOW)
    steps = int(round(duration / dt))
    gain = user.gain(params)
    noise = rng.normal(0.0, user.heading_noise * math.sqrt(dt), steps)
    times = np.empty(steps + 1)
    errors = np.empty(steps + 1)
    times[0] = 0.0
    errors[0] = initial_error
    error = initial_error
    for i in range(steps):
        if (i + 1) * dt > user.reaction_delay:
            rate = min(gain * abs(error), user.max_turn_rate)
            error -= math.copysign(min(rate * dt, abs(error)), error)
        error += noise[i]
        times[i + 1] = (i + 1) * dt
        errors[i + 1] = error
    return TurnTrial(
        params=params, times=times, errors=errors, initial_error=initial_error
    )


TURN_DISTANCE = (4.0, 8.0)
TURN_MAGNITUDE = (60.0, 120.0)
TURN_INTERVAL = (5.0, 8.0)
ARENA_RADIUS = 10.0
GENERATIONS = 28


@dataclass(frozen=True)
class TurnRecord:
    """Log entry for one personalization turn."""

    generation: int
    candidate: int
    params: AudioParams
    turn_angle: float
    score: float


@dataclass(frozen=True)
class GenerationRecord:
    """Log entry for one completed generation."""

    generation: int
    mean: np.ndarray
    sigma: float


@dataclass(frozen=True)
class PersonalizationResult:
    """Outcome of a personalization run.

    Attributes:
        params: Final optimized parameters (the CMA mean, mapped).
        sigma_history: Step size after each generation.
        turns: Per-turn log in execution order.
        generations: Per-generation log.
    """

    params: AudioParams
    sigma_history: list[float]
    turns: list[TurnRecord]
    generations: list[GenerationRecord]


def _sample_turn_target(
    position: np.ndarray,
    heading: float,
    rng: np.random.Generator,
    arena_radius: float,
) -> tuple[np.ndarray, float]:
    """Draws a target point within distance/angle bands inside the arena.

    Returns:
        (target position, signed turn angle in degrees).
    """
    while True:
        distance = rng.uniform(*TURN_DISTANCE)
        magnitude = rng.uniform(*TURN_MAGNITUDE)
        angle = magnitude if rng.random() < 0.5 else -magnitude
        direction = math.radians(heading + angle)
        target = position + distance * np.array(
            [math.sin(direction), math.cos(direction)]
        )
        if np.linalg.norm(target) <= arena_radius:
            return target, angle


def run_personalization(
    user: SimulatedUser,
    seed: int,
    generations: int = GENERATIONS,
    arena_radius: float = ARENA_RADIUS,
    sigma0: float = INITIAL_SIGMA,
) -> PersonalizationResult:
    """Runs the full desk-scale personalization protocol.

    The simulated user starts at the arena center. Every 5-8 s a new
    target appears 4-8 m away at 60-120 degrees left or right (re-drawn
    until it falls inside the arena); one CMA-ES candidate guides each
    turn, seven turns make a generation, and the walker relocates to
    each target after turning toward it.

    Args:
        user: User model being personalized.
        seed: Seed for target sampling, candidate sampling, and noise.
        generations: Number of CMA-ES generations.
        arena_radius: Containment radius for targets, meters.
        sigma0: Initial step size.

    Returns:
        The optimized parameters and the optimization log.
    """
    rng = np.random.default_rng(seed)
    state = initial_cma_state(sigma0=sigma0)
    position = np.zeros(2)
    heading = 0.0
    turns: list[TurnRecord] = []
    generation_log: list[GenerationRecord] = []
    sigma_history: list[float] = []

    for gen in range(generations):
        candidates = ask(state, rng)
        scored = []
        for idx, params in enumerate(candidates):
            target, angle = _sample_turn_target(
                position, heading, rng, arena_radius
            )
            duration = rng.uniform(*TURN_INTERVAL)
            trial = simulate_turn(user, params, angle, duration, rng)
            score = score_turn(trial)
            scored.append((params, score))
            turns.append(
                TurnRecord(
                    generation=gen,
                    candidate=idx,
                    params=params,
                    turn_angle=angle,
                    score=score,
                )
            )
            heading += angle - float(trial.errors[-1])
            position = target
        state = tell(state, scored)
        sigma_history.append(state.sigma)
        generation_log.append(
            GenerationRecord(
                generation=gen, mean=state.mean.copy(), sigma=state.sigma
            )
        )

    return PersonalizationResult(
        params=params_from_genotype(state.mean),
        sigma_history=sigma_history,
        turns=turns,
        generations=generation_log,
    )


VALIDATION_ANGLES = tuple(range(60, 121, 4))
SETTLED_NET_DEGREES = 3.0


@dataclass(frozen=True)
class ValidationTurn:
    """Log entry for one validation turn."""

    condition: str
    angle: float
    score: float
    valid: bool


@dataclass(frozen=True)
class ValidationResult:
    """Paired validation outcome.

    Attributes:
        turns: All 64 turns in execution order.
        baseline: The lowest valid raw score, subtracted before
            aggregating.
        generic_mean: Mean baseline-adjusted error, generic condition.
        optimized_mean: Mean baseline-adjusted error, optimized condition.
        total_time: Simulated duration in seconds.
    """

    turns: list[ValidationTurn]
    baseline: float
    generic_mean: float
    optimized_mean: float
    total_time: float


def _settled(trial: TurnTrial) -> bool:
    """Whether the user was still during the trial's last second."""
    start = np.interp(trial.times[-1] - 1.0, trial.times, trial.errors)
    return abs(float(trial.errors[-1]) - float(start)) < SETTLED_NET_DEGREES


def validate(
    user: SimulatedUser,
    generic: AudioParams,
    optimized: AudioParams,
    seed: int,
) -> ValidationResult:
    """Compares two parameter sets over the paired turn protocol.

    Thirty-two turn specifications (16 angles from 60 to 120 degrees in
    steps of 4, each left and right) are shuffled, and each is executed
    under both conditions in double-reversal order (generic-optimized on
    even pairs, reversed on odd pairs): 64 turns total. A turn is valid
    when the user was not turning during the last second before it —
    i.e. the previous trial had settled. Each score has the lowest valid
    score subtracted before per-condition means are taken over valid
    turns.

    Args:
        user: User model under test.
        generic: Reference parameters.
        optimized: Personalized parameters.
        seed: Seed for ordering, durations, and noise.

    Returns:
        Per-turn log, the subtracted baseline, and condition means.
    """
    rng = np.random.default_rng(seed)
    specs = [
        (angle, side) for angle in VALIDATION_ANGLES for side in (1.0, -1.0)
    ]
    order = rng.permutation(len(specs))
    total_time = 0.0
    records: list[tuple[str, float, float, bool]] = []
    previous_settled = True
    for pair_index, spec_index in enumerate(order):
        angle, side = specs[spec_index]
        conditions = [("generic", generic), ("optimized", optimized)]
        if pair_index % 2 == 1:
            conditions.reverse()
        for name, params in conditions:
            duration = rng.uniform(*TURN_INTERVAL)
            trial = simulate_turn(user, params, side * angle, duration, rng)
            records.append((name, side * angle, score_turn(trial), previous_settled))
            previous_settled = _settled(trial)
            total_time += duration

    valid_scores = [score for _, _, score, valid in records if valid]
    baseline = min(valid_scores)
    turns = [
        ValidationTurn(condition=name, angle=angle, score=score, valid=valid)
        for name, angle, score, valid in records
    ]
    by_condition = {
        name: [t.score - baseline for t in turns if t.valid and t.condition == name]
        for name in ("generic", "optimized")
    }
    return ValidationResult(
        turns=turns,
        baseline=baseline,
        generic_mean=float(np.mean(by_condition["generic"])),
        optimized_mean=float(np.mean(by_condition["optimized"])),
        total_time=total_time,
    )
