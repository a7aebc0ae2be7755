"""Sequential model-based architecture search.

A random forest over encoded assignments predicts mean and spread of the score; the next
assignment maximizes expected improvement over local-search neighbors of the best
assignments plus random candidates. Each trial evaluates one assignment on one
cross-validation fold. Assignments race the incumbent fold by fold, and the incumbent is
the assignment with the best mean over its evaluated folds. Crashed or timed-out trials
score 0.0.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm
from sklearn.ensemble import RandomForestRegressor

from eeg_engine.architectures import build_network, receptive_field
from eeg_engine.errors import ConfigError, NoIncumbentError, TrialTimeoutError
from eeg_engine.models import (
    ArchitectureConfig,
    Assignment,
    CategoricalParameter,
    HyperParameter,
    IntegerParameter,
    Recording,
    SearchConfig,
    SearchResult,
    TrainConfig,
    Trial,
    TrialRecord,
)
from eeg_engine.training import evaluate, train
from utils import flatconfig
from utils.logger import get_logger

logger = get_logger(__name__)

Objective = Callable[[Assignment, int], float]

MAX_INPUT_SAMPLES = 1200
MAX_SAMPLE_ATTEMPTS = 1000
LOCAL_SEARCH_STARTS = 3
LOCAL_SEARCH_STEPS = 10


# Search spaces


def assignment_key(assignment: Assignment) -> str:
    return flatconfig.dumps_inline(dict(assignment))


class ConfigSpace:
    """Integer and categorical hyperparameters with optional ``parent=value`` activation.

    ``validator`` rejects assignments that cannot be built (it raises :class:`ConfigError`).
    """

    def __init__(
        self,
        parameters: Sequence[HyperParameter],
        validator: Optional[Callable[[Assignment], None]] = None,
        to_architecture: Optional[Callable[[Assignment], ArchitectureConfig]] = None,
    ):
        names = [p.name for p in parameters]
        if len(set(names)) != len(names):
            raise ConfigError(f"Duplicate hyperparameter names in {names}")
        self.parameters = list(parameters)
        self._validator = validator
        self._to_architecture = to_architecture

    def __len__(self) -> int:
        return len(self.parameters)

    def is_active(self, parameter: HyperParameter, assignment: Assignment) -> bool:
        if parameter.active_for is None:
            return True
        parent, value = parameter.active_for.split("=", 1)
        return str(assignment.get(parent)) == value

    def _draw(self, parameter: HyperParameter, rng: np.random.Generator):
        if isinstance(parameter, IntegerParameter):
            return int(rng.integers(parameter.low, parameter.high + 1))
        return parameter.choices[int(rng.integers(len(parameter.choices)))]

    def _prune(self, assignment: Assignment) -> Assignment:
        return {p.name: assignment[p.name] for p in self.parameters if p.name in assignment and self.is_active(p, assignment)}

    def validate(self, assignment: Assignment) -> None:
        for p in self.parameters:
            if not self.is_active(p, assignment):
                continue
            if p.name not in assignment:
                raise ConfigError(f"Assignment lacks {p.name}")
            value = assignment[p.name]
            if isinstance(p, IntegerParameter) and not (isinstance(value, int) and p.low <= value <= p.high):
                raise ConfigError(f"{p.name}={value} outside [{p.low}, {p.high}]")
            if isinstance(p, CategoricalParameter) and value not in p.choices:
                raise ConfigError(f"{p.name}={value} not in {p.choices}")
        if self._validator is not None:
            self._validator(assignment)

    def is_valid(self, assignment: Assignment) -> bool:
        try:
            self.validate(assignment)
        except ConfigError:
            return False
        return True

    def sample(self, rng: np.random.Generator) -> Assignment:
        """Uniform draw, repeated until the assignment is valid."""
        for _ in range(MAX_SAMPLE_ATTEMPTS):
            assignment: Assignment = {}
            for p in self.parameters:
                assignment[p.name] = self._draw(p, rng)
            assignment = self._prune(assignment)
            if self.is_valid(assignment):
                return assignment
        raise ConfigError(f"No valid assignment in {MAX_SAMPLE_ATTEMPTS} draws")

    def neighbors(self, assignment: Assignment, rng: np.random.Generator, n: int) -> List[Assignment]:
        """Valid assignments differing in one active parameter (integers move by ±1 or ±2)."""
        moves: List[Assignment] = []
        for p in self.parameters:
            if not self.is_active(p, assignment):
                continue
            if isinstance(p, IntegerParameter):
                values = [assignment[p.name] + d for d in (-2, -1, 1, 2) if p.low <= assignment[p.name] + d <= p.high]
            else:
                values = [c for c in p.choices if c != assignment[p.name]]
            for value in values:
                moved = dict(assignment)
                moved[p.name] = value
                if p.kind == "categorical":
                    for child in self.parameters:
                        if child.name not in moved and self.is_active(child, moved):
                            moved[child.name] = self._draw(child, rng)
                moves.append(self._prune(moved))
        order = rng.permutation(len(moves))
        chosen = []
        for i in order:
            if self.is_valid(moves[i]):
                chosen.append(moves[i])
            if len(chosen) == n:
                break
        return chosen

    def encode(self, assignment: Assignment) -> np.ndarray:
        """Integers scaled to [0, 1], categoricals one-hot; inactive integers encode as -1."""
        features: List[float] = []
        for p in self.parameters:
            active = self.is_active(p, assignment)
            if isinstance(p, IntegerParameter):
                span = p.high - p.low
                features.append((assignment[p.name] - p.low) / span if active and span else (0.0 if active else -1.0))
            else:
                features.extend(1.0 if active and assignment[p.name] == c else 0.0 for c in p.choices)
        return np.array(features)

    def to_architecture(self, assignment: Assignment) -> ArchitectureConfig:
        if self._to_architecture is None:
            raise ConfigError("This search space does not describe architectures")
        self.validate(assignment)
        return self._to_architecture(assignment)


def _with_derived_length(config: ArchitectureConfig) -> ArchitectureConfig:
    length = receptive_field(config.model_copy(update={"input_len_samples": 1}))
    if length > MAX_INPUT_SAMPLES:
        raise ConfigError(f"Derived input length {length} exceeds {MAX_INPUT_SAMPLES} samples")
    return ArchitectureConfig(**{**config.model_dump(), "input_len_samples": length})


def _block_parameters(i: int, filter_range, stride_range, pool_range, pool_stride_range, nonlinearities) -> List[HyperParameter]:
    return [
        IntegerParameter(name=f"filter_length_{i}", low=filter_range[0], high=filter_range[1]),
        IntegerParameter(name=f"conv_stride_{i}", low=stride_range[0], high=stride_range[1]),
        IntegerParameter(name=f"pool_length_{i}", low=pool_range[0], high=pool_range[1]),
        IntegerParameter(name=f"pool_stride_{i}", low=pool_stride_range[0], high=pool_stride_range[1]),
        CategoricalParameter(name=f"pool_mode_{i}", choices=["max", "mean"]),
        CategoricalParameter(name=f"nonlinearity_{i}", choices=list(nonlinearities)),
    ]


def _architecture_from(base: ArchitectureConfig, assignment: Assignment) -> ArchitectureConfig:
    blocks = range(base.n_blocks)
    config = base.model_copy(
        update={
            "filter_lengths": [int(assignment[f"filter_length_{i}"]) for i in blocks],
            "conv_strides": [int(assignment[f"conv_stride_{i}"]) for i in blocks],
            "pool_lengths": [int(assignment[f"pool_length_{i}"]) for i in blocks],
            "pool_strides": [int(assignment[f"pool_stride_{i}"]) for i in blocks],
            "pool_modes": [str(assignment[f"pool_mode_{i}"]) for i in blocks],
            "nonlinearities": [str(assignment[f"nonlinearity_{i}"]) for i in blocks],
            "final_filter_len": int(assignment["final_filter_len"]),
        }
    )
    return _with_derived_length(config)


def architecture_space(base: ArchitectureConfig, parameters: Sequence[HyperParameter]) -> ConfigSpace:
    def to_architecture(assignment: Assignment) -> ArchitectureConfig:
        return _architecture_from(base, assignment)

    def validator(assignment: Assignment) -> None:
        to_architecture(assignment)

    return ConfigSpace(parameters, validator=validator, to_architecture=to_architecture)


def deep_space() -> ConfigSpace:
    """Filter lengths, strides, pools and nonlinearities of the four deep ConvNet blocks."""
    base = ArchitectureConfig.default_deep()
    parameters: List[HyperParameter] = []
    for i in range(base.n_blocks):
        parameters += _block_parameters(i, (2, 15), (1, 4), (1, 4), (1, 3), ["elu", "square_log", "identity", "max_pool_only"])
    parameters.append(IntegerParameter(name="final_filter_len", low=1, high=10))
    return architecture_space(base, parameters)


def shallow_space() -> ConfigSpace:
    base = ArchitectureConfig.default_shallow()
    parameters = _block_parameters(0, (10, 40), (1, 1), (10, 100), (5, 30), ["square_log", "elu", "identity", "max_pool_only"])
    parameters.append(IntegerParameter(name="final_filter_len", low=2, high=40))
    return architecture_space(base, parameters)


def space_for(kind: str) -> ConfigSpace:
    if kind == "deep":
        return deep_space()
    if kind == "shallow":
        return shallow_space()
    raise ConfigError(f"No search space for architecture kind {kind}")


def assignment_of(config: ArchitectureConfig) -> Assignment:
    """The assignment that reproduces a convolutional architecture's searchable values."""
    assignment: Assignment = {"final_filter_len": config.final_filter_len}
    for i in range(config.n_blocks):
        assignment.update(
            {
                f"filter_length_{i}": config.filter_lengths[i],
                f"conv_stride_{i}": config.conv_strides[i],
                f"pool_length_{i}": config.pool_lengths[i],
                f"pool_stride_{i}": config.pool_strides[i],
                f"pool_mode_{i}": config.pool_modes[i],
                f"nonlinearity_{i}": config.nonlinearities[i],
            }
        )
    return assignment


# Objective


def fold_indices(n_items: int, n_folds: int) -> List[np.ndarray]:
    """Contiguous, non-overlapping folds covering ``range(n_items)``."""
    if n_items < n_folds:
        raise ConfigError(f"{n_items} recordings cannot form {n_folds} folds")
    return np.array_split(np.arange(n_items), n_folds)


class ArchitectureObjective:
    """Held-out-fold trial accuracy of an assignment trained on the remaining folds.

    Uses the first ``subset_size`` recordings in their given (generation) order.
    """

    def __init__(
        self,
        space: ConfigSpace,
        recordings: Sequence[Recording],
        train_config: TrainConfig,
        search_config: Optional[SearchConfig] = None,
    ):
        self.space = space
        self.search_config = search_config or SearchConfig()
        self.recordings = list(recordings[: self.search_config.subset_size])
        self.folds = fold_indices(len(self.recordings), self.search_config.n_folds)
        self.train_config = train_config.model_copy(update={"deadline_s": self.search_config.time_budget_s})

    def split(self, fold: int) -> Tuple[List[Recording], List[Recording]]:
        held = set(self.folds[fold].tolist())
        train_part = [r for i, r in enumerate(self.recordings) if i not in held]
        held_part = [self.recordings[i] for i in self.folds[fold]]
        return train_part, held_part

    def evaluate_architecture(self, config: ArchitectureConfig, fold: int) -> float:
        train_part, held_part = self.split(fold)
        network = build_network(config, seed=self.train_config.seed)
        network, _ = train(network, train_part, self.train_config)
        return evaluate(network, held_part, self.train_config.crop_stride).trial_accuracy

    def __call__(self, assignment: Assignment, fold: int) -> float:
        return self.evaluate_architecture(self.space.to_architecture(assignment), fold)


def run_trial(objective: Objective, assignment: Assignment, index: int, fold: int, time_budget_s: Optional[float]) -> TrialRecord:
    """Evaluate one trial; every failure becomes a scored record instead of an exception."""
    started = time.monotonic()
    status, score, message = "ok", 0.0, ""
    try:
        score = float(objective(assignment, fold))
    except TrialTimeoutError as e:
        status, message = "timeout", str(e)
    except Exception as e:
        status, message = "crash", f"{type(e).__name__}: {e}"
    wall = time.monotonic() - started
    if status == "ok" and time_budget_s is not None and wall > time_budget_s:
        status, score, message = "timeout", 0.0, f"took {wall:.1f} s, budget {time_budget_s:g} s"
    if status != "ok":
        score = 0.0
    logger.info(f"Trial {index} fold {fold}: {status} score {score:.4f} ({wall:.2f} s){' ' + message if message else ''}")
    return TrialRecord(index=index, fold=fold, status=status, score=score, wall_time_s=wall, assignment=assignment, message=message)


# Surrogate and acquisition


class ForestSurrogate:
    """Random forest whose per-tree spread serves as predictive uncertainty."""

    def __init__(self, n_trees: int, seed: int):
        self.model = RandomForestRegressor(n_estimators=n_trees, random_state=seed, min_samples_leaf=1)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ForestSurrogate":
        self.model.fit(X, y)
        return self

    def predict(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        per_tree = np.stack([tree.predict(X) for tree in self.model.estimators_])
        return per_tree.mean(axis=0), per_tree.std(axis=0)


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float, xi: float = 0.01) -> np.ndarray:
    """Expected improvement over ``best`` for maximization."""
    improvement = mean - best - xi
    ei = np.maximum(improvement, 0.0)
    positive = std > 0
    z = improvement[positive] / std[positive]
    ei[positive] = improvement[positive] * norm.cdf(z) + std[positive] * norm.pdf(z)
    return ei


def _local_search(space: ConfigSpace, start: Assignment, score: Callable[[List[Assignment]], np.ndarray], rng: np.random.Generator, n_neighbors: int) -> List[Assignment]:
    """Hill-climb on the acquisition; returns every assignment visited."""
    current = start
    current_value = float(score([current])[0])
    visited = [current]
    for _ in range(LOCAL_SEARCH_STEPS):
        candidates = space.neighbors(current, rng, n_neighbors)
        if not candidates:
            break
        values = score(candidates)
        visited.extend(candidates)
        best = int(np.argmax(values))
        if values[best] <= current_value:
            break
        current, current_value = candidates[best], float(values[best])
    return visited


class FoldRace:
    """Per-assignment fold scores, the incumbent, and the challengers still racing it.

    A new assignment starts on one of the incumbent's folds. A challenger whose mean over the
    folds it shares with the incumbent falls below the incumbent's mean over those folds is
    dropped for good; one that keeps up is run on the incumbent's remaining folds and takes
    over once it covers all of them. While nothing is racing, the incumbent itself is extended
    to its next unseen fold.
    """

    def __init__(self, n_folds: int):
        self.n_folds = n_folds
        self.assignments: Dict[str, Assignment] = {}
        self.scores: Dict[str, Dict[int, float]] = {}
        self.wall_time_s: Dict[str, float] = {}
        self.incumbent: Optional[str] = None
        self.racing: List[str] = []
        self._failed: set = set()
        self._n_started = 0

    def mean(self, key: str, folds: Optional[Sequence[int]] = None) -> float:
        scores = self.scores[key]
        return float(np.mean([scores[f] for f in (scores if folds is None else folds)]))

    @property
    def incumbent_mean(self) -> float:
        return self.mean(self.incumbent) if self.incumbent is not None else 0.0

    def first_fold(self) -> int:
        """Fold for the next new assignment, rotating over the incumbent's folds."""
        if self.incumbent is None:
            fold = self._n_started % self.n_folds
        else:
            folds = sorted(self.scores[self.incumbent])
            fold = folds[self._n_started % len(folds)]
        self._n_started += 1
        return fold

    def intensification_job(self) -> Optional[Tuple[Assignment, int]]:
        if self.incumbent is None:
            return None
        incumbent_folds = set(self.scores[self.incumbent])
        for key in self.racing:
            missing = sorted(incumbent_folds - set(self.scores[key]))
            if missing:
                return self.assignments[key], missing[0]
        unseen = [f for f in range(self.n_folds) if f not in incumbent_folds]
        if unseen:
            return self.assignments[self.incumbent], unseen[0]
        return None

    def record(self, r: TrialRecord) -> None:
        key = assignment_key(r.assignment)
        self.assignments.setdefault(key, r.assignment)
        self.scores.setdefault(key, {})[r.fold] = r.score
        self.wall_time_s[key] = self.wall_time_s.get(key, 0.0) + r.wall_time_s
        if r.status != "ok":
            self._failed.add(key)
        if key == self.incumbent:
            return
        if self.incumbent is None:
            if key not in self._failed:
                self.incumbent = key
            return

        incumbent_folds = self.scores[self.incumbent]
        # with no shared fold yet, overall means stand in
        shared = [f for f in self.scores[key] if f in incumbent_folds] or None
        if key in self._failed or self.mean(key, shared) < self.mean(self.incumbent, shared):
            if key in self.racing:
                self.racing.remove(key)
        elif set(incumbent_folds) <= set(self.scores[key]):
            logger.info(f"New incumbent after trial {r.index}: mean {self.mean(key):.4f} over {len(self.scores[key])} fold(s)")
            self.incumbent = key
            self.racing = []
        elif key not in self.racing:
            self.racing.append(key)

    def incumbent_trial(self) -> Trial:
        key = self.incumbent
        return Trial(
            assignment=self.assignments[key],
            fold_scores=dict(sorted(self.scores[key].items())),
            wall_time_s=self.wall_time_s[key],
        )


def _propose(
    space: ConfigSpace,
    race: FoldRace,
    config: SearchConfig,
    rng: np.random.Generator,
    n_proposals: int,
    taken: set,
) -> List[Assignment]:
    keys = list(race.scores)
    X = np.stack([space.encode(race.assignments[k]) for k in keys])
    y = np.array([race.mean(k) for k in keys])
    surrogate = ForestSurrogate(config.n_trees, seed=int(rng.integers(2 ** 31))).fit(X, y)
    best = float(y.max())

    def acquisition(candidates: List[Assignment]) -> np.ndarray:
        mean, std = surrogate.predict(np.stack([space.encode(c) for c in candidates]))
        return expected_improvement(mean, std, best, config.xi)

    ranked = sorted(range(len(keys)), key=lambda i: (-y[i], i))[:LOCAL_SEARCH_STARTS]
    candidates: List[Assignment] = []
    for i in ranked:
        candidates.extend(_local_search(space, race.assignments[keys[i]], acquisition, rng, config.n_neighbors))
    candidates.extend(space.sample(rng) for _ in range(config.n_random_candidates))

    unique: Dict[str, Assignment] = {}
    for c in candidates:
        key = assignment_key(c)
        if key not in taken and key not in unique:
            unique[key] = c
    if not unique:
        return []
    pool = list(unique.values())
    values = acquisition(pool)
    mean, _ = surrogate.predict(np.stack([space.encode(c) for c in pool]))
    order = sorted(range(len(pool)), key=lambda i: (-values[i], -mean[i], i))
    return [pool[i] for i in order[:n_proposals]]


def _fresh_sample(space: ConfigSpace, rng: np.random.Generator, taken: set) -> Optional[Assignment]:
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        assignment = space.sample(rng)
        if assignment_key(assignment) not in taken:
            return assignment
    return None


def _random_proposals(space: ConfigSpace, rng: np.random.Generator, n: int, taken: set) -> List[Assignment]:
    proposals = []
    for _ in range(n):
        assignment = _fresh_sample(space, rng, taken)
        if assignment is None:
            break
        proposals.append(assignment)
        taken.add(assignment_key(assignment))
    return proposals


# Search loops

Proposer = Callable[[FoldRace, int, set], List[Assignment]]


def _evaluate_jobs(objective: Objective, jobs: List[Tuple[Assignment, int]], first_index: int, config: SearchConfig) -> List[TrialRecord]:
    indexed = [(a, first_index + k, f) for k, (a, f) in enumerate(jobs)]
    if config.workers > 1 and len(indexed) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_trial, objective, a, i, f, config.time_budget_s) for a, i, f in indexed]
            return [future.result() for future in futures]
    return [run_trial(objective, a, i, f, config.time_budget_s) for a, i, f in indexed]


def _race_search(space: ConfigSpace, objective: Objective, config: SearchConfig, propose: Proposer) -> SearchResult:
    """Shared loop: each round runs at most one intensification job plus new proposals.

    With ``config.workers`` > 1 a round holds up to ``workers`` jobs planned from the state
    before the round; records are applied in trial order.
    """
    race = FoldRace(config.n_folds)
    history: List[TrialRecord] = []
    trajectory: List[float] = []
    taken: set = set()

    while len(history) < config.budget:
        remaining = config.budget - len(history)
        jobs: List[Tuple[Assignment, int]] = []
        intensify = race.intensification_job()
        if intensify is not None:
            jobs.append(intensify)
        n_new = min(max(1, config.workers - len(jobs)), remaining - len(jobs))
        if n_new > 0:
            jobs += [(a, race.first_fold()) for a in propose(race, n_new, taken)]
        if not jobs:
            logger.warning(f"Search space exhausted after {len(history)} trials")
            break
        for record in _evaluate_jobs(objective, jobs, len(history), config):
            history.append(record)
            race.record(record)
            trajectory.append(race.incumbent_mean)

    if race.incumbent is None:
        raise NoIncumbentError(f"All {len(history)} trials crashed or timed out")
    return SearchResult(incumbent=race.incumbent_trial(), history=history, incumbent_trajectory=trajectory)


def smbo_search(space: ConfigSpace, objective: Objective, config: Optional[SearchConfig] = None) -> SearchResult:
    """Surrogate-guided search for ``config.budget`` trials.

    The first ``config.n_initial`` new assignments are random; later ones maximize expected
    improvement under a forest fitted to each assignment's mean fold score.

    Raises:
        NoIncumbentError: every trial crashed or timed out
    """
    config = config or SearchConfig()
    rng = np.random.default_rng(config.seed)
    logger.info(f"SMBO search: budget {config.budget}, {config.n_initial} initial random trials, {len(space)} hyperparameters")

    def propose(race: FoldRace, n: int, taken: set) -> List[Assignment]:
        if len(taken) < config.n_initial:
            return _random_proposals(space, rng, min(n, config.n_initial - len(taken)), taken)
        proposals = _propose(space, race, config, rng, n, taken)
        taken.update(assignment_key(a) for a in proposals)
        return proposals

    result = _race_search(space, objective, config, propose)
    logger.info(f"Incumbent score {result.incumbent.mean_score:.4f} after {len(result.history)} trials")
    return result


def random_search(space: ConfigSpace, objective: Objective, config: Optional[SearchConfig] = None) -> SearchResult:
    """Baseline: every new assignment is a fresh uniform draw, raced the same way."""
    config = config or SearchConfig()
    rng = np.random.default_rng(config.seed)
    return _race_search(space, objective, config, lambda race, n, taken: _random_proposals(space, rng, n, taken))


def write_history(history: Sequence[TrialRecord], path: str) -> None:
    """One tab-separated line per trial: index, fold, status, score, wall time, assignment."""
    with open(path, "w", encoding="utf-8") as f:
        for r in history:
            f.write(f"{r.index}\t{r.fold}\t{r.status}\t{r.score:.6f}\t{r.wall_time_s:.3f}\t{flatconfig.dumps_inline(dict(r.assignment))}\n")


# Reporting


def architecture_diff(config: ArchitectureConfig, reference: ArchitectureConfig) -> Dict[str, Tuple[str, str]]:
    """Fields whose flat rendering differs, mapped to (reference, config)."""
    ours, theirs = config.to_flat(), reference.to_flat()
    diff = {}
    for key in sorted(ours):
        a, b = flatconfig.format_value(theirs[key]), flatconfig.format_value(ours[key])
        if a != b:
            diff[key] = (a, b)
    return diff


def only_max_pool_nonlinear(config: ArchitectureConfig) -> bool:
    selectors = set(config.nonlinearities)
    pools = ["max" if s == "max_pool_only" else m for s, m in zip(config.nonlinearities, config.pool_modes)]
    return selectors <= {"identity", "max_pool_only"} and "max" in pools


def describe_incumbent(trial: Trial, space: ConfigSpace, sample_rate_hz: float = 100.0) -> str:
    config = space.to_architecture(trial.assignment)
    default = ArchitectureConfig.default_for(config.kind)
    lines = [
        f"architecture: {config.kind}",
        f"input length: {config.input_len_samples} samples ({config.input_len_samples / sample_rate_hz:.1f} s)",
    ]
    if only_max_pool_nonlinear(config):
        lines.append("only nonlinearity: max pooling")
    diff = architecture_diff(config, default)
    if diff:
        lines.append(f"differences from the default {config.kind} architecture:")
        lines += [f"  {key}: {old} -> {new}" for key, (old, new) in diff.items()]
    else:
        lines.append(f"identical to the default {config.kind} architecture")
    cv = trial.mean_score
    lines.append(f"cross-validation accuracy: {cv:.4f} over {len(trial.fold_scores)} fold(s)")
    if trial.evaluation_accuracy is not None:
        lines.append(f"evaluation accuracy: {trial.evaluation_accuracy:.4f}")
        lines.append(f"generalization gap (cv - eval): {cv - trial.evaluation_accuracy:+.4f}")
    return "\n".join(lines) + "\n"
