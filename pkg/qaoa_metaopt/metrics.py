# Copyright (c) QAOA Meta-Optimizer Development Team.
# Distributed under the terms of the Modified BSD License.
"""Solution-quality metrics over measured distributions and angle-trajectory diversity."""
from dataclasses import dataclass

import numpy as np

from qaoa_metaopt import problems
from qaoa_metaopt import simulator
from qaoa_metaopt import util
from qaoa_metaopt.problems import ProblemClass

DEFAULT_SHOTS = 5000


@dataclass(frozen=True)
class MetricsReport:
    """Fractions in [0, 1]; ``approximation_ratio`` holds AR − 1 for MVC.

    ``feasibility_rate`` is None for MaxCut and ``approximation_ratio`` is None
    when no feasible string was measured.
    """

    optimal_hit_rate: float
    approximation_ratio: float
    feasibility_rate: float
    steps: float
    ar_unnormalized: float = None


def _report(problem, graph, weights, oracle, steps):
    problem = ProblemClass.from_name(problem)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (2**graph.n,):
        raise ValueError(f"Expected {2**graph.n} basis weights, got shape {weights.shape}")
    mass = weights.sum()
    if mass <= 0:
        raise ValueError("Distribution has no mass")

    bits = problems.basis_bits(graph.n)
    values = problems.objective_values(problem, graph, bits).astype(float)
    feasible = problems.feasible_mask(problem, graph, bits)
    best = oracle.optimal_value
    hits = feasible & (values == best)
    hit_rate = float(weights[hits].sum() / mass)

    if problem is ProblemClass.MAXCUT:
        ar = float(np.dot(weights, values) / mass / best) if best else None
        return MetricsReport(hit_rate, ar, None, float(steps), ar)

    feasible_mass = weights[feasible].sum()
    fr = float(feasible_mass / mass)
    if feasible_mass <= 0 or not best:
        return MetricsReport(hit_rate, None, fr, float(steps), None)
    feasible_total = float(np.dot(weights[feasible], values[feasible]))
    ar = feasible_total / feasible_mass / best
    literal = feasible_total / mass / best
    if not problem.maximize:
        ar, literal = ar - 1.0, literal - 1.0
    return MetricsReport(hit_rate, float(ar), fr, float(steps), float(literal))


def metrics_from_counts(problem, graph, counts, oracle, steps=0):
    """Metrics of a SampleSet or a length-2^n count array"""
    if isinstance(counts, simulator.SampleSet):
        counts = counts.index_counts(graph.n)
    return _report(problem, graph, counts, oracle, steps)


def metrics_from_probabilities(problem, graph, probabilities, oracle, steps=0):
    """Infinite-shot metrics over an exact distribution"""
    return _report(problem, graph, probabilities, oracle, steps)


def evaluate_metrics(problem, graph, state, shots, rng, oracle, steps=0):
    """Sample ``shots`` measurements of ``state`` and score them against ``oracle``"""
    samples = simulator.sample(state, shots, rng)
    return metrics_from_counts(problem, graph, samples, oracle, steps)


def _mean_of(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def mean_reports(reports):
    """Field-wise mean, skipping missing values"""
    if not reports:
        raise ValueError("No reports to average")
    return MetricsReport(
        _mean_of([r.optimal_hit_rate for r in reports]),
        _mean_of([r.approximation_ratio for r in reports]),
        _mean_of([r.feasibility_rate for r in reports]),
        _mean_of([r.steps for r in reports]),
        _mean_of([r.ar_unnormalized for r in reports]),
    )


@dataclass(frozen=True)
class TrajectoryStats:
    msd_gamma: np.ndarray
    msd_beta: np.ndarray
    std_gamma: np.ndarray
    std_beta: np.ndarray
    variance: np.ndarray

    @property
    def horizon(self):
        return len(self.msd_gamma)


def trajectory_diversity(trajectories):
    """Spread of generated angles across instances at every step.

    ``trajectories`` is N × T × 2p with γ before β on the last axis. The
    per-instance squared deviation from the instance mean is averaged over
    the γ (or β) coordinates; its mean over instances is the MSD and its
    standard deviation gives the band.
    """
    traj = np.asarray(trajectories, dtype=float)
    if traj.ndim != 3 or traj.shape[2] % 2:
        raise ValueError(f"Trajectories must be N x T x 2p, got shape {traj.shape}")
    if traj.shape[0] < 2:
        raise ValueError(f"Need at least two trajectories, got {traj.shape[0]}")
    p = traj.shape[2] // 2
    squared = (traj - traj.mean(axis=0)) ** 2
    per_gamma = squared[:, :, :p].mean(axis=2)
    per_beta = squared[:, :, p:].mean(axis=2)
    return TrajectoryStats(
        msd_gamma=per_gamma.mean(axis=0),
        msd_beta=per_beta.mean(axis=0),
        std_gamma=per_gamma.std(axis=0),
        std_beta=per_beta.std(axis=0),
        variance=squared.mean(axis=0),
    )


def coordinate_names(p):
    return [f"gamma_{i + 1}" for i in range(p)] + [f"beta_{i + 1}" for i in range(p)]


def format_percent(value):
    return "" if value is None else f"{100.0 * value:.2f}"


def write_diversity(stats_by_cell, path, variance_path):
    """Write per-step MSD rows and the long-format per-coordinate variances.

    ``stats_by_cell`` maps (class, depth, method) to TrajectoryStats.
    """
    rows, long_rows = [], []
    for cell, stats in stats_by_cell.items():
        cell = list(cell)
        names = coordinate_names(stats.variance.shape[1] // 2)
        for t in range(stats.horizon):
            rows.append(
                cell
                + [
                    t + 1,
                    repr(float(stats.msd_gamma[t])),
                    repr(float(stats.msd_beta[t])),
                    repr(float(stats.std_gamma[t])),
                    repr(float(stats.std_beta[t])),
                ]
            )
            for name, value in zip(names, stats.variance[t]):
                long_rows.append(cell + [t + 1, name, repr(float(value))])
    cell_header = ["class", "depth", "method"]
    util.write_csv(
        path, cell_header + ["step", "msd_gamma", "msd_beta", "std_gamma", "std_beta"], rows
    )
    util.write_csv(variance_path, cell_header + ["step", "coordinate", "variance"], long_rows)
    return path, variance_path
