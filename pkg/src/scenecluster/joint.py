"""Alternating optimization of the embedding network and the merge sequence.

Each phase retrains the network on the current cluster labels, extracts
embeddings, rebuilds the K_s-NN graph, and performs ``unrolled_steps``
greedy merges on that fixed graph.  Phases continue until ``nc_min``
clusters remain; the cluster count is then chosen retrospectively as the
one maximizing the intra/inter affinity ratio inside ``[nc_min, nc_max]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from scenecluster.affinity import ClusterState, affinity_ratio, build_knn_graph
from scenecluster.agglomerate import MergeEngine, init_clusters
from scenecluster.errors import ClusteringError, ConvergenceError, DisconnectedClusteringError, DivergenceError
from scenecluster.features import LmsFeature
from scenecluster.network import (
    NetworkConfig,
    NetworkParams,
    extract_embeddings,
    init_network,
    prepare_inputs,
    train_epochs,
    with_head,
)


@dataclass(frozen=True)
class JointConfig:
    k_s: int = 19
    nc_min: int = 3
    nc_max: int = 30
    unrolled_steps: int = 10
    network: NetworkConfig = field(default_factory=NetworkConfig)
    epochs_per_update: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k_s < 1:
            raise ClusteringError("k_s must be >= 1")
        if not 1 <= self.nc_min <= self.nc_max:
            raise ClusteringError(f"need 1 <= nc_min <= nc_max, got [{self.nc_min}, {self.nc_max}]")
        if self.unrolled_steps < 1 or self.epochs_per_update < 1:
            raise ClusteringError("unrolled_steps and epochs_per_update must be >= 1")

    def check_size(self, n_items: int, strict: bool = False) -> None:
        if n_items < self.nc_max or (strict and n_items == self.nc_max):
            op = ">" if strict else ">="
            raise ClusteringError(f"need N_s {op} nc_max ({self.nc_max}), got N_s={n_items}")
        if self.k_s > n_items - 1:
            raise ClusteringError(f"k_s={self.k_s} needs at least {self.k_s + 1} items, got {n_items}")

    def to_dict(self) -> dict:
        return {
            "k_s": self.k_s, "nc_min": self.nc_min, "nc_max": self.nc_max,
            "unrolled_steps": self.unrolled_steps, "epochs_per_update": self.epochs_per_update,
            "seed": self.seed, "network": self.network.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointConfig":
        d = dict(d)
        if "network" in d and isinstance(d["network"], dict):
            d["network"] = NetworkConfig.from_dict(d["network"])
        return cls(**d)


@dataclass
class TraceEntry:
    t: int
    phase: int
    n_clusters: int
    i: int | None = None
    j: int | None = None
    affinity: float | None = None
    step_loss: float = 0.0
    cumulative_loss: float = 0.0
    a_intra: float | None = None
    a_inter: float | None = None
    gamma: float | None = None  # math.inf when clusters are mutually disconnected

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["gamma"] is not None and math.isinf(d["gamma"]):
            d["gamma"] = "inf"
        return d


@dataclass
class RunTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)  # n_clusters -> labels
    update_losses: list[float] = field(default_factory=list)

    @property
    def merges(self) -> list[TraceEntry]:
        return [e for e in self.entries if e.i is not None]

    def gammas(self) -> dict[int, float | None]:
        return {e.n_clusters: e.gamma for e in self.entries if e.a_intra is not None}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)


@dataclass
class ClusteringResult:
    n_clusters_star: int
    state: ClusterState
    embeddings: np.ndarray
    trace: RunTrace
    gamma_star: float
    tau: int
    params: NetworkParams | None = None

    @property
    def labels(self) -> np.ndarray:
        return self.state.labels


def gamma_or_none(a_intra: float, a_inter: float) -> float | None:
    """Affinity ratio; +inf for separated clusters with internal structure, None for 0/0."""
    try:
        return affinity_ratio(a_intra, a_inter)
    except DisconnectedClusteringError:
        return math.inf if a_intra > 0 else None


def gamma_rank(entry: TraceEntry) -> tuple[float, float]:
    """Ordering key for defined ratios.

    Infinite ratios are ordered among themselves by A_intra, the limit of
    A_intra / A_inter as A_inter shrinks to 0 at the same rate.
    """
    if math.isinf(entry.gamma):
        return entry.gamma, entry.a_intra or 0.0
    return entry.gamma, 0.0


def check_convergence(trace: RunTrace, cfg: JointConfig) -> tuple[int, int]:
    """Return (N_c*, tau): the count and timestep with the largest ratio.

    Only entries whose count lies in ``[nc_min, nc_max]`` and whose ratio is
    defined compete (see :func:`gamma_rank`); on ties the earlier timestep
    (larger count) wins.
    """
    in_range = [e for e in trace.entries if cfg.nc_min <= e.n_clusters <= cfg.nc_max]
    if in_range:
        top = max(e.n_clusters for e in trace.entries)
        wanted = set(range(cfg.nc_min, min(cfg.nc_max, top) + 1))
        missing = wanted - {e.n_clusters for e in in_range}
        if missing:
            raise ConvergenceError(f"trace does not cover cluster counts {sorted(missing)}")
    best = None
    for e in in_range:
        if e.gamma is None:
            continue
        if best is None or gamma_rank(e) > gamma_rank(best):
            best = e
    if best is None:
        raise ConvergenceError("no valid convergence point: ratio undefined at every count in range")
    return best.n_clusters, best.t


class _Recorder:
    def __init__(self, cfg: JointConfig):
        self.cfg = cfg
        self.trace = RunTrace()
        self.cumulative = 0.0
        self.snapshot_phase: dict[int, int] = {}

    def in_range(self, nc: int) -> bool:
        return self.cfg.nc_min <= nc <= self.cfg.nc_max

    def record(self, engine: MergeEngine, phase: int, rec=None) -> None:
        nc = engine.n_clusters
        entry = TraceEntry(t=engine.t, phase=phase, n_clusters=nc)
        if rec is not None:
            self.cumulative += rec.step_loss
            entry.i, entry.j, entry.affinity = rec.i, rec.j, rec.affinity
            entry.step_loss = rec.step_loss
        entry.cumulative_loss = self.cumulative
        if self.in_range(nc):
            if nc >= 2:
                entry.a_intra, entry.a_inter = engine.intra_inter()
                entry.gamma = gamma_or_none(entry.a_intra, entry.a_inter)
            self.trace.snapshots[nc] = engine.state().labels.copy()
            self.snapshot_phase[nc] = phase
        self.trace.entries.append(entry)


def run(dataset: Sequence[LmsFeature] | np.ndarray, cfg: JointConfig) -> ClusteringResult:
    """Joint network training and clustering.

    ``dataset`` is either a list of LMS features or inputs already prepared
    with :func:`scenecluster.network.prepare_inputs`.

    The returned embeddings and parameters are those of the phase in which
    the selected count was reached (the network is not updated mid-phase).
    """
    if isinstance(dataset, np.ndarray):
        inputs = dataset
    else:
        inputs = prepare_inputs(dataset, cfg.network.input_shape)
    n = inputs.shape[0]
    cfg.check_size(n)
    params = init_network(replace(cfg.network, seed=cfg.seed, n_output_classes=n))
    state = init_clusters(n)
    rec = _Recorder(cfg)
    phase_outputs: dict[int, tuple[np.ndarray, NetworkParams]] = {}
    t = 0
    epoch = 0
    phase = 0
    while True:
        if params.config.n_output_classes != state.n_clusters:
            params = with_head(params, state.n_clusters, seed=cfg.seed + 7919 * (phase + 1))
        try:
            params, loss = train_epochs(params, inputs, state.labels, cfg.epochs_per_update, epoch_offset=epoch)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), rec.trace) from exc
        epoch += cfg.epochs_per_update
        rec.trace.update_losses.append(loss)
        X = extract_embeddings(params, inputs)
        graph = build_knn_graph(X, cfg.k_s)
        engine = MergeEngine(graph, state, t0=t)
        if phase == 0 and rec.in_range(n):
            rec.record(engine, phase)
        for _ in range(min(cfg.unrolled_steps, state.n_clusters - cfg.nc_min)):
            rec.record(engine, phase, engine.step())
        if phase in rec.snapshot_phase.values():
            phase_outputs[phase] = (X, params)
        state = engine.state()
        t = engine.t
        phase += 1
        if state.n_clusters <= cfg.nc_min:
            break
    n_star, tau = check_convergence(rec.trace, cfg)
    X_star, params_star = phase_outputs[rec.snapshot_phase[n_star]]
    return ClusteringResult(
        n_clusters_star=n_star,
        state=ClusterState(rec.trace.snapshots[n_star]),
        embeddings=X_star,
        trace=rec.trace,
        gamma_star=rec.trace.gammas()[n_star],
        tau=tau,
        params=params_star,
    )


def run_fixed_features(X, cfg: JointConfig) -> ClusteringResult:
    """Agglomerative clustering with ratio tracking over precomputed features."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ClusteringError("features must be a 2-D matrix")
    n = X.shape[0]
    cfg.check_size(n, strict=True)
    graph = build_knn_graph(X, cfg.k_s)
    engine = MergeEngine(graph, init_clusters(n))
    rec = _Recorder(cfg)
    while engine.n_clusters > cfg.nc_min:
        rec.record(engine, 0, engine.step())
    n_star, tau = check_convergence(rec.trace, cfg)
    return ClusteringResult(
        n_clusters_star=n_star,
        state=ClusterState(rec.trace.snapshots[n_star]),
        embeddings=X,
        trace=rec.trace,
        gamma_star=rec.trace.gammas()[n_star],
        tau=tau,
    )
