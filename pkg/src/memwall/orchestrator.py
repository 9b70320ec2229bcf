"""Server-side round loop over a simulated device fleet.

Each round every client checks in with its predicted memory budget and op timings, the selector
picks K clients, the selected clients are clustered and each cluster receives the plan of its
least capable member (through the plan cache), and every recipient runs the plan against its
own memory trace. Learning is a synthetic loss proxy: a round lowers the global loss in
proportion to the data novelty it covers.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Protocol, TextIO

import numpy as np
import numpy.typing as npt
import yaml

from memwall.cache import PlanCache, PlanKey
from memwall.cluster import ClusterAssignment, cluster_clients, distinct_profiles, least_capable
from memwall.codec.model import CodecModel
from memwall.config import VARIANTS, AblationConfig, SimulationConfig, SimulationParams
from memwall.exceptions import InfeasibleBudgetError, SchemaError, SelectionError
from memwall.fleet import ClientSpec, FleetSpec
from memwall.graph import ComputationGraph, kind_times
from memwall.models import ClientReport, OpKind
from memwall.planner import ExecutionPlan, Strategy, generate_plan
from memwall.predictor import (
    BudgetPredictor,
    PredictorConfig,
    RoundStats,
    m_safe,
    should_regenerate,
)
from memwall.selector import ClientProfile, GlobalModelReq, select_clients
from memwall.traces import TraceBuffer, TraceStream

logger = logging.getLogger(__name__)

ROUND_COLUMNS = ("round", "time", "participants", "faults", "regen", "proxy_loss")
SUMMARY_COLUMNS = (
    "variant",
    "seed",
    "rounds",
    "total_time",
    "time_to_target",
    "rounds_to_target",
    "final_loss",
    "planner_invocations",
    "page_faults",
    "lmk_kills",
    "regen_requests",
    "dropped",
    "comm_overhead",
)
REGEN_PERIOD = 10


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed mixed from integer parts."""
    return int(np.random.SeedSequence([abs(p) for p in parts]).generate_state(1)[0])


# Local execution


@dataclass(frozen=True)
class LocalRoundResult:
    client_id: int
    latency: float
    page_faults: int
    lmk_kills: int
    dropped: bool = False
    penalty: float = 0.0


def refault_penalty(overflow: int, params: SimulationParams) -> tuple[float, int]:
    """Seconds lost and page faults counted for one sample whose working set overflows.

    The overflow is streamed back at ``refault_bw`` after one fault stall of
    ``fault_latency_s``; a ``reaccess_ratio`` share of its pages counts as faulted.
    """
    if overflow <= 0:
        return 0.0, 0
    faults = math.ceil(overflow / params.page_size * params.reaccess_ratio)
    return overflow / params.refault_bw + params.fault_latency_s, faults


def simulate_local_round(
    client: ClientSpec,
    plan: ExecutionPlan | None,
    graph: ComputationGraph,
    trace: TraceBuffer,
    start: float,
    params: SimulationParams | None = None,
    max_kills: int = 3,
    plan_scale: float = 1.0,
    budget: int | None = None,
) -> LocalRoundResult:
    """Run one client's local training against its realized memory trace.

    The plan's latency, costed on a device ``plan_scale`` times slower than the reference, is
    rescaled to the client's speed. The client holds the memory it was planned against: its
    predicted ``budget`` (capped at the untreated peak), or the plan's peak when larger or when
    no budget is given. Every trace sample inside the run whose safe budget falls below that
    working set adds a refault penalty. A sample below the graph's pinned minimum kills the
    run; it restarts from the next sample and is dropped after ``max_kills`` retries.
    Without a plan the client needs the untreated peak memory.
    """
    params = params or SimulationParams()
    if plan is None:
        est = math.fsum(op.base_time for op in graph.ops)
        working = graph.untreated_peak()
        plan_scale = 1.0
    else:
        est = plan.est_latency
        working = plan.peak_memory
        if budget is not None:
            working = max(working, min(budget, graph.untreated_peak()))
    base = params.local_iterations * est * client.compute_scale / plan_scale
    minimum = graph.pinned_minimum()

    t = start
    lost = penalty_total = 0.0
    faults_total = kills = 0
    while True:
        penalty = 0.0
        killed_at = None
        for sample in trace.between(t, t + base):
            realized = m_safe(sample)
            if realized < minimum:
                killed_at = sample.t
                break
            seconds, faults = refault_penalty(working - realized, params)
            penalty += seconds
            faults_total += faults
        penalty_total += penalty
        if killed_at is None:
            return LocalRoundResult(
                client.client_id, lost + base + penalty, faults_total, kills, False, penalty_total
            )
        kills += 1
        restart = trace.after(killed_at).t
        lost += restart - t + penalty
        t = restart
        logger.debug("client %d killed at %.1f s (kill %d)", client.client_id, killed_at, kills)
        if kills > max_kills:
            return LocalRoundResult(
                client.client_id, lost, faults_total, kills, True, penalty_total
            )


# Learning


@dataclass(frozen=True)
class LocalUpdate:
    client_id: int
    delta: npt.NDArray[np.float64]
    sample_count: int
    losses: tuple[float, ...]


class Trainer(Protocol):
    """Produces a client's model update for a round."""

    def train(self, client: ClientSpec, round_index: int) -> LocalUpdate: ...


class LossProxy:
    """Synthetic global learning curve.

    A client's novelty is ``0.5 + gap``, where the gap starts at the shard's divergence from the
    fleet and shrinks by ``novelty_decay`` each time the client trains. A round moves the loss
    toward the floor by ``learning_rate`` times the share of total novelty covered.
    """

    def __init__(self, fleet: FleetSpec, params: SimulationParams | None = None) -> None:
        params = params or SimulationParams()
        self.loss = params.initial_loss
        self.floor = params.loss_floor
        self.rate = params.learning_rate
        self.decay = params.novelty_decay
        self.gaps = {c.client_id: c.shard.divergence for c in fleet.clients}

    def novelty(self, client_id: int) -> float:
        return 0.5 + self.gaps[client_id]

    def coverage(self, participants: Iterable[int]) -> float:
        total = math.fsum(self.novelty(cid) for cid in sorted(self.gaps))
        return math.fsum(self.novelty(cid) for cid in sorted(set(participants))) / total

    def client_losses(
        self, client_id: int, rng: np.random.Generator, batch: int = 8
    ) -> tuple[float, ...]:
        level = self.loss * (0.5 + self.gaps[client_id])
        draws = level * (1.0 + 0.1 * rng.standard_normal(batch))
        return tuple(float(x) for x in np.maximum(draws, 0.0))

    def step(self, participants: Iterable[int]) -> float:
        """Apply one aggregated round and return the new global loss."""
        ids = sorted(set(participants))
        covered = self.coverage(ids) if ids else 0.0
        self.loss = self.floor + (self.loss - self.floor) * (1.0 - self.rate * covered)
        for cid in ids:
            self.gaps[cid] *= self.decay
        return self.loss


class ProxyTrainer:
    """Default trainer: losses drawn from the loss proxy, a unit-direction update scaled by gap."""

    def __init__(self, proxy: LossProxy, seed: int = 0, dim: int = 16, batch: int = 8) -> None:
        self.proxy = proxy
        self.seed = seed
        self.dim = dim
        self.batch = batch

    def train(self, client: ClientSpec, round_index: int) -> LocalUpdate:
        rng = np.random.default_rng(derive_seed(self.seed, round_index, client.client_id))
        losses = self.proxy.client_losses(client.client_id, rng, self.batch)
        direction = rng.standard_normal(self.dim)
        delta = -self.proxy.gaps[client.client_id] * direction / np.linalg.norm(direction)
        return LocalUpdate(client.client_id, delta, client.shard.sample_count, losses)


def aggregate(updates: Sequence[LocalUpdate]) -> npt.NDArray[np.float64]:
    """Sample-count weighted mean of the update vectors.

    Raises:
        SchemaError: If there are no updates or their lengths differ.
    """
    if not updates:
        raise SchemaError("no updates to aggregate")
    lengths = {u.delta.shape for u in updates}
    if len(lengths) != 1:
        raise SchemaError(f"update vectors differ in length: {sorted(lengths)}")
    weights = np.array([u.sample_count for u in updates], dtype=np.float64)
    stacked = np.stack([np.asarray(u.delta, dtype=np.float64) for u in updates])
    result: npt.NDArray[np.float64] = np.average(stacked, axis=0, weights=weights)
    return result


# Planning


@dataclass(frozen=True)
class DispatchedPlan:
    """A plan as sent to a client, with the tier speed it was costed on."""

    plan: ExecutionPlan
    scale: float
    representative: int
    key: PlanKey | None = None


@dataclass(frozen=True)
class RoundPlans:
    """Per-client plans for one round; ``None`` marks a client whose cluster is unservable."""

    plans: Mapping[int, DispatchedPlan | None]
    invocations: int
    assignment: ClusterAssignment | None = None

    @property
    def unservable(self) -> list[int]:
        return sorted(cid for cid, p in self.plans.items() if p is None)


def plan_for_cluster(
    cluster: Sequence[ClientProfile],
    graph: ComputationGraph,
    cache: PlanCache,
    fleet: FleetSpec,
    strategy: Strategy = Strategy.HYBRID,
    required_kinds: Iterable[OpKind] | None = None,
) -> DispatchedPlan:
    """Plan for the cluster's least capable member, reused by every member.

    Raises:
        InfeasibleBudgetError: If the representative's budget admits no plan.
    """
    if not cluster:
        raise SelectionError("cannot plan for an empty cluster")
    rep = least_capable(cluster, required_kinds)
    tier = fleet.tier(fleet.client(rep.client_id).tier_gb)
    tier_index = fleet.tier_index(tier.gb)
    plan = cache.get_or_generate(graph, rep.mem_budget, tier_index, tier.device(), strategy)
    key = cache.key_for(graph, rep.mem_budget, tier_index, strategy)
    return DispatchedPlan(plan, tier.scale, rep.client_id, key)


def plan_round(
    profiles: Sequence[ClientProfile],
    graph: ComputationGraph,
    fleet: FleetSpec,
    cache: PlanCache,
    *,
    clusters: int = 5,
    seed: int = 0,
    strategy: Strategy = Strategy.HYBRID,
    clustered: bool = True,
) -> RoundPlans:
    """Plans for every client in ``profiles``.

    Clustered planning asks the cache once per cluster; per-client planning runs the planner
    once per client for its exact budget.
    """
    kinds = sorted(graph.kinds(), key=lambda k: k.value)
    plans: dict[int, DispatchedPlan | None] = {}
    if not clustered:
        for profile in sorted(profiles, key=lambda p: p.client_id):
            tier = fleet.tier(fleet.client(profile.client_id).tier_gb)
            try:
                plan = generate_plan(
                    graph, tier.device(), profile.mem_budget, cache.codec_model, strategy
                )
                plans[profile.client_id] = DispatchedPlan(plan, tier.scale, profile.client_id)
            except InfeasibleBudgetError:
                plans[profile.client_id] = None
        return RoundPlans(plans, len(plans))

    before = cache.misses
    k = min(clusters, distinct_profiles(profiles, kinds))
    assignment = cluster_clients(profiles, k, seed, kinds)
    by_id = {p.client_id: p for p in profiles}
    for members in assignment.members:
        try:
            dispatched: DispatchedPlan | None = plan_for_cluster(
                [by_id[c] for c in members], graph, cache, fleet, strategy, kinds
            )
        except InfeasibleBudgetError as exc:
            logger.debug("cluster %s is unservable: %s", members, exc)
            dispatched = None
        for cid in members:
            plans[cid] = dispatched
    return RoundPlans(plans, cache.misses - before, assignment)


# Simulation


@dataclass(frozen=True)
class RoundRecord:
    """Observables of one round; ``time`` is its wall time, ``elapsed`` the running total."""

    round: int
    selected: tuple[int, ...]
    participants: tuple[int, ...]
    latencies: Mapping[int, float]
    page_faults: Mapping[int, int]
    lmk_kills: Mapping[int, int]
    regenerations: tuple[int, ...]
    unservable: tuple[int, ...]
    time: float
    elapsed: float
    proxy_loss: float
    planner_invocations: int
    comm_s: float
    update_norm: float

    def to_row(self) -> dict[str, object]:
        return {
            "round": self.round,
            "time": self.time,
            "participants": len(self.participants),
            "faults": sum(self.page_faults.values()),
            "regen": len(self.regenerations),
            "proxy_loss": self.proxy_loss,
        }


@dataclass(frozen=True)
class SimulationSummary:
    variant: str
    seed: int
    rounds: int
    total_time: float
    time_to_target: float | None
    rounds_to_target: int | None
    final_loss: float
    planner_invocations: int
    page_faults: int
    lmk_kills: int
    regen_requests: int
    dropped: int
    comm_overhead: float

    def to_row(self) -> dict[str, object]:
        row: dict[str, object] = {name: getattr(self, name) for name in SUMMARY_COLUMNS}
        for name in ("time_to_target", "rounds_to_target"):
            if row[name] is None:
                row[name] = ""
        return row


@dataclass(frozen=True)
class SimulationResult:
    records: tuple[RoundRecord, ...]
    summary: SimulationSummary


class _ClientState:
    def __init__(
        self,
        spec: ClientSpec,
        trace: TraceBuffer,
        predictor: PredictorConfig,
        graph: ComputationGraph,
    ) -> None:
        self.spec = spec
        self.trace = trace
        self.predictor = BudgetPredictor(predictor)
        self.fed_until = 0.0
        self.op_times = kind_times(graph, spec.device())
        self.profile: ClientProfile | None = None
        self.pending_losses: tuple[float, ...] = ()
        self.fault_history: list[int] = []
        self.regen_rounds: list[int] = []
        self.plan_key: PlanKey | None = None


def codec_model_for(config: SimulationConfig) -> CodecModel:
    """Codec cost model for a run: measured on synthetic activations when ``calibrate_codec``."""
    if config.simulation.calibrate_codec:
        return CodecModel.calibrate(config.codec, seed=config.seed)
    return CodecModel.default()


def build_traces(fleet: FleetSpec, predictor: PredictorConfig) -> dict[int, TraceBuffer]:
    """One lazily generated memory trace per client, shared by every run over the fleet."""
    return {
        c.client_id: TraceBuffer(
            TraceStream(
                c.total_bytes,
                c.trace_seed,
                sample_s=predictor.sample_s,
                swap_kind=c.swap_kind,
                watermark_fraction=predictor.watermark_fraction,
            )
        )
        for c in fleet.clients
    }


class FederatedSimulation:
    """One deterministic simulation run.

    Args:
        config: Validated simulation config; its ablation switches select the variant.
        graph: Model graph; built from the config when None.
        fleet: Device fleet; built from the config when None.
        cache: Plan cache, shareable between runs over the same graph.
        traces: Per-client memory traces, shareable between runs over the same fleet.
        trainer: Local training hook; defaults to :class:`ProxyTrainer`.
    """

    def __init__(
        self,
        config: SimulationConfig,
        graph: ComputationGraph | None = None,
        fleet: FleetSpec | None = None,
        cache: PlanCache | None = None,
        traces: Mapping[int, TraceBuffer] | None = None,
        trainer: Trainer | None = None,
    ) -> None:
        self.config = config
        self.params = config.simulation
        self.ablation = config.ablation
        self.graph = graph or config.build_graph()
        self.fleet = fleet or config.build_fleet()
        if config.selection.k > len(self.fleet):
            raise SelectionError(
                f"cannot select {config.selection.k} clients from a fleet of {len(self.fleet)}"
            )
        if cache is None:
            cache = PlanCache(self.params.bucket_bytes, codec_model_for(config))
        self.cache = cache
        traces = traces or build_traces(self.fleet, config.predictor)
        self.model = GlobalModelReq(self.graph.untreated_peak())
        self.kinds = sorted(self.graph.kinds(), key=lambda k: k.value)
        self.strategy = Strategy.HYBRID if self.ablation.codec else Strategy.EVICT_ONLY
        self.clients = {
            c.client_id: _ClientState(c, traces[c.client_id], config.predictor, self.graph)
            for c in self.fleet.clients
        }
        self.proxy = LossProxy(self.fleet, self.params)
        self.trainer: Trainer = trainer or ProxyTrainer(self.proxy, config.seed)
        self.global_model: npt.NDArray[np.float64] | None = None
        self._plan_bytes: dict[ExecutionPlan, int] = {}
        self._regenerated: dict[int, ExecutionPlan] = {}

    def slot(self, round_index: int) -> float:
        """Trace time at which the round starts; the first window is full."""
        return self.config.predictor.window_s + round_index * self.params.round_interval_s

    def _check_in(self, state: _ClientState, round_index: int, now: float) -> ClientReport:
        samples = state.trace.between(state.fed_until, now)
        state.fed_until = now
        if self.ablation.predictor:
            state.predictor.observe_all(samples)
            budget = state.predictor.predict(now)
        else:
            budget = samples[-1].m_avail if samples else state.trace.after(now).m_avail
        report = ClientReport(
            client_id=state.spec.client_id,
            round=round_index,
            mem_budget_bytes=max(1, budget),
            op_times=state.op_times,
            losses=state.pending_losses,
        )
        state.pending_losses = ()
        if state.profile is None:
            state.profile = ClientProfile.from_report(report)
        else:
            state.profile = state.profile.with_report(report)
        return report

    def _select(self, round_index: int, profiles: list[ClientProfile]) -> list[int]:
        k = self.config.selection.k
        if self.ablation.selector:
            selection = select_clients(
                profiles,
                self.config.selection,
                self.model,
                seed=derive_seed(self.config.seed, round_index, 1),
                required_kinds=self.kinds,
            )
            return sorted(selection.ids)
        rng = np.random.default_rng(derive_seed(self.config.seed, round_index, 2))
        ids = [p.client_id for p in profiles]
        return sorted(int(c) for c in rng.choice(ids, size=k, replace=False))

    def _plan_size(self, plan: ExecutionPlan) -> int:
        if plan not in self._plan_bytes:
            self._plan_bytes[plan] = len(plan.to_yaml().encode())
        return self._plan_bytes[plan]

    def _run_client(
        self,
        state: _ClientState,
        dispatched: DispatchedPlan | None,
        now: float,
        report: ClientReport,
    ) -> LocalRoundResult:
        return simulate_local_round(
            state.spec,
            None if dispatched is None else dispatched.plan,
            self.graph,
            state.trace,
            now,
            self.params,
            max_kills=self.config.predictor.regen.tp2,
            plan_scale=1.0 if dispatched is None else dispatched.scale,
            budget=report.mem_budget_bytes,
        )

    def regenerate(
        self, client_id: int, round_index: int, result: LocalRoundResult, now: float
    ) -> PlanKey | None:
        """Record a client's round and, when a trigger fires, re-plan it for a shorter window.

        The shrunk window re-predicts the client's budget at ``now`` and the plan for the new
        budget bucket is fetched from the plan cache, or generated on a miss. Returns the new
        plan key, or None when no regeneration happens.
        """
        state = self.clients[client_id]
        history = state.fault_history
        prev_avg = math.fsum(history) / len(history) if history else math.inf
        history.append(result.page_faults)
        if not self.ablation.predictor:
            return None
        stats = RoundStats(result.page_faults, result.lmk_kills)
        decision = should_regenerate(stats, prev_avg, self.config.predictor.regen)
        if not decision.triggered:
            return None
        recent = [r for r in state.regen_rounds if r > round_index - REGEN_PERIOD]
        if len(recent) >= self.params.regen_cap:
            logger.debug("client %d regeneration capped", client_id)
            return None
        state.regen_rounds.append(round_index)
        window = state.predictor.shrink_window()
        budget = max(1, state.predictor.predict(now))
        tier = self.fleet.tier(state.spec.tier_gb)
        tier_index = self.fleet.tier_index(tier.gb)
        key = self.cache.key_for(self.graph, budget, tier_index, self.strategy)
        logger.debug(
            "client %d requests a new plan (%s); window %.1f s, bucket %d -> %d",
            client_id,
            decision.reason,
            window,
            -1 if state.plan_key is None else state.plan_key.bucket,
            key.bucket,
        )
        state.plan_key = key
        if self.ablation.planner:
            try:
                plan = self.cache.get_or_generate(
                    self.graph, budget, tier_index, tier.device(), self.strategy
                )
            except InfeasibleBudgetError as exc:
                logger.debug("client %d has no plan for its new budget: %s", client_id, exc)
            else:
                self._regenerated[client_id] = plan
        return key

    def _upload_bytes(self) -> int:
        raw = self.params.update_bytes
        if not self.ablation.codec:
            return raw
        return self.cache.codec_model.compressed_bytes(OpKind.CONV, raw)

    def run_round(self, round_index: int, elapsed: float) -> RoundRecord:
        now = self.slot(round_index)
        reports = {cid: self._check_in(s, round_index, now) for cid, s in self.clients.items()}
        profiles = [self.clients[cid].profile for cid in sorted(self.clients)]
        pool = [p for p in profiles if p is not None]
        selected = self._select(round_index, pool)

        invocations = 0
        dispatch: dict[int, DispatchedPlan | None] = {cid: None for cid in selected}
        unservable: list[int] = []
        if self.ablation.planner:
            chosen = [self.clients[cid].profile for cid in selected]
            round_plans = plan_round(
                [p for p in chosen if p is not None],
                self.graph,
                self.fleet,
                self.cache,
                clusters=self.params.clusters,
                seed=derive_seed(self.config.seed, round_index, 3),
                strategy=self.strategy,
            )
            invocations = round_plans.invocations
            unservable = round_plans.unservable
            dispatch = {cid: p for cid, p in round_plans.plans.items() if p is not None}
        for cid, dispatched in dispatch.items():
            self.clients[cid].plan_key = None if dispatched is None else dispatched.key

        order = sorted(dispatch)

        def run_client(cid: int) -> LocalRoundResult:
            return self._run_client(self.clients[cid], dispatch[cid], now, reports[cid])

        if self.params.workers > 1 and len(order) > 1:
            with ThreadPoolExecutor(max_workers=self.params.workers) as pool_executor:
                results = list(pool_executor.map(run_client, order))
        else:
            results = [run_client(cid) for cid in order]

        updates = []
        regenerated = []
        latencies: dict[int, float] = {}
        comm_s = 0.0
        upload = self._upload_bytes()
        self._regenerated = {}
        before = self.cache.misses
        for cid, result in zip(order, results):
            state = self.clients[cid]
            sent = len(yaml.safe_dump(reports[cid].to_dict()).encode())
            plan = dispatch[cid]
            if plan is not None:
                sent += self._plan_size(plan.plan)
            if self.regenerate(cid, round_index, result, now) is not None:
                regenerated.append(cid)
                if cid in self._regenerated:
                    sent += self._plan_size(self._regenerated[cid])
            if not result.dropped:
                sent += upload
            transfer = sent / self.params.network_bw
            comm_s = max(comm_s, transfer)
            latencies[cid] = result.latency + transfer
            if result.dropped:
                continue
            update = self.trainer.train(state.spec, round_index)
            state.pending_losses = update.losses
            updates.append(update)
        invocations += self.cache.misses - before

        update_norm = 0.0
        if updates:
            delta = aggregate(updates)
            self.global_model = delta if self.global_model is None else self.global_model + delta
            update_norm = float(np.linalg.norm(delta))
        participants = tuple(u.client_id for u in updates)
        loss = self.proxy.step(participants)

        round_time = max(latencies.values(), default=0.0) + self.params.aggregation_s
        return RoundRecord(
            round=round_index,
            selected=tuple(selected),
            participants=participants,
            latencies=latencies,
            page_faults={r.client_id: r.page_faults for r in results},
            lmk_kills={r.client_id: r.lmk_kills for r in results},
            regenerations=tuple(regenerated),
            unservable=tuple(unservable),
            time=round_time,
            elapsed=elapsed + round_time,
            proxy_loss=loss,
            planner_invocations=invocations,
            comm_s=comm_s,
            update_norm=update_norm,
        )

    def run(self, stop_at_target: bool = False) -> SimulationResult:
        """Run ``config.rounds`` rounds, or until the target loss when ``stop_at_target``."""
        records: list[RoundRecord] = []
        elapsed = 0.0
        for round_index in range(self.config.rounds):
            record = self.run_round(round_index, elapsed)
            elapsed = record.elapsed
            records.append(record)
            logger.debug(
                "round %d: %.2f s, %d participants, loss %.4f",
                round_index,
                record.time,
                len(record.participants),
                record.proxy_loss,
            )
            if stop_at_target and record.proxy_loss <= self.params.target_loss:
                break
        return SimulationResult(tuple(records), self._summarize(records))

    def _summarize(self, records: Sequence[RoundRecord]) -> SimulationSummary:
        target = self.params.target_loss
        reached = next((r for r in records if r.proxy_loss <= target), None)
        total_time = records[-1].elapsed if records else 0.0
        comm = math.fsum(r.comm_s for r in records)
        return SimulationSummary(
            variant=self.ablation.name,
            seed=self.config.seed,
            rounds=len(records),
            total_time=total_time,
            time_to_target=None if reached is None else reached.elapsed,
            rounds_to_target=None if reached is None else reached.round + 1,
            final_loss=records[-1].proxy_loss if records else self.proxy.loss,
            planner_invocations=sum(r.planner_invocations for r in records),
            page_faults=sum(sum(r.page_faults.values()) for r in records),
            lmk_kills=sum(sum(r.lmk_kills.values()) for r in records),
            regen_requests=sum(len(r.regenerations) for r in records),
            dropped=sum(len(r.selected) - len(r.participants) for r in records),
            comm_overhead=comm / total_time if total_time > 0 else 0.0,
        )


def run_simulation(
    config: SimulationConfig,
    *,
    graph: ComputationGraph | None = None,
    fleet: FleetSpec | None = None,
    cache: PlanCache | None = None,
    traces: Mapping[int, TraceBuffer] | None = None,
    trainer: Trainer | None = None,
    stop_at_target: bool = False,
) -> SimulationResult:
    """Run ``config.rounds`` rounds; identical inputs give identical results."""
    simulation = FederatedSimulation(config, graph, fleet, cache, traces, trainer)
    return simulation.run(stop_at_target)


def compare_variants(
    config: SimulationConfig,
    seeds: Iterable[int],
    variants: Sequence[str] = VARIANTS,
    graph: ComputationGraph | None = None,
    *,
    cache: PlanCache | None = None,
    stop_at_target: bool = False,
) -> list[SimulationSummary]:
    """Paired runs: for each seed, every variant sees the same fleet and memory traces.

    One plan cache serves every run, so each distinct plan is generated once.
    """
    graph = graph or config.build_graph()
    ablations = [AblationConfig.variant(v) for v in variants]
    if cache is None:
        cache = PlanCache(config.simulation.bucket_bytes, codec_model_for(config))
    summaries = []
    for seed in seeds:
        seeded = replace(config, seed=seed)
        fleet = seeded.build_fleet()
        traces = build_traces(fleet, config.predictor)
        for ablation in ablations:
            result = run_simulation(
                replace(seeded, ablation=ablation),
                graph=graph,
                fleet=fleet,
                cache=cache,
                traces=traces,
                stop_at_target=stop_at_target,
            )
            summaries.append(result.summary)
    logger.info(
        "compared %d variants: %d plans cached, %d hits", len(ablations), len(cache), cache.hits
    )
    return summaries


def wins_by_variant(
    summaries: Iterable[SimulationSummary], baseline: str = "full"
) -> dict[str, tuple[int, int]]:
    """Per variant, ``(seeds where the baseline reached the target sooner, paired seeds)``.

    A run that never reached the target counts as infinitely slow.
    """

    def reached(summary: SimulationSummary) -> float:
        return math.inf if summary.time_to_target is None else summary.time_to_target

    by_seed: dict[int, dict[str, SimulationSummary]] = {}
    for summary in summaries:
        by_seed.setdefault(summary.seed, {})[summary.variant] = summary
    tally: dict[str, tuple[int, int]] = {}
    for runs in by_seed.values():
        if baseline not in runs:
            continue
        base = reached(runs[baseline])
        for variant, summary in runs.items():
            if variant == baseline:
                continue
            wins, paired = tally.get(variant, (0, 0))
            tally[variant] = (wins + int(base < reached(summary)), paired + 1)
    return dict(sorted(tally.items()))


def write_rounds_csv(records: Iterable[RoundRecord], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=ROUND_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record.to_row())


def write_summary_csv(summaries: Iterable[SimulationSummary], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for summary in summaries:
        writer.writerow(summary.to_row())

