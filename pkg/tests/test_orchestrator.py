"""Tests for the federated round loop."""

import io
import math

import numpy as np
import pytest
from memwall.cache import PlanCache
from memwall.codec.model import CodecModel
from memwall.config import (
    SEED_ENV,
    VARIANTS,
    AblationConfig,
    SimulationConfig,
    SimulationParams,
    load_config,
)
from memwall.exceptions import SchemaError, SelectionError
from memwall.fleet import ClientSpec, FleetSpec, ShardSpec, generate_fleet
from memwall.graph import load_graph
from memwall.models import MemoryTraceSample, OpKind, ProcessInfo
from memwall.orchestrator import (
    ROUND_COLUMNS,
    FederatedSimulation,
    LocalRoundResult,
    LocalUpdate,
    LossProxy,
    SimulationSummary,
    aggregate,
    compare_variants,
    derive_seed,
    plan_round,
    refault_penalty,
    run_simulation,
    simulate_local_round,
    wins_by_variant,
    write_rounds_csv,
    write_summary_csv,
)
from memwall.planner import ExecutionPlan
from memwall.selector import ClientProfile
from memwall.traces import GIB, MIB


class FlatTrace:
    """One sample per second; ``m_avail(t)`` gives the reading."""

    def __init__(self, m_avail):
        self.m_avail = m_avail

    def sample(self, t):
        return MemoryTraceSample(float(t), self.m_avail(t), 0)

    def between(self, start, end):
        return [self.sample(t) for t in range(math.ceil(start), math.ceil(end))]

    def after(self, t):
        return self.sample(math.floor(t) + 1)


class SteppedTrace:
    """One foreground sample per second: ``high`` bytes before ``switch_t``, ``low`` after."""

    def __init__(self, high, low, switch_t):
        self.high, self.low, self.switch_t = high, low, switch_t

    def sample(self, t):
        m_avail = self.high if t < self.switch_t else self.low
        return MemoryTraceSample(float(t), m_avail, 0, procs=(ProcessInfo(0, foreground=True),))

    def between(self, start, end):
        return [self.sample(t) for t in range(math.ceil(start), math.ceil(end))]

    def after(self, t):
        return self.sample(math.floor(t) + 1)


def tiny_graph():
    """One Conv op over two four-byte tensors."""
    return load_graph(
        {
            "ops": [{"id": 0, "kind": "Conv", "inputs": [0], "outputs": [1], "base_time_us": 100}],
            "tensors": [{"id": 0, "shape": [1]}, {"id": 1, "shape": [1]}],
        }
    )


def skip_graph():
    return load_graph(
        {
            "ops": [
                {"id": 0, "kind": "Conv", "inputs": [0], "outputs": [1], "base_time_us": 100},
                {"id": 1, "kind": "Add", "inputs": [1], "outputs": [2], "base_time_us": 10},
                {"id": 2, "kind": "Conv", "inputs": [2], "outputs": [3], "base_time_us": 100},
                {"id": 3, "kind": "Add", "inputs": [3], "outputs": [4], "base_time_us": 10},
                {"id": 4, "kind": "Add", "inputs": [1, 4, 0], "outputs": [5], "base_time_us": 10},
            ],
            "tensors": [
                {"id": 0, "shape": [1]},
                {"id": 1, "shape": [100]},
                {"id": 2, "shape": [1]},
                {"id": 3, "shape": [100]},
                {"id": 4, "shape": [1]},
                {"id": 5, "shape": [1]},
            ],
        }
    )


def client_spec(cid, tier_gb=8, scale=2.0, samples=100, divergence=0.5):
    return ClientSpec(
        client_id=cid,
        tier_gb=tier_gb,
        compute_scale=scale,
        shard=ShardSpec(samples, (0.5, 0.5), divergence),
        trace_seed=cid,
    )


def small_config(**overrides):
    data = {
        "seed": 1,
        "rounds": 4,
        "graph": {"blocks": 2, "batch": 4, "channels": 8, "size": 8},
        "fleet": {"clients": 6},
        "selection": {"k": 3, "epsilon": 0.5},
        "simulation": {"clusters": 2},
    }
    data.update(overrides)
    return SimulationConfig.from_dict(data)


class TestRefaultPenalty:
    """Tests for the refault cost model."""

    def test_no_overflow(self):
        """A working set that fits costs nothing."""
        assert refault_penalty(0, SimulationParams()) == (0.0, 0)
        assert refault_penalty(-10, SimulationParams()) == (0.0, 0)

    def test_overflow(self):
        """Overflow is streamed back after one fault stall; a share of its pages counts."""
        params = SimulationParams(reaccess_ratio=0.5)
        seconds, faults = refault_penalty(100 * 4096, params)
        assert faults == 50
        assert seconds == pytest.approx(100 * 4096 / 1e9 + 1e-3)

    def test_hundred_megabytes_at_one_gigabyte_per_second(self):
        """A 100 MB dip at 1 GB/s costs about a tenth of a second."""
        seconds, _ = refault_penalty(100_000_000, SimulationParams(fault_latency_s=0.0))
        assert seconds == pytest.approx(0.1)


class TestSimulateLocalRound:
    """Tests for simulate_local_round."""

    def plan(self, peak=1000):
        return ExecutionPlan((), est_latency=10.0, peak_memory=peak, budget=peak)

    def test_fits(self):
        """Enough memory gives the plan latency scaled to the client."""
        result = simulate_local_round(
            client_spec(1), self.plan(), tiny_graph(), FlatTrace(lambda t: 2000), 0.0
        )
        assert result.latency == pytest.approx(20.0)
        assert (result.page_faults, result.lmk_kills, result.dropped) == (0, 0, False)

    def test_plan_scale(self):
        """Plans costed on a slower tier are rescaled."""
        result = simulate_local_round(
            client_spec(1),
            self.plan(),
            tiny_graph(),
            FlatTrace(lambda t: 2000),
            0.0,
            plan_scale=4.0,
        )
        assert result.latency == pytest.approx(5.0)

    def test_overflow_penalty(self):
        """Every sample below the plan's peak adds refault time."""
        params = SimulationParams(reaccess_ratio=0.5)
        plan = self.plan(peak=1000 + 100 * 4096)
        result = simulate_local_round(
            client_spec(1), plan, tiny_graph(), FlatTrace(lambda t: 1000), 0.0, params
        )
        per_sample = 100 * 4096 / 1e9 + 1e-3
        assert result.page_faults == 20 * 50
        assert result.penalty == pytest.approx(20 * per_sample)
        assert result.latency == pytest.approx(20.0 + 20 * per_sample)

    def test_budget_sets_working_set(self):
        """Overflow is measured against the predicted budget, capped at the untreated peak."""
        graph = skip_graph()
        untreated = graph.untreated_peak()
        assert graph.pinned_minimum() < 500 < 700 < untreated
        params = SimulationParams(reaccess_ratio=1.0)
        trace = FlatTrace(lambda t: 500)

        def run(budget):
            return simulate_local_round(
                client_spec(1), self.plan(peak=450), graph, trace, 0.0, params, budget=budget
            )

        assert run(None).penalty == 0.0
        assert run(400).penalty == 0.0
        tight = run(700)
        assert tight.page_faults == 20
        assert tight.penalty == pytest.approx(20 * (200 / 1e9 + 1e-3))
        capped = run(10**9)
        assert capped.penalty == pytest.approx(20 * ((untreated - 500) / 1e9 + 1e-3))

    def test_kill_and_restart(self):
        """A dip below the pinned minimum restarts the run from the next sample."""
        trace = FlatTrace(lambda t: 0 if t == 5 else 2000)
        result = simulate_local_round(client_spec(1), self.plan(), tiny_graph(), trace, 0.0)
        assert result.lmk_kills == 1
        assert not result.dropped
        assert result.latency == pytest.approx(6.0 + 20.0)

    def test_dropped_after_repeated_kills(self):
        """A client killed more than max_kills times drops out."""
        trace = FlatTrace(lambda t: 0)
        result = simulate_local_round(
            client_spec(1), self.plan(), tiny_graph(), trace, 0.0, max_kills=3
        )
        assert result.dropped
        assert result.lmk_kills == 4

    def test_without_plan(self):
        """Without a plan the client runs the untreated graph."""
        result = simulate_local_round(
            client_spec(1), None, tiny_graph(), FlatTrace(lambda t: 2000), 0.0
        )
        assert result.latency == pytest.approx(2 * 100e-6)


class TestLearning:
    """Tests for the loss proxy and aggregation."""

    def test_aggregate_weights_by_samples(self):
        """Updates average by sample count."""
        updates = [
            LocalUpdate(0, np.array([0.0, 0.0]), 1, ()),
            LocalUpdate(1, np.array([4.0, 8.0]), 3, ()),
        ]
        assert aggregate(updates).tolist() == pytest.approx([3.0, 6.0])

    def test_aggregate_rejects_bad_input(self):
        """Empty or ragged updates cannot be aggregated."""
        with pytest.raises(SchemaError):
            aggregate([])
        with pytest.raises(SchemaError):
            aggregate(
                [
                    LocalUpdate(0, np.zeros(2), 1, ()),
                    LocalUpdate(1, np.zeros(3), 1, ()),
                ]
            )

    def test_loss_proxy_step(self):
        """A round covering half the novelty moves the loss an eighth of the way down."""
        fleet = FleetSpec((client_spec(0), client_spec(1)))
        proxy = LossProxy(fleet, SimulationParams(learning_rate=0.25, novelty_decay=0.5))
        assert proxy.coverage([0]) == pytest.approx(0.5)
        assert proxy.step([0]) == pytest.approx(0.2 + 2.1 * 0.875)
        assert proxy.gaps[0] == 0.25
        assert proxy.coverage([0]) < 0.5

    def test_novelty_ignores_sample_count(self):
        """Shard size weighs aggregation, not novelty; training decays the gap."""
        fleet = FleetSpec((client_spec(0, samples=100), client_spec(1, samples=900)))
        proxy = LossProxy(fleet)
        assert proxy.coverage([0]) == pytest.approx(0.5)
        proxy.step([0])
        assert proxy.gaps[0] == pytest.approx(0.5 * SimulationParams().novelty_decay)

    def test_empty_round_keeps_loss(self):
        """No participants, no progress."""
        proxy = LossProxy(FleetSpec((client_spec(0),)))
        assert proxy.step([]) == pytest.approx(2.3)

    def test_derive_seed(self):
        """Derived seeds are stable and depend on every part."""
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
        assert 0 <= derive_seed(7) < 2**32


class TestPlanRound:
    """Tests for clustered and per-client planning."""

    def make_pool(self):
        fleet = FleetSpec(tuple(client_spec(i, tier_gb=8 if i % 2 else 12) for i in range(10)))
        profiles = [
            ClientProfile(
                i, 600 + 100 * i, {OpKind.CONV: 1e-4 * (1 + i % 3), OpKind.ADD: 1e-5 * (1 + i % 3)}
            )
            for i in range(10)
        ]
        return fleet, profiles

    def test_clustered_planning_is_cheaper(self):
        """Clustering needs at most one planner run per cluster."""
        fleet, profiles = self.make_pool()
        graph = skip_graph()
        clustered = plan_round(profiles, graph, fleet, PlanCache(bucket_bytes=100), clusters=3)
        per_client = plan_round(
            profiles, graph, fleet, PlanCache(bucket_bytes=100), clustered=False
        )
        assert 1 <= clustered.invocations <= 3
        assert per_client.invocations == 10
        assert clustered.unservable == per_client.unservable == []

    def test_cluster_plans_fit_every_member(self):
        """The least capable member's plan fits the whole cluster."""
        fleet, profiles = self.make_pool()
        budgets = {p.client_id: p.mem_budget for p in profiles}
        result = plan_round(profiles, skip_graph(), fleet, PlanCache(bucket_bytes=100), clusters=3)
        for members in result.assignment.members:
            plans = {result.plans[cid] for cid in members}
            assert len(plans) == 1
            dispatched = plans.pop()
            assert dispatched.representative == min(members, key=budgets.get)
            assert all(dispatched.plan.peak_memory <= budgets[cid] for cid in members)

    def test_unservable_cluster(self):
        """Budgets below the pinned minimum leave the cluster without a plan."""
        fleet, profiles = self.make_pool()
        poor = [ClientProfile(p.client_id, 300, p.op_times) for p in profiles[:2]]
        result = plan_round(poor, skip_graph(), fleet, PlanCache(bucket_bytes=100), clusters=1)
        assert result.unservable == [0, 1]


class TestSimulation:
    """Tests for full simulation runs."""

    def test_deterministic(self):
        """Identical inputs give identical runs."""
        first = run_simulation(small_config())
        second = run_simulation(small_config())
        assert first.summary == second.summary
        assert [r.participants for r in first.records] == [r.participants for r in second.records]

    def test_round_records(self):
        """Each round selects K clients and the loss never rises."""
        result = run_simulation(small_config())
        assert len(result.records) == 4
        losses = [2.3] + [r.proxy_loss for r in result.records]
        assert all(b <= a for a, b in zip(losses, losses[1:]))
        elapsed = 0.0
        for record in result.records:
            assert len(record.selected) == 3
            assert set(record.participants) <= set(record.selected)
            assert record.planner_invocations <= 2 + len(record.regenerations)
            elapsed += record.time
            assert record.elapsed == pytest.approx(elapsed)
        assert result.summary.rounds == 4
        assert result.summary.total_time == pytest.approx(elapsed)

    def test_workers_do_not_change_results(self):
        """Running clients in parallel gives the same summary."""
        serial = run_simulation(small_config())
        parallel = run_simulation(small_config(simulation={"clusters": 2, "workers": 3}))
        assert serial.summary == parallel.summary

    def test_no_planner_variant(self):
        """Without the planner nothing is planned."""
        config = small_config(ablation={"planner": False})
        result = run_simulation(config)
        assert result.summary.variant == "no-planner"
        assert result.summary.planner_invocations == 0

    def test_transfer_counts_toward_round_time(self):
        """Over a slow link the update upload dominates the round; raw updates take longer."""
        slow = {"clusters": 2, "network_bw": 1000.0}
        compressed = run_simulation(small_config(simulation=slow))
        upload = CodecModel.default().compressed_bytes(OpKind.CONV, MIB) / 1000.0
        aggregation = SimulationParams().aggregation_s
        for record in compressed.records:
            if record.participants:
                assert record.comm_s >= upload
                assert record.time >= upload + aggregation
            assert max(record.latencies.values(), default=0.0) + aggregation == pytest.approx(
                record.time
            )
        raw = run_simulation(small_config(simulation=slow, ablation={"codec": False}))
        assert raw.summary.total_time > compressed.summary.total_time

    def test_stop_at_target(self):
        """A run can end at the first round that reaches the target loss."""
        config = small_config(rounds=30, simulation={"clusters": 2, "target_loss": 2.2})
        result = run_simulation(config, stop_at_target=True)
        assert result.summary.rounds_to_target == len(result.records) < 30
        assert result.records[-1].proxy_loss <= 2.2
        assert all(r.proxy_loss > 2.2 for r in result.records[:-1])

    def test_regeneration_replans_for_new_bucket(self):
        """A trigger shrinks the window and fetches the plan for the re-predicted budget."""
        config = small_config()
        fleet = config.build_fleet()
        trace = SteppedTrace(16 * GIB, 1 * GIB, switch_t=30)
        traces = {c.client_id: trace for c in fleet.clients}
        sim = FederatedSimulation(config, fleet=fleet, traces=traces)
        cid = fleet.clients[0].client_id
        state = sim.clients[cid]
        now = sim.slot(0)
        report = sim._check_in(state, 0, now)
        tier = fleet.tier_index(fleet.client(cid).tier_gb)
        before = sim.cache.key_for(sim.graph, report.mem_budget_bytes, tier, sim.strategy)
        state.plan_key = before
        state.fault_history.append(1)
        misses = sim.cache.misses

        key = sim.regenerate(cid, 0, LocalRoundResult(cid, 1.0, 10_000, 0), now)
        assert key is not None
        assert key.bucket < before.bucket
        assert state.plan_key == key
        assert state.predictor.window == pytest.approx(config.predictor.window_s * 0.9)
        assert key in sim.cache
        assert sim.cache.misses == misses + 1

    def test_no_regeneration_without_trigger(self):
        """Page faults under the threshold keep the plan."""
        config = small_config()
        sim = FederatedSimulation(config)
        cid = sim.fleet.clients[0].client_id
        sim._check_in(sim.clients[cid], 0, sim.slot(0))
        sim.clients[cid].fault_history.append(100)
        result = LocalRoundResult(cid, 1.0, 150, 0)
        assert sim.regenerate(cid, 0, result, sim.slot(0)) is None
        assert sim.clients[cid].predictor.window == config.predictor.window_s

    def test_custom_trainer(self):
        """A trainer hook produces the updates."""
        calls = []

        class ConstantTrainer:
            def train(self, client, round_index):
                calls.append((round_index, client.client_id))
                return LocalUpdate(client.client_id, np.ones(4), 1, (1.0,))

        result = run_simulation(small_config(), trainer=ConstantTrainer())
        participated = sum(len(r.participants) for r in result.records)
        assert len(calls) == participated > 0
        assert all(r.update_norm == pytest.approx(2.0) for r in result.records if r.participants)

    def test_k_larger_than_fleet(self):
        """The fleet must hold K clients."""
        with pytest.raises(SelectionError):
            run_simulation(small_config(), fleet=generate_fleet(2, seed=0))

    def test_compare_variants(self):
        """Every seed runs every variant."""
        summaries = compare_variants(small_config(rounds=2), [0, 1], ["full", "no-codec"])
        assert [(s.seed, s.variant) for s in summaries] == [
            (0, "full"),
            (0, "no-codec"),
            (1, "full"),
            (1, "no-codec"),
        ]

    def test_compare_variants_calibrates_codec(self, monkeypatch):
        """The codec cost model is measured once when calibration is switched on."""
        calls = []

        def calibrate(config=None, seed=0):
            calls.append(seed)
            return CodecModel.default()

        monkeypatch.setattr(CodecModel, "calibrate", calibrate)
        config = small_config(rounds=1, simulation={"clusters": 2, "calibrate_codec": True})
        compare_variants(config, [0, 1], ["full", "no-codec"])
        assert calls == [1]
        compare_variants(small_config(rounds=1), [0], ["full"])
        assert calls == [1]


class TestVariantComparison:
    """Tests for paired comparisons of the full system against its ablations."""

    def summary(self, variant, seed, time_to_target):
        return SimulationSummary(
            variant=variant,
            seed=seed,
            rounds=10,
            total_time=100.0,
            time_to_target=time_to_target,
            rounds_to_target=None if time_to_target is None else 5,
            final_loss=1.0,
            planner_invocations=1,
            page_faults=0,
            lmk_kills=0,
            regen_requests=0,
            dropped=0,
            comm_overhead=0.0,
        )

    def test_wins_by_variant(self):
        """A variant that never reaches the target loses to one that does; ties do not count."""
        summaries = [
            self.summary("full", 0, 10.0),
            self.summary("no-codec", 0, 12.0),
            self.summary("no-planner", 0, None),
            self.summary("full", 1, None),
            self.summary("no-codec", 1, 9.0),
            self.summary("no-planner", 1, None),
            self.summary("full", 2, 8.0),
            self.summary("no-codec", 2, 8.0),
        ]
        assert wins_by_variant(summaries) == {"no-codec": (1, 3), "no-planner": (1, 2)}

    def test_full_system_beats_every_ablation(self, monkeypatch):
        """Over 100 paired seeds the full system reaches the target first on at least 95."""
        monkeypatch.delenv(SEED_ENV, raising=False)
        summaries = compare_variants(load_config(), range(100), stop_at_target=True)
        wins = wins_by_variant(summaries)
        assert sorted(wins) == sorted(VARIANTS[1:])
        for variant, (won, paired) in wins.items():
            assert paired == 100
            assert won >= 95, f"full beats {variant} on only {won}/100 seeds"


class TestCsvOutput:
    """Tests for the CSV writers."""

    def test_rounds_csv(self):
        """One header and one row per round."""
        result = run_simulation(small_config(rounds=2))
        out = io.StringIO()
        write_rounds_csv(result.records, out)
        lines = out.getvalue().splitlines()
        assert lines[0] == ",".join(ROUND_COLUMNS)
        assert len(lines) == 3
        assert lines[1].startswith("0,")

    def test_summary_csv_blank_target(self):
        """A target never reached is written as an empty field."""
        summary = SimulationSummary(
            variant=AblationConfig().name,
            seed=0,
            rounds=1,
            total_time=1.5,
            time_to_target=None,
            rounds_to_target=None,
            final_loss=2.0,
            planner_invocations=1,
            page_faults=0,
            lmk_kills=0,
            regen_requests=0,
            dropped=0,
            comm_overhead=0.0,
        )
        out = io.StringIO()
        write_summary_csv([summary], out)
        assert out.getvalue().splitlines()[1] == "full,0,1,1.5,,,2.0,1,0,0,0,0,0.0"
