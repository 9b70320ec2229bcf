"""Tests for MPS scoring, plan generation and replay."""

import dataclasses

import numpy as np
import pytest
from memwall.codec.model import CodecModel
from memwall.exceptions import InfeasibleBudgetError, MemwallError, SchemaError
from memwall.graph import load_graph, op_time
from memwall.graphgen import random_dag, training_graph
from memwall.models import DeviceProfile, OpKind
from memwall.planner import (
    ActionKind,
    ExecutionPlan,
    MemoryPoolSim,
    MpsScore,
    PlanAction,
    StaticSearch,
    Strategy,
    Treatment,
    ViolationKind,
    choose_technique,
    discardable_tensors,
    freed_lifetime,
    generate_plan,
    is_evictable,
    max_mps_tensor,
    recompute_cost,
    replay_plan,
    score_tensor,
)

from tests.oracles import idle_tensors, interpret_plan, static_optimum

REFERENCE = DeviceProfile.reference()


def skip_graph():
    """A large skip tensor (1) held across a large intermediate (3)."""
    return load_graph(
        {
            "name": "skip",
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


def transform_graph(crosses=True):
    """Conv output feeding a transpose, kept alive together with the graph input."""
    return load_graph(
        {
            "ops": [
                {"id": 0, "kind": "Conv", "inputs": [0], "outputs": [1], "base_time_us": 100},
                {
                    "id": 1,
                    "kind": "Transpose",
                    "inputs": [1],
                    "outputs": [2],
                    "base_time_us": 20,
                    "crosses_processor": crosses,
                },
                {"id": 2, "kind": "MatMul", "inputs": [2, 0], "outputs": [3], "base_time_us": 300},
                {"id": 3, "kind": "Add", "inputs": [3, 1, 0], "outputs": [4], "base_time_us": 10},
            ],
            "tensors": [{"id": i, "shape": [2, 2]} for i in range(5)],
        }
    )


def compressed_size(graph):
    model = CodecModel.default()

    def size(tid):
        producer = graph.tensors[tid].producer
        kind = OpKind.OTHER if producer is None else graph.op(producer).kind
        return model.compressed_bytes(kind, graph.tensors[tid].bytes)

    return size


class TestMpsScore:
    """Tests for the MPS score."""

    def test_reward_and_mps(self):
        """MPS is saved memory times freed lifetime over total cost."""
        score = MpsScore(saved_memory=100, freed_lifetime=2.0, purge_cost=1.0, regain_cost=3.0)
        assert score.reward == 200.0
        assert score.mps == 50.0

    def test_zero_cost_rejected(self):
        """A technique with no cost at all is not a valid score."""
        with pytest.raises(ValueError):
            MpsScore(100, 1.0, 0.0, 0.0)


class TestChooseTechnique:
    """Tests for choosing between eviction and compression."""

    def test_evict_when_recompute_scores_higher(self):
        """Recomputation wins only with a strictly higher score."""
        compute = MpsScore(100, 1.0, 0.0, 1.0)
        compress = MpsScore(50, 1.0, 0.5, 0.5)
        assert choose_technique((compute, compress)) is ActionKind.EVICT

    def test_tie_goes_to_compression(self):
        """Equal scores pick compression."""
        score = MpsScore(100, 1.0, 0.0, 1.0)
        assert choose_technique((score, score)) is ActionKind.COMPRESS

    def test_single_technique(self):
        """A missing technique leaves the other one."""
        score = MpsScore(100, 1.0, 0.0, 1.0)
        assert choose_technique((score, None)) is ActionKind.EVICT
        assert choose_technique((None, score)) is ActionKind.COMPRESS


class TestMaxMpsTensor:
    """Tests for victim selection."""

    def test_highest_mps_wins(self):
        """The tensor with the best score is picked."""
        scores = {
            1: (MpsScore(100, 1.0, 0.0, 1.0), None),
            2: (None, MpsScore(100, 1.0, 0.1, 0.1)),
        }
        assert max_mps_tensor(scores) == 2

    def test_tie_prefers_larger_saving(self):
        """Equal MPS goes to the tensor saving more memory."""
        scores = {
            1: (MpsScore(100, 1.0, 0.0, 1.0), None),
            2: (MpsScore(200, 1.0, 0.0, 2.0), None),
        }
        assert max_mps_tensor(scores) == 2

    def test_tie_prefers_lower_id(self):
        """Full ties go to the lower tensor id."""
        score = MpsScore(100, 1.0, 0.0, 1.0)
        assert max_mps_tensor({7: (score, None), 3: (score, None)}) == 3

    def test_nothing_reclaimable(self):
        """No applicable technique raises InfeasibleBudgetError."""
        with pytest.raises(InfeasibleBudgetError):
            max_mps_tensor({1: (None, None)})
        with pytest.raises(InfeasibleBudgetError):
            max_mps_tensor({})


class TestScoring:
    """Tests for per-tensor scoring on a graph."""

    def test_graph_inputs_are_not_evictable(self):
        """Only produced tensors whose inputs outlive them can be recomputed."""
        graph = transform_graph()
        assert not is_evictable(graph, 0)
        assert is_evictable(graph, 1)

    def test_short_lived_inputs_block_eviction(self):
        """A tensor whose producer inputs die first cannot be rebuilt."""
        graph = skip_graph()
        assert is_evictable(graph, 1)
        assert not is_evictable(graph, 3)

    def test_recompute_cost_counts_crossing_chain_twice(self):
        """A chain crossing processors costs double."""
        assert recompute_cost(transform_graph(True), 1, REFERENCE) == pytest.approx(140e-6)
        assert recompute_cost(transform_graph(False), 1, REFERENCE) == pytest.approx(120e-6)

    def test_recompute_cost_of_input(self):
        """Graph inputs have no producer to rerun."""
        with pytest.raises(MemwallError):
            recompute_cost(transform_graph(), 0, REFERENCE)

    def test_freed_lifetime_from_step(self):
        """From a step, the freed lifetime runs to the next use."""
        graph = transform_graph()
        assert freed_lifetime(graph, 1, REFERENCE) == 0.0
        assert freed_lifetime(graph, 1, REFERENCE, at_step=2) == pytest.approx(300e-6)
        assert freed_lifetime(graph, 4, REFERENCE, at_step=0) == 0.0

    def test_score_tensor(self):
        """Both techniques are scored for a recomputable tensor."""
        graph = transform_graph()
        compute, compress = score_tensor(graph, 1, REFERENCE, at_step=2)
        assert compute.saved_memory == 16
        assert compute.regain_cost == pytest.approx(140e-6)
        assert compress.saved_memory == 16 - 5
        assert choose_technique((compute, compress)) is ActionKind.COMPRESS

    def test_score_graph_input(self):
        """Graph inputs can only be compressed."""
        compute, compress = score_tensor(transform_graph(), 0, REFERENCE)
        assert compute is None
        assert compress is not None


class TestMemoryPoolSim:
    """Tests for the budget-enforcing pool."""

    def test_tracks_usage_and_peak(self):
        """Allocation, resize and free keep a running total."""
        pool = MemoryPoolSim(100)
        assert pool.alloc(1, 60) == 0
        assert pool.alloc(2, 30) == 60
        pool.resize(1, 20)
        pool.free(2)
        assert pool.used == 20
        assert pool.peak == 90
        assert pool.resident(1) == 20
        assert pool.address(2) is None

    def test_strict_pool_refuses_overflow(self):
        """A strict pool raises when the budget would be exceeded."""
        pool = MemoryPoolSim(100)
        pool.alloc(1, 80)
        with pytest.raises(InfeasibleBudgetError):
            pool.alloc(2, 30)

    def test_lenient_pool_records_overflow(self):
        """A lenient pool lets usage exceed the budget."""
        pool = MemoryPoolSim(100, strict=False)
        pool.alloc(1, 80)
        pool.alloc(2, 30)
        assert pool.over_budget()

    def test_double_alloc(self):
        """A tensor cannot be allocated twice."""
        pool = MemoryPoolSim(100)
        pool.alloc(1, 10)
        with pytest.raises(ValueError):
            pool.alloc(1, 10)


class TestGeneratePlan:
    """Tests for generate_plan on hand-checked graphs."""

    def test_unconstrained_budget_needs_no_reclamation(self):
        """At the untreated peak the plan only allocates."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, graph.untreated_peak())
        assert plan.reclamations == 0
        assert plan.peak_memory == 808
        assert plan.est_latency == pytest.approx(230e-6)

    def test_evict_only_recomputes_skip_tensor(self):
        """Eviction drops the skip tensor and rebuilds it before its last use."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 600, strategy=Strategy.EVICT_ONLY)
        assert plan.actions == (
            PlanAction(0, 0, ActionKind.ALLOC),
            PlanAction(0, 1, ActionKind.ALLOC),
            PlanAction(1, 2, ActionKind.ALLOC),
            PlanAction(2, 1, ActionKind.EVICT),
            PlanAction(2, 3, ActionKind.ALLOC),
            PlanAction(3, 4, ActionKind.ALLOC),
            PlanAction(4, 1, ActionKind.RECOMPUTE, pytest.approx(100e-6)),
            PlanAction(4, 5, ActionKind.ALLOC),
        )
        assert plan.est_latency == pytest.approx(330e-6)
        assert plan.peak_memory == 412
        assert plan.strategy is Strategy.EVICT_ONLY

    def test_hybrid_prefers_cheaper_compression(self):
        """With a fast codec the hybrid plan compresses instead of recomputing."""
        graph = skip_graph()
        hybrid = generate_plan(graph, REFERENCE, 600)
        evict = generate_plan(graph, REFERENCE, 600, strategy=Strategy.EVICT_ONLY)
        counts = hybrid.action_counts()
        assert counts["COMPRESS"] == 1
        assert counts["DECOMPRESS"] == 1
        assert counts["RECOMPUTE"] == 0
        assert hybrid.peak_memory == 520
        assert hybrid.est_latency < evict.est_latency
        assert hybrid.strategy is Strategy.HYBRID

    def test_hybrid_falls_back_to_eviction(self):
        """When compression alone cannot fit, hybrid is as fast as evict-only."""
        graph = skip_graph()
        with pytest.raises(InfeasibleBudgetError):
            generate_plan(graph, REFERENCE, 412, strategy=Strategy.COMPRESS_ONLY)
        hybrid = generate_plan(graph, REFERENCE, 412)
        evict = generate_plan(graph, REFERENCE, 412, strategy=Strategy.EVICT_ONLY)
        assert hybrid.est_latency == pytest.approx(evict.est_latency)
        assert hybrid.peak_memory <= 412

    def test_budget_below_pinned_minimum(self):
        """A budget below the pinned set is infeasible and reports the minimum."""
        graph = skip_graph()
        with pytest.raises(InfeasibleBudgetError) as exc_info:
            generate_plan(graph, REFERENCE, 411)
        assert exc_info.value.minimum_bytes == 412
        assert exc_info.value.budget == 411
        assert exc_info.value.exit_code == 2

    def test_graph_inputs_cannot_be_evicted(self):
        """Evict-only fails when the only reclaimable tensor is a graph input."""
        graph = load_graph(
            {
                "ops": [
                    {"id": 0, "kind": "Add", "inputs": [0], "outputs": [1], "base_time_us": 1},
                    {"id": 1, "kind": "Add", "inputs": [1], "outputs": [2], "base_time_us": 1},
                    {"id": 2, "kind": "Add", "inputs": [2], "outputs": [3], "base_time_us": 1},
                    {"id": 3, "kind": "Add", "inputs": [0, 3], "outputs": [4], "base_time_us": 1},
                ],
                "tensors": [
                    {"id": 0, "shape": [100]},
                    {"id": 1, "shape": [1]},
                    {"id": 2, "shape": [100]},
                    {"id": 3, "shape": [1]},
                    {"id": 4, "shape": [1]},
                ],
            }
        )
        with pytest.raises(InfeasibleBudgetError):
            generate_plan(graph, REFERENCE, 600, strategy=Strategy.EVICT_ONLY)
        plan = generate_plan(graph, REFERENCE, 600, strategy=Strategy.COMPRESS_ONLY)
        assert plan.action_counts()["COMPRESS"] == 1
        assert plan.peak_memory == 564

    def test_plan_is_reproducible(self):
        """The same inputs give the same plan."""
        graph = random_dag(30, seed=1)
        budget = (graph.pinned_minimum() + graph.untreated_peak()) // 2
        try:
            first = generate_plan(graph, REFERENCE, budget)
        except InfeasibleBudgetError:
            pytest.skip("budget infeasible for this graph")
        assert generate_plan(graph, REFERENCE, budget) == first


class TestPlanProperties:
    """Budget safety and strategy ordering over random graphs."""

    def candidates(self):
        for seed in range(100):
            graph = random_dag(10 + (seed * 7) % 41, seed=seed)
            low, high = graph.pinned_minimum(), graph.untreated_peak()
            for fraction in (0.3, 0.6, 0.9):
                yield graph, low + int(fraction * (high - low))

    def test_plans_stay_within_budget(self):
        """Every feasible plan executes inside its budget with all operands resident."""
        checked = 0
        for graph, budget in self.candidates():
            try:
                plan = generate_plan(graph, REFERENCE, budget)
            except InfeasibleBudgetError:
                continue
            peak, problems = interpret_plan(graph, plan, compressed_size(graph))
            assert problems == []
            assert peak == plan.peak_memory
            assert peak <= budget
            replay = replay_plan(plan, graph, REFERENCE)
            assert replay.ok
            assert replay.latency == pytest.approx(plan.est_latency)
            checked += 1
        assert checked >= 100

    def test_hybrid_never_slower_than_single_technique(self):
        """The hybrid plan is at least as fast as any feasible single-technique plan."""
        for graph, budget in self.candidates():
            try:
                hybrid = generate_plan(graph, REFERENCE, budget)
            except InfeasibleBudgetError:
                continue
            for strategy in (Strategy.EVICT_ONLY, Strategy.COMPRESS_ONLY):
                try:
                    single = generate_plan(graph, REFERENCE, budget, strategy=strategy)
                except InfeasibleBudgetError:
                    continue
                assert hybrid.est_latency <= single.est_latency + 1e-12

    def test_latency_never_increases_with_budget(self):
        """Sweeping the budget upward never makes a plan slower or infeasible again."""
        for seed in range(60):
            graph = random_dag(30, seed=seed)
            low, high = graph.pinned_minimum(), graph.untreated_peak()
            previous = None
            for i in range(21):
                budget = low + (high - low) * i // 20
                try:
                    plan = generate_plan(graph, REFERENCE, budget)
                except InfeasibleBudgetError:
                    assert previous is None, f"seed {seed}: budget {budget} became infeasible"
                    continue
                if previous is not None:
                    assert plan.est_latency <= previous, f"seed {seed}: slower at {budget}"
                previous = plan.est_latency
            assert previous is not None

    def test_single_technique_latency_is_monotone(self):
        """Each pure strategy is monotone in the budget as well."""
        for seed in range(20):
            graph = random_dag(20, seed=seed)
            low, high = graph.pinned_minimum(), graph.untreated_peak()
            for strategy in (Strategy.EVICT_ONLY, Strategy.COMPRESS_ONLY):
                previous = None
                for i in range(11):
                    budget = low + (high - low) * i // 10
                    try:
                        plan = generate_plan(graph, REFERENCE, budget, strategy=strategy)
                    except InfeasibleBudgetError:
                        assert previous is None
                        continue
                    if previous is not None:
                        assert plan.est_latency <= previous
                    previous = plan.est_latency

    def test_training_graph_budget(self):
        """A conv training step fits in half its untreated peak."""
        graph = training_graph(blocks=4, batch=8, channels=8, size=16)
        budget = graph.untreated_peak() // 2
        plan = generate_plan(graph, REFERENCE, budget)
        assert plan.peak_memory <= budget
        assert plan.reclamations > 0
        assert replay_plan(plan, graph, REFERENCE).ok


def static_optimum_for(graph, budget, evict=True, compress=True):
    """Best static-treatment latency for ``graph`` under the default device and codec."""
    model = CodecModel.default()
    size = compressed_size(graph)

    def options(tid):
        allowed = ["keep"]
        if evict and is_evictable(graph, tid):
            allowed.append("evict")
        if compress:
            allowed.append("compress")
        return allowed

    def rebuild_cost(tid, choice):
        if choice == "evict":
            return recompute_cost(graph, tid, REFERENCE)
        producer = graph.tensors[tid].producer
        kind = OpKind.OTHER if producer is None else graph.op(producer).kind
        nbytes = graph.tensors[tid].bytes
        return model.compress_time(kind, nbytes) + model.decompress_time(kind, nbytes)

    times = [op_time(op, REFERENCE) for op in graph.ops]
    return static_optimum(graph, budget, times, options, size, rebuild_cost)


class TestStaticSearch:
    """Tests for the exhaustive search over fixed per-tensor treatments."""

    def test_discardable_tensors(self):
        """Only tensors idle for a step between uses are candidates."""
        assert discardable_tensors(skip_graph()) == [0, 1]
        assert discardable_tensors(skip_graph()) == idle_tensors(skip_graph())

    def test_discardable_matches_definition(self):
        """The library and the direct definition agree on random graphs."""
        for seed in range(20):
            graph = random_dag(15, seed=seed)
            assert discardable_tensors(graph) == idle_tensors(graph)

    def test_evict_only_matches_greedy_on_skip_graph(self):
        """Evicting the skip tensor is the best static choice at 412 bytes."""
        graph = skip_graph()
        search = StaticSearch(graph, REFERENCE, CodecModel.default(), compress=False)
        plan = search.cheapest(412)
        assert plan is not None
        assert plan.peak_memory == 412
        assert plan.est_latency == pytest.approx(330e-6)
        assert [a.action for a in plan.actions if a.action is not ActionKind.ALLOC] == [
            ActionKind.EVICT,
            ActionKind.RECOMPUTE,
        ]
        assert search.cheapest(411) is None

    def test_static_plans_replay_cleanly(self):
        """Every ranked treatment replays without violations at its own peak."""
        graph = transform_graph()
        search = StaticSearch(graph, REFERENCE, CodecModel.default())
        assert len(search.ranked) == 6
        for index, (latency, peak, _, treatment) in enumerate(search.ranked):
            plan = search.plan_for(index)
            result = replay_plan(plan, graph, REFERENCE)
            assert result.ok, (treatment, result.violations)
            assert result.peak_memory == peak == plan.peak_memory
            assert result.latency == pytest.approx(latency)
            assert interpret_plan(graph, plan, compressed_size(graph)) == (peak, [])

    def test_untreated_assignment_allocates_only(self):
        """Keeping every tensor gives the plain schedule."""
        graph = skip_graph()
        search = StaticSearch(graph, REFERENCE, CodecModel.default())
        keep_all = [
            i
            for i, entry in enumerate(search.ranked)
            if all(t is Treatment.KEEP for t in entry[3].values())
        ]
        assert len(keep_all) == 1
        plan = search.plan_for(keep_all[0])
        assert plan.reclamations == 0
        assert plan.peak_memory == graph.untreated_peak()

    def test_plans_beat_every_static_treatment(self):
        """generate_plan succeeds whenever a static treatment fits and is never slower."""
        checked = 0
        for seed in range(40):
            graph = random_dag(6 + seed % 5, seed=seed)
            if len(idle_tensors(graph)) > 8:
                continue
            low, high = graph.pinned_minimum(), graph.untreated_peak()
            for fraction in (0.0, 0.3, 0.7):
                budget = low + int(fraction * (high - low))
                for strategy, evict, compress in (
                    (Strategy.HYBRID, True, True),
                    (Strategy.EVICT_ONLY, True, False),
                    (Strategy.COMPRESS_ONLY, False, True),
                ):
                    best = static_optimum_for(graph, budget, evict, compress)
                    if best is None:
                        continue
                    plan = generate_plan(graph, REFERENCE, budget, strategy=strategy)
                    assert plan.est_latency <= best * (1 + 1e-9)
                    assert replay_plan(plan, graph, REFERENCE).ok
                    checked += 1
        assert checked >= 30


def random_plan(graph, budget, rng):
    """A well-formed plan that reclaims idle tensors at random and restores them on demand."""
    actions = []
    state = {}

    def restore(tid, step):
        current = state.get(tid)
        if current is None:
            actions.append(PlanAction(step, tid, ActionKind.ALLOC))
        elif current == "compressed":
            actions.append(PlanAction(step, tid, ActionKind.DECOMPRESS))
        elif current == "evicted":
            producer = graph.op(graph.tensors[tid].producer)
            for src in dict.fromkeys(producer.inputs):
                restore(src, step)
            actions.append(PlanAction(step, tid, ActionKind.RECOMPUTE))
        state[tid] = "live"

    for step, op in enumerate(graph.ops):
        operands = set(op.inputs) | set(op.outputs)
        for tid in sorted(state):
            if tid in operands or rng.random() > 0.4:
                continue
            evictable = is_evictable(graph, tid)
            if state[tid] == "live" and (not evictable or rng.random() < 0.5):
                actions.append(PlanAction(step, tid, ActionKind.COMPRESS))
                state[tid] = "compressed"
            elif state[tid] != "evicted" and evictable:
                actions.append(PlanAction(step, tid, ActionKind.EVICT))
                state[tid] = "evicted"
        for tid in dict.fromkeys(op.inputs):
            restore(tid, step)
        for tid in op.outputs:
            actions.append(PlanAction(step, tid, ActionKind.ALLOC))
            state[tid] = "live"
        for tid in graph.freed_at.get(step, ()):
            state.pop(tid, None)
    return ExecutionPlan(
        actions=tuple(actions),
        est_latency=0.0,
        peak_memory=0,
        budget=budget,
        strategy=Strategy.HYBRID,
        graph_id=graph.graph_id(),
    )


class TestRandomPlans:
    """Replay agrees with the step-by-step interpreter on arbitrary plans."""

    def test_well_formed_plans(self):
        """Random well-formed plans replay with the interpreter's peak and verdict."""
        rng = np.random.default_rng(7)
        over_budget = within = 0
        for seed in range(40):
            graph = random_dag(15, seed=seed)
            low, high = graph.pinned_minimum(), graph.untreated_peak()
            budget = int(rng.integers(low, high + 1))
            plan = random_plan(graph, budget, rng)
            peak, problems = interpret_plan(graph, plan, compressed_size(graph))
            result = replay_plan(plan, graph, REFERENCE)
            assert problems == []
            assert result.peak_memory == peak
            assert result.ok == (peak <= budget)
            if result.ok:
                within += 1
            else:
                over_budget += 1
                kinds = {v.kind for v in result.violations}
                assert kinds == {ViolationKind.OVER_BUDGET}
        assert within and over_budget

    def test_dropped_restore_is_caught_by_both(self):
        """Removing a decompress or recompute breaks the plan for both checkers."""
        rng = np.random.default_rng(11)
        checked = 0
        for seed in range(40):
            graph = random_dag(15, seed=seed)
            plan = random_plan(graph, graph.untreated_peak(), rng)
            restores = [
                i
                for i, a in enumerate(plan.actions)
                if a.action in (ActionKind.DECOMPRESS, ActionKind.RECOMPUTE)
            ]
            if not restores:
                continue
            drop = restores[int(rng.integers(len(restores)))]
            broken = dataclasses.replace(
                plan, actions=plan.actions[:drop] + plan.actions[drop + 1 :]
            )
            _, problems = interpret_plan(graph, broken, compressed_size(graph))
            assert problems
            assert not replay_plan(broken, graph, REFERENCE).ok
            checked += 1
        assert checked >= 20


class TestExecutionPlan:
    """Tests for the plan document."""

    def test_yaml_round_trip(self):
        """A plan survives its text form."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 600)
        assert ExecutionPlan.from_yaml(plan.to_yaml()) == plan

    def test_action_counts_cover_every_kind(self):
        """Counts list all action kinds."""
        plan = generate_plan(skip_graph(), REFERENCE, 808)
        assert plan.action_counts() == {
            "EVICT": 0,
            "COMPRESS": 0,
            "DECOMPRESS": 0,
            "RECOMPUTE": 0,
            "ALLOC": 6,
        }

    def test_malformed_document(self):
        """Missing fields raise SchemaError."""
        with pytest.raises(SchemaError):
            ExecutionPlan.from_dict({"actions": []})
        with pytest.raises(SchemaError):
            ExecutionPlan.from_yaml("- just a list")
        with pytest.raises(SchemaError):
            ExecutionPlan.from_dict(
                {
                    "est_latency": 0,
                    "peak_memory": 0,
                    "budget": 0,
                    "actions": [{"step": 0, "tensor": 0, "action": "FREE"}],
                }
            )


class TestReplay:
    """Tests for replay_plan violation detection."""

    def test_missing_alloc(self):
        """Dropping an allocation leaves an op without its operand."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 808)
        broken = dataclasses.replace(plan, actions=plan.actions[1:])
        result = replay_plan(broken, graph, REFERENCE)
        assert not result.ok
        assert result.violations[0].kind is ViolationKind.MISSING_TENSOR
        assert result.violations[0].tensor == 0

    def test_over_budget(self):
        """Replaying against a smaller budget reports the overflow."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 808)
        tight = dataclasses.replace(plan, budget=500)
        kinds = {v.kind for v in replay_plan(tight, graph, REFERENCE).violations}
        assert kinds == {ViolationKind.OVER_BUDGET}

    def test_double_alloc(self):
        """Allocating a tensor twice is flagged."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 808)
        doubled = dataclasses.replace(plan, actions=(plan.actions[0], *plan.actions))
        kinds = [v.kind for v in replay_plan(doubled, graph, REFERENCE).violations]
        assert ViolationKind.DOUBLE_ALLOC in kinds

    def test_early_alloc(self):
        """Allocating an intermediate before its producer runs is flagged."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 808)
        actions = [
            PlanAction(0, a.tensor, a.action) if a.tensor == 3 else a for a in plan.actions
        ]
        result = replay_plan(dataclasses.replace(plan, actions=tuple(actions)), graph, REFERENCE)
        kinds = [v.kind for v in result.violations]
        assert ViolationKind.ALLOC_OUT_OF_ORDER in kinds

    def test_decompress_without_compress(self):
        """Decompressing a live tensor is an invalid state transition."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 808)
        actions = (*plan.actions, PlanAction(4, 1, ActionKind.DECOMPRESS))
        result = replay_plan(dataclasses.replace(plan, actions=actions), graph, REFERENCE)
        assert [v.kind for v in result.violations] == [ViolationKind.INVALID_STATE]

    def test_replayed_latency_matches_estimate(self):
        """Replay recomputes the same latency the generator estimated."""
        graph = skip_graph()
        plan = generate_plan(graph, REFERENCE, 412)
        result = replay_plan(plan, graph, REFERENCE)
        assert result.ok
        assert result.latency == pytest.approx(plan.est_latency)
        assert result.peak_memory == plan.peak_memory
