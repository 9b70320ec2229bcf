"""Tests for client utilities and selection."""

import math

import pytest
from memwall.exceptions import (
    ConfigError,
    IncompleteProfileError,
    SchemaError,
    SelectionError,
)
from memwall.models import ClientReport, OpKind
from memwall.selector import (
    ClientProfile,
    GlobalModelReq,
    SelectionConfig,
    client_utility,
    comp_stat,
    mem_stat,
    select_clients,
    stat_utility,
    system_priority,
)

from tests.oracles import utility

MODEL = GlobalModelReq(1000)


def profile(cid, mem, conv_time, losses=()):
    return ClientProfile(
        client_id=cid,
        mem_budget=mem,
        op_times={OpKind.CONV: conv_time},
        batch_losses=tuple(losses),
        explored=bool(losses),
    )


def pool():
    """Four explored clients (0-3) and four fresh ones (4-7)."""
    return [
        profile(0, 500, 1.0, [1.0]),
        profile(1, 2000, 1.0, [1.0]),
        profile(2, 2000, 0.5, [2.0]),
        profile(3, 1000, 2.0, [1.0]),
        profile(4, 100, 1.0),
        profile(5, 1000, 0.25),
        profile(6, 800, 1.0),
        profile(7, 2000, 1.0),
    ]


class TestUtilities:
    """Tests for the utility terms."""

    def test_mem_stat(self):
        """Budgets below the requirement are penalized proportionally, others not at all."""
        assert mem_stat(500, 1000) == 0.5
        assert mem_stat(1000, 1000) == 1.0
        assert mem_stat(4000, 1000) == 1.0

    def test_mem_stat_rejects_non_positive(self):
        """Memory values must be positive."""
        with pytest.raises(ValueError):
            mem_stat(0, 1000)
        with pytest.raises(ValueError):
            mem_stat(100, 0)

    def test_stat_utility(self):
        """The statistical utility is the RMS of the losses."""
        assert stat_utility([3.0, 4.0]) == pytest.approx(math.sqrt(12.5))

    def test_stat_utility_needs_losses(self):
        """No losses, no utility."""
        with pytest.raises(SelectionError):
            stat_utility([])

    def test_comp_stat(self):
        """The computing utility inverts the summed op times."""
        times = {OpKind.CONV: 0.1, OpKind.RELU: 0.3}
        assert comp_stat(times) == pytest.approx(2.5)
        assert comp_stat(times, [OpKind.CONV]) == pytest.approx(10.0)

    def test_comp_stat_missing_kind(self):
        """A required kind without a time names the gap."""
        with pytest.raises(IncompleteProfileError) as exc_info:
            comp_stat({OpKind.CONV: 0.1}, [OpKind.CONV, OpKind.MATMUL])
        assert exc_info.value.missing_kinds == ["MatMul"]

    def test_client_utility_matches_definition(self):
        """The product of the three terms."""
        for client in pool()[:4]:
            expected = utility(
                client.batch_losses,
                client.mem_budget,
                MODEL.m_g,
                {k.value: v for k, v in client.op_times.items()},
            )
            assert client_utility(client, MODEL) == pytest.approx(expected)

    def test_system_priority(self):
        """Fresh clients rank by memory and speed alone."""
        assert system_priority(profile(5, 1000, 0.25), MODEL) == pytest.approx(4.0)
        assert system_priority(profile(4, 100, 1.0), MODEL) == pytest.approx(0.1)


class TestProfiles:
    """Tests for ClientProfile validation and updates."""

    def test_model_requirement_positive(self):
        """The model requirement must be positive."""
        with pytest.raises(SchemaError):
            GlobalModelReq(0)

    def test_budget_positive(self):
        """A client needs a memory budget."""
        with pytest.raises(SchemaError) as exc_info:
            profile(9, 0, 1.0)
        assert exc_info.value.offending_id == 9

    def test_explored_needs_losses(self):
        """An explored client must carry losses."""
        with pytest.raises(SchemaError):
            ClientProfile(1, 100, {OpKind.CONV: 1.0}, explored=True)

    def test_non_positive_time(self):
        """Op times must be positive."""
        with pytest.raises(SchemaError):
            profile(1, 100, 0.0)

    def test_with_report(self):
        """A check-in with losses refreshes the profile and marks it explored."""
        fresh = profile(4, 100, 1.0)
        report = ClientReport(4, 3, 900, {OpKind.CONV: 0.5}, [0.4, 0.3])
        updated = fresh.with_report(report)
        assert updated.mem_budget == 900
        assert updated.explored
        assert updated.batch_losses == (0.4, 0.3)
        assert updated.last_report_round == 3

    def test_with_report_without_losses(self):
        """A check-in without losses keeps earlier losses."""
        seen = profile(0, 500, 1.0, [1.0])
        updated = seen.with_report(ClientReport(0, 5, 700, {OpKind.CONV: 1.0}, []))
        assert updated.batch_losses == (1.0,)
        assert updated.mem_budget == 700

    def test_from_report(self):
        """A first report builds a profile."""
        created = ClientProfile.from_report(ClientReport(2, 0, 300, {OpKind.CONV: 2.0}, []))
        assert not created.explored
        assert created.last_report_round == 0


class TestSelectionConfig:
    """Tests for SelectionConfig."""

    def test_exploit_count_rounds_up(self):
        """The exploited share is rounded up."""
        assert SelectionConfig(k=10, epsilon=0.7).exploit_count == 7
        assert SelectionConfig(k=10, epsilon=0.25).exploit_count == 3
        assert SelectionConfig(k=4, epsilon=0.75).exploit_count == 3

    def test_invalid(self):
        """Both fields are validated together."""
        with pytest.raises(ConfigError) as exc_info:
            SelectionConfig(k=0, epsilon=0.0)
        assert len(exc_info.value.errors) == 2


class TestSelectClients:
    """Tests for select_clients."""

    def test_exploit_then_explore(self):
        """Top utilities are exploited and the richest fresh clients explored."""
        selection = select_clients(pool(), SelectionConfig(k=4, epsilon=0.5), MODEL)
        assert selection.exploit == (2, 1)
        assert selection.explore == (5, 7)
        assert selection.ids == [2, 1, 5, 7]
        assert selection.utilities[2] == pytest.approx(4.0)

    def test_utility_ties_prefer_lower_id(self):
        """Clients 0 and 3 tie; the lower id is exploited first."""
        selection = select_clients(pool(), SelectionConfig(k=5, epsilon=0.6), MODEL)
        assert selection.exploit == (2, 1, 0)

    def test_order_independent(self):
        """The pool's order does not matter."""
        config = SelectionConfig(k=5, epsilon=0.6)
        forward = select_clients(pool(), config, MODEL, seed=3)
        backward = select_clients(list(reversed(pool())), config, MODEL, seed=3)
        assert forward == backward

    def test_backfill_with_fresh_clients(self):
        """Too few explored clients leaves more picks for exploration."""
        clients = [c for c in pool() if c.client_id == 2 or not c.explored]
        selection = select_clients(clients, SelectionConfig(k=4, epsilon=1.0), MODEL)
        assert selection.exploit == (2,)
        assert selection.explore == (5, 7, 6)

    def test_backfill_with_explored_clients(self):
        """Without fresh clients every pick is exploited."""
        clients = pool()[:4]
        selection = select_clients(clients, SelectionConfig(k=3, epsilon=0.34), MODEL)
        assert selection.exploit == (2, 1, 0)
        assert selection.explore == ()

    def test_fresh_ties_follow_seed(self):
        """Identical fresh clients are ordered reproducibly by the seed."""
        clients = [profile(i, 500, 1.0) for i in range(10)]
        config = SelectionConfig(k=3, epsilon=0.5)
        first = select_clients(clients, config, MODEL, seed=11)
        again = select_clients(clients, config, MODEL, seed=11)
        assert first == again
        assert len(set(first.ids)) == 3

    def test_no_duplicates(self):
        """Each client appears at most once."""
        selection = select_clients(pool(), SelectionConfig(k=8, epsilon=0.5), MODEL)
        assert sorted(selection.ids) == list(range(8))

    def test_k_larger_than_pool(self):
        """Selecting more clients than exist fails."""
        with pytest.raises(SelectionError):
            select_clients(pool(), SelectionConfig(k=9, epsilon=0.5), MODEL)

    def test_missing_required_kind(self):
        """Utilities over kinds a client never timed are undefined."""
        with pytest.raises(IncompleteProfileError):
            select_clients(
                pool(), SelectionConfig(k=2, epsilon=0.5), MODEL, required_kinds=[OpKind.RELU]
            )
