"""Unit tests for the monitoring agent lifecycle."""

import logging

import numpy as np
import pytest

from driftnet.agent import AgentConfig, AgentId, DriftAgent, DriftVerdict, logging_hook
from driftnet.schemes import ReferenceSpec, SchemeKind


def site_ref_config(window_size=10, **kwargs):
    rng = np.random.default_rng(100)
    spec = ReferenceSpec(kind=SchemeKind.SITE_REF, site_eval=rng.beta(2, 5, 80))
    defaults = dict(
        agent_id=AgentId("DS-0", "model-0"),
        scheme=spec,
        window_size=window_size,
        permutations=200,
    )
    defaults.update(kwargs)
    return AgentConfig(**defaults)


def feed(agent, stream):
    for obs in stream:
        verdict = agent.ingest(obs)
        if verdict is not None:
            agent.act(verdict)
    return agent


class TestAgentInit:
    def test_fresh_agent_state(self):
        agent = DriftAgent(site_ref_config())
        assert agent.batch_index == 0
        assert agent.verdicts == []

    def test_agent_id_renders_center_and_model(self):
        assert str(AgentId("DS-2", "model-7")) == "DS-2/model-7"

    def test_window_too_small(self):
        with pytest.raises(ValueError, match="window-too-small"):
            DriftAgent(site_ref_config(window_size=1))

    def test_online_regime_unsupported(self):
        with pytest.raises(ValueError, match="unsupported-regime"):
            DriftAgent(site_ref_config(regime="online"))

    def test_threshold_bounds(self):
        with pytest.raises(ValueError, match="invalid-threshold"):
            DriftAgent(site_ref_config(threshold=0.0))

    def test_min_valid_floor(self):
        with pytest.raises(ValueError, match="invalid-min-valid"):
            DriftAgent(site_ref_config(min_valid=1))

    def test_min_valid_defaults_to_half_window(self):
        agent = DriftAgent(site_ref_config(window_size=9))
        assert agent.min_valid == 4
        agent = DriftAgent(site_ref_config(window_size=4))
        assert agent.min_valid == 2


class TestWindowing:
    def test_non_overlapping_windows_and_trailing_partial(self):
        rng = np.random.default_rng(101)
        agent = DriftAgent(site_ref_config(window_size=10), rng=rng)
        feed(agent, np.random.default_rng(1).beta(2, 5, 25))
        # 25 observations, window 10: two complete windows, trailing 5 dropped.
        assert len(agent.verdicts) == 2
        assert [v.batch_index for v in agent.verdicts] == [0, 1]

    def test_all_null_window_is_unevaluated(self):
        agent = DriftAgent(site_ref_config(window_size=4))
        feed(agent, [None, None, None, None])
        (verdict,) = agent.verdicts
        assert verdict.evaluated is False
        assert verdict.drift is False
        assert verdict.p_value is None
        assert verdict.n_valid == 0

    def test_sparse_window_below_min_valid_is_unevaluated(self):
        agent = DriftAgent(site_ref_config(window_size=8, min_valid=4))
        feed(agent, [0.2, None, 0.3, None, None, None, 0.4, None])
        (verdict,) = agent.verdicts
        assert verdict.n_valid == 3
        assert verdict.evaluated is False

    def test_nan_counts_as_null(self):
        agent = DriftAgent(site_ref_config(window_size=4, min_valid=2))
        feed(agent, [0.2, float("nan"), 0.3, 0.4])
        (verdict,) = agent.verdicts
        assert verdict.n_valid == 3
        assert verdict.evaluated is True

    def test_out_of_range_observation_rejected(self):
        agent = DriftAgent(site_ref_config())
        with pytest.raises(ValueError, match="invalid-probability"):
            agent.ingest(1.5)

    def test_verdict_threshold_invariant(self):
        rng = np.random.default_rng(102)
        agent = DriftAgent(site_ref_config(window_size=10), rng=rng)
        stream = list(rng.beta(2, 5, 30)) + list(rng.uniform(0.85, 0.99, 30))
        feed(agent, stream)
        for verdict in agent.evaluated_verdicts:
            assert verdict.drift == (verdict.p_value < agent.config.threshold)

    def test_drift_detected_on_shifted_window(self):
        rng = np.random.default_rng(103)
        agent = DriftAgent(site_ref_config(window_size=12), rng=rng)
        feed(agent, list(rng.uniform(0.85, 0.99, 12)))
        (verdict,) = agent.verdicts
        assert verdict.drift is True


class TestProdRef:
    def config(self, window_size=6):
        return AgentConfig(
            agent_id=AgentId("DS-1", "model-0"),
            scheme=ReferenceSpec(kind=SchemeKind.PROD_REF),
            window_size=window_size,
            permutations=200,
        )

    def test_first_window_consumed_without_verdict(self):
        rng = np.random.default_rng(104)
        agent = DriftAgent(self.config(), rng=rng)
        stream = rng.beta(2, 5, 18)
        feed(agent, stream)
        assert agent.consumed_batch == 0
        assert [v.batch_index for v in agent.verdicts] == [1, 2]
        assert np.array_equal(agent.provider.reference, stream[:6])

    def test_sparse_first_window_skipped_until_usable(self):
        rng = np.random.default_rng(105)
        agent = DriftAgent(self.config(window_size=4), rng=rng)
        # First window has one valid value: unusable as a reference, so it
        # is logged unevaluated and the next full window seeds the reference.
        feed(agent, [0.4, None, None, None, 0.3, 0.5, 0.2, 0.6, 0.1, 0.2, 0.35, 0.45])
        assert agent.consumed_batch == 1
        assert np.array_equal(agent.provider.reference, [0.3, 0.5, 0.2, 0.6])
        assert [(v.batch_index, v.evaluated) for v in agent.verdicts] == [(0, False), (2, True)]

    def test_verdict_log_accounting(self):
        rng = np.random.default_rng(106)
        agent = DriftAgent(self.config(window_size=5), rng=rng)
        feed(agent, rng.beta(2, 5, 25))
        # 5 complete windows, first consumed as reference.
        assert len(agent.verdicts) == 4


class TestAct:
    def test_foreign_verdict_rejected(self):
        agent = DriftAgent(site_ref_config())
        other = DriftVerdict(
            agent_id=AgentId("DS-9", "model-9"),
            batch_index=0,
            statistic=0.5,
            p_value=0.01,
            drift=True,
            n_valid=10,
            evaluated=True,
        )
        with pytest.raises(ValueError, match="foreign-verdict"):
            agent.act(other)

    def test_hook_fired_only_on_drift(self):
        records = []
        rng = np.random.default_rng(107)
        agent = DriftAgent(site_ref_config(window_size=10), rng=rng, hooks=[records.append])
        stream = list(rng.beta(2, 5, 10)) + list(rng.uniform(0.9, 0.99, 10))
        feed(agent, stream)
        drift_batches = [v.batch_index for v in agent.verdicts if v.drift]
        assert [r["batch_index"] for r in records] == drift_batches
        assert all(r["agent_id"] == "DS-0/model-0" for r in records)
        assert all("timestamp" in r and "p_value" in r for r in records)

    def test_failing_hook_recorded_never_raises(self):
        def bad_hook(record):
            raise RuntimeError("sink unavailable")

        rng = np.random.default_rng(108)
        agent = DriftAgent(site_ref_config(window_size=10), rng=rng, hooks=[bad_hook])
        feed(agent, list(rng.uniform(0.9, 0.99, 10)))
        assert len(agent.hook_failures) == 1
        batch, detail = agent.hook_failures[0]
        assert batch == 0
        assert "sink unavailable" in detail

    def test_logging_hook_emits_warning(self, caplog):
        with caplog.at_level(logging.INFO, logger="driftnet.agent"):
            logging_hook(
                {"agent_id": "DS-0/model-0", "batch_index": 3, "p_value": 0.01, "drift": True}
            )
        assert any("DS-0/model-0" in message for message in caplog.messages)


class TestAdaptiveAgent:
    def config(self):
        rng = np.random.default_rng(109)
        spec = ReferenceSpec(
            kind=SchemeKind.ADAPTIVE_REF, global_eval=rng.beta(2, 5, 400), bins=50
        )
        return AgentConfig(
            agent_id=AgentId("DS-2", "model-0"),
            scheme=spec,
            window_size=10,
            permutations=200,
        )

    def test_trace_rows_and_update_discipline(self):
        rng = np.random.default_rng(110)
        agent = DriftAgent(self.config(), rng=rng)
        stream = list(rng.beta(2, 5, 40)) + list(rng.uniform(0.9, 0.99, 10))
        feed(agent, stream)
        assert len(agent.adaptive_trace) == len(agent.evaluated_verdicts)
        for row in agent.adaptive_trace:
            assert not (row["drift"] and row["updated"])
        weights = [row["global_weight"] for row in agent.adaptive_trace]
        assert all(b <= a for a, b in zip(weights, weights[1:]))

    def test_trace_matches_verdicts(self):
        rng = np.random.default_rng(111)
        agent = DriftAgent(self.config(), rng=rng)
        feed(agent, rng.beta(2, 5, 50))
        by_batch = {v.batch_index: v for v in agent.evaluated_verdicts}
        for row in agent.adaptive_trace:
            assert row["p_value"] == by_batch[row["batch_index"]].p_value


class TestDeterminism:
    def test_same_seed_same_verdicts(self):
        stream = list(np.random.default_rng(5).beta(2, 5, 40))

        def run():
            agent = DriftAgent(site_ref_config(window_size=8), rng=np.random.default_rng(77))
            feed(agent, stream)
            return [(v.batch_index, v.statistic, v.p_value, v.drift) for v in agent.verdicts]

        assert run() == run()
