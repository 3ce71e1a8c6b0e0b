import numpy as np
import pytest

from pacfl.config import load_config
from pacfl.env import Observation
from pacfl.harness import (
    CSV_COLUMNS,
    HeuristicController,
    equal_split_action,
    heuristic_policy_step,
    load_checkpoint,
    parse_seeds,
    pareto_row_from_rows,
    read_run_csv,
    run,
    save_checkpoint,
    summarize,
    summarize_dir,
    summary_text,
)
from pacfl.agents.training import make_agents
from pacfl.quantizer import payload_bits
from pacfl.tcad import Action


@pytest.fixture(scope="module")
def tiny():
    return load_config({"rounds": 3, "episodes": 2, "eval_episodes": 2, "warmup_episodes": 1, "batch_episodes": 1})


def obs(t, loss, q=2):
    return Observation(t, loss, 0.5, q, 0.0, 0.0, 0.0, (1e7, 1e7, 1e7), Action(3, 2e9, 1e7, q))


class TestStaticPolicies:
    def test_fixed_policy_volume_is_exact(self, tiny):
        rec = run(tiny.replace(episodes=1), "fixed", 0)
        a = equal_split_action(tiny, tiny.q_max)
        for r, dim in enumerate(tiny.payload_dim):
            assert np.all(rec.train.vol[:, r] == payload_bits(dim, tiny.q_max) * a[0])

    def test_identical_invocations_write_identical_csv(self, tiny, tmp_path):
        run(tiny, "uniform_q", 3, tmp_path / "a")
        run(tiny, "uniform_q", 3, tmp_path / "b")
        name = next((tmp_path / "a").glob("*.csv")).name
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_equal_split(self, tiny):
        a = equal_split_action(tiny, 8)
        assert a.tolist() == [3, 2e9, 10e6, 8]

    def test_unknown_policy(self, tiny):
        with pytest.raises(ValueError):
            run(tiny, "greedy", 0)


class TestHeuristic:
    def test_improving_loss_keeps_q(self, tiny):
        h = HeuristicController(tiny)
        for t, loss in enumerate([2.0, 1.5, 1.0, 0.6, 0.3]):
            a = heuristic_policy_step(h, obs(t, loss))
        assert a[3] == tiny.q_min

    def test_plateau_raises_q_and_scales_resources(self, tiny):
        h = HeuristicController(tiny)
        trace = [h.step(obs(t, loss)) for t, loss in enumerate([2.0, 1.0, 1.0, 1.0005, 1.0])]
        # Rounds 2, 3 and 4 each change the loss by less than 1e-3.
        assert [a[3] for a in trace] == [2, 2, 2, 2, 6]
        last = trace[-1]
        assert last[1] == pytest.approx(tiny.f_max * 6 / tiny.q_max)
        # (B_max / R) * 6 / 32 = 1.875 MHz falls under B_min and is clamped.
        assert last[2] == tiny.b_min

    def test_q_clamped_at_max(self, tiny):
        h = HeuristicController(tiny)
        h.q = tiny.q_max
        for t in range(8):
            a = h.step(obs(t, 1.0))
        assert a[3] == tiny.q_max

    def test_episode_reset(self, tiny):
        h = HeuristicController(tiny)
        h.q = 14
        h.begin_episode(np.zeros(4))
        assert h.q == tiny.q_min and h.last_loss is None

    def test_actions_within_bounds(self, tiny):
        h = HeuristicController(tiny)
        for q in range(tiny.q_min, tiny.q_max + 1):
            a = h.action_for(q)
            assert tiny.f_min <= a[1] <= tiny.f_max and tiny.b_min <= a[2] <= tiny.b_max


class TestOutputs:
    def test_csv_schema_round_trip(self, tiny, tmp_path):
        rec = run(tiny, "heuristic", 1, tmp_path)
        path = tmp_path / f"{rec.run_id}.csv"
        assert path.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
        rows = read_run_csv(path)
        assert len(rows) == (tiny.episodes + tiny.eval_episodes) * tiny.num_sps
        assert np.allclose(pareto_row_from_rows(rows), rec.pareto_row, rtol=0, atol=0)
        jsonl = (tmp_path / f"{rec.run_id}.jsonl").read_text().splitlines()
        assert len(jsonl) == (tiny.episodes + tiny.eval_episodes) * tiny.rounds * tiny.num_sps

    def test_learning_run_writes_checkpoint(self, tiny, tmp_path):
        rec = run(tiny, "independent_ac", 0, tmp_path)
        ckpt = tmp_path / "checkpoints" / rec.run_id / f"ep{tiny.episodes}"
        fresh = make_agents(tiny, "independent_ac", rec.agents[0].obs_dim, 99)
        load_checkpoint(fresh, ckpt)
        for a, b in zip(rec.agents, fresh):
            assert np.array_equal(a.actor.mlp.get_flat(), b.actor.mlp.get_flat())
            assert np.array_equal(a.critic.mlp.get_flat(), b.critic.mlp.get_flat())

    def test_checkpoint_size_mismatch(self, tiny, tmp_path):
        agents = make_agents(tiny, "pac", 12, 0)
        save_checkpoint(agents, tmp_path)
        other = make_agents(tiny, "independent_ac", 12, 0)
        with pytest.raises(ValueError):
            load_checkpoint(other, tmp_path)

    def test_bad_csv_header(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_run_csv(p)

    def test_summarize_dir(self, tiny, tmp_path):
        run(tiny, "fixed", 0, tmp_path)
        run(tiny, "uniform_q", 0, tmp_path)
        table = summarize_dir(tmp_path)
        assert {s.policy for s in table} == {"fixed", "uniform_q"}
        assert summary_text(table).splitlines()[0].startswith("policy,runs,total_mean")

    def test_summarize_empty_dir(self, tmp_path):
        with pytest.raises(ValueError):
            summarize_dir(tmp_path)


class TestSummarize:
    def test_single_run(self):
        (s,) = summarize({"a": [np.array([1.0, 2.0, 3.0])]})
        assert s.runs == 1 and s.total_mean == 6.0 and s.total_std == 0.0
        assert s.hvi == pytest.approx(1.0)

    def test_identical_policies_tie(self, rng):
        rows = [rng.uniform(0, 5, 3) for _ in range(4)]
        a, b = summarize({"a": rows, "b": [r.copy() for r in rows]})
        assert a.hvi == b.hvi

    def test_mismatched_sp_counts(self):
        with pytest.raises(ValueError):
            summarize({"a": [np.ones(3)], "b": [np.ones(2)]})

    def test_needs_runs(self):
        with pytest.raises(ValueError):
            summarize({"a": []})


class TestSeeds:
    def test_range_inclusive(self):
        assert parse_seeds("0..4") == [0, 1, 2, 3, 4]

    def test_single(self):
        assert parse_seeds("7") == [7]

    def test_empty_range(self):
        with pytest.raises(ValueError):
            parse_seeds("4..1")
