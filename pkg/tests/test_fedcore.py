import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacfl import fedcore
from pacfl.config import rng_stream
from pacfl.quantizer import QuantizedVec, quantize


@pytest.fixture(scope="module")
def task():
    return fedcore.make_task("easy", rng_stream(0, "task"))


def tiny_task():
    x = np.array([[1.0, 0.0], [0.5, 1.0], [-1.0, 0.5], [0.0, -1.0]])
    y = np.array([0, 0, 1, 1])
    return fedcore.SyntheticTask(2, 2, x, y, x, y, "easy")


def exact(values, q=5):
    """A QuantizedVec that dequantizes to ``values`` exactly (lattice aligned)."""
    v = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0:
        return QuantizedVec(0.0, np.zeros(v.size, dtype=np.int8), np.zeros(v.size, dtype=np.int64), q)
    levels = np.rint(np.abs(v) / norm * q).astype(np.int64)
    return QuantizedVec(norm, np.sign(v).astype(np.int8), levels, q)


class TestTask:
    def test_shapes_and_labels(self, task):
        assert task.train_x.shape == (4000, task.feature_dim)
        assert task.test_x.shape == (1000, task.feature_dim)
        assert task.train_y.min() >= 0 and task.train_y.max() < task.class_count
        assert task.model_dim == task.class_count * (task.feature_dim + 1)

    def test_train_and_test_disjoint(self, task):
        train = {tuple(r) for r in task.train_x}
        assert not any(tuple(r) in train for r in task.test_x)

    def test_unknown_difficulty(self):
        with pytest.raises(ValueError):
            fedcore.make_task("impossible", rng_stream(0, "t"))

    def test_tiers_order_by_separation(self):
        seps = [fedcore.TIERS[k][1] for k in ("hard", "medium", "easy")]
        assert seps == sorted(seps)


class TestPartition:
    @pytest.mark.parametrize("rho, classes", [(1.0, 10), (0.5, 5), (0.01, 1)])
    def test_label_coverage(self, task, rho, classes):
        shards = fedcore.partition(task, 5, rho, rng_stream(0, "part"))
        for s in shards:
            assert len(np.unique(task.train_y[s.indices])) == classes

    def test_weights_sum_to_one_and_follow_sizes(self, task):
        shards = fedcore.partition(task, 5, 0.3, rng_stream(1, "part"))
        w = np.array([s.weight for s in shards])
        assert abs(w.sum() - 1.0) < 1e-12
        sizes = np.array([s.size for s in shards], dtype=float)
        assert np.allclose(w, sizes / sizes.sum())

    def test_shards_disjoint(self, task):
        shards = fedcore.partition(task, 5, 1.0, rng_stream(2, "part"))
        allidx = np.concatenate([s.indices for s in shards])
        assert len(allidx) == len(np.unique(allidx))

    def test_zero_clients(self, task):
        with pytest.raises(ValueError):
            fedcore.partition(task, 0, 1.0, rng_stream(0, "p"))

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0.01, 10), min_size=1, max_size=8))
    def test_renormalized_subset_sums_to_one(self, weights):
        assert abs(fedcore.renormalize(weights).sum() - 1.0) < 1e-12


class TestSelection:
    def test_largest_shards_with_index_ties(self):
        shards = [fedcore.ClientShard(i, 0, np.arange(s), 0.2) for i, s in enumerate([3, 5, 5, 1, 4])]
        assert [s.client for s in fedcore.select_clients(shards, 3)] == [1, 2, 4]
        assert [s.client for s in fedcore.select_clients(shards, 2)] == [1, 2]


class TestLocalUpdate:
    def test_zero_rate_leaves_params(self, task):
        shard = fedcore.partition(task, 5, 1.0, rng_stream(0, "p"))[0]
        w0 = np.ones(task.model_dim) * 0.1
        w = fedcore.local_update(w0, task, shard, 0.0, 3, 16, rng_stream(0, "u"))
        assert np.array_equal(w, w0)

    def test_full_batch_step_matches_hand_gradient(self):
        t = tiny_task()
        shard = fedcore.ClientShard(0, 0, np.arange(4), 1.0)
        w0 = np.array([0.1, -0.2, 0.05, 0.3, 0.0, -0.1])  # rows: [w_c0, b_c0, w_c1, b_c1]
        got = fedcore.local_update(w0, t, shard, 0.5, 1, 64, rng_stream(0, "u"))
        # Independent oracle: explicit per-sample softmax cross-entropy gradient.
        W = w0.reshape(2, 3)
        grad = np.zeros_like(W)
        for xi, yi in zip(t.train_x, t.train_y):
            z = W[:, :2] @ xi + W[:, 2]
            p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
            for c in range(2):
                d = p[c] - (1.0 if c == yi else 0.0)
                grad[c, :2] += d * xi / 4
                grad[c, 2] += d / 4
        assert np.allclose(got, (W - 0.5 * grad).ravel(), rtol=0, atol=1e-10)

    def test_deterministic_given_stream(self, task):
        shard = fedcore.partition(task, 5, 1.0, rng_stream(0, "p"))[0]
        w0 = np.zeros(task.model_dim)
        a = fedcore.local_update(w0, task, shard, 0.1, 3, 16, rng_stream(5, "u"))
        b = fedcore.local_update(w0, task, shard, 0.1, 3, 16, rng_stream(5, "u"))
        assert np.array_equal(a, b)

    def test_empty_shard(self, task):
        with pytest.raises(ValueError):
            fedcore.local_update(np.zeros(task.model_dim), task, fedcore.ClientShard(0, 0, np.arange(0), 0.0), 0.1, 1, 8, rng_stream(0, "u"))


class TestAggregate:
    def test_single_client(self):
        assert np.allclose(fedcore.aggregate([(exact([3.0, -4.0]), 1.0)]), [3.0, -4.0])

    def test_identical_clients(self):
        v = exact([3.0, 4.0])
        assert np.allclose(fedcore.aggregate([(v, 0.3), (v, 0.7)]), [3.0, 4.0])

    def test_weighted_example(self):
        out = fedcore.aggregate([(exact([0.0]), 0.25), (exact([4.0]), 0.75)])
        assert out == pytest.approx([3.0])

    def test_weights_renormalized(self):
        out = fedcore.aggregate([(exact([0.0]), 1.0), (exact([4.0]), 3.0)])
        assert out == pytest.approx([3.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            fedcore.aggregate([])
        with pytest.raises(ValueError):
            fedcore.aggregate([(exact([1.0]), 0.0)])

    def test_permutation_invariant(self, rng):
        ups = [(quantize(rng.standard_normal(6), 8, rng), w) for w in (0.2, 0.5, 0.3)]
        assert np.allclose(fedcore.aggregate(ups), fedcore.aggregate(ups[::-1]), rtol=0, atol=1e-12)


class TestEvaluate:
    def test_untrained_two_class_random_labels(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4000, 3))
        y = rng.integers(0, 2, 4000)
        acc, loss = fedcore.evaluate(np.zeros(2 * 4), x, y, 2)
        # Zero weights predict class 0 everywhere; accuracy is the class-0 share.
        assert abs(acc - 0.5) <= 3 * np.sqrt(0.25 / 4000)
        assert loss == pytest.approx(np.log(2), abs=1e-9)

    def test_uniform_predictor_loss_is_log_c(self, task):
        _, loss = fedcore.evaluate(np.zeros(task.model_dim), task.test_x, task.test_y, task.class_count)
        assert loss == pytest.approx(np.log(task.class_count), abs=1e-9)

    def test_memorized_single_sample(self):
        params = np.array([0.0, 0.0, 0.0, 1.0])  # class 1 bias wins
        acc, loss = fedcore.evaluate(params, np.array([[0.5]]), np.array([1]), 2)
        assert acc == 1.0 and loss >= 0

    def test_empty_test_set(self):
        with pytest.raises(ValueError):
            fedcore.evaluate(np.zeros(4), np.zeros((0, 1)), np.zeros(0, dtype=int), 2)

    def test_federated_training_learns_easy_task(self, task):
        shards = fedcore.partition(task, 5, 1.0, rng_stream(0, "p"))
        rng = rng_stream(0, "train")
        w = np.zeros(task.model_dim)
        for _ in range(30):
            ups = [(quantize(fedcore.local_update(w, task, s, 0.1, 3, 64, rng) - w, 32, rng), s.weight) for s in shards]
            w = w + fedcore.aggregate(ups)
        acc, _ = fedcore.evaluate(w, task.test_x, task.test_y, task.class_count)
        assert acc > 0.9


def test_export_shards(tmp_path, task):
    shards = fedcore.partition(task, 3, 1.0, rng_stream(0, "p"))
    path = tmp_path / "shards.csv"
    fedcore.export_shards(path, task, shards)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("client,service,label,x0")
    assert len(lines) == 1 + sum(s.size for s in shards)
