import math

import numpy as np
import pytest

from scenesynth.armodel import (
    ArConfig,
    ArModel,
    TrainBatch,
    create_model,
    forward,
    loss_and_grads,
    nll,
    read_model,
    sample,
    sample_batch,
    softmax,
    train_step,
    write_model,
)
from scenesynth.codebook import TokenGrid
from scenesynth.ordering import GenerationOrder, generate_order

from fdcheck import compare, fd_check_case, fd_gradients_naive


def zero_model(cfg: ArConfig, head_bias=None) -> ArModel:
    weights, biases = [], []
    c_in = cfg.embed_dim
    for _ in range(cfg.layers):
        weights.append(np.zeros((cfg.kernel, cfg.kernel, c_in, cfg.channels)))
        biases.append(np.zeros(cfg.channels))
        c_in = cfg.channels
    hb = np.zeros(cfg.vocab) if head_bias is None else np.asarray(head_bias, float)
    return ArModel(
        cfg,
        np.zeros((cfg.vocab, cfg.embed_dim)),
        tuple(weights),
        tuple(biases),
        np.zeros((cfg.channels, cfg.vocab)),
        hb,
    )


def random_model(cfg: ArConfig, seed: int) -> ArModel:
    """create_model but with a nonzero random head, for dependence tests."""
    rng = np.random.default_rng(seed)
    base = create_model(cfg, seed=seed)
    return ArModel(
        cfg,
        base.embed,
        base.conv_weights,
        base.conv_biases,
        rng.uniform(-0.5, 0.5, (cfg.channels, cfg.vocab)),
        rng.uniform(-0.1, 0.1, cfg.vocab),
    )


def full_grid(tokens) -> TokenGrid:
    tokens = np.asarray(tokens)
    return TokenGrid(tokens, np.ones(tokens.shape, bool))


class TestForward:
    def test_zero_weights_logits_equal_head_bias(self):
        cfg = ArConfig(vocab=4, embed_dim=3, layers=2, kernel=3, channels=5)
        hb = np.array([0.3, -0.2, 0.0, 1.0])
        m = zero_model(cfg, hb)
        order = generate_order(np.zeros((3, 3), bool))
        logits = forward(m, full_grid(np.random.default_rng(0).integers(0, 4, (3, 3))), order)
        np.testing.assert_array_equal(logits, np.broadcast_to(hb, (3, 3, 4)))

    def test_kernel1_first_layer_admits_nothing(self):
        cfg = ArConfig(vocab=4, embed_dim=3, layers=1, kernel=1, channels=5)
        m = random_model(cfg, 3)
        order = generate_order(np.zeros((3, 3), bool))
        rng = np.random.default_rng(1)
        a = forward(m, full_grid(rng.integers(0, 4, (3, 3))), order)
        b = forward(m, full_grid(rng.integers(0, 4, (3, 3))), order)
        np.testing.assert_array_equal(a, b)
        # closed form: empty stencil -> pre = bias -> head(relu(bias))
        expect = np.maximum(m.conv_biases[0], 0.0) @ m.head_weight + m.head_bias
        np.testing.assert_allclose(a, np.broadcast_to(expect, (3, 3, 4)), atol=1e-12)

    def test_perturbing_rank_r_never_changes_earlier_logits(self):
        cfg = ArConfig(vocab=4, embed_dim=4, layers=3, kernel=3, channels=8)
        for seed in (0, 1):
            m = random_model(cfg, seed)
            rng = np.random.default_rng(10 + seed)
            vis = rng.random((4, 4)) < 0.3
            order = generate_order(vis)
            tokens = rng.integers(0, 4, (4, 4))
            base = forward(m, full_grid(tokens), order)
            for r, (pr, pc) in enumerate(order.positions_by_rank()):
                for delta in range(1, cfg.vocab):
                    mutated = tokens.copy()
                    mutated[pr, pc] = (mutated[pr, pc] + delta) % cfg.vocab
                    out = forward(m, full_grid(mutated), order)
                    earlier = (order.rank < r)  # visible (-1) and ranks < r
                    np.testing.assert_array_equal(out[earlier], base[earlier])

    def test_shape_mismatch_rejected(self):
        cfg = ArConfig(vocab=4, embed_dim=3, layers=1, kernel=3, channels=4)
        m = zero_model(cfg)
        order = generate_order(np.zeros((3, 3), bool))
        with pytest.raises(ValueError):
            forward(m, full_grid(np.zeros((2, 3), np.int64)), order)

    def test_out_of_range_token_rejected(self):
        cfg = ArConfig(vocab=4, embed_dim=3, layers=1, kernel=3, channels=4)
        m = zero_model(cfg)
        order = generate_order(np.zeros((2, 2), bool))
        with pytest.raises(ValueError):
            forward(m, full_grid(np.full((2, 2), 7, np.int64)), order)


class TestInit:
    def test_initial_loss_is_exactly_ln_vocab(self):
        cfg = ArConfig(vocab=7, embed_dim=4, layers=2, kernel=3, channels=6)
        m = create_model(cfg, seed=5)
        order = generate_order(np.zeros((3, 3), bool))
        grid = full_grid(np.random.default_rng(2).integers(0, 7, (3, 3)))
        assert nll(m, grid, order) == pytest.approx(math.log(7), abs=1e-12)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            ArConfig(vocab=0)
        with pytest.raises(ValueError):
            ArConfig(vocab=4, kernel=2)
        with pytest.raises(ValueError):
            ArConfig(vocab=4, layers=0)


class TestNll:
    def test_brute_force_oracle(self):
        cfg = ArConfig(vocab=5, embed_dim=4, layers=2, kernel=3, channels=6)
        m = random_model(cfg, 7)
        rng = np.random.default_rng(8)
        vis = rng.random((4, 4)) < 0.4
        order = generate_order(vis)
        grid = full_grid(rng.integers(0, 5, (4, 4)))
        logits = forward(m, grid, order)
        total, count = 0.0, 0
        for r in range(4):
            for c in range(4):
                if order.rank[r, c] < 0:
                    continue
                row = logits[r, c]
                z = math.log(sum(math.exp(v - row.max()) for v in row)) + row.max()
                total += z - row[grid.tokens[r, c]]
                count += 1
        assert nll(m, grid, order) == pytest.approx(total / count, rel=1e-12)

    def test_fully_visible_is_zero(self):
        cfg = ArConfig(vocab=3, embed_dim=2, layers=1, kernel=3, channels=3)
        m = random_model(cfg, 0)
        order = generate_order(np.ones((3, 3), bool))
        assert nll(m, full_grid(np.zeros((3, 3), np.int64)), order) == 0.0

    def test_unknown_tokens_rejected(self):
        cfg = ArConfig(vocab=3, embed_dim=2, layers=1, kernel=3, channels=3)
        m = zero_model(cfg)
        order = generate_order(np.zeros((2, 2), bool))
        grid = TokenGrid(np.zeros((2, 2), np.int64), np.zeros((2, 2), bool))
        with pytest.raises(ValueError):
            nll(m, grid, order)


class TestTrainStep:
    def _setup(self):
        cfg = ArConfig(vocab=4, embed_dim=4, layers=2, kernel=3, channels=8)
        m = random_model(cfg, 11)
        rng = np.random.default_rng(12)
        grids, orders = [], []
        for _ in range(3):
            vis = rng.random((4, 4)) < 0.3
            orders.append(generate_order(vis))
            grids.append(full_grid(rng.integers(0, 4, (4, 4))))
        return m, TrainBatch(tuple(grids), tuple(orders))

    def test_lr_zero_keeps_model_and_loss_repeatable(self):
        m, batch = self._setup()
        m2, loss_a = train_step(m, batch, 0.0)
        _, loss_b = train_step(m2, batch, 0.0)
        assert loss_a == loss_b
        for p, q in zip(m.parameters(), m2.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_loss_decreases(self):
        m, batch = self._setup()
        losses = []
        for _ in range(200):
            m, loss = train_step(m, batch, 0.3)
            losses.append(loss)
        assert losses[-1] < losses[0] * 0.5

    def test_pooled_loss_matches_weighted_mean_of_nll(self):
        m, batch = self._setup()
        _, loss = train_step(m, batch, 0.0)
        num = sum(
            nll(m, g, o) * o.background_count
            for g, o in zip(batch.grids, batch.orders)
        )
        den = sum(o.background_count for o in batch.orders)
        assert loss == pytest.approx(num / den, rel=1e-12)

    def test_empty_batch_rejected(self):
        m, _ = self._setup()
        with pytest.raises(ValueError):
            train_step(m, TrainBatch((), ()), 0.1)

    def test_negative_lr_rejected(self):
        m, batch = self._setup()
        with pytest.raises(ValueError):
            train_step(m, batch, -0.1)

    def test_copy_task_converges_to_contextual_certainty(self):
        # constant grids, constant uniform over K: with context the constant
        # is revealed (CE -> 0); the context-free rank-0 position stays at
        # the uniform optimum (CE -> ln K)
        cfg = ArConfig(vocab=3, embed_dim=4, layers=1, kernel=3, channels=8)
        m = create_model(cfg, seed=1)
        order = generate_order(np.zeros((3, 3), bool))
        grids = tuple(full_grid(np.full((3, 3), t, np.int64)) for t in range(3))
        batch = TrainBatch(grids, (order,) * 3)
        for _ in range(1500):
            m, _ = train_step(m, batch, 1.0)
        ln_k = math.log(3)
        ces = []
        for g in grids:
            logits = forward(m, g, order)
            logp = logits - logits.max(-1, keepdims=True)
            logp = logp - np.log(np.exp(logp).sum(-1, keepdims=True))
            ces.append(-np.take_along_axis(logp, g.tokens[..., None], -1)[..., 0])
        ces = np.stack(ces)
        (r0r, r0c) = order.positions_by_rank()[0]
        assert abs(ces[:, r0r, r0c].mean() - ln_k) < 0.02
        rest = order.rank >= 1
        assert ces[:, rest].mean() < 0.2 * ln_k


class TestGradients:
    def test_engine_matches_naive_loop(self):
        cfg = ArConfig(vocab=4, embed_dim=3, layers=2, kernel=3, channels=5)
        m = random_model(cfg, 21)
        rng = np.random.default_rng(22)
        vis = rng.random((3, 3)) < 0.4
        order = generate_order(vis)
        grid = full_grid(rng.integers(0, 4, (3, 3)))
        engine = fd_check_case(m, grid, order)
        naive = fd_gradients_naive(m, grid, order)
        for r, ref in zip(engine, naive):
            assert np.abs(r.fd - ref).max() < 1e-9

    def test_analytic_gradients_match_fd_small_cases(self):
        cfg = ArConfig(vocab=5, embed_dim=4, layers=2, kernel=3, channels=6)
        for seed in range(3):
            m = random_model(cfg, 30 + seed)
            rng = np.random.default_rng(40 + seed)
            vis = rng.random((4, 4)) < 0.4
            order = generate_order(vis)
            grid = full_grid(rng.integers(0, 5, (4, 4)))
            worst, excluded, failures = compare(fd_check_case(m, grid, order))
            assert failures == 0
            assert worst < 1e-3


class TestSampling:
    def _setup(self, seed=50, shape=(4, 4), vis_p=0.4):
        cfg = ArConfig(vocab=4, embed_dim=4, layers=2, kernel=3, channels=8)
        m = random_model(cfg, seed)
        rng = np.random.default_rng(seed + 1)
        vis = rng.random(shape) < vis_p
        order = generate_order(vis)
        tokens = np.where(vis, rng.integers(0, 4, shape), 0)
        partial = TokenGrid(tokens, vis)
        return m, partial, order

    def test_fully_known_returned_unchanged(self):
        m, _, _ = self._setup()
        known = np.ones((3, 3), bool)
        partial = TokenGrid(np.random.default_rng(0).integers(0, 4, (3, 3)), known)
        order = generate_order(known)
        out = sample(m, partial, order, 0.5, seed=9)
        np.testing.assert_array_equal(out.tokens, partial.tokens)
        assert out.known.all()

    def test_temperature_zero_zero_model_argmax_lowest_index(self):
        cfg = ArConfig(vocab=5, embed_dim=3, layers=1, kernel=3, channels=4)
        m = zero_model(cfg)
        order = generate_order(np.zeros((3, 3), bool))
        partial = TokenGrid(np.zeros((3, 3), np.int64), np.zeros((3, 3), bool))
        out = sample(m, partial, order, 0.0, seed=1)
        assert (out.tokens == 0).all() and out.known.all()

    def test_seeded_determinism(self):
        m, partial, order = self._setup()
        a = sample(m, partial, order, 0.7, seed=123)
        b = sample(m, partial, order, 0.7, seed=123)
        np.testing.assert_array_equal(a.tokens, b.tokens)

    def test_seeds_vary_output(self):
        m, partial, order = self._setup(vis_p=0.2)
        outs = {sample(m, partial, order, 1.0, seed=s).tokens.tobytes() for s in range(8)}
        assert len(outs) > 1

    def test_visible_tokens_preserved(self):
        m, partial, order = self._setup()
        out = sample(m, partial, order, 0.8, seed=3)
        np.testing.assert_array_equal(out.tokens[partial.known], partial.tokens[partial.known])

    def test_batch_matches_sequential_singles(self):
        m, partial, order = self._setup(seed=60)
        seeds = [5, 6, 7, 8]
        batched = sample_batch(m, partial, order, 0.6, seeds)
        for s, grid in zip(seeds, batched):
            np.testing.assert_array_equal(grid.tokens, sample(m, partial, order, 0.6, s).tokens)

    def test_negative_temperature_rejected(self):
        m, partial, order = self._setup()
        with pytest.raises(ValueError):
            sample(m, partial, order, -0.1, seed=0)

    def test_known_order_mismatch_rejected(self):
        m, partial, order = self._setup()
        bad = TokenGrid(partial.tokens, ~partial.known)
        with pytest.raises(ValueError):
            sample(m, bad, order, 0.5, seed=0)

    def test_temperature_entropy_monotone_on_fixed_logits(self):
        logits = np.array([1.0, 0.2, -0.7, 2.3])
        entropies = []
        for t in (0.25, 0.5, 1.0, 2.0, 4.0):
            p = softmax(logits / t)
            entropies.append(float(-(p * np.log(p)).sum()))
        assert all(b >= a - 1e-12 for a, b in zip(entropies, entropies[1:]))


class TestCheckpointIO:
    def test_round_trip(self, tmp_path):
        cfg = ArConfig(vocab=6, embed_dim=4, layers=2, kernel=3, channels=5)
        m = random_model(cfg, 70)
        p = tmp_path / "model.psar"
        write_model(p, m)
        back = read_model(p)
        assert back.config == cfg
        for a, b in zip(m.parameters(), back.parameters()):
            np.testing.assert_array_equal(a.astype(np.float32), b.astype(np.float32))

    def test_rewrite_is_byte_identical(self, tmp_path):
        cfg = ArConfig(vocab=6, embed_dim=4, layers=2, kernel=3, channels=5)
        m = random_model(cfg, 71)
        p1, p2 = tmp_path / "a.psar", tmp_path / "b.psar"
        write_model(p1, m)
        write_model(p2, read_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.psar"
        p.write_bytes(b"WHAT" + b"\0" * 64)
        with pytest.raises(ValueError):
            read_model(p)

    def test_truncated(self, tmp_path):
        cfg = ArConfig(vocab=3, embed_dim=2, layers=1, kernel=1, channels=2)
        m = zero_model(cfg)
        p = tmp_path / "m.psar"
        write_model(p, m)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_model(p)
