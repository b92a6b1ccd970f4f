import math

import numpy as np
import pytest

from poesampler.errors import (
    ChainFailure,
    NonFiniteState,
    OutOfBounds,
    ShapeMismatch,
    TooLargeToEnumerate,
)
from poesampler.experts import (
    LinearExpert,
    LinearExpertParams,
    MlpExpert,
    MlpExpertParams,
    PottsExpert,
    ProductOfExperts,
    SUPERVISED,
    UNSUPERVISED,
)
from poesampler.samplers import (
    AnnealSchedule,
    ChainState,
    MalaConfig,
    PathRecord,
    SamplerConfig,
    exact_lb_proposal,
    exact_lb_step,
    mala_approx_step,
    mala_init,
    ppde_step,
    proposal_logits,
    propose_path,
    random_sampling_run,
    reverse_path_logq,
    run_chains,
    sa_step,
)
from poesampler.seqspace import (
    OneHotSequence,
    Substitution,
    apply_substitution,
    encode,
    hamming_distance,
)

from helpers import make_vocab, random_potts, random_sequence


def constant_poe(length: int, vocab_size: int, value: float = 0.0) -> ProductOfExperts:
    """Zero-gradient target: one linear expert with w = 0."""
    params = LinearExpertParams(np.zeros((length, vocab_size)), value)
    return ProductOfExperts(unsupervised=(LinearExpert(params, role=UNSUPERVISED),))


def linear_poe(rng, length: int, vocab_size: int, lam: float = 1.0) -> ProductOfExperts:
    f = LinearExpert(
        LinearExpertParams(rng.normal(size=(length, vocab_size)), 0.3), role=UNSUPERVISED
    )
    g = LinearExpert(
        LinearExpertParams(rng.normal(size=(length, vocab_size)), -0.1), role=SUPERVISED
    )
    return ProductOfExperts(unsupervised=(f,), supervised=(g,), lam=lam)


def potts_poe(rng, wt: OneHotSequence) -> ProductOfExperts:
    return ProductOfExperts(unsupervised=(PottsExpert(random_potts(rng, wt)),))


class ScriptedRng:
    """Forces the path-length draw; everything else falls through."""

    def __init__(self, path_length: int, seed: int = 0):
        self.path_length = path_length
        self._inner = np.random.default_rng(seed)

    def integers(self, low, high):
        assert low == 1 and high >= self.path_length + 1
        return self.path_length

    def random(self):
        return self._inner.random()


class CountingPoe:
    """Forwards to a real product while counting value and gradient pulls."""

    def __init__(self, poe: ProductOfExperts):
        self.poe = poe
        self.value_evals = 0
        self.grad_evals = 0

    def score(self, x):
        self.value_evals += 1
        return self.poe.score(x)

    def score_and_grad(self, x):
        self.value_evals += 1
        self.grad_evals += 1
        return self.poe.score_and_grad(x)

    @property
    def shape(self):
        return self.poe.shape


class TestProposalLogits:
    def test_zero_grad_is_uniform_over_substitutions(self):
        vocab = make_vocab(4)
        x = encode("ABC", vocab)
        logits = proposal_logits(np.zeros((3, 4)), x, SamplerConfig())
        idx = np.arange(3)
        assert np.all(np.isneginf(logits[idx, x.tokens]))
        off = np.isfinite(logits)
        assert off.sum() == 3 * (4 - 1)
        probs = np.exp(logits - logits[off].max())
        probs /= probs[np.isfinite(logits)].sum()
        assert np.allclose(probs[off], 1.0 / 9.0)

    def test_identity_moves_flag(self):
        vocab = make_vocab(3)
        x = encode("AB", vocab)
        cfg = SamplerConfig(include_identity_moves=True)
        logits = proposal_logits(np.zeros((2, 3)), x, cfg)
        assert np.all(logits == 0.0)

    def test_frozen_rows(self):
        vocab = make_vocab(3)
        x = encode("ABA", vocab)
        cfg = SamplerConfig(frozen_positions=frozenset({1}))
        rng = np.random.default_rng(0)
        logits = proposal_logits(rng.normal(size=(3, 3)), x, cfg)
        assert np.all(np.isneginf(logits[1]))
        assert np.isfinite(logits[0]).sum() == 2

    def test_half_of_gradient_gap(self):
        vocab = make_vocab(2)
        x = encode("AA", vocab)
        grad = np.array([[0.0, 3.0], [1.0, -1.0]])
        logits = proposal_logits(grad, x, SamplerConfig())
        assert logits[0, 1] == 1.5
        assert logits[1, 1] == -1.0

    def test_shape_mismatch(self):
        vocab = make_vocab(3)
        x = encode("AB", vocab)
        with pytest.raises(ShapeMismatch):
            proposal_logits(np.zeros((3, 3)), x, SamplerConfig())

    def test_frozen_position_out_of_range(self):
        vocab = make_vocab(3)
        x = encode("AB", vocab)
        cfg = SamplerConfig(frozen_positions=frozenset({5}))
        with pytest.raises(OutOfBounds):
            proposal_logits(np.zeros((2, 3)), x, cfg)

    def test_matches_exact_weights_for_linear_target(self):
        # first-order expansion is exact when every expert is linear
        rng = np.random.default_rng(11)
        vocab = make_vocab(4)
        poe = linear_poe(rng, 5, 4, lam=0.7)
        cfg = SamplerConfig()
        for _ in range(10):
            x = random_sequence(rng, 5, 4)
            _, grad = poe.score_and_grad(x)
            taylor = proposal_logits(grad, x, cfg)
            exact = exact_lb_proposal(x, poe, cfg)
            finite = np.isfinite(taylor)
            assert np.array_equal(finite, np.isfinite(exact.log_weights))
            assert np.max(np.abs(taylor[finite] - exact.log_weights[finite])) <= 1e-12


class TestPathProposal:
    def test_zero_grad_three_step_logq(self):
        # uniform proposal: each step costs log(1 / (L * (V - 1)))
        vocab = make_vocab(3)
        x = encode("AA", vocab)
        poe = constant_poe(2, 3, value=1.0)
        cfg = SamplerConfig(max_path_length=3)
        path = propose_path(x, poe, cfg, ScriptedRng(3))
        assert len(path.steps) == 3
        assert path.forward_logq == pytest.approx(3 * math.log(1.0 / (2 * 2)), abs=1e-12)

    def test_three_substitution_chain_is_a_valid_path(self):
        # "AAA" -> "AAB" -> "AAC" -> "ABC" expressed as one path record
        vocab = make_vocab(3)
        origin = encode("AAA", vocab)
        steps = (Substitution(2, 1), Substitution(2, 2), Substitution(1, 1))
        path = PathRecord(origin, encode("ABC", vocab), steps, forward_logq=0.0)
        assert len(path.steps) == 3
        assert hamming_distance(path.origin, path.terminal) == 2

    def test_single_step_logq_uniform(self):
        vocab = make_vocab(4)
        x = encode("ABC", vocab)
        poe = constant_poe(3, 4)
        cfg = SamplerConfig(max_path_length=1)
        rng = np.random.default_rng(5)
        path = propose_path(x, poe, cfg, rng)
        assert len(path.steps) == 1
        assert path.forward_logq == pytest.approx(-math.log(3 * 3), abs=1e-12)
        assert hamming_distance(path.origin, path.terminal) == 1

    def test_path_length_range(self):
        rng = np.random.default_rng(3)
        vocab = make_vocab(3)
        x = encode("AAAA", vocab)
        poe = constant_poe(4, 3)
        cfg = SamplerConfig(max_path_length=4)
        lengths = {len(propose_path(x, poe, cfg, rng).steps) for _ in range(200)}
        assert lengths == {1, 2, 3, 4}

    def test_respects_frozen_positions(self):
        rng = np.random.default_rng(9)
        vocab = make_vocab(3)
        x = encode("AAAA", vocab)
        poe = constant_poe(4, 3)
        cfg = SamplerConfig(max_path_length=2, frozen_positions=frozenset({0, 2}))
        for _ in range(50):
            path = propose_path(x, poe, cfg, rng)
            assert all(s.position in (1, 3) for s in path.steps)
            # two movable positions, two alternative tokens each
            assert path.forward_logq == pytest.approx(
                len(path.steps) * math.log(1.0 / 4), abs=1e-12
            )

    def test_record_validates_replay(self):
        vocab = make_vocab(3)
        x = encode("AA", vocab)
        y = encode("BA", vocab)
        with pytest.raises(ValueError):
            PathRecord(x, y, (Substitution(1, 1),), forward_logq=0.0)
        with pytest.raises(ValueError):
            PathRecord(x, y, (), forward_logq=0.0)


class TestReversePath:
    def test_zero_grad_two_step_logq(self):
        vocab = make_vocab(3)
        origin = encode("AA", vocab)
        steps = (Substitution(0, 1), Substitution(1, 2))
        terminal = encode("BC", vocab)
        path = PathRecord(origin, terminal, steps, forward_logq=-2.0 * math.log(4))
        poe = constant_poe(2, 3)
        logq = reverse_path_logq(path, poe, SamplerConfig(max_path_length=2))
        assert logq == pytest.approx(2 * math.log(1.0 / (2 * 2)), abs=1e-12)
        assert path.reverse_logq == logq

    def test_single_step_matches_exact_for_linear(self):
        rng = np.random.default_rng(21)
        vocab = make_vocab(4)
        poe = linear_poe(rng, 4, 4)
        cfg = SamplerConfig(max_path_length=1)
        x = random_sequence(rng, 4, 4)
        path = propose_path(x, poe, cfg, np.random.default_rng(2))
        logq = reverse_path_logq(path, poe, cfg)
        undo = Substitution(path.steps[0].position, x.token_at(path.steps[0].position))
        exact = exact_lb_proposal(path.terminal, poe, cfg)
        assert logq == pytest.approx(exact.log_prob(undo), abs=1e-12)

    def test_double_reverse_recovers_forward_logq(self):
        # with equal endpoint gradients the reversal map is an involution
        rng = np.random.default_rng(25)
        poe = linear_poe(rng, 4, 3)
        cfg = SamplerConfig(max_path_length=3)
        x = random_sequence(rng, 4, 3)
        path = propose_path(x, poe, cfg, np.random.default_rng(5))
        reverse_path_logq(path, poe, cfg)
        states = [path.origin]
        for s in path.steps:
            states.append(apply_substitution(states[-1], s))
        undo = tuple(
            Substitution(path.steps[r - 1].position,
                         states[r - 1].token_at(path.steps[r - 1].position))
            for r in range(len(path.steps), 0, -1)
        )
        flipped = PathRecord(path.terminal, path.origin, undo,
                             forward_logq=path.reverse_logq)
        assert reverse_path_logq(flipped, poe, cfg) == pytest.approx(
            path.forward_logq, abs=1e-12
        )


class TestPpdeStep:
    def test_two_state_acceptance_rate(self):
        # L=1, V=2 target with f(B) - f(A) = 1: from A the move is always
        # kept, from B with probability p = e^{-1}, so the long-run rate is
        # 2p / (1 + p)
        vocab = make_vocab(2)
        poe = ProductOfExperts(
            unsupervised=(
                LinearExpert(LinearExpertParams(np.array([[0.0, 1.0]]), 0.0), role=UNSUPERVISED),
            )
        )
        cfg = SamplerConfig(max_path_length=1)
        rng = np.random.default_rng(42)
        state = ChainState.at(encode("A", vocab), poe)
        n = 10_000
        accepted = 0
        for _ in range(n):
            state, out = ppde_step(state, poe, cfg, rng)
            accepted += out.accepted
        p = math.exp(-1.0)
        rate = 2 * p / (1 + p)
        sigma = math.sqrt(rate * (1 - rate) / n)
        assert abs(accepted / n - rate) <= 2 * sigma

    def test_eval_budget_two_grads_two_values(self):
        rng = np.random.default_rng(8)
        vocab = make_vocab(4)
        wt = random_sequence(rng, 6, 4)
        for max_len in (1, 3, 9, 19):
            counter = CountingPoe(potts_poe(rng, wt))
            cfg = SamplerConfig(max_path_length=max_len)
            state = ChainState.at(wt, counter)
            counter.value_evals = counter.grad_evals = 0
            for _ in range(25):
                state, _ = ppde_step(state, counter, cfg, rng)
            assert counter.grad_evals == 50
            assert counter.value_evals == 50

    def test_accepted_moves_update_state(self):
        rng = np.random.default_rng(4)
        vocab = make_vocab(3)
        wt = encode("AAAAA", vocab)
        poe = potts_poe(rng, wt)
        state = ChainState.at(wt, poe)
        cfg = SamplerConfig(max_path_length=3)
        saw_accept = saw_reject = False
        for _ in range(200):
            prev = state.current
            state, out = ppde_step(state, poe, cfg, rng)
            if out.accepted:
                saw_accept = True
                assert state.current_logp == pytest.approx(out.proposed_logp)
                assert hamming_distance(prev, state.current) <= out.path_length
            else:
                saw_reject = True
                assert state.current == prev
            assert state.best_logp >= state.current_logp
        assert saw_accept and saw_reject

    def test_frozen_positions_never_change(self):
        rng = np.random.default_rng(13)
        vocab = make_vocab(3)
        wt = encode("ABCAB", vocab)
        poe = potts_poe(rng, wt)
        cfg = SamplerConfig(max_path_length=3, frozen_positions=frozenset({0, 3}))
        state = ChainState.at(wt, poe)
        for _ in range(150):
            state, _ = ppde_step(state, poe, cfg, rng)
            assert state.current.token_at(0) == wt.token_at(0)
            assert state.current.token_at(3) == wt.token_at(3)

    def test_fully_frozen_is_a_null_step(self):
        rng = np.random.default_rng(1)
        vocab = make_vocab(3)
        wt = encode("AB", vocab)
        poe = constant_poe(2, 3)
        cfg = SamplerConfig(frozen_positions=frozenset({0, 1}))
        state = ChainState.at(wt, poe)
        state, out = ppde_step(state, poe, cfg, rng)
        assert not out.accepted
        assert out.path_length == 0
        assert state.current == wt
        assert state.step_index == 1


class TestExactLb:
    def test_probs_normalize(self):
        rng = np.random.default_rng(2)
        vocab = make_vocab(3)
        wt = encode("ABAB", vocab)
        prop = exact_lb_proposal(wt, potts_poe(rng, wt), SamplerConfig())
        assert prop.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(prop.probs[np.arange(4), wt.tokens] == 0.0)

    def test_sample_and_log_prob_agree(self):
        rng = np.random.default_rng(6)
        vocab = make_vocab(3)
        wt = encode("ABC", vocab)
        prop = exact_lb_proposal(wt, potts_poe(rng, wt), SamplerConfig())
        counts = {}
        draws = 4000
        for _ in range(draws):
            sub = prop.sample(rng)
            counts[sub] = counts.get(sub, 0) + 1
        for sub, c in counts.items():
            expected = math.exp(prop.log_prob(sub))
            assert abs(c / draws - expected) < 5 * math.sqrt(expected * (1 - expected) / draws)

    def test_step_runs_chain(self):
        rng = np.random.default_rng(14)
        vocab = make_vocab(3)
        wt = encode("AABB", vocab)
        poe = potts_poe(rng, wt)
        state = ChainState.at(wt, poe)
        cfg = SamplerConfig()
        for _ in range(50):
            state, out = ppde_step(state, poe, cfg, rng)
        assert np.isfinite(state.current_logp)

    def test_enumeration_cap(self):
        length, vocab_size = 400, 300
        poe = constant_poe(length, vocab_size)
        wt = OneHotSequence.from_tokens(np.zeros(length, dtype=np.int64), vocab_size)
        with pytest.raises(TooLargeToEnumerate):
            exact_lb_proposal(wt, poe, SamplerConfig())


class TestAnnealSchedule:
    def test_geometric_endpoints(self):
        sched = AnnealSchedule.geometric(1000)
        assert sched.temperature(0) == pytest.approx(1.0)
        assert sched.temperature(1000) == pytest.approx(1e-2, rel=1e-9)
        assert sched.temperature(5000) == 1e-2

    def test_monotone_non_increasing(self):
        sched = AnnealSchedule.geometric(100, t_init=2.0, t_final=0.5)
        temps = [sched.temperature(k) for k in range(200)]
        assert all(a >= b for a, b in zip(temps, temps[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            AnnealSchedule(t_init=-1.0)
        with pytest.raises(ValueError):
            AnnealSchedule(decay=1.5)
        with pytest.raises(ValueError):
            AnnealSchedule.geometric(10, t_init=0.5, t_final=1.0)


class TestSaStep:
    def test_flat_target_always_accepts(self):
        rng = np.random.default_rng(3)
        vocab = make_vocab(3)
        wt = encode("AAAA", vocab)
        poe = constant_poe(4, 3, value=2.0)
        sched = AnnealSchedule.geometric(100)
        state = ChainState.at(wt, poe)
        for _ in range(100):
            state, out = sa_step(state, poe, sched, rng)
            assert out.accepted
            assert out.path_length >= 1

    def test_mutation_count_mean(self):
        # m = 1 + Poisson(mu - 1), mu ~ U(1, 2.5): E[m] = 1.75
        rng = np.random.default_rng(17)
        vocab = make_vocab(3)
        wt = encode("AAAAAAAA", vocab)
        poe = constant_poe(8, 3)
        sched = AnnealSchedule.geometric(10_000)
        state = ChainState.at(wt, poe)
        counts = []
        for _ in range(5000):
            state, out = sa_step(state, poe, sched, rng)
            counts.append(out.path_length)
        assert np.mean(counts) == pytest.approx(1.75, abs=0.05)
        assert min(counts) >= 1

    def test_respects_frozen_positions(self):
        rng = np.random.default_rng(23)
        vocab = make_vocab(4)
        wt = encode("ABCD", vocab)
        poe = potts_poe(rng, wt)
        cfg = SamplerConfig(frozen_positions=frozenset({1, 2}))
        sched = AnnealSchedule.geometric(200)
        state = ChainState.at(wt, poe)
        for _ in range(200):
            state, _ = sa_step(state, poe, sched, rng, cfg)
            assert state.current.token_at(1) == wt.token_at(1)
            assert state.current.token_at(2) == wt.token_at(2)

    def test_cold_chain_rejects_downhill(self):
        rng = np.random.default_rng(29)
        vocab = make_vocab(3)
        wt = encode("AAAA", vocab)
        w = np.zeros((4, 3))
        w[:, 0] = 50.0
        poe = ProductOfExperts(
            unsupervised=(LinearExpert(LinearExpertParams(w, 0.0), role=UNSUPERVISED),)
        )
        sched = AnnealSchedule(t_init=1e-3, t_final=1e-3)
        state = ChainState.at(wt, poe)
        for _ in range(50):
            state, out = sa_step(state, poe, sched, rng)
            # substitutions can cancel out; only score-neutral moves pass
            assert not out.accepted or out.proposed_logp == state.current_logp
            assert state.current == wt


class TestRandomSampling:
    def test_top_k_prefix_of_full_ranking(self):
        rng = np.random.default_rng(31)
        vocab = make_vocab(4)
        wt = encode("AAAAA", vocab)
        poe = potts_poe(rng, wt)
        full = random_sampling_run(wt, poe, 1000, 1000, np.random.default_rng(7))
        top = random_sampling_run(wt, poe, 1000, 10, np.random.default_rng(7))
        assert [s for _, s in top] == [s for _, s in full[:10]]
        assert [x.tokens.tolist() for x, _ in top] == [
            x.tokens.tolist() for x, _ in full[:10]
        ]

    def test_min_of_top_decile(self):
        rng = np.random.default_rng(31)
        vocab = make_vocab(4)
        wt = encode("AAAAA", vocab)
        poe = potts_poe(rng, wt)
        full = random_sampling_run(wt, poe, 1000, 1000, np.random.default_rng(7))
        scores = np.array([s for _, s in full])
        top = random_sampling_run(wt, poe, 1000, 10, np.random.default_rng(7))
        assert min(s for _, s in top) >= np.percentile(scores, 90)

    def test_scores_sorted_descending(self):
        rng = np.random.default_rng(37)
        vocab = make_vocab(3)
        wt = encode("AAA", vocab)
        got = random_sampling_run(wt, potts_poe(rng, wt), 200, 50, rng)
        scores = [s for _, s in got]
        assert scores == sorted(scores, reverse=True)

    def test_constant_target_keeps_generation_order(self):
        vocab = make_vocab(3)
        wt = encode("AAAA", vocab)
        poe = constant_poe(4, 3)
        full = random_sampling_run(wt, poe, 30, 30, np.random.default_rng(1))
        top = random_sampling_run(wt, poe, 30, 5, np.random.default_rng(1))
        assert [x.tokens.tolist() for x, _ in top] == [
            x.tokens.tolist() for x, _ in full[:5]
        ]

    def test_variants_are_one_shot_mutants(self):
        rng = np.random.default_rng(41)
        vocab = make_vocab(3)
        wt = encode("AAAAAAAAAAAA", vocab)
        got = random_sampling_run(wt, constant_poe(12, 3), 300, 300, rng)
        dists = [hamming_distance(x, wt) for x, _ in got]
        assert max(dists) <= 8  # m is small; chaining 300 draws would drift far
        assert min(dists) >= 0

    def test_frozen_positions(self):
        rng = np.random.default_rng(43)
        vocab = make_vocab(3)
        wt = encode("ABAB", vocab)
        got = random_sampling_run(
            wt, constant_poe(4, 3), 100, 100, rng, frozen_positions=frozenset({0, 1})
        )
        for x, _ in got:
            assert x.token_at(0) == wt.token_at(0)
            assert x.token_at(1) == wt.token_at(1)

    def test_budget_validation(self):
        vocab = make_vocab(3)
        wt = encode("AA", vocab)
        with pytest.raises(ValueError):
            random_sampling_run(wt, constant_poe(2, 3), 5, 10, np.random.default_rng(0))


class TestMala:
    def test_zero_step_size_keeps_state(self):
        rng = np.random.default_rng(2)
        vocab = make_vocab(4)
        wt = encode("ABCD", vocab)
        mcfg = MalaConfig(step_size=0.0, tau=0.9)
        relaxed = mala_init(wt, mcfg)
        poe = potts_poe(rng, wt)
        new_state, _, _ = mala_approx_step(relaxed, poe, mcfg, rng)
        assert np.array_equal(new_state, relaxed)

    def test_sharp_init_rounds_to_wild_type(self):
        vocab = make_vocab(4)
        wt = encode("DCBA", vocab)
        mcfg = MalaConfig(step_size=0.1, tau=1.0 - 1e-12)
        relaxed = mala_init(wt, mcfg)
        rng = np.random.default_rng(19)
        poe = constant_poe(4, 4)
        for _ in range(5):
            _, rounded, _ = mala_approx_step(relaxed, poe, mcfg, rng)
            assert rounded == wt

    def test_init_is_mixture_of_uniform_and_one_hot(self):
        vocab = make_vocab(3)
        wt = encode("BA", vocab)
        mcfg = MalaConfig(tau=0.6)
        relaxed = mala_init(wt, mcfg)
        expected_on = math.log(0.4 / 3 + 0.6)
        expected_off = math.log(0.4 / 3)
        assert relaxed[0, 1] == pytest.approx(expected_on)
        assert relaxed[0, 0] == pytest.approx(expected_off)

    def test_drifts_uphill_on_linear_target(self):
        rng = np.random.default_rng(47)
        vocab = make_vocab(3)
        wt = encode("AAAAA", vocab)
        w = rng.normal(size=(5, 3)) * 3.0
        poe = ProductOfExperts(
            unsupervised=(LinearExpert(LinearExpertParams(w, 0.0), role=UNSUPERVISED),)
        )
        mcfg = MalaConfig(step_size=0.5, tau=0.9)
        relaxed = mala_init(wt, mcfg)
        best = -np.inf
        for _ in range(60):
            relaxed, _, value = mala_approx_step(relaxed, poe, mcfg, rng)
            best = max(best, value)
        assert best > poe.score(wt)

    def test_visit_ranking_follows_target_on_one_position_chain(self):
        vocab = make_vocab(3)
        wt = encode("A", vocab)
        w = np.array([[0.0, 0.8, 1.6]])
        poe = ProductOfExperts(
            unsupervised=(LinearExpert(LinearExpertParams(w, 0.0), role=UNSUPERVISED),)
        )
        mcfg = MalaConfig(step_size=0.2, tau=0.5)
        rng = np.random.default_rng(51)
        relaxed = mala_init(wt, mcfg)
        visits = np.zeros(3, dtype=np.int64)
        for _ in range(10_000):
            relaxed, rounded, _ = mala_approx_step(relaxed, poe, mcfg, rng)
            visits[rounded.token_at(0)] += 1
        assert visits[2] > visits[1] > visits[0]

    def test_non_finite_state_rejected(self):
        vocab = make_vocab(3)
        wt = encode("AB", vocab)
        mcfg = MalaConfig()
        relaxed = mala_init(wt, mcfg)
        relaxed[0, 0] = np.inf
        with pytest.raises(NonFiniteState):
            mala_approx_step(relaxed, constant_poe(2, 3), mcfg, np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MalaConfig(step_size=-0.1)
        with pytest.raises(ValueError):
            MalaConfig(tau=1.0)


class TestRunChains:
    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(53)
        vocab = make_vocab(3)
        wt = encode("AABA", vocab)
        poe = potts_poe(rng, wt)
        cfg = SamplerConfig(steps=40, max_path_length=3, seed=123)
        a = run_chains(wt, poe, "ppde", cfg, 3)
        b = run_chains(wt, poe, "ppde", cfg, 3)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.logp, tb.logp)
            assert np.array_equal(ta.accepted, tb.accepted)
            assert ta.best_sequence == tb.best_sequence

    def test_chain_prefix_stable_under_chain_count(self):
        rng = np.random.default_rng(59)
        vocab = make_vocab(3)
        wt = encode("ABC", vocab)
        poe = potts_poe(rng, wt)
        cfg = SamplerConfig(steps=25, seed=9)
        one = run_chains(wt, poe, "ppde", cfg, 1)
        four = run_chains(wt, poe, "ppde", cfg, 4)
        assert np.array_equal(one[0].logp, four[0].logp)

    def test_chains_differ(self):
        rng = np.random.default_rng(61)
        vocab = make_vocab(3)
        wt = encode("AAAA", vocab)
        poe = potts_poe(rng, wt)
        traces = run_chains(wt, poe, "ppde", SamplerConfig(steps=30, seed=4), 2)
        assert not np.array_equal(traces[0].logp, traces[1].logp)

    def test_trace_shape_and_ids(self):
        rng = np.random.default_rng(67)
        vocab = make_vocab(3)
        wt = encode("ABAB", vocab)
        poe = potts_poe(rng, wt)
        traces = run_chains(wt, poe, "ppde", SamplerConfig(steps=12, seed=0), 3)
        assert [t.chain_id for t in traces] == [0, 1, 2]
        for t in traces:
            assert t.steps.tolist() == list(range(1, 13))
            assert t.logp.size == 12
            assert t.best_logp == t.logp.max() or t.best_step == 0

    def test_single_step_run_best_is_wt_or_proposal(self):
        rng = np.random.default_rng(79)
        vocab = make_vocab(3)
        wt = encode("ABA", vocab)
        poe = potts_poe(rng, wt)
        for seed in range(6):
            trace = run_chains(wt, poe, "ppde", SamplerConfig(steps=1, seed=seed), 1)[0]
            assert trace.best_step in (0, 1)
            expected = poe.score(wt) if trace.best_step == 0 else trace.logp[0]
            assert trace.best_logp == pytest.approx(expected)

    def test_mlp_taylor_gap_is_finite(self):
        # nonlinear experts give a nonzero but bounded proposal mismatch
        rng = np.random.default_rng(33)
        expert = MlpExpert(
            MlpExpertParams.random(3, 3, (8,), rng), 3, 3, role=UNSUPERVISED
        )
        poe = ProductOfExperts(unsupervised=(expert,))
        x = random_sequence(rng, 3, 3)
        _, grad = poe.score_and_grad(x)
        cfg = SamplerConfig()
        taylor = proposal_logits(grad, x, cfg)
        finite = np.isfinite(taylor)
        taylor_p = np.zeros_like(taylor)
        taylor_p[finite] = np.exp(taylor[finite] - taylor[finite].max())
        taylor_p /= taylor_p.sum()
        exact_p = exact_lb_proposal(x, poe, cfg).probs
        gap = 0.5 * np.abs(taylor_p - exact_p).sum()
        assert np.isfinite(gap)
        assert 0.0 <= gap <= 1.0

    def test_sa_and_mala_dispatch(self):
        rng = np.random.default_rng(71)
        vocab = make_vocab(3)
        wt = encode("AAB", vocab)
        poe = potts_poe(rng, wt)
        cfg = SamplerConfig(steps=15, seed=2)
        sa_traces = run_chains(wt, poe, "sa", cfg, 2)
        mala_traces = run_chains(wt, poe, "mala", cfg, 2)
        assert all(t.logp.size == 15 for t in sa_traces + mala_traces)
        assert all(t.accepted.all() for t in mala_traces)

    def test_exact_lb_dispatch(self):
        rng = np.random.default_rng(73)
        vocab = make_vocab(3)
        wt = encode("ABB", vocab)
        poe = potts_poe(rng, wt)
        traces = run_chains(wt, poe, "exact-lb", SamplerConfig(steps=10, seed=5), 1)
        assert traces[0].logp.size == 10

    def test_random_is_not_chain_based(self):
        vocab = make_vocab(3)
        wt = encode("AA", vocab)
        with pytest.raises(ValueError, match="random_sampling_run"):
            run_chains(wt, constant_poe(2, 3), "random", SamplerConfig(steps=5), 1)

    def test_unknown_sampler(self):
        vocab = make_vocab(3)
        wt = encode("AA", vocab)
        with pytest.raises(ValueError):
            run_chains(wt, constant_poe(2, 3), "gibbs", SamplerConfig(steps=5), 1)

    def test_chain_failure_wraps_cause(self):
        class ExplodingPoe(CountingPoe):
            def score_and_grad(self, x):
                raise RuntimeError("backend gone")

        vocab = make_vocab(3)
        wt = encode("AB", vocab)
        poe = ExplodingPoe(constant_poe(2, 3))
        with pytest.raises(ChainFailure) as info:
            run_chains(wt, poe, "ppde", SamplerConfig(steps=3, seed=1), 1)
        assert info.value.chain_id == 0
        assert "backend gone" in str(info.value)


class TestSamplerConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(steps=0)
        with pytest.raises(ValueError):
            SamplerConfig(max_path_length=0)
        with pytest.raises(OutOfBounds):
            SamplerConfig(frozen_positions=frozenset({-1}))

    def test_frozen_positions_coerced(self):
        cfg = SamplerConfig(frozen_positions=[2, 0, 2])
        assert cfg.frozen_positions == frozenset({0, 2})
