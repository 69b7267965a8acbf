import math
import random

import numpy as np
import pytest

from oracles import brute_log_z, brute_viterbi, random_corpus, random_lattice
from picrf.corpus import Sentence, validate_iob2
from picrf.crf import (
    CrfError,
    InfeasibleLatticeError,
    Lattice,
    build_lattice,
    compile_sentence,
    encode_gold_states,
    expand_second_order,
    forward_backward,
    log_likelihood_and_gradient,
    preinduced_constraint_masks,
    state_space,
    total_parameters,
    viterbi,
)
from picrf.crf_types import ModelOrder
from picrf.features import BIAS_FEATURE, TemplateConfig, build_feature_index, extract_features
from picrf.induction import build_expanded_alphabet, revert

NEG_INF = float("-inf")


class TestStateSpace:
    @pytest.mark.parametrize("n_types", [1, 2, 3, 4, 5])
    def test_state_counts(self, n_types):
        alpha = build_expanded_alphabet([chr(ord("A") + i) for i in range(n_types)])
        base = 2 * n_types + 1
        first = state_space(ModelOrder.FIRST, alpha)
        pre = state_space(ModelOrder.PRE_INDUCED, alpha)
        second = state_space(ModelOrder.SECOND, alpha)
        assert first.n_states == base == first.effective_states
        assert pre.n_states == 3 * n_types + 1 == pre.effective_states
        assert second.n_pair_states == base * base == second.effective_states
        assert second.n_states == base * base + base

    def test_transition_slots_disjoint(self):
        alpha = build_expanded_alphabet(["A"])
        for order in ModelOrder:
            space = state_space(order, alpha)
            slots = space.trans_slot[space.trans_slot >= 0]
            assert len(set(slots.tolist())) == slots.size
            assert slots.max() < space.n_transition_params

    def test_second_order_start_states_only_at_origin(self):
        alpha = build_expanded_alphabet(["A"])
        space = state_space(ModelOrder.SECOND, alpha)
        n = len(alpha.base_labels)
        assert (space.start_slot[: n * n] == -1).all()
        assert (space.start_slot[n * n :] >= 0).all()
        # nothing transitions into a start pair
        assert (space.trans_slot[:, n * n :] == -1).all()

    def test_output_labels(self):
        alpha = build_expanded_alphabet(["A"])
        second = state_space(ModelOrder.SECOND, alpha)
        n = len(alpha.base_labels)
        for i, (a, b) in enumerate((a, b) for a in alpha.base_labels for b in alpha.base_labels):
            assert second.output_labels[i] == b


class TestExpandSecondOrder:
    def test_counts_for_three_labels(self):
        exp = expand_second_order(["X", "Y", "Z"])
        assert len(exp.pair_states) == 9
        assert len(exp.start_pairs) == 3
        n_pairs = len(exp.pair_states)
        pair_block = exp.consistency[:n_pairs, :n_pairs]
        assert int(pair_block.sum()) == 27

    def test_consistency_requires_matching_middle(self):
        exp = expand_second_order(["X", "Y"])
        states = exp.states
        for i, (_, b) in enumerate(states):
            for j, (c, d) in enumerate(states):
                expected = (b == c) and (c != "<start>")
                assert bool(exp.consistency[i, j]) == expected

    def test_projection_length(self):
        exp = expand_second_order(["X", "Y"])
        path = [4, 0, 1]
        assert len(exp.project(path)) == 3

    def test_empty_rejected(self):
        with pytest.raises(CrfError):
            expand_second_order([])


class TestForwardBackward:
    def test_two_state_single_position_uniform(self):
        lattice = Lattice(obs=np.zeros((1, 2)), trans=np.zeros((2, 2)), start=np.zeros(2))
        result = forward_backward(lattice)
        assert result.log_z == pytest.approx(math.log(2), abs=1e-12)
        assert result.node_marginals[0] == pytest.approx([0.5, 0.5])
        assert result.edge_marginals.shape == (0, 2, 2)

    def test_zero_potentials_give_t_log_s(self):
        for n_pos, n_states in [(1, 2), (3, 4), (5, 3)]:
            lattice = Lattice(
                obs=np.zeros((n_pos, n_states)),
                trans=np.zeros((n_states, n_states)),
                start=np.zeros(n_states),
            )
            result = forward_backward(lattice)
            assert result.log_z == pytest.approx(n_pos * math.log(n_states), abs=1e-10)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for n_pos in range(1, 5):
            for n_states in range(2, 5):
                for _ in range(5):
                    lattice = random_lattice(n_pos, n_states, rng)
                    result = forward_backward(lattice)
                    assert result.log_z == pytest.approx(brute_log_z(lattice), abs=1e-9)
                    assert result.log_z_backward == pytest.approx(result.log_z, abs=1e-9)

    def test_marginals_normalize(self):
        lattice = random_lattice(6, 4, np.random.default_rng(3))
        result = forward_backward(lattice)
        assert np.allclose(result.node_marginals.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(result.edge_marginals.sum(axis=(1, 2)), 1.0, atol=1e-9)

    def test_edge_marginals_consistent_with_nodes(self):
        lattice = random_lattice(5, 3, np.random.default_rng(4))
        result = forward_backward(lattice)
        assert np.allclose(
            result.edge_marginals.sum(axis=2), result.node_marginals[:-1], atol=1e-9
        )
        assert np.allclose(
            result.edge_marginals.sum(axis=1), result.node_marginals[1:], atol=1e-9
        )

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        lattice = random_lattice(4, 3, rng)
        base = forward_backward(lattice)
        path_before, _ = viterbi(lattice)
        shifted = Lattice(lattice.obs.copy(), lattice.trans, lattice.start)
        shifted.obs[2] += 7.25
        after = forward_backward(shifted)
        assert after.log_z == pytest.approx(base.log_z + 7.25, abs=1e-9)
        assert np.allclose(after.node_marginals, base.node_marginals, atol=1e-9)
        assert np.allclose(after.edge_marginals, base.edge_marginals, atol=1e-9)
        assert viterbi(shifted)[0] == path_before

    def test_blocked_lattice_raises(self):
        lattice = Lattice(
            obs=np.zeros((2, 2)),
            trans=np.full((2, 2), NEG_INF),
            start=np.zeros(2),
        )
        with pytest.raises(InfeasibleLatticeError):
            forward_backward(lattice)
        with pytest.raises(InfeasibleLatticeError):
            viterbi(lattice)


class TestViterbi:
    def test_all_zero_ties_break_to_lowest_index(self):
        lattice = Lattice(obs=np.zeros((4, 3)), trans=np.zeros((3, 3)), start=np.zeros(3))
        path, score = viterbi(lattice)
        assert path == [0, 0, 0, 0]
        assert score == 0.0

    def test_matches_exhaustive(self):
        rng = np.random.default_rng(21)
        for n_pos in range(1, 5):
            for n_states in range(2, 5):
                for _ in range(5):
                    lattice = random_lattice(n_pos, n_states, rng)
                    path, score = viterbi(lattice)
                    b_path, b_score, unique = brute_viterbi(lattice)
                    assert score == pytest.approx(b_score, abs=1e-9)
                    if unique:
                        assert path == b_path

    def test_forbidden_transition_respected(self):
        trans = np.zeros((2, 2))
        trans[0, 1] = NEG_INF
        obs = np.array([[1.0, 0.0], [0.0, 10.0]])
        lattice = Lattice(obs=obs, trans=trans, start=np.zeros(2))
        path, _ = viterbi(lattice)
        assert path == [1, 1]


ALPHA2 = build_expanded_alphabet(["A", "B"])


class TestEncodeGold:
    def test_first_order(self):
        space = state_space(ModelOrder.FIRST, ALPHA2)
        got = encode_gold_states(["B-A", "O", "B-B"], space)
        assert got.tolist() == [0, 4, 2]

    def test_pre_induced_applies_transform(self):
        space = state_space(ModelOrder.PRE_INDUCED, ALPHA2)
        got = encode_gold_states(["B-A", "O", "B-B"], space)
        # B-A, A[O], B-B in the expanded alphabet
        assert got.tolist() == [0, 5, 2]

    def test_second_order_pairs(self):
        space = state_space(ModelOrder.SECOND, ALPHA2)
        n = len(ALPHA2.base_labels)
        got = encode_gold_states(["B-A", "O", "B-B"], space)
        assert got.tolist() == [n * n + 0, 0 * n + 4, 4 * n + 2]

    def test_unknown_label_raises(self):
        space = state_space(ModelOrder.FIRST, ALPHA2)
        with pytest.raises(CrfError):
            encode_gold_states(["B-Z"], space)


def _training_setup(order, corpus, template=None, alphabet=None):
    template = template or TemplateConfig(set_id=1)
    alphabet = alphabet or ALPHA2
    space = state_space(order, alphabet)
    index = build_feature_index(corpus, template, alphabet, order)
    compiled = [
        compile_sentence(extract_features(s, template), list(s.labels), index, space)
        for s in corpus
    ]
    return space, index, compiled


class TestObjective:
    def test_zero_weights_closed_form(self):
        corpus = [Sentence.from_strings(["a", "b", "c"], ["B-A", "O", "O"])]
        space, index, compiled = _training_setup(ModelOrder.FIRST, corpus)
        weights = np.zeros(total_parameters(index, space))
        value, grad = log_likelihood_and_gradient(compiled, weights, index, space)
        n_states = space.n_states
        assert value == pytest.approx(-3 * math.log(n_states), abs=1e-10)

    def test_bias_gradient_single_position(self):
        corpus = [Sentence.from_strings(["a"], ["B-A"])]
        space, index, compiled = _training_setup(ModelOrder.FIRST, corpus)
        weights = np.zeros(total_parameters(index, space))
        _, grad = log_likelihood_and_gradient(compiled, weights, index, space)
        n_states = space.n_states
        fid = index.feature_ids[BIAS_FEATURE]
        gold_slot = index.block_start(fid) + 0  # B-A is state 0
        assert grad[gold_slot] == pytest.approx(1.0 - 1.0 / n_states, abs=1e-12)
        other_slot = index.block_start(fid) + 4  # O
        assert grad[other_slot] == pytest.approx(-1.0 / n_states, abs=1e-12)

    def test_penalty_disabled_at_infinite_variance(self):
        corpus = random_corpus(random.Random(0), ["A", "B"], 4)
        space, index, compiled = _training_setup(ModelOrder.FIRST, corpus)
        rng = np.random.default_rng(0)
        weights = rng.normal(size=total_parameters(index, space))
        v_inf, g_inf = log_likelihood_and_gradient(
            compiled, weights, index, space, l2_variance=float("inf")
        )
        v_pen, g_pen = log_likelihood_and_gradient(
            compiled, weights, index, space, l2_variance=2.0
        )
        assert v_pen == pytest.approx(v_inf - float(weights @ weights) / 4.0, rel=1e-12)
        assert np.allclose(g_pen, g_inf - weights / 2.0, atol=1e-12)

    @pytest.mark.parametrize("order", list(ModelOrder))
    def test_batch_log_z_matches_per_sentence(self, order):
        corpus = random_corpus(random.Random(3), ["A", "B"], 12)
        template = TemplateConfig(set_id=2)
        space, index, compiled = _training_setup(order, corpus, template)
        rng = np.random.default_rng(7)
        weights = rng.normal(scale=0.3, size=total_parameters(index, space))
        value, _ = log_likelihood_and_gradient(compiled, weights, index, space)

        total = 0.0
        w_trans = weights[index.n_parameters :]
        for sentence, cs in zip(corpus, compiled):
            feats = extract_features(sentence, template)
            lattice = build_lattice(feats, weights, index, space)
            result = forward_backward(lattice)
            gold = cs.gold
            gold_score = w_trans[space.start_slot[gold[0]]]
            for t in range(1, len(gold)):
                gold_score += w_trans[space.trans_slot[gold[t - 1], gold[t]]]
            gold_score += lattice.obs[np.arange(len(gold)), gold].sum()
            total += gold_score - result.log_z
        assert value == pytest.approx(total, rel=1e-10)

    @pytest.mark.parametrize("order", list(ModelOrder))
    def test_gradient_matches_finite_differences(self, order):
        corpus = random_corpus(random.Random(9), ["A", "B"], 5)
        space, index, compiled = _training_setup(order, corpus, TemplateConfig(set_id=2))
        n = total_parameters(index, space)
        rng = np.random.default_rng(2)
        weights = rng.normal(scale=0.1, size=n)
        _, grad = log_likelihood_and_gradient(compiled, weights, index, space, l2_variance=5.0)
        h = 1e-5
        for slot in rng.choice(n, size=15, replace=False):
            plus, minus = weights.copy(), weights.copy()
            plus[slot] += h
            minus[slot] -= h
            vp, _ = log_likelihood_and_gradient(compiled, plus, index, space, l2_variance=5.0)
            vm, _ = log_likelihood_and_gradient(compiled, minus, index, space, l2_variance=5.0)
            fd = (vp - vm) / (2 * h)
            assert abs(fd - grad[slot]) / max(1.0, abs(grad[slot])) < 1e-6

    def test_threads_bit_identical(self):
        corpus = random_corpus(random.Random(5), ["A"], 20)
        space, index, compiled = _training_setup(
            ModelOrder.PRE_INDUCED, corpus, alphabet=build_expanded_alphabet(["A"])
        )
        rng = np.random.default_rng(1)
        weights = rng.normal(size=total_parameters(index, space))
        v1, g1 = log_likelihood_and_gradient(compiled, weights, index, space, threads=1)
        v4, g4 = log_likelihood_and_gradient(compiled, weights, index, space, threads=4)
        assert v1 == v4
        assert np.array_equal(g1, g4)

    def test_empty_batch_rejected(self):
        space, index, _ = _training_setup(
            ModelOrder.FIRST, [Sentence.from_strings(["a"], ["O"])]
        )
        with pytest.raises(CrfError):
            log_likelihood_and_gradient([], np.zeros(total_parameters(index, space)), index, space)

    def test_missing_gold_rejected(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        cs = compile_sentence([["BIAS"]], None, index, space)
        with pytest.raises(CrfError):
            log_likelihood_and_gradient([cs], np.zeros(total_parameters(index, space)), index, space)

    def test_weight_length_mismatch(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, compiled = _training_setup(ModelOrder.FIRST, corpus)
        with pytest.raises(CrfError):
            log_likelihood_and_gradient(compiled, np.zeros(3), index, space)


class TestBuildLattice:
    def test_weight_length_checked(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        with pytest.raises(CrfError):
            build_lattice([["BIAS"]], np.zeros(1), index, space)

    def test_empty_sentence_rejected(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        with pytest.raises(CrfError):
            build_lattice([], np.zeros(total_parameters(index, space)), index, space)

    def test_unknown_features_contribute_zero(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        rng = np.random.default_rng(0)
        weights = rng.normal(size=total_parameters(index, space))
        known = [["BIAS", "W[0]=a"]]
        with_unknown = [["BIAS", "W[0]=a", "W[0]=never-seen"]]
        a = build_lattice(known, weights, index, space)
        b = build_lattice(with_unknown, weights, index, space)
        assert np.array_equal(a.obs, b.obs)

    def test_psi_accessor(self):
        corpus = [Sentence.from_strings(["a", "b"], ["O", "O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        rng = np.random.default_rng(2)
        weights = rng.normal(size=total_parameters(index, space))
        feats = extract_features(corpus[0], TemplateConfig(set_id=1))
        lattice = build_lattice(feats, weights, index, space)
        assert lattice.psi(0, None, 1) == pytest.approx(lattice.start[1] + lattice.obs[0, 1])
        assert lattice.psi(1, 0, 2) == pytest.approx(lattice.trans[0, 2] + lattice.obs[1, 2])

    def test_constrained_requires_pre_induced(self):
        corpus = [Sentence.from_strings(["a"], ["O"])]
        space, index, _ = _training_setup(ModelOrder.FIRST, corpus)
        with pytest.raises(CrfError):
            build_lattice(
                [["BIAS"]],
                np.zeros(total_parameters(index, space)),
                index,
                space,
                constrained=True,
            )


class TestSecondOrderEmbedding:
    def test_first_order_weights_reproduce_first_order_decode(self):
        rng = random.Random(17)
        corpus = random_corpus(rng, ["A", "B"], 30, min_len=1, max_len=7)
        template = TemplateConfig(set_id=1)
        first_space, first_index, _ = _training_setup(ModelOrder.FIRST, corpus, template)
        second_space, second_index, _ = _training_setup(ModelOrder.SECOND, corpus, template)
        assert first_index.features == second_index.features

        gen = np.random.default_rng(23)
        w_first = gen.normal(size=total_parameters(first_index, first_space))

        n = first_space.n_states
        w_second = np.zeros(total_parameters(second_index, second_space))
        w_second[: second_index.n_parameters] = w_first[: first_index.n_parameters]
        trans_first = w_first[first_index.n_parameters :]
        trans_second = w_second[second_index.n_parameters :]
        trans_second[:n] = trans_first[:n]  # start weights
        for prev in range(n + 1):
            for cur in range(n):
                for nxt in range(n):
                    trans_second[n + (prev * n + cur) * n + nxt] = trans_first[
                        n + cur * n + nxt
                    ]

        for sentence in corpus:
            feats = extract_features(sentence, template)
            first_path, first_score = viterbi(
                build_lattice(feats, w_first, first_index, first_space)
            )
            second_path, second_score = viterbi(
                build_lattice(feats, w_second, second_index, second_space)
            )
            first_labels = [first_space.output_labels[s] for s in first_path]
            second_labels = [second_space.output_labels[s] for s in second_path]
            assert first_labels == second_labels
            assert first_score == pytest.approx(second_score, abs=1e-9)


class TestPreInducedConstraints:
    def test_forbidden_moves(self):
        start_ok, trans_ok = preinduced_constraint_masks(ALPHA2)
        labels = ALPHA2.expanded_labels
        idx = {label: i for i, label in enumerate(labels)}

        def allowed(a, b):
            return bool(trans_ok[idx[a], idx[b]])

        assert not allowed("A[O]", "O")
        assert not allowed("B-B", "A[O]")
        assert not allowed("O", "A[O]")
        assert not allowed("A[O]", "B[O]")
        assert not allowed("A[O]", "I-A")
        assert not allowed("B-A", "O")
        assert allowed("B-A", "A[O]")
        assert allowed("A[O]", "A[O]")
        assert allowed("A[O]", "B-B")
        assert allowed("O", "O")
        assert allowed("O", "B-A")
        assert not start_ok[idx["I-A"]]
        assert not start_ok[idx["A[O]"]]
        assert start_ok[idx["B-A"]] and start_ok[idx["O"]]

    def test_constrained_decode_reverts_to_valid_iob2(self):
        rng = random.Random(31)
        corpus = random_corpus(rng, ["A", "B"], 40, min_len=1, max_len=9)
        template = TemplateConfig(set_id=1)
        space, index, _ = _training_setup(ModelOrder.PRE_INDUCED, corpus, template)
        gen = np.random.default_rng(4)
        for trial in range(10):
            weights = gen.normal(scale=2.0, size=total_parameters(index, space))
            for sentence in corpus[:8]:
                feats = extract_features(sentence, template)
                lattice = build_lattice(feats, weights, index, space, constrained=True)
                path, _ = viterbi(lattice)
                labels = [space.output_labels[s] for s in path]
                reverted = revert(labels, ALPHA2)
                assert validate_iob2(reverted, mode="strict") == reverted

    def test_unconstrained_revert_is_total(self):
        rng = random.Random(32)
        corpus = random_corpus(rng, ["A", "B"], 10)
        template = TemplateConfig(set_id=1)
        space, index, _ = _training_setup(ModelOrder.PRE_INDUCED, corpus, template)
        gen = np.random.default_rng(5)
        weights = gen.normal(size=total_parameters(index, space))
        for sentence in corpus:
            feats = extract_features(sentence, template)
            path, _ = viterbi(build_lattice(feats, weights, index, space))
            labels = [space.output_labels[s] for s in path]
            reverted = revert(labels, ALPHA2)
            assert all(l in ALPHA2.base_labels for l in reverted)
