"""Loss oracles: brute-force recomputation, analytic cases, gradient checks."""

import itertools
import math

import numpy as np
import pytest

from silentspeech.autodiff import Tensor, finite_difference_gradient, grad
from silentspeech.losses import (
    InfeasibleLabelError,
    LatentBatch,
    LossConfig,
    LossWeights,
    MissingLabelError,
    PairingError,
    combined_loss,
    crosscon,
    ctc_loss,
    pairwise_sim,
    suptcon,
)

EPS = 1e-8


# -- independent oracles -----------------------------------------------------


def brute_cos(a, b):
    return a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + EPS)


def brute_sim(Z, i, j, tau):
    return math.exp(brute_cos(Z[:, i], Z[:, j]) / tau)


def brute_crosscon(Z, pairing, tau=0.1):
    L = Z.shape[1]
    total = 0.0
    for i in range(L):
        num = brute_sim(Z, i, pairing[i], tau)
        den = sum(brute_sim(Z, i, j, tau) for j in range(L) if j != i)
        total += -math.log(num / den)
    return total / L


def brute_suptcon(Z, labels, tau=0.1):
    L = Z.shape[1]
    total = 0.0
    for i in range(L):
        positives = [q for q in range(L) if q != i and labels[q] == labels[i]]
        if not positives:
            continue
        den = sum(brute_sim(Z, i, j, tau) for j in range(L) if j != i)
        total += -sum(math.log(brute_sim(Z, i, q, tau) / den) for q in positives) / len(positives)
    return total / L


def brute_ctc(logits, label, blank):
    """Sum path probabilities over every frame path that collapses to label."""
    T, K = logits.shape
    m = logits.max(axis=1, keepdims=True)
    lp = logits - (np.log(np.exp(logits - m).sum(axis=1, keepdims=True)) + m)
    total = 0.0
    for path in itertools.product(range(K), repeat=T):
        collapsed = []
        prev = None
        for s in path:
            if s != prev:
                collapsed.append(s)
            prev = s
        if [s for s in collapsed if s != blank] == list(label):
            total += math.exp(sum(lp[t, path[t]] for t in range(T)))
    if total == 0.0:
        raise InfeasibleLabelError("no path")
    return -math.log(total)


def paired_batch(Z, n_utts):
    """Alternating emg/audio columns, one frame per utterance."""
    L = Z.shape[1]
    assert L == 2 * n_utts
    pairing = []
    for u in range(n_utts):
        pairing.extend([2 * u + 1, 2 * u])
    return LatentBatch(
        embeddings=Tensor(Z),
        modality=["emg", "audio"] * n_utts,
        utterance_id=[u for u in range(n_utts) for _ in range(2)],
        timestep=[0] * L,
        pairing=pairing,
    )


class TestPairwiseSim:
    def test_diagonal_is_exp_inv_tau(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        batch = paired_batch(Z, 1)
        sim = pairwise_sim(batch, tau=0.1).data
        assert sim[0, 0] == pytest.approx(math.exp(10.0), rel=1e-6)

    def test_orthogonal_gives_one(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        sim = pairwise_sim(paired_batch(Z, 1), tau=0.1).data
        assert sim[0, 1] == pytest.approx(1.0, abs=1e-6)

    def test_random_matches_per_pair_evaluation(self):
        rng = np.random.default_rng(2)
        Z = rng.normal(size=(4, 3))
        batch = LatentBatch(Tensor(Z), ["emg"] * 3, [0, 1, 2], [0, 0, 0])
        sim = pairwise_sim(batch, tau=0.25).data
        for i in range(3):
            for j in range(3):
                assert sim[i, j] == pytest.approx(brute_sim(Z, i, j, 0.25), rel=1e-10)

    def test_non_finite_rejected(self):
        Z = np.array([[np.inf, 0.0], [0.0, 1.0]])
        with pytest.raises(FloatingPointError):
            pairwise_sim(paired_batch(Z, 1))


class TestCrossCon:
    def test_single_pair_is_exactly_zero(self):
        rng = np.random.default_rng(0)
        batch = paired_batch(rng.normal(size=(3, 2)), 1)
        assert crosscon(batch).item() == 0.0

    def test_two_utterances_match_brute_force(self):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(2, 4))
        batch = paired_batch(Z, 2)
        assert crosscon(batch, tau=0.1).item() == pytest.approx(
            brute_crosscon(Z, batch.pairing), rel=1e-12
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        Z = rng.uniform(-2, 2, size=(3, 6))
        pairing = [1, 0, 3, 2, 5, 4]

        def f(z):
            return crosscon(
                LatentBatch(z, ["emg", "audio"] * 3, [0, 0, 1, 1, 2, 2], [0] * 6, pairing=pairing)
            )

        ga = grad(f, Tensor(Z)).data
        gn = finite_difference_gradient(f, Z, h=1e-5).data
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(gn), 1e-8)) <= 1e-4

    def test_missing_partner_rejected(self):
        Z = np.eye(2)
        batch = LatentBatch(Tensor(Z), ["emg", "audio"], [0, 0], [0, 0], pairing=None)
        with pytest.raises(PairingError):
            crosscon(batch)
        with pytest.raises(PairingError):
            crosscon(LatentBatch(Tensor(Z), ["emg", "audio"], [0, 0], [0, 0], pairing=[1, None]))

    def test_pairing_involution_enforced(self):
        Z = np.eye(3)
        with pytest.raises(PairingError):
            LatentBatch(Tensor(Z), ["emg", "audio", "emg"], [0] * 3, [0] * 3, pairing=[1, 2, 0])

    def test_modality_tag_swap_is_symmetric(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(3, 6))
        pairing = [1, 0, 3, 2, 5, 4]
        tags = ["emg", "audio"] * 3
        swapped = ["audio", "emg"] * 3
        a = crosscon(LatentBatch(Tensor(Z), tags, [0, 0, 1, 1, 2, 2], [0] * 6, pairing=pairing))
        b = crosscon(LatentBatch(Tensor(Z), swapped, [0, 0, 1, 1, 2, 2], [0] * 6, pairing=pairing))
        assert a.item() == b.item()

    def test_column_rescaling_invariance(self):
        rng = np.random.default_rng(6)
        Z = rng.normal(size=(3, 4))
        batch = paired_batch(Z, 2)
        Z2 = Z.copy()
        Z2[:, 2] *= 7.5  # positive rescaling of one column
        batch2 = paired_batch(Z2, 2)
        assert crosscon(batch).item() == pytest.approx(crosscon(batch2).item(), abs=1e-6)

    def test_sharper_temperature_lowers_separable_loss(self):
        # paired columns identical, pairs mutually orthogonal
        Z = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
        batch = paired_batch(Z, 2)
        values = [crosscon(batch, tau=t).item() for t in (1.0, 0.5, 0.1)]
        assert values[0] > values[1] > values[2]


class TestSupTCon:
    def test_identical_embeddings_same_class(self):
        Z = np.tile(np.array([[0.3], [1.1], [-0.4]]), (1, 4))
        batch = LatentBatch(Tensor(Z), ["emg"] * 4, [0] * 4, list(range(4)), class_label=["a"] * 4)
        assert suptcon(batch).item() == pytest.approx(math.log(3), abs=1e-9)

    def test_three_columns_two_classes_match_brute_force(self):
        rng = np.random.default_rng(7)
        Z = rng.normal(size=(2, 3))
        labels = ["a", "b", "a"]
        batch = LatentBatch(Tensor(Z), ["emg"] * 3, [0] * 3, [0, 1, 2], class_label=labels)
        assert suptcon(batch, tau=0.1).item() == pytest.approx(brute_suptcon(Z, labels), rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_fd(self, seed):
        rng = np.random.default_rng(seed + 20)
        Z = rng.uniform(-2, 2, size=(3, 5))
        labels = ["a", "b", "a", "c", "b"]

        def f(z):
            return suptcon(LatentBatch(z, ["emg"] * 5, [0] * 5, list(range(5)), class_label=labels))

        ga = grad(f, Tensor(Z)).data
        gn = finite_difference_gradient(f, Z, h=1e-5).data
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(gn), 1e-8)) <= 1e-4

    def test_missing_labels_rejected(self):
        Z = np.eye(2)
        with pytest.raises(MissingLabelError):
            suptcon(LatentBatch(Tensor(Z), ["emg"] * 2, [0, 0], [0, 1]))
        with pytest.raises(MissingLabelError):
            suptcon(LatentBatch(Tensor(Z), ["emg"] * 2, [0, 0], [0, 1], class_label=["a", None]))

    def test_empty_positive_sets_contribute_zero(self):
        rng = np.random.default_rng(8)
        Z = rng.normal(size=(2, 3))
        # only columns 0 and 2 share a class; column 1 has no positives
        labels = ["a", "b", "a"]
        full = suptcon(LatentBatch(Tensor(Z), ["emg"] * 3, [0] * 3, [0, 1, 2], class_label=labels))
        expected = brute_suptcon(Z, labels)
        assert full.item() == pytest.approx(expected, rel=1e-12)

    def test_column_rescaling_invariance(self):
        rng = np.random.default_rng(9)
        Z = rng.normal(size=(3, 4))
        labels = ["a", "b", "a", "b"]
        base = suptcon(LatentBatch(Tensor(Z), ["emg"] * 4, [0] * 4, [0] * 4, class_label=labels))
        Z2 = Z.copy()
        Z2[:, 1] *= 3.0
        scaled = suptcon(LatentBatch(Tensor(Z2), ["emg"] * 4, [0] * 4, [0] * 4, class_label=labels))
        assert base.item() == pytest.approx(scaled.item(), abs=1e-6)


class TestCTC:
    def test_uniform_single_frame_is_log_k(self):
        for K in (2, 3, 5):
            loss = ctc_loss(Tensor(np.zeros((1, K))), [1], blank=0)
            assert loss.item() == pytest.approx(math.log(K), rel=1e-12)

    def test_two_frame_factorization(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(2, 3))
        m = logits.max(axis=1, keepdims=True)
        p = np.exp(logits - m)
        p /= p.sum(axis=1, keepdims=True)
        blank, a = 0, 1
        expected = p[0, a] * p[1, a] + p[0, blank] * p[1, a] + p[0, a] * p[1, blank]
        assert math.exp(-ctc_loss(Tensor(logits), [a], blank).item()) == pytest.approx(
            expected, rel=1e-10
        )

    def test_empty_label_is_all_blank_path(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(4, 3))
        m = logits.max(axis=1, keepdims=True)
        lp = logits - (np.log(np.exp(logits - m).sum(axis=1, keepdims=True)) + m)
        assert ctc_loss(Tensor(logits), [], blank=2).item() == pytest.approx(
            -lp[:, 2].sum(), rel=1e-12
        )

    def test_exhaustive_enumeration_small_grid(self):
        rng = np.random.default_rng(12)
        for T in (1, 2, 3, 4):
            for K in (2, 3):
                logits = rng.normal(size=(T, K))
                symbols = list(range(1, K))
                for length in range(0, 3):
                    for label in itertools.product(symbols, repeat=length):
                        try:
                            expected = brute_ctc(logits, list(label), 0)
                        except InfeasibleLabelError:
                            with pytest.raises(InfeasibleLabelError):
                                ctc_loss(Tensor(logits), list(label), 0)
                            continue
                        got = ctc_loss(Tensor(logits), list(label), 0).item()
                        assert got == pytest.approx(expected, abs=1e-10)

    def test_infeasible_label_raises(self):
        with pytest.raises(InfeasibleLabelError):
            ctc_loss(Tensor(np.zeros((1, 3))), [1, 2], blank=0)
        with pytest.raises(InfeasibleLabelError):
            ctc_loss(Tensor(np.zeros((2, 3))), [1, 1], blank=0)  # repeat needs a blank frame

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_fd(self, seed):
        rng = np.random.default_rng(seed + 40)
        logits = rng.uniform(-2, 2, size=(5, 4))

        def f(lg):
            return ctc_loss(lg, [1, 2, 1], blank=0)

        ga = grad(f, Tensor(logits)).data
        gn = finite_difference_gradient(f, logits, h=1e-5).data
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(gn), 1e-8)) <= 1e-4


class TestCombinedLoss:
    def test_all_ones(self):
        assert combined_loss(1.0, 1.0, 1.0, 1.0, LossWeights(1, 1, 1, 1)).item() == 4.0

    def test_crosscon_row_weights(self):
        # (audio=1, emg=1, sup=0, cross=1): the sup component must not be touched
        def boom():
            raise AssertionError("sup must not be computed when its weight is zero")

        value = combined_loss(
            emg_ctc=2.0, audio_ctc=3.0, cross=5.0, sup=boom, weights=LossWeights(1, 1, 1, 0)
        )
        assert value.item() == 10.0

    def test_crosscon_suptcon_row_weights(self):
        value = combined_loss(2.0, 3.0, 5.0, 7.0, LossWeights(1, 1, 1, 0.1))
        assert value.item() == pytest.approx(2 + 3 + 5 + 0.7)

    def test_zero_weight_short_circuits_callable(self):
        calls = []

        def expensive():
            calls.append(1)
            return 99.0

        combined_loss(1.0, 1.0, expensive, expensive, LossWeights(1, 1, 0, 0))
        assert not calls

    def test_missing_component_with_weight_rejected(self):
        with pytest.raises(ValueError):
            combined_loss(None, 1.0, 1.0, 1.0, LossWeights(1, 1, 1, 1))

    def test_non_finite_component_rejected(self):
        with pytest.raises(FloatingPointError):
            combined_loss(float("nan"), 1.0, 1.0, 1.0, LossWeights(1, 1, 1, 1))

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(emg=-1.0)
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)


class TestGradientChecksAcrossSeeds:
    """All four loss gradients pass finite-difference checks on 20 seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_composite_batch(self, seed):
        rng = np.random.default_rng(100 + seed)
        F = int(rng.integers(2, 5))
        n_pairs = int(rng.integers(2, 4))
        Z = rng.uniform(-2, 2, size=(F, 2 * n_pairs))
        labels = [str(rng.integers(0, 2)) for _ in range(2 * n_pairs)]
        pairing = []
        for u in range(n_pairs):
            pairing.extend([2 * u + 1, 2 * u])
        T, K = int(rng.integers(3, 7)), 4
        logits = rng.uniform(-2, 2, size=(T, K))
        label = [1, 2][: int(rng.integers(1, 3))]
        weights = LossWeights(emg=1.0, audio=1.0, cross=1.0, sup=0.1)

        def f_z(z):
            batch = LatentBatch(
                z, ["emg", "audio"] * n_pairs,
                [u for u in range(n_pairs) for _ in range(2)],
                [0] * (2 * n_pairs), class_label=labels, pairing=pairing,
            )
            return combined_loss(0.0, 0.0, crosscon(batch), suptcon(batch), weights)

        ga = grad(f_z, Tensor(Z)).data
        gn = finite_difference_gradient(f_z, Z, h=1e-5).data
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(gn), 1e-8)) <= 1e-4

        def f_logits(lg):
            return combined_loss(ctc_loss(lg, label, 0), None, None, None,
                                 LossWeights(1.0, 0.0, 0.0, 0.0))

        ga = grad(f_logits, Tensor(logits)).data
        gn = finite_difference_gradient(f_logits, logits, h=1e-5).data
        assert np.max(np.abs(ga - gn) / np.maximum(np.abs(gn), 1e-8)) <= 1e-4
