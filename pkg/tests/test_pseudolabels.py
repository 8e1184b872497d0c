"""Teacher-side frame similarity, rank-threshold labels, context assembly."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apranking.errors import DegenerateInputError, ParameterError, StructuralError
from apranking.losses import heaviside_ap_risk
from apranking.pseudolabels import (
    IGNORE,
    NEGATIVE,
    POSITIVE,
    FrameEmbeddings,
    LabelRates,
    PseudoLabelMatrix,
    frame_query_contexts,
    generate_pseudo_labels,
    teacher_frame_similarity,
)
from apranking.synthetic import planted_correspondence_matrix


class TestTeacherSimilarity:
    def test_self_diagonal(self):
        rng = np.random.default_rng(0)
        a = FrameEmbeddings(rng.standard_normal((4, 6)))
        np.testing.assert_allclose(np.diag(teacher_frame_similarity(a, a)), 1.0, atol=1e-12)

    def test_orthogonal(self):
        a = FrameEmbeddings([[1.0, 0.0]])
        b = FrameEmbeddings([[0.0, 1.0]])
        assert teacher_frame_similarity(a, b)[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_hand_cosine(self):
        a = FrameEmbeddings([[1.0, 0.0]])
        b = FrameEmbeddings([[0.6, 0.8]])
        assert teacher_frame_similarity(a, b)[0, 0] == pytest.approx(0.6, abs=1e-12)

    def test_zero_row_rejected(self):
        with pytest.raises(DegenerateInputError):
            teacher_frame_similarity(FrameEmbeddings([[0.0, 0.0]]), FrameEmbeddings([[1.0, 0.0]]))


class TestLabelRates:
    def test_paper_default_counts(self):
        assert LabelRates(0.35, 0.35).counts(28) == (10, 9)

    def test_rejects_overlap(self):
        with pytest.raises(ParameterError):
            LabelRates(0.9, 0.9).counts(10)

    def test_rejects_out_of_range(self):
        with pytest.raises(ParameterError):
            LabelRates(0.0, 0.35)


class TestGeneratePseudoLabels:
    def test_sort_oracle_row(self):
        labels = generate_pseudo_labels(
            np.array([[0.9, 0.5, 0.2, 0.7]]), LabelRates(0.25, 0.25)
        ).labels
        np.testing.assert_array_equal(labels[0], [POSITIVE, IGNORE, NEGATIVE, IGNORE])

    def test_constant_row_tie_break(self):
        labels = generate_pseudo_labels(np.zeros((1, 5)), LabelRates(0.4, 0.4)).labels
        np.testing.assert_array_equal(
            labels[0], [POSITIVE, POSITIVE, IGNORE, NEGATIVE, NEGATIVE]
        )

    @given(st.integers(0, 10_000))
    def test_counts_exact_per_row(self, seed):
        rng = np.random.default_rng(seed)
        t, tc = int(rng.integers(1, 8)), int(rng.integers(3, 30))
        r_t, r_b = float(rng.uniform(0.05, 0.4)), float(rng.uniform(0.05, 0.4))
        rates = LabelRates(r_t, r_b)
        npos, nneg = rates.counts(tc)
        labels = generate_pseudo_labels(rng.standard_normal((t, tc)), rates).labels
        np.testing.assert_array_equal((labels == POSITIVE).sum(axis=1), npos)
        np.testing.assert_array_equal((labels == NEGATIVE).sum(axis=1), nneg)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        emb = rng.standard_normal((5, 7))
        a, b = FrameEmbeddings(emb), FrameEmbeddings(rng.standard_normal((6, 7)))
        rates = LabelRates(0.3, 0.3)
        before = generate_pseudo_labels(teacher_frame_similarity(a, b), rates).labels
        scaled = FrameEmbeddings(emb * 3.7)
        after = generate_pseudo_labels(teacher_frame_similarity(scaled, b), rates).labels
        np.testing.assert_array_equal(before, after)

    def test_determinism(self):
        rng = np.random.default_rng(2)
        sim = rng.standard_normal((6, 9))
        rates = LabelRates(0.3, 0.3)
        a = generate_pseudo_labels(sim, rates).labels
        b = generate_pseudo_labels(sim.copy(), rates).labels
        np.testing.assert_array_equal(a, b)

    def test_planted_precision_is_total_below_overlap(self):
        for overlap in (0.3, 0.5):
            sim, mask = planted_correspondence_matrix(12, 20, overlap, seed=5)
            for r_t in (0.1, 0.2, overlap):
                labels = generate_pseudo_labels(sim, LabelRates(r_t, 0.2)).labels
                predicted = labels == POSITIVE
                assert predicted.sum() > 0
                assert np.all(mask[predicted]), "a pseudo-positive fell outside the planted set"


class TestFrameQueryContexts:
    def test_index_mapping(self):
        labels = generate_pseudo_labels(np.array([[0.9, 0.5, 0.2, 0.7]]), LabelRates(0.25, 0.25))
        contexts = frame_query_contexts(np.array([[0.1, 0.2, 0.3, 0.4]]), labels)
        np.testing.assert_array_equal(contexts[0].positives, [0.1])
        np.testing.assert_array_equal(contexts[0].negatives, [0.3])

    def test_all_ignore_row_yields_empty_context(self):
        labels = PseudoLabelMatrix(np.zeros((1, 4), dtype=np.int8))
        contexts = frame_query_contexts(np.ones((1, 4)), labels)
        assert contexts[0].num_positives == 0

    def test_student_equals_teacher_gives_zero_risk(self):
        rng = np.random.default_rng(3)
        sim = rng.standard_normal((5, 11))
        labels = generate_pseudo_labels(sim, LabelRates(0.3, 0.3))
        for ctx in frame_query_contexts(sim, labels):
            assert heaviside_ap_risk(ctx) == 0.0

    def test_shape_mismatch(self):
        labels = PseudoLabelMatrix(np.zeros((2, 3), dtype=np.int8))
        with pytest.raises(StructuralError):
            frame_query_contexts(np.zeros((2, 4)), labels)
