"""Scoring, retention arbitration, substitution, and interval filtering."""
from __future__ import annotations

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polycap.arbitration import (
    apply_filter,
    arbitrate,
    arbitrate_all,
    maybe_substitute,
    score_all,
    score_candidate,
)
from polycap.corpus import DatasetManifest, FilterPolicy
from polycap.embedding import (
    MockEmbeddingBackend,
    MockMultilingualBackend,
    StaticEmbeddingBackend,
)
from polycap.errors import InvariantError

from conftest import make_candidate, make_entry, make_record


class TestScoreCandidate:
    def test_identical_text_scores_one(self):
        backend = MockMultilingualBackend()
        candidate = make_candidate(text="a dog runs")
        scored = score_candidate("a dog runs", candidate, backend)
        assert scored.score == pytest.approx(1.0, abs=1e-12)
        assert scored.scored_with == backend.backend_id

    def test_orthogonal_vectors_score_zero(self):
        backend = StaticEmbeddingBackend(
            vectors={"src": [1.0, 0.0], "tgt": [0.0, 1.0]}
        )
        scored = score_candidate("src", make_candidate(text="tgt"), backend)
        assert scored.score == 0.0

    def test_hand_cosine_value(self):
        backend = StaticEmbeddingBackend(
            vectors={"src": [1.0, 1.0], "tgt": [1.0, 0.0]}
        )
        scored = score_candidate("src", make_candidate(text="tgt"), backend)
        assert scored.score == pytest.approx(0.70710678, abs=1e-8)

    def test_monolingual_backend_rejected(self):
        with pytest.raises(InvariantError, match="not multilingual"):
            score_candidate("src", make_candidate(), MockEmbeddingBackend())

    def test_already_scored_needs_recompute_flag(self):
        backend = MockMultilingualBackend()
        candidate = make_candidate(text="a dog runs", score=0.7)
        with pytest.raises(InvariantError, match="recompute"):
            score_candidate("a dog runs", candidate, backend)
        rescored = score_candidate("a dog runs", candidate, backend, recompute=True)
        assert rescored.score == pytest.approx(1.0, abs=1e-12)

    def test_envelope_scores_inside_filter_interval(self):
        backend = MockMultilingualBackend()
        policy = FilterPolicy()
        source = "a brown dog runs outside"
        for language in ("yor", "hau", "ibo"):
            candidate = make_candidate(language=language, text=f"{language}⟨{source}⟩")
            scored = score_candidate(source, candidate, backend)
            assert policy.keeps(scored.score)


class TestScoreAll:
    def test_scores_batch_and_passthrough(self):
        manifest = DatasetManifest(records=(make_record(0, selected=True),))
        source = manifest.records[0].selected_caption
        fresh = make_candidate(text=f"yor⟨{source}⟩")
        done = make_candidate(language="hau", text=f"hau⟨{source}⟩", score=0.6)
        batch = score_all(manifest, [fresh, done], MockMultilingualBackend())
        assert len(batch.scored) == 2
        assert batch.skipped == 1
        assert all(c.score is not None for c in batch.scored)

    def test_unknown_image_is_a_failure(self):
        manifest = DatasetManifest(records=(make_record(0, selected=True),))
        stray = make_candidate(image_id="img9")
        batch = score_all(manifest, [stray], MockMultilingualBackend())
        assert not [c for c in batch.scored if c.image_id == "img9"]
        assert len(batch.failures) == 1
        assert "unknown image" in batch.failures[0].error

    def test_deterministic_order(self):
        manifest = DatasetManifest(
            records=tuple(make_record(i, selected=True) for i in range(4))
        )
        cands = [
            make_candidate(image_id=f"img{i}", text=f"yor⟨t{i}⟩") for i in range(4)
        ]
        a = score_all(manifest, list(reversed(cands)), MockMultilingualBackend())
        b = score_all(manifest, cands, MockMultilingualBackend(), max_workers=1)
        assert a.scored == b.scored


class TestArbitrate:
    def test_highest_score_wins(self):
        low = make_candidate(backend_id="mock-a", score=0.6)
        high = make_candidate(backend_id="mock-b", score=0.7)
        entry = arbitrate([low, high])
        assert entry.current == high
        assert entry.history == (low,)

    def test_single_candidate(self):
        only = make_candidate(score=0.55)
        entry = arbitrate([only])
        assert entry.current == only
        assert entry.history == ()

    def test_tie_breaks_to_earlier_timestamp(self):
        early = make_candidate(
            backend_id="mock-b", score=0.6, created_at="2024-01-01T00:00:00Z"
        )
        late = make_candidate(
            backend_id="mock-a", score=0.6, created_at="2024-01-02T00:00:00Z"
        )
        assert arbitrate([late, early]).current == early

    def test_tie_breaks_to_lexicographic_backend(self):
        a = make_candidate(backend_id="a", score=0.6)
        b = make_candidate(backend_id="b", score=0.6)
        assert arbitrate([b, a]).current == a

    def test_all_unscored_rejected(self):
        with pytest.raises(InvariantError, match="no scored candidate"):
            arbitrate([make_candidate(), make_candidate(backend_id="mock-b")])

    def test_mixed_keys_rejected(self):
        with pytest.raises(InvariantError, match="multiple keys"):
            arbitrate([
                make_candidate(score=0.6),
                make_candidate(image_id="img1", score=0.7),
            ])

    def test_filtered_flag_follows_policy(self):
        entry = arbitrate([make_candidate(score=0.3)])
        assert entry.filtered_out
        entry = arbitrate([make_candidate(score=0.7)])
        assert not entry.filtered_out


class TestMaybeSubstitute:
    def test_strict_improvement_substitutes(self):
        entry = make_entry(score=0.60)
        newer = make_candidate(backend_id="mock-b", score=0.70)
        updated = maybe_substitute(entry, newer)
        assert updated.current == newer
        assert entry.current in updated.history

    def test_lower_score_appends_to_history(self):
        entry = make_entry(score=0.60)
        worse = make_candidate(backend_id="mock-b", score=0.55)
        updated = maybe_substitute(entry, worse)
        assert updated.current == entry.current
        assert worse in updated.history

    def test_equal_score_does_not_substitute(self):
        entry = make_entry(score=0.60)
        peer = make_candidate(backend_id="mock-b", score=0.60)
        updated = maybe_substitute(entry, peer)
        assert updated.current == entry.current
        assert peer in updated.history

    def test_key_mismatch_rejected(self):
        with pytest.raises(InvariantError, match="does not match"):
            maybe_substitute(make_entry(), make_candidate(image_id="img9", score=0.9))

    def test_unscored_candidate_rejected(self):
        with pytest.raises(InvariantError, match="unscored"):
            maybe_substitute(make_entry(), make_candidate())

    def test_filtered_flag_recomputed(self):
        entry = make_entry(score=0.40, filtered_out=True)
        better = make_candidate(backend_id="mock-b", score=0.70)
        updated = maybe_substitute(entry, better)
        assert not updated.filtered_out
        overshoot = make_candidate(backend_id="mock-c", score=0.99)
        assert maybe_substitute(updated, overshoot).filtered_out

    def test_idempotent_offer_changes_only_history(self):
        entry = make_entry(score=0.60)
        seen = replace(entry.current, backend_id="mock-b")
        once = maybe_substitute(entry, seen)
        twice = maybe_substitute(once, seen)
        assert twice.current == once.current
        assert len(twice.history) == len(once.history) + 1


def candidate_sequence(scores, key=("img0", "yor")):
    image_id, language = key
    return [
        make_candidate(
            image_id=image_id,
            language=language,
            text=f"{language}⟨v{i}⟩",
            backend_id=f"b{i:03d}",
            score=score,
        )
        for i, score in enumerate(scores)
    ]


class TestMonotoneRetention:
    @given(
        st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            min_size=1,
            max_size=12,
        )
    )
    @settings(max_examples=80, deadline=None)
    def test_final_score_is_sequence_max(self, scores):
        candidates = candidate_sequence(scores)
        entry = arbitrate([candidates[0]])
        for candidate in candidates[1:]:
            entry = maybe_substitute(entry, candidate)
        assert entry.current.score == max(scores)
        assert len(entry.history) == len(scores) - 1

    @given(
        st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            min_size=2,
            max_size=10,
            unique=True,
        ),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_distinct_scores_order_independent(self, scores, rng):
        candidates = candidate_sequence(scores)
        shuffled = list(candidates)
        rng.shuffle(shuffled)

        def fold(seq):
            entry = arbitrate([seq[0]])
            for candidate in seq[1:]:
                entry = maybe_substitute(entry, candidate)
            return entry

        a, b = fold(candidates), fold(shuffled)
        assert a.current == b.current
        assert set(a.history) == set(b.history)


class TestApplyFilter:
    def _manifest_with_scores(self, scores):
        records = tuple(make_record(i) for i in range(len(scores)))
        entries = {}
        for i, score in enumerate(scores):
            entry = make_entry(image_id=f"img{i}", score=score) if score is not None else None
            if entry is None:
                cand = make_candidate(image_id=f"img{i}")
                from polycap.corpus import TranslationEntry

                entry = TranslationEntry(
                    image_id=f"img{i}", language="yor", current=cand
                )
            entries[(f"img{i}", "yor")] = entry
        return DatasetManifest(records=records).with_entries(entries)

    def test_boundary_scores(self):
        manifest = self._manifest_with_scores([0.53, 0.98, 0.981, 0.52])
        filtered, report = apply_filter(manifest, FilterPolicy())
        kept = {e.image_id for e in filtered.retained_entries()}
        assert kept == {"img0", "img1"}
        assert report.kept == 2
        assert report.below == 1
        assert report.above == 1

    def test_unscored_counted_and_dropped(self):
        manifest = self._manifest_with_scores([0.7, None])
        filtered, report = apply_filter(manifest, FilterPolicy())
        assert report.unscorable == 1
        assert filtered.entries[("img1", "yor")].filtered_out

    def test_totality(self):
        rng = random.Random(5)
        scores = [rng.random() for _ in range(50)] + [None] * 3
        manifest = self._manifest_with_scores(scores)
        _, report = apply_filter(manifest, FilterPolicy())
        assert report.kept + report.below + report.above + report.unscorable == 53
        assert report.total == 53

    def test_projection(self):
        rng = random.Random(6)
        manifest = self._manifest_with_scores([rng.random() for _ in range(30)])
        once, report_once = apply_filter(manifest, FilterPolicy())
        twice, report_twice = apply_filter(once, FilterPolicy())
        assert once.entries == twice.entries
        assert report_once.kept == report_twice.kept

    def test_above_label_in_report_json(self):
        manifest = self._manifest_with_scores([0.99])
        _, report = apply_filter(manifest, FilterPolicy())
        doc = report.to_json()
        assert doc["above"] == 1
        assert doc["above_label"] == "suspiciously high"

    def test_per_language_counts(self):
        records = (make_record(0), make_record(1))
        manifest = DatasetManifest(records=records).with_entries({
            ("img0", "yor"): make_entry(image_id="img0", score=0.7),
            ("img0", "hau"): make_entry(image_id="img0", language="hau", score=0.2,
                                        filtered_out=True),
            ("img1", "yor"): make_entry(image_id="img1", score=0.99,
                                        filtered_out=True),
        })
        _, report = apply_filter(manifest, FilterPolicy())
        assert report.per_language["yor"] == {
            "kept": 1, "below": 0, "above": 1, "unscorable": 0
        }
        assert report.per_language["hau"]["below"] == 1

    def test_custom_policy_is_recorded(self):
        manifest = self._manifest_with_scores([0.45])
        policy = FilterPolicy(lower=0.4, upper=0.9)
        filtered, report = apply_filter(manifest, policy)
        assert filtered.filter_policy == policy
        assert report.kept == 1
        assert not filtered.entries[("img0", "yor")].filtered_out


class TestArbitrateAll:
    def test_groups_by_key_and_folds(self):
        manifest = DatasetManifest(
            records=(make_record(0, selected=True), make_record(1, selected=True))
        )
        candidates = [
            make_candidate(image_id="img0", backend_id="a", score=0.6),
            make_candidate(image_id="img0", backend_id="b", score=0.8),
            make_candidate(image_id="img1", backend_id="a", score=0.7),
        ]
        result = arbitrate_all(manifest, candidates)
        assert result.entries[("img0", "yor")].current.backend_id == "b"
        assert result.entries[("img1", "yor")].current.backend_id == "a"

    def test_existing_entry_goes_through_substitution(self):
        manifest = DatasetManifest(records=(make_record(0, selected=True),))
        manifest = manifest.with_entry(make_entry(score=0.6))
        newcomer = make_candidate(backend_id="mock-z", score=0.9)
        result = arbitrate_all(manifest, [newcomer])
        entry = result.entries[("img0", "yor")]
        assert entry.current.backend_id == "mock-z"
        assert len(entry.history) == 1

    def test_known_backend_versions_are_skipped(self):
        manifest = DatasetManifest(records=(make_record(0, selected=True),))
        manifest = manifest.with_entry(make_entry(score=0.6))
        duplicate = make_candidate(score=0.9)  # same backend id and version
        result = arbitrate_all(manifest, [duplicate])
        entry = result.entries[("img0", "yor")]
        assert entry.current.score == 0.6
        assert entry.history == ()
