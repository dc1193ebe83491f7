"""Translation backends, ensemble routing, and candidate generation."""
from __future__ import annotations

import httpx
import pytest

from polycap.corpus import DatasetManifest
from polycap.errors import (
    BackendError,
    BackendUnavailableError,
    StageOrderError,
    UnsupportedPairError,
)
from polycap.mt import (
    EnsembleRegistry,
    LocalModelMTBackend,
    MockMTBackend,
    RemoteMTBackend,
    backtranslate,
    generate_candidates,
    mt_backend_from_config,
    translate,
    version_with_decode,
)

from conftest import CLOCK, make_record


def mock_registry(**kwargs) -> EnsembleRegistry:
    backends = {
        "mock-a": MockMTBackend(
            backend_id="mock-a", languages=frozenset({"yor", "hau"}), **kwargs
        ),
        "mock-b": MockMTBackend(
            backend_id="mock-b", languages=frozenset({"yor"}), marker="b"
        ),
    }
    return EnsembleRegistry(
        backends=backends,
        routing={"yor": ("mock-a", "mock-b"), "hau": ("mock-a",)},
    )


class TestMockBackend:
    def test_translate_wraps_in_envelope(self):
        backend = MockMTBackend(languages=frozenset({"yor"}))
        assert translate("a dog runs", "yor", backend) == "yor⟨a dog runs⟩"

    def test_marker_suffix(self):
        backend = MockMTBackend(languages=frozenset({"yor"}), marker="b")
        assert translate("a dog runs", "yor", backend) == "yor⟨a dog runs⟩~b"

    def test_backtranslate_inverts(self):
        backend = MockMTBackend(languages=frozenset({"yor"}), marker="b")
        wrapped = translate("a dog runs", "yor", backend)
        assert backtranslate(wrapped, "yor", backend) == "a dog runs"

    def test_roundtrip_identity_for_many_texts(self):
        backend = MockMTBackend(languages=frozenset({"hau"}))
        for text in ("x", "two words", "with ⟨brackets⟩ inside", "multi\nline"):
            assert backtranslate(translate(text, "hau", backend), "hau", backend) == text

    def test_backtranslate_rejects_foreign_envelope(self):
        backend = MockMTBackend(languages=frozenset({"yor", "hau"}))
        with pytest.raises(BackendError, match="envelope"):
            backtranslate("hau⟨text⟩", "yor", backend)

    def test_unsupported_language_rejected(self):
        backend = MockMTBackend(languages=frozenset({"yor"}))
        with pytest.raises(UnsupportedPairError):
            translate("text", "hau", backend)

    def test_empty_text_rejected(self):
        backend = MockMTBackend(languages=frozenset({"yor"}))
        with pytest.raises(BackendError, match="non-empty"):
            translate("", "yor", backend)

    def test_injected_failure(self):
        backend = MockMTBackend(
            languages=frozenset({"yor"}), fail_texts=frozenset({"boom"})
        )
        with pytest.raises(BackendError, match="injected failure"):
            translate("boom", "yor", backend)


class TestVersioning:
    def test_decode_params_fold_into_version(self):
        base = version_with_decode("v2", None)
        beamy = version_with_decode("v2", {"num_beams": 5})
        greedy = version_with_decode("v2", {"num_beams": 1})
        assert base == "v2"
        assert beamy != greedy
        assert beamy.startswith("v2+")

    def test_param_order_does_not_matter(self):
        a = version_with_decode("v2", {"a": 1, "b": 2})
        b = version_with_decode("v2", {"b": 2, "a": 1})
        assert a == b


class TestRemoteBackend:
    def _backend(self, handler, sleeps=None, **kwargs):
        recorded = [] if sleeps is None else sleeps
        return RemoteMTBackend(
            backend_id="remote-test",
            endpoint="http://mt.test/translate",
            languages=["yor"],
            transport=httpx.MockTransport(handler),
            sleep=recorded.append,
            **kwargs,
        )

    def test_wire_contract(self):
        def handler(request):
            body = request.read().decode()
            assert '"source":"eng"' in body.replace(" ", "")
            return httpx.Response(200, json={"translation": "yoruba text"})

        backend = self._backend(handler)
        assert translate("a dog", "yor", backend) == "yoruba text"

    def test_retries_transient_then_succeeds(self):
        calls = {"n": 0}
        sleeps: list[float] = []

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(500, text="busy")
            return httpx.Response(200, json={"translation": "ok"})

        backend = self._backend(handler, sleeps=sleeps)
        assert backend.translate_text("x", "eng", "yor") == "ok"
        assert calls["n"] == 3
        assert sleeps == [0.2, 0.4]  # exponential backoff between attempts

    def test_gives_up_after_three_attempts(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(500, text="busy")

        backend = self._backend(handler)
        with pytest.raises(BackendError) as info:
            backend.translate_text("x", "eng", "yor")
        assert calls["n"] == 3
        assert info.value.retryable

    def test_permanent_rejection_fails_immediately(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(403, text="denied")

        backend = self._backend(handler)
        with pytest.raises(BackendError, match="rejected"):
            backend.translate_text("x", "eng", "yor")
        assert calls["n"] == 1

    def test_missing_token_env_fails(self, monkeypatch):
        monkeypatch.delenv("MT_TOKEN", raising=False)
        backend = self._backend(
            lambda req: httpx.Response(200, json={"translation": "t"}),
            token_env="MT_TOKEN",
        )
        with pytest.raises(BackendUnavailableError, match="MT_TOKEN"):
            backend.translate_text("x", "eng", "yor")


class TestLocalBackend:
    def test_injected_generator(self):
        backend = LocalModelMTBackend(
            backend_id="local-test",
            model_path="ckpt-v1",
            languages=["yor"],
            decode_params={"num_beams": 4},
            generate=lambda text, src, tgt: f"{tgt}:{text}",
        )
        assert translate("a dog", "yor", backend) == "yor:a dog"
        assert backend.backend_version.startswith("ckpt-v1+")

    def test_missing_checkpoint_is_unavailable(self, monkeypatch):
        import sys

        # Block the lazy import so the test exercises the error path fast.
        monkeypatch.setitem(sys.modules, "transformers", None)
        backend = LocalModelMTBackend(
            backend_id="local-test",
            model_path="/nonexistent/model",
            languages=["yor"],
        )
        with pytest.raises(BackendUnavailableError):
            backend.translate_text("x", "eng", "yor")

    def test_batch_translation_chunks(self):
        seen: list[str] = []
        backend = LocalModelMTBackend(
            backend_id="local-test",
            model_path="ckpt",
            languages=["yor"],
            batch_size=2,
            generate=lambda text, src, tgt: seen.append(text) or text.upper(),
        )
        out = backend.translate_batch(["a", "b", "c"], "eng", "yor")
        assert out == ["A", "B", "C"]
        assert seen == ["a", "b", "c"]


class TestEnsembleRegistry:
    def test_routing_validated(self):
        with pytest.raises(BackendUnavailableError, match="unknown backend"):
            EnsembleRegistry(
                backends={}, routing={"yor": ("ghost",)}
            )

    def test_empty_routing_list_rejected(self):
        with pytest.raises(BackendUnavailableError, match="no backend"):
            EnsembleRegistry(backends={}, routing={"yor": ()})

    def test_unsupported_pair_rejected(self):
        backend = MockMTBackend(backend_id="mock-a", languages=frozenset({"hau"}))
        with pytest.raises(UnsupportedPairError):
            EnsembleRegistry(
                backends={"mock-a": backend}, routing={"yor": ("mock-a",)}
            )

    def test_routed_order_preserved(self):
        registry = mock_registry()
        assert [b.backend_id for b in registry.routed("yor")] == ["mock-a", "mock-b"]

    def test_from_config(self):
        registry = EnsembleRegistry.from_config(
            {
                "backends": [
                    {"kind": "mock", "backend_id": "m1", "languages": ["yor"]},
                ],
                "routing": {"yor": ["m1"]},
            }
        )
        assert registry.languages() == ("yor",)

    def test_unknown_kind_rejected(self):
        with pytest.raises(BackendUnavailableError, match="unknown MT backend"):
            mt_backend_from_config({"kind": "telepathy"})


class TestGenerateCandidates:
    def _manifest(self, n=3) -> DatasetManifest:
        return DatasetManifest(
            records=tuple(make_record(i, selected=True) for i in range(n))
        )

    def test_one_candidate_per_routed_backend(self):
        batch = generate_candidates(
            self._manifest(2), mock_registry(), clock=lambda: CLOCK
        )
        # 2 images x (yor: 2 backends + hau: 1 backend) = 6 candidates.
        assert len(batch.candidates) == 6
        assert not batch.failures
        keys = {(c.image_id, c.language, c.backend_id) for c in batch.candidates}
        assert ("img0", "yor", "mock-a") in keys
        assert ("img0", "yor", "mock-b") in keys
        assert ("img0", "hau", "mock-a") in keys

    def test_requires_selection_first(self, two_image_manifest):
        with pytest.raises(StageOrderError, match="selection"):
            generate_candidates(two_image_manifest, mock_registry())

    def test_language_subset(self):
        batch = generate_candidates(
            self._manifest(2), mock_registry(), languages=["hau"], clock=lambda: CLOCK
        )
        assert {c.language for c in batch.candidates} == {"hau"}
        assert len(batch.candidates) == 2

    def test_failure_on_one_image_keeps_the_rest(self):
        manifest = self._manifest(3)
        poison = manifest.records[1].selected_caption
        backends = {
            "mock-a": MockMTBackend(
                backend_id="mock-a",
                languages=frozenset({"yor"}),
                fail_texts=frozenset({poison}),
            )
        }
        registry = EnsembleRegistry(backends=backends, routing={"yor": ("mock-a",)})
        batch = generate_candidates(manifest, registry, clock=lambda: CLOCK)
        assert len(batch.candidates) == 2
        assert len(batch.failures) == 1
        failure = batch.failures[0]
        assert failure.image_id == "img1"
        assert failure.backend_id == "mock-a"
        assert not failure.retryable

    def test_deterministic_ordering(self):
        a = generate_candidates(self._manifest(3), mock_registry(), clock=lambda: CLOCK)
        b = generate_candidates(
            self._manifest(3), mock_registry(), max_workers=1, clock=lambda: CLOCK
        )
        assert a.candidates == b.candidates

    def test_skips_versions_already_in_manifest(self):
        from polycap.arbitration import arbitrate_all, score_all
        from polycap.embedding import MockMultilingualBackend

        manifest = self._manifest(2)
        registry = mock_registry()
        batch = generate_candidates(manifest, registry, clock=lambda: CLOCK)
        scored = score_all(manifest, batch.candidates, MockMultilingualBackend())
        manifest = arbitrate_all(manifest, scored.scored)
        again = generate_candidates(manifest, registry, clock=lambda: CLOCK)
        assert again.candidates == []
        assert again.skipped == 6

    def test_clock_stamps_candidates(self):
        batch = generate_candidates(
            self._manifest(1), mock_registry(), clock=lambda: "2030-05-05T05:05:05Z"
        )
        assert {c.created_at for c in batch.candidates} == {"2030-05-05T05:05:05Z"}
