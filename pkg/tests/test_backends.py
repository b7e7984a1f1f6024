"""Backend stubs and HTTP client behavior."""

from __future__ import annotations

import random
import string

import pytest

from secrag.backends import (
    BackendConfig,
    BackendError,
    MappedEmbedder,
    ScriptedJudge,
    StubEmbedder,
    StubGenerator,
    StubNer,
    StubQuestionGenerator,
    embed,
    extract_entities_backend,
    generate_answer,
    generate_questions,
    judge,
    make_client,
)

EMB_CFG = BackendConfig(backend_id="alpha", kind="embedder")


class TestStubEmbedder:
    def test_same_text_same_vector(self):
        v1, v2 = embed(EMB_CFG, ["abc", "abc"])
        assert v1 == v2

    def test_unit_norm(self):
        (v,) = embed(EMB_CFG, ["abc"])
        assert abs(v.norm - 1.0) <= 1e-6
        assert v.dim == 64

    def test_distinct_texts_differ(self):
        v1, v2 = embed(EMB_CFG, ["abc", "abd"])
        assert v1 != v2

    def test_determinism_across_instances(self):
        a = StubEmbedder().embed(["query"])[0]
        b = StubEmbedder().embed(["query"])[0]
        assert a == b

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            embed(EMB_CFG, [])

    def test_call_counter(self):
        client = StubEmbedder()
        client.embed(["a"])
        client.embed(["b", "c"])
        assert client.calls == 2


class TestMappedEmbedder:
    def test_scripted_vectors_and_fallback(self):
        client = MappedEmbedder({"x": [1.0, 0.0], "y": [0.0, 1.0]})
        vx, vy = client.embed(["x", "y"])
        assert vx.tolist() == [1.0, 0.0]
        assert vy.tolist() == [0.0, 1.0]
        (other,) = client.embed(["unmapped"])
        assert other.dim == 2


class TestStubQuestionGenerator:
    def test_sentences_become_questions(self):
        qs = generate_questions(
            BackendConfig(backend_id="qg", kind="question_gen"), "A. B. C.", 7
        )
        assert qs == ["A?", "B?", "C?"]

    def test_target_count_one(self):
        client = StubQuestionGenerator()
        assert client.generate("First point. Second point.", 1) == ["First point?"]

    def test_determinism(self):
        client = StubQuestionGenerator()
        text = "Malware persists via registry keys. It hides in svchost."
        assert client.generate(text, 7) == client.generate(text, 7)

    def test_empty_chunk_errors(self):
        client = StubQuestionGenerator()
        with pytest.raises(BackendError):
            client.generate("   ", 3)


class TestStubNer:
    def test_object_entity(self):
        ents = extract_entities_backend(
            BackendConfig(backend_id="ner", kind="ner"), "Mimikatz dumps credentials"
        )
        assert [(e.surface, e.label) for e in ents] == [("Mimikatz", "OBJ_CON")]

    def test_no_entities_in_stopword_text(self):
        client = StubNer()
        assert client.extract("the and of") == []

    def test_person_name_list(self):
        client = StubNer(person_names=("Conti",))
        ents = client.extract("Who is Conti?")
        assert [(e.surface, e.label) for e in ents] == [("Conti", "PER")]

    def test_leading_interrogative_stripped(self):
        client = StubNer()
        ents = client.extract("What is Mimikatz?")
        assert [(e.surface, e.label) for e in ents] == [("Mimikatz", "OBJ_CON")]
        start, end = ents[0].span
        assert "What is Mimikatz?"[start:end] == "Mimikatz"

    def test_multi_token_span(self):
        client = StubNer()
        ents = client.extract("Researchers analysed Cobalt Strike beacons")
        surfaces = {e.surface for e in ents}
        assert "Cobalt Strike" in surfaces

    def test_dedup_by_surface_and_label(self):
        client = StubNer()
        ents = client.extract("Mimikatz again. Mimikatz forever.")
        assert len([e for e in ents if e.surface == "Mimikatz"]) == 1

    def test_spans_within_bounds_on_random_text(self):
        rng = random.Random(5)
        client = StubNer()
        alphabet = string.ascii_letters + "  .?"
        for _ in range(200):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 80)))
            for ent in client.extract(text):
                start, end = ent.span
                assert 0 <= start < end <= len(text)
                assert text[start:end] == ent.surface


class TestStubGenerator:
    PROMPT = (
        "Use the context to answer.\n\n"
        "### [code] metasploit score=0.9\n"
        "X is Y\n"
        "\n"
        "### [info] mitre score=0.8\n"
        "Z holds W\n"
        "\n"
        "QUESTION: What is X?\n"
    )

    def test_echoes_first_segment_and_question(self):
        answer = generate_answer(
            BackendConfig(backend_id="gen", kind="generator"), self.PROMPT
        )
        assert "X is Y" in answer
        assert "What is X?" in answer
        assert "Z holds W" not in answer

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            generate_answer(BackendConfig(backend_id="gen", kind="generator"), "")

    def test_determinism(self):
        client = StubGenerator()
        assert client.generate(self.PROMPT) == client.generate(self.PROMPT)


class TestScriptedJudge:
    def test_replays_script(self):
        client = ScriptedJudge(["[A]", "Feedback: ok [RESULT] 4"])
        assert client.judge("p") == "[A]"
        assert client.judge("p") == "Feedback: ok [RESULT] 4"
        with pytest.raises(BackendError):
            client.judge("p")

    def test_config_script(self):
        cfg = BackendConfig(
            backend_id="j", kind="judge", options={"script": ("[B]",)}
        )
        assert judge(make_client(cfg), "prompt") == "[B]"


class TestHttpErrorPath:
    def test_unreachable_endpoint_errors_after_retries(self):
        cfg = BackendConfig(
            backend_id="remote-emb",
            kind="embedder",
            endpoint="http://127.0.0.1:1/v1/embed",  # nothing listens here
            timeout_ms=200,
            max_retries=2,
        )
        client = make_client(cfg)
        with pytest.raises(BackendError) as err:
            client.embed(["text"])
        assert err.value.backend_id == "remote-emb"
        assert "2 attempts" in str(err.value)

    def test_env_var_overrides_endpoint(self, monkeypatch):
        cfg = BackendConfig(backend_id="alpha", kind="embedder", endpoint="stub")
        monkeypatch.setenv("MORSE_BACKEND_ALPHA_URL", "http://example.invalid")
        assert cfg.resolved_endpoint() == "http://example.invalid"
        assert not cfg.is_stub
        monkeypatch.delenv("MORSE_BACKEND_ALPHA_URL")
        assert cfg.is_stub

    def test_kind_mismatch_rejected(self):
        with pytest.raises(ValueError):
            embed(BackendConfig(backend_id="g", kind="generator"), ["x"])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            BackendConfig(backend_id="x", kind="mystery")
