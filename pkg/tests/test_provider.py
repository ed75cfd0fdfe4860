import hashlib
import json
import math

import httpx
import pytest

from huhbutton.provider import (
    BackendError,
    Exhausted,
    MockProvider,
    ProviderRequest,
    ProviderResponse,
    RateLimited,
    RemoteProvider,
    RetryPolicy,
    Timeout,
    TokenUsage,
    UsageMissing,
    complete_with_retry,
    mock_punctuate,
)


class TestTokenUsage:
    def test_addition_and_total(self):
        a = TokenUsage(10, 5)
        b = TokenUsage(1, 2)
        assert a + b == TokenUsage(11, 7)
        assert (a + b).total_tokens == 18

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TokenUsage(-1, 0)


class TestProviderRequest:
    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            ProviderRequest(prompt="")

    def test_nonpositive_budget_rejected(self):
        with pytest.raises(ValueError):
            ProviderRequest(prompt="x", max_output_tokens=0)


class TestMockProvider:
    def test_determinism_and_usage_formula(self):
        req = ProviderRequest(
            prompt="Explain: One thing. Another thing.", request_tag="v/3/1"
        )
        first = MockProvider().complete(req)
        second = MockProvider().complete(req)
        assert first == second
        assert first.usage == TokenUsage(math.ceil(len(req.prompt) / 4), 48)

    def test_text_shape(self):
        prompt = "Explain: One thing. Another thing."
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8]
        response = MockProvider().complete(
            ProviderRequest(prompt=prompt, request_tag="v/3/2")
        )
        assert response.text == f"MOCK-EXPLAIN[2|sha={digest}]: Another thing."

    def test_distinct_prompts_distinct_texts(self):
        r1 = MockProvider().complete(ProviderRequest("Explain: A.", request_tag="v/0/1"))
        r2 = MockProvider().complete(ProviderRequest("Explain: B.", request_tag="v/0/1"))
        assert r1.text != r2.text

    def test_punctuation_tag(self):
        response = MockProvider().complete(
            ProviderRequest(
                prompt="Fix this: one two three", request_tag="v/full/punctuation"
            )
        )
        assert response.text == mock_punctuate("one two three")

    def test_mock_punctuate_word_preserving(self):
        text = " ".join(f"word{i}" for i in range(25))
        out = mock_punctuate(text)
        assert [w.rstrip(".").lower() for w in out.split()] == text.split()
        # a stop lands after every tenth word and at the end
        assert out.split()[9].endswith(".")
        assert out.split()[19].endswith(".")
        assert out.endswith(".")


class ScriptedProvider:
    """Raises the scripted errors in order, then answers successfully."""

    model_name = "scripted"

    def __init__(self, errors):
        self.errors = list(errors)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.errors:
            raise self.errors.pop(0)
        return ProviderResponse("ok", TokenUsage(1, 1), 0)


class TestRetry:
    def test_two_rate_limits_then_success(self):
        provider = ScriptedProvider([RateLimited("slow down"), RateLimited("again")])
        sleeps = []
        result = complete_with_retry(
            provider,
            ProviderRequest("p"),
            RetryPolicy(jitter=0.0),
            sleep=sleeps.append,
            rng=lambda: 0.0,
        )
        assert result.attempts == 3
        assert provider.calls == 3
        assert result.response.text == "ok"
        assert sleeps == [0.5, 1.0]  # 500 ms base, doubling

    def test_backend_400_terminal(self):
        provider = ScriptedProvider([BackendError(400, "bad request")])
        with pytest.raises(BackendError):
            complete_with_retry(provider, ProviderRequest("p"), sleep=lambda s: None)
        assert provider.calls == 1

    def test_exhausted_after_max_timeouts(self):
        provider = ScriptedProvider([Timeout("t1"), Timeout("t2"), Timeout("t3"), Timeout("t4")])
        with pytest.raises(Exhausted) as err:
            complete_with_retry(
                provider,
                ProviderRequest("p"),
                RetryPolicy(max_attempts=4, jitter=0.0),
                sleep=lambda s: None,
                rng=lambda: 0.0,
            )
        assert provider.calls == 4
        assert err.value.attempts == 4
        assert isinstance(err.value.last_error, Timeout)

    def test_retry_after_hint_honored(self):
        provider = ScriptedProvider([RateLimited("wait", retry_after_s=3.0)])
        sleeps = []
        complete_with_retry(
            provider,
            ProviderRequest("p"),
            RetryPolicy(jitter=0.0),
            sleep=sleeps.append,
            rng=lambda: 0.0,
        )
        assert sleeps == [3.0]

    def test_backoff_capped(self):
        provider = ScriptedProvider([Timeout("t")] * 6)
        sleeps = []
        with pytest.raises(Exhausted):
            complete_with_retry(
                provider,
                ProviderRequest("p"),
                RetryPolicy(max_attempts=6, backoff_base_ms=4000,
                            max_backoff_ms=8000, jitter=0.0),
                sleep=sleeps.append,
                rng=lambda: 0.0,
            )
        assert sleeps == [4.0, 8.0, 8.0, 8.0, 8.0]


def _remote(handler, **kwargs) -> RemoteProvider:
    return RemoteProvider(
        "https://llm.example/v1",
        "test-model",
        "secret-key",
        transport=httpx.MockTransport(handler),
        **kwargs,
    )


class TestRemoteProvider:
    def test_wire_shape_and_parsing(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["url"] = str(request.url)
            seen["auth"] = request.headers.get("Authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(
                200,
                json={
                    "choices": [{"message": {"role": "assistant", "content": "Answer."}}],
                    "usage": {"prompt_tokens": 12, "completion_tokens": 7},
                },
            )

        provider = _remote(handler)
        response = provider.complete(
            ProviderRequest("Explain: X.", max_output_tokens=99, temperature=0.5)
        )
        provider.close()
        assert seen["url"] == "https://llm.example/v1/chat/completions"
        assert seen["auth"] == "Bearer secret-key"
        assert seen["body"] == {
            "model": "test-model",
            "messages": [{"role": "user", "content": "Explain: X."}],
            "temperature": 0.5,
            "max_tokens": 99,
        }
        assert response.text == "Answer."
        assert response.usage == TokenUsage(12, 7)
        assert response.latency_ms >= 0

    def test_429_maps_to_rate_limited_with_hint(self):
        def handler(request):
            return httpx.Response(429, headers={"Retry-After": "17"}, json={})

        provider = _remote(handler)
        with pytest.raises(RateLimited) as err:
            provider.complete(ProviderRequest("p"))
        provider.close()
        assert err.value.retry_after_s == 17.0

    def test_500_maps_to_backend_error(self):
        def handler(request):
            return httpx.Response(500, text="backend exploded " + "x" * 500)

        provider = _remote(handler)
        with pytest.raises(BackendError) as err:
            provider.complete(ProviderRequest("p"))
        provider.close()
        assert err.value.status == 500
        assert len(err.value.body_excerpt) <= 200

    def test_missing_usage_rejected(self):
        def handler(request):
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "hi"}}]}
            )

        provider = _remote(handler)
        with pytest.raises(UsageMissing):
            provider.complete(ProviderRequest("p"))
        provider.close()

    def test_timeout_mapped(self):
        def handler(request):
            raise httpx.ConnectTimeout("no answer")

        provider = _remote(handler)
        with pytest.raises(Timeout):
            provider.complete(ProviderRequest("p"))
        provider.close()

    def test_no_auth_header_without_key(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("Authorization")
            return httpx.Response(
                200,
                json={
                    "choices": [{"message": {"content": "ok"}}],
                    "usage": {"prompt_tokens": 1, "completion_tokens": 1},
                },
            )

        provider = RemoteProvider(
            "https://llm.example", "m", transport=httpx.MockTransport(handler)
        )
        provider.complete(ProviderRequest("p"))
        provider.close()
        assert seen["auth"] is None

    def test_from_env(self):
        env = {
            "HUH_API_BASE_URL": "https://llm.example",
            "HUH_MODEL": "big-model",
            "HUH_API_KEY": "k",
        }
        provider = RemoteProvider.from_env(env)
        assert provider.model_name == "big-model"
        provider.close()

    def test_from_env_missing_vars(self):
        with pytest.raises(ValueError):
            RemoteProvider.from_env({"HUH_MODEL": "m"})
