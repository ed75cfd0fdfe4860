import json
import threading

import pytest

from huhbutton.emissions import (
    DEFAULT_FACTOR_KG_PER_TOKEN,
    EmptyReference,
    NonPositiveFactor,
    RunLedger,
    derive_factor,
    estimate,
    format_estimate,
)
from huhbutton.provider import TokenUsage

ENGLISH_RUN = TokenUsage(390962, 37435)
GERMAN_RUN = TokenUsage(531619, 63727)
REFERENCE = [(ENGLISH_RUN, 150.7), (GERMAN_RUN, 209.4)]


class TestEstimate:
    def test_english_reference_run(self):
        est = estimate(ENGLISH_RUN)
        assert est.kg_co2e == pytest.approx(150.7, abs=0.1)
        assert est.total_tokens == 428397

    def test_german_reference_run(self):
        est = estimate(GERMAN_RUN)
        assert est.kg_co2e == pytest.approx(209.4, abs=0.2)
        assert est.total_tokens == 595346

    def test_zero_usage(self):
        assert estimate(TokenUsage(0, 0)).kg_co2e == 0.0

    def test_exact_linearity_in_factor(self):
        est = estimate(TokenUsage(100, 0), 0.5)
        assert est.kg_co2e == 50.0

    def test_nonpositive_factor(self):
        with pytest.raises(NonPositiveFactor):
            estimate(TokenUsage(1, 1), 0.0)
        with pytest.raises(NonPositiveFactor):
            estimate(TokenUsage(1, 1), -1.0)

    def test_linearity_in_usage(self):
        base = TokenUsage(123, 45)
        for k in (2, 3, 10):
            scaled = TokenUsage(base.prompt_tokens * k, base.completion_tokens * k)
            assert estimate(scaled).kg_co2e == pytest.approx(
                k * estimate(base).kg_co2e, rel=1e-12
            )

    def test_format(self):
        line = format_estimate(estimate(ENGLISH_RUN))
        assert line.startswith("150.7 kg CO2e")
        assert "428397 tokens" in line


class TestDeriveFactor:
    def test_reference_fit(self):
        factor = derive_factor(REFERENCE)
        assert factor == pytest.approx(3.5176e-4, rel=5e-4)
        # both runs reproduced well within 0.05%
        for usage, kg in REFERENCE:
            assert factor * usage.total_tokens == pytest.approx(kg, rel=5e-4)

    def test_default_factor_is_the_reference_fit(self):
        assert derive_factor(REFERENCE) == DEFAULT_FACTOR_KG_PER_TOKEN

    def test_single_pair_is_plain_ratio(self):
        assert derive_factor([(TokenUsage(60, 40), 0.035)]) == pytest.approx(3.5e-4)

    def test_empty_reference(self):
        with pytest.raises(EmptyReference):
            derive_factor([])
        with pytest.raises(EmptyReference):
            derive_factor([(TokenUsage(0, 0), 1.0)])


class TestRunLedger:
    def test_totals_sum_entries(self):
        ledger = RunLedger("v")
        ledger.record("v/0/1", TokenUsage(10, 1))
        ledger.record("v/1/1", TokenUsage(20, 2))
        assert ledger.totals == TokenUsage(30, 3)
        assert [e.request_tag for e in ledger.entries] == ["v/0/1", "v/1/1"]

    def test_merge_sums_exactly(self):
        a = RunLedger("v")
        a.record("v/0/1", TokenUsage(5, 5))
        b = RunLedger("v")
        b.record("v/1/2", TokenUsage(7, 3))
        merged = a.merge(b)
        assert merged.totals == a.totals + b.totals
        assert len(merged.entries) == 2

    def test_concurrent_appends(self):
        ledger = RunLedger("v")

        def work(n):
            for i in range(200):
                ledger.record(f"v/{n}-{i}/1", TokenUsage(1, 1))

        threads = [threading.Thread(target=work, args=(n,)) for n in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ledger.totals == TokenUsage(1600, 1600)

    def test_write_read_round_trip(self, tmp_path):
        ledger = RunLedger("vid")
        ledger.record("vid/0/1", TokenUsage(10, 2))
        ledger.no_dedup_totals = TokenUsage(15, 3)
        path = tmp_path / "emissions.json"
        ledger.write(path)
        doc = json.loads(path.read_text())
        assert doc["video_id"] == "vid"
        assert doc["totals"] == {"prompt_tokens": 10, "completion_tokens": 2}
        assert doc["factor_kg_per_token"] == DEFAULT_FACTOR_KG_PER_TOKEN
        assert doc["kg_co2e"] == pytest.approx(12 * DEFAULT_FACTOR_KG_PER_TOKEN)
        loaded = RunLedger.read(path)
        assert loaded.totals == ledger.totals
        assert loaded.no_dedup_totals == TokenUsage(15, 3)

    def test_read_compact_totals_only(self, tmp_path):
        path = tmp_path / "ledger.json"
        path.write_text(
            json.dumps(
                {
                    "video_id": "english-run",
                    "totals": {"prompt_tokens": 390962, "completion_tokens": 37435},
                }
            )
        )
        ledger = RunLedger.read(path)
        assert ledger.totals == ENGLISH_RUN
        assert format_estimate(estimate(ledger.totals)).startswith("150.7 kg CO2e")

    def test_read_rejects_inconsistent_totals(self, tmp_path):
        path = tmp_path / "ledger.json"
        path.write_text(
            json.dumps(
                {
                    "video_id": "v",
                    "entries": [
                        {"request_tag": "v/0/1",
                         "usage": {"prompt_tokens": 1, "completion_tokens": 1}}
                    ],
                    "totals": {"prompt_tokens": 99, "completion_tokens": 0},
                }
            )
        )
        with pytest.raises(ValueError):
            RunLedger.read(path)
