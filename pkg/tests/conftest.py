from importlib.resources import files

import pytest

from huhbutton import bundle as bundle_mod
from huhbutton.emissions import RunLedger
from huhbutton.ingest import normalize, parse_srt
from huhbutton.provider import MockProvider
from huhbutton.segmenter import restore_punctuation, segment

FIXED_CREATED_AT = "2024-01-01T00:00:00+00:00"


@pytest.fixture(scope="session")
def sample_srt_bytes() -> bytes:
    return files("huhbutton.fixtures").joinpath("sample_lecture.srt").read_bytes()


@pytest.fixture(scope="session")
def sample_transcript(sample_srt_bytes):
    return normalize(
        parse_srt(sample_srt_bytes, video_id="sample-lecture", language="en")
    )


@pytest.fixture(scope="session")
def punctuated(sample_transcript):
    return restore_punctuation(sample_transcript, "rule")


@pytest.fixture(scope="session")
def sentences(punctuated):
    return segment(punctuated)


@pytest.fixture(scope="session")
def mock_bundle(punctuated):
    return bundle_mod.generate_bundle(
        punctuated, MockProvider(), created_at=FIXED_CREATED_AT
    )


@pytest.fixture(scope="session")
def bundle_dir(tmp_path_factory, mock_bundle):
    """A directory holding the sample bundle archive plus its ledger."""
    path = tmp_path_factory.mktemp("bundles")
    bundle_mod.save_bundle(mock_bundle, path / "bundle.json")
    RunLedger(mock_bundle.video_id).write(path / "emissions.json")
    return path
