import numpy as np
import pytest

from eyeaffect import corpus, features, lld


@pytest.fixture(scope="session")
def tiny_corpus():
    """3 subjects, 30 s each, planted lag 0.4 s: fast but full-shaped."""
    frames_by, traces_by = corpus.synth_corpus(seed=424, n_subjects=3, duration_s=30, lag_s=0.4)
    return frames_by, traces_by


@pytest.fixture(scope="session")
def tiny_series(tiny_corpus):
    frames_by, _ = tiny_corpus
    return {sid: lld.derive_llds(records) for sid, records in frames_by.items()}


@pytest.fixture(scope="session")
def tiny_features(tiny_series):
    return {sid: features.extract_features(series) for sid, series in tiny_series.items()}


@pytest.fixture()
def rng():
    return np.random.default_rng(20260808)
