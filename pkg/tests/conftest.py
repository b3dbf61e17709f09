import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_corpus():
    """Six speakers, three warps, a handful of utterances each."""
    from zrsub.synth import simple_config, synth_corpus

    return synth_corpus(simple_config(6, utterances_per_speaker=3, seed=3), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
