import numpy as np
import pytest

from spexplus.simulate import simulate_dataset


@pytest.fixture(scope="session")
def overfit_dataset(tmp_path_factory):
    """8 fixed-length training mixtures from 2 train speakers (seed 1)."""
    out = tmp_path_factory.mktemp("overfit_ds")
    paths = simulate_dataset(out, n_speakers=4, utts_per_speaker=3,
                             split_sizes=(8, 8, 4), seed=1,
                             duration_range=(4.0, 4.0))
    return out, paths


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The desk-scale protocol: 12 speakers, 20 utterances, 200/50/50."""
    out = tmp_path_factory.mktemp("desk_ds")
    paths = simulate_dataset(out, n_speakers=12, utts_per_speaker=20,
                             split_sizes=(200, 50, 50), seed=0)
    return out, paths


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """Small and short-utterance dataset for fast trainer/CLI tests."""
    out = tmp_path_factory.mktemp("micro_ds")
    paths = simulate_dataset(out, n_speakers=4, utts_per_speaker=3,
                             split_sizes=(6, 3, 3), seed=3,
                             duration_range=(1.0, 2.0))
    return out, paths


@pytest.fixture
def run_cli(capsys):
    from spexplus.cli import main

    def run(*args):
        code = main([str(a) for a in args])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(0)
