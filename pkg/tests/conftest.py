import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_epochs():
    """Small in-memory ERP-like EpochSet with planted class structure.

    4 subjects x 11 phonemes x 3 trials, 20 time points, 4 channels; each
    phoneme adds a distinct channel-weighted bump so simple decoders can
    separate classes.
    """
    from eegphon.core import PHONEMES, EpochSet, LabelRecord

    rng = np.random.default_rng(99)
    subjects = [f"S{i:02d}" for i in range(1, 5)]
    t = np.arange(20)
    data = []
    labels = []
    for subj in subjects:
        for block, tms in enumerate(("NULL", "LipTMS", "TongueTMS")):
            for ci, ph in enumerate(PHONEMES):
                bump = np.exp(-0.5 * ((t - 5 - ci) / 2.0) ** 2)
                weights = np.sin(np.arange(4) + ci)
                x = rng.standard_normal((20, 4)) * 0.3
                x += 3.0 * bump[:, None] * weights[None, :]
                data.append(x)
                labels.append(LabelRecord.create(subj, ph, tms=tms))
    return EpochSet(data=np.stack(data), labels=tuple(labels),
                    feature_kind="ERP", window_ms=(-200.0, 800.0))
