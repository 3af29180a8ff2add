import numpy as np
import pytest

from relabel.data import SynthSpec, gen_synthetic
from relabel.model import init_params, make_batch
from relabel.numerics import Rng


@pytest.fixture
def toy_params():
    return init_params(3, 4, 2, 3, Rng(7))


def random_batch(rng, D, lengths):
    seqs = [rng.gen.normal(size=(T, D)) for T in lengths]
    return make_batch(seqs)


@pytest.fixture
def tiny_synth():
    spec = SynthSpec(num_samples=60, min_frames=2, max_frames=5, feature_dim=4,
                     separation=3.0, flip_rate=0.2, num_speakers=2, seed=3)
    return gen_synthetic(spec)
