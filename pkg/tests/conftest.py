import numpy as np
import pytest
from hypothesis import settings

from xferlab.autodiff import TrainConfig
from xferlab.bench import BenchConfig, build_family
from xferlab.corpus import DomainDataset, Vocabulary
from xferlab.models import init_classifier, sgd_train
from xferlab.psets import PsetConfig, generate_perturbation_sets

settings.register_profile("xferlab", deadline=None, max_examples=100)
settings.load_profile("xferlab")

SMALL = BenchConfig(examples_per_class=150)
FAST = PsetConfig(T=3, R=6, eps0=0.3, seed=0)


@pytest.fixture(scope="session")
def family():
    """Target plus siblings at overlap 0.9 and 0.5, 300 examples each."""
    return build_family(0, (0.9, 0.5), SMALL)


@pytest.fixture(scope="session")
def trained(family):
    target = family[0]
    init = init_classifier("logreg", target.vocab, 8, 0)
    return init, sgd_train(init, target, SMALL.train_config(0))


@pytest.fixture(scope="session")
def bundle(family, trained):
    return generate_perturbation_sets(family[0], trained[1], FAST)


@pytest.fixture
def toy():
    """Four separable examples over {great, toy, broke, fast}."""
    vocab = Vocabulary.build([["great", "toy", "broke", "fast"]])
    seqs = [vocab.encode(s.split()) for s in ("great toy", "great", "broke fast", "broke")]
    return DomainDataset.from_sequences("toy", vocab, seqs, [1, 1, 0, 0])


def toy_train(data, epochs=200, lr=0.5, early_stop=0.05, seed=0, d=4):
    init = init_classifier("logreg", data.vocab, d, seed)
    seqs = data.sequences
    cfg = TrainConfig(epochs_base=epochs, learning_rate=lr, early_stop_loss=early_stop)
    return init, sgd_train(init, (seqs, data.labels), cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
