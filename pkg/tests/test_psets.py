import numpy as np
import pytest
from hypothesis import given, strategies as st

from xferlab.metrics import transfer_loss
from xferlab.models import init_classifier, sgd_train
from xferlab.psets import (PerturbationSetError, PsetConfig, accepts, bundle_diversity,
                           generate_perturbation_sets, load_bundle, save_bundle)

from conftest import FAST, SMALL



def test_defaults_verbatim():
    c = PsetConfig()
    assert (c.T, c.R, c.d_max, c.eps0, c.gamma) == (10, 10, 0.1, 0.9, 0.05)


@pytest.mark.parametrize("kw", [dict(T=0), dict(R=0), dict(d_max=0.0), dict(eps_min=0.95), dict(gamma=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PsetConfig(**kw)


def test_empty_bundle_accepts_anything():
    assert bundle_diversity([], 0.07) == (0.0, 0.0)
    assert accepts([], 0.07)


def test_diversity_example():
    with_, without = bundle_diversity([0.02, 0.08], 0.05)
    assert without == pytest.approx(np.var([0.02, 0.08]))
    assert with_ == pytest.approx(np.var([0.02, 0.08, 0.05]))
    assert with_ < without
    assert not accepts([0.02, 0.08], 0.05)


def test_duplicate_is_rejected():
    assert not accepts([0.03, 0.03], 0.03)


@given(st.lists(st.floats(0, 0.1), min_size=1, max_size=8), st.floats(0, 0.1))
def test_acceptance_means_variance_grows(tfs, cand):
    w, wo = bundle_diversity(tfs, cand)
    assert accepts(tfs, cand) == (w > wo)


def test_distance_failure_lowers_epsilon_by_gamma(family, trained):
    cfg = PsetConfig(T=1, R=3, eps0=0.9, d_max=0.01)
    with pytest.raises(PerturbationSetError, match=r"eps=0\.90 .*eps=0\.85 .*eps=0\.80"):
        generate_perturbation_sets(family[0], trained[1], cfg)


def test_useless_target_model_is_refused(family):
    seqs, labels = family[0].subset("train")
    init = init_classifier("logreg", family[0].vocab, 8, 0)
    inverted = sgd_train(init, (seqs, 1 - labels), SMALL.train_config(0))
    with pytest.raises(PerturbationSetError, match="untrained"):
        generate_perturbation_sets(family[0], inverted, FAST)


def test_accepted_sets_meet_contract(bundle, family, trained):
    target = family[0]
    assert len(bundle) >= 1
    for s in bundle.sets:
        assert s.tf <= FAST.d_max
        assert s.tf == transfer_loss(s.data, target, trained[1])
        assert len(s.data) == len(target)
        assert np.array_equal(s.data.labels, target.labels)
        assert np.array_equal(s.data.test_idx, target.test_idx)
        assert s.data.sequences != target.sequences
    for t, attempts in bundle.attempts.items():
        eps = [a.epsilon for a in attempts]
        assert all(a >= b for a, b in zip(eps, eps[1:]))
        assert min(eps) >= FAST.eps_min
        assert len(attempts) <= FAST.R
    assert len(bundle) + len(bundle.failed_slots) == FAST.T


def test_bundle_is_reproducible(bundle, family, trained):
    again = generate_perturbation_sets(family[0], trained[1], FAST)
    assert again.tfs == bundle.tfs
    assert [s.data.sequences for s in again.sets] == [s.data.sequences for s in bundle.sets]


def test_bundle_round_trip(tmp_path, bundle, family):
    save_bundle(bundle, tmp_path, FAST)
    back = load_bundle(tmp_path, family[0].vocab)
    assert back.tfs == bundle.tfs
    assert back.failed_slots == bundle.failed_slots
    for a, b in zip(back.sets, bundle.sets):
        assert a.data.sequences == b.data.sequences
        assert np.array_equal(a.data.train_idx, b.data.train_idx)
    assert {t: [x.outcome for x in at] for t, at in back.attempts.items()} == \
        {t: [x.outcome for x in at] for t, at in bundle.attempts.items()}
