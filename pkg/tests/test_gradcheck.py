"""The finite-difference self-check: passes on a healthy model, catches an
injected fault, and tolerates the degenerate one-sample contrastive setup."""

import pytest

from nextact.errors import ParameterError
from nextact.gradcheck import run_gradcheck


def test_default_tiny_config_passes():
    report = run_gradcheck()
    assert report.passed, f"worst {report.worst} at {report.worst_param}"
    assert report.worst < 1e-4


def test_corrupted_adjoint_fails_with_parameter_name():
    report = run_gradcheck(corrupt="gru1.u")
    assert not report.passed
    assert report.worst_param == "gru1.u"


def test_single_sample_contrast_passes():
    # N = 1: the revision loss is constantly 0, a zero-gradient path
    report = run_gradcheck(n_contrast=1)
    assert report.passed


def test_unknown_corrupt_target_rejected():
    with pytest.raises(ParameterError):
        run_gradcheck(corrupt="nope.w")


@pytest.mark.parametrize("agg", ["lstm", "avg", "max"])
def test_other_aggregators_pass(agg):
    report = run_gradcheck(aggregator=agg)
    assert report.passed, f"{agg}: worst {report.worst} at {report.worst_param}"
