"""Acceptance gate: every criterion runs at its pinned tolerance and prints
one pass/fail line."""

import pytest

from bpre.acceptance import CRITERIA, EXTENDED, run_criterion, run_suite
from bpre.errors import ValidationError

LABELS = [label for label, _ in CRITERIA]


@pytest.mark.parametrize("label", LABELS)
def test_criterion(label):
    result = run_criterion(label)
    print(result.line)
    assert result.passed, result.line


@pytest.mark.parametrize("label", [label for label, _ in EXTENDED])
def test_extended_invariant(label):
    result = run_criterion(label)
    print(result.line)
    assert result.passed, result.line


def test_unknown_suite_rejected():
    with pytest.raises(ValidationError):
        run_suite("medium", emit=None)


def test_corrupted_closed_form_is_caught(monkeypatch):
    # a deliberately perturbed closed form must flip the criterion red
    import bpre.acceptance as acc

    real = acc.closed_form_log_survival
    monkeypatch.setattr(acc, "closed_form_log_survival", lambda env: real(env) + 1e-6)
    result = acc.criterion_1(acc.DEFAULT_SEED)
    assert not result.passed


def test_fast_suite_summary():
    report = run_suite("fast", emit=None)
    assert report.passed
    assert "13/13" in report.summary
