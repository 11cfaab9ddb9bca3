"""Shared fixtures: the synthetic suite, banks, and disk copies."""
import numpy as np
import pytest

from alarmsentinel.record_io import Arrhythmia
from alarmsentinel.synthkit import SynthSpec, generate, generate_suite, suite_specs, surrogate_banks


@pytest.fixture(scope="session")
def suite():
    """The standing 50-record suite as (spec, record, truth) triples."""
    return [(spec, *generate(spec)) for spec in suite_specs(seed=7, per_class=10)]


@pytest.fixture(scope="session")
def vt_suite(suite):
    return [(s, r, t) for s, r, t in suite if s.arrhythmia is Arrhythmia.VTACH]


@pytest.fixture(scope="session")
def sinus_record():
    """One clean false-alarm record for quick checks."""
    spec = SynthSpec(name="sinus", arrhythmia=Arrhythmia.ASYSTOLE, event=False, seed=11)
    record, truth = generate(spec)
    return record


@pytest.fixture(scope="session")
def banks():
    return surrogate_banks(seed=0)


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory):
    """The suite written to disk, with its manifest."""
    out = tmp_path_factory.mktemp("suite")
    manifest = generate_suite(out, seed=7, per_class=10)
    return out, manifest
