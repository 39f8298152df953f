"""Python access to the photon-number-resolving QRNG core."""

import json

from . import _pnr
from ._pnr import (
    ConfigError,
    FitError,
    SequenceTooShort,
    StageError,
    apply_loss,
    bias_trend,
    bits_from_totals,
    block_frequency_test,
    coherent_parity,
    confidences,
    expected_area,
    fit_mixture,
    frequency_test,
    longest_run_test,
    mod4_probability,
    modq_probabilities,
    poisson_pmf,
    pulse_areas,
    runs_test,
    sample_counts,
    spectral_test,
    synth_pulse,
    trial_count,
    wilson_interval,
    window_keep_fraction,
)

__version__ = "0.1.0"


def default_config():
    return json.loads(_pnr.default_config())


def run_pipeline(config):
    """Run every stage for a config dict; returns the summary dict."""
    return json.loads(_pnr.run_pipeline(json.dumps(config)))


def certify(bits, trial_size=100000, alpha=0.01):
    return json.loads(_pnr.certify(bits, trial_size, alpha))
