"""Recurrent layer aggregation: model construction, exact accounting,
verification suites and the scalar ARMA expansions.

Model functions take a ``config`` dict of the same keys the ``rla`` command
line accepts (``model``, ``k``, ``variant``, ``sharing``, ``blocks``, ...).
Values may be given as ``str``, ``int``, ``float`` or ``bool``.
"""

from . import _rla

__all__ = [
    "model_names",
    "count_parameters",
    "count_macs",
    "golden_target",
    "shared_norms",
    "forward",
    "fit_exponential",
    "arma_ar_coefficients",
    "arma_impulse_response",
    "recurrence_expand",
    "recurrence_closed_form",
    "run_suite",
]


def _settings(config):
    out = {}
    for key, value in (config or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        out[str(key)] = str(value)
    return out


def model_names():
    return _rla.model_names()


def count_parameters(config):
    return _rla.count_parameters(_settings(config))


def count_macs(config, resolution=32):
    return _rla.count_macs(_settings(config), resolution)


def golden_target(config):
    return _rla.golden_target(_settings(config))


def shared_norms(config):
    return _rla.shared_norms(_settings(config))


def forward(config, images):
    return _rla.forward(_settings(config), images)


def run_suite(name, config=None):
    return _rla.run_suite(name, _settings(config))


fit_exponential = _rla.fit_exponential
arma_ar_coefficients = _rla.arma_ar_coefficients
arma_impulse_response = _rla.arma_impulse_response
recurrence_expand = _rla.recurrence_expand
recurrence_closed_form = _rla.recurrence_closed_form
