import math
import os

import numpy as np
import pytest

from stochattn import calibration
from stochattn.backbone import EncoderConfig, fit_readout, init_encoder, with_stochastic_layers
from stochattn.data import SplitSpec, make_sinusoid, split

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SHIPPED_CONFIG = os.path.join(ROOT, "configs", "sinusoid.json")

# Every eval_loss call made anywhere in the suite is audited here.
IDENTITY_AUDIT = {"calls": 0, "worst_rel": 0.0}
# criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE = {}


def _check_identity(record, deltas, resid):
    per_case = np.mean((deltas - resid[:, None]) ** 2, axis=1)
    var = deltas.var(axis=1)
    bias = (deltas.mean(axis=1) - resid) ** 2
    denom = np.maximum(np.abs(per_case), np.finfo(float).tiny)
    rel = float(np.max(np.abs(var + bias - per_case) / denom))
    IDENTITY_AUDIT["calls"] += 1
    IDENTITY_AUDIT["worst_rel"] = max(IDENTITY_AUDIT["worst_rel"], rel)
    assert rel <= 1e-10, f"variance + squared bias != mean squared discrepancy (rel {rel:.3e})"
    assert math.isclose(record.loss_estimate, float(per_case.mean()), rel_tol=1e-12, abs_tol=0.0)


@pytest.fixture(autouse=True, scope="session")
def _audit_eval_loss():
    calibration.add_eval_hook(_check_identity)
    yield IDENTITY_AUDIT
    calibration.remove_eval_hook(_check_identity)


@pytest.fixture(scope="session")
def sinusoid_splits():
    ds = make_sinusoid(300, noise_sigma=0.3, seed=3)
    return split(ds, SplitSpec(0.6, 0.2, 0.2, seed=3))


@pytest.fixture(scope="session")
def toy_model(sinusoid_splits):
    """2-layer encoder, ridge readout, stochastic attention in every layer."""
    train = sinusoid_splits[0]
    model = fit_readout(init_encoder(EncoderConfig(seed=11)), train.cases, ridge=1.0)
    return with_stochastic_layers(model)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
    terminalreporter.write_line(
        f"identity audit over the whole session: {IDENTITY_AUDIT['calls']} eval_loss calls, "
        f"worst relative error {IDENTITY_AUDIT['worst_rel']:.2e}")
