import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from relcap import tensor as T  # noqa: E402
from relcap.config import Config  # noqa: E402
from relcap.corpus import SyntheticSpec, generate_synthetic  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(**kw) -> Config:
    base = dict(d_model=8, n_heads=2, n_layers=1, d_ff=16, gcn_layers=2, d_rel=4, gmm_m=2, min_count=1, relcls_hidden=8, relcls_epochs=2)
    base.update(kw)
    return Config(**base).validate()


def tiny_records(n=12, seed=0, feature_dim=6, distractors=(0, 1)):
    return generate_synthetic(n, seed, SyntheticSpec(feature_dim=feature_dim, distractors=distractors))


def loss_of(fn, shape_seed=0):
    """Scalar loss ``sum(fn(...) * R)`` with a fixed random projection R."""

    def wrap(*args):
        out = fn(*args)
        rng = np.random.default_rng(shape_seed)
        r = rng.normal(size=out.shape)
        return (out * T.Tensor(r)).sum()

    return wrap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        status = "PASS" if kind is None else "FAIL"
        text = self.detail if kind is None else f"{self.detail} {exc}".strip()
        line = f"criterion {self.number:2d} {status}: {self.title}" + (f" ({text})" if text else "")
        self.lines.append(line)
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one PASS/FAIL line for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
