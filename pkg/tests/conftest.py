import numpy as np
import pytest

from ssmtnet.data import PhantomConfig, phantom_set
from ssmtnet.model import ModelConfig, SSMTNet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """16×16 input, small widths: fast enough for per-test forward/backward."""
    return ModelConfig(image_size=(16, 16), patch_size=8, embed_dim=8, num_layers=1, num_heads=2,
                       cnn_channels=(4, 8), num_queries=2, dec_dim=8, iterations=2)


@pytest.fixture
def tiny_model(tiny_config):
    return SSMTNet(tiny_config, seed=7)


@pytest.fixture(scope="session")
def tiny_phantoms():
    return phantom_set(PhantomConfig(height=16, width=16), 6, seed=3, prefix="tiny")


@pytest.fixture(scope="session")
def phantoms64():
    return phantom_set(PhantomConfig(), 4, seed=11, prefix="p64")


@pytest.fixture(scope="session")
def overfit_artifact(tmp_path_factory):
    """Desk-scale model trained on 8 phantoms for 500 supervised steps.

    Shared by the acceptance overfit criterion and the inference round trip.
    """
    import time

    from ssmtnet.training import PhaseConfig, run_supervised

    samples = phantom_set(PhantomConfig(), 8, seed=42, prefix="overfit")
    model = SSMTNet(ModelConfig(), seed=42)
    out = tmp_path_factory.mktemp("overfit")
    start = time.perf_counter()
    state = run_supervised(model, samples, PhaseConfig(epochs=500, batch_size=8, max_steps=500,
                                                       checkpoint_every=0, eval_every=500,
                                                       out_dir=str(out)),
                           val_data=samples)
    return {"model": model, "samples": samples, "state": state, "dir": out,
            "checkpoint": out / "last_supervised.ckpt", "seconds": time.perf_counter() - start}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts as one block at the end of the run."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
