import numpy as np
import pytest

from promptseg import backends
from promptseg.encoders import synth_scene, synth_text_bank
from promptseg.fixtures import SynthSpec, make_reference_fixture
from promptseg.geometry import BBox


@pytest.fixture(scope="session", autouse=True)
def _warm_backends():
    # jit compilation happens once here, not inside timed sections
    backends.warmup()


@pytest.fixture(scope="session")
def reference_fixture():
    return make_reference_fixture(SynthSpec(seed=0))


@pytest.fixture(scope="session")
def small_fixture():
    """Tiny noise-free fixture: 2 classes, 2 scenes, 12x12."""
    bank = synth_text_bank(2, 6, seed=7)
    layout_a = [(BBox(1, 1, 4, 4), 0), (BBox(6, 7, 10, 10), 1)]
    layout_b = [(BBox(2, 5, 6, 9), 1)]
    scenes = [
        synth_scene(bank, layout_a, 0.0, seed=11, height=12, width=12,
                    fpn_dim=6, scene_id="a"),
        synth_scene(bank, layout_b, 0.0, seed=12, height=12, width=12,
                    fpn_dim=6, scene_id="b"),
    ]
    return bank, scenes


def finite_difference(f, x, h=1e-3):
    """Central finite differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(approx, exact):
    approx = np.asarray(approx, dtype=np.float64).reshape(-1)
    exact = np.asarray(exact, dtype=np.float64).reshape(-1)
    denom = max(float(np.linalg.norm(exact)), 1e-12)
    return float(np.linalg.norm(approx - exact)) / denom
