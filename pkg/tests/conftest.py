import numpy as np
import pytest

from skytrack.core import BBox
from skytrack.datasets import SynthSpec, synth_sequence


@pytest.fixture(scope="session")
def moving_sequence(tmp_path_factory):
    """Rigid target translating +2 px/frame in x, 60 frames, no occlusion."""
    spec = SynthSpec(
        name="moving",
        n_frames=60,
        start_box=BBox(60, 80, 40, 40),
        velocity=(2.0, 0.0),
        seed=11,
    )
    return synth_sequence(spec, tmp_path_factory.mktemp("seq") / "moving")


@pytest.fixture(scope="session")
def static_sequence(tmp_path_factory):
    """Static target, 60 frames; confidence should never dip."""
    spec = SynthSpec(
        name="static",
        n_frames=60,
        start_box=BBox(120, 90, 40, 40),
        velocity=(0.0, 0.0),
        seed=12,
    )
    return synth_sequence(spec, tmp_path_factory.mktemp("seq") / "static")


@pytest.fixture(scope="session")
def occlusion_sequence(tmp_path_factory):
    """Target visible 0-29 (fading from 22), occluded 30-39, visible 40-59.

    The fade makes tracker confidence decay over several frames instead of
    cliffing, so different t_c thresholds fire at different frames.
    """
    spec = SynthSpec(
        name="occlusion",
        n_frames=60,
        start_box=BBox(60, 80, 40, 40),
        velocity=(2.0, 0.0),
        occlusions=((30, 39),),
        occlusion_fade=8,
        seed=13,
    )
    return synth_sequence(spec, tmp_path_factory.mktemp("seq") / "occlusion")


def make_frame(pixels: np.ndarray, index: int = 0, timestamp: float = 0.0):
    from skytrack.core import Frame

    return Frame(
        index=index,
        timestamp=timestamp,
        width=pixels.shape[1],
        height=pixels.shape[0],
        pixels=pixels.astype(np.uint8),
    )
