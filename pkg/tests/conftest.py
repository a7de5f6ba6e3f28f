import numpy as np
import pytest

from occlusionbench.datamodel import default_skeleton
from occlusionbench.occlusion import make_synthetic_object_library
from occlusionbench.synthetic import SyntheticConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def skeleton17():
    return default_skeleton()


@pytest.fixture(scope="session")
def object_library():
    return make_synthetic_object_library(n_per_split=6, seed=3)


@pytest.fixture(scope="session")
def dataset_small(tmp_path_factory):
    """8-frame rendered dataset shared by geometry/heatmap/sweep tests."""
    out = tmp_path_factory.mktemp("dataset_small")
    return generate_synthetic_dataset(SyntheticConfig(num_frames=8, seed=11), out)


@pytest.fixture(scope="session")
def dataset_sweep(tmp_path_factory):
    """Slightly larger dataset for sweep-level statistics."""
    out = tmp_path_factory.mktemp("dataset_sweep")
    return generate_synthetic_dataset(SyntheticConfig(num_frames=20, seed=5), out)


def disk_centroid(image, window_center, window_radius=8):
    """Intensity centroid of 'red-dominant' pixels near a point.

    The stick-figure renderer draws joints as red disks on gray bones and
    background, so redness (R minus the larger of G and B) isolates the
    disk even where it touches a bone.
    """
    h, w = image.shape[:2]
    cx, cy = float(window_center[0]), float(window_center[1])
    x0 = max(0, int(np.floor(cx - window_radius)))
    y0 = max(0, int(np.floor(cy - window_radius)))
    x1 = min(w, int(np.ceil(cx + window_radius)) + 1)
    y1 = min(h, int(np.ceil(cy + window_radius)) + 1)
    patch = image[y0:y1, x0:x1].astype(np.float64)
    redness = patch[:, :, 0] - np.maximum(patch[:, :, 1], patch[:, :, 2])
    redness = np.clip(redness, 0.0, None)
    total = redness.sum()
    if total <= 0:
        return None
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return np.array([(redness * xs).sum() / total, (redness * ys).sum() / total])
