import numpy as np
import pytest


def write_ppm(path, pixels: np.ndarray) -> None:
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.astype(np.uint8).tobytes())


@pytest.fixture
def image_tree(tmp_path):
    """Three class directories with a few small PPM images each."""
    rng = np.random.default_rng(0)
    root = tmp_path / "images"
    counts = {"chair": 4, "lamp": 3, "table": 5}
    for cls, n in counts.items():
        (root / cls).mkdir(parents=True)
        for i in range(n):
            write_ppm(root / cls / f"{cls}_{i}.ppm",
                      rng.integers(0, 256, size=(16, 16, 3)))
    return root, counts
