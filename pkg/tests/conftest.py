import numpy as np
import pytest

from mixprivacy.imgcore import resize_bilinear, save_image

PHOTOS = ("astronaut", "camera", "coffee", "chelsea", "rocket", "clock", "coins")


def _load_photos():
    data = pytest.importorskip("skimage.data")
    out = []
    for name in PHOTOS:
        im = np.asarray(getattr(data, name)(), dtype=np.float64)
        if im.ndim == 2:
            im = np.stack([im] * 3, axis=-1)
        out.append(im[:, :, :3])
    return out


class PhotoCorpus:
    """Random square crops of everyday photographs, resized to a fixed size.

    Crops keep 60-100 % of the short side so each one looks like a whole scene.
    """

    def __init__(self):
        self.photos = _load_photos()

    def crop(self, rng: np.random.Generator, size: int = 256) -> np.ndarray:
        im = self.photos[rng.integers(len(self.photos))]
        H, W, _ = im.shape
        side = int(rng.integers(int(0.6 * min(H, W)), min(H, W) + 1))
        y = int(rng.integers(0, H - side + 1))
        x = int(rng.integers(0, W - side + 1))
        out = resize_bilinear(im[y:y + side, x:x + side], size, size)
        if rng.random() < 0.5:
            out = out[:, ::-1]
        return np.ascontiguousarray(out)

    def pairs(self, n: int, seed: int, size: int = 256):
        rng = np.random.default_rng(seed)
        return [(self.crop(rng, size), self.crop(rng, size)) for _ in range(n)]


@pytest.fixture(scope="session")
def photos() -> PhotoCorpus:
    return PhotoCorpus()


def write_toy_dataset(root, images, labels):
    """Write PNGs plus a ``path,label`` CSV; returns the CSV path."""
    root.mkdir(parents=True, exist_ok=True)
    lines = ["path,label"]
    for k, (img, lbl) in enumerate(zip(images, labels)):
        name = f"img_{k:03d}.png"
        save_image(img, root / name)
        lines.append(f"{name},{lbl}")
    csv = root / "dataset.csv"
    csv.write_text("\n".join(lines) + "\n")
    return csv


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
