import numpy as np
import pytest
import torch
from PIL import Image

from shiftid_extractor import register_encoder

TINY_DIM = 6


class _MeanProjEncoder(torch.nn.Module):
    """Cheap stand-in encoder: channel means through a fixed projection."""

    def __init__(self, dim: int, seed: int):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("proj", torch.randn(3, dim, generator=gen))

    def forward(self, x):
        return x.mean(dim=(2, 3)) @ self.proj


class _MeanProjClassifier(torch.nn.Module):
    """Three-class logits from channel means; scriptable task model."""

    def __init__(self):
        super().__init__()
        gen = torch.Generator().manual_seed(11)
        self.register_buffer("proj", torch.randn(3, 3, generator=gen))

    def forward(self, x):
        return x.mean(dim=(2, 3)) @ self.proj


register_encoder("tiny_mean_proj", TINY_DIM,
                 lambda: _MeanProjEncoder(TINY_DIM, seed=7))
register_encoder("tiny_mean_proj_alt", TINY_DIM,
                 lambda: _MeanProjEncoder(TINY_DIM, seed=8))


def write_png(path, rng, width, height):
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)


@pytest.fixture(scope="session")
def png_writer():
    return write_png


@pytest.fixture(scope="session")
def tiny_dim():
    return TINY_DIM


@pytest.fixture(scope="session")
def ten_image_dir(tmp_path_factory):
    """Ten deterministic PNGs of mixed sizes, created out of name order."""
    directory = tmp_path_factory.mktemp("ten_images")
    rng = np.random.default_rng(2026)
    sizes = [(64, 48), (100, 80), (32, 32), (80, 100), (64, 64)]
    order = [7, 2, 9, 0, 5, 1, 8, 3, 6, 4]
    for idx, i in enumerate(order):
        width, height = sizes[idx % len(sizes)]
        write_png(directory / f"img_{i:02d}.png", rng, width, height)
    return directory


@pytest.fixture(scope="session")
def task_model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "tiny_task.pt"
    torch.jit.script(_MeanProjClassifier()).save(str(path))
    return path
