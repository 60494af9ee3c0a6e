"""Named encoder registry and the bundled ResNet-50 adapters.

An encoder is any ``torch.nn.Module`` that maps a preprocessed image batch
of shape (B, 3, 224, 224) to a (B, dim) float tensor. Encoders are looked
up by a string id so jobs stay serializable; new ones can be added with
:func:`register_encoder`.

Three adapters ship by default, all exposing the 2048-dim global-pooled
last layer of a ResNet-50 trunk:

* ``resnet50_supervised`` - ImageNet-supervised weights (fetched through
  the torchvision weight cache on first use).
* ``resnet50_ssl`` - self-supervised DINO weights via torch.hub (fetched
  on first use). Self-supervised natural-image features transfer well,
  which makes this the default for feature-space drift monitoring.
* ``resnet50_random`` - deterministically seeded random weights. Needs no
  network and never changes, so it is the smoke-test and plumbing-check
  choice; random projections of this depth are still distance-preserving
  enough to exercise the full pipeline.
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import torch

from .errors import EncoderNotFound

RANDOM_TRUNK_SEED = 1249

_REGISTRY = {}


@dataclass(frozen=True)
class EncoderEntry:
    name: str
    dim: int
    builder: Callable[[], torch.nn.Module]
    notes: str = ""


def register_encoder(name: str, dim: int,
                     builder: Callable[[], torch.nn.Module],
                     notes: str = "") -> None:
    """Add (or replace) a named encoder. ``builder`` must be pure."""
    _REGISTRY[name] = EncoderEntry(name=name, dim=dim, builder=builder,
                                   notes=notes)


def list_encoders() -> Tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def build_encoder(name: str) -> Tuple[torch.nn.Module, int]:
    """Instantiate a registered encoder in eval mode."""
    try:
        entry = _REGISTRY[name]
    except KeyError:
        raise EncoderNotFound(
            f"unknown encoder {name!r}; registered: {', '.join(list_encoders())}"
        ) from None
    model = entry.builder()
    model.eval()
    return model, entry.dim


def _resnet50_trunk(weights) -> torch.nn.Module:
    from torchvision.models import resnet50

    model = resnet50(weights=weights)
    model.fc = torch.nn.Identity()
    return model


def _build_random() -> torch.nn.Module:
    # fork_rng keeps the fixed-seed construction from disturbing the
    # caller's global RNG stream.
    with torch.random.fork_rng():
        torch.manual_seed(RANDOM_TRUNK_SEED)
        return _resnet50_trunk(weights=None)


def _build_supervised() -> torch.nn.Module:
    from torchvision.models import ResNet50_Weights

    return _resnet50_trunk(weights=ResNet50_Weights.IMAGENET1K_V2)


def _build_ssl() -> torch.nn.Module:
    model = torch.hub.load("facebookresearch/dino:main", "dino_resnet50")
    return model


register_encoder("resnet50_random", 2048, _build_random,
                 notes="seeded random weights, offline, deterministic")
register_encoder("resnet50_supervised", 2048, _build_supervised,
                 notes="ImageNet-supervised, downloads weights on first use")
register_encoder("resnet50_ssl", 2048, _build_ssl,
                 notes="DINO self-supervised, downloads weights on first use")
