from .base import Backends, EmbedderBackend, GeneratorBackend
from .toy import ToyEmbedder, ToyGenerator


def toy_backends(seed: int = 0) -> Backends:
    """Toy generator, embedder and transfer network with seed-derived weights."""
    from ..transfer import ToyTransferNet

    return Backends(ToyGenerator(seed=seed), ToyEmbedder(seed=seed + 1), ToyTransferNet(seed=seed + 7))


__all__ = ["Backends", "EmbedderBackend", "GeneratorBackend", "ToyEmbedder", "ToyGenerator", "toy_backends"]
