"""Call-counting wrappers around backends, used to check cache behaviour."""

from __future__ import annotations

import threading
from collections import Counter

from .base import Backends, EmbedderBackend, GeneratorBackend


class _Counted:
    def __init__(self, inner):
        self.inner = inner
        self.calls = Counter()
        self._lock = threading.Lock()

    def _hit(self, name):
        with self._lock:
            self.calls[name] += 1

    def __getattr__(self, name):
        return getattr(self.inner, name)


class CountingGenerator(_Counted, GeneratorBackend):
    def __init__(self, inner: GeneratorBackend):
        super().__init__(inner)
        self.identity = inner.identity
        self.latent_shape = inner.latent_shape
        self.z_dim = inner.z_dim
        self.output_size = inner.output_size

    def map(self, z):
        self._hit("map")
        return self.inner.map(z)

    def synthesize(self, w):
        self._hit("synthesize")
        return self.inner.synthesize(w)


class CountingEmbedder(_Counted, EmbedderBackend):
    def __init__(self, inner: EmbedderBackend):
        super().__init__(inner)
        self.identity = inner.identity
        self.embed_dim = inner.embed_dim
        self.input_size = inner.input_size

    def embed_image(self, images):
        self._hit("embed_image")
        return self.inner.embed_image(images)

    def embed_text(self, texts):
        self._hit("embed_text")
        return self.inner.embed_text(texts)


class CountingTransfer(_Counted):
    def __init__(self, inner):
        super().__init__(inner)
        self.identity = inner.identity

    def extract_features(self, image):
        self._hit("extract_features")
        return self.inner.extract_features(image)

    def decode(self, features):
        self._hit("decode")
        return self.inner.decode(features)


def counting(backends: Backends) -> Backends:
    transfer = CountingTransfer(backends.transfer) if backends.transfer is not None else None
    return Backends(CountingGenerator(backends.generator), CountingEmbedder(backends.embedder), transfer)


def total_calls(*wrapped) -> int:
    return sum(sum(w.calls.values()) for w in wrapped)
