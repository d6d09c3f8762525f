"""Joint text-image embedding providers.

The reference provider is a deterministic, differentiable stand-in for a
pretrained contrastive encoder pair. Text goes through hashed character
trigrams and a fixed Gaussian projection; images through 4x4 grid pooling
and a fixed Gaussian projection. Every vector a provider emits is
L2-normalized, and a provider instance is a pure function of its inputs,
so repeated calls are bit-identical.

The service provider speaks the ``taps-embed/1`` line-delimited JSON
protocol to an external sidecar. It is usable for caption generation and
evaluation but reports itself as non-differentiable, so the trainer
rejects it.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError, ProviderUnavailableError
from .hashing import array_digest, fnv1a64
from .imageio import encode_png_bytes

TEXT_BUCKETS = 4096
IMAGE_GRID = 4
IMAGE_FEATURES = IMAGE_GRID * IMAGE_GRID * 4
DEFAULT_DIM = 64
NORM_GUARD = 1e-8
SERVICE_PROTOCOL = "taps-embed/1"

# Trigram boundary padding: two distinct non-printable sentinels so the
# first and last characters produce their own boundary trigrams.
_PAD_LEFT = "\x02\x02"
_PAD_RIGHT = "\x03\x03"

# Composited images can overshoot [0, 1] by a few ulp of rounding; clamping
# them would break differentiability, so validation tolerates that much.
_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class ProviderDescriptor:
    name: str
    dimension: int
    differentiable: bool
    seed: int = 0


def text_trigrams(text: str) -> list[str]:
    """Character trigrams of the trimmed, lowercased text with boundary padding."""
    t = text.strip().lower()
    padded = _PAD_LEFT + t + _PAD_RIGHT
    return [padded[i:i + 3] for i in range(len(padded) - 2)]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit-norm vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def _as_pixels(image) -> np.ndarray:
    pixels = getattr(image, "pixels", image)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] not in (3, 4):
        raise InvalidInputError(f"expected (H, W, 3|4) image, got shape {pixels.shape}")
    h, w = pixels.shape[:2]
    if h < IMAGE_GRID or w < IMAGE_GRID:
        raise InvalidInputError(f"image dimensions too small: {h}x{w} (minimum 4x4)")
    lo = float(pixels.min())
    hi = float(pixels.max())
    if lo < -_RANGE_TOL or hi > 1.0 + _RANGE_TOL:
        raise InvalidInputError(f"channel values outside [0, 1]: min={lo!r} max={hi!r}")
    return pixels


def _grid_bounds(n: int) -> list[tuple[int, int]]:
    return [(n * i // IMAGE_GRID, n * (i + 1) // IMAGE_GRID) for i in range(IMAGE_GRID)]


def pool_image_features(pixels: np.ndarray) -> np.ndarray:
    """4x4 grid of per-cell mean (R, G, B, A); alpha is 1 for RGB input."""
    h, w = pixels.shape[:2]
    has_alpha = pixels.shape[2] == 4
    feats = np.empty(IMAGE_FEATURES, dtype=np.float64)
    for gi, (r0, r1) in enumerate(_grid_bounds(h)):
        for gj, (c0, c1) in enumerate(_grid_bounds(w)):
            cell = pixels[r0:r1, c0:c1]
            base = (gi * IMAGE_GRID + gj) * 4
            feats[base:base + 3] = cell[:, :, :3].reshape(-1, 3).mean(axis=0)
            feats[base + 3] = cell[:, :, 3].mean() if has_alpha else 1.0
    return feats


class ReferenceProvider:
    """Deterministic offline provider; differentiable on the image side.

    Text: hashed-trigram counts into 4096 buckets (seeded 64-bit FNV-1a),
    then a fixed seed-derived Gaussian projection to D dims, L2-normalized.
    Image: 4x4 grid pooling to 64 features (mean R, G, B, alpha per cell),
    then a fixed Gaussian projection and L2 normalization. A pre-norm below
    1e-8 falls back to a fixed seed-derived unit vector with zero gradient.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 1:
            raise InvalidInputError(f"dimension must be positive, got {dim}")
        self._descriptor = ProviderDescriptor("reference", dim, True, seed)
        text_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
        image_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
        fb_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
        self._text_proj = text_rng.standard_normal((TEXT_BUCKETS, dim))
        self._image_proj = image_rng.standard_normal((IMAGE_FEATURES, dim))
        fallback = fb_rng.standard_normal(dim)
        self._fallback = fallback / np.linalg.norm(fallback)
        for arr in (self._text_proj, self._image_proj, self._fallback):
            arr.flags.writeable = False
        self._text_cache: dict[str, np.ndarray] = {}

    @property
    def descriptor(self) -> ProviderDescriptor:
        return self._descriptor

    @property
    def dimension(self) -> int:
        return self._descriptor.dimension

    def param_hash(self) -> str:
        return array_digest(self._text_proj, self._image_proj, self._fallback)

    def encode_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise InvalidInputError("text is empty after trimming")
        key = text.strip().lower()
        cached = self._text_cache.get(key)
        if cached is not None:
            return cached
        counts = np.zeros(TEXT_BUCKETS, dtype=np.float64)
        seed = self._descriptor.seed
        for tri in text_trigrams(key):
            counts[fnv1a64(tri.encode("utf-8"), seed) % TEXT_BUCKETS] += 1.0
        vec = counts @ self._text_proj
        norm = np.linalg.norm(vec)
        vec = self._fallback.copy() if norm < NORM_GUARD else vec / norm
        vec.flags.writeable = False
        self._text_cache[key] = vec
        return vec

    def encode_image(self, image) -> np.ndarray:
        out, _ = self.encode_image_cached(image)
        return out

    def encode_image_cached(self, image):
        """Encode and return (embedding, cache) for a later VJP call."""
        pixels = _as_pixels(image)
        feats = pool_image_features(pixels)
        vec = feats @ self._image_proj
        norm = float(np.linalg.norm(vec))
        guarded = norm < NORM_GUARD
        out = self._fallback.copy() if guarded else vec / norm
        cache = {
            "shape": pixels.shape,
            "norm": norm,
            "out": out,
            "guarded": guarded,
        }
        return out, cache

    def encode_image_vjp(self, cache, g_out: np.ndarray) -> np.ndarray:
        """Pull an embedding-space gradient back to pixel space."""
        h, w, c = cache["shape"]
        g_pixels = np.zeros((h, w, c), dtype=np.float64)
        if cache["guarded"]:
            return g_pixels
        e = cache["out"]
        g_vec = (g_out - e * np.dot(e, g_out)) / cache["norm"]
        g_feats = self._image_proj @ g_vec
        n_chan = 4 if c == 4 else 3
        for gi, (r0, r1) in enumerate(_grid_bounds(h)):
            for gj, (c0, c1) in enumerate(_grid_bounds(w)):
                base = (gi * IMAGE_GRID + gj) * 4
                count = (r1 - r0) * (c1 - c0)
                for ch in range(n_chan):
                    g_pixels[r0:r1, c0:c1, ch] += g_feats[base + ch] / count
        return g_pixels


# --- embedding cache file (magic "EMB1") ------------------------------------

_CACHE_MAGIC = b"EMB1"


@dataclass
class EmbeddingCache:
    """In-memory key -> float32 embedding map with a provenance descriptor."""

    descriptor: ProviderDescriptor
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def put(self, key: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (self.descriptor.dimension,):
            raise InvalidInputError(
                f"vector shape {vec.shape} does not match cache dimension "
                f"{self.descriptor.dimension}")
        self.vectors[key] = vec

    def get(self, key: str):
        return self.vectors.get(key)

    def __len__(self) -> int:
        return len(self.vectors)


def cache_save(cache: EmbeddingCache, path) -> None:
    dim = cache.descriptor.dimension
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", dim, len(cache.vectors)))
        for key in sorted(cache.vectors):
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(cache.vectors[key].astype("<f4").tobytes())


def cache_load(path) -> EmbeddingCache:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CACHE_MAGIC:
        raise FormatError("bad magic bytes (expected EMB1)", path=path, offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", path=path, offset=len(data))
    dim, count = struct.unpack_from("<II", data, 4)
    if dim == 0:
        raise FormatError("declared dimension is zero", path=path, offset=4)
    cache = EmbeddingCache(ProviderDescriptor("cache-file", dim, False, 0))
    offset = 12
    for _ in range(count):
        if offset + 4 > len(data):
            raise FormatError("declared count exceeds body length",
                              path=path, offset=offset)
        (key_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + key_len + 4 * dim
        if end > len(data):
            raise FormatError("declared count exceeds body length",
                              path=path, offset=offset)
        key = data[offset:offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(data[offset:offset + 4 * dim], dtype="<f4").copy()
        offset += 4 * dim
        cache.vectors[key] = vec
    if offset != len(data):
        raise FormatError("trailing bytes after last record", path=path, offset=offset)
    return cache


# --- sidecar client ----------------------------------------------------------

MAX_SERVICE_PAYLOAD = 16 * 1024 * 1024


class ServiceProvider:
    """Client for an embedding sidecar speaking ``taps-embed/1``.

    One TCP connection, requests serialized behind a lock. The sidecar's
    gradients are unavailable, so the descriptor reports
    ``differentiable=False`` and training refuses this provider.
    """

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise InvalidInputError(f"service address must be host:port, got {address!r}")
        self._lock = threading.Lock()
        self._next_id = 0
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            self._file = self._sock.makefile("rwb")
            handshake = self._file.readline()
            if not handshake:
                raise ProviderUnavailableError("sidecar closed connection before handshake")
            hello = json.loads(handshake)
        except (OSError, ValueError) as exc:
            raise ProviderUnavailableError(f"cannot reach sidecar at {address}: {exc}") from exc
        if hello.get("protocol") != SERVICE_PROTOCOL:
            raise ProviderUnavailableError(
                f"unexpected protocol {hello.get('protocol')!r} in handshake")
        dim = int(hello["dimension"])
        model = str(hello.get("model", "unknown"))
        self._descriptor = ProviderDescriptor(f"service:{model}", dim, False, 0)

    @property
    def descriptor(self) -> ProviderDescriptor:
        return self._descriptor

    @property
    def dimension(self) -> int:
        return self._descriptor.dimension

    def close(self) -> None:
        try:
            self._file.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, kind: str, payload: str) -> np.ndarray:
        with self._lock:
            self._next_id += 1
            req_id = self._next_id
            line = json.dumps({"id": req_id, "kind": kind, "payload": payload})
            try:
                self._file.write(line.encode("utf-8") + b"\n")
                self._file.flush()
                raw = self._file.readline()
            except OSError as exc:
                raise ProviderUnavailableError(f"sidecar request failed: {exc}") from exc
        if not raw:
            raise ProviderUnavailableError("sidecar closed the connection")
        try:
            resp = json.loads(raw)
        except ValueError as exc:
            raise ProviderUnavailableError(f"unparseable sidecar response: {exc}") from exc
        if resp.get("id") != req_id:
            raise ProviderUnavailableError(
                f"sidecar echoed id {resp.get('id')} for request {req_id}")
        if resp.get("error"):
            raise ProviderUnavailableError(f"sidecar error: {resp['error']}")
        vec = np.asarray(resp.get("embedding"), dtype=np.float64)
        if vec.shape != (self._descriptor.dimension,):
            raise ProviderUnavailableError(
                f"sidecar returned shape {vec.shape}, expected "
                f"({self._descriptor.dimension},)")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-3:
            raise ProviderUnavailableError(f"sidecar vector norm {norm} not ~1")
        return vec / norm

    def encode_text(self, text: str) -> np.ndarray:
        if not text.strip():
            raise InvalidInputError("text is empty after trimming")
        return self._request("text", text)

    def encode_image(self, image) -> np.ndarray:
        pixels = _as_pixels(image)
        payload = base64.b64encode(encode_png_bytes(pixels)).decode("ascii")
        if len(payload) > MAX_SERVICE_PAYLOAD:
            raise InvalidInputError("image payload exceeds 16 MiB limit")
        return self._request("image", payload)


def make_provider(name: str, *, dim: int = DEFAULT_DIM, seed: int = 0,
                  service_addr: str | None = None):
    """Build a provider from CLI-style settings ('reference' or 'service')."""
    if name == "reference":
        return ReferenceProvider(dim=dim, seed=seed)
    if name == "service":
        if not service_addr:
            raise InvalidInputError("service provider requires a service address")
        return ServiceProvider(service_addr)
    raise InvalidInputError(f"unknown provider {name!r}")
