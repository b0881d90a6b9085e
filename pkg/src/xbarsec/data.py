"""Dataset preparation: MNIST IDX files, synthetic LoRa chirps, CSV vectors.

Everything ends up as length-M vectors in [0, 1] that
:func:`normalize_to_voltage` scales onto the crossbar's read voltage.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IDXFormatError(ValueError):
    pass


def load_idx(data: bytes) -> np.ndarray:
    """Parse an unsigned-byte IDX tensor (rank-3 images or rank-1 labels).

    Gzipped input is accepted transparently.
    """
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 4:
        raise IDXFormatError("truncated IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise IDXFormatError(f"unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IDXFormatError("truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < size:
        raise IDXFormatError(f"IDX payload has {len(data) - header} bytes, header promises {size}")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def dump_idx(tensor: np.ndarray) -> bytes:
    tensor = np.asarray(tensor)
    if tensor.dtype != np.uint8 or tensor.ndim not in (1, 3):
        raise ValueError("only rank-1 or rank-3 uint8 tensors are supported")
    magic = IDX_IMAGES if tensor.ndim == 3 else IDX_LABELS
    return struct.pack(f">I{tensor.ndim}I", magic, *tensor.shape) + tensor.tobytes()


def read_idx(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return load_idx(fh.read())


def resample(values, m: int) -> np.ndarray:
    """Piecewise-linear resample to ``m`` points, endpoints preserved."""
    values = np.asarray(values, dtype=float).ravel()
    if m < 1:
        raise ValueError("target length must be >= 1")
    if len(values) == m:
        return values.copy()
    pos = np.linspace(0.0, len(values) - 1, m)
    return np.interp(pos, np.arange(len(values)), values)


def resample_flatten(image, target_rows: int) -> np.ndarray:
    """Flatten row-major, scale bytes by 1/255 and resample to ``target_rows``."""
    flat = np.asarray(image, dtype=float).ravel() / 255.0
    return resample(flat, target_rows)


def normalize_to_voltage(vec, v_read: float) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    bad = (vec < 0) | (vec > 1)
    if bad.any():
        raise ValueError(f"entries outside [0, 1] at {np.argwhere(bad)[:5].tolist()}")
    return vec * v_read


@dataclass(frozen=True)
class ChirpSpec:
    sf: int
    symbols: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))
        if not 5 <= self.sf <= 12:
            raise ValueError(f"spreading factor must be in [5, 12], got {self.sf}")
        if any(not 0 <= s < self.samples_per_symbol for s in self.symbols):
            raise ValueError(f"symbols must lie in [0, {self.samples_per_symbol})")

    @property
    def samples_per_symbol(self) -> int:
        return 1 << self.sf


def chirp_phase(sf: int, symbol: int) -> np.ndarray:
    """Phase in cycles of one CSS symbol."""
    n_s = 1 << sf
    n = np.arange(n_s, dtype=float)
    return n * n / (2 * n_s) + n * (symbol / n_s - 0.5)


def gen_lora_chirps(spec: ChirpSpec, seed: int = 0, snr_db: float | None = None) -> np.ndarray:
    """Baseband up-chirps, one per symbol, concatenated.

    ``snr_db=None`` means no noise; otherwise seeded complex white Gaussian
    noise at the given per-sample SNR (unit signal power) is added.
    """
    if not spec.symbols:
        return np.zeros(0, dtype=complex)
    x = np.concatenate([np.exp(2j * np.pi * chirp_phase(spec.sf, s)) for s in spec.symbols])
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        sigma = np.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
        x = x + sigma * (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
    return x


def random_chirp_spec(sf: int, n_symbols: int, seed: int) -> ChirpSpec:
    rng = np.random.default_rng(seed)
    return ChirpSpec(sf, tuple(rng.integers(0, 1 << sf, size=n_symbols).tolist()))


def rf_features(iq, target_rows: int) -> np.ndarray:
    """Real part, min-max normalized (constant streams map to 0.5), resampled."""
    re = np.real(np.asarray(iq)).astype(float)
    if re.size == 0:
        raise ValueError("empty IQ stream")
    lo, hi = re.min(), re.max()
    norm = np.full_like(re, 0.5) if hi == lo else (re - lo) / (hi - lo)
    return resample(norm, target_rows)


def load_csv_vectors(path: str | os.PathLike) -> np.ndarray:
    """One sample per line, comma-separated decimals."""
    return np.loadtxt(path, delimiter=",", ndmin=2)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    vectors: np.ndarray  # (batch, M) in [0, 1]
    source: str
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("sample vectors must lie in [0, 1]")
        object.__setattr__(self, "vectors", v)

    def voltages(self, v_read: float) -> np.ndarray:
        return normalize_to_voltage(self.vectors, v_read)


def mnist_batch(images: np.ndarray, target_rows: int, labels=None, count: int | None = None) -> SampleBatch:
    images = images[:count] if count else images
    vecs = np.stack([resample_flatten(img, target_rows) for img in images])
    return SampleBatch(vecs, "mnist", None if labels is None else np.asarray(labels)[: len(vecs)])


def lora_batch(target_rows: int, count: int, seed: int, sf: int = 7, symbols_per_sample: int = 4,
               snr_db: float | None = None) -> SampleBatch:
    ss = np.random.SeedSequence(seed).spawn(count)
    vecs = []
    for child in ss:
        s = int(child.generate_state(1)[0])
        spec = random_chirp_spec(sf, symbols_per_sample, s)
        vecs.append(rf_features(gen_lora_chirps(spec, s, snr_db), target_rows))
    return SampleBatch(np.stack(vecs), "lora")


def csv_batch(path: str | os.PathLike, target_rows: int) -> SampleBatch:
    raw = load_csv_vectors(path)
    lo, hi = raw.min(), raw.max()
    norm = np.full_like(raw, 0.5) if hi == lo else (raw - lo) / (hi - lo)
    return SampleBatch(np.stack([resample(r, target_rows) for r in norm]), "csv")


def uniform_batch(target_rows: int, count: int, seed: int) -> SampleBatch:
    return SampleBatch(np.random.default_rng(seed).uniform(size=(count, target_rows)), "uniform-random")
