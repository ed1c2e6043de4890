"""Image ingestion: binary PNM parsing/serialization, color augmentations,
and a frozen random-projection featurizer standing in for a fixed pretrained
backbone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, TruncatedFileError, FileFormatError
from .seeding import rng_from


@dataclass
class PixelImage:
    """Raster image; pixels shaped (height, width, channels), dtype uint16."""

    width: int
    height: int
    channels: int
    max_value: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if not 1 <= self.max_value <= 65535:
            raise ValueError(f"max_value {self.max_value} outside [1, 65535]")
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"pixel block {self.pixels.shape} != ({self.height}, {self.width}, {self.channels})"
            )
        if self.pixels.size and int(self.pixels.max()) > self.max_value:
            raise ValueError("sample exceeds max_value")


def _read_header_tokens(data: bytes, count: int, start: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated ASCII integers, honoring '#' comments."""
    tokens: list[int] = []
    pos = start
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        tok = bytearray()
        while pos < len(data) and not data[pos : pos + 1].isspace():
            tok += data[pos : pos + 1]
            pos += 1
        if not tok:
            raise TruncatedFileError("header ended before all fields were read")
        try:
            tokens.append(int(tok))
        except ValueError:
            raise FileFormatError(f"bad header token {bytes(tok)!r}") from None
    return tokens, pos


def parse_pnm(data: bytes) -> PixelImage:
    """Parse a binary PNM: P5 (grayscale) or P6 (RGB).

    Samples follow a single whitespace byte after the maxval field; maxval
    above 255 means two bytes per sample, most significant byte first.
    """
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise BadMagicError(f"unsupported magic {magic!r}; expected P5 or P6")
    (width, height, maxval), pos = _read_header_tokens(data, 3, 2)
    if width < 1 or height < 1:
        raise FileFormatError(f"bad dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise FileFormatError(f"maxval {maxval} outside [1, 65535]")
    pos += 1  # the single whitespace byte after maxval
    n_samples = width * height * channels
    wide = maxval > 255
    need = n_samples * (2 if wide else 1)
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise TruncatedFileError(f"payload has {len(payload)} bytes, need {need}")
    raw = np.frombuffer(payload, dtype=">u2" if wide else np.uint8, count=n_samples)
    pixels = raw.astype(np.uint16).reshape(height, width, channels)
    if int(pixels.max()) > maxval:
        raise FileFormatError("sample value exceeds declared maxval")
    return PixelImage(width, height, channels, maxval, pixels)


def serialize_pnm(img: PixelImage) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n%d\n" % (img.width, img.height, img.max_value)
    if img.max_value > 255:
        body = img.pixels.astype(">u2").tobytes()
    else:
        body = img.pixels.astype(np.uint8).tobytes()
    return header + body


def gamma_correct(img: PixelImage, gamma: float) -> PixelImage:
    """Per-sample s -> round(max * (s/max)^gamma); gamma limited to [0.5, 2.0]."""
    if not 0.5 <= gamma <= 2.0:
        raise ValueError(f"gamma {gamma} outside [0.5, 2.0]")
    scaled = img.pixels.astype(np.float64) / img.max_value
    out = np.rint(img.max_value * np.power(scaled, gamma)).astype(np.uint16)
    return PixelImage(img.width, img.height, img.channels, img.max_value, out)


def permute_channels(img: PixelImage, perm: tuple[int, int, int]) -> PixelImage:
    """Output channel i = input channel perm[i]."""
    if img.channels != 3:
        raise ValueError("channel permutation requires a 3-channel image")
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f"{perm} is not a permutation of (0, 1, 2)")
    out = img.pixels[:, :, list(perm)].copy()
    return PixelImage(img.width, img.height, img.channels, img.max_value, out)


def box_downsample(img: PixelImage, size: int = 64) -> np.ndarray:
    """Mean over index-range boxes to a (size, size, channels) float array in [0, 1].

    Box i spans input rows [i*h//size, (i+1)*h//size), widened to one row when
    the image is smaller than the target (same rule for columns).
    """
    pix = img.pixels.astype(np.float64) / img.max_value
    h, w = img.height, img.width
    r_starts = np.array([(i * h) // size for i in range(size)])
    c_starts = np.array([(j * w) // size for j in range(size)])
    r_counts = np.maximum(np.diff(np.append(r_starts, h)), 1)
    c_counts = np.maximum(np.diff(np.append(c_starts, w)), 1)
    summed = np.add.reduceat(pix, r_starts, axis=0)
    summed = np.add.reduceat(summed, c_starts, axis=1)
    return summed / (r_counts[:, None] * c_counts[None, :])[:, :, None]


class FrozenBackbone:
    """Fixed seeded Gaussian projection of a 64x64 downsampled image, rectified.

    Never updated by training; the trainable encoders sit on top of it.
    """

    INPUT_SIZE = 64

    def __init__(self, seed: int, channels: int, feature_dim: int = 256):
        if channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        self.seed = int(seed)
        self.channels = channels
        self.feature_dim = int(feature_dim)
        in_dim = self.INPUT_SIZE * self.INPUT_SIZE * channels
        rng = rng_from(self.seed, channels)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(self.feature_dim, in_dim))

    def operator_norm(self) -> float:
        return float(np.linalg.svd(self.projection, compute_uv=False)[0])


def featurize(img: PixelImage, backbone: FrozenBackbone) -> np.ndarray:
    """Downsample, normalize to [0, 1], project and rectify."""
    if img.channels != backbone.channels:
        raise ValueError(
            f"image has {img.channels} channel(s), backbone expects {backbone.channels}"
        )
    flat = box_downsample(img, backbone.INPUT_SIZE).reshape(-1)
    return np.maximum(backbone.projection @ flat, 0.0)


def select_press_frame(frames: list[PixelImage]) -> int:
    """Index of the frame whose mean intensity deviates most from the first
    frame (proxy for the deepest press in a tactile sequence)."""
    if not frames:
        raise ValueError("empty frame sequence")
    base = frames[0].pixels.astype(np.float64).mean()
    deviations = [abs(f.pixels.astype(np.float64).mean() - base) for f in frames]
    return int(np.argmax(deviations))
