"""Image descriptors: joint RGB histogram, HOG and uniform LBP.

Images are plain ``uint8`` numpy arrays of shape ``(H, W)`` or ``(H, W, 3)``.
Every extractor is a pure function of its inputs.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image as PILImage

from .errors import ConfigurationError, InvalidInputError
from .layout import FeatureVector, ModalityLayout, normalize_blocks

LBP_BINS = 59

# Neighbour offsets (row, col) in circular order, starting top-left.
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def _uniform_lookup() -> np.ndarray:
    codes = np.arange(256)
    rotated = ((codes >> 1) | ((codes & 1) << 7)) & 0xFF
    transitions = np.array([bin(c).count("1") for c in codes ^ rotated])
    uniform = codes[transitions <= 2]
    table = np.full(256, len(uniform), dtype=np.intp)
    table[uniform] = np.arange(len(uniform))
    return table


# code -> histogram bin; 58 uniform codes in ascending order, then the catch-all bin
_LBP_TABLE = _uniform_lookup()


@dataclass(frozen=True)
class FeatureParams:
    resize_edge: int = 128
    color_bins: int = 4
    hog_cell: int = 8
    hog_block: int = 2
    hog_bins: int = 9
    hog_eps: float = 1e-6

    def __post_init__(self):
        if self.resize_edge <= 0 or self.hog_cell <= 0 or self.hog_block <= 0:
            raise ConfigurationError(f"non-positive size in {self}")
        if self.resize_edge % self.hog_cell:
            raise ConfigurationError(
                f"resize_edge={self.resize_edge} is not divisible by hog_cell={self.hog_cell}"
            )
        if self.color_bins < 2 or self.hog_bins < 2:
            raise ConfigurationError("bin counts must be >= 2")
        if self.resize_edge // self.hog_cell < self.hog_block:
            raise ConfigurationError("fewer cells per side than cells per block")
        if not self.hog_eps > 0:
            raise ConfigurationError("hog_eps must be positive")

    @property
    def hog_length(self) -> int:
        cells = self.resize_edge // self.hog_cell
        blocks = cells - self.hog_block + 1
        return blocks * blocks * self.hog_block**2 * self.hog_bins

    def layout(self) -> ModalityLayout:
        return ModalityLayout(
            (("color", self.color_bins**3), ("hog", self.hog_length), ("lbp", LBP_BINS))
        )

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# image plumbing


def as_image(data) -> np.ndarray:
    """Validate ``data`` as an 8-bit grayscale or RGB image."""
    img = np.asarray(data)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise InvalidInputError(f"image must be HxW or HxWx3, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise InvalidInputError("zero-area image")
    if img.dtype != np.uint8:
        if np.issubdtype(img.dtype, np.integer) and img.min() >= 0 and img.max() <= 255:
            img = img.astype(np.uint8)
        else:
            raise InvalidInputError(f"expected 8-bit pixel data, got {img.dtype}")
    return img


def load_image(path) -> np.ndarray:
    """Read a PNG/PGM/PPM (or anything Pillow decodes) as grayscale or RGB."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("1", "I", "I;16", "I;16B", "F"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return as_image(arr)


def save_image(path, image) -> None:
    PILImage.fromarray(as_image(image)).save(path)


def resize(image, edge: int) -> np.ndarray:
    """Bilinear resize to an ``edge`` x ``edge`` square."""
    img = as_image(image)
    if img.shape[:2] == (edge, edge):
        return img
    return np.asarray(PILImage.fromarray(img).resize((edge, edge), PILImage.BILINEAR))


def to_gray(image) -> np.ndarray:
    """Luma (ITU-R 601 weights) as float64 on the 0..255 scale."""
    img = as_image(image)
    if img.ndim == 2:
        return img.astype(np.float64)
    rgb = img.astype(np.float64)
    return rgb[:, :, 0] * 0.299 + rgb[:, :, 1] * 0.587 + rgb[:, :, 2] * 0.114


# --------------------------------------------------------------------------
# descriptors


def extract_color_histogram(image, bins_per_channel: int = 4) -> np.ndarray:
    """Joint RGB histogram with ``bins**3`` entries, l1-normalized.

    Bin ``(r, g, b)`` lives at flat index ``(r * bins + g) * bins + b``.
    Grayscale input is treated as R = G = B.
    """
    if bins_per_channel < 2:
        raise InvalidInputError("bins_per_channel must be >= 2")
    img = as_image(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    q = (img.reshape(-1, 3).astype(np.intp) * bins_per_channel) >> 8
    flat = (q[:, 0] * bins_per_channel + q[:, 1]) * bins_per_channel + q[:, 2]
    hist = np.bincount(flat, minlength=bins_per_channel**3).astype(np.float64)
    return hist / hist.sum()


def cell_histograms(gray: np.ndarray, cell: int, bins: int) -> np.ndarray:
    """Per-cell unsigned orientation histograms, shape ``(rows, cols, bins)``.

    Gradients are centred differences ``[-1, 0, 1]``; the first and last
    columns get zero horizontal gradient and the first and last rows zero
    vertical gradient. Votes are magnitude-weighted into hard bins covering
    ``[0, 180)`` degrees.
    """
    g = np.asarray(gray, dtype=np.float64)
    ny, nx = g.shape[0] // cell, g.shape[1] // cell
    if ny == 0 or nx == 0:
        raise InvalidInputError(f"image {g.shape} smaller than one {cell}px cell")
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    mag = np.hypot(gx, gy)
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    orient = np.minimum((angle * bins / 180.0).astype(np.intp), bins - 1)

    h, w = ny * cell, nx * cell
    rows = np.arange(h)[:, None] // cell
    cols = np.arange(w)[None, :] // cell
    index = ((rows * nx + cols) * bins + orient[:h, :w]).ravel()
    hist = np.bincount(index, weights=mag[:h, :w].ravel(), minlength=ny * nx * bins)
    return hist.reshape(ny, nx, bins)


def extract_hog(image, params: FeatureParams) -> np.ndarray:
    """Dalal-Triggs HOG with overlapping blocks (stride one cell).

    Each block of ``hog_block x hog_block`` cells is divided by
    ``sqrt(||v||^2 + eps^2)``. Output is ordered block-row, block-col, cell-row,
    cell-col, orientation.
    """
    gray = to_gray(image)
    b = params.hog_block
    if gray.shape[0] < params.hog_cell or gray.shape[1] < params.hog_cell:
        raise InvalidInputError(f"image {gray.shape} smaller than one {params.hog_cell}px cell")
    hist = cell_histograms(gray, params.hog_cell, params.hog_bins)
    if hist.shape[0] < b or hist.shape[1] < b:
        raise InvalidInputError(f"image {gray.shape} holds fewer than {b}x{b} cells")
    blocks = sliding_window_view(hist, (b, b), axis=(0, 1))  # (by, bx, bins, b, b)
    blocks = blocks.transpose(0, 1, 3, 4, 2).reshape(blocks.shape[0], blocks.shape[1], -1)
    norms = np.sqrt(np.sum(blocks**2, axis=2, keepdims=True) + params.hog_eps**2)
    return (blocks / norms).ravel()


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-neighbour radius-1 codes for interior pixels; bit set when neighbour >= centre."""
    g = np.asarray(gray, dtype=np.float64)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise InvalidInputError(f"LBP needs at least a 3x3 image, got {g.shape}")
    centre = g[1:-1, 1:-1]
    h, w = centre.shape
    codes = np.zeros(centre.shape, dtype=np.intp)
    for bit, (dy, dx) in enumerate(_LBP_OFFSETS):
        neighbour = g[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        codes |= (neighbour >= centre).astype(np.intp) << bit
    return codes


def extract_lbp(image) -> np.ndarray:
    """59-bin uniform LBP histogram, l1-normalized."""
    codes = lbp_codes(to_gray(image))
    hist = np.bincount(_LBP_TABLE[codes.ravel()], minlength=LBP_BINS).astype(np.float64)
    return hist / hist.sum()


def extract_feature_vector(
    image, params: FeatureParams | None = None, layout: ModalityLayout | None = None
) -> FeatureVector:
    """Resize, run the three extractors and give each block unit l2-norm."""
    params = params or FeatureParams()
    expected = params.layout()
    if layout is not None and layout != expected:
        raise ConfigurationError(
            f"layout {layout.to_string()} does not match params ({expected.to_string()})"
        )
    img = resize(image, params.resize_edge)
    raw = np.concatenate(
        [
            extract_color_histogram(img, params.color_bins),
            extract_hog(img, params),
            extract_lbp(img),
        ]
    )
    return FeatureVector(normalize_blocks(raw, expected), expected)


def extract_matrix(images, params: FeatureParams | None = None) -> np.ndarray:
    """Stack feature vectors of several images as rows."""
    params = params or FeatureParams()
    return np.vstack([extract_feature_vector(img, params).values for img in images])


# --------------------------------------------------------------------------
# feature tables on disk
#
# Line 1: "# layout: color=64,hog=8100,lbp=59"; after that one CSV row per
# vector, "id,v1,...,vd", floats written with repr() so they round-trip.

_LAYOUT_PREFIX = "# layout: "


def write_feature_table(path, ids, matrix, layout: ModalityLayout) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != layout.d or matrix.shape[0] != len(ids):
        raise InvalidInputError(
            f"table shape {matrix.shape} does not fit {len(ids)} ids x d={layout.d}"
        )
    with open(path, "w", newline="") as fh:
        fh.write(_LAYOUT_PREFIX + layout.to_string() + "\r\n")
        writer = csv.writer(fh)
        for ident, row in zip(ids, matrix):
            writer.writerow([ident] + [repr(float(x)) for x in row])


def read_feature_table(path) -> tuple[list[str], np.ndarray, ModalityLayout]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(_LAYOUT_PREFIX):
            raise InvalidInputError(f"{path}: missing layout header")
        layout = ModalityLayout.from_string(first[len(_LAYOUT_PREFIX) :])
        ids, rows = [], []
        for record in csv.reader(fh):
            if not record:
                continue
            ids.append(record[0])
            rows.append([float(x) for x in record[1:]])
    matrix = np.array(rows, dtype=float).reshape(len(rows), -1)
    if matrix.shape[1] != layout.d:
        raise InvalidInputError(f"{path}: rows have {matrix.shape[1]} values, layout says {layout.d}")
    return ids, matrix, layout
