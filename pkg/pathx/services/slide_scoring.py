"""
Slide scoring: nuclei count, Laplacian clarity and blank space combined into
the best-slice score (num_nuclei * clarity - blank_space).
"""

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from pathx.models.models import TileScore
from pathx.schemas.schemas import ScoringConfig

logger = logging.getLogger(__name__)

_TILE_NAME = re.compile(r"^(\d+)_(\d+)\.png$", re.IGNORECASE)
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class Tile:
    slide_id: str
    origin: Tuple[int, int]          # (x, y) pixel offset in the source slide
    pixels: np.ndarray               # (height, width, 3) uint8
    row: int = 0
    col: int = 0
    source: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"tile pixels must be (height, width, 3), got {self.pixels.shape}")
        if self.pixels.shape[0] <= 0 or self.pixels.shape[1] <= 0:
            raise ValueError("tile width and height must be positive")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


def luma(pixels: np.ndarray) -> np.ndarray:
    rgb = pixels.astype(np.float64)
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def nucleus_mask(tile: Tile, config: ScoringConfig) -> np.ndarray:
    """Hematoxylin-like pixels: blue dominates red and the pixel is dark"""
    rgb = tile.pixels.astype(np.int32)
    return (rgb[..., 2] > rgb[..., 0]) & (luma(tile.pixels) < config.dark_threshold)


def count_nuclei(tile: Tile, config: ScoringConfig) -> int:
    """8-connected components of the nucleus mask with area >= min_area"""
    labels, count = ndimage.label(nucleus_mask(tile, config), structure=_EIGHT_CONNECTED)
    if count == 0:
        return 0
    areas = np.bincount(labels.ravel())[1:]
    return int(np.count_nonzero(areas >= config.min_area))


def clarity_laplacian(tile: Tile) -> float:
    """Variance of the 4-neighbour Laplacian of the grayscale tile, borders excluded"""
    gray = luma(tile.pixels)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return 0.0
    response = ndimage.convolve(gray, _LAPLACIAN, mode="reflect")[1:-1, 1:-1]
    return float(np.var(response))


def blank_fraction(tile: Tile, brightness_threshold: float) -> float:
    return float(np.mean(tile.pixels.min(axis=2) >= brightness_threshold))


def score_tile(tile: Tile, config: ScoringConfig) -> TileScore:
    num_nuclei = count_nuclei(tile, config)
    clarity = clarity_laplacian(tile)
    fraction = blank_fraction(tile, config.brightness_threshold)
    blank_space = fraction * config.blank_weight
    return TileScore(
        num_nuclei=num_nuclei,
        clarity=clarity,
        blank_fraction=fraction,
        blank_space=blank_space,
        score=num_nuclei * clarity - blank_space,
    )


def score_tiles(tiles: Sequence[Tile], config: ScoringConfig, workers: int = 1) -> List[TileScore]:
    """Score tiles, possibly in parallel; output order follows input order"""
    if workers <= 1 or len(tiles) <= 1:
        return [score_tile(tile, config) for tile in tiles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda tile: score_tile(tile, config), tiles))


def select_best_slice(
    tiles: Sequence[Tile],
    config: ScoringConfig,
    scores: Optional[Sequence[TileScore]] = None,
    workers: int = 1,
) -> Tuple[Tile, TileScore]:
    """Highest score wins; ties go to the smaller (origin.y, origin.x)"""
    if not tiles:
        raise ValueError("no tiles")
    if scores is None:
        scores = score_tiles(tiles, config, workers)
    best = min(
        range(len(tiles)),
        key=lambda i: (-scores[i].score, tiles[i].origin[1], tiles[i].origin[0]),
    )
    return tiles[best], scores[best]


# -- tile ingestion --

def read_rgb(path: str) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()


def load_tile_file(path: str, slide_id: str) -> Tile:
    match = _TILE_NAME.match(os.path.basename(path))
    if not match:
        raise ValueError(f"tile file name must be <row>_<col>.png: {path}")
    row, col = int(match.group(1)), int(match.group(2))
    pixels = read_rgb(path)
    return Tile(
        slide_id=slide_id,
        origin=(col * pixels.shape[1], row * pixels.shape[0]),
        pixels=pixels,
        row=row,
        col=col,
        source=path,
    )


def grid_image(path: str, slide_id: str, tile_size: int) -> List[Tile]:
    """Cut one large PNG into tile_size squares; right/bottom remainders are dropped"""
    pixels = read_rgb(path)
    rows, cols = pixels.shape[0] // tile_size, pixels.shape[1] // tile_size
    tiles = []
    for row in range(rows):
        for col in range(cols):
            y, x = row * tile_size, col * tile_size
            tiles.append(Tile(
                slide_id=slide_id,
                origin=(x, y),
                pixels=pixels[y:y + tile_size, x:x + tile_size].copy(),
                row=row,
                col=col,
                source=path,
            ))
    if not tiles:
        logger.warning(f"{path} is smaller than one {tile_size}px tile; nothing to score")
    return tiles


def load_slides(tiles_dir: str, tile_size: int) -> Tuple[Dict[str, List[Tile]], List[Tuple[str, str]]]:
    """Load every slide under tiles_dir; unreadable files are returned as (path, error) entries"""
    if not os.path.isdir(tiles_dir):
        raise FileNotFoundError(f"tiles directory not found: {tiles_dir}")

    slides: Dict[str, List[Tile]] = {}
    errors: List[Tuple[str, str]] = []
    for entry in sorted(os.listdir(tiles_dir)):
        path = os.path.join(tiles_dir, entry)
        if os.path.isdir(path):
            for name in sorted(os.listdir(path)):
                if not name.lower().endswith(".png"):
                    continue
                tile_path = os.path.join(path, name)
                try:
                    slides.setdefault(entry, []).append(load_tile_file(tile_path, entry))
                except (OSError, UnidentifiedImageError, ValueError) as e:
                    logger.error(f"❌ Cannot read tile {tile_path}: {e}")
                    errors.append((tile_path, str(e)))
        elif entry.lower().endswith(".png"):
            slide_id = os.path.splitext(entry)[0]
            try:
                slides.setdefault(slide_id, []).extend(grid_image(path, slide_id, tile_size))
            except (OSError, UnidentifiedImageError, ValueError) as e:
                logger.error(f"❌ Cannot read slide image {path}: {e}")
                errors.append((path, str(e)))

    return slides, errors
