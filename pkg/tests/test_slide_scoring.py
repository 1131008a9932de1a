import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from pathx.schemas.schemas import ScoringConfig
from pathx.services.slide_scoring import (
    Tile,
    blank_fraction,
    clarity_laplacian,
    count_nuclei,
    load_slides,
    score_tile,
    score_tiles,
    select_best_slice,
)

WHITE = (255, 255, 255)
PINK = (236, 190, 214)
NUCLEUS = (60, 40, 140)


def solid(color, size=64):
    return np.tile(np.array(color, dtype=np.uint8), (size, size, 1))


def with_disks(pixels, centers, radius=10, color=NUCLEUS):
    pixels = pixels.copy()
    yy, xx = np.mgrid[0:pixels.shape[0], 0:pixels.shape[1]]
    for cy, cx in centers:
        pixels[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = color
    return pixels


def tile(pixels, origin=(0, 0), slide_id="s"):
    return Tile(slide_id=slide_id, origin=origin, pixels=pixels)


def laplacian_oracle(gray):
    height, width = gray.shape
    values = []
    for y in range(1, height - 1):
        for x in range(1, width - 1):
            values.append(gray[y - 1, x] + gray[y + 1, x] + gray[y, x - 1] + gray[y, x + 1] - 4 * gray[y, x])
    return float(np.var(values))


def test_count_nuclei_all_white():
    assert count_nuclei(tile(solid(WHITE)), ScoringConfig()) == 0


def test_count_three_disjoint_disks():
    pixels = with_disks(solid(PINK, 96), [(20, 20), (20, 70), (70, 45)])
    config = ScoringConfig()
    assert count_nuclei(tile(pixels), config) == 3

    # flood-fill oracle on the same mask
    mask = (pixels[..., 2].astype(int) > pixels[..., 0]) & (
        0.299 * pixels[..., 0] + 0.587 * pixels[..., 1] + 0.114 * pixels[..., 2] < config.dark_threshold
    )
    _, oracle = ndimage.label(mask, structure=np.ones((3, 3)))
    assert oracle == 3


def test_overlapping_disks_count_once():
    pixels = with_disks(solid(PINK, 96), [(40, 40), (40, 52)])
    assert count_nuclei(tile(pixels), ScoringConfig()) == 1


def test_small_specks_are_ignored():
    pixels = with_disks(solid(PINK, 64), [(30, 30)], radius=2)
    assert count_nuclei(tile(pixels), ScoringConfig(min_area=30)) == 0
    assert count_nuclei(tile(pixels), ScoringConfig(min_area=5)) == 1


def test_count_is_translation_invariant():
    config = ScoringConfig()
    a = with_disks(solid(PINK, 96), [(20, 20), (20, 50)])
    b = with_disks(solid(PINK, 96), [(45, 30), (45, 60)])
    assert count_nuclei(tile(a), config) == count_nuclei(tile(b), config) == 2


def test_clarity_constant_tile():
    assert clarity_laplacian(tile(solid((128, 128, 128)))) == pytest.approx(0.0, abs=1e-20)


def test_clarity_checkerboard_matches_oracle():
    board = ((np.indices((8, 8)).sum(axis=0) % 2) * 255).astype(np.uint8)
    pixels = np.repeat(board[..., None], 3, axis=2)
    gray = 0.299 * board + 0.587 * board + 0.114 * board
    value = clarity_laplacian(tile(pixels))
    assert value == pytest.approx(laplacian_oracle(gray.astype(np.float64)), rel=1e-12)


def test_clarity_random_tile_matches_oracle():
    pixels = np.random.default_rng(8).integers(0, 256, size=(17, 23, 3)).astype(np.uint8)
    rgb = pixels.astype(np.float64)
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    assert clarity_laplacian(tile(pixels)) == pytest.approx(laplacian_oracle(gray), rel=1e-12)


def test_blur_lowers_clarity():
    generator = np.random.default_rng(5)
    pixels = generator.integers(0, 256, size=(48, 48, 3)).astype(np.uint8)
    blurred = ndimage.gaussian_filter(pixels.astype(np.float64), sigma=(1.5, 1.5, 0))
    blurred = np.clip(np.rint(blurred), 0, 255).astype(np.uint8)
    assert clarity_laplacian(tile(blurred)) < clarity_laplacian(tile(pixels))


def test_blank_fraction():
    assert blank_fraction(tile(solid(WHITE)), 220) == 1.0
    assert blank_fraction(tile(solid((0, 0, 0))), 220) == 0.0
    half = solid((0, 0, 0))
    half[:32] = WHITE
    assert blank_fraction(tile(half), 220) == 0.5


def test_all_white_tile_scores_minus_blank_weight():
    config = ScoringConfig(blank_weight=1000.0)
    score = score_tile(tile(solid(WHITE)), config)
    assert score.num_nuclei == 0
    assert score.score == -1000.0


def test_score_is_the_composite():
    generator = np.random.default_rng(8)
    pixels = with_disks(solid(PINK, 96), [(20, 20), (70, 70)])
    pixels[:10] = WHITE
    pixels = np.clip(pixels.astype(int) + generator.integers(-5, 6, size=pixels.shape), 0, 255).astype(np.uint8)
    score = score_tile(tile(pixels), ScoringConfig())
    assert score.score == score.num_nuclei * score.clarity - score.blank_space
    assert score.blank_space == score.blank_fraction * 1000.0


def test_white_padding_never_raises_score():
    config = ScoringConfig()
    pixels = solid(PINK, 64)
    pixels[10:20, 10:50] = (100, 100, 100)
    before = score_tile(tile(pixels), config)
    padded = pixels.copy()
    padded[:16] = WHITE
    after = score_tile(tile(padded), config)
    assert after.num_nuclei == before.num_nuclei == 0
    assert after.blank_fraction >= before.blank_fraction
    assert after.score <= before.score


def test_select_best_slice_single_tile():
    only = tile(solid(PINK))
    best, _ = select_best_slice([only], ScoringConfig())
    assert best is only


def test_select_best_slice_tie_break():
    config = ScoringConfig()
    pixels = with_disks(solid(PINK, 64), [(32, 32)])
    low = tile(solid(WHITE), origin=(0, 0))
    tie_late = tile(pixels, origin=(0, 64))
    tie_early = tile(pixels, origin=(64, 0))
    best, _ = select_best_slice([low, tie_late, tie_early], config)
    assert best is tie_early
    best, _ = select_best_slice([tie_early, tie_late, low], config)
    assert best is tie_early


def test_select_best_slice_matches_sequential_argmax():
    generator = np.random.default_rng(21)
    config = ScoringConfig()
    tiles = []
    for i in range(100):
        centers = [tuple(generator.integers(12, 52, size=2)) for _ in range(generator.integers(0, 4))]
        pixels = with_disks(solid(PINK, 64), centers, radius=int(generator.integers(4, 9)))
        if generator.uniform() < 0.3:
            pixels[: generator.integers(1, 32)] = WHITE
        noisy = pixels.astype(int) + generator.integers(-6, 7, size=pixels.shape)
        tiles.append(tile(np.clip(noisy, 0, 255).astype(np.uint8), origin=((i % 10) * 64, (i // 10) * 64)))

    scores = [score_tile(t, config).score for t in tiles]
    expected = None
    for i, value in enumerate(scores):
        if expected is None or value > scores[expected]:
            expected = i
    best, best_score = select_best_slice(tiles, config)
    assert best is tiles[expected]
    assert best_score.score == scores[expected]

    parallel, _ = select_best_slice(tiles[::-1], config, workers=4)
    assert parallel is tiles[expected]


def test_parallel_scoring_preserves_order():
    generator = np.random.default_rng(2)
    tiles = [tile(generator.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)) for _ in range(6)]
    assert score_tiles(tiles, ScoringConfig(), workers=3) == score_tiles(tiles, ScoringConfig(), workers=1)


def test_select_best_slice_empty():
    with pytest.raises(ValueError, match="no tiles"):
        select_best_slice([], ScoringConfig())


def test_load_slides_isolates_corrupt_files(tmp_path):
    slide = tmp_path / "slide_a"
    slide.mkdir()
    Image.fromarray(solid(PINK, 32)).save(slide / "0_0.png")
    Image.fromarray(with_disks(solid(PINK, 32), [(16, 16)], radius=6)).save(slide / "0_1.png")
    (slide / "1_0.png").write_bytes(b"not a png")

    slides, errors = load_slides(str(tmp_path), tile_size=32)
    assert [t.col for t in slides["slide_a"]] == [0, 1]
    assert slides["slide_a"][1].origin == (32, 0)
    assert len(errors) == 1 and errors[0][0].endswith("1_0.png")


def test_large_png_is_gridded(tmp_path):
    Image.fromarray(solid(PINK, 70)).save(tmp_path / "big.png")
    slides, errors = load_slides(str(tmp_path), tile_size=32)
    assert not errors
    assert [t.origin for t in slides["big"]] == [(0, 0), (32, 0), (0, 32), (32, 32)]
