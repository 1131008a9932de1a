import numpy as np
import pytest
from PIL import Image

from pathx.config import load_pipeline_config
from pathx.ml.clustering import cut_tree, hier_cluster
from pathx.ml.numeric import Rng
from pathx.ml.vit import load_weights
from pathx.models.models import ClusterAssignment
from pathx.schemas.schemas import SynthConfig
from pathx.services.survival import pairwise_logrank
from pathx.simulators.cohort_simulator import CohortSimulator, default_hazards
from pathx.utils.csv_io import read_clinical, read_features, read_truth

SMALL = SynthConfig(n=12, k=3, feature_dim=8, planted_dim=3, tiles_per_side=1, tile_size=32)


def test_default_hazards():
    assert default_hazards(3) == [0.001, 0.005, 0.02]
    assert default_hazards(2) == [0.001, 0.02]
    hazards = default_hazards(5)
    assert hazards[0] == pytest.approx(0.001) and hazards[-1] == pytest.approx(0.02)
    assert np.all(np.diff(hazards) > 0)


def test_groups_are_balanced():
    cohort = CohortSimulator(SynthConfig(n=10, k=3, feature_dim=8), Rng(1)).generate()
    assert sorted(np.bincount(cohort.groups).tolist()) == [3, 3, 4]
    assert cohort.features.shape == (10, 8)
    assert np.all((cohort.features > 0) & (cohort.features < 1))
    assert set(cohort.truth.values()) == {"Low", "Medium", "High"}


def test_no_censoring_means_every_case_has_an_event():
    cohort = CohortSimulator(SynthConfig(n=40, k=2, censoring_rate=0.0, feature_dim=8), Rng(2)).generate()
    assert all(record.event for record in cohort.records)


def test_full_censoring():
    cohort = CohortSimulator(SynthConfig(n=40, k=2, censoring_rate=1.0, feature_dim=8), Rng(2)).generate()
    assert not any(record.event for record in cohort.records)


def test_hazard_count_must_match_groups():
    with pytest.raises(ValueError):
        CohortSimulator(SynthConfig(k=3, hazards=[0.01, 0.02]), Rng(0))


def test_written_cohort_layout(tmp_path):
    out = tmp_path / "cohort"
    cohort = CohortSimulator(SMALL, Rng(7).child(0)).write(str(out), seed=7)

    case_ids, features = read_features(str(out / "features.csv"))
    assert case_ids == cohort.case_ids == [f"case_{i:03d}" for i in range(12)]
    np.testing.assert_array_equal(features, cohort.features)

    records = read_clinical(str(out / "clinical.csv"))
    assert [r.case_id for r in records] == case_ids
    assert read_truth(str(out / "truth.csv")) == cohort.truth

    tile = np.asarray(Image.open(out / "tiles" / "case_000" / "0_0.png"))
    assert tile.shape == (32, 32, 3) and tile.dtype == np.uint8

    config = load_pipeline_config(str(out / "pathx.toml"))
    assert config.seed == 7
    assert config.paths.tiles_dir == str(out / "tiles")
    assert config.autoencoder.layer_sizes[0] == 8
    weights = load_weights(config.paths.vit_weights)
    assert weights.config == config.vit
    assert weights.patch_projection.shape == (16 * 16 * 3, 8)


def test_same_seed_same_files(tmp_path):
    for name in ("a", "b"):
        CohortSimulator(SMALL, Rng(7).child(0)).write(str(tmp_path / name), seed=7)
    for relative in ("features.csv", "clinical.csv", "truth.csv", "weights.vitw", "tiles/case_005/0_0.png"):
        assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


def test_zero_separation_gives_null_log_rank():
    p_values = []
    for seed in range(50):
        config = SynthConfig(n=80, k=2, separation=0.0, feature_dim=16)
        cohort = CohortSimulator(config, Rng(seed)).generate()
        dendrogram = hier_cluster(cohort.features, "ward", cohort.case_ids)
        assignment: ClusterAssignment = cut_tree(dendrogram, 2)
        (result,) = pairwise_logrank(assignment, cohort.records)
        p_values.append(result.p_value)
    assert 0.2 <= float(np.median(p_values)) <= 0.8


def test_planted_separation_is_recovered():
    config = SynthConfig(n=300, k=3, feature_dim=16)
    cohort = CohortSimulator(config, Rng(7)).generate()
    assignment = cut_tree(hier_cluster(cohort.features, "ward", cohort.case_ids), 3)
    results = pairwise_logrank(assignment, cohort.records)
    assert all(r.p_value < 0.01 for r in results)
