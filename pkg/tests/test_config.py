import numpy as np
import pytest

from pathx.config import Settings, load_pipeline_config
from pathx.errors import InputFormatError, UsageError
from pathx.models.models import ClinicalRecord
from pathx.schemas.schemas import PipelineConfig, ViTConfig
from pathx.utils.csv_io import read_clinical, read_features, write_clinical, write_features


def test_relative_paths_resolve_against_the_config_file(tmp_path):
    config_dir = tmp_path / "study"
    config_dir.mkdir()
    path = config_dir / "pathx.toml"
    path.write_text(
        'cohort = "TCGA-LUAD"\nseed = 11\n\n[paths]\ntiles_dir = "tiles"\nclinical_csv = "/data/clinical.csv"\n\n'
        "[clustering]\nks = [3]\n",
        encoding="utf-8",
    )
    config = load_pipeline_config(str(path))
    assert config.cohort == "TCGA-LUAD" and config.seed == 11
    assert config.paths.tiles_dir == str(config_dir / "tiles")
    assert config.paths.clinical_csv == "/data/clinical.csv"
    assert config.clustering.ks == [3]
    assert config.vit == ViTConfig()


def test_defaults():
    config = PipelineConfig()
    assert config.autoencoder.layer_sizes == [1024, 512, 256, 128]
    assert config.vit.embed_dim == 1024 and config.vit.num_patches == 196
    assert (config.shap.n_samples, config.shap.noise_sigma, config.shap.top_k) == (200, 0.09, 10)
    assert config.classify.knn_k == 5


def test_invalid_config_is_a_usage_error(tmp_path):
    broken = tmp_path / "broken.toml"
    broken.write_text("seed = [", encoding="utf-8")
    with pytest.raises(UsageError):
        load_pipeline_config(str(broken))

    geometry = tmp_path / "geometry.toml"
    geometry.write_text("[vit]\nimage_size = 30\npatch_size = 16\n", encoding="utf-8")
    with pytest.raises(UsageError, match="multiple of patch_size"):
        load_pipeline_config(str(geometry))

    with pytest.raises(UsageError):
        load_pipeline_config(str(tmp_path / "absent.toml"))


def test_settings_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("PATHX_SEED", "99")
    monkeypatch.setenv("PATHX_OUT", str(tmp_path / "env_out"))
    settings = Settings()
    assert settings.seed == 99
    assert settings.output_dir() == str(tmp_path / "env_out")
    assert settings.output_dir("cli_out") == "cli_out"


def test_csv_round_trip_keeps_full_precision(tmp_path):
    features = np.random.default_rng(0).normal(size=(3, 4))
    write_features(str(tmp_path / "features.csv"), ["a", "b", "c"], features)
    case_ids, loaded = read_features(str(tmp_path / "features.csv"))
    assert case_ids == ["a", "b", "c"]
    assert loaded.tobytes() == features.tobytes()

    records = [ClinicalRecord(case_id="007", time=12.5, event=True, label="High"),
               ClinicalRecord(case_id="008", time=3.0, event=False)]
    write_clinical(str(tmp_path / "clinical.csv"), records)
    assert read_clinical(str(tmp_path / "clinical.csv")) == records


@pytest.mark.parametrize("body", [
    "case_id,time_days,event\nc1,10,2\n",
    "case_id,time_days,event\nc1,10,1.5\n",
    "case_id,time_days,event\nc1,-4,1\n",
    "case_id,time_days\nc1,10\n",
    "case_id,time_days,event\nc1,10,1\nc1,12,0\n",
])
def test_bad_clinical_files(tmp_path, body):
    path = tmp_path / "clinical.csv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(InputFormatError):
        read_clinical(str(path))


def test_features_with_gaps_are_rejected(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("case_id,f0,f1\na,0.1,\nb,0.3,0.4\n", encoding="utf-8")
    with pytest.raises(InputFormatError):
        read_features(str(path))


def test_reloaded_features_are_bit_identical(tmp_path):
    generator = np.random.default_rng(5)
    features = np.concatenate([
        generator.normal(size=(20, 50)),
        generator.uniform(0.0, 1.0, size=(20, 50)) * 10.0 ** generator.integers(-12, 12, size=(20, 50)),
    ])
    ids = [f"case_{i:03d}" for i in range(features.shape[0])]
    write_features(str(tmp_path / "features.csv"), ids, features)
    _, loaded = read_features(str(tmp_path / "features.csv"))
    np.testing.assert_array_equal(loaded.view(np.uint64), features.view(np.uint64))


def test_integral_float_events_are_accepted(tmp_path):
    path = tmp_path / "clinical.csv"
    path.write_text("case_id,time_days,event\nc1,10,1.0\nc2,4,0\n", encoding="utf-8")
    assert [r.event for r in read_clinical(str(path))] == [True, False]
