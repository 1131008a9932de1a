"""
Pipeline Service: the stages behind each CLI subcommand and the chained run.

Every stage reads and writes documented files under the output directory.
Stage randomness comes from Rng(seed).child(stage index).
"""
import hashlib
import logging
import os
import shutil
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from pathx import __version__
from pathx.errors import InputFormatError, UsageError
from pathx.ml.attribution import EncoderReadout, default_baselines, gradient_shap, localize_features, top_k_features
from pathx.ml.autoencoder import FeatureScaler, encode, load_autoencoder, save_autoencoder, train
from pathx.ml.classifiers import LabeledDataset, evaluate_methods
from pathx.ml.clustering import adjusted_rand_index, cut_tree, hier_cluster
from pathx.ml.numeric import Rng
from pathx.ml.tsne import max_perplexity, tsne_embed
from pathx.ml.vit import encode_batch, load_weights
from pathx.models.models import BestSlice, ClinicalRecord, RunManifest, StageRecord
from pathx.schemas.schemas import PipelineConfig, SynthConfig
from pathx.services.report_service import (
    attribution_rows,
    overlay_document,
    render_overlay,
    write_km_svg,
    write_tsne_svg,
)
from pathx.services.slide_scoring import load_slides, read_rgb, score_tiles, select_best_slice
from pathx.services.survival import assign_risk_labels, pairwise_logrank, risk_curves
from pathx.simulators.cohort_simulator import CohortSimulator
from pathx.utils.csv_io import (
    read_clinical,
    read_features,
    read_latent,
    read_truth,
    write_features,
    write_latent,
    write_rows,
)
from pathx.utils.serializer import read_json, write_json

logger = logging.getLogger(__name__)

STAGE_INDEX = {
    "synth": 0,
    "score": 1,
    "extract": 2,
    "train-ae": 3,
    "encode": 4,
    "stratify": 5,
    "classify": 6,
    "explain": 7,
}

TILE_SCORES = "tile_scores.csv"
BEST_SLICE = "best_slice.json"
TILE_ERRORS = "tile_errors.csv"
BEST_SLICES_DIR = "best_slices"
FEATURES = "features.csv"
MODEL = "autoencoder.aenc"
TRAIN_LOG = "train_log.csv"
LATENT = "latent.csv"
LOGRANK_SUMMARY = "logrank_summary.csv"
CLASSIFICATION_CSV = "classification_report.csv"
CLASSIFICATION_JSON = "classification_report.json"
ATTRIBUTIONS = "attributions.csv"
EXPLAIN_ERRORS = "explain_errors.csv"
OVERLAYS_DIR = "overlays"
MANIFEST = "manifest.json"


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cmd_synth(config: SynthConfig, out_dir: str, seed: int) -> List[str]:
    """Write a synthetic cohort (tiles, features, clinical, truth, toy weights, pathx.toml)"""
    simulator = CohortSimulator(config, Rng(seed).child(STAGE_INDEX["synth"]))
    simulator.write(out_dir, seed)
    return [os.path.join(out_dir, name) for name in ("features.csv", "clinical.csv", "truth.csv", "weights.vitw", "pathx.toml")]


class PipelineService:
    """Runs pipeline stages for one config and output directory"""

    def __init__(self, config: PipelineConfig, out_dir: str, workers: Optional[int] = None):
        self.config = config
        self.out_dir = out_dir
        self.workers = workers or config.workers
        self.stages: List[StageRecord] = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    def rng(self, stage: str) -> Rng:
        return Rng(self.config.seed).child(STAGE_INDEX[stage])

    def _require(self, value: Optional[str], name: str) -> str:
        if not value:
            raise UsageError(f"paths.{name} is not set")
        return value

    def _require_file(self, path: str, produced_by: str) -> str:
        if not os.path.exists(path):
            raise InputFormatError(f"{path} not found; run the '{produced_by}' stage first")
        return path

    # -- score --

    def cmd_score_slides(self) -> List[str]:
        tiles_dir = self._require(self.config.paths.tiles_dir, "tiles_dir")
        scoring = self.config.scoring
        try:
            slides, errors = load_slides(tiles_dir, scoring.tile_size)
        except FileNotFoundError as e:
            raise InputFormatError(str(e))

        write_rows(self.path(TILE_ERRORS), ["path", "error"], errors)
        if not slides:
            raise InputFormatError("all tiles failed to load" if errors else f"no tiles found under {tiles_dir}")

        score_rows = []
        best_slices = []
        os.makedirs(self.path(BEST_SLICES_DIR), exist_ok=True)
        for slide_id in sorted(slides):
            tiles = sorted(slides[slide_id], key=lambda t: (t.row, t.col))
            scores = score_tiles(tiles, scoring, self.workers)
            for tile, score in zip(tiles, scores):
                score_rows.append((
                    slide_id, tile.row, tile.col, score.num_nuclei, score.clarity, score.blank_fraction, score.score,
                ))
            best, best_score = select_best_slice(tiles, scoring, scores)
            image = os.path.join(BEST_SLICES_DIR, f"{slide_id}.png")
            Image.fromarray(best.pixels).save(self.path(image))
            best_slices.append(BestSlice(
                slide_id=slide_id,
                row=best.row,
                col=best.col,
                origin_x=best.origin[0],
                origin_y=best.origin[1],
                width=best.width,
                height=best.height,
                source=os.path.relpath(best.source, tiles_dir) if best.source else "",
                image=image.replace(os.sep, "/"),
                score=best_score,
            ))

        write_rows(
            self.path(TILE_SCORES),
            ["slide_id", "row", "col", "num_nuclei", "clarity", "blank_fraction", "score"],
            score_rows,
        )
        write_json(self.path(BEST_SLICE), best_slices)
        logger.info(f"✅ Scored {len(score_rows)} tiles over {len(slides)} slides ({len(errors)} unreadable)")
        return [self.path(TILE_SCORES), self.path(BEST_SLICE), self.path(TILE_ERRORS)] + [
            self.path(b.image) for b in best_slices
        ]

    def best_slices(self) -> List[BestSlice]:
        data = read_json(self._require_file(self.path(BEST_SLICE), "score"))
        return [BestSlice(**entry) for entry in data]

    # -- extract --

    def _load_vit(self):
        weights = load_weights(self._require(self.config.paths.vit_weights, "vit_weights"))
        if weights.config != self.config.vit:
            logger.warning("⚠️ [vit] section differs from the weights header; using the weights header")
        return weights

    def _vit_input(self, image_path: str, size: int) -> np.ndarray:
        with Image.open(image_path) as image:
            image = image.convert("RGB")
            if image.size != (size, size):
                image = image.resize((size, size), Image.Resampling.BILINEAR)
            return np.asarray(image, dtype=np.uint8).copy()

    def cmd_extract(self) -> List[str]:
        supplied = self.config.paths.features_csv
        if supplied:
            read_features(supplied)
            if os.path.abspath(supplied) != os.path.abspath(self.path(FEATURES)):
                shutil.copyfile(supplied, self.path(FEATURES))
            logger.info(f"⏭️ Using supplied features {supplied}; extraction skipped")
            return [self.path(FEATURES)]

        weights = self._load_vit()
        slices = self.best_slices()
        size = weights.config.image_size
        tiles = [self._vit_input(self.path(s.image), size) for s in slices]
        logger.info(f"🚀 Extracting {weights.config.embed_dim} features from {len(tiles)} best slices")
        features = encode_batch(tiles, weights, weights.config, self.workers)
        write_features(self.path(FEATURES), [s.slide_id for s in slices], features)
        return [self.path(FEATURES)]

    # -- autoencoder --

    def _features(self):
        case_ids, features = read_features(self._require_file(self.path(FEATURES), "extract"))
        return case_ids, features

    def _check_dim(self, actual: int, expected: int, what: str) -> None:
        if actual != expected:
            raise InputFormatError(f"{what}: features have {actual} columns, autoencoder expects {expected}")

    def cmd_train_ae(self) -> List[str]:
        case_ids, features = self._features()
        ae = self.config.autoencoder
        self._check_dim(features.shape[1], ae.input_dim, "train-ae")

        scaler = FeatureScaler()
        scaled = scaler.fit_transform(features)
        rng = self.rng("train-ae").child(ae.train.seed)
        params, trace = train(scaled, ae.train, ae.layer_sizes, rng)

        save_autoencoder(self.path(MODEL), params, scaler, ae.train)
        write_rows(self.path(TRAIN_LOG), ["epoch", "mean_mae"], list(enumerate(trace)))
        return [self.path(MODEL), self.path(TRAIN_LOG)]

    def _model(self):
        return load_autoencoder(self._require_file(self.path(MODEL), "train-ae"))

    def cmd_encode(self) -> List[str]:
        case_ids, features = self._features()
        params, scaler = self._model()
        self._check_dim(features.shape[1], params.input_dim, "encode")
        latent = encode(scaler.transform(features), params)
        write_latent(self.path(LATENT), case_ids, latent)
        logger.info(f"✅ Encoded {len(case_ids)} cases into {params.latent_dim} latent features")
        return [self.path(LATENT)]

    def _vectors(self, use_raw: bool):
        if use_raw:
            case_ids, features = self._features()
            return case_ids, FeatureScaler().fit_transform(features)
        return read_latent(self._require_file(self.path(LATENT), "encode"))

    def _clinical(self, case_ids: Sequence[str]) -> Dict[str, ClinicalRecord]:
        records = read_clinical(self._require(self.config.paths.clinical_csv, "clinical_csv"))
        lookup = {r.case_id: r for r in records}
        orphans = [case for case in case_ids if case not in lookup]
        if orphans:
            raise InputFormatError(f"cases without clinical records: {', '.join(orphans)}")
        extra = len(lookup) - len(set(case_ids) & set(lookup))
        if extra:
            logger.warning(f"⚠️ {extra} clinical records have no matching case and are ignored")
        return {case: lookup[case] for case in case_ids}

    def _truth(self, case_ids: Sequence[str]) -> Optional[Dict[str, str]]:
        """Planted groups from a truth.csv next to the clinical file, when every case has one"""
        clinical = self.config.paths.clinical_csv
        if not clinical:
            return None
        truth = read_truth(os.path.join(os.path.dirname(clinical), "truth.csv"))
        if truth is None or any(case not in truth for case in case_ids):
            return None
        return truth

    # -- stratify --

    def cmd_stratify(self, ks: Optional[Sequence[int]] = None) -> List[str]:
        ks = list(ks or self.config.clustering.ks)
        case_ids, vectors = self._vectors(self.config.clustering.use_raw_features)
        clinical = self._clinical(case_ids)
        n = len(case_ids)
        truth = self._truth(case_ids)
        for k in ks:
            if not 1 <= k <= n:
                raise UsageError(f"k={k} is outside 1..{n}")

        dendrogram = hier_cluster(vectors, self.config.clustering.linkage, case_ids)

        coordinates = None
        if n >= 4:
            tsne = self.config.tsne
            perplexity = min(tsne.perplexity, max_perplexity(n))
            if perplexity != tsne.perplexity:
                logger.info(f"t-SNE perplexity clamped to {perplexity:.4f} for {n} cases")
            if perplexity > 1.0:
                coordinates = tsne_embed(vectors, perplexity, tsne.iterations, self.rng("stratify"), tsne).coordinates
        if coordinates is None:
            logger.warning("⚠️ Too few cases for t-SNE; scatter outputs skipped")

        outputs = []
        summary = []
        for k in ks:
            assignment = assign_risk_labels(cut_tree(dendrogram, k), clinical)
            if truth is not None:
                agreement = adjusted_rand_index([truth[c] for c in case_ids], [assignment.clusters[c] for c in case_ids])
                logger.info(f"🎯 k={k}: adjusted Rand index {agreement:.4f} against truth.csv")
            clusters_path = self.path(f"clusters_k{k}.csv")
            write_rows(clusters_path, ["case_id", "cluster", "risk"], [
                (case, assignment.clusters[case], assignment.risk[assignment.clusters[case]]) for case in case_ids
            ])
            outputs.append(clusters_path)

            curves = risk_curves(assignment, clinical)
            for curve in curves:
                km_path = self.path(f"km_k{k}_{curve.group}.csv")
                write_rows(km_path, ["time", "survival", "at_risk"], [
                    (s.time, s.survival, s.at_risk) for s in curve.steps
                ])
                outputs.append(km_path)

            results = pairwise_logrank(assignment, clinical) if k >= 2 else []
            logrank_path = self.path(f"logrank_k{k}.csv")
            write_rows(logrank_path, ["group_a", "group_b", "statistic", "p_value"], [
                (r.group_a, r.group_b, r.statistic, r.p_value) for r in results
            ])
            outputs.append(logrank_path)
            summary.extend((self.config.cohort, f"{k} Risk Groups", r.comparison, r.p_value) for r in results)

            title = f"{self.config.cohort}: {k} risk groups"
            write_km_svg(self.path(f"km_k{k}.svg"), curves, results, title)
            outputs.append(self.path(f"km_k{k}.svg"))

            if coordinates is not None:
                risk_of = [assignment.risk[assignment.clusters[case]] for case in case_ids]
                tsne_path = self.path(f"tsne_k{k}.csv")
                write_rows(tsne_path, ["case_id", "x", "y", "cluster"], [
                    (case, float(x), float(y), assignment.clusters[case])
                    for case, (x, y) in zip(case_ids, coordinates)
                ])
                order = [assignment.risk[c] for c in assignment.clusters_by_risk()]
                write_tsne_svg(self.path(f"tsne_k{k}.svg"), coordinates, risk_of, order, title)
                outputs.extend([tsne_path, self.path(f"tsne_k{k}.svg")])

        write_rows(self.path(LOGRANK_SUMMARY), ["cohort", "risk_groups", "comparison", "p_value"], summary)
        outputs.append(self.path(LOGRANK_SUMMARY))
        return outputs

    # -- classify --

    def cmd_classify(self) -> List[str]:
        case_ids, vectors = self._vectors(self.config.classify.use_raw_features)
        clinical = self._clinical(case_ids)
        unlabeled = [case for case in case_ids if clinical[case].label is None]
        if unlabeled:
            raise InputFormatError(f"cases without a label: {', '.join(unlabeled)}")

        dataset = LabeledDataset.from_labels(vectors, [clinical[c].label for c in case_ids], list(case_ids))
        reports, split = evaluate_methods(dataset, self.config.classify, self.rng("classify"))

        write_rows(self.path(CLASSIFICATION_CSV), ["method", "accuracy", "macro_f1", "weighted_f1"], [
            (r.method, r.metrics.accuracy, r.metrics.macro_f1, r.metrics.weighted_f1) for r in reports
        ])
        write_json(self.path(CLASSIFICATION_JSON), {
            "cohort": self.config.cohort,
            "seed": self.config.seed,
            "class_names": dataset.class_names,
            "split": split,
            "methods": reports,
        })
        return [self.path(CLASSIFICATION_CSV), self.path(CLASSIFICATION_JSON)]

    # -- explain --

    def default_cases(self, case_ids: Sequence[str]) -> List[str]:
        """Highest and lowest survival time among uncensored cases"""
        clinical = self._clinical(case_ids)
        pool = [clinical[c] for c in case_ids if clinical[c].event] or [clinical[c] for c in case_ids]
        longest = max(pool, key=lambda r: (r.time, r.case_id))
        shortest = min(pool, key=lambda r: (r.time, r.case_id))
        return [longest.case_id] if longest.case_id == shortest.case_id else [longest.case_id, shortest.case_id]

    def cmd_explain(self, cases: Optional[Sequence[str]] = None) -> List[str]:
        shap = self.config.shap
        case_ids, features = self._features()
        params, scaler = self._model()
        self._check_dim(features.shape[1], params.input_dim, "explain")
        scaled = scaler.transform(features)

        cases = list(cases or shap.cases or self.default_cases(case_ids))
        index = {case: i for i, case in enumerate(case_ids)}
        unknown = [case for case in cases if case not in index]
        if unknown:
            raise UsageError(f"unknown cases: {', '.join(unknown)}")

        readout = EncoderReadout(params, shap.target)
        baselines = default_baselines(scaled)
        stage_rng = self.rng("explain")
        top_k = min(shap.top_k, params.input_dim)

        weights = None
        errors = []
        try:
            weights = self._load_vit()
        except (InputFormatError, UsageError) as e:
            logger.error(f"❌ No overlays: {e}")
            errors.extend((case, str(e)) for case in cases)

        rows = []
        outputs = [self.path(ATTRIBUTIONS), self.path(EXPLAIN_ERRORS)]
        for case in cases:
            attribution = gradient_shap(
                readout, scaled[index[case]], baselines, shap.n_samples, shap.noise_sigma,
                stage_rng.child(index[case]), case,
            )
            top = top_k_features(attribution, top_k)
            rows.extend(attribution_rows(attribution, top))
            if weights is None:
                continue
            try:
                outputs.extend(self._overlay(case, attribution, top, weights))
            except (OSError, ValueError) as e:
                logger.error(f"❌ Overlay for {case} failed: {e}")
                errors.append((case, str(e)))

        write_rows(self.path(ATTRIBUTIONS), ["case_id", "feature_index", "phi", "rank"], rows)
        write_rows(self.path(EXPLAIN_ERRORS), ["case_id", "error"], errors)
        logger.info(f"✅ Explained {len(cases)} cases ({len(errors)} without overlay)")
        return outputs

    def _overlay(self, case: str, attribution, top: List[int], weights) -> List[str]:
        image = self.path(BEST_SLICES_DIR, f"{case}.png")
        if not os.path.exists(image):
            raise ValueError(f"no best slice for case {case}")
        vit = weights.config
        if max(top, default=0) >= vit.embed_dim:
            raise ValueError(f"feature indices exceed the ViT output size {vit.embed_dim}")

        original = read_rgb(image)
        localization = localize_features(
            top, self._vit_input(image, vit.image_size), weights, vit, self.config.shap.localization,
            self.config.shap.top_patches,
        )
        sidecar = overlay_document(
            case, f"../{BEST_SLICES_DIR}/{case}.png", original.shape[1], original.shape[0],
            localization, attribution, top, self.config.shap.boxes_per_feature,
        )
        svg_path = self.path(OVERLAYS_DIR, f"overlay_{case}.svg")
        json_path = self.path(OVERLAYS_DIR, f"overlay_{case}.json")
        render_overlay(svg_path, json_path, sidecar)
        return [svg_path, json_path]

    # -- run --

    def _stage(self, name: str, inputs: Sequence[str], action: Callable[[], List[str]]) -> List[str]:
        started = time.perf_counter()
        input_sums = {self._relative(p): sha256_file(p) for p in inputs if p and os.path.isfile(p)}
        logger.info(f"▶️ Stage {name}")
        outputs = action()
        self.stages.append(StageRecord(
            name=name,
            inputs=input_sums,
            outputs={self._relative(p): sha256_file(p) for p in outputs if os.path.isfile(p)},
            seconds=round(time.perf_counter() - started, 3),
        ))
        return outputs

    def _relative(self, path: str) -> str:
        return os.path.relpath(path, self.out_dir).replace(os.sep, "/")

    def cmd_run(self, ks: Optional[Sequence[int]] = None, cases: Optional[Sequence[str]] = None) -> RunManifest:
        """score -> extract -> train-ae -> encode -> stratify -> classify -> explain, then manifest.json"""
        paths = self.config.paths
        self.stages = []
        if paths.tiles_dir:
            self._stage("score", [], self.cmd_score_slides)
        elif not paths.features_csv:
            raise UsageError("paths.tiles_dir or paths.features_csv must be set")

        extract_inputs = [paths.features_csv] if paths.features_csv else [paths.vit_weights, self.path(BEST_SLICE)]
        self._stage("extract", extract_inputs, self.cmd_extract)
        self._stage("train-ae", [self.path(FEATURES)], self.cmd_train_ae)
        self._stage("encode", [self.path(FEATURES), self.path(MODEL)], self.cmd_encode)
        self._stage("stratify", [self.path(LATENT), paths.clinical_csv], lambda: self.cmd_stratify(ks))
        self._stage("classify", [self.path(LATENT), paths.clinical_csv], self.cmd_classify)
        self._stage("explain", [self.path(FEATURES), self.path(MODEL), paths.vit_weights],
                    lambda: self.cmd_explain(cases))

        manifest = RunManifest(
            version=__version__,
            config=self.config.model_dump(),
            stages=self.stages,
        )
        write_json(self.path(MANIFEST), manifest)
        logger.info(f"🏁 Run complete: {len(self.stages)} stages, outputs in {self.out_dir}")
        return manifest
