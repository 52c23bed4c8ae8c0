"""Manifest-driven plumbing from raw clips to score files.

This module owns the boring glue: loading per-video resources, running
the descriptor routes, fitting models on the training subset only, and
writing artifacts in deterministic manifest order.  Worker-pool
parallelism is over videos, and results are merged back in manifest
order so the output bytes never depend on the pool size.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from poseact.aggregate import (
    AggregationConfig,
    Normalizer,
    VideoDescriptor,
    assemble,
    fit_normalizer,
    write_descriptor,
    write_normalizer,
)
from poseact.embed import (
    STREAMS,
    DescriptorSeries,
    FileStore,
    ProviderConfig,
    extract_series,
    make_provider,
)
from poseact.errors import ValidationError
from poseact.evaluate import DatasetManifest, ManifestEntry, accuracy, read_manifest
from poseact.flowprep import read_flow
from poseact.fvenc import (
    GmmModel,
    LocalDescriptorSet,
    PcaModel,
    gmm_fit,
    pca_apply,
    pca_fit,
    pyramid_encode,
    read_locals,
    DEFAULT_PYRAMID,
)
from poseact.hlpf import Codebook, HlpfConfig, encode_video, fit_codebooks, video_features
from poseact.learn import ScoreMatrix, SvmModel, late_fuse, score, train_chi2, train_linear
from poseact.partcrop import PART_ORDER, PoseSequence, read_pose_file
from poseact.poselink import CandidateSet, read_candidates
from poseact.synthetic import SyntheticConfig, SyntheticVideo, make_dataset


@dataclass
class CropConfig:
    hand_scale: float = 0.5
    body_dilation: float = 0.1
    patch_side: int = 224
    parts: Tuple[str, ...] = PART_ORDER


@dataclass
class VideoBundle:
    video_id: str
    label: str
    subset: str
    split_id: int
    poses: Optional[PoseSequence] = field(default=None, repr=False)
    frames: Optional[List[np.ndarray]] = field(default=None, repr=False)
    flows: Optional[list] = field(default=None, repr=False)
    candidates: Optional[CandidateSet] = field(default=None, repr=False)
    locals: Optional[LocalDescriptorSet] = field(default=None, repr=False)


def bundles_from_synthetic(videos: Sequence[SyntheticVideo], split_id: int = 0) -> List[VideoBundle]:
    return [
        VideoBundle(
            v.video_id,
            v.label,
            v.subset,
            split_id,
            poses=v.poses,
            frames=v.frames,
            flows=v.flows,
            candidates=v.candidates,
            locals=v.locals,
        )
        for v in videos
    ]


def _load_frames(frame_dir: str) -> List[np.ndarray]:
    from PIL import Image

    names = sorted(n for n in os.listdir(frame_dir) if n.endswith(".png"))
    if not names:
        raise ValidationError(f"no frames in {frame_dir}")
    return [np.asarray(Image.open(os.path.join(frame_dir, n)).convert("RGB")) for n in names]


def _load_flows(flow_dir: str) -> list:
    names = sorted(n for n in os.listdir(flow_dir) if n.endswith(".flw"))
    return [read_flow(os.path.join(flow_dir, n)) for n in names]


def load_bundle(
    manifest_dir: str,
    entry: ManifestEntry,
    needs: Sequence[str] = ("poses", "frames", "flow"),
) -> VideoBundle:
    """Read the resources named in needs, resolving paths relative to
    the manifest location."""

    def path_of(key: str) -> str:
        return os.path.join(manifest_dir, entry.resource(key))

    bundle = VideoBundle(entry.video_id, entry.label, entry.subset, entry.split_id)
    if "poses" in needs:
        bundle.poses = read_pose_file(path_of("poses"), video_id=entry.video_id)
    if "frames" in needs:
        bundle.frames = _load_frames(path_of("frames"))
    if "flow" in needs:
        bundle.flows = _load_flows(path_of("flow"))
    if "candidates" in needs:
        bundle.candidates = read_candidates(path_of("candidates"), entry.video_id)
    if "locals" in needs:
        bundle.locals = read_locals(path_of("locals"))
    return bundle


def load_bundles(
    manifest_path: str,
    needs: Sequence[str] = ("poses", "frames", "flow"),
    split_id: Optional[int] = None,
) -> Tuple[DatasetManifest, List[VideoBundle]]:
    manifest = read_manifest(manifest_path)
    manifest_dir = os.path.dirname(os.path.abspath(manifest_path))
    entries = manifest.entries if split_id is None else manifest.select(split_id)
    return manifest, [load_bundle(manifest_dir, e, needs) for e in entries]


def _extract_one(args) -> List[DescriptorSeries]:
    bundle, provider_config, crop = args
    provider = make_provider(provider_config)
    return extract_series(
        bundle.frames,
        bundle.flows,
        bundle.poses,
        provider,
        parts=crop.parts,
        hand_scale=crop.hand_scale,
        body_dilation=crop.body_dilation,
        patch_side=crop.patch_side,
    )


def extract_all_series(
    bundles: Sequence[VideoBundle],
    provider_config: ProviderConfig,
    crop: CropConfig = None,
    jobs: int = 1,
) -> Dict[str, List[DescriptorSeries]]:
    """Per-video descriptor series, optionally across a process pool.

    Results are keyed and ordered by the input bundles, so the worker
    count never changes downstream bytes.
    """
    crop = crop or CropConfig()
    tasks = [(b, provider_config, crop) for b in bundles]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_one, tasks))
    else:
        results = [_extract_one(t) for t in tasks]
    return {b.video_id: series for b, series in zip(bundles, results)}


def store_from_series(series_by_video: Dict[str, List[DescriptorSeries]]) -> FileStore:
    dims = {s.dim for series in series_by_video.values() for s in series}
    if len(dims) != 1:
        raise ValidationError(f"mixed descriptor dims {sorted(dims)}")
    store = FileStore(dims.pop())
    for video_id, series_list in series_by_video.items():
        for series in series_list:
            for t in range(series.length):
                store.add((video_id, t, series.part, series.stream), series.vectors[t])
    return store


def series_from_store(
    store: FileStore, video_id: str, parts: Sequence[str] = PART_ORDER
) -> List[DescriptorSeries]:
    """Rebuild the per-(part, stream) series of one video from a store."""
    frames = sorted({key[1] for key in store.keys() if key[0] == video_id})
    if not frames:
        raise ValidationError(f"store has no descriptors for video {video_id!r}")
    if frames != list(range(len(frames))):
        raise ValidationError(f"store is missing frames for video {video_id!r}")
    out = []
    for stream in STREAMS:
        for part in parts:
            vectors = [store.describe(None, (video_id, t, part, stream)) for t in frames]
            out.append(DescriptorSeries(part, stream, np.stack(vectors)))
    return out


def aggregate_videos(
    series_by_video: Dict[str, List[DescriptorSeries]],
    train_ids: Sequence[str],
    agg: AggregationConfig,
    normalizer: Normalizer = None,
) -> Tuple[Dict[str, VideoDescriptor], Normalizer]:
    """Fit the frame-norm scales on training videos, assemble all."""
    if normalizer is None:
        train_series = [
            s
            for vid in train_ids
            for s in series_by_video[vid]
            if (s.part, s.stream) in {(p, st) for p in agg.parts for st in agg.stream_list}
        ]
        normalizer = fit_normalizer(train_series)
    descriptors = {
        vid: assemble(series, agg, normalizer) for vid, series in series_by_video.items()
    }
    return descriptors, normalizer


def hlpf_route(
    bundles: Sequence[VideoBundle], config: HlpfConfig = None
) -> Tuple[Codebook, Dict[str, np.ndarray]]:
    """Fit codebooks on training poses, encode every video."""
    config = config or HlpfConfig()
    train_feats = [
        video_features(b.poses, config) for b in bundles if b.subset == "train"
    ]
    if not train_feats:
        raise ValidationError("no training videos for codebook fitting")
    codebook = fit_codebooks(train_feats, config)
    encoded = {b.video_id: encode_video(b.poses, codebook, config) for b in bundles}
    return codebook, encoded


def fv_route(
    bundles: Sequence[VideoBundle],
    k: int = 8,
    d_out: int = None,
    pyramid: Sequence[Tuple[int, int]] = DEFAULT_PYRAMID,
    seed: int = 0,
) -> Tuple[PcaModel, GmmModel, Dict[str, np.ndarray]]:
    """PCA + GMM on pooled training locals, pyramid FV per video."""
    train_rows = [
        b.locals.descriptors for b in bundles if b.subset == "train" and b.locals.n > 0
    ]
    if not train_rows:
        raise ValidationError("no training local descriptors")
    pooled = np.vstack(train_rows)
    pca = pca_fit(pooled, d_out)
    gmm = gmm_fit(pca_apply(pca, pooled), k, seed=seed)
    encoded = {}
    for b in bundles:
        reduced = LocalDescriptorSet(
            pca_apply(pca, b.locals.descriptors).reshape(b.locals.n, pca.d_out),
            b.locals.positions,
        )
        encoded[b.video_id] = pyramid_encode(reduced, gmm, pyramid)
    return pca, gmm, encoded


def feature_matrix(
    features: Dict[str, np.ndarray], ids: Sequence[str]
) -> np.ndarray:
    missing = [v for v in ids if v not in features]
    if missing:
        raise ValidationError(f"missing features for videos: {missing[:5]}")
    return np.stack([np.asarray(features[v], dtype=np.float64).ravel() for v in ids])


def train_and_score(
    features: Dict[str, np.ndarray],
    bundles: Sequence[VideoBundle],
    kind: str = "linear",
    c: float = 1.0,
    seed: int = 0,
) -> Tuple[SvmModel, ScoreMatrix]:
    """SVM on the train subset, scores for the test subset."""
    train = [b for b in bundles if b.subset == "train"]
    test = [b for b in bundles if b.subset == "test"]
    if not train or not test:
        raise ValidationError("need both train and test videos")
    x_train = feature_matrix(features, [b.video_id for b in train])
    labels = [b.label for b in train]
    if kind == "linear":
        model = train_linear(x_train, labels, c=c, seed=seed)
    elif kind == "chi2_kernel":
        model = train_chi2(x_train, labels, c=c, seed=seed)
    else:
        raise ValidationError(f"unknown classifier kind {kind!r}")
    test_ids = [b.video_id for b in test]
    matrix = score(model, feature_matrix(features, test_ids), test_ids)
    return model, matrix


@dataclass
class BenchmarkResult:
    accuracy_max: float
    accuracy_sdmm: float
    accuracy_fv: float
    accuracy_fused: float
    scores_max: ScoreMatrix
    scores_sdmm: ScoreMatrix
    scores_fv: ScoreMatrix
    scores_fused: ScoreMatrix
    labels: Dict[str, str]


def run_benchmark(
    synth: SyntheticConfig = None,
    descriptor_dim: int = 64,
    patch_side: int = 32,
    svm_c: float = 1.0,
    gmm_k: int = 8,
    jobs: int = 1,
    out_dir: Optional[str] = None,
) -> BenchmarkResult:
    """Full synthetic benchmark: both aggregation schemes, the FV
    route, and their late fusion; optionally writes all artifacts."""
    synth = synth or SyntheticConfig()
    videos, manifest = make_dataset(synth)
    bundles = bundles_from_synthetic(videos)
    labels = manifest.labels()

    provider = ProviderConfig(kind="test_embedder", dim=descriptor_dim, seed=synth.seed)
    crop = CropConfig(patch_side=patch_side)
    series = extract_all_series(bundles, provider, crop, jobs=jobs)
    train_ids = [b.video_id for b in bundles if b.subset == "train"]

    agg_sdmm = AggregationConfig(scheme="static_dyn_max_min")
    agg_max = AggregationConfig(scheme="max")
    desc_sdmm, normalizer = aggregate_videos(series, train_ids, agg_sdmm)
    desc_max, _ = aggregate_videos(series, train_ids, agg_max, normalizer=normalizer)

    feats_sdmm = {vid: d.values for vid, d in desc_sdmm.items()}
    feats_max = {vid: d.values for vid, d in desc_max.items()}
    model_sdmm, scores_sdmm = train_and_score(feats_sdmm, bundles, c=svm_c, seed=synth.seed)
    model_max, scores_max = train_and_score(feats_max, bundles, c=svm_c, seed=synth.seed)

    pca, gmm, feats_fv = fv_route(bundles, k=gmm_k, seed=synth.seed)
    model_fv, scores_fv = train_and_score(feats_fv, bundles, c=svm_c, seed=synth.seed)

    scores_fused = late_fuse([scores_sdmm, scores_fv])
    result = BenchmarkResult(
        accuracy_max=accuracy(scores_max, labels),
        accuracy_sdmm=accuracy(scores_sdmm, labels),
        accuracy_fv=accuracy(scores_fv, labels),
        accuracy_fused=accuracy(scores_fused, labels),
        scores_max=scores_max,
        scores_sdmm=scores_sdmm,
        scores_fv=scores_fv,
        scores_fused=scores_fused,
        labels=labels,
    )

    if out_dir is not None:
        _write_benchmark_artifacts(
            out_dir, bundles, desc_sdmm, normalizer,
            {"pcnn_max": model_max, "pcnn_sdmm": model_sdmm, "fv": model_fv},
            {
                "pcnn_max": scores_max,
                "pcnn_sdmm": scores_sdmm,
                "fv": scores_fv,
                "fused": scores_fused,
            },
            result,
        )
    return result


def _write_benchmark_artifacts(
    out_dir, bundles, descriptors, normalizer, models, score_matrices, result
) -> None:
    from poseact.learn import write_model, write_scores

    desc_dir = os.path.join(out_dir, "descriptors")
    model_dir = os.path.join(out_dir, "models")
    score_dir = os.path.join(out_dir, "scores")
    for d in (desc_dir, model_dir, score_dir):
        os.makedirs(d, exist_ok=True)
    for bundle in bundles:
        write_descriptor(
            os.path.join(desc_dir, f"{bundle.video_id}.pcnv"), descriptors[bundle.video_id]
        )
    write_normalizer(os.path.join(out_dir, "normalizer.txt"), normalizer)
    for name, model in models.items():
        write_model(os.path.join(model_dir, f"{name}.psvm"), model)
    for name, matrix in score_matrices.items():
        write_scores(os.path.join(score_dir, f"{name}.tsv"), matrix)
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write(f"accuracy_max {result.accuracy_max!r}\n")
        fh.write(f"accuracy_sdmm {result.accuracy_sdmm!r}\n")
        fh.write(f"accuracy_fv {result.accuracy_fv!r}\n")
        fh.write(f"accuracy_fused {result.accuracy_fused!r}\n")
