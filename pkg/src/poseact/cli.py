"""Command-line surface wiring the toolkit into reproducible pipelines.

Every subcommand accepts --config with flat `key = value` overrides
beaten by explicit flags, validates inputs before writing anything, and
exits 0 on success, 1 on validation problems (including unknown flags),
2 on I/O failures.
"""

import argparse
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from poseact import aggregate as agg_mod
from poseact import config as config_mod
from poseact import embed as embed_mod
from poseact import evaluate as eval_mod
from poseact import flowprep
from poseact import fvenc
from poseact import hlpf as hlpf_mod
from poseact import learn
from poseact import partcrop
from poseact import pipeline
from poseact import poselink
from poseact import synthetic
from poseact.errors import ValidationError


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad flags; we reserve 2 for
    I/O errors, so usage problems must exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="seed override (falls back to PCNN_SEED)")
    parser.add_argument("--jobs", type=int, help="worker processes for per-video stages")


def _load_config(args) -> config_mod.Config:
    if args.config:
        return config_mod.read_config(args.config)
    return config_mod.Config()


def _parse_parts(value: Optional[str], cfg: config_mod.Config) -> Tuple[str, ...]:
    raw = value if value is not None else cfg.get("crop.parts")
    if raw is None:
        return partcrop.PART_ORDER
    raw = raw.strip()
    if raw == str(len(partcrop.PART_ORDER)):
        return partcrop.PART_ORDER
    if raw == str(len(partcrop.UPPER_BODY_PARTS)):
        return partcrop.UPPER_BODY_PARTS
    parts = tuple(p.strip() for p in raw.split(",") if p.strip())
    for part in parts:
        if part not in partcrop.PART_CODES:
            raise ValidationError(
                f"unknown part {part!r}; known: {', '.join(partcrop.PART_ORDER)}"
            )
    if not parts:
        raise ValidationError("empty parts list")
    return parts


def _parse_pyramid(value: Optional[str], cfg: config_mod.Config) -> Tuple[Tuple[int, int], ...]:
    raw = value if value is not None else cfg.get("fv.pyramid")
    if raw is None:
        return fvenc.DEFAULT_PYRAMID
    levels = []
    for token in raw.split(","):
        token = token.strip().lower()
        if "x" not in token:
            raise ValidationError(f"pyramid level {token!r} must look like COLSxROWS")
        cols, _, rows = token.partition("x")
        try:
            levels.append((int(cols), int(rows)))
        except ValueError:
            raise ValidationError(f"pyramid level {token!r} must look like COLSxROWS") from None
    if not levels:
        raise ValidationError("empty pyramid grid")
    return tuple(levels)


def _crop_config(args, cfg: config_mod.Config) -> pipeline.CropConfig:
    return pipeline.CropConfig(
        hand_scale=args.hand_scale
        if args.hand_scale is not None
        else cfg.get_float("crop.hand_scale", partcrop.DEFAULT_HAND_SCALE),
        body_dilation=args.body_dilation
        if args.body_dilation is not None
        else cfg.get_float("crop.body_dilation", partcrop.DEFAULT_BODY_DILATION),
        patch_side=args.patch_side
        if args.patch_side is not None
        else cfg.get_int("crop.patch_side", partcrop.DEFAULT_PATCH_SIDE),
        parts=_parse_parts(getattr(args, "parts", None), cfg),
    )


def _jobs(args, cfg: config_mod.Config) -> int:
    jobs = args.jobs if args.jobs is not None else cfg.get_int("jobs", 1)
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return jobs


def _patch_to_image(patch: partcrop.Patch) -> np.ndarray:
    return np.clip(flowprep.round_half_away(patch.data), 0, 255).astype(np.uint8)


def _flw_paths(path: str) -> List[str]:
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".flw"))
        if not names:
            raise ValidationError(f"no .flw files in {path}")
        return [os.path.join(path, n) for n in names]
    return [path]


def cmd_quantize_flow(args) -> int:
    cfg = _load_config(args)
    params = flowprep.FlowQuantParams(
        a=args.scale_a if args.scale_a is not None else cfg.get_float("flow.scale_a", 16.0),
        b=args.scale_b if args.scale_b is not None else cfg.get_float("flow.scale_b", 128.0),
    )
    inputs = _flw_paths(args.input)
    multi = len(inputs) > 1
    if multi:
        os.makedirs(args.out, exist_ok=True)
    for src in inputs:
        quantized = flowprep.quantize_flow(flowprep.read_flow(src), params)
        if multi:
            base = os.path.splitext(os.path.basename(src))[0] + ".png"
            flowprep.save_flow_image(os.path.join(args.out, base), quantized)
        else:
            flowprep.save_flow_image(args.out, quantized)
    print(f"quantized {len(inputs)} flow field(s)")
    return 0


def cmd_crop_parts(args) -> int:
    from PIL import Image

    cfg = _load_config(args)
    crop = _crop_config(args, cfg)
    poses = partcrop.read_pose_file(args.poses)
    frames = pipeline._load_frames(args.frames)
    if len(frames) != len(poses):
        raise ValidationError(f"{len(frames)} frames but {len(poses)} poses")
    outputs = []
    for t, (frame, pose) in enumerate(zip(frames, poses.frames)):
        height, width = frame.shape[:2]
        boxes = partcrop.part_boxes(
            pose, width, height, crop.hand_scale, crop.body_dilation, crop.parts
        )
        for box in boxes:
            patch = partcrop.crop_resize(frame, box, crop.patch_side)
            outputs.append((f"f{t:03d}_{box.part}.png", _patch_to_image(patch)))
    os.makedirs(args.out, exist_ok=True)
    for name, image in outputs:
        Image.fromarray(image).save(os.path.join(args.out, name))
    print(f"wrote {len(outputs)} patches to {args.out}")
    return 0


def cmd_embed_import(args) -> int:
    store = embed_mod.FileStore(args.dim)
    with open(args.input) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4 + args.dim:
                raise ValidationError(
                    f"line {lineno}: {len(fields)} fields, expected {4 + args.dim}"
                )
            video_id, frame, part, stream = fields[:4]
            if part not in partcrop.PART_CODES:
                raise ValidationError(f"line {lineno}: unknown part {part!r}")
            if stream not in embed_mod.STREAM_CODES:
                raise ValidationError(f"line {lineno}: unknown stream {stream!r}")
            try:
                key = (video_id, int(frame), part, stream)
                vector = np.array([float(v) for v in fields[4:]])
            except ValueError:
                raise ValidationError(f"line {lineno}: non-numeric field") from None
            store.add(key, vector)
    if len(store) == 0:
        raise ValidationError("no descriptor lines in input")
    store.save(args.out)
    print(f"imported {len(store)} descriptors into {args.out}")
    return 0


def cmd_extract_series(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    kind = args.provider or cfg.get("embed.kind", "test_embedder")
    provider = embed_mod.ProviderConfig(
        kind=kind,
        dim=args.dim if args.dim is not None else cfg.get_int("embed.dim", 4096),
        seed=cfg.get_int("embed.seed", seed),
        store_path=args.store or cfg.get("embed.store"),
    )
    crop = _crop_config(args, cfg)
    _, bundles = pipeline.load_bundles(args.manifest, needs=("poses", "frames", "flow"))
    series = pipeline.extract_all_series(bundles, provider, crop, jobs=_jobs(args, cfg))
    store = pipeline.store_from_series(series)
    store.save(args.out)
    print(f"wrote {len(store)} frame descriptors to {args.out}")
    return 0


def cmd_aggregate(args) -> int:
    cfg = _load_config(args)
    agg = agg_mod.AggregationConfig(
        scheme=args.scheme or cfg.get("agg.scheme", "static_dyn_max_min"),
        delta_t=args.delta_t if args.delta_t is not None else cfg.get_int("agg.delta_t", 4),
        parts=_parse_parts(args.parts, cfg),
        streams=args.streams or cfg.get("agg.streams", "both"),
    )
    if args.store is None and args.manifest is None:
        dim = args.dim if args.dim is not None else cfg.get_int("agg.dim", 4096)
        layout = agg_mod.plan_layout(agg, dim)
        sys.stdout.write(agg_mod.describe_layout(layout))
        return 0
    if args.store is None or args.manifest is None or args.out is None:
        raise ValidationError("aggregate needs --store, --manifest and --out together")

    manifest = eval_mod.read_manifest(args.manifest)
    store = embed_mod.FileStore.load(args.store)
    series = {
        e.video_id: pipeline.series_from_store(store, e.video_id, agg.parts)
        for e in manifest.entries
    }
    if args.normalizer:
        normalizer = agg_mod.read_normalizer(args.normalizer)
    else:
        normalizer = None
    train_ids = [e.video_id for e in manifest.entries if e.subset == "train"]
    descriptors, normalizer = pipeline.aggregate_videos(series, train_ids, agg, normalizer)
    os.makedirs(args.out, exist_ok=True)
    for video_id, descriptor in descriptors.items():
        agg_mod.write_descriptor(os.path.join(args.out, f"{video_id}.pcnv"), descriptor)
    norm_out = args.normalizer_out or os.path.join(args.out, "normalizer.txt")
    agg_mod.write_normalizer(norm_out, normalizer)
    dim = next(iter(descriptors.values())).dim
    print(f"wrote {len(descriptors)} descriptors ({dim} dims) to {args.out}")
    return 0


def _hlpf_config(args, cfg: config_mod.Config, seed: int) -> hlpf_mod.HlpfConfig:
    return hlpf_mod.HlpfConfig(
        codebook_size=args.codebook_size
        if args.codebook_size is not None
        else cfg.get_int("hlpf.codebook_size", hlpf_mod.DEFAULT_CODEBOOK_SIZE),
        delta_t=args.delta_t if args.delta_t is not None else cfg.get_int("hlpf.delta_t", 1),
        seed=seed,
        restarts=cfg.get_int("hlpf.restarts", 16),
    )


def cmd_hlpf_fit(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    hl_cfg = _hlpf_config(args, cfg, seed)
    _, bundles = pipeline.load_bundles(args.manifest, needs=("poses",))
    train = [b for b in bundles if b.subset == "train"]
    if not train:
        raise ValidationError("manifest has no training videos")
    features = [hlpf_mod.video_features(b.poses, hl_cfg) for b in train]
    codebook = hlpf_mod.fit_codebooks(features, hl_cfg)
    hlpf_mod.write_codebook(args.out, codebook)
    print(f"wrote {codebook.dims}-dimension codebook to {args.out}")
    return 0


def cmd_hlpf_encode(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    hl_cfg = _hlpf_config(args, cfg, seed)
    codebook = hlpf_mod.read_codebook(args.codebook)
    _, bundles = pipeline.load_bundles(args.manifest, needs=("poses",))
    encoded = [
        (b.video_id, hlpf_mod.encode_video(b.poses, codebook, hl_cfg)) for b in bundles
    ]
    os.makedirs(args.out, exist_ok=True)
    for video_id, histogram in encoded:
        agg_mod.write_descriptor(
            os.path.join(args.out, f"{video_id}.pcnv"), agg_mod.whole_vector(histogram)
        )
    print(f"wrote {len(encoded)} histograms to {args.out}")
    return 0


def cmd_link_poses(args) -> int:
    cfg = _load_config(args)
    link_cfg = poselink.LinkerConfig(
        lam=args.lam if args.lam is not None else cfg.get_float("link.lambda", 1.0),
        score_floor=args.score_floor
        if args.score_floor is not None
        else cfg.get_float("link.score_floor"),
    )
    candidates = poselink.read_candidates(args.candidates)
    flows = [flowprep.read_flow(p) for p in _flw_paths(args.flow)]
    result = poselink.link(candidates, flows, link_cfg)
    partcrop.write_pose_file(args.out, result.poses)
    print(f"objective {result.objective!r}; wrote {args.out}")
    return 0


def cmd_fv_fit(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    _, bundles = pipeline.load_bundles(args.manifest, needs=("locals",))
    train_rows = [b.locals.descriptors for b in bundles if b.subset == "train" and b.locals.n]
    if not train_rows:
        raise ValidationError("no training local descriptors in manifest")
    pooled = np.vstack(train_rows)
    d_out = args.d_out if args.d_out is not None else cfg.get_int("fv.d_out")
    pca = fvenc.pca_fit(pooled, d_out)
    components = (
        args.components if args.components is not None else cfg.get_int("fv.components", 8)
    )
    gmm = fvenc.gmm_fit(fvenc.pca_apply(pca, pooled), components, seed=seed)
    fvenc.write_pca(args.out + ".ppca", pca)
    fvenc.write_gmm(args.out + ".pgmm", gmm)
    print(f"wrote {args.out}.ppca and {args.out}.pgmm "
          f"(K={gmm.k}, d={gmm.d}, {len(gmm.log_likelihoods)} EM iterations)")
    return 0


def cmd_fv_encode(args) -> int:
    cfg = _load_config(args)
    pca = fvenc.read_pca(args.pca)
    gmm = fvenc.read_gmm(args.gmm)
    pyramid = _parse_pyramid(args.pyramid, cfg)
    _, bundles = pipeline.load_bundles(args.manifest, needs=("locals",))
    encoded = []
    for b in bundles:
        reduced = fvenc.LocalDescriptorSet(
            fvenc.pca_apply(pca, b.locals.descriptors).reshape(b.locals.n, pca.d_out),
            b.locals.positions,
        )
        encoded.append((b.video_id, fvenc.pyramid_encode(reduced, gmm, pyramid)))
    os.makedirs(args.out, exist_ok=True)
    for video_id, vector in encoded:
        agg_mod.write_descriptor(
            os.path.join(args.out, f"{video_id}.pcnv"), agg_mod.whole_vector(vector)
        )
    print(f"wrote {len(encoded)} Fisher vectors to {args.out}")
    return 0


def _features_for(
    entries: Sequence[eval_mod.ManifestEntry], features_dir: str
) -> Tuple[List[str], np.ndarray]:
    ids = [e.video_id for e in entries]
    rows = []
    for video_id in ids:
        path = os.path.join(features_dir, f"{video_id}.pcnv")
        rows.append(agg_mod.read_descriptor(path).values)
    return ids, np.stack(rows)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    manifest = eval_mod.read_manifest(args.manifest)
    entries = [e for e in manifest.select(args.split, "train")]
    if not entries:
        raise ValidationError(f"split {args.split} has no training videos")
    ids, matrix = _features_for(entries, args.features)
    labels = [e.label for e in entries]
    kind = args.kind or cfg.get("svm.kind", "linear")
    c = args.c if args.c is not None else cfg.get_float("svm.c", 1.0)
    if kind == "linear":
        model = learn.train_linear(matrix, labels, c=c, seed=seed)
    elif kind == "chi2_kernel":
        model = learn.train_chi2(
            matrix,
            labels,
            c=c,
            seed=seed,
            kernel_form=cfg.get("svm.kernel_form", "exp"),
        )
    else:
        raise ValidationError(f"unknown classifier kind {kind!r}")
    learn.write_model(args.out, model)
    print(f"trained {kind} model on {len(ids)} videos, wrote {args.out}")
    return 0


def cmd_score(args) -> int:
    manifest = eval_mod.read_manifest(args.manifest)
    subset = None if args.subset == "all" else args.subset
    entries = manifest.select(args.split, subset)
    if not entries:
        raise ValidationError(f"split {args.split} has no {args.subset} videos")
    model = learn.read_model(args.model)
    ids, matrix = _features_for(entries, args.features)
    result = learn.score(model, matrix, ids)
    learn.write_scores(args.out, result)
    print(f"scored {len(ids)} videos, wrote {args.out}")
    return 0


def cmd_fuse(args) -> int:
    matrices = [learn.read_scores(p) for p in args.inputs]
    weights = None
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise ValidationError(f"bad weights {args.weights!r}") from None
    fused = learn.late_fuse(matrices, weights)
    learn.write_scores(args.out, fused)
    print(f"fused {len(matrices)} score files into {args.out}")
    return 0


def cmd_eval(args) -> int:
    matrix = learn.read_scores(args.scores)
    labels = eval_mod.read_manifest(args.manifest).labels()
    if args.metric == "accuracy":
        value = eval_mod.accuracy(matrix, labels)
    elif args.metric == "map":
        value = eval_mod.mean_ap(matrix, labels)
    else:
        raise ValidationError(f"unknown metric {args.metric!r}")
    print(f"{value:.4f}")
    return 0


def cmd_report(args) -> int:
    scores_a = learn.read_scores(args.scores_a)
    scores_b = learn.read_scores(args.scores_b)
    labels = eval_mod.read_manifest(args.manifest).labels()
    report = eval_mod.rank_diff_report(scores_a, scores_b, labels)
    eval_mod.write_report(args.out, report)
    from poseact.plots import save_report_figures

    figure_dir = args.figures or os.path.dirname(os.path.abspath(args.out))
    prefix = os.path.splitext(os.path.basename(args.out))[0]
    paths = save_report_figures(report, figure_dir, prefix)
    print(f"wrote {args.out} and {len(paths)} figures to {figure_dir}")
    return 0


def cmd_make_synthetic(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    synth_cfg = synthetic.SyntheticConfig(
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        frames=args.frames,
        seed=seed,
    )
    manifest_path = synthetic.write_dataset(args.out, synth_cfg)
    print(f"wrote synthetic dataset manifest {manifest_path}")
    return 0


def cmd_selfcheck(args) -> int:
    cfg = _load_config(args)
    seed = config_mod.resolve_seed(args.seed, cfg)
    failures = []

    def check(name: str, passed: bool):
        print(f"{'ok' if passed else 'FAIL'}: {name}")
        if not passed:
            failures.append(name)

    rng = np.random.default_rng(seed)

    grid = np.arange(-20, 21, dtype=np.float64)
    vx, vy = np.meshgrid(grid, grid)
    quant = flowprep.quantize_flow(flowprep.FlowField(vx, vy))
    expected = np.clip(flowprep.round_half_away(16.0 * vx + 128.0), 0, 255)
    check("flow quantization closed form", np.array_equal(quant.data[:, :, 0], expected))

    ok = True
    for _ in range(100):
        series = embed_mod.DescriptorSeries(
            "full_image", "appearance", rng.normal(size=(int(rng.integers(1, 9)), 5))
        )
        m, big_m = agg_mod.min_max(series)
        perm = rng.permutation(series.length)
        shuffled = embed_mod.DescriptorSeries(
            "full_image", "appearance", series.vectors[perm]
        )
        m2, big_m2 = agg_mod.min_max(shuffled)
        ok &= np.array_equal(m, m2) and np.array_equal(big_m, big_m2) and np.all(m <= big_m)
    check("static aggregation invariants", ok)

    from itertools import product as iter_product

    ok = True
    joints = ("head", "left_wrist", "hip_center")
    for _ in range(50):
        t_count, c_count = int(rng.integers(2, 5)), int(rng.integers(1, 4))
        frames = [
            [
                partcrop.Pose(rng.uniform(0, 10, (3, 2)), joints, score=float(rng.normal()))
                for _ in range(c_count)
            ]
            for _ in range(t_count)
        ]
        cands = poselink.CandidateSet(frames, "check")
        flows = [flowprep.FlowField.zero(12, 12) for _ in range(t_count - 1)]
        result = poselink.link(cands, flows)
        _, unary, trans = poselink.score_tables(cands, flows, poselink.LinkerConfig())
        best = max(
            poselink.path_objective(unary, trans, path)
            for path in iter_product(*[range(c_count)] * t_count)
        )
        ok &= result.objective == best
    check("pose linking matches exhaustive search", ok)

    ok = True
    for _ in range(20):
        data = rng.normal(size=(20, 3))
        gmm = fvenc.gmm_fit(data, 2, seed=int(rng.integers(1 << 16)))
        ok &= all(
            b >= a - 1e-9 * max(1.0, abs(a))
            for a, b in zip(gmm.log_likelihoods, gmm.log_likelihoods[1:])
        )
        dset = fvenc.LocalDescriptorSet(rng.normal(size=(10, 3)))
        fv = fvenc.fisher_encode(dset, gmm)
        naive = _naive_fisher(dset, gmm)
        ok &= bool(np.allclose(fv, naive, atol=1e-9))
    check("fisher encoding matches naive sums, EM monotone", ok)

    videos, _ = synthetic.make_dataset(synthetic.SyntheticConfig(
        train_per_class=2, test_per_class=1, frames=8, seed=seed
    ))
    seq = videos[0].poses
    shifted = partcrop.PoseSequence(
        [p.translated(7.0, -2.0) for p in seq.frames], seq.video_id
    )
    feats = [hlpf_mod.video_features(v.poses) for v in videos if v.subset == "train"]
    codebook = hlpf_mod.fit_codebooks(feats)
    same = np.array_equal(
        hlpf_mod.encode_video(seq, codebook), hlpf_mod.encode_video(shifted, codebook)
    )
    check("pose histograms ignore global translation", bool(same))

    ap = eval_mod.average_precision(
        np.array([4.0, 3.0, 2.0, 1.0]), np.array([True, False, True, False])
    )
    check("average precision fixture", abs(ap - 5.0 / 6.0) < 1e-12)

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all checks passed")
    return 0


def _naive_fisher(dset: fvenc.LocalDescriptorSet, gmm: fvenc.GmmModel) -> np.ndarray:
    gamma = fvenc.responsibilities(gmm, dset.descriptors)
    n, k, d = dset.n, gmm.k, gmm.d
    out = np.zeros(2 * k * d)
    for c in range(k):
        for i in range(n):
            u = (dset.descriptors[i] - gmm.means[c]) / np.sqrt(gmm.variances[c])
            out[c * d : (c + 1) * d] += gamma[i, c] * u
            out[k * d + c * d : k * d + (c + 1) * d] += gamma[i, c] * (u**2 - 1.0)
        out[c * d : (c + 1) * d] /= n * np.sqrt(gmm.weights[c])
        out[k * d + c * d : k * d + (c + 1) * d] /= n * np.sqrt(2 * gmm.weights[c])
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="poseact", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("quantize-flow", help="flow fields (.flw) to byte images (PNG)")
    _add_common(p)
    p.add_argument("--input", required=True, help=".flw file or directory of them")
    p.add_argument("--out", required=True, help="output PNG file or directory")
    p.add_argument("--scale-a", type=float, help="affine scale (default 16)")
    p.add_argument("--scale-b", type=float, help="affine offset (default 128)")
    p.set_defaults(func=cmd_quantize_flow)

    p = sub.add_parser("crop-parts", help="cut and resize part patches from frames")
    _add_common(p)
    p.add_argument("--poses", required=True, help="pose file")
    p.add_argument("--frames", required=True, help="directory of frame PNGs")
    p.add_argument("--out", required=True, help="output patch directory")
    p.add_argument("--parts", help="part count (5 or 4) or comma-separated names")
    p.add_argument("--hand-scale", type=float)
    p.add_argument("--body-dilation", type=float)
    p.add_argument("--patch-side", type=int)
    p.set_defaults(func=cmd_crop_parts)

    p = sub.add_parser("embed-import", help="import a text descriptor dump into a store")
    _add_common(p)
    p.add_argument("--input", required=True, help="lines: video_id frame part stream values...")
    p.add_argument("--out", required=True, help="output .pcnf store")
    p.add_argument("--dim", type=int, required=True, help="descriptor dimension")
    p.set_defaults(func=cmd_embed_import)

    p = sub.add_parser("extract-series", help="frames+flow+poses to per-frame descriptors")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .pcnf store")
    p.add_argument("--provider", choices=["test_embedder", "file_store"])
    p.add_argument("--dim", type=int, help="descriptor dimension (default 4096)")
    p.add_argument("--store", help="existing .pcnf store for the file_store provider")
    p.add_argument("--parts", help="part count (5 or 4) or comma-separated names")
    p.add_argument("--hand-scale", type=float)
    p.add_argument("--body-dilation", type=float)
    p.add_argument("--patch-side", type=int)
    p.set_defaults(func=cmd_extract_series)

    p = sub.add_parser("aggregate", help="frame descriptors to video descriptors")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--store", help="input .pcnf store")
    p.add_argument("--out", help="output directory for .pcnv descriptors")
    p.add_argument("--scheme", choices=sorted(agg_mod.SCHEMES))
    p.add_argument("--delta-t", type=int)
    p.add_argument("--parts", help="part count (5 or 4) or comma-separated names")
    p.add_argument("--streams", choices=["appearance", "flow", "both"])
    p.add_argument("--dim", type=int, help="per-frame dim for layout preview")
    p.add_argument("--normalizer", help="reuse an existing normalizer file")
    p.add_argument("--normalizer-out", help="where to write the fitted normalizer")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("hlpf-fit", help="fit per-dimension pose-feature codebooks")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output codebook text file")
    p.add_argument("--codebook-size", type=int)
    p.add_argument("--delta-t", type=int)
    p.set_defaults(func=cmd_hlpf_fit)

    p = sub.add_parser("hlpf-encode", help="encode pose sequences against codebooks")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True, help="output directory for .pcnv histograms")
    p.add_argument("--codebook-size", type=int)
    p.add_argument("--delta-t", type=int)
    p.set_defaults(func=cmd_hlpf_encode)

    p = sub.add_parser("link-poses", help="pick one pose per frame by dynamic programming")
    _add_common(p)
    p.add_argument("--candidates", required=True, help="scored candidate pose file")
    p.add_argument("--flow", required=True, help=".flw file or directory")
    p.add_argument("--out", required=True, help="output pose file")
    p.add_argument("--lam", type=float, help="flow inconsistency weight (default 1.0)")
    p.add_argument("--score-floor", type=float, help="drop candidates scoring below this")
    p.set_defaults(func=cmd_link_poses)

    p = sub.add_parser("fv-fit", help="fit PCA + GMM for Fisher vectors")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output prefix (.ppca/.pgmm appended)")
    p.add_argument("--components", type=int, help="GMM components (default 8)")
    p.add_argument("--d-out", type=int, help="PCA output dim (default input dim / 2)")
    p.set_defaults(func=cmd_fv_fit)

    p = sub.add_parser("fv-encode", help="encode local descriptors as Fisher vectors")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--pca", required=True, help=".ppca model file")
    p.add_argument("--gmm", required=True, help=".pgmm model file")
    p.add_argument("--out", required=True, help="output directory for .pcnv vectors")
    p.add_argument("--pyramid", help="grid levels like 1x1,1x3")
    p.set_defaults(func=cmd_fv_encode)

    p = sub.add_parser("train", help="train a one-vs-rest SVM on video descriptors")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="directory of .pcnv descriptors")
    p.add_argument("--out", required=True, help="output .psvm model file")
    p.add_argument("--kind", choices=["linear", "chi2_kernel"])
    p.add_argument("--c", type=float, help="SVM C (default 1.0)")
    p.add_argument("--split", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score videos with a trained model")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True, help="directory of .pcnv descriptors")
    p.add_argument("--model", required=True, help=".psvm model file")
    p.add_argument("--out", required=True, help="output score .tsv")
    p.add_argument("--subset", choices=["train", "test", "all"], default="test")
    p.add_argument("--split", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", help="weighted mean of score files")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", required=True, help="score .tsv files")
    p.add_argument("--weights", help="comma-separated weights (default equal)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="accuracy or mean average precision of a score file")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--metric", choices=["accuracy", "map"], default="accuracy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="rank-movement report comparing two scorers")
    _add_common(p)
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output report .tsv")
    p.add_argument("--figures", help="figure directory (default: alongside --out)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-synthetic", help="write the bundled synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=10)
    p.add_argument("--frames", type=int, default=12)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("selfcheck", help="run quick invariant checks on synthetic data")
    _add_common(p)
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
