"""Stage-oriented command line: each subcommand runs one resumable pipeline
stage over a work directory described by a single run-config file.

Exit codes: 0 success, 1 validation/config error (including a missing
upstream manifest), 2 stage failure, 64 usage error.
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import imageio
from .acquisition import (
    STATUS_FETCHED,
    STATUS_KEPT,
    ImageRecord,
    fetch_thumbnails,
    normalize_field,
    normalize_image,
)
from .appealmap import build_heatmap, enhance, estimate_depth, overlay_heatmap, patch_scores
from .backends import build_registry
from .domain import POSITIVE, SearchQuery, generate_queries
from .errors import AppealError, ConfigFormatError, ConfigurationError, ValidationError
from .fields import ScalarField
from .harness import toy_harness
from .labeling import annotate_dataset, select_exemplars
from .manifest import read_jsonl, write_jsonl
from .metrics import correlations
from .models import (
    ComparatorModel,
    EstimatorModel,
    TrainConfig,
    load_checkpoint,
    make_pairs,
    save_checkpoint,
    train_comparator,
    train_estimator,
)
from .models import estimator_predict
from .relevancy import (
    area_filter,
    balance_polarity,
    build_relevancy_map,
    caption_image,
    extract_domain_phrases,
    parse_object_type,
)
from .runconfig import RunConfig, load_run_config
from .seeding import derive_seed
from .synthesis import (
    EmbeddingSet,
    SyntheticSample,
    generate_synthetic_set,
    load_embedding,
    save_embedding,
    train_polarity_embedding,
)
from .workspace import Workspace

log = logging.getLogger("appeal")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _workspace(cfg: RunConfig) -> Workspace:
    return Workspace(cfg.workdir, cfg.domain().name)


def _require(path: Path, hint: str) -> None:
    if not Path(path).exists():
        raise ValidationError(f"missing {path}; run `appeal {hint}` first")


def _read_records(path: Path) -> list[ImageRecord]:
    return [ImageRecord.from_dict(row) for row in read_jsonl(path)]


# ---------------------------------------------------------------- stages


def cmd_queries(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    with ws.lock():
        queries = generate_queries(cfg.domain())
        write_jsonl(ws.manifest_path("queries"), (q.to_dict() for q in queries))
    print(f"wrote {len(queries)} queries to {ws.manifest_path('queries')}")
    return 0


def cmd_fetch(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    _require(ws.manifest_path("queries"), "queries")
    registry = build_registry(cfg.backends)
    client = registry.resolve("image_source")
    with ws.lock():
        queries = [SearchQuery.from_dict(row) for row in read_jsonl(ws.manifest_path("queries"))]
        records, errors = fetch_thumbnails(
            queries, client, cfg.fetch_top_k, dest_dir=ws.stage_dir("raw"), delay=cfg.fetch_delay
        )
        write_jsonl(ws.manifest_path("fetch"), (r.to_dict() for r in records))
        if errors:
            write_jsonl(ws.errors_path("fetch"), (e.to_dict() for e in errors))
    print(f"fetched {len(records)} thumbnails ({len(errors)} query failures)")
    return 0


def cmd_filter(args) -> int:
    cfg = load_run_config(args.config)
    domain = cfg.domain()
    ws = _workspace(cfg)
    _require(ws.manifest_path("fetch"), "fetch")
    registry = build_registry(cfg.backends)
    captioner = registry.resolve("captioner")
    segmenter = registry.resolve("segmenter")
    upscaler = registry.resolve("upscaler")

    with ws.lock():
        records = _read_records(ws.manifest_path("fetch"))
        screened: list[ImageRecord] = []
        fields: dict[str, ScalarField] = {}
        for record in records:
            if record.status != STATUS_FETCHED:
                screened.append(record)
                continue
            image = imageio.load_image(ws.resolve(record.path))
            caption = caption_image(image, captioner, image_id=record.id)
            record = replace(record, caption=caption or None)
            if not caption.strip():
                screened.append(record.with_status("filtered_caption"))
                continue
            phrases = extract_domain_phrases(caption, domain.lexnames)
            if not phrases.domain_phrases:
                screened.append(record.with_status("filtered_caption"))
                continue
            field = build_relevancy_map(image, phrases, segmenter, cfg.aggregate)
            record, keep = area_filter(record, field, domain.gamma)
            if keep:
                fields[record.id] = field
            screened.append(record)

        kept = [r for r in screened if r.status == STATUS_KEPT]
        balanced = balance_polarity(kept)
        by_id = {r.id: r for r in balanced}
        final: list[ImageRecord] = []
        for record in screened:
            record = by_id.get(record.id, record)
            if record.status == STATUS_KEPT:
                record, _ = normalize_image(
                    record, upscaler, domain.output_size, ws.root, ws.stage_dir("normalized")
                )
                normalize_field(fields[record.id], domain.output_size).save_png(
                    ws.stage_dir("relevancy") / f"{record.id}.png"
                )
            final.append(record)
        write_jsonl(ws.manifest_path("filter"), (r.to_dict() for r in final))

    counts = {}
    for record in final:
        counts[record.status] = counts.get(record.status, 0) + 1
    print(f"filter results: {counts}")
    return 0


def _query_noun_excluded(query: SearchQuery, exclude: tuple[str, ...]) -> bool:
    return any(query.text.endswith(" " + noun) for noun in exclude)


def _pick_stratified(records, per_query: dict, want: int):
    """Round-robin across query buckets, most-relevant (lowest rank) first."""
    chosen = []
    buckets = [per_query[key] for key in sorted(per_query)]
    while len(chosen) < want and any(buckets):
        for bucket in buckets:
            if bucket and len(chosen) < want:
                chosen.append(bucket.pop(0))
    return chosen


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    domain = cfg.domain()
    ws = _workspace(cfg)
    _require(ws.manifest_path("filter"), "filter")
    registry = build_registry(cfg.backends)
    inpainter = registry.resolve("inpainter")
    trainer = registry.resolve("inversion_trainer")

    with ws.lock():
        records = _read_records(ws.manifest_path("filter"))
        kept = sorted(
            (r for r in records if r.status == STATUS_KEPT), key=lambda r: (r.rank, r.id)
        )
        if not kept:
            raise ValidationError("no kept records to synthesize from")

        def top_matching(predicate, count):
            matches = [r for r in kept if predicate(r)]
            if not matches:
                raise ValidationError("no records available for embedding training")
            return matches[: min(count, len(matches))]

        positives = top_matching(
            lambda r: r.query.polarity == POSITIVE, cfg.exemplars_per_embedding
        )
        z_pos = train_polarity_embedding(positives, POSITIVE, trainer, ws.root)
        save_embedding(z_pos, ws.embeddings_dir / "positive.npy")
        consumed = {r.id for r in positives}
        negatives = {}
        for group in domain.negative_groups:
            exemplars = top_matching(
                lambda r, g=group: r.query.negative_group == g, cfg.exemplars_per_embedding
            )
            z_neg = train_polarity_embedding(exemplars, "negative", trainer, ws.root, group=group)
            save_embedding(z_neg, ws.embeddings_dir / f"negative_{group}.npy")
            negatives[group] = z_neg
            consumed.update(r.id for r in exemplars)
        embeddings = EmbeddingSet(positive=z_pos, negative=negatives)

        eligible = [
            r
            for r in kept
            if r.id not in consumed and not _query_noun_excluded(r.query, cfg.exclude_nouns)
        ]
        per_query_pos: dict[str, list] = {}
        per_query_neg: dict[str, list] = {}
        for record in eligible:
            target = per_query_pos if record.query.polarity == POSITIVE else per_query_neg
            target.setdefault(record.query.text, []).append(record)
        bases = _pick_stratified(eligible, per_query_pos, cfg.n_bases // 2)
        bases += _pick_stratified(eligible, per_query_neg, cfg.n_bases - cfg.n_bases // 2)
        if not bases:
            raise ValidationError("no eligible base images for synthesis")

        samples = generate_synthetic_set(
            bases,
            domain,
            embeddings,
            inpainter,
            image_root=ws.root,
            relevancy_root=ws.stage_dir("relevancy"),
            out_dir=ws.stage_dir("synthetic"),
            run_seed=derive_seed(cfg.seed, "synth"),
            mask_threshold=cfg.mask_threshold,
            strength=cfg.synthesis_strength,
        )
        write_jsonl(ws.manifest_path("synthetic"), (s.to_dict() for s in samples))
        consumed_path = ws.root / "consumed.json"
        consumed_path.write_text(
            json.dumps(
                {
                    "ti_exemplars": sorted(consumed),
                    "bases": sorted(b.id for b in bases),
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    print(f"generated {len(samples)} synthetic samples from {len(bases)} bases")
    return 0


def cmd_train_comparator(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    _require(ws.manifest_path("synthetic"), "synth")
    registry = build_registry(cfg.backends)
    with ws.lock():
        samples = [SyntheticSample.from_dict(row) for row in read_jsonl(ws.manifest_path("synthetic"))]
        pairs = make_pairs(samples, cfg.per_base_pairs, seed=derive_seed(cfg.seed, "pairs"))
        write_jsonl(ws.manifest_path("pairs"), (p.to_dict() for p in pairs))
        encoder = registry.resolve("encoder")
        model = ComparatorModel(encoder, seed=derive_seed(cfg.seed, "comparator-head") % 2**31)
        model, trace = train_comparator(model, pairs, cfg.training, image_root=ws.root)
        final_metrics = {"final": trace[-1]} if trace else {}
        save_checkpoint(model, ws.models_dir / "comparator.pt", cfg.training, extra=final_metrics)
    final = trace[-1]["train_loss"] if trace else float("nan")
    print(f"trained comparator on {len(pairs)} pairs; final train loss {final:.4f}")
    return 0


def _eligible_for_labeling(ws: Workspace) -> list[ImageRecord]:
    records = _read_records(ws.manifest_path("filter"))
    kept = [r for r in records if r.status == STATUS_KEPT]
    consumed_path = ws.root / "consumed.json"
    if consumed_path.exists():
        consumed = json.loads(consumed_path.read_text(encoding="utf-8"))
        used = set(consumed.get("ti_exemplars", [])) | set(consumed.get("bases", []))
        kept = [r for r in kept if r.id not in used]
    return kept


def cmd_label(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    _require(ws.manifest_path("filter"), "filter")
    _require(ws.models_dir / "comparator.pt", "train-comparator")
    with ws.lock():
        records = _eligible_for_labeling(ws)
        if not records:
            raise ValidationError("no records left to label")
        checkpoint = ws.models_dir / "comparator.pt"
        model = load_checkpoint(checkpoint)
        n = min(cfg.n_exemplars, len(records))
        exemplars = select_exemplars(records, n, seed=derive_seed(cfg.seed, "exemplars"))
        # Cache keyed to the checkpoint: retraining the comparator must not
        # replay raw scores from the old model.
        model_key = hashlib.sha256(checkpoint.read_bytes()).hexdigest()[:12]
        labels = annotate_dataset(
            records,
            exemplars,
            model,
            ws.root,
            cache_path=ws.root / f"raw_scores.{model_key}.cache.jsonl",
            manifest_path=ws.manifest_path("labeled"),
        )
        (ws.root / "exemplars.json").write_text(
            json.dumps({"ids": list(exemplars.ids), "seed": exemplars.selection_seed}, indent=2)
            + "\n",
            encoding="utf-8",
        )
    print(f"labeled {len(labels)} images against {len(exemplars.ids)} exemplars")
    return 0


def cmd_train_estimator(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    _require(ws.manifest_path("labeled"), "label")
    _require(ws.manifest_path("filter"), "filter")
    registry = build_registry(cfg.backends)
    with ws.lock():
        by_id = {r.id: r for r in _read_records(ws.manifest_path("filter"))}
        labeled = []
        for row in read_jsonl(ws.manifest_path("labeled")):
            record = by_id.get(row["image_id"])
            if record is not None:
                labeled.append((record.path, row["scaled"]))
        encoder = registry.resolve("encoder")
        model = EstimatorModel(encoder, seed=derive_seed(cfg.seed, "estimator-head") % 2**31)
        model, trace, final_mae = train_estimator(
            model, labeled, cfg.training, image_root=ws.root
        )
        save_checkpoint(
            model, ws.models_dir / "estimator.pt", cfg.training, extra={"final_mae": final_mae}
        )
    print(f"trained estimator on {len(labeled)} labels; held-out MAE {final_mae:.4f}")
    return 0


def _load_estimator(ws: Workspace) -> EstimatorModel:
    _require(ws.models_dir / "estimator.pt", "train-estimator")
    return load_checkpoint(ws.models_dir / "estimator.pt")


def cmd_score(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    model = _load_estimator(ws)
    for path in args.images:
        score = estimator_predict(model, imageio.load_image(path))
        print(json.dumps({"image": str(path), "score": round(score, 4)}))
    return 0


def cmd_heatmap(args) -> int:
    cfg = load_run_config(args.config)
    ws = _workspace(cfg)
    model = _load_estimator(ws)
    for path in args.images:
        path = Path(path)
        image = imageio.load_image(path)
        grid = patch_scores(image, cfg.heatmap, model)
        heatmap = build_heatmap(image, grid, cfg.heatmap)
        heatmap.save_png(path.with_name(f"{path.stem}_heatmap.png"))
        imageio.save_image(
            overlay_heatmap(image, heatmap), path.with_name(f"{path.stem}_overlay.png")
        )
        print(f"wrote {path.stem}_heatmap.png and {path.stem}_overlay.png")
    return 0


def cmd_enhance(args) -> int:
    cfg = load_run_config(args.config)
    domain = cfg.domain()
    ws = _workspace(cfg)
    model = _load_estimator(ws)
    _require(ws.embeddings_dir / "positive.npy", "synth")
    z_pos = load_embedding(ws.embeddings_dir / "positive.npy")
    registry = build_registry(cfg.backends)
    captioner = registry.resolve("captioner")
    inpainter = registry.resolve("inpainter")
    depth_backend = registry.resolve("depth")
    for path in args.images:
        path = Path(path)
        image = imageio.load_image(path)
        image_id = imageio.content_id(image)
        caption = caption_image(image, captioner, image_id=image_id) or "a photo"
        grid = patch_scores(image, cfg.heatmap, model)
        heatmap = build_heatmap(image, grid, cfg.heatmap)
        depth = (
            estimate_depth(image, depth_backend) if cfg.enhance.depth_conditioning else None
        )
        object_type = parse_object_type(caption, domain.lexnames)
        enhanced = enhance(
            image, caption, z_pos, heatmap, depth, cfg.enhance, inpainter, object_type=object_type
        )
        out_path = path.with_name(f"{path.stem}_enhanced.png")
        imageio.save_image(enhanced, out_path)
        score_before = estimator_predict(model, image)
        score_after = estimator_predict(model, enhanced)
        report = {
            "image": str(path),
            "enhanced": str(out_path),
            "score_before": round(score_before, 4),
            "score_after": round(score_after, 4),
            "delta": round(score_after - score_before, 4),
        }
        path.with_name(f"{path.stem}_enhance_report.json").write_text(
            json.dumps(report, indent=2) + "\n", encoding="utf-8"
        )
        print(json.dumps(report))
    return 0


def cmd_eval_corr(args) -> int:
    def read_scores(path):
        scores = {}
        for row in read_jsonl(path):
            value = row.get("scaled", row.get("score"))
            if value is None:
                raise ValidationError(f"{path}: rows need a 'scaled' or 'score' field")
            scores[row["image_id"]] = float(value)
        return scores

    pred = read_scores(args.pred)
    ref = read_scores(args.ref)
    common = sorted(set(pred) & set(ref))
    if len(common) < 2:
        raise ValidationError(f"only {len(common)} ids shared between {args.pred} and {args.ref}")
    report = correlations([pred[i] for i in common], [ref[i] for i in common])
    print(report.table())
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_toy_harness(args) -> int:
    train_config = TrainConfig.zero_epochs(seed=args.seed) if args.negative_control else None
    report, artifacts = toy_harness(
        seed=args.seed,
        n_images=args.images,
        workdir=args.workdir,
        train_config=train_config,
    )
    print(report.table(label="labels-vs-truth"))
    print(f"report: {artifacts['report']}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="appeal", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def stage(name, func, help_text, images=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config TOML")
        if images:
            p.add_argument("images", nargs="+", help="image files")
        p.set_defaults(func=func)
        return p

    stage("queries", cmd_queries, "generate the search-query manifest")
    stage("fetch", cmd_fetch, "fetch thumbnails for every query")
    stage("filter", cmd_filter, "caption, relevancy-filter, balance, and normalize")
    stage("synth", cmd_synth, "train polarity embeddings and build the synthetic set")
    stage("train-comparator", cmd_train_comparator, "train the relative appeal comparator")
    stage("label", cmd_label, "vote-label the real image set")
    stage("train-estimator", cmd_train_estimator, "train the absolute appeal estimator")
    stage("score", cmd_score, "score images with the trained estimator", images=True)
    stage("heatmap", cmd_heatmap, "write appeal heatmaps for images", images=True)
    stage("enhance", cmd_enhance, "enhance images where the heatmap flags low appeal", images=True)

    p = sub.add_parser("eval-corr", help="correlation metrics between two labeled manifests")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_eval_corr)

    p = sub.add_parser("toy-harness", help="desk-scale end-to-end validation run")
    p.add_argument("--workdir", default="toy-work")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=500)
    p.add_argument("--negative-control", action="store_true", help="skip training (0 epochs)")
    p.set_defaults(func=cmd_toy_harness)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 64
    except SystemExit as exc:  # -h/--help
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 64
    try:
        return args.func(args) or 0
    except (ValidationError, ConfigFormatError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AppealError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch(sys.argv[1:]))
