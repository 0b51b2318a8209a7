"""Desk-scale end-to-end validation on a synthetic toy domain.

The toy domain's ground-truth appeal is a directly measurable image scalar:
mean saturation inside the relevancy mask. The toy-mode inpainter renders a
requested alpha straight into that scalar, so after running the real
pipeline stages (synthesis, pair making, comparator training, exemplar
voting, scaling) the final 1-10 labels can be checked against ground truth
with a rank correlation. Everything derives from one seed; two runs with
the same seed produce byte-identical manifests and reports.
"""

import json
import logging
from pathlib import Path

import numpy as np
import torch

from . import imageio
from .acquisition import STATUS_KEPT, ImageRecord
from .backends.mocks import MockEncoder, MockInpainter, MockInversionTrainer
from .domain import NEGATIVE, POSITIVE, DomainConfig, SearchQuery, SynthesisPlan
from .errors import StageError
from .fields import ScalarField
from .labeling import annotate_dataset, select_exemplars
from .manifest import write_jsonl
from .metrics import MetricReport, correlations
from .models import ComparatorModel, TrainConfig, make_pairs, save_checkpoint, train_comparator
from .seeding import derive_rng, derive_seed
from .synthesis import EmbeddingSet, generate_synthetic_set, train_polarity_embedding
from .workspace import Workspace

log = logging.getLogger(__name__)

TOY_IMAGE_SIZE = 64
TOY_MASK = (20, 44)  # rows/cols of the domain region square (~14% of pixels)


def toy_domain_config() -> DomainConfig:
    return DomainConfig(
        name="toy",
        nouns=("blob",),
        positive_adjectives=("appealing",),
        negative_groups={"drab": ("drab",)},
        lexnames=("noun.object",),
        gamma=0.1,
        output_size=TOY_IMAGE_SIZE,
        synthesis_plan=SynthesisPlan(backgrounds_per_base=2, alphas_per_background=6),
    )


def _toy_relevancy() -> ScalarField:
    values = np.zeros((TOY_IMAGE_SIZE, TOY_IMAGE_SIZE), dtype=np.float64)
    lo, hi = TOY_MASK
    values[lo:hi, lo:hi] = 1.0
    return ScalarField(values)


def _mask_saturation(image: np.ndarray) -> float:
    lo, hi = TOY_MASK
    return float(imageio.saturation(image)[lo:hi, lo:hi].mean())


def toy_harness(
    seed: int,
    n_images: int = 500,
    workdir: Path | str = "toy-work",
    train_config: TrainConfig | None = None,
    n_bases: int = 75,
    per_base_pairs: int = 20,
    n_exemplars: int = 100,
) -> tuple[MetricReport, dict]:
    """Run the learning pipeline end to end on the toy domain.

    Returns the metric report between final scaled labels and ground-truth
    appeal, plus a dict of artifact paths. Raises StageError naming the
    stage if any stage fails.
    """
    torch.set_num_threads(1)  # keeps float accumulation identical across runs
    cfg = toy_domain_config()
    ws = Workspace(Path(workdir), cfg.name)
    inpainter = MockInpainter(toy_mode=True)
    trainer = MockInversionTrainer()
    relevancy = _toy_relevancy()

    stage = "corpus"
    try:
        records, truth = _build_toy_corpus(ws, n_images, seed, inpainter, trainer, relevancy)
        write_jsonl(ws.manifest_path("corpus"), (r.to_dict() for r in records))

        stage = "embeddings"
        z_pos = train_polarity_embedding(records[-2:], POSITIVE, trainer, ws.root)
        z_neg = train_polarity_embedding(records[:2], NEGATIVE, trainer, ws.root, group="drab")
        embeddings = EmbeddingSet(positive=z_pos, negative={"drab": z_neg})

        stage = "synthesis"
        base_indices = sorted({int(i) for i in np.linspace(0, len(records) - 1, n_bases)})
        bases = [records[i] for i in base_indices]
        samples = generate_synthetic_set(
            bases,
            cfg,
            embeddings,
            inpainter,
            image_root=ws.root,
            relevancy_root=ws.stage_dir("relevancy"),
            out_dir=ws.stage_dir("synthetic"),
            run_seed=derive_seed(seed, "synth"),
        )
        write_jsonl(ws.manifest_path("synthetic"), (s.to_dict() for s in samples))

        stage = "pairs"
        pairs = make_pairs(samples, per_base_pairs, seed=derive_seed(seed, "pairs"))
        write_jsonl(ws.manifest_path("pairs"), (p.to_dict() for p in pairs))

        stage = "train-comparator"
        encoder = MockEncoder(seed=derive_seed(seed, "encoder") % 2**31)
        model = ComparatorModel(encoder, seed=derive_seed(seed, "head") % 2**31)
        cfg_train = train_config or TrainConfig.default(seed=derive_seed(seed, "train") % 2**31)
        model, trace = train_comparator(model, pairs, cfg_train, image_root=ws.root)
        save_checkpoint(model, ws.models_dir / "comparator.pt", cfg_train)

        stage = "label"
        exemplars = select_exemplars(
            records, min(n_exemplars, len(records)), seed=derive_seed(seed, "exemplars")
        )
        # No raw-score cache here: reusing a workdir with different training
        # settings must not replay a previous model's scores.
        labels = annotate_dataset(
            records,
            exemplars,
            model,
            ws.root,
            manifest_path=ws.manifest_path("labeled"),
        )

        stage = "report"
        scaled = [label.scaled for label in labels]
        aligned_truth = [truth[label.image_id] for label in labels]
        report = correlations(scaled, aligned_truth)
        diagnostics = _comparator_diagnostics(model, records, ws, seed)
    except Exception as exc:
        raise StageError(f"toy harness failed at stage {stage!r}: {exc}") from exc

    report_path = ws.root / "toy_report.json"
    payload = {
        "seed": seed,
        "n_images": n_images,
        "n_bases": len(bases),
        "n_pairs": len(pairs),
        "epochs": [s.epochs for s in cfg_train.stages],
        "metrics": report.to_dict(),
        "diagnostics": diagnostics,
    }
    report_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    artifacts = {
        "corpus_manifest": ws.manifest_path("corpus"),
        "synthetic_manifest": ws.manifest_path("synthetic"),
        "pairs_manifest": ws.manifest_path("pairs"),
        "labeled_manifest": ws.manifest_path("labeled"),
        "comparator_checkpoint": ws.models_dir / "comparator.pt",
        "report": report_path,
        "trace": trace,
    }
    return report, artifacts


def _comparator_diagnostics(model, records, ws, seed, n_probe: int = 20) -> dict:
    """Residual asymmetry of the trained comparator, tracked, not asserted.

    The concat head is order-sensitive; order augmentation only encourages
    antisymmetry, so we measure how far |A(I, I)| and |A(a, b) + A(b, a)|
    sit from zero.
    """
    from .models import comparator_predict

    rng = derive_rng(seed, "diagnostics")
    probes = [records[int(i)] for i in rng.choice(len(records), size=min(n_probe, len(records)), replace=False)]
    images = [imageio.load_image(ws.root / r.path) for r in probes]
    self_diffs = [abs(comparator_predict(model, im, im)) for im in images]
    swaps = []
    for i in range(0, len(images) - 1, 2):
        a, b = images[i], images[i + 1]
        swaps.append(abs(comparator_predict(model, a, b) + comparator_predict(model, b, a)))
    return {
        "self_difference_mean": float(np.mean(self_diffs)),
        "swap_asymmetry_mean": float(np.mean(swaps)) if swaps else None,
    }


def _build_toy_corpus(ws, n_images, seed, inpainter, trainer, relevancy):
    """Render the toy corpus with the same mock ops the pipeline uses.

    Each image gets a seed-keyed solid background (the same family the
    synthesis stage produces, so training and voting distributions match)
    plus a small domain region whose saturation encodes its assigned appeal
    level. The background dominates the feature variance by a wide margin,
    so an untrained model has nothing useful to latch onto, while the
    saturation signal stays cleanly learnable.
    """
    from .synthesis import adjust_appeal, diversify_background

    normalized = ws.stage_dir("normalized")
    relevancy_dir = ws.stage_dir("relevancy")
    mask_fraction = float(relevancy.values.mean())
    records: list[ImageRecord] = []
    truth: dict[str, float] = {}
    z_pos_vec = trainer.train([np.zeros((2, 2, 3), np.uint8)], POSITIVE)
    z_neg_vec = trainer.train([np.zeros((2, 2, 3), np.uint8)], NEGATIVE)
    for i in range(n_images):
        alpha = i / (n_images - 1) if n_images > 1 else 0.5
        blank = np.zeros((TOY_IMAGE_SIZE, TOY_IMAGE_SIZE, 3), dtype=np.uint8)
        image = diversify_background(blank, relevancy, derive_seed(seed, "toybg", i), inpainter)
        cond = alpha * z_pos_vec + (1.0 - alpha) * z_neg_vec
        image = adjust_appeal(
            image, "a blob", cond, relevancy, derive_seed(seed, "toyfill", i), inpainter
        )
        image_id = imageio.content_id(image)
        imageio.save_image(image, normalized / f"{image_id}.png")
        relevancy.save_png(relevancy_dir / f"{image_id}.png")
        polarity = POSITIVE if alpha >= 0.5 else NEGATIVE
        query = (
            SearchQuery("appealing blob", POSITIVE)
            if polarity == POSITIVE
            else SearchQuery("drab blob", NEGATIVE, negative_group="drab")
        )
        records.append(
            ImageRecord(
                id=image_id,
                source="toy",
                query=query,
                rank=i + 1,
                path=f"normalized/{image_id}.png",
                width=TOY_IMAGE_SIZE,
                height=TOY_IMAGE_SIZE,
                caption="a blob",
                relevancy_fraction=mask_fraction,
                status=STATUS_KEPT,
            )
        )
        truth[image_id] = _mask_saturation(image)
    if len(truth) != n_images:
        raise StageError("toy corpus produced duplicate image ids")
    return records, truth
