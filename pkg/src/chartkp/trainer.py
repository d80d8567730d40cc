"""Training loop, checkpointing, validation and model-backed prediction."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .data import AugmentationPolicy, TrainingExample, build_examples, epoch_charts, load_split
from .errors import ChartKPError
from .heatmaps import VIEW_NAMES, EmbeddingMap, HeatmapSet
from .losses import (
    MS_SCALE,
    LossWeights,
    TargetBatch,
    batch_contrastive_loss,
    legend_loss,
    masks_to_targets,
    spaden_kp_loss,
    total_loss,
)
from .maskgen import grid_shape
from .metrics import score_chart
from .nets import BackboneConfig, ChartKPNet, image_to_tensor, load_checkpoint, pad_to_multiple, save_checkpoint
from .pipeline import ChainResult, run_chain
from .postprocess import PostprocessParams, calibrate_thresholds
from .reconstruct.cluster import ClusterParams
from .reconstruct.legend import ColorLegendEmbedder, LearnedLegendEmbedder
from .types import CHART_TYPES, AnnotatedChart, ChartType

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    backbone: BackboneConfig = BackboneConfig()
    loss_weights: LossWeights = LossWeights()
    contrastive_kind: str = "multi_similarity"
    margin: float = 0.3
    ms_alpha: float = 1.0
    ms_scale: float = MS_SCALE
    lr: float = 2.5e-4
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    calibrate_every: int = 0
    eval_every: int = 1
    synthetic_ratio: float = 1.0
    chart_types: Tuple[str, ...] = tuple(t.value for t in CHART_TYPES)
    canvas: Tuple[int, int] = (256, 256)
    augmentation: AugmentationPolicy = AugmentationPolicy()
    embed_dim: int = 32
    kv_pool: int = 4
    max_val_charts: int = 50

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ms_scale <= 0:
            raise ValueError("ms_scale must be > 0")
        if self.contrastive_kind not in ("push_pull", "multi_similarity"):
            raise ValueError("contrastive_kind must be push_pull or multi_similarity")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {"backbone": BackboneConfig, "loss_weights": LossWeights, "augmentation": AugmentationPolicy}
        for k, typ in nested.items():
            if isinstance(d.get(k), dict):
                d[k] = typ(**d[k])
        for k in ("chart_types", "canvas"):
            if k in d:
                d[k] = tuple(d[k])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    images: torch.Tensor
    targets: TargetBatch
    labels: torch.Tensor
    examples: List[TrainingExample]


def collate(examples: Sequence[TrainingExample], multiple: int, stride: int) -> Batch:
    """Pad every example (image bottom/right, targets with background) to
    the largest padded size in the batch."""
    h = max(-(-e.image.shape[0] // multiple) * multiple for e in examples)
    w = max(-(-e.image.shape[1] // multiple) * multiple for e in examples)
    gh, gw = h // stride, w // stride
    images, masks = [], []
    for e in examples:
        im = np.full((h, w, 3), 255, dtype=np.uint8)
        im[: e.image.shape[0], : e.image.shape[1]] = e.image
        images.append(im)
    targets = masks_to_targets([e.masks for e in examples]) if all(
        e.masks.shape == (gh, gw) for e in examples) else _padded_targets(examples, gh, gw)
    labels = torch.tensor([e.label.index for e in examples], dtype=torch.long)
    return Batch(image_to_tensor(images), targets, labels, list(examples))


def _padded_targets(examples, gh: int, gw: int) -> TargetBatch:
    n = len(examples)
    views = np.zeros((n, len(VIEW_NAMES), gh, gw), dtype=np.float32)
    for k, name in enumerate(VIEW_NAMES):
        if name.startswith("bg"):
            views[:, k] = 1.0
    offset = np.zeros((n, 2, gh, gw), dtype=np.float32)
    kp_mask = np.zeros((n, gh, gw), dtype=bool)
    for i, e in enumerate(examples):
        h, w = e.masks.shape
        for k, v in enumerate(e.masks.views().values()):
            views[i, k, :h, :w] = v
        offset[i, :, :h, :w] = e.masks.offset
        for r, c, _ in e.masks.kp_cells:
            kp_mask[i, r, c] = True
    return TargetBatch(torch.from_numpy(views), torch.from_numpy(offset), torch.from_numpy(kp_mask),
                       [e.masks.kp_cells for e in examples], [e.masks.embed_cells or e.masks.kp_cells for e in examples])


def _step_generator(seed: int, epoch: int, step: int) -> torch.Generator:
    ss = np.random.SeedSequence([seed, epoch, step, 0x7E4])
    return torch.Generator().manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> 1))


# ---------------------------------------------------------------- losses per batch

def _legend_term(model: ChartKPNet, out, batch: Batch, stride: int, alpha: float) -> Optional[torch.Tensor]:
    terms = []
    for i, e in enumerate(batch.examples):
        chart = e.chart
        if len(chart.legend_pairs) < 2:
            continue
        names = [chart.text_box(p.label_id).text for p in chart.legend_pairs]
        groups: Dict[int, List[Tuple[int, int]]] = {}
        series_of: Dict[int, int] = {}
        for (r, c, g), s in zip(e.masks.kp_cells, e.masks.kp_series):
            groups.setdefault(g, []).append((r, c))
            series_of[g] = s
        cells, labels = [], []
        for g in sorted(groups):
            name = chart.data_series[series_of[g]].name
            if name in names:
                cells.append(np.array(groups[g]))
                labels.append(names.index(name))
        if len(cells) < 2:
            continue
        cv = model.legend.cluster_vectors(out.trunk[i], out.embeddings[i], cells)
        pv = model.legend.patch_vectors(out.trunk[i], [tuple(v / stride for v in p.bbox) for p in chart.legend_pairs])
        terms.append(legend_loss(cv, pv, torch.tensor(labels), alpha))
    return torch.stack(terms).mean() if terms else None


def batch_loss(model: ChartKPNet, batch: Batch, cfg: TrainConfig, generator: torch.Generator):
    out = model(batch.images)
    kp, parts = spaden_kp_loss(out.logits, out.offset, batch.targets, cfg.loss_weights)
    con_terms = []
    for i, cells in enumerate(batch.targets.embed_cells or batch.targets.kp_cells):
        loss, ok = batch_contrastive_loss(out.embeddings[i], cells, cfg.contrastive_kind, cfg.margin,
                                          cfg.ms_alpha, generator, scale=cfg.ms_scale)
        if ok:
            con_terms.append(loss)
    contrastive = torch.stack(con_terms).mean() if con_terms else out.embeddings.sum() * 0.0
    leg = _legend_term(model, out, batch, cfg.backbone.stride, cfg.ms_alpha)
    if leg is not None:
        contrastive = contrastive + leg
    type_ce = F.cross_entropy(out.type_logits, batch.labels)
    total = total_loss(kp, contrastive, type_ce, cfg.loss_weights)
    record = {"total": float(total.detach()), "kp": float(kp.detach()), "contrastive": float(contrastive.detach()),
              "type": float(type_ce.detach()), **{k: float(v.detach()) for k, v in parts.items()}}
    if leg is not None:
        record["legend"] = float(leg.detach())
    return total, record


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    history: List[dict]
    epoch_losses: List[float]
    initial_loss: float
    best_path: Optional[Path]
    last_path: Path
    params: PostprocessParams
    best_score: float = -1.0


def _load_state(path: Path):
    return torch.load(path, map_location="cpu", weights_only=False)


def train(cfg: TrainConfig, out_dir, manifest=None, train_charts: Optional[Sequence[AnnotatedChart]] = None,
          val_charts: Optional[Sequence[AnnotatedChart]] = None, resume: bool = False,
          on_record: Optional[Callable[[dict], None]] = None, max_epochs: Optional[int] = None) -> TrainResult:
    """Train a network; checkpoints go to ``out_dir`` (last.pt, best.pt).

    Training data is the manifest's train split (or ``train_charts``) plus
    ``synthetic_ratio`` times as many fresh synthetic charts each epoch.
    ``max_epochs`` stops early without changing the schedule, which is how
    an interrupted run is simulated.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest is not None:
        train_charts = load_split(manifest, "train")
        val_charts = load_split(manifest, "val")
    train_charts = list(train_charts or [])
    val_charts = list(val_charts or [])[: cfg.max_val_charts]
    torch.manual_seed(cfg.seed)
    model = ChartKPNet(cfg.backbone, cfg.embed_dim, cfg.kv_pool)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    params = PostprocessParams()
    history: List[dict] = []
    epoch_losses: List[float] = []
    start_epoch, best_score, initial = 0, -1.0, None
    last_path, best_path = out_dir / "last.pt", None
    if resume and last_path.exists():
        state = _load_state(last_path)
        model.load_state_dict(state["model"])
        opt.load_state_dict(state["optimizer"])
        start_epoch = state["epoch"] + 1
        history, epoch_losses = state["history"], state["epoch_losses"]
        best_score, initial = state["best_score"], state["initial_loss"]
        params = PostprocessParams(**state["params"])
        if (out_dir / "best.pt").exists():
            best_path = out_dir / "best.pt"
    types = [ChartType(t) for t in cfg.chart_types]
    stride = cfg.backbone.stride
    multiple = cfg.backbone.input_multiple
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1), encoding="utf-8")
    stop = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    for epoch in range(start_epoch, stop):
        t0 = time.time()
        model.train()
        n_synth = int(round(cfg.synthetic_ratio * len(train_charts))) if train_charts else cfg.batch_size * 4
        charts = epoch_charts(train_charts, epoch, cfg.seed, n_synth, types, cfg.canvas)
        examples = build_examples(charts, cfg.augmentation, cfg.seed, epoch, stride)
        order = np.random.default_rng([cfg.seed, epoch, 0x5EED]).permutation(len(examples))
        losses = []
        for step, at in enumerate(range(0, len(order), cfg.batch_size)):
            batch = collate([examples[i] for i in order[at:at + cfg.batch_size]], multiple, stride)
            loss, record = batch_loss(model, batch, cfg, _step_generator(cfg.seed, epoch, step))
            if initial is None:
                initial = record["total"]
            opt.zero_grad()
            loss.backward()
            opt.step()
            record.update(epoch=epoch, step=step)
            history.append(record)
            losses.append(record["total"])
            if on_record:
                on_record(record)
        epoch_losses.append(float(np.mean(losses)))
        log.info("epoch %d loss %.4f (%.1fs)", epoch, epoch_losses[-1], time.time() - t0)
        if val_charts and cfg.calibrate_every and (epoch + 1) % cfg.calibrate_every == 0:
            params = calibrate_on(model, val_charts, stride, params)
        if val_charts and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            score = mean_6a(model, val_charts, params)
            history.append({"epoch": epoch, "val_6a": score})
            if score > best_score:
                best_score = score
                best_path = out_dir / "best.pt"
                save_checkpoint(model, best_path, {"params": asdict(params), "epoch": epoch, "val_6a": score})
        save_checkpoint(model, out_dir / "model.pt", {"params": asdict(params), "epoch": epoch})
        torch.save({"model": model.state_dict(), "optimizer": opt.state_dict(), "epoch": epoch,
                    "history": history, "epoch_losses": epoch_losses, "best_score": best_score,
                    "initial_loss": initial, "params": asdict(params)}, last_path)
    return TrainResult(history, epoch_losses, initial, best_path, last_path, params, best_score)


def build_model_from_last(path, cfg: TrainConfig) -> ChartKPNet:
    model = ChartKPNet(cfg.backbone, cfg.embed_dim, cfg.kv_pool)
    model.load_state_dict(_load_state(Path(path))["model"])
    model.eval()
    return model


# ---------------------------------------------------------------- inference

def forward_chart(model: ChartKPNet, chart: AnnotatedChart) -> Tuple[HeatmapSet, EmbeddingMap, object]:
    """Heatmaps and embeddings for one chart, cropped to its own grid."""
    stride = model.cfg.stride
    image = pad_to_multiple(np.asarray(chart.image), model.cfg.input_multiple)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(image_to_tensor([image]))
    model.train(was_training)
    gh, gw = grid_shape(chart.image.shape[:2], stride)
    hs = out.heatmap_set(0, stride)
    hs = HeatmapSet({k: v[:gh, :gw] for k, v in hs.views.items()}, hs.offset[:, :gh, :gw],
                    hs.type_logits, stride, {k: v[:gh, :gw] for k, v in hs.logits.items()})
    emb = EmbeddingMap(out.embedding_map(0).grid[:, :gh, :gw])
    return hs, emb, out


def predict(model: ChartKPNet, chart: AnnotatedChart, params: PostprocessParams = PostprocessParams(),
            chart_type: Optional[ChartType] = None, cluster_params: ClusterParams = ClusterParams(),
            legend: str = "learned") -> ChainResult:
    """Full inference on one chart. ``chart_type`` overrides the type head;
    ``legend`` picks the learned or the colour-code legend embedder. Any
    stage failure gives an empty prediction with a diagnostic."""
    try:
        hs, emb, out = forward_chart(model, chart)
        if legend == "learned":
            embedder = LearnedLegendEmbedder(model, out.trunk[0], out.embeddings[0], model.cfg.stride)
        else:
            embedder = ColorLegendEmbedder()
        return run_chain(chart.without_ground_truth(), hs, emb, chart_type, params, cluster_params, embedder)
    except (ChartKPError, ValueError, RuntimeError) as exc:
        ct = chart_type or chart.chart_type
        return ChainResult(ChartType(ct), [], [], [f"prediction failed: {exc}"])


def prediction_chart(chart: AnnotatedChart, result: ChainResult) -> AnnotatedChart:
    return AnnotatedChart(None, result.chart_type, tuple(result.series), image_size=chart.image_size,
                          chart_id=chart.chart_id)


def mean_6a(model: ChartKPNet, charts: Sequence[AnnotatedChart], params: PostprocessParams,
            oracle_type: bool = True, legend: str = "color") -> float:
    scores = []
    for chart in charts:
        res = predict(model, chart, params, chart.chart_type if oracle_type else None, legend=legend)
        scores.append(score_chart(prediction_chart(chart, res), chart).score_6a)
    return float(np.mean(scores)) if scores else 0.0


def calibrate_on(model: ChartKPNet, charts: Sequence[AnnotatedChart], stride: int,
                 base: PostprocessParams = PostprocessParams(), sample: int = 20,
                 strict: bool = False) -> PostprocessParams:
    """Threshold calibration on up to ``sample`` charts. Too few samples
    keep ``base`` (with a warning) unless ``strict``, which re-raises."""
    rng = np.random.default_rng(0)
    pick = rng.permutation(len(charts))[:sample]
    maps = [forward_chart(model, charts[i])[0].views["fg_regress"] for i in pick]
    try:
        return calibrate_thresholds(maps, base)
    except ChartKPError as exc:
        if strict:
            raise
        log.warning("calibration skipped: %s", exc)
        return base


def load_model(path) -> Tuple[ChartKPNet, PostprocessParams]:
    model, extra = load_checkpoint(path)
    params = PostprocessParams(**extra["params"]) if "params" in extra else PostprocessParams()
    return model, params
