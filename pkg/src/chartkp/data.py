"""Training example assembly, text-invariance augmentation and dataset manifests."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .annotation import extract_keypoints, load_annotation
from .maskgen import DEFAULT_STRIDE, MaskSet, build_mask_set
from .types import AnnotatedChart, ChartType, CHART_TYPES, KeypointList, TextBox

BRANCH_NONE = "none"
BRANCH_ERASE = "erase"
BRANCH_ADD = "add"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AugmentationPolicy:
    p_erase_text: float = 0.25
    p_add_text: float = 0.25
    max_added_boxes: int = 4
    skew_range: float = 15.0

    def __post_init__(self):
        for p in (self.p_erase_text, self.p_add_text):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.p_erase_text + self.p_add_text > 1.0 + 1e-12:
            raise ValueError("p_erase_text + p_add_text must not exceed 1")
        if self.max_added_boxes < 1:
            raise ValueError("max_added_boxes must be >= 1")


NO_AUGMENTATION = AugmentationPolicy(0.0, 0.0)


def draw_branch(rng: np.random.Generator, policy: AugmentationPolicy) -> str:
    u = rng.random()
    if u < policy.p_erase_text:
        return BRANCH_ERASE
    if u < policy.p_erase_text + policy.p_add_text:
        return BRANCH_ADD
    return BRANCH_NONE


def median_color(image: np.ndarray) -> np.ndarray:
    flat = np.asarray(image).reshape(-1, image.shape[-1])
    return np.round(np.median(flat, axis=0)).astype(np.uint8)


def _polygon_mask(polygon, shape: Tuple[int, int]) -> np.ndarray:
    """Pixels whose centres lie inside ``polygon``, plus its boundary."""
    mask = Image.new("L", (shape[1], shape[0]), 0)
    ImageDraw.Draw(mask).polygon([(float(x), float(y)) for x, y in polygon], fill=1, outline=1)
    return np.asarray(mask, dtype=bool)


def _box_slices(box: TextBox, shape) -> Tuple[slice, slice]:
    x0, y0, x1, y1 = box.bbox
    r0, r1 = max(0, int(math.floor(y0))), min(shape[0], int(math.ceil(y1)))
    c0, c1 = max(0, int(math.floor(x0))), min(shape[1], int(math.ceil(x1)))
    return slice(r0, r1), slice(c0, c1)


def erase_text(image: np.ndarray, text_boxes: Sequence[TextBox]) -> np.ndarray:
    out = np.array(image, copy=True)
    fill = median_color(image)
    for box in text_boxes:
        out[_polygon_mask(box.polygon, out.shape[:2])] = fill
    return out


def add_text(image: np.ndarray, text_boxes: Sequence[TextBox], rng: np.random.Generator,
             policy: AugmentationPolicy, region=None) -> np.ndarray:
    """Paste skewed, cropped copies of the image's own text into ``region``."""
    h, w = image.shape[:2]
    sources = [b for b in text_boxes if _crop_size(b, image.shape) >= (2, 2)]
    if not sources:
        return np.array(image, copy=True)
    fill = tuple(int(v) for v in median_color(image))
    canvas = Image.fromarray(np.asarray(image, dtype=np.uint8))
    rx0, ry0, rx1, ry1 = region if region is not None else (0, 0, w, h)
    for _ in range(int(rng.integers(1, policy.max_added_boxes + 1))):
        box = sources[int(rng.integers(len(sources)))]
        rs, cs = _box_slices(box, image.shape)
        crop = np.asarray(image)[rs, cs]
        # keep a random horizontal span of at least half the box
        cw = crop.shape[1]
        keep = max(2, int(round(cw * rng.uniform(0.5, 1.0))))
        start = int(rng.integers(0, cw - keep + 1))
        patch = Image.fromarray(crop[:, start:start + keep])
        shear = math.tan(math.radians(rng.uniform(-policy.skew_range, policy.skew_range)))
        pw, ph = patch.size
        extra = int(math.ceil(abs(shear) * ph))
        patch = patch.transform((pw + extra, ph), Image.AFFINE,
                                (1, shear, -extra if shear > 0 else 0, 0, 1, 0),
                                resample=Image.NEAREST, fillcolor=fill)
        pw, ph = patch.size
        max_x, max_y = int(rx1) - pw, int(ry1) - ph
        if max_x < int(rx0) or max_y < int(ry0):
            continue
        px = int(rng.integers(int(rx0), max_x + 1))
        py = int(rng.integers(int(ry0), max_y + 1))
        canvas.paste(patch, (px, py))
    return np.asarray(canvas, dtype=np.uint8).copy()


def _crop_size(box: TextBox, shape) -> Tuple[int, int]:
    rs, cs = _box_slices(box, shape)
    return (rs.stop - rs.start, cs.stop - cs.start)


def apply_text_invariance(image: np.ndarray, text_boxes: Sequence[TextBox], rng: np.random.Generator,
                          policy: AugmentationPolicy = AugmentationPolicy(), plot_bbox=None,
                          branch: Optional[str] = None) -> np.ndarray:
    """Randomly erase all text, add text crops, or leave the image alone.

    ``branch`` forces one outcome; the rng is still advanced by one draw so
    forced and free runs consume the stream identically up to that point.
    """
    return augment_with_branch(image, text_boxes, rng, policy, plot_bbox, branch)[0]


def augment_with_branch(image, text_boxes, rng, policy=AugmentationPolicy(), plot_bbox=None,
                        branch=None) -> Tuple[np.ndarray, str]:
    drawn = draw_branch(rng, policy)
    branch = branch or drawn
    if not text_boxes or branch == BRANCH_NONE:
        return np.array(image, copy=True), branch
    if branch == BRANCH_ERASE:
        return erase_text(image, text_boxes), branch
    if branch == BRANCH_ADD:
        return add_text(image, text_boxes, rng, policy, plot_bbox), branch
    raise ValueError(f"unknown branch {branch!r}")


@dataclass(frozen=True)
class TrainingExample:
    image: np.ndarray
    masks: MaskSet
    label: ChartType
    keypoints: KeypointList
    chart: AnnotatedChart


def build_training_example(chart: AnnotatedChart, policy: AugmentationPolicy, rng: np.random.Generator,
                           stride: int = DEFAULT_STRIDE, branch: Optional[str] = None) -> TrainingExample:
    """Augmented image plus targets built from the unmodified annotation."""
    kps = extract_keypoints(chart)
    masks = build_mask_set(chart, stride=stride, keypoints=kps)
    image = apply_text_invariance(chart.image, chart.text_boxes, rng, policy, chart.plot_bbox, branch)
    return TrainingExample(image, masks, chart.chart_type, kps, chart)


def example_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), int(index)]))


def build_examples(charts: Sequence[AnnotatedChart], policy: AugmentationPolicy, seed: int, epoch: int,
                   stride: int = DEFAULT_STRIDE, jobs: int = 1) -> List[TrainingExample]:
    """Examples for one epoch; each owns an rng keyed by (seed, epoch, index),
    so results do not depend on ``jobs``."""
    def one(i):
        return build_training_example(charts[i], policy, example_rng(seed, epoch, i), stride)

    if jobs <= 1:
        return [one(i) for i in range(len(charts))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(charts))))


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    split: str


def read_manifest(path: Union[str, os.PathLike]) -> List[ManifestEntry]:
    """Lines of ``<annotation path> <split>``; blank lines and ``#`` comments
    are skipped and relative paths resolve against the manifest's folder."""
    path = Path(path)
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.rsplit(None, 1)
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise ValueError(f"{path}:{n}: expected '<path> <train|val|test>'")
        p = Path(parts[0])
        out.append(ManifestEntry(p if p.is_absolute() else path.parent / p, parts[1]))
    return out


def write_manifest(entries: Sequence[ManifestEntry], path: Union[str, os.PathLike]) -> None:
    path = Path(path)
    lines = []
    for e in entries:
        p = Path(e.path)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{p} {e.split}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(manifest: Union[str, os.PathLike], split: str) -> List[AnnotatedChart]:
    return [load_annotation(e.path) for e in read_manifest(manifest) if e.split == split]


def epoch_charts(real: Sequence[AnnotatedChart], epoch: int, seed: int, n_synthetic: Optional[int] = None,
                 chart_types: Sequence[ChartType] = CHART_TYPES,
                 canvas: Tuple[int, int] = (256, 256)) -> List[AnnotatedChart]:
    """All real charts plus as many freshly drawn synthetic charts
    (``n_synthetic`` overrides the count)."""
    from .errors import LayoutOverflow
    from .synthgen import generate

    n = len(real) if n_synthetic is None else n_synthetic
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), 0xC4A7]))
    synth = []
    while len(synth) < n:
        ct = chart_types[int(rng.integers(len(chart_types)))]
        try:
            synth.append(generate(ct, int(rng.integers(2**31)), canvas))
        except LayoutOverflow:
            continue
    return list(real) + synth
