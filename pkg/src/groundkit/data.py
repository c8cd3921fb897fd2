"""Synthetic desk scenes, dataset manifests, CLAHE preprocessing, and the
top-1 accuracy metric.

Scenes are flat-shaded sprites (six shapes x six colors) on a textured planar
surface, rendered as 8-bit RGB plus 16-bit millimeter depth. Phrases come from
four templates; the renderer's own bounds are the ground-truth boxes, so the
labels are exact by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .anchors import Box, GeometryError, PIXEL, iou
from .errors import FormatError
from .text import tokenize
from .vision import ImageTensor, resize_image

log = logging.getLogger("groundkit.data")

SHAPES = ("cube", "ball", "mug", "box", "can", "bowl")
COLORS = {
    "red": (204, 44, 38),
    "green": (46, 166, 72),
    "blue": (52, 84, 196),
    "yellow": (228, 200, 52),
    "white": (238, 238, 232),
    "black": (28, 28, 32),
}
PLURALS = {"box": "boxes"}
OBJECT_LIFT_MM = 300.0  # sprites sit well in front of the backdrop plane


def pluralize(shape: str) -> str:
    return PLURALS.get(shape, shape + "s")


# ---------------------------------------------------------------------------
# scene layout and rendering
# ---------------------------------------------------------------------------


@dataclass
class SceneObject:
    shape: str
    color: str
    cx: float  # pixel center
    cy: float
    size: float  # characteristic side in pixels


@dataclass
class SceneSpec:
    objects: list[SceneObject]
    background: int  # texture id: 0 = base domain, 1 = novel domain
    fx: float = 128.0
    fy: float = 128.0
    ppx: float = 64.0
    ppy: float = 64.0
    plane_depth_mm: float = 950.0


def _object_mask(obj: SceneObject, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    s = obj.size
    cx, cy = obj.cx, obj.cy
    if obj.shape == "cube":
        return (np.abs(xx - cx) <= s / 2) & (np.abs(yy - cy) <= s / 2)
    if obj.shape == "box":
        return (np.abs(xx - cx) <= s * 0.7) & (np.abs(yy - cy) <= s * 0.4)
    if obj.shape == "ball":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= (s / 2) ** 2
    if obj.shape == "can":
        return (np.abs(xx - cx) <= s * 0.3) & (np.abs(yy - cy) <= s * 0.6)
    if obj.shape == "mug":
        body = (np.abs(xx - (cx - s * 0.1)) <= s * 0.45) & (np.abs(yy - cy) <= s * 0.45)
        handle = (
            (np.abs(xx - (cx + s * 0.45)) <= s * 0.15)
            & (np.abs(yy - cy) <= s * 0.25)
        )
        return body | handle
    if obj.shape == "bowl":
        r = s * 0.6
        disc = (xx - cx) ** 2 + (yy - (cy - s * 0.1)) ** 2 <= r * r
        return disc & (yy >= cy - s * 0.1)
    raise FormatError(f"unknown shape {obj.shape!r}")


def _background(h: int, w: int, texture: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if texture == 0:
        base = 150.0 + 35.0 * (yy / h)
        stripe = 8.0 * np.sin(xx / 6.0)
        img = np.stack([base + stripe, base * 0.94 + stripe, base * 0.82], axis=2)
    else:
        check = 18.0 * (((xx // 16) + (yy // 16)) % 2)
        base = 52.0 + 20.0 * (yy / h) + check
        img = np.stack([base * 0.75, base * 0.85, base * 1.1], axis=2)
    return img


def render_scene(spec: SceneSpec, image_size: int, rng) -> dict:
    """Render RGB, depth, per-object pixel boxes, and masks."""
    h = w = image_size
    rgb = _background(h, w, spec.background)
    depth_plane = spec.plane_depth_mm + 0.12 * spec.plane_depth_mm * (
        np.mgrid[0:h, 0:w][0] / h
    )
    depth = depth_plane.copy()
    shade = 0.72 if spec.background == 1 else 1.0

    boxes = []
    masks = []
    for obj in spec.objects:
        mask = _object_mask(obj, h, w)
        if not mask.any():
            raise GeometryError(f"object {obj} rendered empty")
        color = np.array(COLORS[obj.color], dtype=np.float64) * shade
        rgb[mask] = color
        ys, xs = np.nonzero(mask)
        boxes.append(
            Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1), frame=PIXEL)
        )
        masks.append(mask)
        depth[mask] = depth_plane[int(obj.cy), int(obj.cx)] - OBJECT_LIFT_MM

    rgb = rgb + rng.normal(0.0, 0.02 * 255.0, size=rgb.shape)
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    depth = np.clip(np.rint(depth), 0, 65535).astype(np.uint16)
    return {"rgb": rgb, "depth": depth, "boxes": boxes, "masks": masks}


# ---------------------------------------------------------------------------
# scene sampling and query templates
# ---------------------------------------------------------------------------


def sample_scene(rng, image_size: int, domain: str = "base") -> SceneSpec:
    """2-4 non-overlapping objects; duplicated shapes get distinct colors so
    color queries stay unambiguous."""
    n = int(rng.integers(2, 5))
    duplicate = rng.random() < 0.33 and n >= 2
    shapes = list(rng.choice(SHAPES, size=n, replace=False))
    if duplicate:
        shapes[1] = shapes[0]
    colors = list(rng.choice(list(COLORS), size=n, replace=False))

    objects: list[SceneObject] = []
    for shape, color in zip(shapes, colors):
        size = float(rng.uniform(0.17, 0.31)) * image_size
        placed = False
        for _ in range(200):
            margin = size * 0.8 + 2
            cx = float(rng.uniform(margin, image_size - margin))
            cy = float(rng.uniform(margin, image_size - margin))
            cand = SceneObject(shape, color, cx, cy, size)
            if all(_overlap_frac(cand, o) < 0.10 for o in objects):
                objects.append(cand)
                placed = True
                break
        if not placed:
            break
    return SceneSpec(objects=objects, background=0 if domain == "base" else 1)


def _approx_box(obj: SceneObject) -> tuple[float, float, float, float]:
    s = obj.size
    return (obj.cx - 0.75 * s, obj.cy - 0.65 * s, obj.cx + 0.75 * s, obj.cy + 0.65 * s)


def _overlap_frac(a: SceneObject, b: SceneObject) -> float:
    ax1, ay1, ax2, ay2 = _approx_box(a)
    bx1, by1, bx2, by2 = _approx_box(b)
    ix = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    iy = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = ix * iy
    smaller = min((ax2 - ax1) * (ay2 - ay1), (bx2 - bx1) * (by2 - by1))
    return inter / smaller if smaller > 0 else 0.0


def _union_box(boxes: list[Box]) -> Box:
    return Box(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
        frame=PIXEL,
    )


def scene_queries(spec: SceneSpec, boxes: list[Box]) -> list[dict]:
    """Phrase/ground-truth pairs from the four templates. Spatial ground truth
    is the instance closest (by center distance) to the unique reference
    object; ties break toward lower image x."""
    by_shape: dict[str, list[int]] = {}
    for i, obj in enumerate(spec.objects):
        by_shape.setdefault(obj.shape, []).append(i)

    queries = []
    for shape, idxs in by_shape.items():
        multi = len(idxs) > 1
        if not multi:
            queries.append(
                {"phrase": shape, "box": boxes[idxs[0]], "tags": ["category"]}
            )
        for i in idxs:
            tags = ["category", "color"] + (["multi_instance"] if multi else [])
            queries.append(
                {
                    "phrase": f"{spec.objects[i].color} {shape}",
                    "box": boxes[i],
                    "tags": tags,
                }
            )
        if multi:
            queries.append(
                {
                    "phrase": pluralize(shape),
                    "box": _union_box([boxes[i] for i in idxs]),
                    "tags": ["category", "plural", "multi_instance"],
                }
            )

    unique_shapes = [s for s, idxs in by_shape.items() if len(idxs) == 1]
    spatial_emitted = 0
    for shape, idxs in by_shape.items():
        for ref in unique_shapes:
            if ref == shape or spatial_emitted >= 2:
                continue
            ref_center = boxes[by_shape[ref][0]].center
            best = min(
                idxs,
                key=lambda i: (
                    _dist2(boxes[i].center, ref_center),
                    boxes[i].x1,
                ),
            )
            tags = ["category", "spatial"] + (
                ["multi_instance"] if len(idxs) > 1 else []
            )
            queries.append(
                {
                    "phrase": f"the {shape} next to the {ref}",
                    "box": boxes[best],
                    "tags": tags,
                }
            )
            spatial_emitted += 1
            break
    return queries


def _dist2(a, b) -> float:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


# ---------------------------------------------------------------------------
# dataset generation and manifest I/O
# ---------------------------------------------------------------------------


@dataclass
class GroundingSample:
    image_path: Path
    depth_path: Path | None
    phrase: str
    gt_box_px: Box
    tags: frozenset[str]
    image_size: tuple[int, int]  # (W, H)


def synth_generate(
    n_scenes: int,
    seed: int,
    out_dir,
    image_size: int = 128,
    domain: str = "base",
) -> Path:
    """Render n_scenes scenes + queries; returns the manifest path. Output is
    byte-identical for identical arguments."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = out / "manifest.jsonl"
    n_queries = 0
    with open(manifest, "w", encoding="utf-8") as fh:
        for s in range(n_scenes):
            spec = sample_scene(rng, image_size, domain)
            rendered = render_scene(spec, image_size, rng)
            img_rel = f"images/scene_{s:05d}.png"
            dep_rel = f"depth/scene_{s:05d}.png"
            Image.fromarray(rendered["rgb"]).save(out / img_rel)
            Image.fromarray(rendered["depth"]).save(out / dep_rel)  # 16-bit gray
            for q in scene_queries(spec, rendered["boxes"]):
                b = q["box"]
                record = {
                    "image": img_rel,
                    "depth": dep_rel,
                    "phrase": q["phrase"],
                    "box_px": [round(v, 2) for v in b.astuple()],
                    "tags": sorted(q["tags"]),
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                n_queries += 1
    log.info(
        "generated %d scenes, %d samples (%.2f queries/image) in %s",
        n_scenes, n_queries, n_queries / n_scenes, out,
    )
    return manifest


def split_manifest(manifest_path, val_fraction: float, seed: int) -> tuple[Path, Path]:
    """Scene-grouped train/val split (no image appears in both)."""
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    by_image: dict[str, list[str]] = {}
    for line in lines:
        by_image.setdefault(json.loads(line)["image"], []).append(line)
    images = sorted(by_image)
    rng = np.random.default_rng(seed)
    rng.shuffle(images)
    n_val = max(1, int(round(len(images) * val_fraction))) if val_fraction > 0 else 0
    val_set = set(images[:n_val])
    train_path = manifest_path.parent / "train.jsonl"
    val_path = manifest_path.parent / "val.jsonl"
    with open(train_path, "w", encoding="utf-8") as tr, open(
        val_path, "w", encoding="utf-8"
    ) as va:
        for img in sorted(by_image):
            target = va if img in val_set else tr
            for line in by_image[img]:
                target.write(line + "\n")
    return train_path, val_path


def load_dataset(manifest_path) -> list[GroundingSample]:
    """Parse and validate a JSONL manifest; paths resolve relative to it."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FormatError(f"manifest {manifest_path} does not exist")
    root = manifest_path.parent
    samples = []
    tag_counts: dict[str, int] = {}
    sizes: dict[str, tuple[int, int]] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                phrase = rec["phrase"]
                box_vals = [float(v) for v in rec["box_px"]]
                tags = frozenset(rec.get("tags", []))
                image_rel = rec["image"]
            except (KeyError, ValueError, TypeError) as e:
                raise FormatError(f"{manifest_path}:{lineno}: malformed record ({e})") from None
            image_path = root / image_rel
            if image_rel not in sizes:
                if not image_path.exists():
                    raise FormatError(f"{manifest_path}:{lineno}: missing image {image_rel}")
                with Image.open(image_path) as im:
                    sizes[image_rel] = im.size  # (W, H), header only
            w, h = sizes[image_rel]
            try:
                box = Box(*box_vals, frame=PIXEL)
            except GeometryError as e:
                raise FormatError(f"{manifest_path}:{lineno}: {e}") from None
            if box.x1 < 0 or box.y1 < 0 or box.x2 > w or box.y2 > h:
                raise FormatError(
                    f"{manifest_path}:{lineno}: box {box.astuple()} outside {w}x{h} image"
                )
            if not tokenize(phrase):
                raise FormatError(f"{manifest_path}:{lineno}: empty phrase")
            depth_rel = rec.get("depth")
            samples.append(
                GroundingSample(
                    image_path=image_path,
                    depth_path=root / depth_rel if depth_rel else None,
                    phrase=phrase,
                    gt_box_px=box,
                    tags=tags,
                    image_size=(w, h),
                )
            )
            for t in tags:
                tag_counts[t] = tag_counts.get(t, 0) + 1
    if not samples:
        log.warning("manifest %s is empty", manifest_path)
    else:
        log.info("loaded %d samples from %s; tags: %s", len(samples), manifest_path,
                 dict(sorted(tag_counts.items())))
    return samples


def convert_category_annotations(records, manifest_path) -> Path:
    """Fixture converter for RGBD-Scenes/OCID style annotations.

    Each record: {"image": path, "category": str, "box_px": [x1,y1,x2,y2],
    "depth": optional path}. The category string becomes the phrase and the
    only tag. Paths must already be relative to the manifest directory.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            out = {
                "image": rec["image"],
                "depth": rec.get("depth"),
                "phrase": rec["category"],
                "box_px": [float(v) for v in rec["box_px"]],
                "tags": ["category"],
            }
            fh.write(json.dumps(out, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# CLAHE in YUV
# ---------------------------------------------------------------------------

_YUV_FROM_RGB = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.14713, -0.28886, 0.436],
        [0.615, -0.51499, -0.10001],
    ],
    dtype=np.float64,
)
_RGB_FROM_YUV = np.array(
    [
        [1.0, 0.0, 1.13983],
        [1.0, -0.39465, -0.58060],
        [1.0, 2.03211, 0.0],
    ],
    dtype=np.float64,
)


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """(H,W,3) uint8 -> (H,W,3) float64 YUV (BT.601 analog weights)."""
    return rgb.astype(np.float64) @ _YUV_FROM_RGB.T


def yuv_to_rgb(yuv: np.ndarray) -> np.ndarray:
    rgb = yuv @ _RGB_FROM_YUV.T
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def clahe_yuv(rgb: np.ndarray, clip_limit: float = 2.0, tiles=(8, 8)) -> np.ndarray:
    """Clip-limited adaptive equalization of the Y plane only; U and V pass
    through untouched. Images smaller than the tile grid fall back to global
    equalization."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise FormatError(f"clahe_yuv: expected (H,W,3) uint8, got {rgb.shape} {rgb.dtype}")
    tiles_y, tiles_x = tiles
    h, w = rgb.shape[:2]
    if h < tiles_y or w < tiles_x:
        log.warning("image %dx%d smaller than %dx%d tile grid; using global equalization",
                    w, h, tiles_x, tiles_y)
        tiles_y = tiles_x = 1
    yuv = rgb_to_yuv(rgb)
    y_eq = kernels.clahe_equalize_plane(
        yuv[:, :, 0].astype(np.float32), tiles_y, tiles_x, clip_limit
    )
    out = yuv.copy()
    out[:, :, 0] = y_eq
    return yuv_to_rgb(out)


# ---------------------------------------------------------------------------
# evaluation metric
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_depth(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.uint16)


def prepare_image(rgb: np.ndarray, target_size: int, use_clahe: bool) -> ImageTensor:
    if use_clahe:
        rgb = clahe_yuv(rgb)
    return resize_image(rgb, target_size)


@dataclass
class EvalResult:
    top1_acc: float
    per_tag: dict[str, float]
    mean_iou: float
    correct: int
    total: int
    per_tag_counts: dict[str, tuple[int, int]] = field(default_factory=dict)


def evaluate(
    model,
    samples,
    iou_threshold: float = 0.5,
    use_clahe: bool = True,
    image_cache: dict | None = None,
) -> EvalResult:
    """Top-1 accuracy at IoU > threshold, with per-tag breakdown. Samples
    sharing an image reuse one backbone pass when the model supports it."""
    if not samples:
        raise ValueError("evaluate: no samples")
    correct = 0
    iou_sum = 0.0
    tag_hits: dict[str, int] = {}
    tag_totals: dict[str, int] = {}

    def get_image(s):
        if image_cache is not None and s.image_path in image_cache:
            return image_cache[s.image_path]
        image = prepare_image(
            load_image(s.image_path), model.config.image_size, use_clahe
        )
        if image_cache is not None:
            image_cache[s.image_path] = image
        return image

    groups: dict = {}
    for s in samples:
        groups.setdefault(s.image_path, []).append(s)
    shared_backbone = hasattr(model, "encode_image") and hasattr(
        model, "infer_top1_with_pyramid"
    )
    for path, group in groups.items():
        image = get_image(group[0])
        pyramid = None
        if shared_backbone:
            from . import tensor as T

            with T.no_grad():
                pyramid = model.encode_image(image)
        for s in group:
            if pyramid is not None:
                pred = model.infer_top1_with_pyramid(pyramid, image.source_size, s.phrase)
            else:
                pred = model.infer_top1(image, s.phrase)
            overlap = iou(pred.box_px, s.gt_box_px)
            hit = overlap > iou_threshold
            correct += hit
            iou_sum += overlap
            for t in s.tags:
                tag_totals[t] = tag_totals.get(t, 0) + 1
                tag_hits[t] = tag_hits.get(t, 0) + hit
    per_tag = {t: tag_hits[t] / tag_totals[t] for t in sorted(tag_totals)}
    return EvalResult(
        top1_acc=correct / len(samples),
        per_tag=per_tag,
        mean_iou=iou_sum / len(samples),
        correct=correct,
        total=len(samples),
        per_tag_counts={t: (tag_hits[t], tag_totals[t]) for t in sorted(tag_totals)},
    )
