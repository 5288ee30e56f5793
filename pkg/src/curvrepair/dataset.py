"""Synthesis of the 2D inpainting corpus from a set of 3D models.

Each model is segmented into surface cells, every cell becomes a
curvature-color chart, a hole is punched into the chart, and the
image/mask pair is multiplied by geometric augmentation.  The result is
a train/test directory tree plus a JSON manifest.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from zlib import crc32

import numpy as np
import scipy.ndimage

from .chart import Patch, PatchChart, parametrize, rasterize, rasterize_mask
from .features import (
    farthest_point_sample,
    mean_curvature,
    normalize_curvature,
    segment_by_seeds,
)
from .images import save_png
from .mesh import TriMesh, face_submesh, grow_disk_submesh, validate
from .meshio import load_mesh

logger = logging.getLogger(__name__)

AUGMENTATIONS = ("id", "rot90", "rot180", "rot270", "fliph", "flipv")
MASKS_PER_VARIANT = 5
RESAMPLE_LIMIT = 10


@dataclass
class MaskSynthesisConfig:
    """Hole placement parameters for the 2D charts.

    ``center_sigma`` is the standard deviation of the hole center's
    distance from the image center, as a fraction of the image radius;
    ``min_hole_fraction`` is the share of patch vertices the hole must
    exceed.
    """

    min_hole_fraction: float = 0.10
    center_sigma: float = 0.25
    rng_seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.min_hole_fraction < 1.0:
            raise ValueError("min_hole_fraction must be in (0, 1)")
        if not 0.0 < self.center_sigma < 1.0:
            raise ValueError("center_sigma must be in (0, 1)")


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def save(self, path) -> None:
        payload = {
            "config": self.config,
            "counts": self.counts,
            "entries": self.entries,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        payload = json.loads(Path(path).read_text())
        return cls(
            entries=payload["entries"],
            counts=payload["counts"],
            config=payload["config"],
        )


def synthesize_patch_hole(chart: PatchChart, cfg: MaskSynthesisConfig, rng=None):
    """Punch a center-biased hole into a chart.

    The hole center is the chart vertex nearest to a point drawn at a
    uniform angle and a half-normal radius around the image center; the
    hole then grows breadth-first until it exceeds
    ``cfg.min_hole_fraction`` of the patch vertices.

    Returns
    -------
    (np.ndarray, np.ndarray)
        Hole vertex ids (into the chart submesh) and the boolean mask
        image of the faces they remove.

    Raises
    ------
    ValueError
        If the patch has fewer than 10 vertices.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    sub = chart.patch.submesh
    n = sub.n_vertices
    if n < 10:
        raise ValueError(f"patch too small for hole synthesis ({n} < 10 vertices)")

    theta = rng.uniform(0.0, 2.0 * np.pi)
    radius = abs(rng.normal(0.0, cfg.center_sigma * 0.5))
    point = 0.5 + radius * np.array([np.cos(theta), np.sin(theta)])
    center = int(np.argmin(np.linalg.norm(chart.uv - point, axis=1)))

    neighbors = sub.vertex_neighbors
    hole = {center}
    frontier = [center]
    while len(hole) <= cfg.min_hole_fraction * n and frontier:
        grown = []
        for v in frontier:
            for w in neighbors[v]:
                if w not in hole:
                    hole.add(int(w))
                    grown.append(int(w))
        frontier = grown

    hole_ids = np.asarray(sorted(hole), dtype=np.int64)
    inside = np.zeros(n, dtype=bool)
    inside[hole_ids] = True
    removed = np.nonzero(inside[sub.faces].any(axis=1))[0]
    return hole_ids, rasterize_mask(chart, removed)


def _rigid_mask_variant(mask: np.ndarray, footprint: np.ndarray, rng):
    """One displaced/rotated copy of the white region, or None.

    The motion is rejected when it clips white pixels against the image
    border, leaks outside the chart footprint, or loses more than 2% of
    the white area to resampling.
    """
    side = mask.shape[0]
    count = int(np.count_nonzero(mask))
    for _ in range(RESAMPLE_LIMIT):
        angle = rng.uniform(0.0, 360.0)
        shift = rng.integers(-side // 8, side // 8 + 1, size=2)
        moved = scipy.ndimage.rotate(
            mask.astype(np.uint8), angle, reshape=False, order=0
        )
        moved = scipy.ndimage.shift(moved, shift, order=0, cval=0).astype(bool)
        moved_count = int(np.count_nonzero(moved))
        if moved_count == 0:
            continue
        if abs(moved_count - count) > 0.02 * count:
            continue
        if (moved & ~footprint).any():
            continue
        return moved
    return None


def augment_pair(image: np.ndarray, mask: np.ndarray, rng=None):
    """Multiply one chart image/mask pair by geometric augmentation.

    The image and its mask get the six rigid grid motions (identity,
    three rotations, two flips); each variant then receives up to
    ``MASKS_PER_VARIANT`` additional masks made by rigidly displacing
    the white region, dropped when ``RESAMPLE_LIMIT`` attempts cannot
    keep them inside the chart footprint.

    Returns
    -------
    list of (tag, image, list of masks)
    """
    if image.shape[:2] != mask.shape:
        raise ValueError("image and mask dimensions differ")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)

    variants = {
        "id": lambda a: a,
        "rot90": lambda a: np.rot90(a, 1, axes=(0, 1)),
        "rot180": lambda a: np.rot90(a, 2, axes=(0, 1)),
        "rot270": lambda a: np.rot90(a, 3, axes=(0, 1)),
        "fliph": lambda a: np.flip(a, axis=1),
        "flipv": lambda a: np.flip(a, axis=0),
    }
    out = []
    for tag in AUGMENTATIONS:
        op = variants[tag]
        img = np.ascontiguousarray(op(image))
        base = np.ascontiguousarray(op(mask))
        footprint = img.any(axis=2)
        masks = []
        for _ in range(MASKS_PER_VARIANT):
            moved = _rigid_mask_variant(base, footprint, rng)
            if moved is not None:
                masks.append(moved)
        out.append((tag, img, masks))
    return out


# ----------------------------------------------------------------------
# whole-corpus build


def _model_rng(rng_seed: int, model_id: str):
    return np.random.default_rng([rng_seed, crc32(model_id.encode())])


def _face_labels(mesh: TriMesh, vertex_labels: np.ndarray) -> np.ndarray:
    """Per-face label: majority vote of the corners, ties to the lowest."""
    corner = vertex_labels[mesh.faces]
    labels = np.empty(mesh.n_faces, dtype=np.int64)
    for i, (a, b, c) in enumerate(corner):
        if a == b or a == c:
            labels[i] = a
        elif b == c:
            labels[i] = b
        else:
            labels[i] = min(a, b, c)
    return labels


def model_charts(mesh: TriMesh, seeds, resolution: int, rng_seed: int):
    """All segment charts of one model, with per-model color scaling.

    For every seed count the mesh is split into graph-Voronoi cells;
    each cell is trimmed to a disk patch and flattened.  Curvature is
    normalized once over the whole model so the charts share a scale.

    Returns
    -------
    list of (PatchChart, np.ndarray)
        Chart plus its per-vertex normalized curvature field.
    """
    t_model = normalize_curvature(mean_curvature(mesh))
    adjacency = mesh.face_adjacency
    charts = []
    for k in seeds:
        seed_vertices = farthest_point_sample(mesh, int(k), rng_seed=rng_seed)
        labels = segment_by_seeds(mesh, seed_vertices)
        face_labels = _face_labels(mesh, labels)
        for cell in range(int(k)):
            seed = int(seed_vertices[cell])
            incident = np.nonzero((mesh.faces == seed).any(axis=1))[0]
            start = int(incident[0])
            allowed = set(np.nonzero(face_labels == cell)[0].tolist())
            allowed.update(int(f) for f in incident)
            # a cell starved by ragged face labels is widened ring by
            # ring until its disk patch is big enough to chart
            patch = None
            for _ in range(4):
                region = grow_disk_submesh(mesh, sorted(allowed), start)
                sub, vmap, fmap = face_submesh(mesh, region)
                if sub.n_vertices >= 10:
                    patch = Patch(
                        submesh=sub, parent_vertices=vmap, parent_faces=fmap
                    )
                    break
                for f in list(allowed):
                    allowed.update(int(g) for g in adjacency[f])
            if patch is None:
                logger.warning("segment %d of %d too small; skipped", cell, k)
                continue
            charts.append((parametrize(patch, resolution), t_model[vmap]))
    return charts


def _build_model(model_id, mesh, out_root, split_name, seeds, resolution,
                 mask_cfg, rng_seed):
    rng = _model_rng(rng_seed, model_id)
    model_dir = Path(out_root) / split_name / model_id
    model_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    attempted = 0
    n_charts = 0
    n_images = 0
    for patch_idx, (chart, t_field) in enumerate(
        model_charts(mesh, seeds, resolution, rng_seed)
    ):
        try:
            _, mask = synthesize_patch_hole(chart, mask_cfg, rng)
        except ValueError as exc:
            logger.warning("%s patch %d: %s", model_id, patch_idx, exc)
            continue
        n_charts += 1
        image = rasterize(chart, t_field)
        for tag, img, masks in augment_pair(image, mask, rng):
            stem = f"p{patch_idx:02d}_{tag}"
            image_rel = f"{split_name}/{model_id}/{stem}.png"
            save_png(Path(out_root) / image_rel, img)
            n_images += 1
            attempted += MASKS_PER_VARIANT
            for j, moved in enumerate(masks):
                mask_rel = f"{split_name}/{model_id}/{stem}_mask{j}.png"
                save_png(Path(out_root) / mask_rel, moved)
                entries.append(
                    {
                        "model_id": model_id,
                        "patch_id": f"p{patch_idx:02d}",
                        "augmentation": f"{tag}/m{j}",
                        "image_path": image_rel,
                        "mask_path": mask_rel,
                        "split": split_name,
                    }
                )
    return entries, attempted, n_charts, n_images


def build_dataset(
    models,
    out_dir,
    seeds=(2, 5, 10),
    split=(0.85, 0.15),
    rng_seed: int = 0,
    resolution: int = 512,
    mask_cfg: MaskSynthesisConfig | None = None,
    jobs: int = 1,
) -> DatasetManifest:
    """Assemble the train/test image corpus from a set of model files.

    Models that fail to load or are not watertight single-component
    surfaces are skipped with a log entry.  The split is drawn at model
    granularity so no surface contributes to both sides.

    Returns
    -------
    DatasetManifest
        Also written to ``out_dir/manifest.json``.
    """
    if abs(sum(split) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    mask_cfg = mask_cfg or MaskSynthesisConfig(rng_seed=rng_seed)
    mask_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    loaded = {}
    for path in sorted(Path(p) for p in models):
        try:
            mesh = load_mesh(path)
        except (ValueError, OSError) as exc:
            logger.warning("skipping %s: %s", path, exc)
            continue
        report = validate(mesh)
        if not (report.watertight and report.single_component):
            logger.warning(
                "skipping %s: needs a watertight single-component surface", path
            )
            continue
        loaded[path.stem] = mesh

    model_ids = sorted(loaded)
    order = np.random.default_rng(rng_seed).permutation(len(model_ids))
    n_train = int(round(split[0] * len(model_ids)))
    if len(model_ids) >= 2:
        n_train = min(max(n_train, 1), len(model_ids) - 1)
    split_of = {
        model_ids[j]: ("train" if rank < n_train else "test")
        for rank, j in enumerate(order)
    }

    def job(model_id):
        return _build_model(
            model_id,
            loaded[model_id],
            out_dir,
            split_of[model_id],
            seeds,
            resolution,
            mask_cfg,
            rng_seed,
        )

    if jobs > 1 and len(model_ids) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(job, model_ids))
    else:
        results = [job(m) for m in model_ids]

    entries = []
    attempted = 0
    total_charts = 0
    total_images = 0
    for per_model, tried, n_charts, n_images in results:
        entries.extend(per_model)
        attempted += tried
        total_charts += n_charts
        total_images += n_images
    entries.sort(
        key=lambda e: (e["model_id"], e["patch_id"], e["augmentation"])
    )

    manifest = DatasetManifest(
        entries=entries,
        counts={
            "train": sum(e["split"] == "train" for e in entries),
            "test": sum(e["split"] == "test" for e in entries),
            "charts": total_charts,
            "images": total_images,
            "achieved_pairs": len(entries),
            "max_pairs": attempted,
        },
        config={
            "seeds": [int(k) for k in seeds],
            "split": list(split),
            "rng_seed": int(rng_seed),
            "resolution": int(resolution),
            "min_hole_fraction": mask_cfg.min_hole_fraction,
            "center_sigma": mask_cfg.center_sigma,
            "models": model_ids,
        },
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
