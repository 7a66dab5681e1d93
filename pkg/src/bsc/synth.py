"""Synthetic clustered video/image data and PCA reduction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import ImageRecord, Manifest, VideoRecord, save_manifest, save_matrix

__all__ = ["synth", "PcaTransform", "pca_reduce"]


def synth(
    out_dir,
    clusters: int,
    videos_per_cluster: int,
    frames_per_video: int,
    d: int,
    subspace_dim: int,
    noise: float,
    seed: int = 0,
    images_per_video: int = 1,
    normalize: bool = True,
) -> Path:
    """Write a clustered dataset and its manifest; returns the manifest path.

    Every cluster owns a random ``subspace_dim``-dimensional subspace. A
    video's frames are standard-normal combinations of that subspace's
    basis plus isotropic Gaussian noise of scale ``noise``; its images are
    extra frames drawn the same way and never stored with the video. With
    ``normalize`` every frame and image is scaled to unit L2 norm, as is
    usual for CNN descriptors. Categories are the cluster numbers.
    """
    if d < 2 or not 1 <= subspace_dim < d:
        raise ValueError(f"need 1 <= subspace_dim < d, got subspace_dim={subspace_dim}, d={d}")
    if min(clusters, videos_per_cluster, frames_per_video) < 1 or images_per_video < 0:
        raise ValueError("cluster, video and frame counts must be positive")
    if noise < 0:
        raise ValueError(f"noise must be non-negative, got {noise}")

    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    videos, images = [], []
    for c in range(clusters):
        basis, _ = np.linalg.qr(rng.standard_normal((d, subspace_dim)))
        category = f"c{c:03d}"
        for v in range(videos_per_cluster):
            vid = f"v{c * videos_per_cluster + v:05d}"
            n_draw = frames_per_video + images_per_video
            points = basis @ rng.standard_normal((subspace_dim, n_draw)) + noise * rng.standard_normal((d, n_draw))
            if normalize:
                norms = np.linalg.norm(points, axis=0)
                points = points / np.where(norms > 0, norms, 1.0)
            vpath = out_dir / "videos" / f"{vid}.bscm"
            save_matrix(vpath, points[:, :frames_per_video])
            videos.append(VideoRecord(vid, vpath, category))
            for i in range(images_per_video):
                iid = f"i{vid[1:]}_{i}"
                ipath = out_dir / "images" / f"{iid}.bscm"
                save_matrix(ipath, points[:, frames_per_video + i])
                images.append(ImageRecord(iid, ipath, category, vid))
    manifest = out_dir / "manifest.tsv"
    save_manifest(manifest, Manifest(tuple(videos), tuple(images)))
    return manifest


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (t, d), orthonormal rows

    def apply(self, vectors) -> np.ndarray:
        return (np.atleast_2d(vectors) - self.mean) @ self.components.T

    def inverse(self, projected) -> np.ndarray:
        return np.atleast_2d(projected) @ self.components + self.mean


def pca_reduce(vectors, target_dim: int) -> tuple[np.ndarray, PcaTransform]:
    """Centered PCA of row vectors ``(n, d)`` down to ``target_dim`` dimensions."""
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    d = X.shape[1]
    if not 1 <= target_dim <= d:
        raise ValueError(f"target_dim must lie in [1, {d}], got {target_dim}")
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=True)
    transform = PcaTransform(mean, vt[:target_dim].copy())
    return transform.apply(X), transform
