"""Deterministic fixture builders shared across the test modules."""

from __future__ import annotations

import numpy as np

from spectra import CheckpointManifest, write_checkpoint
from spectra.rng import stream_for

TWO_LAYER_NAMES = ("blocks.0.mlp.fc1", "blocks.1.mlp.fc1")
TWO_LAYER_SHAPES = ((12, 8), (9, 7))
PRE_SEED = 101
POST_PERTURB_SEED = 202
PERTURB_SCALE = 0.05
TRAJECTORY_SEEDS = (301, 302, 303)


def two_layer_pair(dirpath):
    """Write the seeded pre/post checkpoint pair used by CLI goldens.

    post = pre + 0.05 * noise per layer; a rank-1 bias rides along in
    both files to exercise skipping.
    """
    pre_path = str(dirpath / "pre.safetensors")
    post_path = str(dirpath / "post.safetensors")
    pre = CheckpointManifest()
    post = CheckpointManifest()
    for name, shape in zip(TWO_LAYER_NAMES, TWO_LAYER_SHAPES):
        count = shape[0] * shape[1]
        base = stream_for(PRE_SEED, name, 0).normals(count).reshape(shape)
        bump = stream_for(POST_PERTURB_SEED, name, 0).normals(count).reshape(shape)
        pre.add(name, base)
        post.add(name, base + PERTURB_SCALE * bump)
    pre.add("blocks.0.mlp.bias", np.zeros(8))
    post.add("blocks.0.mlp.bias", np.zeros(8))
    write_checkpoint(pre, pre_path)
    write_checkpoint(post, post_path)
    return pre_path, post_path


def trajectory_checkpoints(dirpath):
    """Three seeded single-layer checkpoints for trajectory tests."""
    paths = []
    for i, seed in enumerate(TRAJECTORY_SEEDS):
        man = CheckpointManifest()
        vals = stream_for(seed, "enc.w", 0).normals(8 * 6).reshape(8, 6)
        man.add("enc.w", vals)
        path = str(dirpath / f"ckpt{i}.safetensors")
        write_checkpoint(man, path)
        paths.append(path)
    return paths


def random_matrix(rng: np.random.Generator, m: int, n: int, condition: float = 1.0) -> np.ndarray:
    """Random matrix with a controlled spectrum.

    condition=1 gives a plain Gaussian; otherwise singular values are
    geometric from 1 down to 1/condition with random orthogonal bases.
    """
    if condition <= 1.0:
        return rng.standard_normal((m, n))
    p = min(m, n)
    q1, _ = np.linalg.qr(rng.standard_normal((m, p)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, p)))
    s = np.geomspace(1.0, 1.0 / condition, p)
    return (q1 * s) @ q2.T


def acceptance_shapes(rng: np.random.Generator, count: int = 200):
    """Shape/conditioning mix for the SVD acceptance sweep:
    mostly small, some medium, a few at the 256 x 192 extreme."""
    cases = []
    for i in range(count):
        if i < 4:
            m, n = 256, 192
            condition = 1.0 if i % 2 == 0 else 1e6
        elif i < 20:
            m = int(rng.integers(96, 192))
            n = int(rng.integers(64, 128))
            condition = float(rng.choice([1.0, 1e3, 1e8]))
        else:
            m = int(rng.integers(2, 64))
            n = int(rng.integers(2, 48))
            condition = float(rng.choice([1.0, 1.0, 1e2, 1e5, 1e9]))
        if rng.random() < 0.3:
            m, n = n, m
        cases.append((m, n, condition))
    return cases
