"""Evaluation metrics: Fréchet feature distance and R-precision.

Both metrics work over pluggable feature extractors. At desk scale the
image-quality metric uses the provider's image embeddings and the geometry
metric uses silhouette Fourier features estimated from the alpha channel,
so real and fake renders are featurized by the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .captions import Caption, render_caption
from .embedding import cosine
from .errors import InvalidInputError

EIGENVALUE_CLAMP = 1e-10
DEFAULT_R = 100  # conventional distractor-set size for R-precision


@dataclass
class FeatureSet:
    features: np.ndarray  # (n, d) float64
    extractor: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got {self.features.shape}")
        if self.features.shape[0] < 2:
            raise InvalidInputError("need at least 2 feature vectors (covariance)")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("non-finite feature values")


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (negatives clipped)."""
    eigvals, eigvecs = np.linalg.eigh(matrix)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def frechet_distance(a: FeatureSet, b: FeatureSet) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    Covariances use the unbiased (n-1) estimator. The trace of the matrix
    square root is computed from the eigenvalues of the symmetrized product
    S_b^(1/2) S_a S_b^(1/2); eigenvalues below 1e-10 times the largest are
    clamped to zero before the square root.
    """
    if a.features.shape[1] != b.features.shape[1]:
        raise InvalidInputError(
            f"feature dimensions differ: {a.features.shape[1]} vs {b.features.shape[1]}")
    mu_a = a.features.mean(axis=0)
    mu_b = b.features.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a.features, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b.features, rowvar=False, ddof=1))

    sqrt_b = _sqrt_psd(cov_b)
    product = sqrt_b @ cov_a @ sqrt_b
    product = (product + product.T) / 2.0
    eigvals = np.linalg.eigvalsh(product)
    peak = max(float(eigvals.max(initial=0.0)), 0.0)
    eigvals = np.where(eigvals < EIGENVALUE_CLAMP * peak, 0.0, eigvals)
    trace_sqrt = float(np.sqrt(eigvals).sum())

    value = float(np.sum((mu_a - mu_b) ** 2)
                  + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def rank_success(image_embedding: np.ndarray, true_embedding: np.ndarray,
                 distractor_embeddings: Sequence[np.ndarray]) -> bool:
    """True iff the true caption is the strict unique similarity maximum."""
    true_sim = cosine(image_embedding, true_embedding)
    return all(cosine(image_embedding, d) < true_sim for d in distractor_embeddings)


def r_precision(generated, distractor_pool: Sequence[str], provider, r: int = DEFAULT_R,
                rng: np.random.Generator | None = None) -> float:
    """Fraction of images whose true caption beats R-1 sampled distractors.

    ``generated`` is a sequence of (image, true_caption_text). Distractors
    are drawn per image without replacement from the pool entries that
    differ from the true caption; similarity ties count as failure.
    """
    if not generated:
        raise InvalidInputError("no generated samples to score")
    if r < 2:
        raise InvalidInputError("R must be at least 2")
    rng = rng or np.random.default_rng(0)
    pool = list(distractor_pool)
    successes = 0
    for image, true_text in generated:
        eligible = [i for i, text in enumerate(pool) if text != true_text]
        if len(eligible) < r - 1:
            raise InvalidInputError(
                f"distractor pool has {len(eligible)} usable captions, need {r - 1}")
        chosen = rng.choice(len(eligible), size=r - 1, replace=False)
        image_emb = provider.encode_image(image)
        true_emb = provider.encode_text(true_text)
        distractors = [provider.encode_text(pool[eligible[int(j)]]) for j in chosen]
        successes += rank_success(image_emb, true_emb, distractors)
    return successes / len(generated)


def _empirical(tokens: Sequence[str]) -> tuple[list[str], np.ndarray]:
    values = sorted(set(tokens))
    counts = np.array([tokens.count(v) for v in values], dtype=np.float64)
    return values, counts / counts.sum()


def feasible_pool_size(captions: Sequence[Caption]) -> int:
    """How many distinct unseen captions the empirical vocabulary supports."""
    captions = list(captions)
    if not captions:
        return 0
    nouns = {c.noun for c in captions}
    adjectives = {a for c in captions for a in c.adjectives}
    counts = {len(c.adjectives) for c in captions}
    combos = 0
    if 1 in counts:
        combos += len(nouns) * len(adjectives)
    if 2 in counts:
        combos += len(nouns) * len(adjectives) * (len(adjectives) - 1)
    return combos - len({c.text for c in captions})


def random_caption_pool(captions: Sequence[Caption], count: int,
                        rng: np.random.Generator) -> list[str]:
    """Unseen captions with words sampled from the dataset's empirical marginals.

    Nouns, adjectives, and the 1-vs-2 adjective count are each drawn from
    their empirical distributions; results are distinct from every existing
    caption and from each other.
    """
    captions = list(captions)
    if not captions:
        raise InvalidInputError("caption dataset is empty")
    nouns = [c.noun for c in captions]
    adjectives = [a for c in captions for a in c.adjectives]
    adj_counts = [len(c.adjectives) for c in captions]
    noun_vals, noun_p = _empirical(nouns)
    adj_vals, adj_p = _empirical(adjectives)
    count_vals, count_p = _empirical([str(c) for c in adj_counts])
    existing = {c.text for c in captions}

    n_adj = len(adj_vals)
    feasible = feasible_pool_size(captions)
    if count > feasible:
        raise InvalidInputError(
            f"cannot produce {count} distinct unseen captions; only {feasible} exist")

    out: list[str] = []
    seen = set(existing)
    attempts = 0
    limit = 1000 * count + 10000
    while len(out) < count:
        attempts += 1
        if attempts > limit:
            raise InvalidInputError("rejection sampling exhausted its attempt budget")
        noun = noun_vals[int(rng.choice(len(noun_vals), p=noun_p))]
        k = int(count_vals[int(rng.choice(len(count_vals), p=count_p))])
        if k == 1:
            adjs = (adj_vals[int(rng.choice(n_adj, p=adj_p))],)
        else:
            a1 = adj_vals[int(rng.choice(n_adj, p=adj_p))]
            a2 = adj_vals[int(rng.choice(n_adj, p=adj_p))]
            if a1 == a2:
                continue
            adjs = (a1, a2)
        text = render_caption(adjs, noun)
        if text in seen:
            continue
        seen.add(text)
        out.append(text)
    return out


# --- feature extractors -------------------------------------------------------


def embedding_features(images, provider, name: str = "image-embedding") -> FeatureSet:
    """Provider image embeddings as rows; the desk-scale FID feature map."""
    feats = np.stack([provider.encode_image(img) for img in images])
    return FeatureSet(feats, name)


def silhouette_features(images, harmonics: int = 4, bins: int = 16) -> FeatureSet:
    """Geometry features from the alpha channel (the desk-scale FPD map).

    The alpha mass in each of ``bins`` angular wedges around the image center
    forms a radial profile; its first ``harmonics`` Fourier components
    (magnitude-free real/imag pairs plus the mean) are the features.
    """
    rows = []
    for img in images:
        pixels = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 4:
            raise InvalidInputError("silhouette features need RGBA input")
        h, w = pixels.shape[:2]
        ys = (np.arange(h) + 0.5) / h * 2.0 - 1.0
        xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
        angle = np.arctan2(ys[:, None], xs[None, :])
        wedge = ((angle + np.pi) / (2.0 * np.pi) * bins).astype(int) % bins
        alpha = pixels[:, :, 3]
        profile = np.bincount(wedge.ravel(), weights=alpha.ravel(), minlength=bins)
        profile = profile / (h * w)
        spectrum = np.fft.rfft(profile)
        row = [spectrum[0].real]
        for m in range(1, harmonics + 1):
            row.extend((spectrum[m].real, spectrum[m].imag))
        rows.append(row)
    return FeatureSet(np.asarray(rows), "silhouette-fourier")


def write_metric_report(path, metrics: dict[str, float]) -> None:
    """Key-value metric lines, 9 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(metrics):
            fh.write(f"{key}\t{metrics[key]:.9g}\n")
