"""Pseudo-caption generation by embedding retrieval.

Four stages per object: encode its rendered views, retrieve the best-matching
nouns and adjectives from the vocabulary, enumerate templated candidate
sentences ("a {adj} {noun}", one or two adjectives), and keep the candidates
whose text embeddings score highest against the object's image embeddings.

Everything here is deterministic: candidate enumeration order is fixed,
score ties break lexicographically (word retrieval) or by enumeration order
(caption ranking), and repeated runs produce byte-identical output files.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .embedding import cosine
from .errors import FormatError, InvalidConfigError, InvalidInputError
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

CAPTION_FILE_VERSION = "v1"
_HEADER_RE = re.compile(r"^#taps-captions v1 dim=(\d+) provider=(\S+)$")


@dataclass(frozen=True)
class CaptionGenConfig:
    k1: int = 3
    k2: int = 6
    captions_per_object: int = 20
    max_adjectives_per_caption: int = 2
    view_aggregation: str = "mean"  # "mean" or "max" over the object's views

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise InvalidConfigError("k1 and k2 must be positive")
        if self.captions_per_object < 1:
            raise InvalidConfigError("captions_per_object must be positive")
        if self.max_adjectives_per_caption not in (1, 2):
            raise InvalidConfigError("max_adjectives_per_caption must be 1 or 2")
        if self.view_aggregation not in ("mean", "max"):
            raise InvalidConfigError("view_aggregation must be 'mean' or 'max'")

    def candidate_count(self) -> int:
        k1, k2 = self.k1, self.k2
        if self.max_adjectives_per_caption == 1:
            return k1 * k2
        return k1 * (k2 + k2 * (k2 - 1))


@dataclass(frozen=True)
class Caption:
    text: str
    noun: str
    adjectives: tuple[str, ...]
    score: float | None = None
    object_id: str = ""


def render_caption(adjectives, noun: str) -> str:
    return "a " + " ".join(adjectives) + " " + noun


def parse_caption(text: str) -> tuple[tuple[str, ...], str]:
    """Invert the template: text -> (adjectives, noun)."""
    parts = text.split(" ")
    if len(parts) not in (3, 4) or parts[0] != "a" or "" in parts:
        raise FormatError(f"caption {text!r} does not match the template")
    return tuple(parts[1:-1]), parts[-1]


def _aggregate(scores: np.ndarray, how: str) -> float:
    return float(scores.mean() if how == "mean" else scores.max())


def _score_token(emb: np.ndarray, image_embeddings, how: str) -> float:
    sims = np.array([cosine(emb, img) for img in image_embeddings])
    return _aggregate(sims, how)


def retrieve_words(image_embeddings, vocab: Vocabulary, provider,
                   config: CaptionGenConfig) -> tuple[list[str], list[str]]:
    """Top-k1 nouns and top-k2 adjectives by similarity to the object's views.

    Returned lists are sorted by descending similarity; exact ties break in
    lexicographic token order.
    """
    if not image_embeddings:
        raise InvalidInputError("need at least one image embedding")
    if config.k1 > len(vocab.nouns):
        raise InvalidConfigError(f"k1={config.k1} exceeds noun count {len(vocab.nouns)}")
    if config.k2 > len(vocab.adjectives):
        raise InvalidConfigError(
            f"k2={config.k2} exceeds adjective count {len(vocab.adjectives)}")

    def top(tokens, k):
        scored = [(tok, _score_token(provider.encode_text(tok), image_embeddings,
                                     config.view_aggregation))
                  for tok in tokens]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return [tok for tok, _ in scored[:k]]

    return top(vocab.nouns, config.k1), top(vocab.adjectives, config.k2)


def build_candidates(nouns, adjectives, config: CaptionGenConfig) -> list[Caption]:
    """Exhaustive template expansion in deterministic enumeration order.

    Per noun (retrieval order): all single adjectives, then all ordered
    pairs of distinct adjectives, both in retrieval order.
    """
    if not nouns or not adjectives:
        raise InvalidInputError("nouns and adjectives must be non-empty")
    out = []
    for noun in nouns:
        for adj in adjectives:
            out.append(Caption(render_caption((adj,), noun), noun, (adj,)))
        if config.max_adjectives_per_caption == 2:
            for a1 in adjectives:
                for a2 in adjectives:
                    if a1 != a2:
                        out.append(Caption(render_caption((a1, a2), noun), noun, (a1, a2)))
    return out


def rank_and_select(candidates, image_embeddings, provider,
                    config: CaptionGenConfig) -> list[Caption]:
    """Score candidates against the views; keep the top ``captions_per_object``.

    Ties keep enumeration order (stable sort). Scores are recorded on the
    returned captions.
    """
    if not candidates:
        raise InvalidInputError("candidate list is empty")
    if config.captions_per_object > len(candidates):
        raise InvalidConfigError(
            f"captions_per_object={config.captions_per_object} exceeds "
            f"candidate count {len(candidates)}")
    scored = [replace(c, score=_score_token(provider.encode_text(c.text),
                                            image_embeddings,
                                            config.view_aggregation))
              for c in candidates]
    ranked = sorted(scored, key=lambda c: -c.score)
    return ranked[:config.captions_per_object]


@dataclass
class CaptionDataset:
    """The per-object caption sets plus provenance for the file header."""

    dimension: int
    provider_name: str
    captions: list[Caption] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def captions_for(self, object_id: str) -> list[Caption]:
        return [c for c in self.captions if c.object_id == object_id]

    def object_ids(self) -> list[str]:
        seen = dict.fromkeys(c.object_id for c in self.captions)
        return list(seen)


def generate_pseudo_captions(manifest, vocab: Vocabulary, provider,
                             config: CaptionGenConfig,
                             object_ids=None) -> CaptionDataset:
    """Run the full retrieval pipeline over every object in the manifest.

    Objects are processed independently in sorted id order. An object with
    zero views is skipped with a warning and recorded in the skip report.
    """
    from .dataset import load_object_views  # local import to avoid a cycle

    dataset = CaptionDataset(provider.dimension, provider.descriptor.name)
    ids = sorted(object_ids) if object_ids is not None else manifest.objects()
    for object_id in ids:
        views = load_object_views(manifest, object_id)
        if not views:
            logger.warning("object %s has zero views; skipping", object_id)
            dataset.skipped.append(object_id)
            continue
        embeddings = [provider.encode_image(v.pixels) for v in views]
        nouns, adjectives = retrieve_words(embeddings, vocab, provider, config)
        candidates = build_candidates(nouns, adjectives, config)
        selected = rank_and_select(candidates, embeddings, provider, config)
        dataset.captions.extend(replace(c, object_id=object_id) for c in selected)
    return dataset


def save_captions(dataset: CaptionDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#taps-captions {CAPTION_FILE_VERSION} "
                 f"dim={dataset.dimension} provider={dataset.provider_name}\n")
        for cap in dataset.captions:
            fh.write(f"{cap.object_id}\t{cap.text}\t{cap.score:.9g}\n")


def load_captions(path) -> CaptionDataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _HEADER_RE.match(header)
        if not m:
            raise FormatError(f"bad caption header {header!r}", path=path, line=1)
        dataset = CaptionDataset(int(m.group(1)), m.group(2))
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"expected 3 tab-separated fields, got {len(parts)}",
                                  path=path, line=lineno)
            object_id, text, score_txt = parts
            try:
                score = float(score_txt)
            except ValueError:
                raise FormatError(f"bad score {score_txt!r}", path=path, line=lineno)
            adjectives, noun = parse_caption(text)
            dataset.captions.append(Caption(text, noun, adjectives, score, object_id))
    return dataset
