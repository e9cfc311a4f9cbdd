"""Seeded synthetic data: feature corpora, queries, and OCR fixture pages.

The corpus generator follows a latent-topic model: every document owns a
latent vector (its topic centroid plus within-topic jitter), and each view
is a fixed random projection of that latent plus view-specific gaussian
noise. Under the text_rich preset the text view is far less noisy than the
visual view, so an encoder that sees text has strictly more signal — the
condition the teacher/student experiments need. Queries perturb a sampled
document's latent and carry that document as their gold positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .encoders import FeatureRecord
from .errors import ConfigError, ContractError
from .jsonio import load_json
from .layout import OcrBox, OcrPage
from .retrieval import QueryRecord

TOPIC_DIM = 16
WITHIN_TOPIC_STD = 0.5
TRAIN_FRACTION = 0.8

REGIMES = ("text_rich", "visual_rich")


@dataclass
class SynthConfig:
    num_topics: int = 50
    corpus_size: int = 2000
    num_queries: int = 500
    visual_dim: int = 32
    text_dim: int = 32
    visual_noise: float = 0.6
    text_noise: float = 0.1
    query_noise: float = 0.2
    regime: str = "text_rich"
    seed: int = 0

    def __post_init__(self):
        for name in ("num_topics", "corpus_size", "num_queries", "visual_dim", "text_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.corpus_size < self.num_topics:
            raise ConfigError(
                f"corpus_size {self.corpus_size} must be >= num_topics {self.num_topics}"
            )
        for name in ("visual_noise", "text_noise", "query_noise"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "text_rich" and not self.text_noise < self.visual_noise:
            raise ConfigError("text_rich regime requires text_noise < visual_noise")
        if self.regime == "visual_rich" and not self.visual_noise < self.text_noise:
            raise ConfigError("visual_rich regime requires visual_noise < text_noise")

    @classmethod
    def preset(cls, regime: str, seed: int = 0, **overrides) -> "SynthConfig":
        if regime == "text_rich":
            base = dict(visual_noise=0.6, text_noise=0.1)
        elif regime == "visual_rich":
            base = dict(visual_noise=0.1, text_noise=0.6)
        else:
            raise ConfigError(f"regime must be one of {REGIMES}, got {regime!r}")
        base.update(overrides)
        return cls(regime=regime, seed=seed, **base)

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        doc = load_json(path)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must contain a JSON object")
        return cls.from_dict(doc)


def _rng(config: SynthConfig, stream: int) -> np.random.Generator:
    """Independent generator for one named stream of this config's seed."""
    return np.random.default_rng(np.random.SeedSequence((config.seed % (1 << 63), stream)))


_TOPICS, _ASSIGN, _JITTER, _PROJ = 1, 2, 3, 4
_VNOISE, _TNOISE = 101, 102
_QPICK, _QNOISE, _QSPLIT = 201, 202, 203
_OCR = 301


def _latents(config: SynthConfig):
    """Topic centroids, per-doc assignments, latents, and view projections."""
    centroids = _rng(config, _TOPICS).normal(size=(config.num_topics, TOPIC_DIM))
    assign = _rng(config, _ASSIGN).integers(0, config.num_topics, size=config.corpus_size)
    latents = centroids[assign] + WITHIN_TOPIC_STD * _rng(config, _JITTER).normal(
        size=(config.corpus_size, TOPIC_DIM))
    scale = 1.0 / math.sqrt(TOPIC_DIM)
    r_proj = _rng(config, _PROJ)
    p_visual = r_proj.normal(scale=scale, size=(config.visual_dim, TOPIC_DIM))
    p_text = r_proj.normal(scale=scale, size=(config.text_dim, TOPIC_DIM))
    return centroids, assign, latents, p_visual, p_text


def gen_corpus(config: SynthConfig) -> list:
    """Deterministic corpus of feature records with both views."""
    _, assign, latents, p_visual, p_text = _latents(config)
    visual = latents @ p_visual.T + config.visual_noise * _rng(config, _VNOISE).normal(
        size=(config.corpus_size, config.visual_dim))
    text = latents @ p_text.T + config.text_noise * _rng(config, _TNOISE).normal(
        size=(config.corpus_size, config.text_dim))
    docs = []
    for i in range(config.corpus_size):
        did = f"doc-{i:05d}"
        docs.append(FeatureRecord(
            id=did,
            visual_features=visual[i],
            text_features=text[i],
            text=f"synthetic page {did} topic topic-{assign[i]:03d}",
        ))
    return docs


def gen_queries(config: SynthConfig, corpus) -> tuple:
    """(train, test) query lists; each query's gold positive is one corpus doc.

    The latents are regenerated from the config seed, so the corpus passed
    in must come from gen_corpus with the same config.
    """
    corpus = list(corpus)
    if len(corpus) != config.corpus_size:
        raise ContractError(
            f"corpus size {len(corpus)} does not match config corpus_size {config.corpus_size}"
        )
    _, _, latents, _, _ = _latents(config)
    r_pick = _rng(config, _QPICK)
    r_noise = _rng(config, _QNOISE)
    r_split = _rng(config, _QSPLIT)
    replace = config.num_queries > config.corpus_size
    picks = r_pick.choice(config.corpus_size, size=config.num_queries, replace=replace)
    queries = []
    for qi, di in enumerate(picks):
        features = latents[di] + config.query_noise * r_noise.normal(size=TOPIC_DIM)
        queries.append(QueryRecord(
            id=f"q-{qi:05d}",
            features=features,
            positives=[corpus[di].id],
            answers=[corpus[di].id],
        ))
    order = r_split.permutation(config.num_queries)
    n_train = math.floor(TRAIN_FRACTION * config.num_queries)
    train = [queries[i] for i in sorted(order[:n_train])]
    test = [queries[i] for i in sorted(order[n_train:])]
    return train, test


# --- OCR fixtures --------------------------------------------------------------

CHAR_W = 10.0
LINE_H = 20.0


@dataclass
class OcrFixture:
    """A page plus the string it must assemble to, derived by an independent
    walk of the spacing rules at construction time."""

    name: str
    page: OcrPage
    expected_text: str


def _named_fixtures() -> list:
    fixtures = []

    # two lines; 2-char-width gap on line one; one line-height gap between lines
    boxes = [
        OcrBox(10.0, 10.0, 10.0 + 5 * CHAR_W, 10.0 + LINE_H, "Hello", 0.95),
        OcrBox(80.0, 10.0, 80.0 + 5 * CHAR_W, 10.0 + LINE_H, "world", 0.90),
        OcrBox(10.0, 10.0 + 2 * LINE_H, 10.0 + 5 * CHAR_W, 10.0 + 3 * LINE_H, "Total", 0.80),
    ]
    fixtures.append(OcrFixture(
        name="two_lines_basic",
        page=OcrPage(page_id="two_lines_basic", width=200.0, height=100.0, boxes=boxes),
        expected_text="Hello  world\n\nTotal\n",
    ))

    # the 0.6 confidence boundary is strict: only the 0.61 box survives
    boxes = [
        OcrBox(10.0, 10.0, 10.0 + 3 * CHAR_W, 10.0 + LINE_H, "low", 0.59),
        OcrBox(50.0, 10.0, 50.0 + 4 * CHAR_W, 10.0 + LINE_H, "edge", 0.60),
        OcrBox(100.0, 10.0, 100.0 + 4 * CHAR_W, 10.0 + LINE_H, "kept", 0.61),
    ]
    fixtures.append(OcrFixture(
        name="conf_boundary",
        page=OcrPage(page_id="conf_boundary", width=200.0, height=50.0, boxes=boxes),
        expected_text="kept\n",
    ))

    # staircase: A-B overlap 12px (60% of 20), B-C 8px (40%), C-D 12px (60%)
    # -> lines {A, B} and {C, D}; the line bounding boxes overlap, so a
    # single newline separates them
    boxes = [
        OcrBox(10.0, 0.0, 10.0 + 2 * CHAR_W, 20.0, "aa", 0.9),
        OcrBox(40.0, 8.0, 40.0 + 2 * CHAR_W, 28.0, "bb", 0.9),
        OcrBox(10.0, 20.0, 10.0 + 2 * CHAR_W, 40.0, "cc", 0.9),
        OcrBox(40.0, 28.0, 40.0 + 2 * CHAR_W, 48.0, "dd", 0.9),
    ]
    fixtures.append(OcrFixture(
        name="staircase",
        page=OcrPage(page_id="staircase", width=100.0, height=60.0, boxes=boxes),
        expected_text="aa bb\ncc dd\n",
    ))

    return fixtures


_ALPHABET = "abcdefghijklmnopqrstuvwxyz"


def _random_grid_fixture(name: str, rng: np.random.Generator) -> OcrFixture:
    """Random page built on an exact character grid.

    All boxes share height LINE_H and have width len(text) * CHAR_W, and all
    gaps are integer multiples of those units, so the expected string follows
    directly from the construction: g char-widths of gap -> g spaces, m
    line-heights of gap -> 1 + min(3, m) newlines.
    """
    num_lines = int(rng.integers(2, 5))
    y = 10.0
    lines_boxes = []
    expected_lines = []
    gaps_after = []
    for li in range(num_lines):
        num_boxes = int(rng.integers(1, 4))
        x = 10.0
        texts = []
        boxes = []
        for bi in range(num_boxes):
            length = int(rng.integers(2, 9))
            word = "".join(_ALPHABET[c] for c in rng.integers(0, 26, size=length))
            boxes.append(OcrBox(x, y, x + length * CHAR_W, y + LINE_H, word,
                                float(rng.uniform(0.61, 1.0))))
            texts.append(word)
            spaces = int(rng.integers(1, 5))
            x += length * CHAR_W + spaces * CHAR_W
            if bi < num_boxes - 1:
                texts.append(" " * spaces)
        lines_boxes.append(boxes)
        expected_lines.append("".join(texts))
        gap_units = int(rng.integers(0, 4))
        gaps_after.append(gap_units)
        y += LINE_H + gap_units * LINE_H

    # low-confidence clutter that must not contribute any character
    all_boxes = [b for line in lines_boxes for b in line]
    for _ in range(int(rng.integers(0, 3))):
        cx = float(rng.uniform(10.0, 200.0))
        cy = float(rng.uniform(10.0, y - LINE_H))
        all_boxes.append(OcrBox(cx, cy, cx + 3 * CHAR_W, cy + LINE_H, "zzz",
                                float(rng.uniform(0.0, 0.6))))

    parts = [expected_lines[0]]
    for gap_units, text in zip(gaps_after, expected_lines[1:]):
        parts.append("\n" * (1 + min(3, gap_units)))
        parts.append(text)
    parts.append("\n")
    width = max(b.x1 for b in all_boxes) + 10.0
    height = y + 10.0
    page = OcrPage(page_id=name, width=width, height=height, boxes=all_boxes)
    return OcrFixture(name=name, page=page, expected_text="".join(parts))


def gen_ocr_fixtures(seed: int, num_pages: int) -> list:
    """Named golden fixtures first, then seeded random grid pages."""
    if num_pages < 1:
        raise ConfigError(f"num_pages must be >= 1, got {num_pages}")
    fixtures = _named_fixtures()[:num_pages]
    rng = np.random.default_rng(np.random.SeedSequence((seed % (1 << 63), _OCR)))
    while len(fixtures) < num_pages:
        fixtures.append(_random_grid_fixture(f"random_grid_{len(fixtures):03d}", rng))
    return fixtures
