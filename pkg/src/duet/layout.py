"""Layout-preserving assembly of OCR text boxes.

Recognition output (boxes with text and confidence) is filtered, grouped
into lines by vertical overlap, ordered left to right, and joined into a
string whose spaces and blank lines mirror the horizontal and vertical
gaps on the page:

* boxes share a line when their vertical overlap is at least half the
  smaller box height (connected components of that relation);
* lines are ordered by their mean top y, boxes within a line by x0
  (ties: y0, then input order);
* the gap between two boxes on a line becomes max(1, round(gap / cw))
  spaces, where cw is the median per-character width over all kept boxes;
* the gap between two lines becomes 1 + min(3, floor(gap / lh)) newlines,
  where lh is the median box height — never fewer than one newline, even
  for overlapping lines;
* the output ends with a single trailing newline.

Coordinates are page pixels with y growing downward. Scaling all
coordinates by a positive factor scales gaps and medians together, so the
output string is unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import median

from .errors import DataError

CONFIDENCE_THRESHOLD = 0.6
MAX_EXTRA_NEWLINES = 3
PAGE_BOUNDS_TOLERANCE = 1.0


@dataclass
class OcrBox:
    x0: float
    y0: float
    x1: float
    y1: float
    text: str
    confidence: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DataError(
                f"box must have positive extent, got ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence must be within [0, 1], got {self.confidence}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


@dataclass
class OcrPage:
    page_id: str
    width: float
    height: float
    boxes: list = field(default_factory=list)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"page {self.page_id}: width/height must be positive")
        t = PAGE_BOUNDS_TOLERANCE
        for b in self.boxes:
            if b.x0 < -t or b.y0 < -t or b.x1 > self.width + t or b.y1 > self.height + t:
                raise DataError(
                    f"page {self.page_id}: box ({b.x0}, {b.y0}, {b.x1}, {b.y1}) "
                    f"lies outside the page"
                )


def filter_confidence(boxes, threshold: float = CONFIDENCE_THRESHOLD) -> list:
    """Keep boxes with confidence strictly above the threshold, in input order."""
    if not 0.0 <= threshold <= 1.0:
        raise DataError(f"threshold must be within [0, 1], got {threshold}")
    return [b for b in boxes if b.confidence > threshold]


def _same_line(a: OcrBox, b: OcrBox) -> bool:
    overlap = min(a.y1, b.y1) - max(a.y0, b.y0)
    return overlap >= 0.5 * min(a.height, b.height)


def order_boxes(boxes) -> list:
    """Group boxes into reading-order lines.

    Line membership is the transitive closure of the pairwise overlap rule,
    so the grouping does not depend on input order.
    """
    boxes = list(boxes)
    if not boxes:
        return []
    n = len(boxes)
    component = list(range(n))

    def find(i):
        while component[i] != i:
            component[i] = component[component[i]]
            i = component[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _same_line(boxes[i], boxes[j]):
                ri, rj = find(i), find(j)
                if ri != rj:
                    component[max(ri, rj)] = min(ri, rj)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    lines = []
    for members in groups.values():
        members.sort(key=lambda i: (boxes[i].x0, boxes[i].y0, i))
        lines.append([boxes[i] for i in members])
    lines.sort(key=lambda line: sum(b.y0 for b in line) / len(line))
    return lines


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def assemble_layout(lines, page: OcrPage) -> str:
    """Join ordered lines into text whose whitespace mirrors the page gaps."""
    lines = [list(line) for line in lines if line]
    if not lines:
        return ""
    boxes = [b for line in lines for b in line]
    char_width = median(b.width / max(1, len(b.text)) for b in boxes)
    line_height = median(b.height for b in boxes)

    rendered = []
    for line in lines:
        parts = [line[0].text]
        for prev, cur in zip(line, line[1:]):
            gap = cur.x0 - prev.x1
            parts.append(" " * max(1, _half_up(gap / char_width)))
            parts.append(cur.text)
        rendered.append("".join(parts))

    out = [rendered[0]]
    for prev_line, cur_line, text in zip(lines, lines[1:], rendered[1:]):
        gap = min(b.y0 for b in cur_line) - max(b.y1 for b in prev_line)
        extra = min(MAX_EXTRA_NEWLINES, max(0, math.floor(gap / line_height)))
        out.append("\n" * (1 + extra))
        out.append(text)
    out.append("\n")
    return "".join(out)


def assemble_page(page: OcrPage, threshold: float = CONFIDENCE_THRESHOLD) -> str:
    """Filter, order, and assemble one page."""
    kept = filter_confidence(page.boxes, threshold)
    return assemble_layout(order_boxes(kept), page)


# --- OCR JSONL ---------------------------------------------------------------


def read_ocr_jsonl(path) -> list:
    pages = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{ln}"
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON: {exc}") from exc
            try:
                boxes = [
                    OcrBox(x0=b["bbox"][0], y0=b["bbox"][1], x1=b["bbox"][2],
                           y1=b["bbox"][3], text=b["text"], confidence=b["conf"])
                    for b in doc.get("boxes", [])
                ]
                pages.append(OcrPage(page_id=doc["page_id"], width=doc["width"],
                                     height=doc["height"], boxes=boxes))
            except (KeyError, TypeError, IndexError) as exc:
                raise DataError(f"{where}: malformed page record: {exc}") from exc
    if not pages:
        raise DataError(f"{path}: no pages")
    return pages


def write_ocr_jsonl(path, pages) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pages:
            doc = {
                "page_id": p.page_id,
                "width": p.width,
                "height": p.height,
                "boxes": [
                    {"bbox": [b.x0, b.y0, b.x1, b.y1], "text": b.text, "conf": b.confidence}
                    for b in p.boxes
                ],
            }
            fh.write(json.dumps(doc) + "\n")
