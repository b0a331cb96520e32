"""Shared backend value types and verdict parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import UnparseableVerdictError
from ..raster import BBox, Raster

SELF_STYLE = "self_style"
BACKGROUND_STYLE = "background_style"
VARIANT_TAGS = (SELF_STYLE, BACKGROUND_STYLE)

_CHOICE_RE = re.compile(r"^\s*choice\s*:\s*([ab])\b", re.IGNORECASE)
_REASON_RE = re.compile(r"^\s*reason\s*:\s*(.*)$", re.IGNORECASE)


@dataclass(eq=False)
class EmbeddingBundle:
    """Global unit vector plus an optional token sequence."""

    global_vec: np.ndarray
    tokens: list[np.ndarray] | None = None

    def validate(self) -> None:
        norm = float(np.linalg.norm(self.global_vec))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"global embedding norm {norm} not unit")
        if self.tokens:
            lengths = {len(t) for t in self.tokens}
            if len(lengths) > 1:
                raise ValueError(f"token vectors have mixed lengths {sorted(lengths)}")


@dataclass(eq=False)
class GenerationRequest:
    """One conditioned-composition request.

    ``metadata`` carries in-process extras (the candidate crop and mask
    for the reference backend); it is never sent over the wire.
    """

    background: Raster
    conditioning: Raster
    shape_mask: Raster
    bbox: BBox
    id_tokens: list[np.ndarray]
    seed: int
    variant_tag: str
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.background.shape[:2] != self.conditioning.shape[:2]:
            raise ValueError("background and conditioning sizes differ")
        x, y, w, h = self.bbox
        bh, bw = self.background.shape[:2]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > bw or y + h > bh:
            raise ValueError(f"bbox {self.bbox} outside background {bw}x{bh}")
        if self.shape_mask.shape[:2] != (h, w):
            raise ValueError("shape_mask does not match the bbox size")
        if self.variant_tag not in VARIANT_TAGS:
            raise ValueError(f"unknown variant tag {self.variant_tag!r}")


@dataclass
class VlmVerdict:
    """Parsed two-alternative judgment."""

    choice: str  # "A" or "B"
    rationale: str
    raw: str


def parse_verdict(text: str) -> VlmVerdict:
    """Parse a judge response into a verdict.

    The choice comes from the first line matching ``Choice: A`` or
    ``Choice: B`` (case-insensitive); the rationale is the first
    ``Reason:`` line if present, otherwise the remaining text.
    """
    choice = None
    rationale = None
    leftovers: list[str] = []
    for line in text.splitlines():
        m = _CHOICE_RE.match(line)
        if m and choice is None:
            choice = m.group(1).upper()
            continue
        m = _REASON_RE.match(line)
        if m and rationale is None:
            rationale = m.group(1).strip()
            continue
        leftovers.append(line.strip())
    if choice is None:
        raise UnparseableVerdictError("response has no 'Choice:' line")
    if rationale is None:
        rationale = " ".join(s for s in leftovers if s)
    return VlmVerdict(choice=choice, rationale=rationale, raw=text)
