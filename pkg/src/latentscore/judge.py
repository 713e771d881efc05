"""External audio-visual judge reports: strict schema, aggregation.

A judge report is one flat JSON object scoring seven alignment axes on a
discrete 1-5 scale, with a short free-text global analysis and one-word
theme/emotion labels per modality. Only validation and aggregation live
here; producing the reports is an external concern behind `JudgeClient`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

from .errors import ValidationError

__all__ = ["AXES", "LABEL_FIELDS", "JudgeReport", "JudgeClient", "parse_judge", "aggregate_judges"]

AXES = (
    "rhythmic_sync",
    "theme_coherence",
    "emotion_alignment",
    "cultural_relevance",
    "temporal_dynamics",
    "instrumentation_fit",
    "overall_alignment",
)

LABEL_FIELDS = ("video_theme", "audio_theme", "video_emotion", "audio_emotion")

_ALLOWED_KEYS = set(AXES) | set(LABEL_FIELDS) | {"global_analysis"}


@dataclass
class JudgeReport:
    global_analysis: str
    scores: dict[str, int]  # axis -> 1..5
    labels: dict[str, str]  # label field -> single word


class JudgeClient(Protocol):
    """Anything that can score one (video, audio, prompt) sample and
    return raw report JSON text. Only the schema is implemented here."""

    def score(self, sample_id: str) -> str: ...


def parse_judge(text: str) -> JudgeReport:
    """Validate one report document; every failure names the field."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report is not valid JSON: {exc}", field=None) from exc
    if not isinstance(doc, dict):
        raise ValidationError("report must be a JSON object", field=None)

    unknown = sorted(doc.keys() - _ALLOWED_KEYS)
    if unknown:
        raise ValidationError(f"unknown field {unknown[0]!r}", field=unknown[0])

    if "global_analysis" not in doc:
        raise ValidationError("missing field 'global_analysis'", field="global_analysis")
    analysis = doc["global_analysis"]
    if not isinstance(analysis, str) or not analysis.strip():
        raise ValidationError(
            "field 'global_analysis' must be a non-empty string", field="global_analysis"
        )

    scores: dict[str, int] = {}
    for axis in AXES:
        if axis not in doc:
            raise ValidationError(f"missing axis {axis!r}", field=axis)
        value = doc[axis]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(
                f"axis {axis!r} must be an integer, got {value!r}", field=axis
            )
        if not 1 <= value <= 5:
            raise ValidationError(
                f"axis {axis!r} score {value} outside the 1-5 scale", field=axis
            )
        scores[axis] = value

    labels: dict[str, str] = {}
    for name in LABEL_FIELDS:
        if name not in doc:
            raise ValidationError(f"missing label {name!r}", field=name)
        value = doc[name]
        if not isinstance(value, str) or not value or len(value.split()) != 1:
            raise ValidationError(
                f"label {name!r} must be a single word, got {value!r}", field=name
            )
        labels[name] = value

    return JudgeReport(global_analysis=analysis, scores=scores, labels=labels)


def aggregate_judges(reports: list[JudgeReport]) -> dict[str, float]:
    """Per-axis arithmetic mean, reported to 3 decimals."""
    if not reports:
        raise ValidationError("cannot aggregate zero judge reports", field=None)
    return {
        axis: round(sum(r.scores[axis] for r in reports) / len(reports), 3)
        for axis in AXES
    }
