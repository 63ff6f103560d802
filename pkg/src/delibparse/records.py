"""Utterance records and their JSON-lines on-disk form.

One record per line with fields ``id``, ``audio`` (nested array),
``ref_text``, ``hyp_text``, ``annotation``, ``has_asr_error``; UTF-8, LF
line endings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np


@dataclass
class UtteranceRecord:
    id: str
    ref_text: str
    annotation: str
    audio: np.ndarray | None = None
    hyp_text: str | None = None
    has_asr_error: bool | None = None

    @property
    def ref_words(self) -> list[str]:
        return self.ref_text.split()

    @property
    def hyp_words(self) -> list[str]:
        return (self.hyp_text or "").split()

    def with_(self, **kw) -> "UtteranceRecord":
        return replace(self, **kw)


def save_records(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            audio = None if rec.audio is None else rec.audio.tolist()
            f.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "audio": audio,
                        "ref_text": rec.ref_text,
                        "hyp_text": rec.hyp_text,
                        "annotation": rec.annotation,
                        "has_asr_error": rec.has_asr_error,
                    },
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_records(path) -> list[UtteranceRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            audio = None if d["audio"] is None else np.asarray(d["audio"], dtype=np.float64)
            records.append(
                UtteranceRecord(
                    id=d["id"],
                    ref_text=d["ref_text"],
                    annotation=d["annotation"],
                    audio=audio,
                    hyp_text=d["hyp_text"],
                    has_asr_error=d["has_asr_error"],
                )
            )
    return records
