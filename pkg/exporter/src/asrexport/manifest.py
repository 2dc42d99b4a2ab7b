"""Corpus manifest: one JSON object per line naming audio and transcript."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: Path
    tokens: tuple[int, ...]


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSONL manifest: {"utterance_id", "audio", "tokens"} per line."""
    path = Path(path)
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        try:
            utt = str(doc["utterance_id"])
            audio = path.parent / doc["audio"]
            tokens = tuple(int(t) for t in doc["tokens"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: missing or malformed field: {exc}") from exc
        if not tokens:
            raise ValueError(f"{path}:{lineno}: transcript of '{utt}' is empty")
        if utt in seen:
            raise ValueError(f"{path}:{lineno}: duplicate utterance id '{utt}'")
        seen.add(utt)
        entries.append(ManifestEntry(utterance_id=utt, audio_path=audio, tokens=tokens))
    return entries
