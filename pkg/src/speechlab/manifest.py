"""Line-delimited utterance manifests.

One JSON object per line with fields id, audio, transcript (optional for
unlabeled audio) and duration_s. Reads are strict: unknown fields,
duplicate ids, missing fields or non-positive durations fail with the
offending line number.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio: str
    transcript: str | None
    duration_s: float


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def ids(self) -> list[str]:
        return [e.utterance_id for e in self.entries]

    def labeled(self) -> "Manifest":
        return Manifest(tuple(e for e in self.entries if e.transcript))

    def subset(self, ids) -> "Manifest":
        wanted = set(ids)
        return Manifest(tuple(e for e in self.entries if e.utterance_id in wanted))


_FIELDS = {"id", "audio", "transcript", "duration_s"}


def _parse_line(line: str, lineno: int) -> ManifestEntry:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"line {lineno}: malformed manifest record ({e.msg})") from None
    if not isinstance(record, dict):
        raise ValueError(f"line {lineno}: manifest record must be an object")
    unknown = set(record) - _FIELDS
    if unknown:
        raise ValueError(f"line {lineno}: unknown field(s) {sorted(unknown)}")
    for required in ("id", "audio", "duration_s"):
        if required not in record:
            raise ValueError(f"line {lineno}: missing field {required!r}")
    duration = record["duration_s"]
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise ValueError(f"line {lineno}: duration_s must be positive, got {duration!r}")
    transcript = record.get("transcript")
    if transcript is not None and transcript == "":
        raise ValueError(f"line {lineno}: transcript present but empty")
    return ManifestEntry(utterance_id=str(record["id"]), audio=str(record["audio"]),
                         transcript=transcript, duration_s=float(duration))


def read_manifest(path) -> Manifest:
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            entry = _parse_line(line, lineno)
            if entry.utterance_id in seen:
                raise ValueError(f"line {lineno}: duplicate utterance id {entry.utterance_id!r}")
            seen.add(entry.utterance_id)
            entries.append(entry)
    return Manifest(entries=tuple(entries))


def write_manifest(manifest: Manifest, path) -> None:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            for e in manifest.entries:
                record = {"id": e.utterance_id, "audio": e.audio}
                if e.transcript is not None:
                    record["transcript"] = e.transcript
                record["duration_s"] = e.duration_s
                f.write(json.dumps(record, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
