"""Scene vocabulary, clip records and manifest CSV I/O."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

SCENES = ("airport", "bar", "bus", "construction_site", "metro", "republic_square",
          "restaurant", "shopping_mall", "traffic_street", "urban_park")
INDOOR = ("bar", "bus", "metro", "restaurant", "shopping_mall")
MANIFEST_HEADER = ("filename", "scene", "location", "record_time")
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"


class ManifestError(ValueError):
    pass


def scene_id(name: str) -> int:
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    try:
        return SCENES.index(key)
    except ValueError:
        raise ManifestError(f"unknown scene label {name!r}") from None


def parse_time(text: str) -> datetime:
    try:
        return datetime.strptime(text.strip(), TIME_FORMAT)
    except ValueError:
        try:
            return datetime.fromisoformat(text.strip())
        except ValueError:
            raise ValueError(f"unparseable record_time {text!r}") from None


@dataclass(frozen=True)
class ClipRecord:
    filename: str
    scene: int | None
    location: str
    record_time: datetime

    @property
    def labeled(self) -> bool:
        return self.scene is not None

    def with_scene(self, scene: int | None) -> "ClipRecord":
        return replace(self, scene=scene)


def read_manifest(path) -> list[ClipRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_manifest(fh.read(), str(path))


def parse_manifest(text: str, source: str = "<manifest>") -> list[ClipRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestError(f"{source}: header must be {','.join(MANIFEST_HEADER)}")
    records, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ManifestError(f"{source}:{lineno}: expected 4 fields, got {len(row)}")
        filename, scene, location, stamp = (c.strip() for c in row)
        if filename in seen:
            raise ManifestError(f"{source}:{lineno}: duplicate filename {filename!r}")
        seen.add(filename)
        try:
            when = parse_time(stamp)
            sid = scene_id(scene) if scene else None
        except ValueError as exc:
            raise ManifestError(f"{source}:{lineno}: {exc}") from None
        records.append(ClipRecord(filename, sid, location, when))
    return records


def format_manifest(records: Iterable[ClipRecord], extra: dict[str, Sequence] | None = None) -> str:
    """Render records as manifest CSV; ``extra`` appends named columns."""
    records = list(records)
    extra = extra or {}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(MANIFEST_HEADER) + list(extra))
    for i, r in enumerate(records):
        row = [r.filename, "" if r.scene is None else SCENES[r.scene], r.location,
               r.record_time.strftime(TIME_FORMAT)]
        writer.writerow(row + [extra[k][i] for k in extra])
    return buf.getvalue()


def write_manifest(path, records: Iterable[ClipRecord], extra: dict[str, Sequence] | None = None) -> None:
    Path(path).write_text(format_manifest(records, extra), encoding="utf-8")
