"""CSV dataset manifests: ``image_id,image_path,label,mask_path``."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

from ..classification import CLASSES
from ..exceptions import FormatError

HEADER = ["image_id", "image_path", "label", "mask_path"]


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    image_path: Path
    label: str | None = None
    mask_path: Path | None = None


def load_manifest(path, check_files: bool = True) -> list:
    """Parse a manifest; relative paths resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise FormatError(f"{path}: header must be {','.join(HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            image_id, image_path, label, mask_path = (c.strip() for c in row)
            if not image_id:
                raise FormatError(f"{path}:{lineno}: empty image_id")
            if image_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            if label and label not in CLASSES:
                raise FormatError(
                    f"{path}:{lineno}: unknown label {label!r} (row {image_id!r}); "
                    f"expected one of {', '.join(CLASSES)}")
            rec = ManifestRecord(
                image_id,
                base / image_path,
                label or None,
                (base / mask_path) if mask_path else None,
            )
            if check_files:
                for p in (rec.image_path, rec.mask_path):
                    if p is not None and not p.exists():
                        raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
            records.append(rec)
    return records


def write_manifest(path, records) -> None:
    """Write records with paths relative to the manifest's folder."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return ""
        return Path(os.path.relpath(Path(p).resolve(), base)).as_posix()

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in records:
            writer.writerow([r.image_id, rel(r.image_path), r.label or "", rel(r.mask_path)])
