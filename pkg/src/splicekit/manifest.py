"""Corpus manifests.

A manifest is a tab-separated file with the header row
``id<TAB>path<TAB>condition<TAB>partner``. ``condition`` and ``partner`` may
be empty. Relative paths are resolved against the manifest's directory. A
non-empty ``partner`` marks the row as the noisy side of a stereo pair
whose clean side is the row with that id.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, UsageError
from .features import frame_count

COLUMNS = ("id", "path", "condition", "partner")


@dataclass(frozen=True)
class Record:
    id: str
    path: Path
    condition: str = None
    partner: str = None


class CorpusManifest:
    def __init__(self, records, check_stereo=True):
        self.records = list(records)
        self.by_id = {}
        for rec in self.records:
            if rec.id in self.by_id:
                raise UsageError(f"duplicate utterance id {rec.id!r}")
            self.by_id[rec.id] = rec
        missing = [r.id for r in self.records if r.partner and r.partner not in self.by_id]
        if missing:
            raise UsageError(f"stereo partners do not resolve for ids: {', '.join(missing)}")
        if check_stereo:
            self.stereo_pairs()

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @classmethod
    def load(cls, path, check_stereo=True):
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"manifest not found: {path}")
        base = path.parent
        records = []
        with open(path, newline="") as f:
            reader = csv.reader(f, delimiter="\t")
            header = next(reader, None)
            if header is None or header[:2] != ["id", "path"]:
                raise FormatError(f"{path}: header must start with 'id<TAB>path'")
            for lineno, row in enumerate(reader, start=2):
                if not row or not any(row):
                    continue
                if len(row) > len(header):
                    raise FormatError(f"{path}:{lineno}: {len(row)} fields for {len(header)} columns")
                fields = dict(zip(header, row))
                p = Path(fields["path"])
                records.append(Record(fields["id"], p if p.is_absolute() else base / p,
                                      fields.get("condition") or None, fields.get("partner") or None))
        if not records:
            raise UsageError(f"manifest {path} lists no utterances")
        return cls(records, check_stereo)

    def save(self, path):
        path = Path(path)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(COLUMNS)
            for r in self.records:
                p = Path(r.path)
                try:
                    p = p.relative_to(path.parent)
                except ValueError:
                    pass
                w.writerow([r.id, p.as_posix(), r.condition or "", r.partner or ""])

    @property
    def is_stereo(self):
        return any(r.partner for r in self.records)

    def noisy_records(self):
        """Noisy side of a stereo manifest, or every record of a one-sided one."""
        if self.is_stereo:
            return [r for r in self.records if r.partner]
        return list(self.records)

    def stereo_pairs(self):
        """``(clean, noisy)`` record pairs; partners must have equal frame counts."""
        pairs = []
        bad = []
        for r in self.records:
            if not r.partner:
                continue
            clean = self.by_id[r.partner]
            try:
                if frame_count(clean.path) != frame_count(r.path):
                    bad.append(r.id)
            except FileNotFoundError as exc:
                raise UsageError(f"feature file not found: {exc.filename}") from None
            pairs.append((clean, r))
        if bad:
            raise UsageError(f"stereo pairs differ in frame count for ids: {', '.join(bad)}")
        return pairs

    def groups(self, key="condition", records=None):
        """Records grouped by condition label or by parent directory name, in first-seen order."""
        out = {}
        for r in records if records is not None else self.noisy_records():
            if key == "condition":
                if not r.condition:
                    raise UsageError(f"record {r.id!r} has no condition label")
                label = r.condition
            elif key == "dir":
                label = Path(r.path).parent.name
            else:
                raise UsageError(f"unknown grouping key {key!r}")
            out.setdefault(label, []).append(r)
        return out
