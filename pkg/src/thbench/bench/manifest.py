"""Dataset manifest: the inventory of clips a run operates on.

A manifest lists real clips and generated clips. Generated entries name the
method that produced them and the real clip they re-animate; within one
split each method's real<->generated pairing must be a bijection. Paths are
stored relative to the manifest file and must resolve at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ManifestEntry:
    id: str
    role: str  # "real" or "generated"
    source: Path  # frame directory or container file
    landmarks: Path | None = None
    split: str = "test"
    frame_rate: float = 25.0
    method: str | None = None  # generated entries only
    real_id: str | None = None  # generated entries only
    labels: dict = field(default_factory=dict)  # e.g. {"word": ..., "emotion": ...}
    reference_frame: int = 0  # frame of the real clip used as generation reference


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")

    def __post_init__(self):
        self._by_id = {}
        for entry in self.entries:
            if entry.id in self._by_id:
                raise ValueError(f"duplicate entry id {entry.id!r}")
            self._by_id[entry.id] = entry
        self._validate_pairing()

    def _validate_pairing(self):
        for entry in self.entries:
            if entry.role == "generated":
                if not entry.method or not entry.real_id:
                    raise ValueError(f"generated entry {entry.id!r} needs method and real_id")
                real = self._by_id.get(entry.real_id)
                if real is None or real.role != "real":
                    raise ValueError(f"entry {entry.id!r} references unknown real clip {entry.real_id!r}")
                if real.split != entry.split:
                    raise ValueError(f"pair {entry.id!r}/{entry.real_id!r} crosses splits")
            elif entry.role != "real":
                raise ValueError(f"entry {entry.id!r} has unknown role {entry.role!r}")
        # bijection per (method, split): one generated clip per real clip
        seen = {}
        for entry in self.entries:
            if entry.role != "generated":
                continue
            key = (entry.method, entry.split, entry.real_id)
            if key in seen:
                raise ValueError(
                    f"method {entry.method!r} pairs real clip {entry.real_id!r} twice "
                    f"({seen[key]!r} and {entry.id!r})")
            seen[key] = entry.id

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, entry_id: str) -> ManifestEntry:
        return self._by_id[entry_id]

    def reals(self, split: str | None = None) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == "real" and (split is None or e.split == split)]

    def methods(self) -> list[str]:
        return sorted({e.method for e in self.entries if e.role == "generated"})

    def pairs(self, split: str | None = None) -> list[tuple[str, ManifestEntry, ManifestEntry]]:
        """(method, real entry, generated entry) triples, deterministically
        ordered by (method, real id)."""
        out = []
        for entry in self.entries:
            if entry.role != "generated":
                continue
            if split is not None and entry.split != split:
                continue
            out.append((entry.method, self._by_id[entry.real_id], entry))
        out.sort(key=lambda triple: (triple[0], triple[1].id))
        return out

    def resolve(self, path: Path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def load_manifest(path: Path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    raw = json.loads(path.read_text())
    if raw.get("version") != 1:
        raise ValueError(f"unsupported manifest version in {path}")
    entries = []
    for rec in raw["entries"]:
        entries.append(ManifestEntry(
            id=rec["id"],
            role=rec["role"],
            source=Path(rec["source"]),
            landmarks=Path(rec["landmarks"]) if rec.get("landmarks") else None,
            split=rec.get("split", "test"),
            frame_rate=float(rec.get("frame_rate", 25.0)),
            method=rec.get("method"),
            real_id=rec.get("real_id"),
            labels=rec.get("labels", {}),
            reference_frame=int(rec.get("reference_frame", 0)),
        ))
    manifest = DatasetManifest(entries=entries, root=path.parent)
    if check_paths:
        missing = []
        for entry in manifest.entries:
            if not manifest.resolve(entry.source).exists():
                missing.append(f"{entry.id}: source {entry.source}")
            if entry.landmarks is not None and not manifest.resolve(entry.landmarks).exists():
                missing.append(f"{entry.id}: landmarks {entry.landmarks}")
        if missing:
            raise FileNotFoundError("manifest references missing paths:\n  " + "\n  ".join(missing))
    return manifest


def save_manifest(path: Path, manifest: DatasetManifest) -> None:
    records = []
    for e in manifest.entries:
        rec = {"id": e.id, "role": e.role, "source": str(e.source), "split": e.split,
               "frame_rate": e.frame_rate}
        if e.landmarks is not None:
            rec["landmarks"] = str(e.landmarks)
        if e.method:
            rec["method"] = e.method
        if e.real_id:
            rec["real_id"] = e.real_id
        if e.labels:
            rec["labels"] = e.labels
        if e.reference_frame:
            rec["reference_frame"] = e.reference_frame
        records.append(rec)
    Path(path).write_text(json.dumps({"version": 1, "entries": records}, indent=1))
