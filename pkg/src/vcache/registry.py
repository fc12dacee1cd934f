"""The template registry: stored templates plus per-document dispatch entries.

On disk a registry is a directory::

    registry/
      dispatch.json        # config + one DispatchEntry per document
      tpl/<hash>.vct       # canonical template bytes, one file per TemplateId
      scripts/<doc>.ms     # the source each document was fragmented from
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .docmodel import TemplateDoc, TemplateId, parse_template, serialize

Signature = tuple  # tuple[tuple[site, arm], ...] sorted by site
ArmKey = tuple  # (site, arm)

DISPATCH_FILE = "dispatch.json"
TEMPLATE_DIR = "tpl"
SCRIPT_DIR = "scripts"


class FragmentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_template_bytes: int = Field(50, ge=0)
    rare_arm_threshold: float = Field(0.05, ge=0.0, le=1.0)
    dominant_path_threshold: float = Field(0.6, gt=0.5, le=1.0)
    min_runs: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _phi_below_theta(self) -> FragmentConfig:
        if not self.rare_arm_threshold < self.dominant_path_threshold:
            raise ValueError("rare_arm_threshold must be below dominant_path_threshold")
        return self

    @property
    def phi(self) -> float:
        return self.rare_arm_threshold

    @property
    def theta(self) -> float:
        return self.dominant_path_threshold


def make_signature(pairs) -> Signature:
    items = dict(pairs)
    return tuple(sorted(items.items()))


@dataclass
class DispatchEntry:
    root: TemplateId
    arms: dict = field(default_factory=dict)
    """``(site, arm) -> TemplateId``, or ``None`` for an inline-only arm."""
    specialized: list = field(default_factory=list)
    """``(Signature, TemplateId)`` sorted by descending size, then id."""
    arm_freq: dict | None = None

    def sort_specialized(self) -> None:
        self.specialized.sort(key=lambda st: (-len(st[0]), st[1].hash))

    def referenced(self) -> set[TemplateId]:
        ids = {self.root}
        ids.update(t for t in self.arms.values() if t is not None)
        ids.update(t for _, t in self.specialized)
        return ids


@dataclass
class Registry:
    templates: dict = field(default_factory=dict)
    docs: dict = field(default_factory=dict)
    config: FragmentConfig = field(default_factory=FragmentConfig)

    def add(self, doc: TemplateDoc) -> TemplateId:
        tid = doc.id
        self.templates.setdefault(tid, doc)
        return tid

    def template_by_url(self, url: str) -> TemplateDoc:
        return self.templates[TemplateId.from_url(url)]

    def by_url(self) -> dict[str, TemplateDoc]:
        return {tid.url: t for tid, t in self.templates.items()}

    def merge(self, other: Registry) -> None:
        for name in other.docs:
            if name in self.docs:
                raise ValueError(f"document {name!r} registered twice")
        self.templates.update(other.templates)
        self.docs.update(other.docs)

    def check(self) -> None:
        for name, entry in self.docs.items():
            missing = entry.referenced() - self.templates.keys()
            if missing:
                raise ValueError(f"{name}: dangling template ids {sorted(missing)}")


# -- persistence ------------------------------------------------------------------


class _ArmModel(BaseModel):
    site: int
    arm: int
    template: str | None


class _SpecializedModel(BaseModel):
    signature: list[tuple[int, int]]
    template: str


class _DocModel(BaseModel):
    script: str | None = None
    root: str
    arms: list[_ArmModel] = []
    specialized: list[_SpecializedModel] = []
    arm_freq: list[tuple[int, int, float]] | None = None


class DispatchFile(BaseModel):
    version: int = 1
    config: FragmentConfig = FragmentConfig()
    docs: dict[str, _DocModel] = {}


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_registry(registry: Registry, directory: str | Path, sources: dict | None = None) -> Path:
    """Write ``registry`` (and optionally the script sources) under ``directory``."""
    root = Path(directory)
    (root / TEMPLATE_DIR).mkdir(parents=True, exist_ok=True)
    for tid, doc in registry.templates.items():
        path = root / TEMPLATE_DIR / f"{tid.hash}.vct"
        if not path.exists():
            _atomic_write(path, serialize(doc))
    docs = {}
    for name, entry in registry.docs.items():
        script = None
        if sources and name in sources:
            (root / SCRIPT_DIR).mkdir(exist_ok=True)
            script = f"{SCRIPT_DIR}/{name}.ms"
            _atomic_write(root / script, sources[name].encode("utf-8"))
        docs[name] = _DocModel(
            script=script,
            root=entry.root.hash,
            arms=[
                _ArmModel(site=s, arm=a, template=t.hash if t else None)
                for (s, a), t in sorted(entry.arms.items())
            ],
            specialized=[
                _SpecializedModel(signature=list(sig), template=t.hash)
                for sig, t in entry.specialized
            ],
            arm_freq=(
                [(s, a, f) for (s, a), f in sorted(entry.arm_freq.items())]
                if entry.arm_freq is not None
                else None
            ),
        )
    payload = DispatchFile(config=registry.config, docs=docs)
    _atomic_write(root / DISPATCH_FILE, payload.model_dump_json(indent=2).encode("utf-8"))
    return root


def load_registry(directory: str | Path) -> tuple[Registry, dict[str, str]]:
    """Read a registry directory; returns the registry and the script sources."""
    root = Path(directory)
    meta = DispatchFile.model_validate_json((root / DISPATCH_FILE).read_bytes())
    registry = Registry(config=meta.config)
    for path in sorted((root / TEMPLATE_DIR).glob("*.vct")):
        doc = parse_template(path.read_bytes())
        if doc.id.hash != path.stem:
            raise ValueError(f"{path}: content does not match its hash")
        registry.templates[doc.id] = doc
    sources: dict[str, str] = {}
    for name, d in meta.docs.items():
        entry = DispatchEntry(
            root=TemplateId(d.root),
            arms={(a.site, a.arm): TemplateId(a.template) if a.template else None for a in d.arms},
            specialized=[(make_signature(s.signature), TemplateId(s.template)) for s in d.specialized],
            arm_freq={(s, a): f for s, a, f in d.arm_freq} if d.arm_freq is not None else None,
        )
        entry.sort_specialized()
        registry.docs[name] = entry
        if d.script:
            sources[name] = (root / d.script).read_text(encoding="utf-8")
    registry.check()
    return registry, sources
