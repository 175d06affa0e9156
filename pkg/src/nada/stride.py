"""STRIDE coverage engine over a YAML data flow model.

Three files describe a model: ``dfd.yaml`` (elements), ``threats.yaml``
(mapping mode plus per-element overrides) and ``measures.yaml`` (mitigation
catalog with ``depends_on``, ``covers`` and ``testable``). A cover target is an
element id, an element kind (``Process``) or a tag (``@management_link``).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

from .errors import CyclicDependency, ParseError, SchemaError, UnknownReference

THREATS = "STRIDE"


class ElementKind(str, enum.Enum):
    EXTERNAL_ENTITY = "ExternalEntity"
    DATA_FLOW = "DataFlow"
    DATA_STORE = "DataStore"
    PROCESS = "Process"


class Mode(str, enum.Enum):
    STANDARD = "standard"
    MODIFIED = "modified"


STANDARD_MAPPING: dict[ElementKind, frozenset[str]] = {
    ElementKind.EXTERNAL_ENTITY: frozenset("SR"),
    ElementKind.DATA_FLOW: frozenset("TID"),
    ElementKind.DATA_STORE: frozenset("TRID"),
    ElementKind.PROCESS: frozenset("STRIDE"),
}

# Spoofing and repudiation move onto data flows; repudiation leaves external
# entities and processes. Data stores keep the standard row.
MODIFIED_MAPPING: dict[ElementKind, frozenset[str]] = {
    ElementKind.EXTERNAL_ENTITY: frozenset("S"),
    ElementKind.DATA_FLOW: frozenset("STRID"),
    ElementKind.DATA_STORE: frozenset("TRID"),
    ElementKind.PROCESS: frozenset("STIDE"),
}


def mapping(mode: Mode) -> dict[ElementKind, frozenset[str]]:
    return STANDARD_MAPPING if mode is Mode.STANDARD else MODIFIED_MAPPING


def mapping_deltas() -> list[tuple[str, str, tuple[str, ...]]]:
    """Changes from standard to modified as (threat, 'added' | 'removed', kinds)."""
    grouped: dict[tuple[str, str], list[str]] = {}
    for kind in ElementKind:
        std, mod = STANDARD_MAPPING[kind], MODIFIED_MAPPING[kind]
        for t in mod - std:
            grouped.setdefault((t, "added"), []).append(kind.value)
        for t in std - mod:
            grouped.setdefault((t, "removed"), []).append(kind.value)
    order = sorted(grouped, key=lambda k: (k[1] != "added", THREATS.index(k[0])))
    return [(t, d, tuple(grouped[(t, d)])) for t, d in order]


def marked_cells(mode: Mode) -> set[tuple[str, str]]:
    return {(k.value, t) for k, ts in mapping(mode).items() for t in ts}


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DfdElement:
    id: str
    name: str
    kind: ElementKind
    source: str | None = None
    target: str | None = None
    crosses_boundary: bool = False
    tags: tuple[str, ...] = ()

    def matches(self, target: str) -> bool:
        if target.startswith("@"):
            return target[1:] in self.tags
        return target == self.id or target == self.kind.value


@dataclass(frozen=True)
class Mitigation:
    id: str
    description: str = ""
    depends_on: frozenset[str] = frozenset()
    covers: frozenset[tuple[str, str]] = frozenset()
    testable: bool = False


@dataclass(frozen=True)
class Override:
    element: str
    add: frozenset[str] = frozenset()
    remove: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ThreatAssignment:
    element: str
    threats: frozenset[str]
    mode: Mode


@dataclass
class Model:
    elements: list[DfdElement]
    assignments: list[ThreatAssignment]
    catalog: list[Mitigation]
    mode: Mode
    overrides: list[Override] = field(default_factory=list)

    def element(self, eid: str) -> DfdElement:
        return next(e for e in self.elements if e.id == eid)

    def reassign(self, mode: Mode) -> "Model":
        return Model(self.elements, assign_threats(self.elements, mode, self.overrides), self.catalog, mode,
                     self.overrides)

    def without(self, mitigation_id: str) -> "Model":
        return Model(self.elements, self.assignments, [m for m in self.catalog if m.id != mitigation_id],
                     self.mode, self.overrides)


def assign_threats(elements: Iterable[DfdElement], mode: Mode,
                   overrides: Iterable[Override] = ()) -> list[ThreatAssignment]:
    table = mapping(mode)
    extra = {o.element: o for o in overrides}
    out = []
    for e in elements:
        threats = set(table[e.kind])
        o = extra.get(e.id)
        if o is not None:
            threats = (threats | o.add) - o.remove
        out.append(ThreatAssignment(e.id, frozenset(threats), mode))
    return out


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


def dependency_order(catalog: Iterable[Mitigation]) -> list[str]:
    """Topological order of the present mitigations; CyclicDependency on a cycle."""
    deps = {m.id: sorted(m.depends_on) for m in catalog}
    order: list[str] = []
    state: dict[str, int] = {}

    def visit(mid: str, path: list[str]) -> None:
        s = state.get(mid, 0)
        if s == 2:
            return
        if s == 1:
            cycle = path[path.index(mid):] + [mid]
            raise CyclicDependency(" -> ".join(cycle))
        state[mid] = 1
        for d in deps.get(mid, []):
            if d in deps:
                visit(d, path + [mid])
        state[mid] = 2
        order.append(mid)

    for mid in sorted(deps):
        visit(mid, [])
    return order


def effective_mitigations(catalog: Iterable[Mitigation]) -> set[str]:
    """Mitigations whose dependencies are all present and effective."""
    catalog = list(catalog)
    by_id = {m.id: m for m in catalog}
    effective: set[str] = set()
    for mid in dependency_order(catalog):
        if all(d in effective for d in by_id[mid].depends_on):
            effective.add(mid)
    return effective


@dataclass(frozen=True)
class PairCoverage:
    element: str
    threat: str
    mitigations: tuple[str, ...]


@dataclass
class CoverageReport:
    mode: Mode
    pairs: list[PairCoverage]
    ineffective: list[str]

    @property
    def uncovered(self) -> list[PairCoverage]:
        return [p for p in self.pairs if not p.mitigations]

    def triples(self) -> list[tuple[str, str, str]]:
        return [(p.element, p.threat, m) for p in self.pairs for m in p.mitigations]

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "pairs": len(self.pairs),
            "covered": len(self.pairs) - len(self.uncovered),
            "uncovered": [[p.element, p.threat] for p in self.uncovered],
            "ineffective_mitigations": self.ineffective,
            "coverage": [{"element": p.element, "threat": p.threat, "mitigations": list(p.mitigations)}
                         for p in self.pairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _mid_key(mid: str) -> tuple:
    parts = mid.lstrip("M").split(".")
    return tuple(int(p) if p.isdigit() else p for p in parts)


def check_coverage(elements: Iterable[DfdElement], assignments: Iterable[ThreatAssignment],
                   catalog: Iterable[Mitigation]) -> CoverageReport:
    elements = {e.id: e for e in elements}
    catalog = sorted(catalog, key=lambda m: _mid_key(m.id))
    effective = effective_mitigations(catalog)
    assignments = list(assignments)
    mode = assignments[0].mode if assignments else Mode.MODIFIED
    pairs = []
    for a in assignments:
        e = elements[a.element]
        for t in sorted(a.threats, key=THREATS.index):
            ms = tuple(m.id for m in catalog
                       if m.id in effective and any(thr == t and e.matches(tgt) for tgt, thr in m.covers))
            pairs.append(PairCoverage(e.id, t, ms))
    ineffective = [m.id for m in catalog if m.id not in effective]
    return CoverageReport(mode, pairs, ineffective)


def coverage_of(model: Model) -> CoverageReport:
    return check_coverage(model.elements, model.assignments, model.catalog)


def sole_covers(report: CoverageReport) -> dict[str, list[tuple[str, str]]]:
    out: dict[str, list[tuple[str, str]]] = {}
    for p in report.pairs:
        if len(p.mitigations) == 1:
            out.setdefault(p.mitigations[0], []).append((p.element, p.threat))
    return out


def deletion_sweep(model: Model) -> dict[str, list[tuple[str, str]]]:
    """Mitigation id -> pairs left uncovered when only that mitigation is removed."""
    base = {(p.element, p.threat) for p in coverage_of(model).uncovered}
    out = {}
    for m in model.catalog:
        now = {(p.element, p.threat) for p in coverage_of(model.without(m.id)).uncovered}
        out[m.id] = sorted(now - base)
    return out


THREAT_NAMES = {"S": "Spoofing", "T": "Tampering", "R": "Repudiation", "I": "Information disclosure",
                "D": "Denial of service", "E": "Elevation of privilege"}


def gen_checklist(report: CoverageReport, elements: Iterable[DfdElement] | None = None,
                  catalog: Iterable[Mitigation] | None = None) -> str:
    """Markdown checklist, one line per (element, threat, mitigation) triple."""
    names = {e.id: e.name for e in elements or ()}
    desc = {m.id: m.description for m in catalog or ()}
    lines = [f"# Mitigation checklist ({report.mode.value} mapping)", ""]
    for eid, t, mid in report.triples():
        label = f"{eid} {names[eid]}" if eid in names else eid
        text = f": {desc[mid]}" if desc.get(mid) else ""
        lines.append(f"- [ ] {label} / {THREAT_NAMES[t]} / {mid}{text}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


class _Map(dict):
    """dict that remembers the source line of itself and of each key."""

    line: int = 0
    key_lines: dict[str, int]


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader: _Loader, node: yaml.MappingNode) -> _Map:
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        out[key] = loader.construct_object(vnode, deep=True)
        out.key_lines[key] = knode.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def _read_yaml(path: Path) -> Any:
    try:
        text = path.read_text()
    except OSError as err:
        raise ParseError(f"{path}: cannot read: {err.strerror}") from None
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ParseError(f"{where}: {getattr(err, 'problem', None) or err}") from None


def _line(obj: Any, key: str | None = None) -> int:
    if isinstance(obj, _Map):
        if key is not None and key in obj.key_lines:
            return obj.key_lines[key]
        return obj.line
    return 0


def _schema(path: Path, obj: Any, key: str, msg: str) -> SchemaError:
    return SchemaError(f"{path}:{_line(obj, key)}: key '{key}': {msg}")


def _require(path: Path, obj: Any, key: str, tp: type | tuple[type, ...]) -> Any:
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}:{_line(obj)}: key '{key}': expected a mapping around it")
    if key not in obj:
        raise _schema(path, obj, key, "missing")
    value = obj[key]
    if not isinstance(value, tp):
        raise _schema(path, obj, key, f"expected {getattr(tp, '__name__', tp)}")
    return value


def _threat_set(path: Path, obj: Any, key: str) -> frozenset[str]:
    value = obj.get(key) or []
    value = list(value) if isinstance(value, (list, str)) else None
    if value is None or any(t not in THREATS for t in value):
        raise _schema(path, obj, key, "threats must be letters from STRIDE")
    return frozenset(value)


def load_elements(path: Path) -> list[DfdElement]:
    raw = _read_yaml(path)
    items = _require(path, raw, "elements", list)
    elements: list[DfdElement] = []
    seen: set[str] = set()
    for item in items:
        eid = str(_require(path, item, "id", (str, int)))
        if eid in seen:
            raise _schema(path, item, "id", f"duplicate element id {eid!r}")
        seen.add(eid)
        kind_raw = _require(path, item, "kind", str)
        try:
            kind = ElementKind(kind_raw)
        except ValueError:
            raise _schema(path, item, "kind", f"unknown kind {kind_raw!r}") from None
        source = target = None
        if kind is ElementKind.DATA_FLOW:
            source = str(_require(path, item, "from", (str, int)))
            target = str(_require(path, item, "to", (str, int)))
        tags = item.get("tags") or []
        if not isinstance(tags, list):
            raise _schema(path, item, "tags", "expected a list")
        elements.append(DfdElement(eid, str(item.get("name", eid)), kind, source, target,
                                   bool(item.get("crosses_boundary", False)), tuple(str(t) for t in tags)))
    ids = {e.id: e for e in elements}
    for e, item in zip(elements, items):
        for key, ref in (("from", e.source), ("to", e.target)):
            if ref is None:
                continue
            if ref not in ids:
                raise UnknownReference(f"{path}:{_line(item, key)}: key '{key}': no element {ref!r}")
            if ids[ref].kind is ElementKind.DATA_FLOW:
                raise _schema(path, item, key, "a flow must connect two non-flow elements")
    return elements


def load_threats(path: Path, elements: list[DfdElement]) -> tuple[Mode, list[Override]]:
    raw = _read_yaml(path)
    mode_raw = _require(path, raw, "mode", str)
    try:
        mode = Mode(mode_raw.lower())
    except ValueError:
        raise _schema(path, raw, "mode", "must be standard or modified") from None
    ids = {e.id for e in elements}
    overrides = []
    for item in raw.get("overrides") or []:
        eid = str(_require(path, item, "element", (str, int)))
        if eid not in ids:
            raise UnknownReference(f"{path}:{_line(item, 'element')}: key 'element': no element {eid!r}")
        overrides.append(Override(eid, _threat_set(path, item, "add"), _threat_set(path, item, "remove")))
    return mode, overrides


def load_catalog(path: Path, elements: list[DfdElement]) -> list[Mitigation]:
    raw = _read_yaml(path)
    items = _require(path, raw, "measures", list)
    ids = {e.id for e in elements}
    kinds = {k.value for k in ElementKind}
    tags = {t for e in elements for t in e.tags}
    catalog: list[Mitigation] = []
    seen: set[str] = set()
    for item in items:
        mid = str(_require(path, item, "id", (str, int)))
        if mid in seen:
            raise _schema(path, item, "id", f"duplicate mitigation id {mid!r}")
        seen.add(mid)
        deps = item.get("depends_on") or []
        if not isinstance(deps, list):
            raise _schema(path, item, "depends_on", "expected a list")
        covers = set()
        for c in item.get("covers") or []:
            target = str(_require(path, c, "target", (str, int)))
            if not (target in ids or target in kinds or (target.startswith("@") and target[1:] in tags)):
                raise UnknownReference(f"{path}:{_line(c, 'target')}: key 'target': no element, kind or tag "
                                       f"{target!r}")
            for t in _threat_set(path, c, "threats"):
                covers.add((target, t))
        catalog.append(Mitigation(mid, str(item.get("description", "")).strip(), frozenset(str(d) for d in deps),
                                  frozenset(covers), bool(item.get("testable", False))))
    for m, item in zip(catalog, items):
        missing = sorted(m.depends_on - seen)
        if missing:
            raise UnknownReference(f"{path}:{_line(item, 'depends_on')}: key 'depends_on': unknown {missing}")
    dependency_order(catalog)
    return catalog


def load_model(dfd: str | Path, threats: str | Path, measures: str | Path, mode: Mode | str | None = None) -> Model:
    elements = load_elements(Path(dfd))
    file_mode, overrides = load_threats(Path(threats), elements)
    catalog = load_catalog(Path(measures), elements)
    mode = Mode(mode) if mode is not None else file_mode
    return Model(elements, assign_threats(elements, mode, overrides), catalog, mode, overrides)


def bundled_paths() -> tuple[Path, Path, Path]:
    root = Path(__file__).resolve().parent / "data" / "stride"
    return root / "dfd.yaml", root / "threats.yaml", root / "measures.yaml"


def load_bundled(mode: Mode | str | None = None) -> Model:
    return load_model(*bundled_paths(), mode=mode)


def unreferenced_testable(catalog: Iterable[Mitigation], blocked_by: Iterable[str]) -> list[str]:
    """Testable mitigations that no Blocked verdict names."""
    seen = set(blocked_by)
    return sorted((m.id for m in catalog if m.testable and m.id not in seen), key=_mid_key)


def unknown_verdict_mitigations(catalog: Iterable[Mitigation], blocked_by: Iterable[str]) -> list[str]:
    ids = {m.id for m in catalog}
    return sorted({b for b in blocked_by if b not in ids})
