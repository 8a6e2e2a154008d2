"""Vulnerability detection over execution traces.

Two routes produce :class:`Finding` records:

* ``rule_based_scan`` applies fixed, deterministic signatures;
* ``build_analysis_prompt`` / ``parse_findings`` wrap a model-assisted review
  whose JSON answer is validated and normalized here.

Rule severities and confidences are constants (see ``RULES``).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass
from typing import Any, Iterable

from prediql.gql import Argument, Field, QueryAST, Value, measure_depth, parse_query, print_query, try_parse
from prediql.provider import ANALYSIS_HEADER, template_query
from prediql.schema import NodeKey, SchemaIR
from prediql.traces import EXCERPT_CAP, Trace, truncate_excerpt

TAXONOMY = (
    "introspection_exposure",
    "dos_deep_query",
    "sql_injection",
    "path_injection",
    "xss",
    "idor",
    "batching_bypass",
    "info_disclosure",
    "other",
)
SEVERITIES = ("low", "medium", "high", "critical")

# vuln_type -> (severity, confidence)
RULES = {
    "introspection_exposure": ("medium", 0.9),
    "sql_injection": ("high", 0.7),
    "info_disclosure": ("medium", 0.8),
    "dos_deep_query": ("medium", 0.6),
    "idor": ("high", 0.8),
}

SQL_MARKERS = ("SQL", "syntax error", "SQLITE_", "psql")
DEEP_QUERY_DEPTH = 10
PROBE_DEPTH = 12
INJECTION_PAYLOAD = "' OR '1'='1"

_LEAK_PATTERNS = [
    re.compile(r"Traceback \(most recent call last\)"),
    re.compile(r'File "[^"]+", line \d+'),
    re.compile(r"\bat [\w$.<>]+\([\w./\\-]+\.\w+:\d+(?::\d+)?\)"),
    re.compile(r"(?:^|[\s\"'(])/(?:usr|home|var|opt|srv|app|etc|tmp|root)/[\w./-]+"),
    re.compile(r"\b[A-Za-z]:\\(?:[\w .-]+\\)+[\w .-]+"),
    re.compile(r"\.(?:py|js|ts|rb|go|java|php):\d+\b"),
]


@dataclass(frozen=True)
class Finding:
    vuln_type: str
    severity: str
    confidence: float
    evidence: str
    node: NodeKey
    trace_id: int
    source: str  # "rule" | "model"

    def __post_init__(self):
        if self.vuln_type not in TAXONOMY:
            raise ValueError(f"vuln_type {self.vuln_type!r} is not in the taxonomy")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity {self.severity!r} is not one of {SEVERITIES}")
        if not (isinstance(self.confidence, float) and 0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")
        if not isinstance(self.evidence, str) or not self.evidence.strip():
            raise ValueError("evidence must be a non-empty string")
        if self.source not in ("rule", "model"):
            raise ValueError(f"source must be 'rule' or 'model', got {self.source!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["node"] = list(self.node)
        return d


def _rule(vuln_type: str, evidence: str, trace: Trace) -> Finding:
    severity, confidence = RULES[vuln_type]
    return Finding(vuln_type, severity, confidence, evidence, tuple(trace.node), trace.id, "rule")


def _is_introspection(ast: QueryAST | None) -> bool:
    return ast is not None and ast.operation == "query" and any(f.name == "__schema" for f in ast.selections)


def _id_like(name: str) -> bool:
    return name == "id" or name.endswith("Id") or name.endswith("_id")


def rule_based_scan(trace: Trace, ir_known: bool, foreign_ids: Iterable[str] = ()) -> list[Finding]:
    """Deterministic signatures over one trace; at most one finding per rule."""
    findings: list[Finding] = []
    out = trace.outcome
    ast = try_parse(trace.query_text)
    accepted = out.http_status == 200 and not out.graphql_errors

    if ir_known and _is_introspection(ast) and out.http_status == 200 and "__schema" in trace.response_excerpt:
        findings.append(_rule("introspection_exposure", truncate_excerpt(trace.response_excerpt, 300), trace))

    errors = list(trace.error_messages)
    sql_hit = next((e for e in errors if any(m in e for m in SQL_MARKERS)), None)
    if sql_hit:
        findings.append(_rule("sql_injection", sql_hit, trace))

    leak = next((e for e in errors if any(p.search(e) for p in _LEAK_PATTERNS)), None)
    if leak:
        findings.append(_rule("info_disclosure", leak, trace))

    # introspection documents are deep by construction; they are not a DoS signal
    if ast is not None and accepted and out.data_present and not _is_introspection(ast):
        depth = measure_depth(ast.selections)
        if depth >= DEEP_QUERY_DEPTH:
            findings.append(_rule("dos_deep_query", f"query of depth {depth} accepted: {trace.query_text[:200]}", trace))

    foreign = {str(i) for i in foreign_ids}
    if ast is not None and foreign and out.classification == "success":
        root = next((f for f in ast.selections if f.name == trace.node[1]), None)
        for a in root.arguments if root else ():
            if _id_like(a.name) and a.value.kind in ("string", "int") and str(a.value.value) in foreign:
                findings.append(
                    _rule("idor", f'{root.name}({a.name}: "{a.value.value}") returned another principal\'s object: '
                          f"{trace.response_excerpt[:200]}", trace)
                )
                break
    return findings


# ---------------------------------------------------------------------------
# model-assisted analysis
# ---------------------------------------------------------------------------


def build_analysis_prompt(trace: Trace, schema_fragment: str = "") -> str:
    errors = "\n".join(f"- {e}" for e in trace.error_messages) or "(none)"
    return (
        f"{ANALYSIS_HEADER}\n"
        "Review one GraphQL request/response pair for security weaknesses.\n\n"
        f"### QUERY\n{trace.query_text}\n\n"
        f"### STATUS\nHTTP {trace.outcome.http_status} ({trace.outcome.classification or 'unclassified'})\n\n"
        f"### ERRORS\n{errors}\n\n"
        f"### RESPONSE EXCERPT\n{truncate_excerpt(trace.response_excerpt, EXCERPT_CAP)}\n\n"
        f"### SCHEMA FRAGMENT\n{schema_fragment or '(none)'}\n\n"
        f"### VULNERABILITY TYPES\n{', '.join(TAXONOMY)}\n\n"
        "### ANSWER FORMAT\n"
        "Answer with a JSON array only. Each element is an object with exactly the keys "
        '"type" (one of the vulnerability types), "severity" (low|medium|high|critical), '
        '"confidence" (0 to 1) and "evidence" (a quoted fragment of the request or response). '
        "Answer [] when nothing is found.\n"
    )


@dataclass
class ParseStats:
    warnings: int = 0
    dropped: int = 0


def _first_json_array(text: str) -> list | None:
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\[", text):
        try:
            value, _ = decoder.raw_decode(text, m.start())
        except (json.JSONDecodeError, RecursionError):
            continue
        if isinstance(value, list):
            return value
    return None


def _confidence(raw: Any) -> float:
    if isinstance(raw, bool):
        return 1.0 if raw else 0.0
    try:
        c = float(raw)
    except (TypeError, ValueError, OverflowError):
        return 0.5
    if math.isnan(c):
        return 0.0
    return min(1.0, max(0.0, c))


def parse_findings(
    completion: str,
    trace_id: int,
    node: NodeKey = ("query", "unknown"),
    stats: ParseStats | None = None,
) -> list[Finding]:
    """Findings from a model answer; malformed entries are dropped, never raised."""
    items = _first_json_array(completion if isinstance(completion, str) else "")
    if items is None:
        if stats is not None:
            stats.warnings += 1
        return []
    out = []
    for obj in items:
        if not isinstance(obj, dict):
            if stats is not None:
                stats.dropped += 1
            continue
        evidence = obj.get("evidence")
        if isinstance(evidence, (int, float)) and not isinstance(evidence, bool):
            evidence = str(evidence)
        if not isinstance(evidence, str) or not evidence.strip():
            if stats is not None:
                stats.dropped += 1
            continue
        vtype = str(obj.get("type", obj.get("vuln_type", ""))).strip().lower()
        severity = str(obj.get("severity", "")).strip().lower()
        out.append(
            Finding(
                vuln_type=vtype if vtype in TAXONOMY else "other",
                severity=severity if severity in SEVERITIES else "medium",
                confidence=_confidence(obj.get("confidence")),
                evidence=evidence,
                node=tuple(node),
                trace_id=int(trace_id),
                source="model",
            )
        )
    return out


def _evidence_hash(evidence: str) -> str:
    return hashlib.sha256(" ".join(evidence.lower().split()).encode("utf-8")).hexdigest()


def distinct_findings(findings: Iterable[Finding]) -> list[Finding]:
    seen: dict[tuple, Finding] = {}
    for f in findings:
        seen.setdefault((f.vuln_type, tuple(f.node), _evidence_hash(f.evidence)), f)
    return list(seen.values())


def aggregate(findings: Iterable[Finding]) -> dict:
    """Distinct finding count and distinct category count, plus a per-type breakdown."""
    unique = distinct_findings(findings)
    by_type: dict[str, int] = {}
    for f in unique:
        by_type[f.vuln_type] = by_type.get(f.vuln_type, 0) + 1
    return {
        "total": len(unique),
        "categories": len(by_type),
        "by_type": {k: by_type[k] for k in sorted(by_type)},
    }


# ---------------------------------------------------------------------------
# active probes derived from the schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Probe:
    label: str
    node: NodeKey
    query_text: str


def _with_args(query_text: str, overrides: dict[str, Value]) -> str:
    ast = parse_query(query_text)
    root = ast.selections[0]
    args = [Argument(a.name, overrides.get(a.name, a.value)) for a in root.arguments]
    names = {a.name for a in args}
    args += [Argument(n, v) for n, v in overrides.items() if n not in names]
    root = Field(root.name, root.alias, tuple(args), root.selections)
    return print_query(QueryAST(ast.operation, (root,), ast.name, ast.variables))


def _deep_types(ir: SchemaIR) -> set[str]:
    """Object types from which an unbounded chain of object fields exists."""
    graph = {
        name: [f.type.name for f in obj.fields if f.type.name in ir.objects and not any(a.required for a in f.args)]
        for name, obj in ir.objects.items()
        if obj.kind in ("OBJECT", "INTERFACE")
    }
    on_cycle: set[str] = set()
    for start in graph:
        stack, seen = list(graph[start]), set()
        while stack:
            n = stack.pop()
            if n == start:
                on_cycle.add(start)
                break
            if n in seen or n not in graph:
                continue
            seen.add(n)
            stack.extend(graph[n])
    deep = set(on_cycle)
    changed = True
    while changed:
        changed = False
        for name, children in graph.items():
            if name not in deep and any(c in deep for c in children):
                deep.add(name)
                changed = True
    return deep


def _deep_selection(ir: SchemaIR, type_name: str, levels: int, deep: set[str]) -> tuple[Field, ...]:
    obj = ir.objects[type_name]
    if levels <= 1:
        leaf = next((f for f in obj.fields if ir.is_leaf(f.type.name) and not f.args), None)
        return (Field(leaf.name if leaf else "__typename"),)
    nxt = next(
        f for f in obj.fields if f.type.name in deep and not any(a.required for a in f.args)
    )
    return (Field(nxt.name, selections=_deep_selection(ir, nxt.type.name, levels - 1, deep)),)


def security_probes(ir: SchemaIR, foreign_ids: Iterable[str] = (), depth: int = PROBE_DEPTH) -> list[Probe]:
    """Schema-derived requests aimed at the deep-query, injection and IDOR classes."""
    probes: list[Probe] = []
    deep = _deep_types(ir)
    for op in ir.queries:
        if op.return_type.name in deep:
            base = parse_query(template_query(ir, op.node, depth=1))
            root = base.selections[0]
            sel = _deep_selection(ir, op.return_type.name, depth - 1, deep)
            ast = QueryAST("query", (Field(root.name, root.alias, root.arguments, sel),))
            probes.append(Probe("deep_query", op.node, print_query(ast)))
            break
    for op in ir.queries:
        strings = [a for a in op.args if a.type.name == "String"]
        if strings:
            text = template_query(ir, op.node, depth=1)
            probes.append(Probe("quote_injection", op.node, _with_args(text, {strings[0].name: Value("string", INJECTION_PAYLOAD)})))
    foreign = sorted({str(i) for i in foreign_ids}, key=lambda s: (len(s), s))
    if foreign:
        for op in ir.queries:
            ids = [a for a in op.args if _id_like(a.name) and a.type.name in ("ID", "String", "Int")]
            if ids:
                text = template_query(ir, op.node, depth=1)
                lit = Value("int", foreign[0]) if ids[0].type.name == "Int" and foreign[0].isdigit() else Value("string", foreign[0])
                probes.append(Probe("foreign_id", op.node, _with_args(text, {ids[0].name: lit})))
    return probes
