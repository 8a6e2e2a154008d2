"""Five-section generation prompts: header, schema, examples, prior errors, directives.

Section delimiters and the header wording below are fixed so prompts are
reproducible byte for byte. The texts are our own templates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from prediql.bandit import Arm
from prediql.schema import NodeKey, SchemaIR
from prediql.traces import ErrorPair, Trace

DEFAULT_BUDGET = 16_000
SNIPPET_CAP = 240

SECTION_HEADER = "### HEADER"
SECTION_SCHEMA = "### SCHEMA"
SECTION_EXAMPLES = "### EXAMPLES"
SECTION_ERRORS = "### PRIOR ERRORS"
SECTION_DIRECTIVES = "### DIRECTIVES"
SECTION_ORDER = (SECTION_HEADER, SECTION_SCHEMA, SECTION_EXAMPLES, SECTION_ERRORS, SECTION_DIRECTIVES)
OMITTED = "(omitted)"
NONE = "(none)"

HEADER_TEXT = (
    "You generate GraphQL operations for testing an API.\n"
    "Rules:\n"
    "1. Emit exactly one GraphQL operation inside a single ```graphql fenced block.\n"
    "2. Use only types, fields and arguments that appear in the evidence below; never invent names.\n"
    "3. Do not use fragments or directives.\n"
    "4. Target only the operation named in DIRECTIVES and respect its depth limit."
)

ARG_MODE_TEXT = {
    "known": "reuse argument values that previously succeeded (listed in EXAMPLES)",
    "real": "synthesize realistic, type-appropriate literals for every argument",
    "nulls": "set every optional argument to null; supply only required arguments",
}

BUILTIN_SCALARS = ("Boolean", "Float", "ID", "Int", "String")


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    B: str
    S: str
    R: tuple[str, ...]
    E: tuple[str, ...]
    D: str
    target_node: NodeKey
    arm_id: str
    s_parts: tuple[str, ...] = field(default=(), repr=False)  # signature, then one part per type level
    r_ids: tuple[int, ...] = field(default=(), repr=False)  # trace id behind each R entry


def _type_entry(ir: SchemaIR, name: str) -> dict | None:
    if name in ir.objects:
        obj = ir.objects[name]
        return {
            "kind": obj.kind,
            "fields": [
                {"name": f.name, "type": str(f.type), **({"args": _args(f.args)} if f.args else {})}
                for f in obj.fields
            ],
        }
    if name in ir.enums:
        return {"kind": "ENUM", "values": list(ir.enums[name])}
    return None


def _args(args) -> list[dict]:
    out = []
    for a in args:
        d = {"name": a.name, "type": str(a.type)}
        if a.default is not None:
            d["default"] = a.default
        out.append(d)
    return out


def _dump(obj) -> str:
    return yaml.safe_dump(obj, sort_keys=True, default_flow_style=False, allow_unicode=True).rstrip("\n")


def schema_fragment_parts(ir: SchemaIR, node: NodeKey, levels: int) -> tuple[str, ...]:
    """Operation signature, then referenced type definitions level by level."""
    op = ir.operation(node)
    if op is None:
        raise PromptError(f"node {node} is not in the schema")
    signature = {
        "operation": {"kind": op.kind, "name": op.name, "type": str(op.return_type), "args": _args(op.args)},
        "scalars": sorted(set(ir.scalars) | set(BUILTIN_SCALARS)),
    }
    parts = [_dump(signature)]
    seen: set[str] = set()
    frontier = [op.return_type.name] + [a.type.name for a in op.args]
    for level in range(1, levels + 1):
        entries: dict[str, dict] = {}
        for name in frontier:
            if name in seen:
                continue
            seen.add(name)
            entry = _type_entry(ir, name)
            if entry is not None:
                entries[name] = entry
        if not entries:
            break
        parts.append(_dump({f"level_{level}": entries}))
        nxt: list[str] = []
        for name in entries:
            obj = ir.objects.get(name)
            for f in obj.fields if obj else ():
                nxt.append(f.type.name)
                nxt.extend(a.type.name for a in f.args)
        frontier = nxt
    return tuple(parts)


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _snippet(text: str, cap: int = SNIPPET_CAP) -> str:
    text = " ".join(text.split())
    return text if len(text) <= cap else text[: cap - 3] + "..."


def example_line(trace: Trace) -> str:
    outcome = trace.outcome.classification or "unknown"
    detail = trace.error_messages[0] if trace.error_messages else trace.response_excerpt
    return f"{_one_line(trace.query_text)} => {outcome}: {_snippet(detail)}"


def error_line(pair: ErrorPair) -> str:
    return f"{_one_line(pair.query_text)} -> {_snippet(pair.error_message)}"


def directives_text(arm: Arm, node: NodeKey) -> str:
    kind, name = node
    return (
        f"target: {kind} {name}\n"
        f"arm: {arm.id}\n"
        f"arg_mode: {arm.arg_mode} - {ARG_MODE_TEXT[arm.arg_mode]}\n"
        f"depth: {arm.depth} - nest selections at most {arm.depth} level(s) below the root field"
    )


def assemble_prompt(
    arm: Arm,
    ir: SchemaIR,
    node: NodeKey,
    retrieved: list[Trace] = (),
    errors: list[ErrorPair] = (),
) -> PromptBundle:
    node = tuple(node)
    if ir.operation(node) is None:
        raise PromptError(f"node {node} is not in the schema")
    retrieved = list(retrieved)
    if len(retrieved) > arm.top_k:
        raise PromptError(f"{len(retrieved)} retrieved traces exceed top_k={arm.top_k} of arm {arm.id}")
    parts = schema_fragment_parts(ir, node, arm.depth) if arm.include_schema else ()
    return PromptBundle(
        B=HEADER_TEXT,
        S="\n".join(parts),
        R=tuple(example_line(t) for t in retrieved),
        E=tuple(error_line(e) for e in errors),
        D=directives_text(arm, node),
        target_node=node,
        arm_id=arm.id,
        s_parts=parts,
        r_ids=tuple(t.id for t in retrieved),
    )


def _bullets(items) -> str:
    return "\n".join(f"- {i}" for i in items) if items else NONE


def _compose(B: str, S: str, R, E, D: str) -> str:
    bodies = (B, S or OMITTED, _bullets(R), _bullets(E), D)
    return "\n\n".join(f"{head}\n{body}" for head, body in zip(SECTION_ORDER, bodies)) + "\n"


def render(bundle: PromptBundle, budget: int = DEFAULT_BUDGET) -> str:
    """Join the sections in fixed order, trimming to fit ``budget`` characters.

    Overflow drops examples oldest-first, then schema levels deepest-first,
    then prior errors oldest-first, then truncates what is left of the schema.
    """
    R = list(zip(bundle.r_ids or range(len(bundle.R)), bundle.R))
    s_parts = list(bundle.s_parts) if bundle.s_parts else ([bundle.S] if bundle.S else [])
    E = list(bundle.E)

    def text() -> str:
        return _compose(bundle.B, "\n".join(s_parts), [r for _, r in R], E, bundle.D)

    out = text()
    while len(out) > budget and R:
        R.remove(min(R, key=lambda p: p[0]))
        out = text()
    while len(out) > budget and len(s_parts) > 1:
        s_parts.pop()
        out = text()
    while len(out) > budget and E:
        E.pop()  # E is newest-first
        out = text()
    if len(out) > budget and s_parts:
        excess = len(out) - budget
        marker = "\n# ...[schema truncated]"
        keep = max(0, len(s_parts[0]) - excess - len(marker))
        s_parts = [s_parts[0][:keep] + marker] if keep else []
        out = text()
    if len(out) > budget:
        out = out[:budget]
    return out


def split_sections(prompt: str) -> dict[str, str]:
    """Inverse of :func:`render` for well-formed prompts; keyed by section header."""
    out: dict[str, str] = {}
    positions = []
    search_from = 0
    for head in SECTION_ORDER:
        idx = prompt.find(head + "\n", search_from) if head != SECTION_DIRECTIVES else prompt.rfind(head + "\n")
        if idx < 0:
            continue
        positions.append((idx, head))
        search_from = idx + len(head)
    positions.sort()
    for i, (idx, head) in enumerate(positions):
        end = positions[i + 1][0] if i + 1 < len(positions) else len(prompt)
        out[head] = prompt[idx + len(head) + 1: end].strip("\n")
    return out
