"""The closed fuzzing loop: pick a node and arm, prompt, validate, execute, learn."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import httpx
import yaml

from prediql.bandit import DEFAULT_ARMS, DEFAULT_GAMMA, RNG_ALGORITHM, Arm, BanditError, arm_stats, init_bandit, reward_signal, select_arm, update
from prediql.coverage import CoverageState
from prediql.detector import (
    Finding,
    ParseStats,
    aggregate,
    build_analysis_prompt,
    distinct_findings,
    parse_findings,
    rule_based_scan,
    security_probes,
)
from prediql.execution import DEFAULT_RATE_LIMIT, DEFAULT_TIMEOUT, Executor
from prediql.gql import GraphQLSyntaxError, parse_query, validate_against_schema
from prediql.prompts import DEFAULT_BUDGET, assemble_prompt, render, schema_fragment_parts
from prediql.provider import CompletionRequest, ProviderAuthError, ProviderError, extract_queries, make_provider
from prediql.report import CampaignReport, write_report
from prediql.schema import (
    INTROSPECTION_QUERY,
    EndpointError,
    IntrospectionDisabledError,
    IntrospectionTransportError,
    NodeKey,
    SchemaIR,
    build_schema_ir,
    enumerate_nodes,
    run_introspection,
    write_schema_yaml,
)
from prediql.traces import EXCERPT_CAP, Outcome, Trace, TraceStore, truncate_excerpt

log = logging.getLogger(__name__)

NODE_POLICIES = ("round_robin",)
INTROSPECTION_NODE: NodeKey = ("query", "__schema")


class CampaignError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def _arm_from(obj) -> Arm:
    if isinstance(obj, Arm):
        return obj
    try:
        return Arm(**obj)
    except (BanditError, TypeError) as exc:
        raise ConfigError(f"bad arm definition {obj!r}: {exc}") from exc


@dataclass
class CampaignConfig:
    endpoint: str = ""
    headers: dict[str, str] = field(default_factory=dict)
    provider: str = "offline"
    provider_params: dict[str, Any] = field(default_factory=dict)
    arms: tuple[Arm, ...] = DEFAULT_ARMS
    gamma: float = DEFAULT_GAMMA
    seed: int = 7
    max_episodes: int = 500
    node_policy: str = "round_robin"
    rate_limit: float | None = DEFAULT_RATE_LIMIT
    timeout: float = DEFAULT_TIMEOUT
    enable_retrieval: bool = True
    enable_self_correction: bool = True
    enable_bandit: bool = True
    fixed_arm: str = "schema_min_known"
    decay_all: bool = False
    error_window: int = 5
    prompt_budget: int = DEFAULT_BUDGET
    temperature: float = 0.7
    max_tokens: int = 1024
    enable_probes: bool = True
    model_analysis: bool = False
    foreign_ids: tuple[str, ...] = ()
    output_dir: str | None = None
    campaign_id: str | None = None
    verbose: bool = False

    def __post_init__(self):
        self.arms = tuple(_arm_from(a) for a in self.arms)
        self.foreign_ids = tuple(sorted(str(i) for i in self.foreign_ids))
        if self.max_episodes < 1:
            raise ConfigError("max_episodes must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.node_policy not in NODE_POLICIES:
            raise ConfigError(f"node_policy must be one of {NODE_POLICIES}")
        if not self.arms:
            raise ConfigError("at least one arm is required")
        if self.fixed_arm not in {a.id for a in self.arms}:
            raise ConfigError(f"fixed_arm {self.fixed_arm!r} is not among the configured arms")
        if self.error_window < 0:
            raise ConfigError("error_window must be >= 0")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "CampaignConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "arms" in data:
            data["arms"] = tuple(_arm_from(a) for a in data["arms"])
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "CampaignConfig":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_mapping(data)

    def echo(self) -> dict[str, Any]:
        """Config as recorded in the report; output locations and verbosity are left out."""
        d = dataclasses.asdict(self)
        for k in ("output_dir", "verbose", "campaign_id"):
            d.pop(k)
        d["headers"] = sorted(d["headers"])  # header names only, never credentials
        d["arms"] = [dataclasses.asdict(a) for a in self.arms]
        d["foreign_ids"] = list(self.foreign_ids)
        d["rng"] = RNG_ALGORITHM
        return d

    def derived_id(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True).encode("utf-8")
        return "c-" + hashlib.sha256(blob).hexdigest()[:12]


class NodePicker:
    """Round-robin over uncovered nodes; least-attempted once everything is covered."""

    def __init__(self, nodes: Iterable[NodeKey]):
        self.nodes = list(nodes)
        self.cursor = 0
        self.attempts: Counter = Counter()

    def next(self, coverage: CoverageState) -> NodeKey:
        n = len(self.nodes)
        for step in range(n):
            node = self.nodes[(self.cursor + step) % n]
            if node not in coverage.covered:
                self.cursor = (self.cursor + step + 1) % n
                break
        else:
            node = min(self.nodes, key=lambda x: self.attempts[x])
        self.attempts[node] += 1
        return node


@dataclass
class CampaignResult:
    """Everything a caller may want beyond the report itself."""

    report: CampaignReport
    ir: SchemaIR | None
    traces: list[Trace]
    probe_traces: list[Trace]
    findings: list[Finding]
    paths: dict[str, Path] = field(default_factory=dict)


def _introspection_trace(doc: dict, latency_ms: float) -> Trace:
    body = json.dumps(doc, sort_keys=True)
    excerpt = truncate_excerpt(body, EXCERPT_CAP)
    outcome = Outcome(200, (), True, latency_ms, excerpt, "success")
    return Trace(0, INTROSPECTION_NODE, "introspection", INTROSPECTION_QUERY, outcome, excerpt, (), ())


def _pick_candidate(candidates: list[str], ir: SchemaIR, node: NodeKey, depth_limit: int):
    """First candidate that parses, selects the target and validates; else the first failure."""
    first_failure: tuple[str, list[str]] | None = None
    for text in candidates:
        try:
            ast = parse_query(text)
        except GraphQLSyntaxError as exc:
            first_failure = first_failure or (text, [str(exc)])
            continue
        if ast.operation != node[0] or not any(f.name == node[1] for f in ast.selections):
            first_failure = first_failure or (text, [f'Query does not select the target field "{node[1]}" on {node[0]}.'])
            continue
        report = validate_against_schema(ast, ir, depth_limit)
        if not report.valid:
            first_failure = first_failure or (text, report.messages())
            continue
        return text, None
    return None, first_failure


def _write_findings(findings: list[Finding], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([f.to_dict() for f in findings], sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_campaign_full(config: CampaignConfig, client: httpx.Client | None = None, figures: bool = True) -> CampaignResult:
    cid = config.campaign_id or config.derived_id()
    out = Path(config.output_dir) if config.output_dir else None
    provider = make_provider(config.provider, **{"seed": config.seed, **config.provider_params})
    started = time.perf_counter()

    try:
        doc = run_introspection(config.endpoint, config.headers, config.timeout, client)
    except IntrospectionDisabledError as exc:
        report = CampaignReport(
            campaign_id=cid, seed=config.seed, status="aborted", final_coverage=0.0, covered_nodes=[],
            total_nodes=0, episodes=0, episodes_to_full_coverage=None, timeline=[], arm_stats=[],
            findings_summary=aggregate([]), classifications={}, bandit_updates=0, config=config.echo(),
            observations=[f"introspection disabled: {exc}; no schema, campaign aborted"],
        )
        paths = write_report(report, out / "report", figures) if out else {}
        return CampaignResult(report, None, [], [], [], paths)
    except (IntrospectionTransportError, EndpointError) as exc:
        raise CampaignError(f"endpoint {config.endpoint} unusable: {exc}") from exc
    intro_ms = (time.perf_counter() - started) * 1000
    ir = build_schema_ir(doc)
    nodes = enumerate_nodes(ir)
    if not nodes:
        raise CampaignError("schema exposes no root operations")

    paths: dict[str, Path] = {}
    if out:
        write_schema_yaml(ir, out / "schema")
    store = TraceStore(out / "traces" / f"{cid}.ndjson" if out else None, fresh=True)
    probe_store = TraceStore(out / "traces" / f"{cid}-probes.ndjson" if out else None, fresh=True)
    executor = Executor(config.endpoint, config.headers, config.timeout, config.rate_limit, client)
    bandit = init_bandit(config.arms, config.gamma, config.seed, config.decay_all)
    coverage = CoverageState(nodes)
    picker = NodePicker(nodes)
    parse_stats = ParseStats()

    findings: list[Finding] = list(rule_based_scan(_introspection_trace(doc, intro_ms), ir_known=True))
    timeline: list[float] = []
    suggestions: list[dict] = []
    updates = 0
    full_at: int | None = None
    prompt_dir = out / "prompts" / cid if out and config.verbose else None
    if prompt_dir:
        prompt_dir.mkdir(parents=True, exist_ok=True)

    def analyse(trace: Trace, probe: bool = False) -> None:
        got = rule_based_scan(trace, ir_known=True, foreign_ids=config.foreign_ids)
        if config.model_analysis and trace.outcome.classification != "rejected":
            fragment = "\n".join(schema_fragment_parts(ir, trace.node, 1)) if ir.operation(trace.node) else ""
            try:
                answer = provider.complete(CompletionRequest(build_analysis_prompt(trace, fragment), 0.0, config.max_tokens))
            except ProviderError as exc:
                log.warning("analysis completion failed for trace %s: %s", trace.id, exc)
                answer = ""
            got += parse_findings(answer, trace.id, trace.node, parse_stats)
        if probe:
            got = [dataclasses.replace(f, trace_id=-f.trace_id) for f in got]
        findings.extend(got)

    try:
        for episode in range(1, config.max_episodes + 1):
            node = picker.next(coverage)
            arm_id = select_arm(bandit) if config.enable_bandit else config.fixed_arm
            arm = bandit.arm(arm_id)
            retrieved = store.retrieve_similar(f"{node[0]} {node[1]}", arm.top_k) if config.enable_retrieval else []
            errors = store.recent_errors(node, config.error_window) if config.enable_self_correction else []
            prompt = render(assemble_prompt(arm, ir, node, retrieved, errors), config.prompt_budget)
            if prompt_dir:
                (prompt_dir / f"{episode:05d}.txt").write_text(prompt, encoding="utf-8")

            try:
                completion = provider.complete(CompletionRequest(prompt, config.temperature, config.max_tokens))
            except ProviderAuthError:
                raise
            except ProviderError as exc:
                completion, candidates = "", []
                failure = ("", [f"provider error: {exc}"])
            else:
                candidates = extract_queries(completion)
                failure = (truncate_excerpt(completion, 500), ["No GraphQL query found in the completion."])

            chosen, bad = _pick_candidate(candidates, ir, node, arm.depth_limit) if candidates else (None, failure)
            if chosen is None:
                text, messages = bad
                outcome = Outcome(0, tuple(messages), False, 0.0, "", "rejected")
                tid = store.record(node, arm_id, text, outcome, "", messages)
            else:
                suggestions.extend(
                    {"episode": episode, "node": list(node), "query": c} for c in candidates if c != chosen
                )
                outcome, body = executor.execute(chosen, target_field=node[1])
                tid = store.record(node, arm_id, chosen, outcome, body, outcome.graphql_errors)
                delta = coverage.register_success(node) if outcome.classification == "success" else False
                if config.enable_bandit:
                    update(bandit, arm_id, reward_signal(outcome, delta))
                    updates += 1
            analyse(store.get(tid))
            timeline.append(coverage.coverage())
            if config.verbose:
                log.info("episode %d node=%s arm=%s -> %s coverage=%.4f", episode, node, arm_id,
                         outcome.classification, timeline[-1])
            if coverage.complete:
                full_at = episode
                break

        if config.enable_probes:
            for probe in security_probes(ir, config.foreign_ids):
                outcome, body = executor.execute(probe.query_text, target_field=probe.node[1])
                tid = probe_store.record(probe.node, f"probe:{probe.label}", probe.query_text, outcome, body,
                                         outcome.graphql_errors)
                analyse(probe_store.get(tid), probe=True)
    finally:
        executor.close()
        store.close()
        probe_store.close()

    traces = store.traces
    unique = distinct_findings(findings)
    observations = []
    if parse_stats.warnings:
        observations.append(f"{parse_stats.warnings} analysis completions held no JSON array")
    report = CampaignReport(
        campaign_id=cid,
        seed=config.seed,
        status="completed",
        final_coverage=coverage.coverage(),
        covered_nodes=[list(n) for n in nodes if n in coverage.covered],
        total_nodes=len(nodes),
        episodes=len(traces),
        episodes_to_full_coverage=full_at,
        timeline=timeline,
        arm_stats=[{"arm": a, "s": s, "f": f, "mean": m} for a, s, f, m in arm_stats(bandit)],
        findings_summary=aggregate(unique),
        classifications=dict(sorted(Counter(t.outcome.classification for t in traces).items())),
        bandit_updates=updates,
        config=config.echo(),
        probes=len(probe_store),
        unexecuted_suggestions=len(suggestions),
        observations=observations,
    )
    if out:
        _write_findings(unique, out / "findings" / f"{cid}.json")
        if suggestions:
            with (out / "traces" / f"{cid}-suggestions.ndjson").open("w", encoding="utf-8") as fh:
                for s in suggestions:
                    fh.write(json.dumps(s) + "\n")
        paths = write_report(report, out / "report", figures)
    return CampaignResult(report, ir, traces, probe_store.traces, unique, paths)


def run_campaign(config: CampaignConfig, client: httpx.Client | None = None) -> CampaignReport:
    return run_campaign_full(config, client).report
