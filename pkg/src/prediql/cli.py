"""Command line entry point: ``prediql run | introspect | fixture``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from prediql.campaign import CampaignConfig, CampaignError, ConfigError, run_campaign_full
from prediql.provider import ProviderError
from prediql.schema import SchemaError, build_schema_ir, enumerate_nodes, run_introspection, write_schema_yaml


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prediql", description="Coverage-guided GraphQL fuzzer.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a fuzzing campaign")
    target = run.add_mutually_exclusive_group()
    target.add_argument("--endpoint", help="GraphQL endpoint URL")
    target.add_argument("--fixture", action="store_true", help="fuzz the bundled vulnerable testbed in-process")
    run.add_argument("--config", type=Path, help="YAML file with campaign settings")
    run.add_argument("--provider", choices=["offline", "http"], help="completion provider")
    run.add_argument("--seed", type=int)
    run.add_argument("--max-episodes", type=int)
    run.add_argument("--rate-limit", type=float, help="requests per second; 0 disables the limiter")
    run.add_argument("--no-rag", action="store_true", help="disable retrieval of similar traces")
    run.add_argument("--no-self-correct", action="store_true", help="disable prior-error feedback")
    run.add_argument("--no-bandit", action="store_true", help="always use the fixed default arm")
    run.add_argument("--handicap", action="store_true", help="offline provider injects an invalid argument")
    run.add_argument("--report", type=Path, help="output directory for schema, traces, findings and report")
    run.add_argument("--no-figures", action="store_true", help="skip PNG plots")
    run.add_argument("-v", "--verbose", action="store_true")

    intro = sub.add_parser("introspect", help="fetch the schema and write it as YAML")
    intro.add_argument("--endpoint", required=True)
    intro.add_argument("--out", type=Path, required=True)
    intro.add_argument("--header", action="append", default=[], metavar="NAME:VALUE")

    fx = sub.add_parser("fixture", help="serve the vulnerable testbed over HTTP")
    fx.add_argument("--port", type=int, default=4000)
    fx.add_argument("--host", default="127.0.0.1")
    return parser


def _headers(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, value = item.partition(":")
        if not sep:
            raise SystemExit(f"bad header {item!r}, expected NAME:VALUE")
        out[name.strip()] = value.strip()
    return out


def _config_from_args(args) -> CampaignConfig:
    base = CampaignConfig.from_yaml(args.config) if args.config else CampaignConfig()
    changes: dict = {}
    if args.endpoint:
        changes["endpoint"] = args.endpoint
    if args.provider:
        changes["provider"] = args.provider
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_episodes is not None:
        changes["max_episodes"] = args.max_episodes
    if args.rate_limit is not None:
        changes["rate_limit"] = args.rate_limit or None
    if args.no_rag:
        changes["enable_retrieval"] = False
    if args.no_self_correct:
        changes["enable_self_correction"] = False
    if args.no_bandit:
        changes["enable_bandit"] = False
    if args.handicap:
        changes["provider_params"] = {**base.provider_params, "handicap": True}
    if args.report:
        changes["output_dir"] = str(args.report)
    if args.verbose:
        changes["verbose"] = True
    return dataclasses.replace(base, **changes)


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    handle = client = None
    if args.fixture:
        from prediql.fixture import FOREIGN_IDS, start_fixture

        handle = start_fixture()
        client = handle.client()
        config = dataclasses.replace(
            config, endpoint=handle.url, foreign_ids=config.foreign_ids or tuple(FOREIGN_IDS)
        )
    if not config.endpoint:
        print("error: an endpoint is required (--endpoint, --fixture or the config file)", file=sys.stderr)
        return 2
    try:
        result = run_campaign_full(config, client, figures=not args.no_figures)
    except (CampaignError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if client is not None:
            client.close()
        if handle is not None:
            handle.stop()
    r = result.report
    summary = r.findings_summary
    print(f"campaign {r.campaign_id}: {r.status}")
    print(f"coverage {r.final_coverage:.4f} ({len(r.covered_nodes)}/{r.total_nodes}) after {r.episodes} episodes")
    print(f"vulnerabilities {summary['total']} in {summary['categories']} categories")
    for obs in r.observations:
        print(f"note: {obs}")
    if "json" in result.paths:
        print(f"report {result.paths['json']}")
    return 0 if r.status == "completed" else 3


def _cmd_introspect(args) -> int:
    try:
        ir = build_schema_ir(run_introspection(args.endpoint, _headers(args.header)))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    paths = write_schema_yaml(ir, args.out)
    print(f"{len(enumerate_nodes(ir))} nodes, {len(ir.objects)} object types")
    for p in paths.values():
        print(p)
    return 0


def _cmd_fixture(args) -> int:
    from prediql.fixture import FixtureError, serve_forever

    try:
        serve_forever(args.port, args.host, on_ready=lambda url: print(f"fixture listening on {url}", flush=True))
    except FixtureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "introspect":
            return _cmd_introspect(args)
        return _cmd_fixture(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
