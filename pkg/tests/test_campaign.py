import json

import httpx
import pytest

from prediql.bandit import DEFAULT_ARMS
from prediql.campaign import CampaignConfig, CampaignError, ConfigError, NodePicker, run_campaign_full
from prediql.coverage import CoverageState
from prediql.fixture import FOREIGN_IDS
from prediql.prompts import NONE, split_sections
from prediql.report import CampaignReport
from conftest import fixture_campaign


def prompts_of(out_dir, result):
    folder = out_dir / "prompts" / result.report.campaign_id
    return [split_sections(p.read_text(encoding="utf-8")) for p in sorted(folder.glob("*.txt"))]


def test_default_run_covers_fixture():
    result = fixture_campaign()
    report = result.report
    assert report.status == "completed" and report.final_coverage == 1.0
    assert report.total_nodes == 6 and len(report.covered_nodes) == 6
    assert report.episodes_to_full_coverage == report.episodes == len(result.traces)
    assert report.findings_summary["categories"] >= 4


def test_single_episode():
    result = fixture_campaign(max_episodes=1)
    assert len(result.traces) == 1 and result.report.episodes == 1
    assert len(result.report.timeline) == 1


def test_bookkeeping_invariants():
    result = fixture_campaign(max_episodes=40, seed=3)
    report = result.report
    executed = [t for t in result.traces if t.outcome.classification != "rejected"]
    assert report.bandit_updates == len(executed)
    assert sum(report.classifications.values()) == len(result.traces)
    assert all(a <= b for a, b in zip(report.timeline, report.timeline[1:]))
    assert [t.id for t in result.traces] == list(range(1, len(result.traces) + 1))
    assert sum(a["s"] + a["f"] for a in report.arm_stats) > 0


def test_determinism(tmp_path):
    one = fixture_campaign(seed=11, output_dir=str(tmp_path / "a"))
    two = fixture_campaign(seed=11, output_dir=str(tmp_path / "b"))
    assert one.report.to_json() == two.report.to_json()
    assert one.report.campaign_id == two.report.campaign_id


def test_campaign_id_depends_on_config():
    assert CampaignConfig(seed=1).derived_id() != CampaignConfig(seed=2).derived_id()
    assert CampaignConfig(output_dir="/x").derived_id() == CampaignConfig(output_dir="/y").derived_id()


def test_outputs_written(tmp_path):
    result = fixture_campaign(output_dir=str(tmp_path))
    cid = result.report.campaign_id
    assert (tmp_path / "traces" / f"{cid}.ndjson").read_text().count("\n") == len(result.traces)
    assert (tmp_path / "traces" / f"{cid}-probes.ndjson").exists()
    findings = json.loads((tmp_path / "findings" / f"{cid}.json").read_text())
    assert len(findings) == result.report.findings_summary["total"]
    assert list((tmp_path / "schema").iterdir())
    for key in ("json", "md", "timeline_csv", "arms_csv"):
        assert result.paths[key].exists()
    assert CampaignReport.from_json(result.paths["json"].read_text()) == result.report


def test_probe_findings_use_negative_ids():
    result = fixture_campaign()
    assert result.report.probes == len(result.probe_traces) == 4
    probe_types = {f.vuln_type for f in result.findings if f.trace_id < 0}
    assert {"sql_injection", "dos_deep_query"} <= probe_types
    assert any(f.trace_id == 0 and f.vuln_type == "introspection_exposure" for f in result.findings)


def test_no_self_correction_means_empty_errors(tmp_path):
    result = fixture_campaign(output_dir=str(tmp_path), verbose=True, enable_self_correction=False,
                              provider_params={"handicap": True}, max_episodes=12)
    sections = prompts_of(tmp_path, result)
    assert len(sections) == 12
    assert all(s["### PRIOR ERRORS"] == NONE for s in sections)


def test_errors_fed_back_when_enabled(tmp_path):
    result = fixture_campaign(output_dir=str(tmp_path), verbose=True, provider_params={"handicap": True}, max_episodes=12)
    assert any(s["### PRIOR ERRORS"] != NONE for s in prompts_of(tmp_path, result))


def test_no_retrieval_means_empty_examples(tmp_path):
    result = fixture_campaign(output_dir=str(tmp_path), verbose=True, enable_retrieval=False, max_episodes=20)
    assert all(s["### EXAMPLES"] == NONE for s in prompts_of(tmp_path, result))


def test_no_bandit_uses_fixed_arm():
    result = fixture_campaign(enable_bandit=False, fixed_arm="schema_deep_real")
    assert {t.arm_id for t in result.traces} == {"schema_deep_real"}
    assert result.report.bandit_updates == 0
    assert all(a["s"] == a["f"] == 0 for a in result.report.arm_stats)


def test_rejected_episodes_skip_bandit():
    result = fixture_campaign(max_episodes=8, arms=[a for a in DEFAULT_ARMS if a.id == "noschema_min_real"],
                              fixed_arm="noschema_min_real")
    rejected = [t for t in result.traces if t.outcome.classification == "rejected"]
    assert result.report.bandit_updates == len(result.traces) - len(rejected)


def aborting_client():
    return httpx.Client(transport=httpx.MockTransport(
        lambda r: httpx.Response(200, json={"errors": [{"message": "GraphQL introspection is not allowed"}]})))


def test_introspection_disabled_aborts(tmp_path):
    config = CampaignConfig(endpoint="http://closed/graphql", output_dir=str(tmp_path), rate_limit=None)
    result = run_campaign_full(config, aborting_client(), figures=False)
    assert result.report.status == "aborted" and result.report.episodes == 0
    assert "introspection disabled" in result.report.observations[0]
    assert result.paths["json"].exists()


def test_unreachable_endpoint():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    config = CampaignConfig(endpoint="http://gone/graphql", rate_limit=None)
    with pytest.raises(CampaignError):
        run_campaign_full(config, httpx.Client(transport=httpx.MockTransport(handler)), figures=False)


def test_yaml_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("endpoint: http://x/graphql\nseed: 3\nforeign_ids: [2, 1]\narms:\n"
                    "  - {id: only, include_schema: true, depth: 1, arg_mode: known, top_k: 3}\nfixed_arm: only\n")
    config = CampaignConfig.from_yaml(path)
    assert config.seed == 3 and config.foreign_ids == ("1", "2") and config.arms[0].id == "only"
    for text in ("endpoint: x\nturbo: true\n", "arms:\n  - {id: a, depth: 9}\n", "- 1\n"):
        path.write_text(text)
        with pytest.raises(ConfigError):
            CampaignConfig.from_yaml(path)


@pytest.mark.parametrize("bad", [{"max_episodes": 0}, {"gamma": 0}, {"gamma": 1.5}, {"fixed_arm": "nope"},
                                 {"node_policy": "random"}, {"error_window": -1}, {"arms": ()}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        CampaignConfig(**bad)


def test_echo_hides_header_values():
    echo = CampaignConfig(headers={"Authorization": "Bearer secret"}).echo()
    assert echo["headers"] == ["Authorization"]
    assert "secret" not in json.dumps(echo)


def test_node_picker_round_robin():
    nodes = [("query", "a"), ("query", "b"), ("query", "c")]
    cov = CoverageState(nodes)
    picker = NodePicker(nodes)
    assert [picker.next(cov) for _ in range(4)] == nodes + [nodes[0]]
    cov.register_success(("query", "b"))
    assert picker.next(cov) == ("query", "c")
    for n in nodes:
        cov.register_success(n)
    assert picker.next(cov) == ("query", "b")


def test_foreign_ids_enable_idor():
    with_ids = fixture_campaign()
    without = fixture_campaign(foreign_ids=())
    assert "idor" in with_ids.report.findings_summary["by_type"]
    assert "idor" not in without.report.findings_summary["by_type"]
    assert FOREIGN_IDS
