"""Campaign report: JSON for machines, Markdown for people, CSV and PNG for plots."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


@dataclass
class CampaignReport:
    campaign_id: str
    seed: int
    status: str  # "completed" | "aborted"
    final_coverage: float
    covered_nodes: list[list[str]]
    total_nodes: int
    episodes: int
    episodes_to_full_coverage: int | None
    timeline: list[float]
    arm_stats: list[dict[str, Any]]
    findings_summary: dict[str, Any]
    classifications: dict[str, int]
    bandit_updates: int
    config: dict[str, Any]
    probes: int = 0
    unexecuted_suggestions: int = 0
    observations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CampaignReport":
        return cls(**json.loads(text))

    def to_markdown(self) -> str:
        lines = [
            f"# Campaign {self.campaign_id}",
            "",
            f"- status: {self.status}",
            f"- seed: {self.seed}",
            f"- episodes: {self.episodes}",
            f"- coverage: {self.final_coverage:.2%} ({len(self.covered_nodes)}/{self.total_nodes} nodes)",
            f"- episodes to full coverage: {self.episodes_to_full_coverage if self.episodes_to_full_coverage is not None else 'not reached'}",
            f"- bandit updates: {self.bandit_updates}",
            f"- security probes: {self.probes}",
        ]
        for obs in self.observations:
            lines.append(f"- note: {obs}")
        lines += ["", "## Covered nodes", ""]
        lines += [f"- {kind} {name}" for kind, name in self.covered_nodes] or ["(none)"]
        lines += ["", "## Outcomes", "", "| classification | count |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in sorted(self.classifications.items())]
        lines += ["", "## Arms", "", "| arm | successes | failures | posterior mean |", "|---|---|---|---|"]
        lines += [f"| {a['arm']} | {a['s']:.3f} | {a['f']:.3f} | {a['mean']:.3f} |" for a in self.arm_stats]
        summary = self.findings_summary
        lines += [
            "",
            "## Vulnerabilities",
            "",
            "| vulnerabilities | categories |",
            "|---|---|",
            f"| {summary.get('total', 0)} | {summary.get('categories', 0)} |",
            "",
        ]
        for vtype, count in summary.get("by_type", {}).items():
            lines.append(f"- {vtype}: {count}")
        return "\n".join(lines).rstrip("\n") + "\n"


def write_timeline_csv(report: CampaignReport, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "coverage"])
        for i, c in enumerate(report.timeline, start=1):
            w.writerow([i, f"{c:.4f}"])


def write_arms_csv(report: CampaignReport, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "s", "f", "mean"])
        for a in report.arm_stats:
            w.writerow([a["arm"], f"{a['s']:.6f}", f"{a['f']:.6f}", f"{a['mean']:.6f}"])


def plot_coverage(report: CampaignReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = range(1, len(report.timeline) + 1)
    ax.step(list(xs), report.timeline, where="post")
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("episode")
    ax.set_ylabel("node coverage")
    ax.set_title(f"Coverage, {report.campaign_id}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_arms(report: CampaignReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [a["arm"] for a in report.arm_stats]
    fig, ax = plt.subplots(figsize=(6, 0.4 * max(len(names), 1) + 1.5))
    ax.barh(names, [a["mean"] for a in report.arm_stats])
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("posterior mean success")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_report(report: CampaignReport, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    """Write every report artifact under ``out_dir``; returns the paths by kind."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cid = report.campaign_id
    paths = {
        "json": out / f"{cid}.json",
        "md": out / f"{cid}.md",
        "timeline_csv": out / f"{cid}-timeline.csv",
        "arms_csv": out / f"{cid}-arms.csv",
    }
    paths["json"].write_text(report.to_json(), encoding="utf-8")
    paths["md"].write_text(report.to_markdown(), encoding="utf-8")
    write_timeline_csv(report, paths["timeline_csv"])
    write_arms_csv(report, paths["arms_csv"])
    if figures:
        paths["coverage_png"] = out / f"{cid}-coverage.png"
        paths["arms_png"] = out / f"{cid}-arms.png"
        plot_coverage(report, paths["coverage_png"])
        plot_arms(report, paths["arms_png"])
    return paths
