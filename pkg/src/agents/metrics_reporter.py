"""
Metrics Reporter Agent
Reads a run's metrics stream, measures how reward tracks response length,
and writes the dynamics chart plus a markdown run summary.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from src.rl.taskgen import PERCEPTION_FAMILIES
from src.utils.errors import ContractViolation, UndefinedCorrelationError

logger = logging.getLogger(__name__)

REWARD_COLOR = "#8975bd"
LENGTH_COLOR = "#ff9f43"
CHART_DIV_ID = "reasoniq-training-dynamics"
MIN_CORRELATION_POINTS = 3

MetricsSource = Union[str, Path, pd.DataFrame]


def load_metrics(source: MetricsSource) -> pd.DataFrame:
    """Metrics as a frame sorted by iteration; accepts the JSONL stream or a CSV export."""
    if isinstance(source, pd.DataFrame):
        df = source.copy()
    else:
        path = Path(source)
        if path.suffix.lower() == ".csv":
            df = pd.read_csv(path)
        else:
            if path.stat().st_size == 0:
                raise ContractViolation(f"metrics file {path} is empty")
            df = pd.read_json(path, lines=True)
    if df.empty:
        raise ContractViolation("metrics file has no records")
    for col in ("iteration", "mean_reward", "mean_response_length"):
        if col not in df.columns:
            raise ContractViolation(f"metrics lack the {col!r} column")
    return df.sort_values("iteration", kind="stable").reset_index(drop=True)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ContractViolation("correlation series differ in length")
    if len(x) < MIN_CORRELATION_POINTS:
        raise UndefinedCorrelationError(f"correlation needs at least {MIN_CORRELATION_POINTS} points, got {len(x)}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    r = pd.Series(x).corr(pd.Series(y), method="pearson")
    return float(np.clip(r, -1.0, 1.0))


def correlate(source: MetricsSource) -> float:
    """Pearson r between the mean_reward and mean_response_length series."""
    df = load_metrics(source)
    return pearson(df["mean_reward"], df["mean_response_length"])


def family_frame(df: pd.DataFrame, column: str) -> pd.DataFrame:
    if column not in df.columns:
        return pd.DataFrame(index=df.index)
    return pd.DataFrame([row if isinstance(row, dict) else {} for row in df[column]], index=df.index)


def correlate_by_group(source: MetricsSource) -> Dict[str, Optional[float]]:
    """
    Reward-length correlation per task family and per tag (perception vs
    arithmetic, using the family-mean series). Undefined entries are None.
    """
    df = load_metrics(source)
    rewards = family_frame(df, "family_reward")
    lengths = family_frame(df, "family_length")
    out: Dict[str, Optional[float]] = {}

    def safe(x, y) -> Optional[float]:
        try:
            return pearson(x, y)
        except UndefinedCorrelationError:
            return None

    for family in sorted(rewards.columns):
        mask = rewards[family].notna() & lengths[family].notna()
        out[family] = safe(rewards.loc[mask, family], lengths.loc[mask, family])

    perception = [f for f in rewards.columns if f in {p.value for p in PERCEPTION_FAMILIES}]
    groups = {"perception": perception, "arithmetic": [f for f in rewards.columns if f not in perception]}
    for tag, families in groups.items():
        if not families:
            continue
        r_mean = rewards[families].mean(axis=1)
        l_mean = lengths[families].mean(axis=1)
        mask = r_mean.notna() & l_mean.notna()
        out[f"tag:{tag}"] = safe(r_mean[mask], l_mean[mask])
    return out


def dynamics_figure(df: pd.DataFrame) -> go.Figure:
    """Reward on the left axis, mean response length on the right."""
    fig = make_subplots(specs=[[{"secondary_y": True}]])
    fig.add_trace(go.Scatter(
        x=df["iteration"].tolist(),
        y=df["mean_reward"].tolist(),
        mode="lines+markers",
        name="Mean reward",
        line=dict(color=REWARD_COLOR, width=3),
        marker=dict(size=6),
    ), secondary_y=False)
    fig.add_trace(go.Scatter(
        x=df["iteration"].tolist(),
        y=df["mean_response_length"].tolist(),
        mode="lines+markers",
        name="Mean response length",
        line=dict(color=LENGTH_COLOR, width=3),
        marker=dict(size=6),
    ), secondary_y=True)
    fig.update_layout(
        title="Training dynamics",
        xaxis_title="Iteration",
        template="plotly_dark",
        height=450,
        hovermode="x unified",
    )
    fig.update_yaxes(title_text="Mean reward", range=[0, 1], secondary_y=False)
    fig.update_yaxes(title_text="Tokens", secondary_y=True)
    return fig


def plot(source: MetricsSource, out_path: str) -> str:
    """Self-contained HTML chart; the bytes depend only on the metrics."""
    df = load_metrics(source)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    dynamics_figure(df).write_html(str(out), include_plotlyjs=True, full_html=True, div_id=CHART_DIV_ID)
    logger.info("wrote dynamics chart for %d iterations to %s", len(df), out)
    return str(out)


def moving_average(series: pd.Series, window: int = 20) -> pd.Series:
    return series.rolling(window=window, min_periods=1).mean()


def _fmt(r: Optional[float]) -> str:
    return "undefined" if r is None else f"{r:.4f}"


def render_summary(df: pd.DataFrame) -> str:
    """Markdown run summary."""
    try:
        overall = pearson(df["mean_reward"], df["mean_response_length"])
    except UndefinedCorrelationError:
        overall = None
    ma = moving_average(df["mean_reward"])
    lines = [
        "# ReasonIQ Run Summary",
        "",
        "| Metric | Value |",
        "|---|---|",
        f"| Iterations | {len(df)} |",
        f"| First mean reward | {df['mean_reward'].iloc[0]:.4f} |",
        f"| Final mean reward | {df['mean_reward'].iloc[-1]:.4f} |",
        f"| Final 20-iteration moving average | {ma.iloc[-1]:.4f} |",
        f"| Best mean reward | {df['mean_reward'].max():.4f} |",
        f"| Final mean response length | {df['mean_response_length'].iloc[-1]:.2f} |",
        f"| Reward-length correlation | {_fmt(overall)} |",
    ]
    groups = correlate_by_group(df)
    if groups:
        lines += ["", "## Reward-length correlation by group", "", "| Group | r |", "|---|---|"]
        lines += [f"| {name} | {_fmt(r)} |" for name, r in groups.items()]
    return "\n".join(lines) + "\n"


class MetricsReporterAgent:
    """
    Agent that turns a run's metrics stream into a chart and a written summary.
    """

    def __init__(self, metrics_path: str, output_dir: Optional[str] = None, verbose: bool = True):
        """
        Initialize the Metrics Reporter Agent.

        Args:
            metrics_path: metrics.jsonl written by the trainer (or a CSV export)
            output_dir: Where the chart and summary go; defaults to the metrics file's folder
        """
        self.metrics_path = metrics_path
        self.output_dir = Path(output_dir) if output_dir else Path(metrics_path).parent
        self.verbose = verbose
        self.reports: Dict[str, str] = {}

    def _say(self, message: str):
        if self.verbose:
            print(message)

    def run(self) -> Dict[str, str]:
        self._say("🚀 Starting Metrics Reporter Agent...")
        self._say("=" * 60)
        df = load_metrics(self.metrics_path)
        self.output_dir.mkdir(parents=True, exist_ok=True)

        chart_path = plot(df, str(self.output_dir / "dynamics.html"))
        summary_path = self.output_dir / "run_summary.md"
        summary_path.write_text(render_summary(df), encoding="utf-8")
        self.reports = {"chart": chart_path, "summary": str(summary_path)}

        self._say("\n" + "=" * 60)
        self._say("✅ REPORT GENERATION COMPLETE")
        self._say("=" * 60)
        for kind, path in self.reports.items():
            self._say(f"💾 Saved {kind}: {path}")
        return self.reports
