"""
Dashboard Generator Agent
Builds an interactive Streamlit dashboard for one training run: KPI cards,
reward/length dynamics, per-family curves and the behavior report.
"""

import json
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
import streamlit as st

from src.agents.behavior_analyzer import REPORT_FILE
from src.agents.metrics_reporter import (
    correlate_by_group,
    dynamics_figure,
    family_frame,
    load_metrics,
    moving_average,
    pearson,
)
from src.utils.errors import UndefinedCorrelationError


def load_run(run_dir: str) -> Dict:
    """
    Everything the dashboard shows, read from a run directory.

    The training run writes metrics.jsonl and config.json. The behavior report
    is optional; `analyze --output-dir <run_dir>` writes it next to them.
    """
    run = Path(run_dir)
    data = {"metrics": load_metrics(run / "metrics.jsonl"), "config": {}, "behavior": None}
    if (run / "config.json").exists():
        data["config"] = json.loads((run / "config.json").read_text(encoding="utf-8"))
    if (run / REPORT_FILE).exists():
        data["behavior"] = json.loads((run / REPORT_FILE).read_text(encoding="utf-8"))
    return data


def kpi_summary(metrics: pd.DataFrame) -> Dict:
    try:
        r = pearson(metrics["mean_reward"], metrics["mean_response_length"])
    except UndefinedCorrelationError:
        r = None
    return {
        "iterations": int(len(metrics)),
        "final_reward": float(metrics["mean_reward"].iloc[-1]),
        "reward_gain": float(metrics["mean_reward"].iloc[-1] - metrics["mean_reward"].iloc[0]),
        "moving_average": float(moving_average(metrics["mean_reward"]).iloc[-1]),
        "final_length": float(metrics["mean_response_length"].iloc[-1]),
        "max_length": int(metrics["max_length"].iloc[-1]) if "max_length" in metrics else None,
        "correlation": r,
    }


def family_long_frame(metrics: pd.DataFrame) -> pd.DataFrame:
    """(iteration, family, reward, length) rows for the per-family charts."""
    rewards = family_frame(metrics, "family_reward")
    lengths = family_frame(metrics, "family_length")
    rows = []
    for i, iteration in enumerate(metrics["iteration"]):
        for family in rewards.columns:
            reward = rewards[family].iloc[i]
            if pd.notna(reward):
                rows.append({"iteration": int(iteration), "family": family,
                             "reward": float(reward), "length": float(lengths[family].iloc[i])})
    return pd.DataFrame(rows, columns=["iteration", "family", "reward", "length"])


def behavior_frame(behavior: Dict) -> pd.DataFrame:
    rows = []
    for kind, cbr in behavior.get("cbr", {}).items():
        btr = behavior.get("btr", {}).get(kind)
        rows.append({"behavior": kind, "CBR": cbr,
                     "BTR": btr if kind in behavior.get("btr", {}) else None,
                     "traces": behavior.get("trace_counts", {}).get(kind, 0)})
    return pd.DataFrame(rows, columns=["behavior", "CBR", "BTR", "traces"])


class DashboardGeneratorAgent:
    """
    Agent that builds and displays the Streamlit view of a training run.
    """
    def __init__(self, metrics: pd.DataFrame, config: Optional[Dict] = None, behavior: Optional[Dict] = None):
        """
        Initialize Dashboard Generator Agent.

        Args:
            metrics: Per-iteration metrics from the trainer
            config: Resolved training config of the run
            behavior: Behavior report dict, when one was produced
        """
        self.metrics = metrics
        self.config = config or {}
        self.behavior = behavior

    def build_dashboard(self):
        """Build and display the complete Streamlit dashboard."""
        st.set_page_config(
            page_title="ReasonIQ Dashboard",
            page_icon="🧠",
            layout="wide",
            initial_sidebar_state="expanded"
        )

        self._render_header()
        self._render_kpi_cards()

        tab1, tab2, tab3 = st.tabs([
            "📈 Training Dynamics",
            "🧮 Task Families",
            "🧠 Cognitive Behaviors"
        ])

        with tab1:
            self._render_training_dynamics()

        with tab2:
            self._render_family_breakdown()

        with tab3:
            self._render_behavior()

    def _render_header(self):
        col1, col2 = st.columns([3, 1])

        with col1:
            st.title("🧠 ReasonIQ Dashboard")
            families = ", ".join(self.config.get("task_families", [])) or "N/A"
            st.markdown(f"**Task families:** {families}")

        with col2:
            st.metric("Seed", self.config.get("seed", "N/A"))
            st.caption(f"📁 {self.config.get('output_dir', '')}")

    def _render_kpi_cards(self):
        st.markdown("---")
        st.subheader("📊 Run Summary")
        kpis = kpi_summary(self.metrics)

        col1, col2, col3, col4 = st.columns(4)

        with col1:
            st.metric("Iterations", f"{kpis['iterations']:,}")

        with col2:
            st.metric(
                "Final Mean Reward",
                f"{kpis['final_reward']:.3f}",
                delta=f"{kpis['reward_gain']:+.3f}",
                help="Share of sampled responses graded correct in the last iteration"
            )

        with col3:
            st.metric(
                "Reward (20-iter avg)",
                f"{kpis['moving_average']:.3f}"
            )

        with col4:
            r = kpis["correlation"]
            st.metric(
                "Reward-Length r",
                "undefined" if r is None else f"{r:.3f}",
                help="Pearson correlation between mean reward and mean response length"
            )

    def _render_training_dynamics(self):
        st.markdown("### 📈 Reward and Response Length")
        st.plotly_chart(dynamics_figure(self.metrics), use_container_width=True)

        col1, col2 = st.columns(2)

        with col1:
            st.markdown("#### Clip Fraction")
            fig_clip = go.Figure()
            fig_clip.add_trace(go.Scatter(
                x=self.metrics["iteration"],
                y=self.metrics["clip_fraction"],
                mode="lines",
                name="clip fraction",
                line=dict(color="#00d4ff", width=2)
            ))
            fig_clip.update_layout(template="plotly_dark", height=300)
            st.plotly_chart(fig_clip, use_container_width=True)

        with col2:
            st.markdown("#### Value Loss")
            fig_vl = px.line(self.metrics, x="iteration", y="value_loss", template="plotly_dark")
            fig_vl.update_traces(line_color="#ff6b6b")
            st.plotly_chart(fig_vl, use_container_width=True)

        with st.expander("📋 View Metrics Table"):
            st.dataframe(self.metrics.drop(columns=["family_reward", "family_length"], errors="ignore"),
                         use_container_width=True)

    def _render_family_breakdown(self):
        st.markdown("### 🧮 Per-Family Dynamics")
        long = family_long_frame(self.metrics)
        if long.empty:
            st.info("No per-family metrics in this run")
            return

        col1, col2 = st.columns(2)
        with col1:
            st.plotly_chart(px.line(long, x="iteration", y="reward", color="family",
                                    template="plotly_dark", title="Mean reward"),
                            use_container_width=True)
        with col2:
            st.plotly_chart(px.line(long, x="iteration", y="length", color="family",
                                    template="plotly_dark", title="Mean response length"),
                            use_container_width=True)

        groups = correlate_by_group(self.metrics)
        st.dataframe(pd.DataFrame([{"group": g, "r": r} for g, r in groups.items()]),
                     use_container_width=True)

    def _render_behavior(self):
        st.markdown("### 🧠 Emergence and Transfer")
        if not self.behavior:
            st.info(f"No {REPORT_FILE} in this run directory. "
                    "Write one with `run_reasoniq.py analyze --traces <traces.jsonl> --output-dir <run_dir>`.")
            return
        table = behavior_frame(self.behavior)
        fig = px.bar(table, x="behavior", y="CBR", template="plotly_dark")
        fig.update_traces(marker_color="#51cf66")
        st.plotly_chart(fig, use_container_width=True)
        st.dataframe(table, use_container_width=True)
