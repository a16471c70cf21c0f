"""
ReasonIQ Interactive Dashboard
Run with: streamlit run dashboard_app.py -- --run-dir runs/default
"""

import argparse

from src.agents.dashboard_generator import DashboardGeneratorAgent, load_run


def main():
    parser = argparse.ArgumentParser(description="ReasonIQ run dashboard")
    parser.add_argument("--run-dir", default="runs/default")
    args, _ = parser.parse_known_args()

    run = load_run(args.run_dir)

    dashboard = DashboardGeneratorAgent(
        metrics=run["metrics"],
        config=run["config"],
        behavior=run["behavior"]
    )

    dashboard.build_dashboard()

if __name__ == "__main__":
    main()
