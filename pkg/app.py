"""
Streamlit viewer for finished co-simulation runs.
"""

import os
from pathlib import Path

import pandas as pd
import streamlit as st
from dotenv import load_dotenv

# Page configuration - must be first
st.set_page_config(
    page_title="T&D Co-simulation Results",
    page_icon="⚡",
    layout="wide",
    initial_sidebar_state="expanded",
)

try:
    from results import RunResultsLoader, list_runs
except ImportError as e:
    st.error(f"Import error: {e}")
    st.stop()

load_dotenv()

if "loaders" not in st.session_state:
    st.session_state.loaders = {}


def get_loader(run_dir: Path) -> RunResultsLoader:
    """Load a run once per session."""
    key = str(run_dir)
    if key not in st.session_state.loaders:
        st.session_state.loaders[key] = RunResultsLoader(run_dir)
    return st.session_state.loaders[key]


def display_metrics(loader: RunResultsLoader):
    s = loader.summary
    cols = st.columns(4)
    cols[0].metric("Status", s.get("status", "?"))
    cols[1].metric("Exchanges", s.get("exchanges", 0))
    cols[2].metric("Buffer resets", s.get("resets", "n/a"))
    cols[3].metric("Method / detector", f"{s.get('method', '?')} / {s.get('detector', '?')}")
    if s.get("error"):
        st.warning(f"Partial trace: {s['error']}")
    st.dataframe(loader.metrics_table(), use_container_width=True, hide_index=True)


def display_charts(loader: RunResultsLoader, max_points: int):
    for column, title in (("f_pcc", "PLL frequency at the PCC (Hz)"), ("theta_hat", "Boundary angle (deg)"), ("p_dpv", "DPV output (kW)")):
        st.subheader(title)
        st.line_chart(loader.downsample([column], max_points))


def main():
    """Main application function."""
    st.title("⚡ T&D Co-simulation Results")

    with st.sidebar:
        st.header("Runs")
        root = st.text_input("Results directory", os.getenv("TDCOSIM_OUTPUT_DIR", "results"))
        max_points = st.slider("Points per chart", 200, 5000, 2000, step=100)
        if st.button("Reload"):
            st.session_state.loaders = {}
            st.rerun()

    runs = list_runs(root)
    if not runs:
        st.info(f"No finished runs under {root}. Run `python cli.py run --scenario scenarios/standard.json` first.")
        return

    labels = {str(r.relative_to(Path(root))): r for r in runs}
    choice = st.selectbox("Run", list(labels))
    try:
        loader = get_loader(labels[choice])
    except (FileNotFoundError, pd.errors.ParserError) as e:
        st.error(f"Could not load {choice}: {e}")
        return

    st.caption(loader.label)
    display_metrics(loader)

    outliers = loader.outliers()
    with st.expander(f"Verdict log: {len(outliers)} flagged exchange(s)", expanded=len(outliers) > 0):
        st.dataframe(outliers, use_container_width=True, hide_index=True)

    display_charts(loader, max_points)


if __name__ == "__main__":
    try:
        main()
    except Exception as e:
        st.error(f"Fatal error: {e}")
        import traceback
        st.code(traceback.format_exc())
