"""Render the harness CSVs as standalone HTML figures.

Usage: python scripts/plot_figures.py [results_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import pandas as pd

PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src.utils.logger import setup_logger  # noqa: E402
from src.visualization.residual_plots import create_learning_curve, create_residual_timeline  # noqa: E402

LOGGER = setup_logger("gridsnoop.plots")


def render(results: Path) -> list[Path]:
    written = []
    for campaign_csv in sorted(results.glob("campaign_seed*.csv")):
        seed = campaign_csv.stem.removeprefix("campaign_seed")
        estimates_csv = results / f"estimates_seed{seed}.csv"
        tau = None
        if estimates_csv.exists():
            tau = float(pd.read_csv(estimates_csv)["tau"].iloc[0])
        fig = create_residual_timeline(pd.read_csv(campaign_csv), tau=tau, title=f"Residuo vs tiempo (semilla {seed})")
        target = campaign_csv.with_suffix(".html")
        fig.write_html(target)
        written.append(target)

    learn_csv = results / "learn.csv"
    if learn_csv.exists():
        target = results / "learn.html"
        create_learning_curve(pd.read_csv(learn_csv)).write_html(target)
        written.append(target)
    return written


def main(argv: list[str]) -> int:
    results = Path(argv[0]) if argv else PROJECT_ROOT / "results"
    if not results.is_dir():
        LOGGER.error("No existe el directorio de resultados: %s", results)
        return 2
    written = render(results)
    if not written:
        LOGGER.warning("No se encontraron CSV de campaña ni learn.csv en %s", results)
    for path in written:
        LOGGER.info("Wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
