"""Figuras de residuos a partir de los CSV del arnés."""

from __future__ import annotations

from typing import Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

_LAYOUT = dict(
    template="plotly_dark",
    paper_bgcolor="rgba(0,0,0,0)",
    plot_bgcolor="rgba(0,0,0,0)",
    margin=dict(t=50, r=80, b=50, l=70),
)


def _require(frame: pd.DataFrame, columns, what: str) -> None:
    missing = [col for col in columns if col not in frame.columns]
    if missing:
        raise ValueError(f"{what} CSV is missing columns: {missing}")


def create_residual_timeline(
    campaign: pd.DataFrame, *, tau: Optional[float] = None, title: Optional[str] = None
) -> go.Figure:
    """Operator residual and attacker pseudo-residual against simulated time.

    Launched attacks are marked; ``tau`` draws the operator alarm threshold.
    """

    _require(campaign, ["t", "operator_r", "r_p", "launched"], "Campaign")
    fig = go.Figure()
    fig.add_trace(
        go.Scatter(x=campaign["t"], y=campaign["operator_r"], mode="lines", name="Residuo del operador")
    )
    fig.add_trace(
        go.Scatter(x=campaign["t"], y=campaign["r_p"], mode="markers", name="Pseudo-residuo", marker=dict(size=4))
    )
    launched = campaign[campaign["launched"].astype(bool)]
    if not launched.empty:
        fig.add_trace(
            go.Scatter(
                x=launched["t"],
                y=launched["operator_r"],
                mode="markers",
                name="Ataque lanzado",
                marker=dict(symbol="x", size=7, color="#EF553B"),
            )
        )
    if tau is not None:
        fig.add_hline(y=float(tau), line_dash="dash", annotation_text="τ")
    fig.update_layout(
        title=title or "Residuo vs tiempo",
        xaxis_title="Tiempo (min)",
        yaxis_title="Residuo ponderado",
        **_LAYOUT,
    )
    return fig


def create_learning_curve(learn: pd.DataFrame, *, log_scale: bool = True) -> go.Figure:
    """Median pseudo-residual of the reference attack against training size T."""

    _require(learn, ["T", "r_p", "alarm"], "Learning")
    grouped = learn.groupby("T")
    stats = pd.DataFrame(
        {
            "median": grouped["r_p"].median(),
            "q25": grouped["r_p"].quantile(0.25),
            "q75": grouped["r_p"].quantile(0.75),
        }
    ).reset_index()

    fig = go.Figure()
    fig.add_trace(
        go.Scatter(
            x=stats["T"],
            y=stats["median"],
            mode="lines+markers",
            name="Mediana r_p",
            error_y=dict(
                type="data",
                symmetric=False,
                array=(stats["q75"] - stats["median"]).to_numpy(),
                arrayminus=(stats["median"] - stats["q25"]).to_numpy(),
            ),
        )
    )
    tau = learn["alarm"].dropna()
    if not tau.empty:
        fig.add_hline(y=float(np.median(tau)), line_dash="dash", annotation_text="Alarma del operador")
    fig.update_layout(
        title="Pseudo-residuo vs número de muestras",
        xaxis_title="Muestras de entrenamiento (T)",
        yaxis_title="r_p",
        **_LAYOUT,
    )
    if log_scale:
        fig.update_yaxes(type="log")
    return fig
