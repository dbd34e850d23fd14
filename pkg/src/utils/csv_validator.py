"""
Utilidad para validación de CSV exportados por el simulador
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional

import pandas as pd

STREAM_COLUMNS = ["t", "meter_id", "kind", "value", "sigma"]


def validate_csv(
    df: pd.DataFrame,
    required_columns: Optional[List[str]] = None,
    numeric_columns: Optional[List[str]] = None,
    ranges: Optional[Dict[str, tuple]] = None,
) -> Dict[str, Any]:
    """
    Valida un DataFrame según columnas requeridas, columnas numéricas y rangos.
    Retorna dict con errores y advertencias.
    """
    report: Dict[str, List[str]] = {"errors": [], "warnings": []}
    required_columns = required_columns or []
    numeric_columns = numeric_columns or []
    ranges = ranges or {}

    for col in required_columns:
        if col not in df.columns:
            report["errors"].append(f"Falta columna requerida: {col}")

    for col in numeric_columns:
        if col in df.columns and not pd.api.types.is_numeric_dtype(df[col].dtype):
            report["errors"].append(f"Columna {col} debe ser numérica, encontrado {df[col].dtype}")

    # Rango abierto/cerrado: (min, max, inclusive_min)
    for col, bounds in ranges.items():
        if col not in df.columns or not pd.api.types.is_numeric_dtype(df[col].dtype):
            continue
        minv, maxv = bounds[0], bounds[1]
        inclusive_min = bounds[2] if len(bounds) > 2 else True
        vals = df[col].dropna()
        if vals.empty:
            continue
        below = (vals < minv) if inclusive_min else (vals <= minv)
        if below.any():
            report["errors"].append(f"Columna {col} tiene valores fuera de rango (< {minv})")
        if (vals > maxv).any():
            report["errors"].append(f"Columna {col} tiene valores > {maxv}")

    for col in df.columns:
        n_nan = int(df[col].isna().sum())
        if n_nan > 0:
            report["warnings"].append(f"Columna {col} tiene {n_nan} valores NaN")

    return report


def validate_stream_frame(df: pd.DataFrame) -> Dict[str, Any]:
    """Valida un CSV de mediciones ``t,meter_id,kind,value,sigma``."""

    return validate_csv(
        df,
        required_columns=STREAM_COLUMNS,
        numeric_columns=["t", "value", "sigma"],
        ranges={"t": (0.0, float("inf")), "sigma": (0.0, float("inf"), False)},
    )
