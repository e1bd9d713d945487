import sys

import numpy as np
import pandas as pd
from IPython.display import display


def in_jupyter():
    return 'ipykernel' in sys.modules


def db_to_linear(value_db):
    """Converts a power in dB to linear scale: ``10 ** (x / 10)``."""
    if np.ndim(value_db):
        return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)
    return 10.0 ** (float(value_db) / 10.0)


def display_diagnostics(df: pd.DataFrame, caption: str, rows: int = 20):
    """
    Displays a styled preview of a results table in Jupyter;
    falls back to print if run in scripts.
    """
    print(f"************* {caption.upper()} *********")
    if in_jupyter():
        _ = display(df.head(rows).style.set_caption(f"{caption}").set_table_styles([
            {"selector": "caption", "props": [("font-size", "16px"), ("font-weight", "bold")]}
        ]))
    else:
        with pd.option_context("display.max_columns", None, "display.width", 160):
            print(df.head(rows).to_string(index=False))
