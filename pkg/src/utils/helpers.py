import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from pydantic import BaseModel

from src.utils.config import VERSION

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "experiment", "config_digest", "level", "param", "param_kind", "samples",
    "p", "error", "stderr", "slope", "slope_stderr", "pass",
]
# keys that change where and how fast a run happens but not what it computes
DIGEST_EXCLUDED = ("output_dir", "plot", "threads")


class RunManifest(BaseModel):
    experiment: str
    config: Dict[str, Any]
    config_digest: str
    version: str = VERSION
    started_at: str
    wall_time_seconds: float
    errors: List[str] = []
    passed: Optional[bool] = None
    summary: Dict[str, Any] = {}
    artifacts: List[str] = []


def config_digest(settings: Mapping[str, Any]) -> str:
    """sha256 of the canonical JSON form of the settings that determine the results"""
    canonical = {k: v for k, v in settings.items() if k not in DIGEST_EXCLUDED}
    text = json.dumps(canonical, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_number(value: Any) -> str:
    """17 significant digits for floats, so CSV values round-trip exactly"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if np.isnan(value):
        return "nan"
    return "%.17g" % value


def results_frame(rows: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    """Rows as a string frame in the fixed column order; missing fields stay empty"""
    formatted = [{col: format_number(row.get(col)) if col not in ("experiment", "config_digest", "level", "param_kind")
                  else str(row.get(col, "")) for col in CSV_COLUMNS} for row in rows]
    return pd.DataFrame(formatted, columns=CSV_COLUMNS)


def write_results_csv(rows: Sequence[Mapping[str, Any]], path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    results_frame(rows).to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def write_manifest(manifest: RunManifest, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.model_dump_json(indent=2))
        fh.write("\n")
    logger.info(f"Wrote manifest to {path}")
    return path


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_loglog_plot(params: Sequence[float], values: Sequence[float], slope: float, intercept: float,
                      path: str, title: str, param_kind: str, stderrs: Optional[Sequence[float]] = None) -> str:
    """
    Static SVG of the measured points and the fitted power law

    Args:
        params: refinement parameters (h, k or lag)
        values: measured errors or operator norms
        slope, intercept: fitted log-log line
        path: SVG destination
        title: figure title
        param_kind: x-axis label
        stderrs: optional error bars

    Returns:
        str: the written path
    """
    x = np.asarray(params, dtype=float)
    y = np.asarray(values, dtype=float)
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=x, y=y, mode="markers", name="measured",
        error_y=dict(type="data", array=list(stderrs), visible=True) if stderrs is not None else None,
    ))
    if np.isfinite(slope) and np.isfinite(intercept):
        line_x = np.geomspace(x.min(), x.max(), 50)
        fig.add_trace(go.Scatter(x=line_x, y=np.exp(intercept) * line_x ** slope, mode="lines",
                                 name=f"fit, slope {slope:.3f}"))
    fig.update_xaxes(type="log", title_text=param_kind)
    fig.update_yaxes(type="log", title_text="error")
    fig.update_layout(title=title, template="plotly_white", width=720, height=480)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.write_image(path, format="svg")
    logger.info(f"Wrote plot to {path}")
    return path
