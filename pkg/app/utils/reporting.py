"""Result tables on disk: flat CSV files or a single JSON document, plus the run manifest."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from app.utils.errors import InvalidParameterError, ReportIOError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
JSON_REPORT_NAME = "report.json"
FORMATS = ("csv", "json")


@dataclass
class RunResults:
    tables: Dict[str, pd.DataFrame]
    manifest: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return self.manifest.get("config_hash", "")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_manifest(directory: Path, manifest: Dict[str, Any]) -> Path:
    path = Path(directory) / MANIFEST_NAME
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
    except OSError as exc:
        raise ReportIOError(path, exc.strerror or str(exc)) from exc
    return path


def read_manifest(directory: Path) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_NAME
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        return {}
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportIOError(path, str(exc)) from exc


def emit_report(results: RunResults, directory: Union[str, Path], fmt: str = "csv") -> List[Path]:
    """Write every table as ``<name>.csv`` or all of them, with the manifest, into ``report.json``."""
    if fmt not in FORMATS:
        raise InvalidParameterError(f"report format must be one of {FORMATS}, got {fmt!r}")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(directory, exc.strerror or str(exc)) from exc

    written = []
    if fmt == "csv":
        for name, table in sorted(results.tables.items()):
            path = directory / f"{name}.csv"
            try:
                table.to_csv(path, index=False)
            except OSError as exc:
                raise ReportIOError(path, exc.strerror or str(exc)) from exc
            written.append(path)
    else:
        path = directory / JSON_REPORT_NAME
        document = {
            "config_hash": results.config_hash,
            "manifest": results.manifest,
            "tables": {name: json.loads(table.to_json(orient="records"))
                       for name, table in sorted(results.tables.items())},
        }
        try:
            path.write_text(json.dumps(document, indent=2, sort_keys=True, default=_json_default))
        except OSError as exc:
            raise ReportIOError(path, exc.strerror or str(exc)) from exc
        written.append(path)
    logger.info("wrote %d %s report file(s) to %s", len(written), fmt, directory)
    return written


def load_report(directory: Union[str, Path]) -> RunResults:
    """Read back the CSV tables and the manifest of a results directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ReportIOError(directory, "results directory does not exist")
    tables = {}
    for path in sorted(directory.glob("*.csv")):
        try:
            tables[path.stem] = pd.read_csv(path)
        except (OSError, pd.errors.ParserError) as exc:
            raise ReportIOError(path, str(exc)) from exc
        except pd.errors.EmptyDataError:
            tables[path.stem] = pd.DataFrame()
    return RunResults(tables=tables, manifest=read_manifest(directory))
