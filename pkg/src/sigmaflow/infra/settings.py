from __future__ import annotations

from dataclasses import asdict, dataclass, fields
import json
import os
from pathlib import Path
from typing import Any, Dict

from platformdirs import user_config_dir, user_data_dir


APP_NAME = "SigmaFlow"
THREADS_ENV = "SIGMAFLOW_THREADS"


def _config_path() -> Path:
    base = Path(user_config_dir(APP_NAME))
    base.mkdir(parents=True, exist_ok=True)
    return base / "settings.json"


@dataclass
class AppSettings:
    default_seed: int = 0
    # 0 = one worker per CPU
    threads: int = 0

    margin_tol: float = 1e-9
    flow_tol: float = 1e-5
    flow_t_max: float = 50.0
    newton_tol: float = 1e-10
    toric_newton_tol: float = 1e-9
    convexity_floor: float = 1e-8
    path_steps: int = 65

    # "" = <user data dir>/runs
    output_dir: str = ""

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(user_data_dir(APP_NAME)) / "runs"

    def worker_count(self) -> int:
        """Effective pool size: SIGMAFLOW_THREADS, else ``threads``, else the CPU count."""
        raw = os.environ.get(THREADS_ENV, "").strip()
        if raw:
            try:
                return max(1, int(raw))
            except ValueError:
                pass
        if self.threads > 0:
            return self.threads
        return max(1, os.cpu_count() or 1)


def load_settings() -> AppSettings:
    path = _config_path()
    if not path.exists():
        s = AppSettings()
        save_settings(s)
        return s

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return AppSettings()
    if not isinstance(data, dict):
        return AppSettings()

    defaults = AppSettings()
    values: Dict[str, Any] = {}
    # Unknown keys are ignored so older builds can read newer files; unusable values keep the default.
    for f in fields(AppSettings):
        if f.name in data:
            kind = type(getattr(defaults, f.name))
            try:
                values[f.name] = kind(data[f.name])
            except (TypeError, ValueError):
                continue
    return AppSettings(**values)


def save_settings(settings: AppSettings) -> None:
    path = _config_path()
    payload: Dict[str, Any] = asdict(settings)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")


def settings_path() -> str:
    return str(_config_path())
