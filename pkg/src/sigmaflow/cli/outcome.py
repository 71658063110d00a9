from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List

from sigmaflow.infra.artifacts import write_json


EXIT_OK = 0
EXIT_MATH = 1
EXIT_INPUT = 2

Log = Callable[[str], None]


@dataclass
class CommandOutcome:
    status: int
    summary: Dict[str, Any] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    def add(self, path: Path) -> None:
        self.artifacts.append(str(path))

    def write_summary(self, out_dir: Path, name: str = "summary.json") -> None:
        self.add(write_json(Path(out_dir) / name, {"status": self.status, **self.summary}))
