import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bridge.model import TinyCausalLM

XAMPLER = shutil.which("xampler")
BRIDGE = shutil.which("bridge")


@pytest.fixture(scope="session")
def model() -> TinyCausalLM:
    return TinyCausalLM()


def write_dataset(path: Path, rows: list[dict], header: dict | None = None) -> Path:
    lines = []
    if header is not None:
        lines.append(json.dumps(header))
    lines.extend(json.dumps(r) for r in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def tiny_dataset(tmp_path: Path) -> Path:
    rows = [
        {"id": "p0", "text": "goal scored in stoppage time", "label": "sports", "language": "eng_Latn"},
        {"id": "p1", "text": "parliament votes on the budget", "label": "politics", "language": "eng_Latn"},
        {"id": "p2", "text": "vaccine trial shows promise", "label": "health", "language": "eng_Latn"},
    ]
    header = {"label_set": ["sports", "politics", "health"], "name": "eng_Latn"}
    return write_dataset(tmp_path / "tiny.jsonl", rows, header)


@pytest.fixture(scope="session")
def world(tmp_path_factory) -> Path:
    """Synthetic pipeline artifacts produced through the pipeline CLI."""
    if XAMPLER is None:
        pytest.skip("xampler CLI not installed")
    workdir = tmp_path_factory.mktemp("world")
    proc = subprocess.run(
        [XAMPLER, "selftest", "--seed", "3", "--workdir", str(workdir)],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    return workdir
