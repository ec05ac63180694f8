"""Small helpers shared by the demo scripts."""

import argparse
import json
from pathlib import Path

from fracsde.harness import ExperimentConfig

CONFIGS = Path(__file__).resolve().parent / "configs"


def demo_args(description: str) -> argparse.Namespace:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--full", action="store_true", help="use the path counts of the acceptance configs")
    return p.parse_args()


def config(name: str, kind: str, full: bool, quick_paths: int) -> ExperimentConfig:
    data = json.loads((CONFIGS / name).read_text())
    if not full:
        data["paths"] = quick_paths
    return ExperimentConfig.from_dict(data, kind=kind)
