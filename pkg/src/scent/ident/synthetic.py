"""Labelled datasets built from the synthetic traffic generator."""
from __future__ import annotations

import os
import tempfile
from typing import Optional

from ..codec import parse_mac_frame
from ..features import WindowConfig, iter_features, write_feature_csv
from ..pipeline import ScenarioConfig, default_scenario, generate_scenario
from .data import Dataset, load_and_clean


def scenario_label_map(cfg: ScenarioConfig) -> dict[str, str]:
    return {f"0x{d.addr:04x}": d.label or f"0x{d.addr:04x}" for d in cfg.devices}


def synthetic_dataset(duration: float = 3600.0, seed: int = 0, window: float = 5.0,
                      cfg: Optional[ScenarioConfig] = None, csv_dir: Optional[str] = None) -> Dataset:
    """Generate a capture, extract windowed features and label rows by device role.

    Goes through the CSV writer and :func:`load_and_clean`, so the result is
    exactly what ``scent ident`` would see for the same capture.
    """
    cfg = cfg or default_scenario(duration=duration, seed=seed)
    wcfg = WindowConfig(window)
    frames = (parse_mac_frame(f, cfg.with_fcs) for f in generate_scenario(cfg))
    rows = list(iter_features(frames, wcfg))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(csv_dir or tmp, f"synthetic_{seed}.csv")
        write_feature_csv(rows, path, wcfg)
        return load_and_clean([path], scenario_label_map(cfg), window=window)
