"""Loading labelled feature CSVs into a numeric dataset."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..features import STAT_COLUMNS

UNLABELLED = "unlabelled"

# Human-readable names, as used for reporting importance rankings.
_METRIC_NAMES = {"pkt_len": "Packet Length", "payload_len": "Packet Payload Length", "iat": "Inter-arrival Time"}
_DIR_NAMES = {"all": "", "in": "Incoming ", "out": "Outgoing "}


def pretty_feature_name(column: str) -> str:
    """``mean_iat_all`` -> ``Mean Inter-arrival Time``."""
    try:
        stat, rest = column.split("_", 1)
        metric, direction = rest.rsplit("_", 1)
        return f"{'Mean' if stat == 'mean' else 'Std'} {_DIR_NAMES[direction]}{_METRIC_NAMES[metric]}"
    except (ValueError, KeyError):
        return column


class SchemaMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    classes: list[str]
    feature_names: list[str]
    devices: np.ndarray
    windows: np.ndarray  # window start (us), used to order a device's rows in time

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def select(self, names: Sequence[str]) -> "Dataset":
        cols = [self.feature_names.index(n) for n in names]
        return Dataset(self.X[:, cols], self.y, self.classes, list(names), self.devices, self.windows)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.classes, self.feature_names,
                       self.devices[rows], self.windows[rows])

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.y, minlength=self.n_classes)
        return {c: int(n) for c, n in zip(self.classes, counts)}


def load_label_map(path: str | os.PathLike) -> dict[str, str]:
    """JSON object mapping device keys (``"0x1a01"``) to class names."""
    with open(path) as f:
        raw = json.load(f)
    return {_norm_device(k): str(v) for k, v in raw.items()}


def _norm_device(key: str) -> str:
    key = key.strip().lower()
    if key.startswith("0x"):
        try:
            v = int(key, 16)
        except ValueError:
            return key
        width = 4 if len(key) <= 6 else 16
        return f"0x{v:0{width}x}"
    return key


def _csv_files(paths: Iterable[str | os.PathLike]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    return files


def load_and_clean(paths: Sequence[str | os.PathLike] | str | os.PathLike, label_map: Mapping[str, str],
                   column_map: Optional[Mapping[str, str]] = None, features: Optional[Sequence[str]] = None,
                   window: float = 5.0, drop_truncated: bool = False) -> Dataset:
    """Read feature CSVs, clean them and attach labels.

    - rows whose numeric fields do not parse (or are not finite) are dropped;
    - missing IAT means are imputed with the window duration and missing IAT
      deviations with 0 (fewer than two frames: no observable gap);
    - missing packet/payload length stats (no frames in that direction) become 0;
    - devices absent from ``label_map`` get the class ``"unlabelled"``.

    ``column_map`` renames source columns to this package's schema names, for
    datasets produced by other tools.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    column_map = dict(column_map or {})
    labels = {_norm_device(k): v for k, v in label_map.items()}

    X_rows, devs, wins, names_used = [], [], [], None
    for path in _csv_files(paths):
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(line for line in f if not line.startswith("#"))
            try:
                header = next(reader)
            except StopIteration:
                continue
            header = [column_map.get(h.strip(), h.strip()) for h in header]
            if "device" not in header:
                raise SchemaMismatch(f"{path}: no 'device' column")
            wanted = list(features) if features is not None else [c for c in STAT_COLUMNS if c in header]
            missing = [c for c in wanted if c not in header]
            if missing or not wanted:
                raise SchemaMismatch(f"{path}: missing feature columns {missing or 'all'}")
            if names_used is None:
                names_used = wanted
            elif wanted != names_used:
                raise SchemaMismatch(f"{path}: feature columns differ from earlier files")
            pos = {h: i for i, h in enumerate(header)}
            fidx = [pos[c] for c in wanted]
            is_iat = ["_iat_" in c for c in wanted]
            is_std = [c.startswith("std_") for c in wanted]
            for rec in reader:
                if len(rec) != len(header):
                    continue
                if drop_truncated and "truncated" in pos and rec[pos["truncated"]] == "1":
                    continue
                dur = window
                try:
                    if "window_start_us" in pos and "window_end_us" in pos:
                        ws = int(rec[pos["window_start_us"]])
                        dur = (int(rec[pos["window_end_us"]]) - ws) / 1e6
                    else:
                        ws = int(float(rec[pos["window_start_us"]])) if "window_start_us" in pos else len(wins)
                    vals = []
                    for i, iat, std in zip(fidx, is_iat, is_std):
                        s = rec[i].strip()
                        if s == "":
                            vals.append((0.0 if std else dur) if iat else 0.0)
                            continue
                        v = float(s)
                        if not math.isfinite(v):
                            raise ValueError(s)
                        vals.append(v)
                except ValueError:
                    continue
                X_rows.append(vals)
                devs.append(_norm_device(rec[pos["device"]]))
                wins.append(ws)

    if not X_rows:
        raise EmptyDataset("no usable rows")
    ylab = [labels.get(d, UNLABELLED) for d in devs]
    classes = sorted(set(ylab) - {UNLABELLED}) + ([UNLABELLED] if UNLABELLED in ylab else [])
    if len(classes) < 2:
        raise EmptyDataset(f"need at least two classes to train, found {classes}")
    cidx = {c: i for i, c in enumerate(classes)}
    return Dataset(
        X=np.array(X_rows, dtype=float),
        y=np.array([cidx[c] for c in ylab], dtype=np.int64),
        classes=classes,
        feature_names=list(names_used),
        devices=np.array(devs),
        windows=np.array(wins, dtype=np.int64),
    )
