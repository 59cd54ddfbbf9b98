"""Windowed per-device features from a PCAP file, and what they look like."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from scent.features import WindowConfig, extract_from_pcap, STAT_COLUMNS
from scent.pcapio import write_pcap, read_pcap_header
from scent.pipeline import default_scenario, generate_scenario

work = Path(tempfile.mkdtemp())
pcap = work / "ten_minutes.pcap"
n = write_pcap(pcap, generate_scenario(default_scenario(duration=600, seed=1)))
print(n, "frames written;", read_pcap_header(pcap))

# %%
cfg = WindowConfig(duration=5.0)
rows = extract_from_pcap(pcap, cfg, work / "features.csv")
print(len(rows), "rows ->", work / "features.csv")
print((work / "features.csv").read_text().splitlines()[0])

# %%
# mean outgoing packet length per device: the payload sizes differ by role
by_dev = {}
for r in rows:
    v = r.stats["mean_pkt_len_out"]
    if v is not None:
        by_dev.setdefault(r.device, []).append(v)
for dev, vals in sorted(by_dev.items()):
    print(dev, f"{np.mean(vals):6.1f} +/- {np.std(vals):4.1f}  ({len(vals)} windows)")

# %%
# only the IAT columns, without direction split
slim = WindowConfig.from_spec(5.0, "iat", direction_split=False)
print(slim.selected_features, len(STAT_COLUMNS), "columns in the full schema")
