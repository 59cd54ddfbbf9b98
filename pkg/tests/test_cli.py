import json
import os
import subprocess
import sys
import tempfile
import time

import pytest

from scent.cli import _combine_range, main
from scent.codec import parse_mac_frame
from scent.features import read_feature_csv
from scent.pcapio import read_pcap


@pytest.fixture(scope="module")
def capture(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "g.pcap"
    assert main(["generate", "--out", str(p), "--duration", "600", "--seed", "2"]) == 0
    return p


def test_combine_range():
    assert _combine_range("1..4") == [1, 2, 3, 4]
    assert _combine_range("1,5,10..11") == [1, 5, 10, 11]


def test_extract_and_capture(capture, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["extract", "--in", str(capture), "--window", "5", "--features", "all", "--out", str(out)]) == 0
    assert len(read_feature_csv(out)) > 100
    filt = tmp_path / "c.pcap"
    assert main(["capture", "--in", str(capture), "--out", str(filt), "--filter", "wpan.src16 == 0x1a05"]) == 0
    frames = list(read_pcap(filt))
    assert frames and all(parse_mac_frame(f).src16 == 0x1A05 for f in frames)


def test_bad_filter_exit_code(capture, tmp_path):
    assert main(["capture", "--in", str(capture), "--out", str(tmp_path / "x.pcap"), "--filter", "wpan.nope"]) == 2


def test_ident_commands(capture, tmp_path):
    csv = tmp_path / "data" / "f.csv"
    csv.parent.mkdir()
    main(["extract", "--in", str(capture), "--out", str(csv)])
    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps({"0x0000": "panc", "0x1a01": "sensor", "0x1a05": "door", "0x1a07": "switch"}))
    model = tmp_path / "m.json"
    common = ["--data", str(csv.parent), "--labels", str(labels), "--trees", "10"]
    assert main(["ident", "train", *common, "--model", str(model)]) == 0
    assert json.loads(model.read_text())["kind"] == "forest"
    report = tmp_path / "r.json"
    assert main(["ident", "eval", *common, "--cv", "3", "--combine", "1..3", "--report", str(report)]) == 0
    reports = json.loads(report.read_text())
    assert [r["n_obs"] for r in reports] == [1, 2, 3]
    assert "unlabelled" in reports[0]["classes"]
    imp = tmp_path / "i.json"
    assert main(["ident", "importance", *common, "--report", str(imp)]) == 0
    doc = json.loads(imp.read_text())
    assert abs(sum(s for _, s in doc["ranked"]) - 1) < 1e-9


def test_daemon_and_task_client(capture, tmp_path):
    sock = os.path.join(tempfile.mkdtemp(prefix="scent", dir="/tmp"), "ctl")
    proc = subprocess.Popen([sys.executable, "-m", "scent.cli", "daemon", "--source", "pcap", "--in", str(capture),
                             "--speed", "max", "--socket", sock])
    try:
        for _ in range(100):
            if os.path.exists(sock):
                break
            time.sleep(0.05)
        out = tmp_path / "live.pcap"

        def task(*args):
            r = subprocess.run([sys.executable, "-m", "scent.cli", "task", "--socket", sock, *args],
                               capture_output=True, text=True, timeout=60)
            return r.returncode, json.loads(r.stdout)

        code, resp = task("start-pcap", "--sink", str(out), "--policy", "stop")
        assert code == 0 and resp["ok"]
        tid = resp["result"]["task"]
        n = len(list(read_pcap(capture)))
        for _ in range(200):
            _, st = task("status", tid)
            if st["result"]["frames_processed"] == n:
                break
            time.sleep(0.05)
        code, st = task("stop", tid)
        assert code == 0 and st["result"]["frames_processed"] == n
        assert len(list(read_pcap(out))) == n
        code, resp = task("remove", "pcap-99")
        assert code == 1 and resp["error"]["type"] == "UnknownTask"
    finally:
        proc.terminate()
        proc.wait(10)
    assert proc.returncode == 0
