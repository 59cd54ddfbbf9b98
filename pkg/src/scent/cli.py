"""Command line entry point: ``scent <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from .features import WindowConfig, extract_from_pcap
from .filters import FilterError, compile_filter, parse_filter
from .pcapio import PcapError, PcapReader, PcapWriter, write_pcap
from .pipeline import (
    DEFAULT_QUEUE_CAPACITY,
    PcapReplaySource,
    RawStreamSource,
    SyntheticSource,
    default_scenario,
    dissect,
    generate_scenario,
    parse_speed,
)

log = logging.getLogger("scent")


def _combine_range(text: str) -> list[int]:
    """``"1..20"`` -> [1..20]; ``"1,5,10"`` -> [1, 5, 10]."""
    out: list[int] = []
    for part in text.split(","):
        if ".." in part:
            a, b = part.split("..", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad observation range {text!r}")
    return out


def _make_source(args):
    speed = parse_speed(args.speed)
    if args.source == "pcap":
        if not args.input:
            raise SystemExit("--in is required for a pcap source")
        return PcapReplaySource(args.input, speed)
    if args.source == "rawstream":
        stream = sys.stdin.buffer if args.input in (None, "-") else args.input
        return RawStreamSource(stream, fcs_present=not args.no_fcs, speed=speed)
    cfg = default_scenario(duration=args.duration, seed=args.seed)
    return SyntheticSource(cfg, speed)


# -- offline commands ---------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = WindowConfig.from_spec(args.window, args.features, not args.no_direction_split)
    rows = extract_from_pcap(args.input, cfg, args.out)
    log.info("wrote %d rows to %s", len(rows), args.out)
    return 0


def cmd_capture(args) -> int:
    pred = compile_filter(parse_filter(args.filter)) if args.filter else None
    if args.input:
        reader = PcapReader(args.input)
        frames, fcs = reader, reader.header.fcs_present
    else:
        cfg = default_scenario(duration=args.duration, seed=args.seed)
        frames, fcs = generate_scenario(cfg), cfg.with_fcs
    n = 0
    with PcapWriter(args.out, with_fcs=fcs) as w:
        for raw in frames:
            pkt = dissect(raw, fcs)
            if pred is not None and (pkt.mac is None or not pred(pkt.mac, pkt.nwk, len(raw.data))):
                continue
            w.write(raw)
            n += 1
    log.info("wrote %d frames to %s", n, args.out)
    return 0


def cmd_generate(args) -> int:
    cfg = default_scenario(duration=args.duration, seed=args.seed, with_fcs=not args.no_fcs)
    n = write_pcap(args.out, generate_scenario(cfg), with_fcs=cfg.with_fcs)
    log.info("wrote %d frames (%.0f s, seed %d) to %s", n, args.duration, args.seed, args.out)
    return 0


# -- daemon and control client ------------------------------------------------

def cmd_daemon(args) -> int:
    from .service import ControlServer, TaskManager

    manager = TaskManager(_make_source(args), queue_capacity=args.queue_capacity,
                          autostart=args.start == "first-task")
    server = ControlServer(args.socket, manager)
    if args.start == "now":
        manager.start()
    done = threading.Event()

    def _quit(*_):
        done.set()

    signal.signal(signal.SIGTERM, _quit)
    signal.signal(signal.SIGINT, _quit)
    t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.1}, daemon=True)
    t.start()
    log.info("listening on %s", args.socket)
    done.wait()
    server.shutdown()
    manager.shutdown()
    server.server_close()
    return 0


def cmd_task(args) -> int:
    from .service import ControlClient

    with ControlClient(args.socket) as c:
        if args.action == "start-features":
            resp = c.request("start_features", sink=args.sink, window=args.window, features=args.features,
                             filter=args.filter, policy=args.policy, queue_capacity=args.queue_capacity)
        elif args.action == "start-pcap":
            resp = c.request("start_pcap", sink=args.sink, filter=args.filter, policy=args.policy,
                             queue_capacity=args.queue_capacity)
        else:
            resp = c.request(args.action, task=args.task)
    print(json.dumps(resp, indent=2))
    return 0 if resp.get("ok") else 1


# -- device identification ----------------------------------------------------

def _load_dataset(args):
    from .ident import load_and_clean, load_label_map

    labels = load_label_map(args.labels) if args.labels else {}
    features = args.select.split(",") if getattr(args, "select", None) else None
    return load_and_clean(args.data, labels, features=features, window=args.window,
                          drop_truncated=args.drop_truncated)


def _spec(args):
    from .ident import ModelSpec

    if args.kind == "knn":
        return ModelSpec("knn", {"k": args.k})
    params = {"min_leaf": args.min_leaf}
    if args.max_depth is not None:
        params["max_depth"] = args.max_depth
    if args.kind == "forest":
        params["n_trees"] = args.trees
    return ModelSpec(args.kind, params)


def cmd_ident(args) -> int:
    from .ident import feature_importance, kfold_cv, pretty_feature_name, save_model, train_forest

    ds = _load_dataset(args)
    log.info("%d rows, %d classes, %d features", len(ds), ds.n_classes, len(ds.feature_names))
    if args.action == "train":
        model = _spec(args).fit(ds.X, ds.y, ds.n_classes, seed=args.seed)
        save_model(args.model, model, ds.classes, ds.feature_names)
        log.info("saved %s model to %s", args.kind, args.model)
    elif args.action == "eval":
        res = kfold_cv(ds, _spec(args), k=args.cv, seed=args.seed)
        reports = [res.report(n) for n in args.combine]
        print(reports[0].table())
        for r in reports:
            print(f"n={r.n_obs:3d}  macro-F1 {r.macro_f1:.3f}  accuracy {r.accuracy:.3f}")
        if args.report:
            doc = reports[0].to_dict() if len(reports) == 1 else [r.to_dict() for r in reports]
            Path(args.report).write_text(json.dumps(doc, indent=1))
    else:
        forest = train_forest(ds.X, ds.y, ds.n_classes, n_trees=args.trees, min_leaf=args.min_leaf, seed=args.seed)
        ranked, selected = feature_importance(forest, args.threshold, ds.feature_names)
        for name, score in ranked:
            mark = "*" if name in selected else " "
            print(f"{mark} {score:.3f}  {pretty_feature_name(name)}  ({name})")
        if args.report:
            Path(args.report).write_text(json.dumps({"ranked": ranked, "selected": selected}, indent=1))
    return 0


# -- argument parsing ---------------------------------------------------------

def _add_source_args(p) -> None:
    p.add_argument("--source", choices=("pcap", "synthetic", "rawstream"), default="synthetic")
    p.add_argument("--in", dest="input", help="pcap file, or rawstream file ('-' for stdin)")
    p.add_argument("--speed", default="1", help="replay speed factor, or 'max'")
    p.add_argument("--duration", type=float, default=300.0, help="synthetic scenario length (s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-fcs", action="store_true", help="rawstream PSDUs carry no FCS")


def _add_model_args(p) -> None:
    p.add_argument("--data", nargs="+", required=True, help="feature CSV files or directories")
    p.add_argument("--labels", help="JSON map of device address -> class")
    p.add_argument("--window", type=float, default=5.0, help="window length used for IAT imputation")
    p.add_argument("--select", help="comma separated feature columns to use (default: all present)")
    p.add_argument("--drop-truncated", action="store_true")
    p.add_argument("--kind", choices=("forest", "tree", "knn"), default="forest")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--max-depth", type=int)
    p.add_argument("-k", type=int, default=5, help="neighbours for knn")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scent", description="802.15.4 / Zigbee capture and analysis")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="windowed features from a pcap, offline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=5.0)
    p.add_argument("--features", default="all")
    p.add_argument("--no-direction-split", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("capture", help="filter frames from a pcap or a synthetic scenario into a pcap")
    p.add_argument("--in", dest="input", help="input pcap (default: synthetic scenario)")
    p.add_argument("--out", required=True)
    p.add_argument("--filter")
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("generate", help="write a synthetic scenario to a pcap")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-fcs", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("daemon", help="run the task service on a control socket")
    _add_source_args(p)
    p.add_argument("--socket", required=True)
    p.add_argument("--queue-capacity", type=int, default=DEFAULT_QUEUE_CAPACITY)
    p.add_argument("--start", choices=("first-task", "now"), default="first-task",
                   help="when to begin pumping the source")
    p.set_defaults(func=cmd_daemon)

    p = sub.add_parser("task", help="talk to a running daemon")
    p.add_argument("--socket", required=True)
    tsub = p.add_subparsers(dest="action", required=True)
    for name in ("start-features", "start-pcap"):
        q = tsub.add_parser(name)
        q.add_argument("--sink", required=True)
        q.add_argument("--filter")
        q.add_argument("--policy", choices=("drop", "stop"), default="drop")
        q.add_argument("--queue-capacity", type=int)
        if name == "start-features":
            q.add_argument("--window", type=float, default=5.0)
            q.add_argument("--features", default="all")
    for name in ("stop", "remove"):
        tsub.add_parser(name).add_argument("task")
    tsub.add_parser("status").add_argument("task", nargs="?")
    p.set_defaults(func=cmd_task)

    p = sub.add_parser("ident", help="device identification")
    isub = p.add_subparsers(dest="action", required=True)
    q = isub.add_parser("train")
    _add_model_args(q)
    q.add_argument("--model", required=True)
    q = isub.add_parser("eval")
    _add_model_args(q)
    q.add_argument("--cv", type=int, default=10)
    q.add_argument("--combine", type=_combine_range, default=[1], help="e.g. 1..20")
    q.add_argument("--report")
    q = isub.add_parser("importance")
    _add_model_args(q)
    q.add_argument("--threshold", type=float, default=0.06)
    q.add_argument("--report")
    p.set_defaults(func=cmd_ident)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FilterError, PcapError, OSError, ValueError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
