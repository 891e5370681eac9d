"""``vignette`` command line.

Every command builds one report dict and prints it either as key=value
lines (lists of rows become one line per row) or, with ``--json``, as a
JSON document with the same keys.  Exit codes: 0 success, 1 domain error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from vignette import __version__
from vignette import cost as costmod
from vignette import metadata as md
from vignette import metrics
from vignette.config import load_config
from vignette.errors import InputError, VignetteError
from vignette.saliency import SaliencyMap
from vignette.storage import Library, Policy, apply_policies


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6g}" if abs(v) >= 1e6 or (v and abs(v) < 1e-3) else f"{v:.4f}".rstrip("0").rstrip(".")
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def render_text(report: dict) -> str:
    lines = []
    for key, value in report.items():
        if isinstance(value, list) and value and all(isinstance(r, dict) for r in value):
            for row in value:
                lines.append(" ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
        else:
            lines.append(f"{key}={_fmt(value)}")
    return "\n".join(lines)


def emit(report: dict, as_json: bool, out=None) -> None:
    out = out or sys.stdout
    if as_json:
        out.write(json.dumps(report, indent=2, sort_keys=False) + "\n")
    else:
        out.write(render_text(report) + "\n")


def _library(args) -> Library:
    cfg = load_config(args.library, workers=args.workers, backend=args.backend)
    return Library(args.library, cfg)


def _segment_rows(rec) -> list[dict]:
    rows = []
    for s in rec.segments:
        rows.append({
            "segment": s.index,
            "duration_s": s.duration_s,
            "target_kbps": s.target_kbps,
            "grid": s.grid.label if s.grid else None,
            "weights": s.weights,
            "size_bytes": s.size_bytes,
        })
    return rows


def _video_report(rec) -> dict:
    return {
        "video": rec.id,
        "state": rec.state,
        "segments": len(rec.segments),
        "size_bytes": rec.size_bytes,
        "popularity": rec.popularity,
        "segment_rows": _segment_rows(rec),
    }


def cmd_ingest(args):
    lib = _library(args)
    rec = lib.ingest(args.path, args.segment_len, args.id, args.bitrate_kbps, args.popularity)
    report = _video_report(rec)
    report["duration_s"] = rec.duration_s
    report["source_kbps"] = rec.source_kbps
    return report


def cmd_transcode(args):
    return _video_report(_library(args).transcode(args.video, args.target_kbps, args.crf))


def cmd_vtranscode(args):
    return _video_report(_library(args).vignette_transcode(args.video, args.target_kbps, args.mode, args.saliency))


def cmd_squeeze(args):
    return _video_report(_library(args).vignette_squeeze(args.video, args.target_kbps))


def cmd_update(args):
    return _video_report(_library(args).vignette_update(args.video, args.fixation, args.alpha))


def cmd_popularity(args):
    return _video_report(_library(args).set_popularity(args.video, args.count))


def cmd_list(args):
    lib = _library(args)
    rows = [{"video": v.id, "state": v.state, "segments": len(v.segments), "size_bytes": v.size_bytes,
             "popularity": v.popularity} for v in lib.videos()]
    return {"videos": len(rows), "video_rows": rows}


def _metadata_report(meta, path) -> dict:
    if meta is None:
        return {"file": str(path), "saliency": "absent"}
    return {"file": str(path), "saliency": "present", "version": meta.version, "rows": meta.rows,
            "cols": meta.cols, "weights": list(meta.weights), "bytes": meta.encoded_size}


def cmd_inspect(args):
    p = Path(args.target)
    if p.is_file():
        return _metadata_report(md.read_metadata(p), p)
    lib = _library(args)
    rec = lib.get(args.target)
    rows = []
    for s in rec.segments:
        meta = lib.segment_metadata(rec.id, s.index)
        row = {"segment": s.index, "saliency": "absent" if meta is None else "present"}
        if meta is not None:
            row.update(rows_cols=f"{meta.rows}x{meta.cols}", weights=list(meta.weights))
        rows.append(row)
    return {"video": rec.id, "state": rec.state, "segment_rows": rows}


def cmd_search(args):
    lib = _library(args)
    results = lib.search(args.video, args.mode, args.saliency, args.target_kbps)
    rows = []
    chosen = []
    for i, res in enumerate(results):
        chosen.append(res.chosen.label)
        for r in res.per_config:
            row = {"segment": i}
            row.update(r.as_dict())
            row["chosen"] = r.grid == res.chosen
            rows.append(row)
    return {"video": args.video, "mode": args.mode, "encoder_invocations": lib.encoder.invocations,
            "chosen": chosen, "candidate_rows": rows}


def cmd_metrics(args):
    ref = metrics.load_frames(args.ref)
    out = metrics.load_frames(args.out)
    if len(ref) != len(out):
        raise InputError(f"{len(ref)} reference frames vs {len(out)} processed frames")
    pairs = list(zip(ref, out))
    report = {"frames": len(pairs), "psnr_db": metrics.psnr(pairs)}
    if args.saliency:
        report["ewpsnr_db"] = metrics.ewpsnr(pairs, SaliencyMap.load(args.saliency))
    return report


def _parse_kv(items, what):
    out = {}
    for item in items or []:
        for part in item.split(","):
            if "=" not in part:
                raise InputError(f"{what} expects key=value, got {part!r}")
            k, v = part.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def cmd_cost(args):
    p = costmod.CostParams().override(**_parse_kv(args.param, "--param"))
    p = p.with_pricing(args.pricing)
    report = dict(costmod.as_table(p))
    report["pricing"] = args.pricing
    report["breakeven_views"] = costmod.breakeven_views(p)
    if args.sweep:
        Path(args.sweep).write_text(costmod.sweep_csv(p, costmod.geometric_views()))
        report["sweep_csv"] = args.sweep
    return report


def _coerce_policy(d):
    d = dict(d)
    if "threshold" in d:
        d["threshold"] = float(d["threshold"])
    if d.get("squeeze_target_kbps") is not None:
        d["squeeze_target_kbps"] = int(d["squeeze_target_kbps"])
    return Policy.from_dict(d)


def cmd_policy(args):
    lib = _library(args)
    policies = [_coerce_policy(_parse_kv([p], "--policy")) for p in args.policy or []]
    policies = policies or lib.config.policies
    actions = apply_policies(lib.load_manifest(), policies)
    rows = []
    for a in actions:
        row = {"video": a.video_id, "action": a.action, "target_kbps": a.target_kbps, "reason": a.reason}
        if args.execute:
            rec = lib.execute(a)
            row["size_bytes"] = rec.size_bytes
        rows.append(row)
    return {"policies": len(policies), "actions": len(actions), "executed": bool(args.execute),
            "action_rows": rows}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vignette", description="Saliency-tiled video compression and storage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--library", default=os.environ.get("VIGNETTE_LIBRARY", "."),
                        help="library root (default: current directory)")
    common.add_argument("--json", action="store_true", help="emit JSON instead of key=value lines")
    common.add_argument("--workers", type=int, default=None, help="parallel encoder jobs (default: CPU count)")
    common.add_argument("--backend", choices=("mock", "external"), default=None,
                        help="override the encoder backend from vignette.toml")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="register a video and segment it")
    p.add_argument("path")
    p.add_argument("--id")
    p.add_argument("--segment-len", type=float, default=None)
    p.add_argument("--bitrate-kbps", type=float, default=None, help="source bitrate if the source cannot tell")
    p.add_argument("--popularity", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("transcode", parents=[common], help="conventional single-quality transcode")
    p.add_argument("video")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--target-kbps", type=int)
    g.add_argument("--crf", type=int)
    p.set_defaults(func=cmd_transcode)

    p = sub.add_parser("vtranscode", parents=[common], help="saliency-tiled transcode")
    p.add_argument("video")
    p.add_argument("--target-kbps", type=int, default=None)
    p.add_argument("--mode", choices=("heuristic", "exhaustive"), default="heuristic")
    p.add_argument("--saliency", default=None, help="'builtin' or a directory of per-frame PGM maps")
    p.set_defaults(func=cmd_vtranscode)

    p = sub.add_parser("squeeze", parents=[common], help="re-encode at a lower target with stored weights")
    p.add_argument("video")
    p.add_argument("--target-kbps", type=int, required=True)
    p.set_defaults(func=cmd_squeeze)

    p = sub.add_parser("update", parents=[common], help="blend a fixation map and re-encode")
    p.add_argument("video")
    p.add_argument("--fixation", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("inspect", parents=[common], help="decode saliency metadata from a file or video id")
    p.add_argument("target")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("search", parents=[common], help="report the tile-configuration search")
    p.add_argument("video")
    p.add_argument("--mode", choices=("heuristic", "exhaustive"), default="heuristic")
    p.add_argument("--saliency", default=None)
    p.add_argument("--target-kbps", type=int, default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("metrics", parents=[common], help="PSNR / EWPSNR between PGM frame sets")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--saliency", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("popularity", parents=[common], help="set a video's popularity counter")
    p.add_argument("video")
    p.add_argument("count", type=int)
    p.set_defaults(func=cmd_popularity)

    p = sub.add_parser("list", parents=[common], help="list library videos")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("cost", help="data-center cost model")
    csub = p.add_subparsers(dest="cost_command", required=True, metavar="SUBCOMMAND")
    b = csub.add_parser("breakeven", parents=[common], help="views needed to amortize perceptual compute")
    b.add_argument("--param", action="append", metavar="KEY=VALUE")
    b.add_argument("--pricing", choices=("on-demand", "reserved", "spot"), default="on-demand")
    b.add_argument("--sweep", metavar="CSV", help="also write a cost-vs-views sweep")
    b.set_defaults(func=cmd_cost)

    p = sub.add_parser("policy", help="storage policies")
    psub = p.add_subparsers(dest="policy_command", required=True, metavar="SUBCOMMAND")
    a = psub.add_parser("apply", parents=[common], help="plan (and optionally run) policy actions")
    a.add_argument("--policy", action="append",
                   metavar="kind=K,threshold=T,action=A[,squeeze_target_kbps=N]")
    a.add_argument("--execute", action="store_true")
    a.set_defaults(func=cmd_policy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        report = args.func(args)
    except (VignetteError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"vignette: error: {msg}", file=sys.stderr)
        return 1
    emit(report, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
