"""Command line interface: one subcommand per service operation, plus a
standalone parser mode that needs no data directory."""

from __future__ import annotations

import argparse
import json
import sys

from .config import ServiceConfig, load_config
from .models.training import TrainConfig
from .parsing import events_to_csv, events_to_jsonl, parse_batch, read_jsonl_lines
from .service import Service


def _build_config(args) -> ServiceConfig:
    if getattr(args, "config", None):
        config = load_config(args.config)
        if getattr(args, "data_dir", None):
            config = ServiceConfig.from_dict({**config.to_dict(), "data_dir": args.data_dir})
        return config
    return ServiceConfig(data_dir=args.data_dir or "./logward-data")


def _service(args) -> Service:
    return Service(_build_config(args))


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def cmd_parse(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        lines, quarantined = read_jsonl_lines(fh)
    result = parse_batch(
        lines,
        profile=args.profile,
        partitions=args.partitions,
        depth=args.depth,
        similarity_threshold=args.theta,
        max_children=args.max_children,
    )
    quarantined = quarantined + result.quarantined
    out = events_to_csv(result.events) if args.format == "csv" else events_to_jsonl(result.events)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    print(
        f"parsed {len(result.events)} events, {len(result.tree.templates)} templates, "
        f"{len(quarantined)} quarantined",
        file=sys.stderr,
    )
    return 0


def cmd_ingest(args) -> int:
    service = _service(args)
    with open(args.input, "r", encoding="utf-8") as fh:
        batch = service.ingest(fh.read(), source=args.source)
    _emit(batch.to_dict())
    return 0


def _train_config(service: Service, args) -> TrainConfig | None:
    overrides = {
        k: v
        for k, v in (
            ("learning_rate", args.learning_rate),
            ("epochs", args.epochs),
            ("batch_size", args.batch_size),
            ("seed", args.seed),
        )
        if v is not None
    }
    if not overrides:
        return None
    base = service.config.train if args.cmd == "train" else service.config.retrain
    return TrainConfig(**{**base, **overrides})


def cmd_train(args) -> int:
    service = _service(args)
    batch_id = args.batch
    if args.input:
        with open(args.input, "r", encoding="utf-8") as fh:
            batch_id = service.ingest(fh.read(), source="cli").batch_id
        print(f"ingested {args.input} as batch {batch_id}", file=sys.stderr)
    if not batch_id:
        print("error: need --batch or --input", file=sys.stderr)
        return 2
    _emit(service.train_from_batch(batch_id, cfg=_train_config(service, args)))
    return 0


def cmd_infer(args) -> int:
    service = _service(args)
    _emit(service.run_inference(args.batch, args.version))
    return 0


def cmd_alerts(args) -> int:
    service = _service(args)
    _emit(service.list_alerts(args.status, args.since, args.page, args.page_size))
    return 0


def cmd_feedback(args) -> int:
    service = _service(args)
    _emit(service.submit_feedback(args.alert_id, args.verdict, args.analyst))
    return 0


def cmd_retrain(args) -> int:
    service = _service(args)
    _emit(service.trigger_retrain(cfg=_train_config(service, args), lam=args.lam))
    return 0


def cmd_models(args) -> int:
    service = _service(args)
    _emit(service.models())
    return 0


def cmd_evaluate(args) -> int:
    service = _service(args)
    version = args.version or service.storage.active_version()
    if version is None:
        print("error: no trained bundle", file=sys.stderr)
        return 2
    bundle = service.load_bundle(version)
    if args.input:
        from .features import build_feature_bundles

        with open(args.input, "r", encoding="utf-8") as fh:
            lines, _ = read_jsonl_lines(fh)
        result = parse_batch(lines, profile=service.config.profile, base_tree=bundle.tree)
        fbundles = build_feature_bundles(result.events, bundle.encoder, d=bundle.gcn.d)
    else:
        fbundles = service.storage.read_validation_bundles()
    report = service.evaluate_bundle(bundle, fbundles)
    print(report.row())
    _emit({"version": version, "n": len(fbundles), "metrics": report.to_dict()})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.http import create_app

    config = _build_config(args)
    service = Service(config)
    host = args.host or config.host
    port = args.port or config.port
    uvicorn.run(create_app(service), host=host, port=port, log_level="info")
    return 0


def _add_store_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", default=None, help="state directory (default ./logward-data)")
    p.add_argument("--config", default=None, help="JSON config file")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logward", description="log anomaly detection service")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("parse", help="parse a JSON lines file to structured events")
    p.add_argument("--input", required=True, help="raw JSON lines file")
    p.add_argument("--output", default=None, help="write events here instead of stdout")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--profile", default="raw")
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--theta", type=float, default=0.4, help="similarity threshold")
    p.add_argument("--max-children", type=int, default=100)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("ingest", help="store a batch of raw log lines")
    _add_store_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--source", default="cli")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train the initial model bundle from a labeled batch")
    _add_store_args(p)
    p.add_argument("--batch", default=None, help="existing batch id")
    p.add_argument("--input", default=None, help="ingest this file first")
    _add_train_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="run the inference DAG on a batch")
    _add_store_args(p)
    p.add_argument("--batch", required=True)
    p.add_argument("--version", type=int, default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("alerts", help="list alerts")
    _add_store_args(p)
    p.add_argument("--status", default=None, choices=("open", "false_positive", "confirmed"))
    p.add_argument("--since", default=None)
    p.add_argument("--page", type=int, default=1)
    p.add_argument("--page-size", type=int, default=None)
    p.set_defaults(fn=cmd_alerts)

    p = sub.add_parser("feedback", help="submit an analyst verdict for an alert")
    _add_store_args(p)
    p.add_argument("alert_id")
    p.add_argument("--verdict", required=True, choices=("false_positive", "confirmed"))
    p.add_argument("--analyst", required=True)
    p.set_defaults(fn=cmd_feedback)

    p = sub.add_parser("retrain", help="fine-tune on analyst feedback and activate a new version")
    _add_store_args(p)
    p.add_argument("--lam", type=float, default=None, help="consolidation strength")
    _add_train_args(p)
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("models", help="list model versions")
    _add_store_args(p)
    p.set_defaults(fn=cmd_models)

    p = sub.add_parser("evaluate", help="score a bundle on labeled data")
    _add_store_args(p)
    p.add_argument("--input", default=None, help="labeled JSON lines file (default: stored validation set)")
    p.add_argument("--version", type=int, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP API")
    _add_store_args(p)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError) as exc:
        detail = exc.args[0] if exc.args else str(exc)
        print(f"error: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
