"""Service core: wires parsing, features, models, fusion and the
orchestrator into ingest / infer / feedback / retrain operations.

Inference and retraining both run as DAGs. Payload functions are pure
compute against a per-run context dict; the service persists results only
after the DAG reports success, so a failed run leaves no partial state.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np

from ..config import ServiceConfig
from ..continual import (
    FeedbackEntry,
    build_finetune_set,
    estimate_fisher,
    record_feedback,
    retrain_ewc,
)
from ..features import (
    FeatureBundle,
    ForestConfig,
    build_feature_bundles,
    build_weight_dictionary,
    select_columns,
    train_importance,
    EncoderState,
)
from ..fusion import compute_metrics, fused_prediction, relative_scores
from ..models.bundle import Anchor, ModelBundle, load_bundle, save_bundle
from ..models.mlp import Mlp
from ..models.gcn import Gcn
from ..models.training import TrainConfig, train
from ..orchestrator import define_dag, register_task, run_dag
from ..parsing import ParsedEvent, parse_batch, read_jsonl_lines
from ..sinks import SinkError, build_sink
from .storage import AlertRecord, IngestBatch, Storage, utc_now_iso

MIN_LABELED = 10


class ServiceError(RuntimeError):
    pass


class BusyError(ServiceError):
    pass


# Run contexts shared between the service and its registered DAG payloads.
# Keyed by run id; entries live exactly as long as one DAG run.
_RUN_CONTEXTS: dict[str, dict] = {}
_CONTEXT_LOCK = threading.Lock()


def _context(run_id: str) -> dict:
    with _CONTEXT_LOCK:
        return _RUN_CONTEXTS[run_id]


def _put_context(run_id: str, ctx: dict) -> None:
    with _CONTEXT_LOCK:
        _RUN_CONTEXTS[run_id] = ctx


def _pop_context(run_id: str) -> None:
    with _CONTEXT_LOCK:
        _RUN_CONTEXTS.pop(run_id, None)


# -- inference payloads ------------------------------------------------------


def _infer_parse(run_id: str) -> None:
    ctx = _context(run_id)
    service = ctx["service"]
    bundle = ctx["bundle"]
    lines = service.storage.read_raw(ctx["batch_id"])
    result = parse_batch(lines, profile=service.config.profile, base_tree=bundle.tree)
    ctx["events"] = result.events
    ctx["quarantined"] = len(result.quarantined)


def _infer_features(run_id: str) -> None:
    ctx = _context(run_id)
    bundle = ctx["bundle"]
    ctx["fbundles"] = build_feature_bundles(ctx["events"], bundle.encoder, d=bundle.gcn.d)


def _infer_mlp(run_id: str) -> None:
    ctx = _context(run_id)
    x = np.stack([b.x for b in ctx["fbundles"]]) if ctx["fbundles"] else np.zeros((0, 1))
    ctx["mlp_probs"] = ctx["bundle"].mlp.forward(x) if len(x) else np.zeros(0)


def _infer_gcn(run_id: str) -> None:
    ctx = _context(run_id)
    graphs = [b.graph for b in ctx["fbundles"]]
    ctx["gcn_probs"] = ctx["bundle"].gcn.forward_batch(graphs) if graphs else np.zeros(0)


def _infer_fuse(run_id: str) -> None:
    ctx = _context(run_id)
    weights = relative_scores(ctx["bundle"].weights)
    ctx["fused"] = [
        fused_prediction(float(p1), float(p2), weights)
        for p1, p2 in zip(ctx["mlp_probs"], ctx["gcn_probs"])
    ]


# -- retrain payloads ---------------------------------------------------------


def _retrain_build_set(run_id: str) -> None:
    ctx = _context(run_id)
    service = ctx["service"]
    config = service.config
    ctx["finetune"] = build_finetune_set(
        service.storage.feedback,
        since=service.storage.last_activation_at(),
        replay_pool=service.storage.read_training_bundles(),
        replay_ratio=config.replay_ratio,
        seed=ctx["cfg"].seed,
    )


def _retrain_update(run_id: str) -> None:
    ctx = _context(run_id)
    if not ctx["finetune"]:
        return
    if "new_bundle" in ctx:
        return
    ctx["new_bundle"] = retrain_ewc(
        ctx["old_bundle"],
        ctx["finetune"],
        ctx["cfg"],
        lam=ctx["lam"],
        task_tag=f"feedback-{len(ctx['finetune'])}",
    )


def _retrain_validate(run_id: str) -> None:
    ctx = _context(run_id)
    if not ctx["finetune"]:
        return
    service = ctx["service"]
    new_bundle = ctx["new_bundle"]
    val = service.storage.read_validation_bundles()
    ctx["before"] = service.evaluate_bundle(ctx["old_bundle"], val) if val else None
    ctx["after"] = service.evaluate_bundle(new_bundle, val) if val else None
    if not ctx.get("persisted"):
        path = service.storage.bundle_path(new_bundle.version)
        save_bundle(new_bundle, path)
        service.storage.register_model(
            new_bundle.version, path, new_bundle.created_at, dict(new_bundle.meta)
        )
        ctx["persisted"] = True
    if not ctx.get("activated"):
        service.storage.activate_model(new_bundle.version, utc_now_iso())
        ctx["activated"] = True


register_task("infer.parse", _infer_parse)
register_task("infer.features", _infer_features)
register_task("infer.mlp", _infer_mlp)
register_task("infer.gcn", _infer_gcn)
register_task("infer.fuse", _infer_fuse)
register_task("retrain.build_set", _retrain_build_set)
register_task("retrain.update", _retrain_update)
register_task("retrain.validate", _retrain_validate)

_INFER_EDGES = [
    ("parse", "features"),
    ("features", "mlp"),
    ("features", "gcn"),
    ("mlp", "fuse"),
    ("gcn", "fuse"),
]


class Service:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.storage = Storage(config.data_dir)
        self.sink = build_sink(config.sink, config.data_dir)
        self._retrain_lock = threading.Lock()
        self._bundle_cache: dict[int, ModelBundle] = {}

    # -- ingest -------------------------------------------------------------

    def ingest(self, body: str | bytes, source: str = "api") -> IngestBatch:
        if isinstance(body, bytes):
            try:
                body = body.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ValueError(f"body is not valid utf-8: {exc}") from None
        if not body.strip():
            raise ValueError("empty ingest body")
        raw_lines = body.splitlines()
        lines, quarantined = read_jsonl_lines(raw_lines)
        batch_id = "b-" + uuid.uuid4().hex[:12]
        batch = IngestBatch(
            batch_id=batch_id,
            source=source,
            raw_count=len(raw_lines),
            quarantine_count=len(quarantined),
            path=self.storage.raw_path(batch_id),
            created_at=utc_now_iso(),
        )
        self.storage.add_batch(batch, lines, quarantined)
        return batch

    # -- training -------------------------------------------------------------

    def train_from_batch(
        self,
        batch_id: str,
        cfg: TrainConfig | None = None,
        val_fraction: float | None = None,
        seed: int | None = None,
    ) -> dict:
        config = self.config
        cfg = cfg or config.train_config()
        val_fraction = config.val_fraction if val_fraction is None else val_fraction
        seed = cfg.seed if seed is None else seed

        lines = self.storage.read_raw(batch_id)
        result = parse_batch(
            lines,
            profile=config.profile,
            partitions=config.partitions,
            depth=config.depth,
            similarity_threshold=config.similarity_threshold,
            max_children=config.max_children,
        )
        self.storage.append_quarantine(batch_id, result.quarantined)
        self.storage.write_events(batch_id, result.events)

        labeled = [e for e in result.events if e.label is not None]
        if len(labeled) < MIN_LABELED:
            raise ValueError(f"need at least {MIN_LABELED} labeled events, got {len(labeled)}")
        classes = {e.label for e in labeled}
        if classes != {0, 1}:
            raise ValueError(f"training needs both classes, got labels {sorted(classes)}")

        train_events, val_events = _stratified_split(labeled, val_fraction, seed)

        importance = train_importance(train_events, ForestConfig(seed=13))
        weights = build_weight_dictionary(importance, config.tau)
        encoder = EncoderState.fit(train_events, select_columns(importance, config.tau))

        train_bundles = build_feature_bundles(train_events, encoder, d=config.embed_dim)
        val_bundles = build_feature_bundles(val_events, encoder, d=config.embed_dim)
        y_train = np.array([e.label for e in train_events], dtype=np.float64)

        mlp = Mlp(x_dim=encoder.x_dim, seed=cfg.seed)
        train(mlp, np.stack([b.x for b in train_bundles]), y_train, cfg)
        gcn = Gcn(d=config.embed_dim, seed=cfg.seed)
        train(gcn, [b.graph for b in train_bundles], y_train, cfg)

        anchors = {
            "mlp": Anchor(
                theta=mlp.pack(),
                fisher=estimate_fisher(mlp, train_bundles, seed=cfg.seed).values,
                lam=config.lam,
                task_tag="initial",
            ),
            "gcn": Anchor(
                theta=gcn.pack(),
                fisher=estimate_fisher(gcn, train_bundles, seed=cfg.seed).values,
                lam=config.lam,
                task_tag="initial",
            ),
        }
        version = self.storage.next_version()
        bundle = ModelBundle(
            version=version,
            created_at=utc_now_iso(),
            mlp=mlp,
            gcn=gcn,
            encoder=encoder,
            weights=weights,
            anchors=anchors,
            tree=result.tree,
            meta={
                "trained_on": batch_id,
                "train_size": len(train_events),
                "val_size": len(val_events),
            },
        )
        path = self.storage.bundle_path(version)
        save_bundle(bundle, path)
        self.storage.register_model(version, path, bundle.created_at, dict(bundle.meta))
        self.storage.activate_model(version, utc_now_iso())
        self.storage.write_training_sets(train_bundles, val_bundles)
        self._bundle_cache[version] = bundle

        metrics = self.evaluate_bundle(bundle, val_bundles) if val_bundles else None
        return {
            "version": version,
            "batch_id": batch_id,
            "events": len(result.events),
            "train_size": len(train_events),
            "val_size": len(val_events),
            "templates": len(result.tree.templates),
            "weights": weights.to_dict(),
            "fusion": relative_scores(weights).to_dict(),
            "metrics": metrics.to_dict() if metrics else None,
        }

    # -- inference --------------------------------------------------------------

    def run_inference(self, batch_id: str, version: int | None = None) -> dict:
        self.storage.get_batch(batch_id)
        if version is None:
            version = self.storage.active_version()
            if version is None:
                raise ValueError("no trained bundle; train a model first")
        bundle = self.load_bundle(version)

        run_id = "r-" + uuid.uuid4().hex[:12]
        ctx = {"service": self, "batch_id": batch_id, "bundle": bundle}
        _put_context(run_id, ctx)
        try:
            dag = define_dag(
                f"infer-{run_id}",
                tasks=[
                    {"name": name, "payload": f"infer.{name}", "params": {"run_id": run_id}}
                    for name in ("parse", "features", "mlp", "gcn", "fuse")
                ],
                edges=_INFER_EDGES,
            )
            report = run_dag(
                dag,
                n_workers=self.config.workers,
                journal_path=self.storage.run_journal_path(run_id),
            )
            if not report.ok:
                failed = sorted(n for n, s in report.states.items() if s != "success")
                raise ServiceError(f"inference failed at tasks: {failed}")
            events: list[ParsedEvent] = ctx["events"]
            fused = ctx["fused"]
        finally:
            _pop_context(run_id)

        self.storage.write_events(batch_id, events)
        now = utc_now_iso()
        alerts = [
            AlertRecord(
                alert_id="a-" + uuid.uuid4().hex[:12],
                batch_id=batch_id,
                line_id=event.line_id,
                event_id=event.event_id,
                event_template=event.event_template,
                parameter_list=list(event.parameter_list),
                p1=pred.p1,
                p2=pred.p2,
                fused=pred.fused,
                y_hat=pred.y_hat,
                version=version,
                created_at=now,
            )
            for event, pred in zip(events, fused)
            if pred.y_hat == 1
        ]
        if alerts:
            self.storage.add_alerts(alerts)
        sink_errors = 0
        for alert in alerts:
            try:
                self.sink.emit({"type": "alert", **alert.to_dict()})
            except SinkError:
                sink_errors += 1
        return {
            "run_id": run_id,
            "batch_id": batch_id,
            "version": version,
            "events": len(events),
            "quarantined": ctx.get("quarantined", 0),
            "alerts": [a.to_dict() for a in alerts],
            "anomaly_count": len(alerts),
            "sink_errors": sink_errors,
        }

    # -- alerts and feedback -------------------------------------------------

    def list_alerts(
        self,
        status: str | None = None,
        since: str | None = None,
        page: int = 1,
        page_size: int | None = None,
    ) -> dict:
        page_size = page_size or self.config.page_size
        rows, total = self.storage.list_alerts(status, since, page, page_size)
        return {
            "alerts": [a.to_dict() for a in rows],
            "total": total,
            "page": page,
            "page_size": page_size,
        }

    def get_alert(self, alert_id: str) -> dict:
        alert = self.storage.get_alert(alert_id)
        bundle = self.load_bundle(alert.version)
        return {
            "alert": alert.to_dict(),
            "fusion": relative_scores(bundle.weights).to_dict(),
        }

    def submit_feedback(self, alert_id: str, verdict: str, analyst: str) -> dict:
        if not analyst or not analyst.strip():
            raise ValueError("analyst must be non-empty")
        alert = self.storage.get_alert(alert_id)
        now = utc_now_iso()
        recorded = False
        if verdict == "false_positive":
            # build the corrected record first so a bad rebuild leaves the
            # alert open instead of closed-but-unrecorded
            bundle = self.load_bundle(self.storage.active_version())
            event = self._find_event(alert)
            fbundle = build_feature_bundles([event], bundle.encoder, d=bundle.gcn.d)[0]
            fbundle.label = 0
            entry = FeedbackEntry(
                alert_id=alert_id,
                verdict="false_positive",
                analyst=analyst,
                timestamp=now,
                bundle=fbundle,
            )
            self.storage.set_verdict(alert_id, verdict, analyst, now)
            record_feedback(self.storage.feedback, entry, self.storage.alerts.keys())
            recorded = True
        elif verdict == "confirmed":
            self.storage.set_verdict(alert_id, verdict, analyst, now)
        else:
            raise ValueError(f"verdict must be false_positive or confirmed, got {verdict!r}")
        try:
            self.sink.emit(
                {"type": "verdict", "alert_id": alert_id, "verdict": verdict, "analyst": analyst, "at": now}
            )
        except SinkError:
            pass
        return {"alert_id": alert_id, "status": verdict, "feedback_recorded": recorded}

    def _find_event(self, alert: AlertRecord) -> ParsedEvent:
        for event in self.storage.read_events(alert.batch_id):
            if event.line_id == alert.line_id:
                return event
        raise KeyError(f"no stored event for alert {alert.alert_id} (line {alert.line_id})")

    def pending_feedback_count(self) -> int:
        cutoff = self.storage.last_activation_at()
        count = 0
        for entry in self.storage.feedback.latest().values():
            if cutoff is None or entry.timestamp > cutoff:
                count += 1
        return count

    # -- retraining --------------------------------------------------------------

    def trigger_retrain(self, cfg: TrainConfig | None = None, lam: float | None = None) -> dict:
        if not self._retrain_lock.acquire(blocking=False):
            raise BusyError("retrain already in progress")
        try:
            active = self.storage.active_version()
            if active is None:
                raise ValueError("no trained bundle; train a model first")
            old_bundle = self.load_bundle(active)
            cfg = cfg or self.config.retrain_config()

            run_id = "t-" + uuid.uuid4().hex[:12]
            ctx = {
                "service": self,
                "old_bundle": old_bundle,
                "cfg": cfg,
                "lam": lam if lam is not None else self.config.lam,
            }
            _put_context(run_id, ctx)
            try:
                dag = define_dag(
                    f"retrain-{run_id}",
                    tasks=[
                        {"name": name, "payload": f"retrain.{name}", "params": {"run_id": run_id}}
                        for name in ("build_set", "update", "validate")
                    ],
                    edges=[("build_set", "update"), ("update", "validate")],
                )
                report = run_dag(
                    dag,
                    n_workers=1,
                    journal_path=self.storage.run_journal_path(run_id),
                )
                if not report.ok:
                    failed = sorted(n for n, s in report.states.items() if s != "success")
                    raise ServiceError(f"retrain failed at tasks: {failed}")
                finetune = ctx["finetune"]
                if not finetune:
                    return {
                        "run_id": run_id,
                        "status": "skipped",
                        "reason": "no feedback",
                        "version": active,
                    }
                new_bundle = ctx["new_bundle"]
                self._bundle_cache[new_bundle.version] = new_bundle
                before = ctx["before"]
                after = ctx["after"]
                return {
                    "run_id": run_id,
                    "status": "ok",
                    "old_version": active,
                    "new_version": new_bundle.version,
                    "finetune_size": len(finetune),
                    "lam": ctx["lam"],
                    "before": before.to_dict() if before else None,
                    "after": after.to_dict() if after else None,
                }
            finally:
                _pop_context(run_id)
        finally:
            self._retrain_lock.release()

    # -- models and introspection ----------------------------------------------

    def models(self) -> dict:
        return {"models": self.storage.model_rows(), "active": self.storage.active_version()}

    def health(self) -> dict:
        return {
            "status": "ok",
            "active_version": self.storage.active_version(),
            "batches": len(self.storage.batches),
            "alerts": len(self.storage.alerts),
            "open_alerts": sum(1 for a in self.storage.alerts.values() if a.status == "open"),
            "pending_feedback": self.pending_feedback_count(),
        }

    def load_bundle(self, version: int) -> ModelBundle:
        if version not in self._bundle_cache:
            row = self.storage.models.get(version)
            if row is None:
                raise KeyError(f"unknown model version: {version}")
            self._bundle_cache[version] = load_bundle(row.path)
        return self._bundle_cache[version]

    def evaluate_bundle(self, bundle: ModelBundle, fbundles: list[FeatureBundle]):
        labeled = [b for b in fbundles if b.label is not None]
        if not labeled:
            raise ValueError("evaluation needs labeled feature bundles")
        x = np.stack([b.x for b in labeled])
        graphs = [b.graph for b in labeled]
        weights = relative_scores(bundle.weights)
        p1s = bundle.mlp.forward(x)
        p2s = bundle.gcn.forward_batch(graphs)
        y_hat = [
            fused_prediction(float(p1), float(p2), weights).y_hat for p1, p2 in zip(p1s, p2s)
        ]
        return compute_metrics(y_hat, [b.label for b in labeled])


def _stratified_split(
    events: list[ParsedEvent], val_fraction: float, seed: int
) -> tuple[list[ParsedEvent], list[ParsedEvent]]:
    """Per-class shuffle-and-slice so both splits keep both classes."""
    rng = np.random.default_rng(seed)
    train_events: list[ParsedEvent] = []
    val_events: list[ParsedEvent] = []
    for cls in (0, 1):
        members = [e for e in events if e.label == cls]
        order = rng.permutation(len(members))
        n_val = max(1, int(round(val_fraction * len(members)))) if len(members) > 1 else 0
        val_idx = set(order[:n_val].tolist())
        for i, event in enumerate(members):
            (val_events if i in val_idx else train_events).append(event)
    return train_events, val_events
