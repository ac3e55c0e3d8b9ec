import { afterEach, beforeEach, describe, expect, test } from "vitest";

import { ApiClient } from "../src/api.js";
import { App } from "../src/app.js";
import { FUSE_TOLERANCE, decide, fusedConsistent, recomputeFused } from "../src/fusion.js";
import type { AlertDict, FusionWeights, ModelRow } from "../src/types.js";

// -- fake backend over the documented JSON surface ----------------------------------

const WEIGHTS: FusionWeights = { s0: 0.25, s1: 0.75 };

function seededAlert(n: number, p1: number, p2: number, template: string): AlertDict {
  return {
    alert_id: `a-${n}`,
    batch_id: "b-1",
    line_id: n,
    event_id: n,
    event_template: template,
    parameter_list: [`node-${n}`, "0x7f"],
    p1,
    p2,
    fused: WEIGHTS.s0 * p1 + WEIGHTS.s1 * p2,
    y_hat: 1,
    version: 1,
    created_at: `2026-08-18T09:0${n}:00+00:00`,
    status: "open",
    verdict_by: "",
    verdict_at: null,
  };
}

class FakeBackend {
  alerts: AlertDict[] = [
    seededAlert(1, 0.12, 0.08, "kernel panic trap from <*>"),
    seededAlert(2, 0.4, 0.1, "session opened for <*> by <*>"),
    seededAlert(3, 0.3, 0.2, "block <*> replicated to <*>"),
  ];
  models: ModelRow[] = [
    { version: 1, path: "/data/m/v1", created_at: "2026-08-18T08:00:00+00:00", active: true, meta: {} },
  ];
  active = 1;
  pendingCount = 0;
  busy = false;

  byId(alertId: string): AlertDict | undefined {
    return this.alerts.find((a) => a.alert_id === alertId);
  }

  private json(body: unknown, status = 200): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  async fetch(input: RequestInfo | URL, init?: RequestInit): Promise<Response> {
    const url = typeof input === "string" ? input : input instanceof URL ? input.href : input.url;
    const method = (init?.method ?? "GET").toUpperCase();
    const parsed = new URL(url, "http://localhost");
    const path = parsed.pathname;

    if (method === "GET" && path === "/api/v1/health") {
      return this.json({
        status: "ok",
        active_version: this.active,
        batches: 1,
        alerts: this.alerts.length,
        open_alerts: this.alerts.filter((a) => a.status === "open").length,
        pending_feedback: this.pendingCount,
      });
    }
    if (method === "GET" && path === "/api/v1/feedback/pending") {
      return this.json({ pending: this.pendingCount });
    }
    if (method === "GET" && path === "/api/v1/alerts") {
      const status = parsed.searchParams.get("status");
      const rows = status ? this.alerts.filter((a) => a.status === status) : this.alerts;
      return this.json({ alerts: rows, total: rows.length, page: 1, page_size: 50 });
    }
    const detail = path.match(/^\/api\/v1\/alerts\/([^/]+)$/);
    if (method === "GET" && detail) {
      const alert = this.byId(decodeURIComponent(detail[1]));
      if (!alert) return this.json({ detail: `unknown alert: ${detail[1]}` }, 404);
      return this.json({ alert, fusion: WEIGHTS });
    }
    const feedback = path.match(/^\/api\/v1\/alerts\/([^/]+)\/feedback$/);
    if (method === "POST" && feedback) {
      const alert = this.byId(decodeURIComponent(feedback[1]));
      if (!alert) return this.json({ detail: `unknown alert: ${feedback[1]}` }, 404);
      const body = JSON.parse(String(init?.body)) as { verdict: string; analyst: string };
      if (alert.status !== "open") {
        return this.json({ detail: `alert ${alert.alert_id} already has a verdict` }, 400);
      }
      if (body.verdict !== "false_positive" && body.verdict !== "confirmed") {
        return this.json({ detail: `verdict must be false_positive or confirmed` }, 400);
      }
      alert.status = body.verdict;
      alert.verdict_by = body.analyst;
      alert.verdict_at = "2026-08-18T10:00:00+00:00";
      const recorded = body.verdict === "false_positive";
      if (recorded) this.pendingCount += 1;
      return this.json({ alert_id: alert.alert_id, status: body.verdict, feedback_recorded: recorded });
    }
    if (method === "POST" && path === "/api/v1/retrain") {
      if (this.busy) return this.json({ detail: "retrain already in progress" }, 409);
      if (this.pendingCount === 0) {
        return this.json({
          run_id: "t-0",
          status: "skipped",
          reason: "no feedback since last activation",
          version: this.active,
        });
      }
      const oldVersion = this.active;
      this.active += 1;
      for (const m of this.models) m.active = false;
      this.models.push({
        version: this.active,
        path: `/data/m/v${this.active}`,
        created_at: "2026-08-18T10:05:00+00:00",
        active: true,
        meta: { finetune: this.pendingCount * 3 },
      });
      const size = this.pendingCount * 3;
      this.pendingCount = 0;
      return this.json({
        run_id: "t-1",
        status: "ok",
        old_version: oldVersion,
        new_version: this.active,
        finetune_size: size,
        lam: 10.0,
      });
    }
    if (method === "GET" && path === "/api/v1/models") {
      return this.json({ models: this.models, active: this.active });
    }
    return this.json({ detail: `no route: ${method} ${path}` }, 404);
  }
}

// -- harness -------------------------------------------------------------------------

let backend: FakeBackend;
let app: App | null = null;

function mount(): App {
  globalThis.fetch = backend.fetch.bind(backend) as typeof fetch;
  document.body.innerHTML = '<div id="app"></div>';
  const mounted = new App(document.getElementById("app") as HTMLElement, new ApiClient(""));
  mounted.start();
  app = mounted;
  return mounted;
}

function q<T extends Element>(selector: string): T {
  const node = document.querySelector(selector);
  if (!node) throw new Error(`missing element: ${selector}`);
  return node as T;
}

function badge(): string {
  return q("#pending-badge").textContent ?? "";
}

function statusText(): string {
  return q("#status").textContent ?? "";
}

beforeEach(() => {
  backend = new FakeBackend();
  location.hash = "#/alerts";
});

afterEach(() => {
  app?.stop();
  app = null;
});

// -- scripted flows -------------------------------------------------------------------

describe("dashboard", () => {
  test("lists the seeded alerts with scores and statuses", async () => {
    const ui = mount();
    await ui.settle();
    const rows = document.querySelectorAll("#alerts-table tr[data-alert-id]");
    expect(rows.length).toBe(3);
    expect(q("#alerts-table").textContent).toContain("kernel panic trap from <*>");
    expect(q("#alerts-table").textContent).toContain("0.0900");
    expect(badge()).toBe("0");
    expect(q("#active-version").textContent).toBe("v1");
  });

  test("status filter narrows the table", async () => {
    backend.byId("a-2")!.status = "confirmed";
    const ui = mount();
    await ui.settle();
    const filter = q<HTMLSelectElement>("#status-filter");
    filter.value = "open";
    filter.dispatchEvent(new Event("change"));
    await ui.settle();
    expect(document.querySelectorAll("#alerts-table tr[data-alert-id]").length).toBe(2);
  });

  test("flagging a false positive increments the pending badge", async () => {
    const ui = mount();
    await ui.settle();
    expect(badge()).toBe("0");

    q<HTMLElement>('tr[data-alert-id="a-2"]').click();
    await ui.settle();
    q<HTMLInputElement>("#analyst").value = "dana";
    q<HTMLElement>("#btn-false-positive").click();
    await ui.settle();

    expect(backend.byId("a-2")!.status).toBe("false_positive");
    expect(backend.byId("a-2")!.verdict_by).toBe("dana");
    expect(statusText()).toContain("verdict recorded: false_positive");
    expect(badge()).toBe("1");
    // verdict controls disappear once the alert is closed
    expect(document.querySelector("#verdict-form")).toBeNull();
  });

  test("confirming an anomaly records no pending feedback", async () => {
    const ui = mount();
    ui.go("#/alerts/a-1");
    await ui.settle();
    q<HTMLInputElement>("#analyst").value = "lee";
    q<HTMLElement>("#btn-confirm").click();
    await ui.settle();
    expect(backend.byId("a-1")!.status).toBe("confirmed");
    expect(badge()).toBe("0");
  });

  test("verdict without an analyst name is rejected client-side", async () => {
    const ui = mount();
    ui.go("#/alerts/a-1");
    await ui.settle();
    q<HTMLElement>("#btn-false-positive").click();
    await ui.settle();
    expect(statusText()).toContain("analyst name required");
    expect(backend.byId("a-1")!.status).toBe("open");
  });

  test("retrain with feedback surfaces the new active version", async () => {
    const ui = mount();
    await ui.settle();
    q<HTMLElement>('tr[data-alert-id="a-1"]').click();
    await ui.settle();
    q<HTMLInputElement>("#analyst").value = "dana";
    q<HTMLElement>("#btn-false-positive").click();
    await ui.settle();
    expect(badge()).toBe("1");

    ui.go("#/models");
    await ui.settle();
    expect(q('#models-table tr[data-version="1"]').textContent).toContain("active");

    q<HTMLElement>("#btn-retrain").click();
    await ui.settle();
    expect(statusText()).toContain("retrained: v1 -> v2");
    expect(q('#models-table tr[data-version="2"]').textContent).toContain("active");
    expect(q('#models-table tr[data-version="1"]').textContent).not.toContain("active");
    expect(q("#active-version").textContent).toBe("v2");
    expect(badge()).toBe("0");
  });

  test("retrain without feedback reports the skip reason", async () => {
    const ui = mount();
    ui.go("#/models");
    await ui.settle();
    q<HTMLElement>("#btn-retrain").click();
    await ui.settle();
    expect(statusText()).toContain("retrain skipped: no feedback since last activation");
    expect(q("#active-version").textContent).toBe("v1");
  });

  test("busy retrain surfaces the conflict error", async () => {
    backend.busy = true;
    const ui = mount();
    ui.go("#/models");
    await ui.settle();
    q<HTMLElement>("#btn-retrain").click();
    await ui.settle();
    expect(statusText()).toContain("retrain already in progress");
  });

  test("unknown alert id surfaces the not-found error", async () => {
    const ui = mount();
    ui.go("#/alerts/nope");
    await ui.settle();
    expect(statusText()).toContain("unknown alert: nope");
  });
});

describe("fusion invariant", () => {
  test("stored fused scores match client recomputation within 1e-9", () => {
    for (const alert of backend.alerts) {
      const delta = Math.abs(recomputeFused(WEIGHTS, alert.p1, alert.p2) - alert.fused);
      expect(delta).toBeLessThanOrEqual(FUSE_TOLERANCE);
      expect(fusedConsistent(alert, WEIGHTS)).toBe(true);
    }
  });

  test("detail view marks a consistent score", async () => {
    const ui = mount();
    ui.go("#/alerts/a-1");
    await ui.settle();
    const box = q<HTMLElement>("#fusion-box");
    expect(box.getAttribute("data-consistent")).toBe("true");
    expect(box.textContent).toContain("matches stored score within 1e-9");
  });

  test("detail view flags a drifted stored score", async () => {
    backend.byId("a-3")!.fused += 5e-6;
    const ui = mount();
    ui.go("#/alerts/a-3");
    await ui.settle();
    const box = q<HTMLElement>("#fusion-box");
    expect(box.getAttribute("data-consistent")).toBe("false");
    expect(box.textContent).toContain("drifts from the stored score");
  });

  test("decision rule is normal only above 0.5", () => {
    expect(decide(0.5)).toBe(1);
    expect(decide(0.5 + 1e-9)).toBe(0);
    expect(decide(0.09)).toBe(1);
  });
});

describe("api client", () => {
  test("maps error bodies to ApiError with the service detail", async () => {
    globalThis.fetch = backend.fetch.bind(backend) as typeof fetch;
    const api = new ApiClient("");
    await expect(api.getAlert("missing")).rejects.toMatchObject({
      name: "ApiError",
      status: 404,
      message: "unknown alert: missing",
    });
    await expect(api.submitFeedback("a-1", "bogus", "x")).rejects.toMatchObject({ status: 400 });
  });
});
