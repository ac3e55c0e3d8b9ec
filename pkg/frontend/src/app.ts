import { ApiClient, ApiError } from "./api.js";
import { el } from "./dom.js";
import { FUSE_TOLERANCE, fusedConsistent, recomputeFused } from "./fusion.js";
import type { AlertDict, FusionWeights } from "./types.js";

const DEFAULT_ROUTE = "#/alerts";
const STATUS_FILTERS = ["", "open", "confirmed", "false_positive"];

function fmtScore(x: number): string {
  return x.toFixed(4);
}

function fmtTime(iso: string | null): string {
  return iso ? iso.replace("T", " ").replace(/\.\d+.*$/, "") : "";
}

/** Hash-routed dashboard over the service API. All async work funnels
 * through track() so tests can await settle() after any interaction. */
export class App {
  private lastRendered = "";
  private pending: Promise<unknown>[] = [];
  private notice = "";
  private noticeKind: "info" | "error" = "info";
  private listStatus = "";
  private listPage = 1;
  private readonly onHashChange = (): void => {
    if (location.hash !== this.lastRendered) this.track(this.render());
  };

  constructor(private readonly root: HTMLElement, readonly api: ApiClient) {}

  start(): void {
    window.addEventListener("hashchange", this.onHashChange);
    this.track(this.render());
  }

  stop(): void {
    window.removeEventListener("hashchange", this.onHashChange);
  }

  /** Navigate and re-render; the hashchange listener skips the duplicate. */
  go(hash: string): void {
    if (location.hash !== hash) location.hash = hash;
    this.track(this.render());
  }

  track(work: Promise<unknown>): void {
    this.pending.push(work.catch((err) => this.showError(err)));
  }

  /** Resolves once every tracked interaction (and what it spawned) settles. */
  async settle(): Promise<void> {
    while (this.pending.length > 0) {
      await Promise.allSettled(this.pending.splice(0));
    }
  }

  private showError(err: unknown): void {
    this.notice = err instanceof ApiError ? err.message : String(err);
    this.noticeKind = "error";
    const status = this.root.querySelector("#status");
    if (status) {
      status.textContent = this.notice;
      status.className = "status error";
    }
  }

  private flash(message: string): void {
    this.notice = message;
    this.noticeKind = "info";
  }

  // -- shell ---------------------------------------------------------------------

  private async render(): Promise<void> {
    const hash = location.hash || DEFAULT_ROUTE;
    this.lastRendered = hash;
    const [, route, arg] = hash.split("/");

    const nav = (label: string, target: string, active: boolean) =>
      el(
        "a",
        {
          href: target,
          class: active ? "nav active" : "nav",
          onclick: (ev) => {
            ev.preventDefault();
            this.go(target);
          },
        },
        label,
      );

    const header = el(
      "header",
      {},
      el("span", { class: "brand" }, "logward"),
      nav("Alerts", "#/alerts", route === "alerts" && !arg),
      nav("Models", "#/models", route === "models"),
      el("span", { class: "spacer" }),
      el("span", { id: "active-version", class: "chip" }, "v-"),
      el(
        "span",
        { class: "chip", title: "feedback entries newer than the active model" },
        "pending ",
        el("span", { id: "pending-badge" }, "-"),
      ),
    );

    const main = el("main", { id: "view" });
    const status = el("div", { id: "status", class: `status ${this.noticeKind}` }, this.notice);
    this.notice = "";
    this.noticeKind = "info";
    this.root.replaceChildren(header, status, main);

    if (route === "models") {
      await this.renderModels(main);
    } else if (route === "alerts" && arg) {
      await this.renderDetail(main, decodeURIComponent(arg));
    } else {
      await this.renderAlerts(main);
    }
    await this.refreshChips();
  }

  private async refreshChips(): Promise<void> {
    const [pendingCount, health] = await Promise.all([this.api.pendingFeedback(), this.api.health()]);
    const badge = this.root.querySelector("#pending-badge");
    if (badge) badge.textContent = String(pendingCount);
    const chip = this.root.querySelector("#active-version");
    if (chip) chip.textContent = health.active_version == null ? "no model" : `v${health.active_version}`;
  }

  // -- alert list ----------------------------------------------------------------

  private async renderAlerts(main: HTMLElement): Promise<void> {
    const page = await this.api.listAlerts({
      status: this.listStatus || undefined,
      page: this.listPage,
    });
    const pages = Math.max(1, Math.ceil(page.total / page.page_size));

    const filter = el("select", {
      id: "status-filter",
      onchange: (ev) => {
        this.listStatus = (ev.target as HTMLSelectElement).value;
        this.listPage = 1;
        this.track(this.render());
      },
    });
    for (const value of STATUS_FILTERS) {
      const option = el("option", { value }, value === "" ? "all statuses" : value);
      if (value === this.listStatus) option.setAttribute("selected", "selected");
      filter.append(option);
    }

    const head = el(
      "tr",
      {},
      el("th", {}, "line"),
      el("th", {}, "template"),
      el("th", {}, "fused"),
      el("th", {}, "status"),
      el("th", {}, "created"),
    );
    const body = el("tbody", {});
    for (const alert of page.alerts) {
      body.append(
        el(
          "tr",
          {
            "data-alert-id": alert.alert_id,
            class: `row status-${alert.status}`,
            onclick: () => this.go(`#/alerts/${encodeURIComponent(alert.alert_id)}`),
          },
          el("td", {}, String(alert.line_id)),
          el("td", { class: "template" }, alert.event_template),
          el("td", {}, fmtScore(alert.fused)),
          el("td", {}, alert.status),
          el("td", {}, fmtTime(alert.created_at)),
        ),
      );
    }

    const pager = el(
      "div",
      { class: "pager" },
      el(
        "button",
        {
          id: "page-prev",
          onclick: () => {
            if (this.listPage > 1) {
              this.listPage -= 1;
              this.track(this.render());
            }
          },
        },
        "prev",
      ),
      el("span", { id: "page-label" }, `page ${page.page} of ${pages} (${page.total} alerts)`),
      el(
        "button",
        {
          id: "page-next",
          onclick: () => {
            if (this.listPage < pages) {
              this.listPage += 1;
              this.track(this.render());
            }
          },
        },
        "next",
      ),
    );

    main.replaceChildren(
      el("div", { class: "toolbar" }, el("h1", {}, "Alerts"), filter),
      el("table", { id: "alerts-table", class: "alerts" }, el("thead", {}, head), body),
      page.alerts.length === 0 ? el("p", { class: "empty" }, "no alerts for this filter") : pager,
    );
  }

  // -- alert detail --------------------------------------------------------------

  private fusionBox(alert: AlertDict, weights: FusionWeights): HTMLElement {
    const recomputed = recomputeFused(weights, alert.p1, alert.p2);
    const consistent = fusedConsistent(alert, weights);
    const delta = Math.abs(recomputed - alert.fused);
    return el(
      "div",
      {
        id: "fusion-box",
        class: consistent ? "fusion ok" : "fusion drift",
        "data-consistent": String(consistent),
      },
      el("h2", {}, "Fusion breakdown"),
      el(
        "p",
        { class: "formula" },
        `F = s0*p1 + s1*p2 = ${weights.s0.toFixed(6)} * ${alert.p1.toFixed(6)} + ` +
          `${weights.s1.toFixed(6)} * ${alert.p2.toFixed(6)} = ${recomputed.toFixed(10)}`,
      ),
      el("p", {}, `stored ${alert.fused.toFixed(10)}, |delta| ${delta.toExponential(2)}`),
      el(
        "p",
        { class: "verdict-line" },
        consistent
          ? `recomputation matches stored score within ${FUSE_TOLERANCE.toExponential(0)}`
          : "recomputation drifts from the stored score",
      ),
    );
  }

  private async renderDetail(main: HTMLElement, alertId: string): Promise<void> {
    const { alert, fusion } = await this.api.getAlert(alertId);

    const rows: [string, string][] = [
      ["alert", alert.alert_id],
      ["batch", alert.batch_id],
      ["line", String(alert.line_id)],
      ["event id", String(alert.event_id)],
      ["model version", `v${alert.version}`],
      ["created", fmtTime(alert.created_at)],
      ["status", alert.status],
    ];
    if (alert.verdict_by) {
      rows.push(["verdict by", `${alert.verdict_by} at ${fmtTime(alert.verdict_at)}`]);
    }
    const dl = el("dl", { class: "fields" });
    for (const [k, v] of rows) dl.append(el("dt", {}, k), el("dd", {}, v));

    const params = el("div", { class: "params" });
    for (const p of alert.parameter_list) params.append(el("code", { class: "param" }, p));

    const pieces: HTMLElement[] = [
      el(
        "div",
        { class: "toolbar" },
        el(
          "a",
          {
            href: "#/alerts",
            class: "back",
            onclick: (ev) => {
              ev.preventDefault();
              this.go("#/alerts");
            },
          },
          "back to alerts",
        ),
        el("h1", {}, `Alert ${alert.alert_id}`),
      ),
      dl,
      el("h2", {}, "Template"),
      el("pre", { class: "template-full" }, alert.event_template),
      el("h2", {}, "Parameters"),
      alert.parameter_list.length > 0 ? params : el("p", { class: "empty" }, "none"),
      this.fusionBox(alert, fusion),
    ];

    if (alert.status === "open") {
      const analyst = el("input", {
        id: "analyst",
        type: "text",
        placeholder: "analyst name",
      }) as HTMLInputElement;
      const submit = (verdict: string) => {
        const name = analyst.value.trim();
        if (!name) {
          this.showError(new ApiError(0, "analyst name required"));
          return;
        }
        this.track(this.submitVerdict(alert.alert_id, verdict, name));
      };
      pieces.push(
        el(
          "div",
          { id: "verdict-form", class: "verdict-form" },
          el("h2", {}, "Verdict"),
          analyst,
          el("button", { id: "btn-confirm", onclick: () => submit("confirmed") }, "Confirm anomaly"),
          el(
            "button",
            { id: "btn-false-positive", class: "danger", onclick: () => submit("false_positive") },
            "False positive",
          ),
        ),
      );
    }
    main.replaceChildren(...pieces);
  }

  private async submitVerdict(alertId: string, verdict: string, analyst: string): Promise<void> {
    const result = await this.api.submitFeedback(alertId, verdict, analyst);
    this.flash(
      result.feedback_recorded
        ? `verdict recorded: ${result.status} (queued for retraining)`
        : `verdict recorded: ${result.status}`,
    );
    await this.render();
  }

  // -- models and retraining -----------------------------------------------------

  private async renderModels(main: HTMLElement): Promise<void> {
    const { models } = await this.api.models();

    const head = el(
      "tr",
      {},
      el("th", {}, "version"),
      el("th", {}, "created"),
      el("th", {}, "state"),
      el("th", {}, "notes"),
    );
    const body = el("tbody", {});
    for (const row of models) {
      const notes = Object.entries(row.meta)
        .map(([k, v]) => `${k}=${String(v)}`)
        .join(" ");
      body.append(
        el(
          "tr",
          { "data-version": String(row.version), class: row.active ? "row active" : "row" },
          el("td", {}, `v${row.version}`),
          el("td", {}, fmtTime(row.created_at)),
          el("td", {}, row.active ? "active" : ""),
          el("td", { class: "notes" }, notes),
        ),
      );
    }

    const lam = el("input", {
      id: "lam",
      type: "text",
      placeholder: "penalty strength (optional)",
    }) as HTMLInputElement;

    main.replaceChildren(
      el("div", { class: "toolbar" }, el("h1", {}, "Models")),
      el("table", { id: "models-table", class: "models" }, el("thead", {}, head), body),
      el(
        "div",
        { id: "retrain-panel", class: "retrain" },
        el("h2", {}, "Retrain from feedback"),
        el("p", {}, "Folds pending analyst verdicts into a new model version."),
        lam,
        el("button", { id: "btn-retrain", onclick: () => this.track(this.runRetrain(lam.value)) }, "Retrain"),
      ),
    );
  }

  private async runRetrain(lamRaw: string): Promise<void> {
    const trimmed = lamRaw.trim();
    let lam: number | undefined;
    if (trimmed !== "") {
      lam = Number(trimmed);
      if (!Number.isFinite(lam) || lam < 0) {
        this.showError(new ApiError(0, "penalty strength must be a non-negative number"));
        return;
      }
    }
    const result = await this.api.retrain(lam);
    if (result.status === "ok") {
      this.flash(
        `retrained: v${result.old_version} -> v${result.new_version} ` +
          `(finetuned on ${result.finetune_size} records)`,
      );
    } else {
      this.flash(`retrain skipped: ${result.reason}`);
    }
    await this.render();
  }
}
