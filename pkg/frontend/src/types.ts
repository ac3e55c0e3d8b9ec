/** Payload shapes of the service's JSON API under /api/v1. */

export interface AlertDict {
  alert_id: string;
  batch_id: string;
  line_id: number;
  event_id: number;
  event_template: string;
  parameter_list: string[];
  // p1 and p2 are the per-model normal-class probabilities; fused is their
  // weighted combination and y_hat is always 1 on an alert
  p1: number;
  p2: number;
  fused: number;
  y_hat: number;
  version: number;
  created_at: string;
  status: string;
  verdict_by: string;
  verdict_at: string | null;
}

export interface AlertPage {
  alerts: AlertDict[];
  total: number;
  page: number;
  page_size: number;
}

export interface FusionWeights {
  s0: number;
  s1: number;
}

export interface AlertDetail {
  alert: AlertDict;
  fusion: FusionWeights;
}

export interface Health {
  status: string;
  active_version: number | null;
  batches: number;
  alerts: number;
  open_alerts: number;
  pending_feedback: number;
}

export interface ModelRow {
  version: number;
  path: string;
  created_at: string;
  active: boolean;
  meta: Record<string, unknown>;
}

export interface ModelsResponse {
  models: ModelRow[];
  active: number | null;
}

export interface FeedbackResponse {
  alert_id: string;
  status: string;
  feedback_recorded: boolean;
}

export interface RetrainResponse {
  run_id: string;
  status: "ok" | "skipped";
  old_version?: number;
  new_version?: number;
  finetune_size?: number;
  lam?: number;
  before?: Record<string, number>;
  after?: Record<string, number>;
  reason?: string;
  version?: number;
}
