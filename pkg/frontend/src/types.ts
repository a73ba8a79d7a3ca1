/** Wire types for the annotation service API. Every response carries a
 * schema_version field; the console displays these values verbatim and
 * computes nothing of record itself. */

export interface CategoryRef {
  category_id: number;
  name: string;
}

export interface TaskView {
  task_id: number;
  sample_id: number;
  period: number;
  status: string;
  model_prediction: CategoryRef;
  energy: number;
  neg_energy: number;
  tau: number;
  features: number[] | null;
  projection: [number, number] | null;
  assigned_label: number | null;
  lease_expires_at: number | null;
}

export interface QueueCounts {
  pending: number;
  claimed: number;
  labeled: number;
  expired: number;
  total: number;
}

export interface PeriodInfo {
  schema_version: number;
  period: number;
  status: string;
  tau: number;
  temperature: number;
  counts: QueueCounts;
  n_new_data: number;
  saved_effort: number | null;
  novel_discovered: number;
  known_categories: { id: number; name: string }[];
}

export interface CategoryReportRow {
  category_id: number;
  name: string;
  n_val: number;
  accuracy: number;
  n_human_annotations: number;
  n_full_annotations: number;
  efficiency: number | "inf";
}

export interface PeriodReport {
  schema_version: number;
  period: number;
  class_avg_acc: number;
  class_avg_acc_new_classes: number | null;
  high_conf_ratio: number;
  high_conf_acc: number;
  novel_detect_ratio: number;
  saved_effort: number | null;
  per_category: CategoryReportRow[];
}

export interface SpotCheckItem {
  sample_id: number;
  prediction: CategoryRef;
  features: number[] | null;
  projection: [number, number] | null;
  remaining: number;
}

export interface SpotCheckNext {
  schema_version: number;
  done: boolean;
  item: SpotCheckItem | null;
  agreement_rate?: number;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number, readonly detail?: string) {
    super(message);
  }
}

function fail(path: string, reason: string): never {
  throw new ApiError(`malformed response from ${path}: ${reason}`, 0);
}

export function asTask(raw: unknown, path = "/api/tasks"): TaskView {
  const t = raw as Record<string, unknown>;
  if (typeof t !== "object" || t === null) fail(path, "not an object");
  if (typeof t.task_id !== "number") fail(path, "task_id missing");
  if (typeof t.sample_id !== "number") fail(path, "sample_id missing");
  const pred = t.model_prediction as Record<string, unknown> | undefined;
  if (!pred || typeof pred.category_id !== "number") fail(path, "model_prediction missing");
  return t as unknown as TaskView;
}

export function asPeriodInfo(raw: unknown): PeriodInfo {
  const p = raw as Record<string, unknown>;
  if (typeof p !== "object" || p === null) fail("/api/periods/current", "not an object");
  if (typeof p.counts !== "object") fail("/api/periods/current", "counts missing");
  if (typeof p.schema_version !== "number") fail("/api/periods/current", "schema_version missing");
  return p as unknown as PeriodInfo;
}

export function asReport(raw: unknown): PeriodReport {
  const r = raw as Record<string, unknown>;
  if (typeof r !== "object" || r === null) fail("/api/reports", "not an object");
  if (typeof r.class_avg_acc !== "number") fail("/api/reports", "class_avg_acc missing");
  return r as unknown as PeriodReport;
}
