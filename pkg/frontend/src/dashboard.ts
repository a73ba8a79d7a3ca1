/** Dashboard view-model: live queue depth, saved effort, novel discoveries,
 * and per-category annotation counts. Every number shown is lifted straight
 * from an API response; this module formats, it never computes metrics. */

import { ApiClient } from "./api.js";
import { ApiError, PeriodInfo, PeriodReport } from "./types.js";

export interface DashboardStat {
  label: string;
  value: string;
  /** The untouched number from the API, kept for contract tests. */
  source: number | null;
}

export interface DashboardViewModel {
  degraded: boolean;
  period: number | null;
  status: string;
  stats: DashboardStat[];
  perCategory: { name: string; annotations: number; accuracyPct: string }[];
}

const pct = (value: number | null | undefined) =>
  value === null || value === undefined ? "-" : `${(100 * value).toFixed(1)}%`;

export function buildDashboard(
  info: PeriodInfo | null,
  report: PeriodReport | null,
): DashboardViewModel {
  if (info === null) {
    return {
      degraded: true,
      period: null,
      status: "unreachable",
      stats: [],
      perCategory: [],
    };
  }
  const stats: DashboardStat[] = [
    { label: "queue depth", value: String(info.counts.pending + info.counts.claimed), source: info.counts.pending + info.counts.claimed },
    { label: "labeled", value: String(info.counts.labeled), source: info.counts.labeled },
    { label: "saved effort", value: pct(info.saved_effort), source: info.saved_effort },
    { label: "novel categories discovered", value: String(info.novel_discovered), source: info.novel_discovered },
  ];
  if (report) {
    stats.push(
      { label: "class-average accuracy", value: pct(report.class_avg_acc), source: report.class_avg_acc },
      { label: "high-confidence ratio", value: pct(report.high_conf_ratio), source: report.high_conf_ratio },
      { label: "high-confidence accuracy", value: pct(report.high_conf_acc), source: report.high_conf_acc },
      { label: "novel detect ratio", value: pct(report.novel_detect_ratio), source: report.novel_detect_ratio },
    );
  }
  return {
    degraded: false,
    period: info.period,
    status: info.status,
    stats,
    perCategory: (report?.per_category ?? []).map((row) => ({
      name: row.name,
      annotations: row.n_human_annotations,
      accuracyPct: pct(row.accuracy),
    })),
  };
}

export interface DashboardFetchResult {
  view: DashboardViewModel;
  /** Last good view, served under a degraded banner when the API is down. */
  cached: DashboardViewModel | null;
}

let lastGood: DashboardViewModel | null = null;

export async function fetchDashboard(client: ApiClient): Promise<DashboardFetchResult> {
  let info: PeriodInfo;
  try {
    info = await client.currentPeriod();
  } catch (err) {
    return { view: buildDashboard(null, null), cached: lastGood };
  }
  let report: PeriodReport | null = null;
  try {
    report = await client.report(info.period);
  } catch (err) {
    if (!(err instanceof ApiError && err.status === 404)) throw err;
  }
  lastGood = buildDashboard(info, report);
  return { view: lastGood, cached: lastGood };
}
