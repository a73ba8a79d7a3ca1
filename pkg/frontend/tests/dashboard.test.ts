import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildDashboard, fetchDashboard } from "../src/dashboard.js";
import { renderScatterSvg, featureReadout } from "../src/scatter.js";
import { PeriodInfo, PeriodReport } from "../src/types.js";
import { MockAnnotationServer } from "./mock_server.js";

const info: PeriodInfo = {
  schema_version: 1,
  period: 2,
  status: "annotating",
  tau: 3.0,
  temperature: 1.0,
  counts: { pending: 12, claimed: 3, labeled: 40, expired: 0, total: 55 },
  n_new_data: 200,
  saved_effort: 0.725,
  novel_discovered: 4,
  known_categories: [{ id: 0, name: "species_00" }],
};

const report: PeriodReport = {
  schema_version: 1,
  period: 2,
  class_avg_acc: 0.772,
  class_avg_acc_new_classes: 0.681,
  high_conf_ratio: 0.722,
  high_conf_acc: 0.902,
  novel_detect_ratio: 0.826,
  saved_effort: 0.787,
  per_category: [
    {
      category_id: 0, name: "species_00", n_val: 24, accuracy: 0.9,
      n_human_annotations: 30, n_full_annotations: 300, efficiency: 9.0,
    },
  ],
};

describe("dashboard view-model", () => {
  it("displays only numbers that came from API responses", () => {
    const view = buildDashboard(info, report);
    const bySource = new Map(view.stats.map((s) => [s.label, s.source]));
    expect(bySource.get("queue depth")).toBe(info.counts.pending + info.counts.claimed);
    expect(bySource.get("labeled")).toBe(info.counts.labeled);
    expect(bySource.get("saved effort")).toBe(info.saved_effort);
    expect(bySource.get("novel categories discovered")).toBe(info.novel_discovered);
    expect(bySource.get("class-average accuracy")).toBe(report.class_avg_acc);
    expect(bySource.get("high-confidence ratio")).toBe(report.high_conf_ratio);
    expect(bySource.get("novel detect ratio")).toBe(report.novel_detect_ratio);
    expect(view.perCategory[0]).toEqual({
      name: "species_00",
      annotations: 30,
      accuracyPct: "90.0%",
    });
  });

  it("renders one-decimal percentages", () => {
    const view = buildDashboard(info, report);
    const saved = view.stats.find((s) => s.label === "saved effort");
    expect(saved?.value).toBe("72.5%");
  });

  it("saved effort shown equals the service's own figure after a drain", async () => {
    const server = new MockAnnotationServer(20, 100);
    const client = new ApiClient({ baseUrl: "http://mock.test", fetchFn: server.fetch, retryDelayMs: 1 });
    for (const task of await client.claimTasks(20)) await client.submitLabel(task.task_id, 1);
    const { view } = await fetchDashboard(client);
    const saved = view.stats.find((s) => s.label === "saved effort");
    expect(saved?.source).toBe(1 - 20 / 100);
  });

  it("degrades with a banner and keeps the cached state when the API is down", async () => {
    const server = new MockAnnotationServer(5, 50);
    const client = new ApiClient({
      baseUrl: "http://mock.test",
      fetchFn: server.fetch,
      retries: 1,
      retryDelayMs: 1,
    });
    const good = await fetchDashboard(client);
    expect(good.view.degraded).toBe(false);
    server.failNextRequests = 99;
    const down = await fetchDashboard(client);
    expect(down.view.degraded).toBe(true);
    expect(down.cached).toEqual(good.view);
  });

  it("fresh period shows zero discoveries", () => {
    const fresh = { ...info, novel_discovered: 0 };
    const view = buildDashboard(fresh, null);
    expect(view.stats.find((s) => s.label === "novel categories discovered")?.value).toBe("0");
  });
});

describe("projection rendering", () => {
  it("is a pure SVG string with the current point highlighted", () => {
    const svg = renderScatterSvg([
      { x: 0, y: 0, kind: "seen" },
      { x: 1, y: 1, kind: "current", label: "sample 7" },
    ]);
    expect(svg.startsWith("<svg")).toBe(true);
    expect(svg).toContain("pt-current");
    expect(svg).toContain("sample 7");
    expect((svg.match(/<circle/g) ?? []).length).toBe(2);
  });

  it("formats raw feature values without mutating them", () => {
    const lines = featureReadout([0.5, -1.25]);
    expect(lines).toEqual(["f00  0.500", "f01 -1.250"]);
    expect(featureReadout(null)).toEqual([]);
  });
});
