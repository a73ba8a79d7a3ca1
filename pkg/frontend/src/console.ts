/** DOM wiring for the annotation console: one task card at a time with the
 * projection view, the model's guess with its energy against tau, a palette
 * of known categories plus a free "novel" entry, the spot-check review
 * strip, and the live dashboard. */

import { ApiClient } from "./api.js";
import { buildDashboard, fetchDashboard } from "./dashboard.js";
import { featureReadout, renderScatterSvg, ScatterPoint } from "./scatter.js";
import { ApiError, PeriodInfo, TaskView } from "./types.js";

const seenPoints: ScatterPoint[] = [];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ConsoleApp {
  private client: ApiClient;
  private root: HTMLElement;
  private info: PeriodInfo | null = null;
  private current: TaskView | null = null;
  private labeled = 0;

  constructor(root: HTMLElement, client: ApiClient) {
    this.root = root;
    this.client = client;
  }

  async start(): Promise<void> {
    await this.refreshDashboard();
    await this.nextTask();
    setInterval(() => void this.refreshDashboard(), 4000);
  }

  private async refreshDashboard(): Promise<void> {
    const { view, cached } = await fetchDashboard(this.client);
    const shown = view.degraded && cached ? cached : view;
    const host = this.root.querySelector("#dashboard")!;
    host.innerHTML = "";
    if (view.degraded) {
      host.appendChild(el("div", "banner", "service unreachable; showing last known state"));
      setTimeout(() => void this.refreshDashboard(), 2000);
    }
    const grid = el("div", "stats");
    for (const stat of shown.stats) {
      const cell = el("div", "stat");
      cell.appendChild(el("div", "stat-value", stat.value));
      cell.appendChild(el("div", "stat-label", stat.label));
      grid.appendChild(cell);
    }
    host.appendChild(grid);
    if (shown.perCategory.length) {
      const table = el("table", "per-category");
      table.innerHTML = "<tr><th>species</th><th>human ann.</th><th>acc</th></tr>";
      for (const row of shown.perCategory) {
        const tr = el("tr");
        tr.innerHTML = `<td>${row.name}</td><td>${row.annotations}</td><td>${row.accuracyPct}</td>`;
        table.appendChild(tr);
      }
      host.appendChild(table);
    }
  }

  private async nextTask(): Promise<void> {
    try {
      const batch = await this.client.claimTasks(1);
      this.current = batch[0] ?? null;
    } catch (err) {
      this.current = null;
    }
    this.renderTask();
  }

  private renderTask(): void {
    const host = this.root.querySelector("#task")!;
    host.innerHTML = "";
    this.info = this.info; // palette needs the latest period info
    if (!this.current) {
      const done = el("div", "card done");
      done.appendChild(el("h2", undefined, "queue drained"));
      done.appendChild(el("p", undefined, `${this.labeled} labels submitted this session; period ready to advance.`));
      const advance = el("button", "advance", "advance period");
      advance.onclick = async () => {
        try {
          await this.client.advancePeriod();
          advance.textContent = "advance requested; model update running";
          advance.disabled = true;
        } catch (err) {
          advance.textContent =
            err instanceof ApiError && err.status === 409
              ? `not yet: ${err.detail ?? "tasks outstanding"}`
              : "advance failed; retry";
        }
      };
      done.appendChild(advance);
      host.appendChild(done);
      return;
    }
    const task = this.current;
    const card = el("div", "card");
    card.appendChild(el("h2", undefined, `task #${task.task_id} · sample ${task.sample_id}`));
    const guess = el("p", "guess");
    guess.textContent =
      `model guess: ${task.model_prediction.name} · ` +
      `-E(x) = ${task.neg_energy.toFixed(2)} vs tau = ${task.tau.toFixed(2)} (low confidence)`;
    card.appendChild(guess);

    if (task.projection) {
      const pts: ScatterPoint[] = [
        ...seenPoints,
        { x: task.projection[0], y: task.projection[1], kind: "current", label: `sample ${task.sample_id}` },
      ];
      const plot = el("div", "plot");
      plot.innerHTML = renderScatterSvg(pts);
      card.appendChild(plot);
    }
    const readout = el("div", "features");
    for (const line of featureReadout(task.features)) readout.appendChild(el("code", undefined, line));
    card.appendChild(readout);

    const palette = el("div", "palette");
    void this.client.currentPeriod().then((info) => {
      this.info = info;
      for (const cat of info.known_categories) {
        const btn = el("button", "cat", cat.name);
        btn.onclick = () => void this.submit(cat.id);
        palette.appendChild(btn);
      }
      const novelWrap = el("span", "novel");
      const novelInput = el("input") as HTMLInputElement;
      novelInput.placeholder = "novel category id…";
      novelInput.type = "number";
      const novelBtn = el("button", "cat novel-btn", "mark novel");
      novelBtn.onclick = () => {
        const value = Number(novelInput.value);
        if (Number.isFinite(value)) void this.submit(value);
      };
      novelWrap.appendChild(novelInput);
      novelWrap.appendChild(novelBtn);
      palette.appendChild(novelWrap);
    });
    card.appendChild(palette);
    host.appendChild(card);
  }

  private async submit(category: number): Promise<void> {
    if (!this.current) return;
    const task = this.current;
    try {
      await this.client.submitLabel(task.task_id, category);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // lease expired and someone else labeled it; just move on
      } else {
        throw err;
      }
    }
    if (task.projection) {
      seenPoints.push({ x: task.projection[0], y: task.projection[1], kind: "seen" });
    }
    this.labeled += 1;
    await this.refreshDashboard();
    await this.nextTask();
  }
}

export async function runSpotCheckStrip(root: HTMLElement, client: ApiClient): Promise<void> {
  const host = root.querySelector("#spotcheck");
  if (!host) return;
  const next = await client.spotcheckNext();
  host.innerHTML = "";
  if (next.done) {
    const note =
      next.agreement_rate !== undefined
        ? `spot check complete: ${(100 * next.agreement_rate).toFixed(1)}% expert agreement`
        : "no spot-check batch active";
    host.appendChild(el("p", "muted", note));
    return;
  }
  const item = next.item!;
  const strip = el("div", "card spot");
  strip.appendChild(
    el("p", undefined, `spot check · sample ${item.sample_id} predicted ${item.prediction.name} (${item.remaining} left)`),
  );
  const agree = el("button", "cat", "agree");
  agree.onclick = async () => {
    await client.spotcheckVerdict(item.sample_id, true);
    await runSpotCheckStrip(root, client);
  };
  const input = el("input") as HTMLInputElement;
  input.type = "number";
  input.placeholder = "correct id";
  const disagree = el("button", "cat novel-btn", "correct to…");
  disagree.onclick = async () => {
    const value = Number(input.value);
    if (!Number.isFinite(value)) return;
    await client.spotcheckVerdict(item.sample_id, false, value);
    await runSpotCheckStrip(root, client);
  };
  strip.appendChild(agree);
  strip.appendChild(input);
  strip.appendChild(disagree);
  host.appendChild(strip);
}
