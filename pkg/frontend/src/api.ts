/** Typed client for the annotation service. Label submission retries
 * idempotently on network failure: the server treats a repeated
 * (task, category) pair as a no-op, so a retried POST can never
 * double-count. */

import {
  ApiError,
  PeriodInfo,
  PeriodReport,
  SpotCheckNext,
  TaskView,
  asPeriodInfo,
  asReport,
  asTask,
} from "./types.js";

export interface ApiClientOptions {
  baseUrl: string;
  /** Sent as X-Annotator-Id so claims are attributable. Default: "console". */
  annotatorId?: string;
  /** Static auth token, when the service requires one. */
  token?: string;
  /** Attempts per request on network failure. Default: 3. */
  retries?: number;
  /** Delay between retries in ms. Default: 250. */
  retryDelayMs?: number;
  /** Injectable for tests. Default: global fetch. */
  fetchFn?: typeof fetch;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export class ApiClient {
  private readonly base: string;
  private readonly headers: Record<string, string>;
  private readonly retries: number;
  private readonly retryDelayMs: number;
  private readonly fetchFn: typeof fetch;

  constructor(options: ApiClientOptions) {
    this.base = options.baseUrl.replace(/\/$/, "");
    this.headers = {
      "Content-Type": "application/json",
      "X-Annotator-Id": options.annotatorId ?? "console",
    };
    if (options.token) this.headers["X-Auth-Token"] = options.token;
    this.retries = options.retries ?? 3;
    this.retryDelayMs = options.retryDelayMs ?? 250;
    this.fetchFn = options.fetchFn ?? fetch;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.retries; attempt++) {
      let response: Response;
      try {
        response = await this.fetchFn(this.base + path, {
          method,
          headers: this.headers,
          body: body === undefined ? undefined : JSON.stringify(body),
        });
      } catch (err) {
        // Network failure: retry. Label posts are idempotent server-side.
        lastError = err;
        await sleep(this.retryDelayMs);
        continue;
      }
      const payload = await response.json().catch(() => ({}));
      if (!response.ok) {
        const detail = (payload as { detail?: string }).detail;
        throw new ApiError(`${method} ${path} -> ${response.status}`, response.status, detail);
      }
      return payload;
    }
    throw new ApiError(`network failure after ${this.retries} attempts: ${lastError}`, 0);
  }

  /** Claim up to `limit` pending tasks (the GET is the claim). */
  async claimTasks(limit: number): Promise<TaskView[]> {
    const body = (await this.request("GET", `/api/tasks?status=pending&limit=${limit}`)) as {
      tasks: unknown[];
    };
    return body.tasks.map((t) => asTask(t));
  }

  async listTasks(status: string, limit = 50): Promise<TaskView[]> {
    const body = (await this.request("GET", `/api/tasks?status=${status}&limit=${limit}`)) as {
      tasks: unknown[];
    };
    return body.tasks.map((t) => asTask(t));
  }

  /** Post a label; safe to call again with the same category after a retry. */
  async submitLabel(taskId: number, category: number): Promise<TaskView> {
    const body = (await this.request("POST", `/api/tasks/${taskId}/label`, { category })) as {
      task: unknown;
    };
    return asTask(body.task, `/api/tasks/${taskId}/label`);
  }

  async currentPeriod(): Promise<PeriodInfo> {
    return asPeriodInfo(await this.request("GET", "/api/periods/current"));
  }

  /** Request the period advance; 409 while tasks are outstanding. */
  async advancePeriod(): Promise<boolean> {
    const body = (await this.request("POST", "/api/periods/advance")) as { advanced?: boolean };
    return body.advanced === true;
  }

  async report(period: number): Promise<PeriodReport> {
    return asReport(await this.request("GET", `/api/reports/${period}`));
  }

  async spotcheckNext(): Promise<SpotCheckNext> {
    return (await this.request("GET", "/api/spotcheck/next")) as SpotCheckNext;
  }

  async spotcheckVerdict(
    sampleId: number,
    agree: boolean,
    correctedLabel?: number,
  ): Promise<void> {
    await this.request("POST", `/api/spotcheck/${sampleId}/verdict`, {
      agree,
      corrected_label: correctedLabel ?? null,
    });
  }
}
