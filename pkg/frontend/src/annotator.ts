/** The claim-and-label session: pull small batches of low-confidence tasks,
 * ask the labeler (a human behind the UI, or a script) for each category,
 * post the labels, and advance the period once the queue drains. A lease
 * that expires mid-session simply returns the task to the pool; the next
 * claim picks it up again, and a duplicate label post is a server-side
 * no-op. */

import { ApiClient } from "./api.js";
import { ApiError, TaskView } from "./types.js";

export type SessionPhase = "claiming" | "labeling" | "ready-to-advance" | "advanced" | "stopped";

export interface SessionState {
  phase: SessionPhase;
  labeled: number;
  pending: number;
  claimed: number;
  currentTask: TaskView | null;
}

export interface SessionOptions {
  client: ApiClient;
  /** Returns the category id for a task (UI prompt or scripted rule). */
  labeler: (task: TaskView) => Promise<number> | number;
  /** Tasks claimed per round trip. Default: 8. */
  batchSize?: number;
  /** Stop after this many labels (the queue may not be drained). */
  maxLabels?: number;
  /** POST the advance automatically once drained. Default: true. */
  autoAdvance?: boolean;
  onState?: (state: SessionState) => void;
}

export interface SessionResult {
  labeled: number;
  drained: boolean;
  advanced: boolean;
}

export async function claimAndLabelFlow(options: SessionOptions): Promise<SessionResult> {
  const batchSize = options.batchSize ?? 8;
  const autoAdvance = options.autoAdvance ?? true;
  let labeled = 0;

  const publish = async (phase: SessionPhase, currentTask: TaskView | null = null) => {
    if (!options.onState) return;
    const counts = (await options.client.currentPeriod()).counts;
    options.onState({
      phase,
      labeled,
      pending: counts.pending,
      claimed: counts.claimed,
      currentTask,
    });
  };

  while (options.maxLabels === undefined || labeled < options.maxLabels) {
    await publish("claiming");
    const budget =
      options.maxLabels === undefined ? batchSize : Math.min(batchSize, options.maxLabels - labeled);
    const tasks = await options.client.claimTasks(budget);
    if (tasks.length === 0) break;
    for (const task of tasks) {
      await publish("labeling", task);
      const category = await options.labeler(task);
      await options.client.submitLabel(task.task_id, category);
      labeled += 1;
    }
  }

  const counts = (await options.client.currentPeriod()).counts;
  const drained = counts.pending === 0 && counts.claimed === 0;
  let advanced = false;
  if (drained && autoAdvance) {
    try {
      advanced = await options.client.advancePeriod();
    } catch (err) {
      // 409 means someone else still holds a claim; the queue view refreshes.
      if (!(err instanceof ApiError && err.status === 409)) throw err;
    }
  }
  await publish(drained ? (advanced ? "advanced" : "ready-to-advance") : "stopped");
  return { labeled, drained, advanced };
}
