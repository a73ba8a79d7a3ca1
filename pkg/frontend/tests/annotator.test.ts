import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { claimAndLabelFlow, SessionState } from "../src/annotator.js";
import { MockAnnotationServer } from "./mock_server.js";

function clientFor(server: MockAnnotationServer): ApiClient {
  return new ApiClient({
    baseUrl: "http://mock.test",
    fetchFn: server.fetch,
    retryDelayMs: 1,
  });
}

describe("claim-and-label session", () => {
  it("a scripted 50-label session drains exactly 50 tasks", async () => {
    const server = new MockAnnotationServer(60);
    const result = await claimAndLabelFlow({
      client: clientFor(server),
      labeler: (task) => task.model_prediction.category_id,
      batchSize: 8,
      maxLabels: 50,
    });
    expect(result.labeled).toBe(50);
    expect(result.drained).toBe(false);
    expect(server.counts()).toMatchObject({ labeled: 50, total: 60 });
    expect(server.counts().pending + server.counts().claimed).toBe(10);
  });

  it("drains the queue fully and advances the period", async () => {
    const server = new MockAnnotationServer(17);
    const states: SessionState[] = [];
    const result = await claimAndLabelFlow({
      client: clientFor(server),
      labeler: () => 1,
      batchSize: 5,
      onState: (state) => states.push(state),
    });
    expect(result).toMatchObject({ labeled: 17, drained: true, advanced: true });
    expect(server.advanceRequested).toBe(true);
    expect(states.at(-1)?.phase).toBe("advanced");
  });

  it("shows period-ready state immediately on an empty queue", async () => {
    const server = new MockAnnotationServer(0);
    const states: SessionState[] = [];
    const result = await claimAndLabelFlow({
      client: clientFor(server),
      labeler: () => 0,
      onState: (state) => states.push(state),
    });
    expect(result.labeled).toBe(0);
    expect(result.drained).toBe(true);
    expect(states.at(-1)?.phase).toBe("advanced");
  });

  it("label retries inside the flow leave server counts consistent", async () => {
    const server = new MockAnnotationServer(6);
    const client = clientFor(server);
    let calls = 0;
    const result = await claimAndLabelFlow({
      client,
      batchSize: 2,
      labeler: (task) => {
        calls += 1;
        if (calls === 3) server.failNextRequests = 1; // drop the next POST
        return task.model_prediction.category_id;
      },
    });
    expect(result.labeled).toBe(6);
    expect(server.counts()).toMatchObject({ labeled: 6, pending: 0, claimed: 0 });
  });
});
