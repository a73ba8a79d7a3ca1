import { ApiClient } from "./api.js";
import { ConsoleApp, runSpotCheckStrip } from "./console.js";

const params = new URLSearchParams(window.location.search);
const client = new ApiClient({
  baseUrl: params.get("api") ?? window.location.origin,
  annotatorId: params.get("annotator") ?? "console",
  token: params.get("token") ?? undefined,
});

const root = document.getElementById("app")!;
const app = new ConsoleApp(root, client);
void app.start();
void runSpotCheckStrip(root, client);
