import { RiskServiceClient } from "./api.js";
import { ScenarioApp } from "./app.js";
import { DEMO_PATIENTS } from "./fixtures.js";

// Single configuration point: the service base URL (query param or default).
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8000";

const root = document.getElementById("app");
if (root) {
  const app = new ScenarioApp(root, new RiskServiceClient(baseUrl), {
    patients: DEMO_PATIENTS,
  });
  void app.start();
}
