// Scenario explorer: renders one control per model input and shows baseline
// vs what-if risk. All values on screen are echoes of service responses.

import { RiskServiceClient, RiskResponse, ServiceError } from "./api.js";
import {
  buildControls,
  DEFAULT_MODIFIABLE,
  IndicatorControl,
  validateValue,
} from "./controls.js";
import { debounce } from "./debounce.js";

export interface AppOptions {
  debounceMs?: number;
  modifiable?: string[];
  patients?: Record<string, unknown>;
}

export class ScenarioApp {
  readonly overrides: Record<string, number> = {};
  controls: IndicatorControl[] = [];
  private bundle: unknown = null;
  private readonly debounceMs: number;
  private readonly modifiable: string[];
  private readonly patients: Record<string, unknown>;
  private scheduleSubmit: () => void;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: RiskServiceClient,
    options: AppOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? 250;
    this.modifiable = options.modifiable ?? DEFAULT_MODIFIABLE;
    this.patients = options.patients ?? {};
    this.scheduleSubmit = debounce(() => void this.submit(), this.debounceMs);
  }

  async start(): Promise<void> {
    this.renderSkeleton();
    try {
      const metadata = await this.client.loadMetadata();
      this.controls = buildControls(metadata.inputs, this.modifiable);
      this.setText("#model-name", `${metadata.name} v${metadata.version}`);
      this.renderControls();
      const names = Object.keys(this.patients);
      if (names.length > 0) {
        this.selectPatient(names[0]);
        await this.submit();
      }
      this.setStatus("");
    } catch (err) {
      this.renderLoadError(err);
    }
  }

  private renderLoadError(err: unknown): void {
    const message = err instanceof Error ? err.message : String(err);
    this.setStatus(`could not load model metadata: ${message}`);
    const banner = this.root.querySelector<HTMLElement>("#status");
    if (banner) {
      const retry = document.createElement("button");
      retry.id = "retry";
      retry.textContent = "Retry";
      retry.addEventListener("click", () => void this.start());
      banner.appendChild(retry);
    }
  }

  private renderSkeleton(): void {
    this.root.innerHTML = `
      <header>
        <h1>Cardiovascular what-if explorer</h1>
        <p id="model-name"></p>
        <div id="status" role="alert"></div>
      </header>
      <section>
        <label for="patient-select">Demo patient</label>
        <select id="patient-select"></select>
      </section>
      <section id="controls"></section>
      <section id="risk">
        <div>10-year risk (current records): <strong id="risk-baseline">-</strong></div>
        <div>10-year risk (scenario): <strong id="risk-scenario">-</strong></div>
        <div>change: <span id="risk-delta">-</span></div>
        <div id="imputed"></div>
        <div id="model-version"></div>
      </section>
    `;
    const select = this.root.querySelector<HTMLSelectElement>("#patient-select")!;
    for (const name of Object.keys(this.patients)) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      select.appendChild(option);
    }
    select.addEventListener("change", () => {
      this.selectPatient(select.value);
      void this.submit();
    });
  }

  private selectPatient(name: string): void {
    this.bundle = this.patients[name];
    for (const key of Object.keys(this.overrides)) {
      delete this.overrides[key];
    }
    for (const control of this.controls) {
      this.clearError(control.name);
    }
  }

  private renderControls(): void {
    const host = this.root.querySelector<HTMLElement>("#controls")!;
    host.innerHTML = "";
    for (const control of this.controls) {
      host.appendChild(this.renderControl(control));
    }
  }

  private renderControl(control: IndicatorControl): HTMLElement {
    const row = document.createElement("div");
    row.className = `control ${control.modifiable ? "modifiable" : "readonly"}`;
    row.dataset.name = control.name;

    const label = document.createElement("label");
    label.htmlFor = `ctl-${control.name}`;
    label.textContent = control.unit ? `${control.label} (${control.unit})` : control.label;
    row.appendChild(label);

    let input: HTMLElement;
    if (control.kind === "select" || control.kind === "toggle") {
      const select = document.createElement("select");
      select.id = `ctl-${control.name}`;
      for (const option of control.options ?? []) {
        const el = document.createElement("option");
        el.value = String(option.value);
        el.textContent = option.label;
        select.appendChild(el);
      }
      select.disabled = !control.modifiable;
      select.addEventListener("change", () => this.onControlInput(control, select.value));
      input = select;
    } else {
      const slider = document.createElement("input");
      slider.type = "range";
      slider.id = `ctl-${control.name}`;
      if (control.guardRange) {
        slider.min = String(control.guardRange[0]);
        slider.max = String(control.guardRange[1]);
      }
      slider.step = "any";
      slider.disabled = !control.modifiable;
      slider.addEventListener("input", () => this.onControlInput(control, slider.value));
      input = slider;

      const entry = document.createElement("input");
      entry.type = "number";
      entry.id = `entry-${control.name}`;
      entry.disabled = !control.modifiable;
      entry.addEventListener("change", () => this.onControlInput(control, entry.value));
      row.appendChild(entry);
    }
    row.appendChild(input);

    const error = document.createElement("span");
    error.className = "inline-error";
    error.id = `error-${control.name}`;
    row.appendChild(error);
    return row;
  }

  // One debounced request per user pause; invalid input never leaves the page.
  onControlInput(control: IndicatorControl, raw: string): void {
    if (!control.modifiable) return;
    const checked = validateValue(control, raw);
    if (!checked.ok) {
      this.showError(control.name, checked.message);
      return;
    }
    this.clearError(control.name);
    this.overrides[control.name] = checked.value;
    this.scheduleSubmit();
  }

  async submit(): Promise<void> {
    if (!this.bundle) return;
    try {
      const response = await this.client.predict(this.bundle, { ...this.overrides });
      this.renderRisk(response);
      this.setStatus("");
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return; // superseded
      if (err instanceof ServiceError) {
        this.setStatus(err.message);
        return;
      }
      this.setStatus(`request failed: ${err instanceof Error ? err.message : err}`);
    }
  }

  private renderRisk(response: RiskResponse): void {
    const pct = (v: number) => `${(100 * v).toFixed(1)}%`;
    this.setText("#risk-baseline", pct(response.baseline_risk));
    const scenario = response.scenario_risk ?? response.baseline_risk;
    this.setText("#risk-scenario", pct(scenario));
    const delta = scenario - response.baseline_risk;
    this.setText("#risk-delta", `${delta >= 0 ? "+" : ""}${(100 * delta).toFixed(1)} pp`);
    this.setText(
      "#imputed",
      response.imputed_inputs.length
        ? `estimated from typical values: ${response.imputed_inputs.join(", ")}`
        : "",
    );
    this.setText("#model-version", `model ${response.model_version}`);
  }

  private showError(name: string, message: string): void {
    this.setText(`#error-${name}`, message);
  }

  private clearError(name: string): void {
    this.setText(`#error-${name}`, "");
  }

  private setStatus(message: string): void {
    this.setText("#status", message);
  }

  private setText(selector: string, text: string): void {
    const el = this.root.querySelector<HTMLElement>(selector);
    if (el) el.textContent = text;
  }
}
