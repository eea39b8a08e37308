// Derive interactive controls purely from service metadata: adding a model
// input needs no UI change.

import type { InputDescriptor } from "./api.js";

export type ControlKind = "slider" | "toggle" | "select";

export interface IndicatorControl {
  name: string;
  label: string;
  kind: ControlKind;
  unit: string | null;
  guardRange: [number, number] | null;
  options: { label: string; value: number }[] | null;
  modifiable: boolean;
}

// Lifestyle indicators are adjustable by default; everything else renders
// read-only. Product configuration, not a service property.
export const DEFAULT_MODIFIABLE = [
  "smoking_status",
  "smoking_quantity",
  "systolic_bp",
  "diastolic_bp",
];

export function controlKind(descriptor: InputDescriptor): ControlKind {
  if (descriptor.encoding) {
    const levels = Object.keys(descriptor.encoding);
    return levels.length <= 2 ? "toggle" : "select";
  }
  return "slider";
}

export function labelFor(name: string): string {
  const text = name.replace(/_/g, " ");
  return text.charAt(0).toUpperCase() + text.slice(1);
}

export function buildControls(
  inputs: InputDescriptor[],
  modifiable: string[] = DEFAULT_MODIFIABLE,
): IndicatorControl[] {
  return inputs.map((descriptor) => {
    const kind = controlKind(descriptor);
    const options = descriptor.encoding
      ? Object.entries(descriptor.encoding)
          .sort((a, b) => a[1] - b[1])
          .map(([label, value]) => ({ label, value }))
      : null;
    return {
      name: descriptor.name,
      label: labelFor(descriptor.name),
      kind,
      unit: descriptor.unit,
      guardRange: descriptor.guard_range,
      options,
      modifiable: modifiable.includes(descriptor.name),
    };
  });
}

// Guard-range validation happens before any request is issued.
export function validateValue(
  control: IndicatorControl,
  raw: string,
): { ok: true; value: number } | { ok: false; message: string } {
  const value = Number(raw);
  if (!Number.isFinite(value)) {
    return { ok: false, message: `${control.label}: not a number` };
  }
  if (control.guardRange) {
    const [lo, hi] = control.guardRange;
    if (value < lo || value > hi) {
      return { ok: false, message: `${control.label}: must be between ${lo} and ${hi}` };
    }
  }
  if (control.options && !control.options.some((o) => o.value === value)) {
    return { ok: false, message: `${control.label}: not a valid option` };
  }
  return { ok: true, value };
}
