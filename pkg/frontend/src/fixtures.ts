// Demo patient bundles shipped with the UI; with no live health-record
// integration, these stand in for the record platform's data feed.

export const DEMO_PATIENTS: Record<string, unknown> = {
  "current smoker, elevated blood pressure": {
    subject: "demo-1",
    resources: [
      {
        resourceType: "Patient",
        id: "demo-1",
        sex: { system: "urn:fedtwin:gender", code: "male" },
        birthDate: "1962",
        baselineDate: "2008-04-15",
        lastFollowUpDate: "2016-04-15",
      },
      obs("demo-1", "systolic-bp", 152.0, "mmHg"),
      obs("demo-1", "diastolic-bp", 94.0, "mmHg"),
      obs("demo-1", "hdl-cholesterol", 1.1, "mmol/L"),
      obs("demo-1", "ldl-cholesterol", 4.1, "mmol/L"),
      obs("demo-1", "total-cholesterol", 6.0, "mmol/L"),
      obs("demo-1", "hba1c", 41.0, "mmol/mol"),
      obs("demo-1", "creatinine", 84.0, "umol/L"),
      obs("demo-1", "egfr", 88.0, "mL/min/1.73m2"),
      obs("demo-1", "albumin", 44.0, "g/L"),
      codedObs("demo-1", "smoking-status", "urn:fedtwin:smoking", "current"),
      obs("demo-1", "smoking-quantity", 15.0, "count"),
      {
        resourceType: "Condition",
        id: "demo-1-hypertension",
        subject: "demo-1",
        code: { system: "urn:fedtwin:condition", code: "hypertension" },
        onsetDate: "2001",
      },
    ],
  },
  "never smoked, favourable profile": {
    subject: "demo-2",
    resources: [
      {
        resourceType: "Patient",
        id: "demo-2",
        sex: { system: "urn:fedtwin:gender", code: "female" },
        birthDate: "1975",
        baselineDate: "2008-09-02",
        lastFollowUpDate: "2018-09-02",
      },
      obs("demo-2", "systolic-bp", 118.0, "mmHg"),
      obs("demo-2", "diastolic-bp", 72.0, "mmHg"),
      obs("demo-2", "hdl-cholesterol", 1.8, "mmol/L"),
      obs("demo-2", "ldl-cholesterol", 2.6, "mmol/L"),
      obs("demo-2", "total-cholesterol", 4.6, "mmol/L"),
      obs("demo-2", "hba1c", 34.0, "mmol/mol"),
      obs("demo-2", "creatinine", 68.0, "umol/L"),
      obs("demo-2", "egfr", 102.0, "mL/min/1.73m2"),
      obs("demo-2", "albumin", 46.0, "g/L"),
      codedObs("demo-2", "smoking-status", "urn:fedtwin:smoking", "never"),
    ],
  },
};

function obs(subject: string, kind: string, value: number, unit: string) {
  return {
    resourceType: "Observation",
    id: `${subject}-${kind}`,
    subject,
    code: { system: "urn:fedtwin:observation", code: kind },
    value: { value, unit },
  };
}

function codedObs(subject: string, kind: string, system: string, code: string) {
  return {
    resourceType: "Observation",
    id: `${subject}-${kind}`,
    subject,
    code: { system: "urn:fedtwin:observation", code: kind },
    value: { system, code },
  };
}
