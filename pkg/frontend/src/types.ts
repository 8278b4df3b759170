// Wire types mirroring the service JSON schema. Field names stay snake_case
// so a fixture body round-trips untouched.

export interface DemographicsDoc {
  age: number;
  gender: string;
  ethnicity: number;
  admission_seq: number;
}

export interface PatientState {
  diagnoses: number[];
  procedures: number[];
  labs: [number, number][];
  demographics: DemographicsDoc;
  medications: number[];
  los: number | null;
}

export interface PatientRecordDoc extends PatientState {
  patient_id: number;
  event_id: number;
}

export interface VocabResponse {
  diagnoses: string[];
  procedures: string[];
  medications: string[];
  lab_codes: string[];
  ethnicities: string[];
  genders: string[];
}

export interface HealthResponse {
  version: string;
  checkpoint_digest: string;
  indexed_records: number;
}

export interface PredictResponse {
  probabilities: number[];
  predicted: number[];
  labels: string[];
}

export interface NeighborDoc {
  event_id: number;
  similarity: number;
  los: number;
}

export interface CounterfactualResponse {
  elos: number;
  reward_vs_recorded: number | null;
  neighbors: NeighborDoc[];
  excluded: boolean;
}

export interface RetrievalOverrides {
  k?: number;
  phi?: number;
  age_window?: number;
}

export interface ErrorBody {
  error: string;
  field?: string;
}

// Client-side session. The medication bitset is the editable what-if set;
// its length always equals the vocabulary size.
export interface SessionState {
  patient: PatientState | null;
  meds: boolean[];
  lastPrediction: PredictResponse | null;
  recordedCounterfactual: CounterfactualResponse | null;
  modelCounterfactual: CounterfactualResponse | null;
  lastCounterfactual: CounterfactualResponse | null;
  overrides: RetrievalOverrides;
  banner: string | null;
}
