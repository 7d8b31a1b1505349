/** Wire types for the manifest service HTTP API. */

export interface SliderInfo {
  adapter_id: string;
  pc_index: number;
  explained_variance_share: number;
  weight_file: string;
  checksum: string;
  label: string;
  label_source: string;
}

export interface SlidersResponse {
  sliders: SliderInfo[];
  manifest_hash: string;
}

export interface ManifestResponse {
  manifest: { prompt: string; n: number; [key: string]: unknown };
  manifest_hash: string;
}

export interface SpectrumResponse {
  explained_variance: number[];
  explained_variance_ratio: number[];
  n_components: number;
  n_samples: number;
  manifest_hash: string;
}

export interface Activation {
  adapter_id: string;
  scale: number;
}

export interface GateWindow {
  start: number;
  end: number;
}

export interface GenerateBody {
  prompt?: string | null;
  seed: number;
  activations: Activation[];
  gate?: GateWindow | null;
  num_steps?: number | null;
  manifest_hash?: string | null;
}

export interface GridBody {
  seeds: number[];
  activations: Activation[][];
  prompt?: string | null;
  gate?: GateWindow | null;
  manifest_hash?: string | null;
}

export interface RandomBody {
  k: number;
  scale_magnitude?: number;
  seed?: number | null;
  manifest_hash?: string | null;
}

export interface RandomResponse {
  activations: Activation[];
  manifest_hash: string;
}

export interface HealthResponse {
  status: string;
  inflight: number;
  manifest_hash: string;
}

/** One displayed preview: the exact request that produced it plus its bytes. */
export interface PreviewEntry {
  request: GenerateBody;
  bytes: Uint8Array;
  requestId: number;
}
