import type {
  GenerateBody,
  GridBody,
  HealthResponse,
  ManifestResponse,
  RandomBody,
  RandomResponse,
  SlidersResponse,
  SpectrumResponse,
} from "./types.js";

/** Minimal slice of the fetch Response surface the client relies on. */
export interface TransportResponse {
  status: number;
  arrayBuffer(): Promise<ArrayBuffer>;
  json(): Promise<unknown>;
}

export interface TransportInit {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}

export type Transport = (url: string, init?: TransportInit) => Promise<TransportResponse>;

/** The service answered with a non-2xx status. */
export class ServiceError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly detail: Record<string, unknown> | null = null,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** The service could not be reached at all (transport-level failure). */
export class ServiceDownError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ServiceDownError";
  }
}

function errorMessage(status: number, payload: unknown): { message: string; detail: Record<string, unknown> | null } {
  if (payload && typeof payload === "object" && "detail" in payload) {
    const detail = (payload as { detail: unknown }).detail;
    if (typeof detail === "string") return { message: detail, detail: null };
    if (detail && typeof detail === "object") {
      const record = detail as Record<string, unknown>;
      const error = typeof record.error === "string" ? record.error : JSON.stringify(record);
      return { message: error, detail: record };
    }
  }
  return { message: `service returned status ${status}`, detail: null };
}

const defaultTransport: Transport = (url, init) => fetch(url, init);

/** Typed access to the manifest service; every pixel the UI shows comes through here. */
export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly transport: Transport = defaultTransport,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: TransportInit): Promise<TransportResponse> {
    let response: TransportResponse;
    try {
      response = await this.transport(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ServiceDownError(`service unreachable at ${this.baseUrl}: ${String(err)}`);
    }
    if (response.status >= 200 && response.status < 300) return response;
    let payload: unknown = null;
    try {
      payload = await response.json();
    } catch {
      // non-JSON error body; fall through to the generic message
    }
    const { message, detail } = errorMessage(response.status, payload);
    throw new ServiceError(response.status, message, detail);
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.request(path);
    return (await response.json()) as T;
  }

  private postInit(body: unknown): TransportInit {
    return {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    };
  }

  health(): Promise<HealthResponse> {
    return this.getJson("/health");
  }

  manifest(): Promise<ManifestResponse> {
    return this.getJson("/manifest");
  }

  sliders(): Promise<SlidersResponse> {
    return this.getJson("/sliders");
  }

  spectrum(): Promise<SpectrumResponse> {
    return this.getJson("/spectrum");
  }

  /** PNG bytes for one seeded request. */
  async generate(body: GenerateBody): Promise<Uint8Array> {
    const response = await this.request("/generate", this.postInit(body));
    return new Uint8Array(await response.arrayBuffer());
  }

  /** PNG bytes of a seeds x activation-sets contact sheet. */
  async grid(body: GridBody): Promise<Uint8Array> {
    const response = await this.request("/grid", this.postInit(body));
    return new Uint8Array(await response.arrayBuffer());
  }

  random(body: RandomBody): Promise<RandomResponse> {
    const response = this.request("/random", this.postInit(body));
    return response.then((r) => r.json()) as Promise<RandomResponse>;
  }
}
