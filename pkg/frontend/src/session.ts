import { ServiceClient, ServiceError } from "./client.js";
import type { Activation, GateWindow, GenerateBody, PreviewEntry, SliderInfo } from "./types.js";

/** Injected timer surface so tests can drive time deterministically. */
export interface Timers {
  set(fn: () => void, ms: number): unknown;
  clear(id: unknown): void;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (id) => clearTimeout(id as ReturnType<typeof setTimeout>),
};

export type SessionStatus = "idle" | "pending" | "inflight" | "backoff" | "error";

export interface SessionEvents {
  /** A new preview was accepted (request + bytes, already appended to history). */
  onPreview?(entry: PreviewEntry): void;
  onStatus?(status: SessionStatus, message: string | null): void;
  /** Fired after a forced manifest reload (server hash moved under us). */
  onManifestReload?(sliders: SliderInfo[], manifestHash: string): void;
}

export interface SessionOptions {
  debounceMs?: number;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  /** Base for the surprise-me draw seeds; each click advances it by one. */
  randomSeed?: number;
  timers?: Timers;
}

/**
 * Single-session state machine between the controls and the service.
 *
 * Guarantees: at most one in-flight generation; rapid changes inside the
 * debounce window coalesce into one request; a response superseded by newer
 * state is discarded, never displayed; history is append-only and every
 * entry carries the exact request that produced its bytes.
 */
export class SessionController {
  readonly history: PreviewEntry[] = [];

  status: SessionStatus = "idle";
  lastError: string | null = null;
  /** True once the manifest was force-reloaded; the panel shows a banner. */
  reloaded = false;

  private readonly debounceMs: number;
  private readonly backoffBaseMs: number;
  private readonly backoffMaxMs: number;
  private readonly timers: Timers;

  private sliderInfos: SliderInfo[] = [];
  private knownIds = new Set<string>();
  private manifestHash: string | null = null;

  private scales = new Map<string, number>();
  /**
   * One-shot activations whose ids are not in the served manifest. They are
   * sent as-given so the service's own validation answers (e.g. 404 for an
   * unknown slider), then dropped so the session recovers on the next change.
   */
  private extras: Activation[] = [];
  private seed = 0;
  private promptOverride: string | null = null;
  private gate: GateWindow | null = null;

  private requestCounter = 0;
  private inflight = false;
  private queued = false;
  private dirty = false;
  private debounceTimer: unknown = null;
  private retryTimer: unknown = null;
  private backoffMs: number;
  private randomSeedBase: number;
  private randomCounter = 0;
  private settleWaiters: Array<() => void> = [];

  constructor(
    private readonly client: ServiceClient,
    private readonly events: SessionEvents = {},
    options: SessionOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? 250;
    this.backoffBaseMs = options.backoffBaseMs ?? 500;
    this.backoffMaxMs = options.backoffMaxMs ?? 4000;
    this.backoffMs = this.backoffBaseMs;
    this.randomSeedBase = options.randomSeed ?? Math.floor(Math.random() * 2 ** 31);
    this.timers = options.timers ?? realTimers;
  }

  /** Fetch slider metadata and render the base preview for the locked seed. */
  async init(): Promise<SliderInfo[]> {
    const doc = await this.client.sliders();
    this.adoptSliders(doc.sliders, doc.manifest_hash);
    await this.flush();
    return this.sliderInfos;
  }

  get sliders(): SliderInfo[] {
    return this.sliderInfos;
  }

  get hash(): string | null {
    return this.manifestHash;
  }

  get seedValue(): number {
    return this.seed;
  }

  scaleOf(adapterId: string): number {
    return this.scales.get(adapterId) ?? 0;
  }

  /** Nonzero activations in a canonical (id-sorted) order, plus any extras. */
  get activations(): Activation[] {
    const active = [...this.scales.entries()]
      .filter(([, scale]) => scale !== 0)
      .map(([adapter_id, scale]) => ({ adapter_id, scale }))
      .sort((a, b) => (a.adapter_id < b.adapter_id ? -1 : 1));
    return [...active, ...this.extras];
  }

  setScale(adapterId: string, scale: number): void {
    if (!this.knownIds.has(adapterId)) {
      throw new Error(`unknown slider ${adapterId}; manifest serves ${[...this.knownIds].sort().join(", ")}`);
    }
    if (!Number.isFinite(scale)) throw new Error(`scale must be finite, got ${scale}`);
    this.scales.set(adapterId, scale);
    this.extras = [];
    this.markDirty();
  }

  setSeed(seed: number): void {
    this.seed = seed;
    this.markDirty();
  }

  setGate(gate: GateWindow | null): void {
    this.gate = gate;
    this.markDirty();
  }

  setPrompt(prompt: string | null): void {
    this.promptOverride = prompt;
    this.markDirty();
  }

  /**
   * Replace the whole activation map (every control resets to 0 first) and
   * regenerate immediately. Unknown ids are passed through to the service
   * once rather than silently dropped; the resulting error surfaces without
   * breaking the session.
   */
  applyActivations(map: Record<string, number>): Promise<void> {
    for (const id of this.scales.keys()) this.scales.set(id, 0);
    this.extras = [];
    for (const [id, scale] of Object.entries(map)) {
      if (this.knownIds.has(id)) this.scales.set(id, scale);
      else this.extras.push({ adapter_id: id, scale });
    }
    return this.flush();
  }

  /** Draw a sparse random activation set from the service and apply it. */
  async surpriseMe(k: number, scaleMagnitude = 1.0): Promise<Activation[]> {
    const draw = await this.client.random({
      k,
      scale_magnitude: scaleMagnitude,
      seed: this.randomSeedBase + this.randomCounter++,
      manifest_hash: this.manifestHash,
    });
    const map: Record<string, number> = {};
    for (const act of draw.activations) map[act.adapter_id] = act.scale;
    await this.applyActivations(map);
    return draw.activations;
  }

  /**
   * Re-request a history entry's exact request. The service is deterministic,
   * so the appended preview is byte-identical to the stored one; the stored
   * entry itself is never mutated.
   */
  async restore(index: number): Promise<PreviewEntry> {
    const entry = this.history[index];
    if (!entry) throw new Error(`no history entry ${index}`);
    const req = entry.request;
    this.seed = req.seed;
    this.promptOverride = req.prompt ?? null;
    this.gate = req.gate ?? null;
    for (const id of this.scales.keys()) this.scales.set(id, 0);
    this.extras = [];
    for (const act of req.activations) {
      if (this.knownIds.has(act.adapter_id)) this.scales.set(act.adapter_id, act.scale);
      else this.extras.push(act);
    }
    const baseline = this.history.length;
    await this.flush();
    while (this.history.length === baseline && (this.inflight || this.queued)) {
      await this.nextSettle();
    }
    const appended = this.history[this.history.length - 1];
    if (this.history.length === baseline || !appended) {
      throw new Error(this.lastError ?? "restore did not produce a preview");
    }
    return appended;
  }

  /** Contact sheet over seeds x scale steps for one slider (single request). */
  gridSheet(adapterId: string, seeds: number[], scaleSteps: number[]): Promise<Uint8Array> {
    const columns = scaleSteps.map((scale) => {
      const overlay = new Map(this.scales);
      if (this.knownIds.has(adapterId)) overlay.set(adapterId, scale);
      return [...overlay.entries()]
        .filter(([, s]) => s !== 0)
        .map(([adapter_id, s]) => ({ adapter_id, scale: s }))
        .sort((a, b) => (a.adapter_id < b.adapter_id ? -1 : 1));
    });
    return this.client.grid({
      seeds,
      activations: columns,
      prompt: this.promptOverride,
      gate: this.gate,
      manifest_hash: this.manifestHash,
    });
  }

  /** Force the current state through right now, bypassing the debounce window. */
  flush(): Promise<void> {
    this.cancelDebounce();
    if (this.inflight) {
      this.queued = true;
      return Promise.resolve();
    }
    return this.issue();
  }

  /** Resolves once nothing is pending: no debounce, no in-flight, no retry. */
  async settled(): Promise<void> {
    while (
      this.inflight ||
      this.queued ||
      this.dirty ||
      this.debounceTimer !== null ||
      this.retryTimer !== null
    ) {
      await this.nextSettle();
    }
  }

  private adoptSliders(sliders: SliderInfo[], manifestHash: string): void {
    this.sliderInfos = sliders;
    this.manifestHash = manifestHash;
    this.knownIds = new Set(sliders.map((s) => s.adapter_id));
    const kept = new Map<string, number>();
    for (const info of sliders) kept.set(info.adapter_id, this.scales.get(info.adapter_id) ?? 0);
    this.scales = kept;
  }

  private markDirty(): void {
    this.dirty = true;
    if (!this.inflight) this.setStatus("pending", null);
    this.cancelDebounce();
    this.debounceTimer = this.timers.set(() => {
      this.debounceTimer = null;
      void this.flush();
    }, this.debounceMs);
  }

  private cancelDebounce(): void {
    if (this.debounceTimer !== null) {
      this.timers.clear(this.debounceTimer);
      this.debounceTimer = null;
    }
  }

  private buildBody(): GenerateBody {
    return {
      prompt: this.promptOverride,
      seed: this.seed,
      activations: this.activations,
      gate: this.gate,
      manifest_hash: this.manifestHash,
    };
  }

  private setStatus(status: SessionStatus, message: string | null): void {
    this.status = status;
    this.lastError = status === "error" ? message : null;
    this.events.onStatus?.(status, message);
  }

  private nextSettle(): Promise<void> {
    return new Promise((resolve) => this.settleWaiters.push(resolve));
  }

  /** Wake anything waiting on a terminal state (preview accepted or error). */
  private settle(): void {
    const waiters = this.settleWaiters;
    this.settleWaiters = [];
    for (const wake of waiters) wake();
  }

  private async issue(): Promise<void> {
    this.dirty = false;
    this.queued = false;
    const requestId = ++this.requestCounter;
    const body = this.buildBody();
    this.inflight = true;
    this.setStatus("inflight", null);
    let bytes: Uint8Array;
    try {
      bytes = await this.client.generate(body);
    } catch (err) {
      this.inflight = false;
      this.extras = [];
      await this.handleFailure(err);
      return;
    }
    this.inflight = false;
    this.backoffMs = this.backoffBaseMs;
    if (this.dirty || this.queued) {
      // superseded while in flight: discard this response, latest state wins
      return this.issue();
    }
    this.extras = [];
    const entry: PreviewEntry = { request: body, bytes, requestId };
    this.history.push(entry);
    this.setStatus("idle", null);
    this.events.onPreview?.(entry);
    this.settle();
  }

  private async handleFailure(err: unknown): Promise<void> {
    if (err instanceof ServiceError && err.status === 429) {
      const delay = this.backoffMs;
      this.backoffMs = Math.min(this.backoffMs * 2, this.backoffMaxMs);
      this.setStatus("backoff", `service busy; retrying in ${delay} ms`);
      if (this.retryTimer !== null) this.timers.clear(this.retryTimer);
      this.retryTimer = this.timers.set(() => {
        this.retryTimer = null;
        void this.flush();
      }, delay);
      return;
    }
    if (err instanceof ServiceError && err.status === 409) {
      // served manifest changed under us: reload metadata, then re-issue
      try {
        const doc = await this.client.sliders();
        this.adoptSliders(doc.sliders, doc.manifest_hash);
        this.reloaded = true;
        this.events.onManifestReload?.(this.sliderInfos, doc.manifest_hash);
      } catch (reloadErr) {
        this.setStatus("error", `manifest reload failed: ${String(reloadErr)}`);
        this.settle();
        return;
      }
      await this.issue();
      return;
    }
    const message = err instanceof Error ? err.message : String(err);
    this.setStatus("error", message);
    this.settle();
  }
}
