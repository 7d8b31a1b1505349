import { SessionController } from "./session.js";
import type { PreviewEntry, SliderInfo } from "./types.js";

export interface PanelOptions {
  /** Controls beyond this count fold into a collapsed section. */
  maxShown?: number;
  /** Values closer to zero than this snap to the detent. */
  detent?: number;
  seeds?: number[];
  scaleSteps?: number[];
}

/** Base64 data URL for PNG bytes; chunked so large images do not blow the stack. */
export function pngDataUrl(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return `data:image/png;base64,${btoa(binary)}`;
}

export function sliderTitle(info: SliderInfo): string {
  return info.label !== "" ? info.label : `PC-${info.pc_index}`;
}

/**
 * Renders the explorer: one range input per discovered slider, a live
 * preview, status surfaces, and history. All state lives in the
 * SessionController; the panel only reflects it and forwards input.
 */
export class ExplorerPanel {
  private readonly maxShown: number;
  private readonly detent: number;
  private readonly seeds: number[];
  private readonly scaleSteps: number[];

  private controls = new Map<string, HTMLInputElement>();
  private readouts = new Map<string, HTMLElement>();
  private controlsBox!: HTMLElement;
  private preview!: HTMLImageElement;
  private statusChip!: HTMLElement;
  private errorCard!: HTMLElement;
  private reloadBanner!: HTMLElement;
  private historyList!: HTMLElement;
  private seedInput!: HTMLInputElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly session: SessionController,
    options: PanelOptions = {},
  ) {
    this.maxShown = options.maxShown ?? 8;
    this.detent = options.detent ?? 0.08;
    this.seeds = options.seeds ?? [0, 1, 2, 3];
    this.scaleSteps = options.scaleSteps ?? [-1, -0.5, 0, 0.5, 1];
  }

  mount(): void {
    this.root.innerHTML = "";
    this.root.classList.add("explorer");

    this.reloadBanner = el("div", "reload-banner");
    this.reloadBanner.hidden = true;
    this.reloadBanner.textContent = "manifest changed on the server; controls reloaded";

    this.errorCard = el("div", "error-card");
    this.errorCard.setAttribute("role", "alert");
    this.errorCard.hidden = true;

    this.statusChip = el("span", "status-chip");
    this.statusChip.dataset.status = "idle";

    this.preview = document.createElement("img");
    this.preview.className = "preview";
    this.preview.alt = "generated preview";

    this.controlsBox = el("div", "controls");
    this.historyList = el("ol", "history");

    const seedRow = el("div", "seed-row");
    const seedLabel = el("label");
    seedLabel.textContent = "seed";
    this.seedInput = document.createElement("input");
    this.seedInput.type = "number";
    this.seedInput.value = String(this.session.seedValue);
    this.seedInput.addEventListener("change", () => {
      const seed = Number(this.seedInput.value);
      if (Number.isInteger(seed) && seed >= 0) this.session.setSeed(seed);
    });
    seedLabel.append(this.seedInput);
    seedRow.append(seedLabel, this.statusChip);

    const actions = el("div", "actions");
    actions.append(
      this.button("surprise me", () => void this.guard(this.session.surpriseMe(3))),
      this.button("reset all", () => void this.guard(this.session.applyActivations({}))),
      this.button("grid", () => void this.openGrid()),
    );

    this.root.append(
      this.reloadBanner,
      this.errorCard,
      seedRow,
      this.controlsBox,
      actions,
      this.preview,
      this.historyList,
    );
    this.renderControls(this.session.sliders);
  }

  /** Reflect a session event stream; pass these into the controller. */
  handlers() {
    return {
      onPreview: (entry: PreviewEntry) => this.showPreview(entry),
      onStatus: (status: string, message: string | null) => this.showStatus(status, message),
      onManifestReload: (sliders: SliderInfo[]) => {
        this.reloadBanner.hidden = false;
        this.renderControls(sliders);
      },
    };
  }

  renderControls(sliders: SliderInfo[]): void {
    this.controls.clear();
    this.readouts.clear();
    this.controlsBox.innerHTML = "";
    const ordered = [...sliders].sort((a, b) => a.pc_index - b.pc_index);
    const visible = ordered.slice(0, this.maxShown);
    const folded = ordered.slice(this.maxShown);
    for (const info of visible) this.controlsBox.append(this.controlRow(info));
    if (folded.length > 0) {
      const details = document.createElement("details");
      const summary = document.createElement("summary");
      summary.textContent = `${folded.length} more directions`;
      details.append(summary);
      for (const info of folded) details.append(this.controlRow(info));
      this.controlsBox.append(details);
    }
  }

  private controlRow(info: SliderInfo): HTMLElement {
    const row = el("div", "slider-row");
    row.dataset.adapterId = info.adapter_id;

    const title = el("span", "slider-title");
    title.textContent = sliderTitle(info);

    const share = el("span", "variance-share");
    share.textContent = `${(info.explained_variance_share * 100).toFixed(1)}% var`;

    const input = document.createElement("input");
    input.type = "range";
    input.min = "-2";
    input.max = "2";
    input.step = "0.05";
    input.value = String(this.session.scaleOf(info.adapter_id));
    input.setAttribute("aria-label", sliderTitle(info));

    const readout = el("span", "scale-readout");
    readout.textContent = formatScale(Number(input.value));

    input.addEventListener("input", () => {
      let value = Number(input.value);
      if (Math.abs(value) < this.detent) {
        value = 0;
        input.value = "0";
      }
      try {
        this.session.setScale(info.adapter_id, value);
        this.reflectScale(info.adapter_id, value);
      } catch (err) {
        this.showStatus("error", err instanceof Error ? err.message : String(err));
      }
    });

    this.controls.set(info.adapter_id, input);
    this.readouts.set(info.adapter_id, readout);
    row.append(title, input, readout, share);
    return row;
  }

  showPreview(entry: PreviewEntry): void {
    this.preview.src = pngDataUrl(entry.bytes);
    this.preview.dataset.requestId = String(entry.requestId);
    this.preview.dataset.seed = String(entry.request.seed);
    this.appendHistory(entry);
    this.syncControls();
  }

  showStatus(status: string, message: string | null): void {
    this.statusChip.dataset.status = status;
    this.statusChip.textContent = status === "backoff" && message !== null ? message : status;
    if (status === "error") {
      this.errorCard.hidden = false;
      this.errorCard.textContent = message ?? "request failed";
    } else if (status === "idle") {
      this.errorCard.hidden = true;
    }
  }

  /** Controls mirror session state (restore and surprise-me move them). */
  private syncControls(): void {
    for (const id of this.controls.keys()) {
      this.reflectScale(id, this.session.scaleOf(id));
    }
    this.seedInput.value = String(this.session.seedValue);
  }

  /**
   * Beyond |1| the effect may drift off-manifold; the range stays available
   * but the control signals it (calibration covers [-1, 1] only).
   */
  private reflectScale(id: string, value: number): void {
    const input = this.controls.get(id);
    if (!input) return;
    input.value = String(value);
    const readout = this.readouts.get(id);
    if (readout) readout.textContent = formatScale(value);
    const row = input.closest(".slider-row");
    if (row instanceof HTMLElement) {
      const off = Math.abs(value) > 1;
      row.classList.toggle("off-range", off);
      row.title = off ? "beyond the calibrated range; expect stronger drift" : "";
    }
  }

  private appendHistory(entry: PreviewEntry): void {
    const item = document.createElement("li");
    const thumb = document.createElement("img");
    thumb.className = "thumb";
    thumb.src = pngDataUrl(entry.bytes);
    const caption = el("span", "caption");
    const active = entry.request.activations
      .map((a) => `${a.adapter_id}=${formatScale(a.scale)}`)
      .join(" ");
    caption.textContent = `seed ${entry.request.seed}${active ? " " + active : " base"}`;
    const index = this.session.history.indexOf(entry);
    const restore = this.button("restore", () => void this.guard(this.session.restore(index)));
    item.append(thumb, caption, restore);
    this.historyList.append(item);
  }

  private async openGrid(): Promise<void> {
    const first = this.session.sliders[0];
    if (!first) return;
    try {
      const bytes = await this.session.gridSheet(first.adapter_id, this.seeds, this.scaleSteps);
      const sheet = document.createElement("img");
      sheet.className = "grid-sheet";
      sheet.src = pngDataUrl(bytes);
      this.root.append(sheet);
    } catch (err) {
      this.showStatus("error", err instanceof Error ? err.message : String(err));
    }
  }

  private async guard(work: Promise<unknown>): Promise<void> {
    try {
      await work;
      this.syncControls();
    } catch (err) {
      this.showStatus("error", err instanceof Error ? err.message : String(err));
    }
  }

  private button(text: string, onClick: () => void): HTMLButtonElement {
    const btn = document.createElement("button");
    btn.type = "button";
    btn.textContent = text;
    btn.addEventListener("click", onClick);
    return btn;
  }
}

function el(tag: string, className?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  return node;
}

function formatScale(value: number): string {
  return value.toFixed(2).replace(/\.?0+$/, "") || "0";
}
