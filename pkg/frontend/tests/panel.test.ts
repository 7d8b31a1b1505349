// @vitest-environment happy-dom
import { describe, expect, it } from "vitest";

import { ServiceClient } from "../src/client.js";
import { ExplorerPanel, pngDataUrl, sliderTitle } from "../src/panel.js";
import { SessionController } from "../src/session.js";
import type { SliderInfo } from "../src/types.js";
import { FakeService, ManualTimers, flushMicrotasks, makeSliders } from "./fakes.js";

function domHarness(options: { maxShown?: number; sliders?: SliderInfo[] } = {}) {
  const svc = new FakeService(options.sliders ?? makeSliders());
  const timers = new ManualTimers();
  let panel: ExplorerPanel;
  const session = new SessionController(
    new ServiceClient("http://svc", svc.transport),
    {
      onPreview: (entry) => panel.showPreview(entry),
      onStatus: (status, message) => panel.showStatus(status, message),
      onManifestReload: (sliders) => panel.handlers().onManifestReload(sliders),
    },
    { debounceMs: 250, timers, randomSeed: 9 },
  );
  const root = document.createElement("div");
  document.body.append(root);
  panel = new ExplorerPanel(root, session, { maxShown: options.maxShown ?? 8 });
  panel.mount();
  return { svc, timers, session, panel, root };
}

async function start(h: ReturnType<typeof domHarness>) {
  const sliders = await h.session.init();
  h.panel.renderControls(sliders);
}

function ranges(root: HTMLElement): HTMLInputElement[] {
  return [...root.querySelectorAll<HTMLInputElement>("input[type=range]")];
}

function rowIds(root: HTMLElement): string[] {
  return [...root.querySelectorAll<HTMLElement>(".slider-row")].map(
    (row) => row.dataset.adapterId ?? "",
  );
}

async function waitFor(cond: () => boolean, tries = 500): Promise<void> {
  for (let i = 0; i < tries; i++) {
    if (cond()) return;
    await flushMicrotasks();
  }
  throw new Error("condition not met");
}

function fireInput(input: HTMLInputElement, value: string): void {
  input.value = value;
  input.dispatchEvent(new Event("input", { bubbles: true }));
}

describe("control rendering", () => {
  it("renders one range control per slider, ordered by principal component", async () => {
    const shuffled = [...makeSliders(4)].reverse();
    const h = domHarness({ sliders: shuffled });
    await start(h);
    const inputs = ranges(h.root);
    expect(inputs).toHaveLength(4);
    expect(rowIds(h.root)).toEqual(["slider-00", "slider-01", "slider-02", "slider-03"]);
    for (const input of inputs) {
      expect(input.min).toBe("-2");
      expect(input.max).toBe("2");
      expect(input.value).toBe("0");
    }
  });

  it("titles unlabeled sliders PC-k and labeled ones by their label", async () => {
    const sliders = makeSliders(3);
    sliders[1]!.label = "warm palette";
    sliders[1]!.label_source = "manual";
    const h = domHarness({ sliders });
    await start(h);
    const titles = [...h.root.querySelectorAll(".slider-title")].map((n) => n.textContent);
    expect(titles).toEqual(["PC-0", "warm palette", "PC-2"]);
    expect(sliderTitle(sliders[0]!)).toBe("PC-0");
    expect(sliderTitle(sliders[1]!)).toBe("warm palette");
  });

  it("shows the explained-variance share as a secondary cue", async () => {
    const h = domHarness();
    await start(h);
    const cues = [...h.root.querySelectorAll(".variance-share")].map((n) => n.textContent);
    expect(cues[0]).toBe("50.0% var");
    expect(cues[1]).toBe("25.0% var");
  });

  it("folds overflow controls behind a disclosure", async () => {
    const h = domHarness({ maxShown: 2 });
    await start(h);
    const details = h.root.querySelector("details");
    expect(details).not.toBeNull();
    expect(details?.querySelector("summary")?.textContent).toBe("2 more directions");
    expect(ranges(h.root)).toHaveLength(4);
    expect(details?.querySelectorAll("input[type=range]")).toHaveLength(2);
  });
});

describe("detent", () => {
  it("snaps near-zero values to exactly zero", async () => {
    const h = domHarness();
    await start(h);
    const input = ranges(h.root)[0]!;
    fireInput(input, "0.05");
    expect(h.session.scaleOf("slider-00")).toBe(0);
    expect(input.value).toBe("0");
    fireInput(input, "0.5");
    expect(h.session.scaleOf("slider-00")).toBe(0.5);
  });

  it("soft-warns beyond the calibrated range without blocking the value", async () => {
    const h = domHarness();
    await start(h);
    const input = ranges(h.root)[0]!;
    const row = h.root.querySelector<HTMLElement>(".slider-row")!;
    fireInput(input, "1.5");
    expect(h.session.scaleOf("slider-00")).toBe(1.5);
    expect(row.classList.contains("off-range")).toBe(true);
    expect(row.title).toMatch(/calibrated range/);
    fireInput(input, "0.5");
    expect(row.classList.contains("off-range")).toBe(false);
  });
});

describe("live preview", () => {
  it("drag events inside the window coalesce into one request via the panel", async () => {
    const h = domHarness();
    await start(h);
    const input = ranges(h.root)[0]!;
    fireInput(input, "0.4");
    fireInput(input, "0.8");
    fireInput(input, "1.2");
    expect(h.svc.callCount("/generate")).toBe(1);
    await h.timers.advance(250);
    expect(h.svc.callCount("/generate")).toBe(2);
    const preview = h.root.querySelector<HTMLImageElement>(".preview")!;
    expect(preview.src.startsWith("data:image/png;base64,")).toBe(true);
    expect(preview.dataset.requestId).toBe("2");
  });

  it("the preview data URL round-trips the exact request bytes", async () => {
    const h = domHarness();
    await start(h);
    const entry = h.session.history[0]!;
    const url = pngDataUrl(entry.bytes);
    const decoded = Buffer.from(url.split(",")[1]!, "base64");
    expect(JSON.parse(decoded.toString("utf8"))).toEqual(entry.request);
  });
});

describe("error surfaces", () => {
  it("shows a dismissable error card without disabling the controls", async () => {
    const h = domHarness();
    await start(h);
    h.svc.failNext.push("down");
    const input = ranges(h.root)[0]!;
    fireInput(input, "1");
    await h.timers.advance(250);

    const card = h.root.querySelector<HTMLElement>(".error-card")!;
    expect(card.hidden).toBe(false);
    expect(card.getAttribute("role")).toBe("alert");
    expect(card.textContent).toMatch(/unreachable/);
    for (const range of ranges(h.root)) expect(range.disabled).toBe(false);

    fireInput(input, "0.5");
    await h.timers.advance(250);
    expect(card.hidden).toBe(true);
    expect(h.session.status).toBe("idle");
  });

  it("shows the backoff message in the status chip", async () => {
    const h = domHarness();
    await start(h);
    h.svc.failNext.push({ status: 429, detail: { error: "generation queue full" } });
    fireInput(ranges(h.root)[0]!, "1");
    await h.timers.advance(250);
    const chip = h.root.querySelector<HTMLElement>(".status-chip")!;
    expect(chip.dataset.status).toBe("backoff");
    expect(chip.textContent).toMatch(/retrying in 500 ms/);
    await h.timers.advance(500);
    expect(chip.dataset.status).toBe("idle");
  });

  it("shows the reload banner after a manifest conflict", async () => {
    const h = domHarness();
    await start(h);
    h.svc.swapManifest("hash-bbbb", makeSliders(2));
    fireInput(ranges(h.root)[0]!, "1");
    await h.timers.advance(250);
    const banner = h.root.querySelector<HTMLElement>(".reload-banner")!;
    expect(banner.hidden).toBe(false);
    expect(ranges(h.root)).toHaveLength(2);
    expect(h.session.status).toBe("idle");
  });
});

describe("history and actions", () => {
  it("appends thumbnails and restore re-requests the stored entry", async () => {
    const h = domHarness();
    await start(h);
    fireInput(ranges(h.root)[0]!, "1");
    await h.timers.advance(250);
    expect(h.root.querySelectorAll(".history li")).toHaveLength(2);

    const firstRestore = h.root.querySelector<HTMLButtonElement>(".history li button")!;
    firstRestore.click();
    await waitFor(() => h.session.history.length === 3);
    expect(h.root.querySelectorAll(".history li")).toHaveLength(3);
    const restored = h.session.history[2]!;
    expect(JSON.stringify(restored.request)).toBe(JSON.stringify(h.session.history[0]!.request));
    expect(ranges(h.root)[0]!.value).toBe("0"); // controls follow the restored state
  });

  it("surprise me applies a draw from the service", async () => {
    const h = domHarness();
    await start(h);
    const buttons = [...h.root.querySelectorAll("button")];
    const surprise = buttons.find((b) => b.textContent === "surprise me")!;
    surprise.click();
    await waitFor(() => h.session.history.length === 2);
    expect(h.svc.callCount("/random")).toBe(1);
    expect(h.session.activations.length).toBe(3);
    const input = ranges(h.root)[0]!;
    expect(input.value).toBe(String(h.session.scaleOf("slider-00")));
  });
});
