import { ServiceClient } from "./client.js";
import { ExplorerPanel } from "./panel.js";
import { SessionController } from "./session.js";

/** Service base URL: ?service=... query param, else same origin. */
export function resolveBaseUrl(search: string, origin: string): string {
  const params = new URLSearchParams(search);
  return params.get("service") ?? origin;
}

export async function bootstrap(root: HTMLElement): Promise<SessionController> {
  const baseUrl = resolveBaseUrl(window.location.search, window.location.origin);
  const client = new ServiceClient(baseUrl);

  let panel: ExplorerPanel;
  const session = new SessionController(client, {
    onPreview: (entry) => panel.showPreview(entry),
    onStatus: (status, message) => panel.showStatus(status, message),
    onManifestReload: (sliders) => panel.handlers().onManifestReload(sliders),
  });
  panel = new ExplorerPanel(root, session);
  panel.mount();

  try {
    const sliders = await session.init();
    panel.renderControls(sliders);
  } catch (err) {
    panel.showStatus("error", err instanceof Error ? err.message : String(err));
  }
  return session;
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const root = document.getElementById("app");
  if (root) void bootstrap(root);
}
