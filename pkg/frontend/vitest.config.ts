import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // node by default; panel tests opt into happy-dom per file so the
    // integration suite keeps the real fetch implementation
    environment: "node",
    testTimeout: 120_000,
    hookTimeout: 240_000,
  },
});
